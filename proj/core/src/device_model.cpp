#include "faultfree/device_model.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "config_parse.hpp"
#include "faultfree/rng.hpp"
#include "json_util.hpp"

namespace faultfree {

using nlohmann::json;

void CrossbarSpec::validate() const {
  if (rows < 1 || cols < 1) throw ConfigError("crossbar: rows and cols must be >= 1");
  if (!(g_max > 0.0)) throw ConfigError("crossbar: g_max must be > 0");
  if (!(write_tolerance >= 0.0)) throw ConfigError("crossbar: write_tolerance must be >= 0");
  if (!(write_sigma >= 0.0)) throw ConfigError("crossbar: write_sigma must be >= 0");
}

CrossbarSpec CrossbarSpec::with_shape(std::size_t r, std::size_t c) const {
  CrossbarSpec s = *this;
  s.rows = r;
  s.cols = c;
  return s;
}

std::string CrossbarSpec::to_json() const {
  json j{{"rows", rows},
         {"cols", cols},
         {"g_max", g_max},
         {"write_tolerance", write_tolerance},
         {"write_sigma", write_sigma}};
  return j.dump(2);
}

CrossbarSpec CrossbarSpec::from_json(std::string_view text) {
  return detail::parse_crossbar(detail::parse_json(text, "crossbar"), "");
}

CrossbarSpec detail::parse_crossbar(const json& j, const std::string& path, CrossbarSpec s) {
  Fields f(j, path);
  f.read("rows", s.rows);
  f.read("cols", s.cols);
  f.read("g_max", s.g_max);
  f.read("write_tolerance", s.write_tolerance);
  f.read("write_sigma", s.write_sigma);
  f.finish();
  s.validate();
  return s;
}

const char* to_string(FaultKind kind) {
  switch (kind) {
    case FaultKind::kStuckOff: return "off";
    case FaultKind::kStuckOn: return "on";
    default: return "healthy";
  }
}

FaultMask::FaultMask(std::size_t rows, std::size_t cols)
    : rows_(rows), cols_(cols), cells_(rows * cols, FaultKind::kHealthy) {}

void FaultMask::set(std::size_t r, std::size_t c, FaultKind kind) {
  if (r >= rows_ || c >= cols_) throw ConfigError("fault mask: index out of range");
  cells_[r * cols_ + c] = kind;
}

std::size_t FaultMask::off_count() const {
  return static_cast<std::size_t>(std::count(cells_.begin(), cells_.end(), FaultKind::kStuckOff));
}

std::size_t FaultMask::on_count() const {
  return static_cast<std::size_t>(std::count(cells_.begin(), cells_.end(), FaultKind::kStuckOn));
}

Matrix FaultMask::healthy_matrix() const {
  Matrix m(rows_, cols_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) m(r, c) = healthy(r, c) ? 1.0 : 0.0;
  return m;
}

Matrix FaultMask::pinned_values(double on_value) const {
  Matrix m = Matrix::Zero(rows_, cols_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c)
      if (at(r, c) == FaultKind::kStuckOn) m(r, c) = on_value;
  return m;
}

void FaultMask::write_csv(std::ostream& out) const {
  out << "row,col,kind\n";
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c)
      if (!healthy(r, c)) out << r << ',' << c << ',' << to_string(at(r, c)) << '\n';
}

FaultMask FaultMask::read_csv(std::istream& in, std::size_t rows, std::size_t cols) {
  FaultMask mask(rows, cols);
  std::string line;
  if (!std::getline(in, line)) return mask;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string r, c, kind;
    if (!std::getline(ss, r, ',') || !std::getline(ss, c, ',') || !std::getline(ss, kind))
      throw ConfigError("fault mask csv: malformed line " + std::to_string(lineno));
    FaultKind k;
    if (kind == "off") k = FaultKind::kStuckOff;
    else if (kind == "on") k = FaultKind::kStuckOn;
    else throw ConfigError("fault mask csv: unknown kind '" + kind + "'");
    mask.set(std::stoul(r), std::stoul(c), k);
  }
  return mask;
}

std::size_t fault_cell_count(double rate, std::size_t cells) {
  // The small guard keeps decimal rates such as 0.29 * 100 from flooring to 28.
  return static_cast<std::size_t>(std::floor(rate * static_cast<double>(cells) + 1e-9));
}

FaultMask generate_fault_mask(const CrossbarSpec& spec, double r_off, double r_on,
                              std::uint64_t seed) {
  spec.validate();
  if (!(r_off >= 0.0) || !(r_on >= 0.0)) throw ConfigError("fault rates must be >= 0");
  const std::size_t cells = spec.rows * spec.cols;
  const std::size_t n_off = fault_cell_count(r_off, cells);
  const std::size_t n_on = fault_cell_count(r_on, cells);
  if (n_off + n_on > cells) throw ConfigError("fault rates exceed grid capacity");

  // Partial Fisher-Yates: the first n_off picks become OFF, the next n_on ON.
  std::vector<std::size_t> idx(cells);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed);
  FaultMask mask(spec.rows, spec.cols);
  for (std::size_t i = 0; i < n_off + n_on; ++i) {
    const std::size_t j = i + rng.below(cells - i);
    std::swap(idx[i], idx[j]);
    const auto kind = i < n_off ? FaultKind::kStuckOff : FaultKind::kStuckOn;
    mask.set(idx[i] / spec.cols, idx[i] % spec.cols, kind);
  }
  return mask;
}

ConductanceMatrix::ConductanceMatrix(Matrix values, double g_max)
    : values_(std::move(values)), g_max_(g_max) {
  if (!(g_max_ > 0.0)) throw ConfigError("conductance matrix: g_max must be > 0");
  if (values_.size() > 0 && (values_.minCoeff() < 0.0 || values_.maxCoeff() > g_max_))
    throw ConfigError("conductance matrix: values outside [0, g_max]");
}

ConductanceMatrix program(const Matrix& target, const FaultMask& mask, const CrossbarSpec& spec,
                          std::uint64_t seed) {
  spec.validate();
  if (static_cast<std::size_t>(target.rows()) != mask.rows() ||
      static_cast<std::size_t>(target.cols()) != mask.cols())
    throw ConfigError("program: target and mask shapes differ");
  const double slack = 1e-9 * spec.g_max;
  if (target.size() > 0 && (target.minCoeff() < -slack || target.maxCoeff() > spec.g_max + slack))
    throw ConfigError("program: target outside [0, g_max]");

  Rng rng(seed);
  const double sigma = spec.write_sigma;
  const double tol = spec.write_tolerance;
  Matrix out(target.rows(), target.cols());
  for (Eigen::Index r = 0; r < target.rows(); ++r) {
    for (Eigen::Index c = 0; c < target.cols(); ++c) {
      const auto kind = mask.at(static_cast<std::size_t>(r), static_cast<std::size_t>(c));
      if (kind == FaultKind::kStuckOff) {
        out(r, c) = 0.0;
        continue;
      }
      if (kind == FaultKind::kStuckOn) {
        out(r, c) = spec.g_max;
        continue;
      }
      double eps = 0.0;
      if (sigma > 0.0 && tol > 0.0) {
        do {
          eps = sigma * rng.normal();
        } while (std::abs(eps) > tol);
      }
      out(r, c) = std::clamp(target(r, c) + eps, 0.0, spec.g_max);
    }
  }
  return ConductanceMatrix(std::move(out), spec.g_max);
}

Matrix read(const ConductanceMatrix& matrix, const ReadOptions& options) {
  Matrix v = matrix.values();
  if (options.noise_sigma > 0.0) {
    Rng rng(options.seed);
    for (Eigen::Index i = 0; i < v.size(); ++i)
      v.data()[i] = std::clamp(v.data()[i] + options.noise_sigma * rng.normal(), 0.0,
                               matrix.g_max());
  }
  return options.scale * v;
}

}  // namespace faultfree

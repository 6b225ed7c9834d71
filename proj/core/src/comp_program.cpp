#include "faultfree/comp_program.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

#include <json.hpp>

#include "faultfree/rng.hpp"
#include "config_parse.hpp"
#include "json_util.hpp"

namespace faultfree {

using nlohmann::json;

namespace {

double entry_std(const Matrix& e) {
  const double mean = e.mean();
  return std::sqrt((e.array() - mean).square().mean());
}

// Stuck-ON cells become healthy; used to size the ON pin before pinning.
bool box_active(const Matrix& x, const FaultMask& mask, double bound) {
  for (Eigen::Index r = 0; r < x.rows(); ++r)
    for (Eigen::Index c = 0; c < x.cols(); ++c)
      if (mask.healthy(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) &&
          std::abs(x(r, c)) >= bound * (1.0 - 1e-12))
        return true;
  return false;
}

}  // namespace

void ProgramPlan::validate() const {
  if (!(delta_g >= 0.0)) throw ConfigError("plan: delta_g must be >= 0");
  if (!(threshold_ratio > 0.0)) throw ConfigError("plan: threshold_ratio must be > 0");
  if (n_layers < 1) throw ConfigError("plan: n_layers must be >= 1");
  if (!(residual_learning_rate > 0.0)) throw ConfigError("plan: residual_learning_rate must be > 0");
  if (!(residual_tolerance > 0.0)) throw ConfigError("plan: residual_tolerance must be > 0");
}

ProgramPlan ProgramPlan::for_device(const CrossbarSpec& spec, std::size_t n_layers) {
  ProgramPlan p;
  p.delta_g = 3.0 * spec.write_sigma;
  p.n_layers = n_layers;
  return p;
}

std::string ProgramPlan::to_json() const {
  json j{{"delta_g", delta_g},
         {"threshold_ratio", threshold_ratio},
         {"n_layers", n_layers},
         {"residual_learning_rate", residual_learning_rate},
         {"residual_tolerance", residual_tolerance}};
  return j.dump(2);
}

ProgramPlan ProgramPlan::from_json(std::string_view text) {
  return detail::parse_plan(detail::parse_json(text, "plan"), "");
}

ProgramPlan detail::parse_plan(const json& j, const std::string& path, ProgramPlan p) {
  Fields f(j, path);
  f.read("delta_g", p.delta_g);
  f.read("threshold_ratio", p.threshold_ratio);
  f.read("n_layers", p.n_layers);
  f.read("residual_learning_rate", p.residual_learning_rate);
  f.read("residual_tolerance", p.residual_tolerance);
  f.finish();
  p.validate();
  return p;
}

QuantizedLayer quantize_to_conductance(const Matrix& m, double delta_g, double g_max,
                                       std::optional<double> scale) {
  if (!(g_max > 0.0)) throw ConfigError("quantize: g_max must be > 0");
  if (!(delta_g >= 0.0)) throw ConfigError("quantize: delta_g must be >= 0");
  QuantizedLayer q;
  if (scale) {
    if (!(*scale > 0.0)) throw ConfigError("quantize: scale must be > 0");
    q.scale = *scale;
  } else {
    const double peak = m.size() ? m.cwiseAbs().maxCoeff() : 0.0;
    if (peak == 0.0) throw NumericalError("quantize: matrix is all zero");
    q.scale = peak / g_max;
  }
  q.conductance = ((m.cwiseAbs() / q.scale).array() - delta_g).cwiseMax(0.0).cwiseMin(g_max).matrix();
  return q;
}

std::size_t CompensationStack::rows() const { return layers.empty() ? signs.size() : layers[0].rows(); }
std::size_t CompensationStack::cols() const { return layers.empty() ? 0 : layers[0].cols(); }

Matrix CompensationStack::layer_weights(std::size_t i) const {
  Matrix w = scale_ratios.at(i) * layers.at(i).values();
  for (Eigen::Index r = 0; r < w.rows(); ++r) w.row(r) *= signs[static_cast<std::size_t>(r)];
  return w;
}

Matrix CompensationStack::magnitude() const {
  validate();
  Matrix sum = Matrix::Zero(static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(cols()));
  for (std::size_t i = 0; i < layers.size(); ++i) sum += scale_ratios[i] * layers[i].values();
  return sum;
}

Matrix CompensationStack::effective() const {
  Matrix sum = magnitude();
  for (Eigen::Index r = 0; r < sum.rows(); ++r) sum.row(r) *= signs[static_cast<std::size_t>(r)];
  return sum;
}

void CompensationStack::validate() const {
  if (layers.empty()) throw ConfigError("compensation stack: no layers");
  if (layers.size() != scale_ratios.size())
    throw ConfigError("compensation stack: layers and scale_ratios differ in length");
  for (const auto& l : layers)
    if (l.rows() != layers[0].rows() || l.cols() != layers[0].cols())
      throw ConfigError("compensation stack: layer dimensions differ");
  if (signs.size() != layers[0].rows())
    throw ConfigError("compensation stack: sign pattern length differs from rows");
}

std::string CompensationStack::to_json() const {
  json j;
  j["side"] = side == Side::kA ? "A" : "B";
  j["signs"] = signs.values();
  j["scale_ratios"] = scale_ratios;
  j["g_max"] = layers.empty() ? 0.0 : layers[0].g_max();
  json ls = json::array();
  for (const auto& l : layers) ls.push_back(detail::matrix_to_json(l.values()));
  j["layers"] = std::move(ls);
  return j.dump();
}

CompensationStack CompensationStack::from_json(std::string_view text) {
  CompensationStack s;
  try {
    const json j = json::parse(text);
    const auto side = j.at("side").get<std::string>();
    if (side != "A" && side != "B") throw ConfigError("compensation stack: side must be A or B");
    s.side = side == "A" ? Side::kA : Side::kB;
    s.signs = SignPattern(j.at("signs").get<std::vector<int>>());
    s.scale_ratios = j.at("scale_ratios").get<std::vector<double>>();
    const double g_max = j.at("g_max").get<double>();
    for (const auto& l : j.at("layers"))
      s.layers.emplace_back(detail::matrix_from_json(l), g_max);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("compensation stack json: ") + e.what());
  }
  s.validate();
  return s;
}

Matrix reconstruct(const CompensationStack& a, const CompensationStack& b) {
  if (a.cols() != b.rows()) throw ConfigError("reconstruct: stacks do not conform");
  return a.effective() * b.effective();
}

ChipLayout ChipLayout::fault_free(const CrossbarSpec& device, std::size_t m, std::size_t k,
                                  std::size_t n, std::size_t n_layers) {
  ChipLayout chip{device, {}};
  for (std::size_t i = 0; i < n_layers; ++i)
    chip.layers.push_back({FaultMask::none(m, k), FaultMask::none(k, n)});
  return chip;
}

ChipLayout ChipLayout::simulate(const CrossbarSpec& device, std::size_t m, std::size_t k,
                                std::size_t n, std::size_t n_layers, double r_off, double r_on,
                                std::uint64_t seed) {
  ChipLayout chip{device, {}};
  const Rng root(seed);
  for (std::size_t i = 0; i < n_layers; ++i) {
    chip.layers.push_back(
        {generate_fault_mask(device.with_shape(m, k), r_off, r_on, root.split(2 * i).seed()),
         generate_fault_mask(device.with_shape(k, n), r_off, r_on, root.split(2 * i + 1).seed())});
  }
  return chip;
}

ResidualProblem::ResidualProblem(Matrix target, Matrix base_a, Matrix base_b, SignPatterns signs,
                                 LayerFaults faults, double bound_a, double bound_b)
    : target_(std::move(target)),
      base_a_(std::move(base_a)),
      base_b_(std::move(base_b)),
      signs_(std::move(signs)),
      faults_(std::move(faults)),
      bound_a_(bound_a),
      bound_b_(bound_b) {
  if (base_a_.cols() != base_b_.rows() || base_a_.rows() != target_.rows() ||
      base_b_.cols() != target_.cols())
    throw ConfigError("residual: shapes do not conform");
  if (faults_.a.rows() != static_cast<std::size_t>(base_a_.rows()) ||
      faults_.a.cols() != static_cast<std::size_t>(base_a_.cols()) ||
      faults_.b.rows() != static_cast<std::size_t>(base_b_.rows()) ||
      faults_.b.cols() != static_cast<std::size_t>(base_b_.cols()))
    throw ConfigError("residual: fault masks do not match the factor shapes");
  if (!(bound_a_ > 0.0) || !(bound_b_ > 0.0)) throw ConfigError("residual: bounds must be > 0");
  target_sq_ = target_.squaredNorm();
  if (target_sq_ == 0.0) throw NumericalError("residual: target is the zero matrix");
  pin_a_ = signed_pins(faults_.a, signs_.a, bound_a_);
  pin_b_ = signed_pins(faults_.b, signs_.b, bound_b_);
}

double ResidualProblem::loss(const Matrix& x, const Matrix& y) const {
  return ((base_a_ + x) * (base_b_ + y) - target_).squaredNorm() / target_sq_;
}

LossAndGrad ResidualProblem::loss_and_grad(const Matrix& x, const Matrix& y) const {
  const Matrix a = base_a_ + x;
  const Matrix b = base_b_ + y;
  const Matrix e = a * b - target_;
  const double f = 2.0 / target_sq_;
  return {e.squaredNorm() / target_sq_, f * e * b.transpose(), f * a.transpose() * e};
}

void ResidualProblem::project(Matrix& x, Matrix& y) const {
  project_signs_inplace(x, signs_.a);
  project_signs_inplace(y, signs_.b);
  x = x.cwiseMax(-bound_a_).cwiseMin(bound_a_);
  y = y.cwiseMax(-bound_b_).cwiseMin(bound_b_);
  apply_fault_mask_inplace(x, faults_.a, pin_a_);
  apply_fault_mask_inplace(y, faults_.b, pin_b_);
}

ResidualProblem::Solution ResidualProblem::solve(const OptimizerConfig& config,
                                                 double relative_rate) const {
  config.validate();
  Matrix x = Matrix::Zero(base_a_.rows(), base_a_.cols());
  Matrix y = Matrix::Zero(base_b_.rows(), base_b_.cols());
  project(x, y);
  const std::size_t epochs = std::max<std::size_t>(1, config.epochs / 2);
  PairAdam adam(config, x, y);
  Solution best{x, y, loss(x, y)};
  for (std::size_t t = 1; t <= epochs; ++t) {
    const LossAndGrad lg = loss_and_grad(x, y);
    if (lg.loss < best.loss) best = {x, y, lg.loss};
    adam.step(x, y, lg.grad_a, lg.grad_b, relative_rate * bound_a_, relative_rate * bound_b_);
    project(x, y);
  }
  const double last = loss(x, y);
  if (last < best.loss) best = {x, y, last};
  best.clamped_a = box_active(best.x, faults_.a, bound_a_);
  best.clamped_b = box_active(best.y, faults_.b, bound_b_);
  return best;
}

ResidualProblem residual_target(const Matrix& target, const CompensationStack& a,
                                const CompensationStack& b, const LayerFaults& faults,
                                double bound_a, double bound_b) {
  if (a.layers.empty() || b.layers.empty())
    throw ConfigError("residual_target: needs at least one programmed layer");
  return ResidualProblem(target, a.effective(), b.effective(), {a.signs, b.signs}, faults, bound_a,
                         bound_b);
}

void ProgramReport::write_csv(std::ostream& out) const {
  out << "layer,similarity,error_std,relative_error,scale_a,scale_b,ladder_a,ladder_b,fit_loss,"
         "clamped,faults_a,faults_b\n";
  const auto old = out.precision(12);
  for (const auto& l : layers)
    out << l.layer << ',' << l.similarity << ',' << l.error_std << ',' << l.relative_error << ','
        << l.scale_a << ',' << l.scale_b << ',' << l.ladder_a << ',' << l.ladder_b << ','
        << l.fit_loss << ',' << (l.clamped ? 1 : 0) << ',' << l.faults_a << ',' << l.faults_b
        << '\n';
  out.precision(old);
}

ProgrammedPair program_stack(const Matrix& target, std::size_t k, const ProgramPlan& plan,
                             const ChipLayout& chip, const OptimizerConfig& config,
                             std::uint64_t seed, const DecomposeOptions& options) {
  plan.validate();
  chip.device.validate();
  if (chip.layers.size() < plan.n_layers)
    throw ConfigError("program_stack: chip has fewer fault layers than the plan");
  const double g_max = chip.device.g_max;
  const Rng noise(seed);
  auto program_side = [&](const Matrix& g, const FaultMask& mask, std::size_t layer, int side) {
    const CrossbarSpec spec = chip.device.with_shape(static_cast<std::size_t>(g.rows()),
                                                     static_cast<std::size_t>(g.cols()));
    return program(g, mask, spec, noise.split(2 * layer + static_cast<std::size_t>(side)).seed());
  };

  ProgrammedPair out;
  out.a.side = Side::kA;
  out.b.side = Side::kB;

  // Layer 1.
  const LayerFaults& f1 = chip.layers[0];
  const bool last1 = plan.n_layers == 1;
  const double dg1 = last1 ? 0.0 : plan.delta_g;
  DecomposeOptions opts = options;
  // quant_x maps factor entries to µS; gain_root rescales the programmed
  // product onto the target through the amplifier gains.
  double quant_a, quant_b, gain_root = 1.0;
  if (f1.a.on_count() + f1.b.on_count() == 0) {
    out.initial = decompose(target, k, f1.a, f1.b, config, opts);
    quant_a = out.initial.m_a.cwiseAbs().maxCoeff() / g_max;
    quant_b = out.initial.m_b.cwiseAbs().maxCoeff() / g_max;
  } else {
    const StuckOnDecomposition pinned = decompose_stuck_on(target, k, f1.a, f1.b, config, opts);
    out.initial = pinned.result;
    gain_root = std::sqrt(out.initial.product_gain);
    const double w = pinned.on_weight;
    quant_a = quant_b = w / g_max;
  }
  out.a.signs = out.initial.signs_a;
  out.b.signs = out.initial.signs_b;
  {
    const QuantizedLayer qa = quantize_to_conductance(out.initial.m_a, dg1, g_max, quant_a);
    const QuantizedLayer qb = quantize_to_conductance(out.initial.m_b, dg1, g_max, quant_b);
    out.a.layers.push_back(program_side(qa.conductance, f1.a, 0, 0));
    out.b.layers.push_back(program_side(qb.conductance, f1.b, 0, 1));
    out.a.scale_ratios.push_back(gain_root * quant_a);
    out.b.scale_ratios.push_back(gain_root * quant_b);
  }

  auto add_report = [&](std::size_t layer, double fit_loss, bool clamped, const LayerFaults& f) {
    const Matrix r = reconstruct(out.a, out.b);
    LayerReport lr;
    lr.layer = layer;
    const double rn = r.norm();
    lr.similarity = rn > 0.0 ? cosine_similarity(r, target) : 0.0;
    lr.error_std = entry_std(r - target);
    lr.relative_error = (r - target).norm() / target.norm();
    lr.scale_a = out.a.scale_ratios.back();
    lr.scale_b = out.b.scale_ratios.back();
    if (layer > 1) {
      lr.ladder_a = lr.scale_a / out.a.scale_ratios[layer - 2];
      lr.ladder_b = lr.scale_b / out.b.scale_ratios[layer - 2];
    }
    lr.fit_loss = fit_loss;
    lr.clamped = clamped;
    lr.faults_a = f.a.off_count() + f.a.on_count();
    lr.faults_b = f.b.off_count() + f.b.on_count();
    out.report.layers.push_back(lr);
  };
  add_report(1, 1.0 - out.initial.final_similarity, false, f1);

  for (std::size_t i = 1; i < plan.n_layers; ++i) {
    const LayerFaults& fi = chip.layers[i];
    const bool last = i + 1 == plan.n_layers;
    // Largest weight of the previous layer is its scale times g_max.
    const double bound_a = out.a.scale_ratios.back() * g_max / plan.threshold_ratio;
    const double bound_b = out.b.scale_ratios.back() * g_max / plan.threshold_ratio;
    const ResidualProblem problem = residual_target(target, out.a, out.b, fi, bound_a, bound_b);
    const ResidualProblem::Solution sol = problem.solve(config, plan.residual_learning_rate);
    if (sol.loss > plan.residual_tolerance) out.report.residual_infeasible = true;

    auto layer_scale = [&](const Matrix& x, const FaultMask& mask, double bound) {
      if (mask.on_count() > 0) return bound / g_max;
      const double peak = x.cwiseAbs().maxCoeff();
      return (peak > 0.0 ? peak : bound) / g_max;
    };
    const double ka = layer_scale(sol.x, fi.a, bound_a);
    const double kb = layer_scale(sol.y, fi.b, bound_b);
    const double dg = last ? 0.0 : plan.delta_g;
    const QuantizedLayer qa = quantize_to_conductance(sol.x, dg, g_max, ka);
    const QuantizedLayer qb = quantize_to_conductance(sol.y, dg, g_max, kb);
    out.a.layers.push_back(program_side(qa.conductance, fi.a, i, 0));
    out.b.layers.push_back(program_side(qb.conductance, fi.b, i, 1));
    out.a.scale_ratios.push_back(ka);
    out.b.scale_ratios.push_back(kb);
    add_report(i + 1, sol.loss, sol.clamped_a || sol.clamped_b, fi);
  }
  return out;
}

}  // namespace faultfree

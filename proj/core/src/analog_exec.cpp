#include "faultfree/analog_exec.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <mutex>
#include <sstream>

#include "faultfree/rng.hpp"

namespace faultfree {

namespace {

std::mutex g_diag_mutex;
DiagnosticsSink g_diag;

void report(std::string_view label, double residual) {
  std::lock_guard<std::mutex> lock(g_diag_mutex);
  if (g_diag) g_diag(label, residual);
}

bool diagnostics_on() {
  std::lock_guard<std::mutex> lock(g_diag_mutex);
  return static_cast<bool>(g_diag);
}

}  // namespace

void set_exec_diagnostics(DiagnosticsSink sink) {
  std::lock_guard<std::mutex> lock(g_diag_mutex);
  g_diag = std::move(sink);
}

RowVector vmm_differential(const RowVector& x, const DifferentialPairArray& array, double scale) {
  if (static_cast<std::size_t>(x.size()) != array.g_plus.rows())
    throw ConfigError("vmm_differential: input length differs from rows");
  return scale * (x * array.g_plus.values() - x * array.g_minus.values());
}

DifferentialPairArray map_differential(const Matrix& m, const CrossbarSpec& device,
                                       const FaultMask& mask_plus, const FaultMask& mask_minus,
                                       std::uint64_t seed, std::optional<double> scale) {
  const auto rows = static_cast<std::size_t>(m.rows());
  const auto cols = static_cast<std::size_t>(m.cols());
  double s;
  if (scale) {
    if (!(*scale > 0.0)) throw ConfigError("map_differential: scale must be > 0");
    s = *scale;
  } else {
    const double peak = m.size() ? m.cwiseAbs().maxCoeff() : 0.0;
    s = peak > 0.0 ? peak / device.g_max : 1.0;
  }
  const Matrix gp = (m.cwiseMax(0.0) / s).cwiseMin(device.g_max);
  const Matrix gm = ((-m).cwiseMax(0.0) / s).cwiseMin(device.g_max);
  const CrossbarSpec spec = device.with_shape(rows, cols);
  const Rng rng(seed);
  return {program(gp, mask_plus, spec, rng.split(0).seed()),
          program(gm, mask_minus, spec, rng.split(1).seed()), s};
}

std::vector<DifferentialFaults> DifferentialFaults::simulate(const CrossbarSpec& device,
                                                             std::size_t m, std::size_t n,
                                                             std::size_t n_layers, double r_off,
                                                             double r_on, std::uint64_t seed) {
  std::vector<DifferentialFaults> out;
  const Rng root(seed);
  const CrossbarSpec spec = device.with_shape(m, n);
  for (std::size_t i = 0; i < n_layers; ++i)
    out.push_back({generate_fault_mask(spec, r_off, r_on, root.split(2 * i).seed()),
                   generate_fault_mask(spec, r_off, r_on, root.split(2 * i + 1).seed())});
  return out;
}

Matrix DifferentialStack::effective() const {
  if (layers.empty()) throw ConfigError("differential stack: no layers");
  Matrix sum = layers[0].effective();
  for (std::size_t i = 1; i < layers.size(); ++i) sum += layers[i].effective();
  return sum;
}

std::size_t DifferentialStack::device_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.device_count();
  return n;
}

DifferentialStack program_differential_stack(const Matrix& target, const CrossbarSpec& device,
                                             const ProgramPlan& plan,
                                             const std::vector<DifferentialFaults>& faults,
                                             std::uint64_t seed) {
  plan.validate();
  if (faults.size() < plan.n_layers)
    throw ConfigError("differential stack: fewer fault layers than the plan");
  const double peak = target.cwiseAbs().maxCoeff();
  if (peak == 0.0) throw NumericalError("differential stack: target is the zero matrix");
  const Rng rng(seed);
  DifferentialStack stack;
  Matrix sum = Matrix::Zero(target.rows(), target.cols());
  double bound = peak;
  for (std::size_t i = 0; i < plan.n_layers; ++i) {
    if (i > 0) bound /= plan.threshold_ratio;
    const Matrix residual = (target - sum).cwiseMax(-bound).cwiseMin(bound);
    stack.layers.push_back(map_differential(residual, device, faults[i].plus, faults[i].minus,
                                            rng.split(i).seed(), bound / device.g_max));
    sum += stack.layers.back().effective();
  }
  return stack;
}

RowVector vmm_decomposed(const RowVector& x, const CompensationStack& a, const CompensationStack& b,
                         const BridgeConfig& bridge, double scale, const ExecOptions& options) {
  a.validate();
  b.validate();
  if (static_cast<std::size_t>(x.size()) != a.rows())
    throw ConfigError("vmm_decomposed: input length differs from rows");
  if (a.cols() != b.rows()) throw ConfigError("vmm_decomposed: stacks do not conform");
  if (bridge.sign_registers.size() != b.rows())
    throw ConfigError("vmm_decomposed: bridge length differs from the intermediate width");
  if (!(bridge.sign_registers == b.signs))
    throw ConfigError("vmm_decomposed: bridge registers differ from the second stack's signs");

  // First crossbar: input polarity carries the row signs of M_A.
  RowVector u = RowVector::Zero(static_cast<Eigen::Index>(a.cols()));
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    RowVector xs = x;
    for (Eigen::Index r = 0; r < xs.size(); ++r) xs(r) *= a.signs[static_cast<std::size_t>(r)];
    u += a.scale_ratios[i] * (xs * a.layers[i].values());
  }
  for (Eigen::Index j = 0; j < u.size(); ++j)
    u(j) *= bridge.sign_registers[static_cast<std::size_t>(j)];
  RowVector y = RowVector::Zero(static_cast<Eigen::Index>(b.cols()));
  for (std::size_t i = 0; i < b.layers.size(); ++i) y += b.scale_ratios[i] * (u * b.layers[i].values());
  y *= scale;
  if (options.output_noise_sigma > 0.0) {
    Rng rng(options.seed);
    for (Eigen::Index j = 0; j < y.size(); ++j) y(j) += options.output_noise_sigma * rng.normal();
  }
  if (diagnostics_on()) report("vmm_decomposed", (y - scale * x * reconstruct(a, b)).norm());
  return y;
}

RealEngine RealEngine::ideal(Matrix m) {
  RealEngine e;
  e.kind_ = Kind::kIdeal;
  e.effective_ = std::move(m);
  return e;
}

RealEngine RealEngine::differential(DifferentialStack stack) {
  RealEngine e;
  e.kind_ = Kind::kDifferential;
  e.effective_ = stack.effective();
  e.devices_ = stack.device_count();
  return e;
}

RealEngine RealEngine::decomposed(CompensationStack a, CompensationStack b) {
  if (a.cols() != b.rows()) throw ConfigError("decomposed engine: stacks do not conform");
  RealEngine e;
  e.kind_ = Kind::kDecomposed;
  e.stage_a_ = a.effective();
  e.bridge_ = b.signs.as_vector();
  e.stage_b_ = b.magnitude();
  e.effective_ = reconstruct(a, b);
  e.devices_ = a.layers.size() * a.rows() * a.cols() + b.layers.size() * b.rows() * b.cols();
  return e;
}

RowVector RealEngine::apply(const RowVector& x) const {
  if (static_cast<std::size_t>(x.size()) != rows())
    throw ConfigError("engine: input length differs from rows");
  if (kind_ != Kind::kDecomposed) return x * effective_;
  RowVector u = x * stage_a_;
  u.array() *= bridge_.transpose().array();
  return u * stage_b_;
}

Matrix RealEngine::apply_rows(const Matrix& x) const {
  if (static_cast<std::size_t>(x.cols()) != rows())
    throw ConfigError("engine: input width differs from rows");
  if (kind_ != Kind::kDecomposed) return x * effective_;
  Matrix u = x * stage_a_;
  u = u * bridge_.asDiagonal();
  return u * stage_b_;
}

void FeedbackCircuitSpec::validate() const {
  if (!(g1 > 0.0) || !(g2 > 0.0)) throw ConfigError("feedback circuit: g1 and g2 must be > 0");
  if (!(alpha > 0.0)) throw ConfigError("feedback circuit: alpha must be > 0");
  if (!(tolerance > 0.0)) throw ConfigError("feedback circuit: tolerance must be > 0");
  if (max_iterations < 1) throw ConfigError("feedback circuit: max_iterations must be >= 1");
}

FeedbackSolver::FeedbackSolver(Matrix g_eff, const FeedbackCircuitSpec& spec)
    : g_(std::move(g_eff)), spec_(spec) {
  spec_.validate();
  const double gg = spec_.g1 * spec_.g2;
  system_ = g_ * g_.transpose() / gg;
  system_.diagonal().array() += 1.0;
  // Damping from the extreme eigenvalues of the SPD loop matrix: the optimal
  // heavy-ball pair, i.e. a critically tuned second-order loop.
  Eigen::SelfAdjointEigenSolver<Matrix> eig(system_, Eigen::EigenvaluesOnly);
  const double lo = eig.eigenvalues().minCoeff();
  const double hi = eig.eigenvalues().maxCoeff();
  const double sl = std::sqrt(lo), sh = std::sqrt(hi);
  mu_ = 4.0 / ((sl + sh) * (sl + sh));
  beta_ = std::pow((sh - sl) / (sh + sl), 2);
  // The residual cannot be resolved below the rounding floor of the system.
  tolerance_ = std::max(spec_.tolerance,
                        64.0 * std::numeric_limits<double>::epsilon() * (hi / lo));
  llt_.compute(system_);
}

FeedbackSolution FeedbackSolver::solve(const RowVector& i_in) const {
  if (i_in.size() != g_.cols()) throw ConfigError("feedback solve: current length differs from G");
  FeedbackSolution s;
  const RowVector rhs = i_in * g_.transpose() / (spec_.g1 * spec_.g2);
  s.v_direct = llt_.solve(rhs.transpose()).transpose();
  s.v = settle(rhs, &s.iterations, &s.residual);
  return s;
}

Matrix FeedbackSolver::solve_rows(const Matrix& currents, std::size_t* iterations) const {
  if (currents.cols() != g_.cols()) throw ConfigError("feedback solve: current width differs from G");
  return settle(currents * g_.transpose() / (spec_.g1 * spec_.g2), iterations, nullptr);
}

Matrix FeedbackSolver::settle(const Matrix& rhs, std::size_t* iterations, double* residual) const {
  // v <- v + mu [(i - vG)G^T/(g1 g2) - v] + beta (v - v_prev), every row at once.
  Matrix v = Matrix::Zero(rhs.rows(), rhs.cols());
  Matrix prev = v;
  Matrix r = rhs;
  const Vector norms = rhs.rowwise().norm();
  auto worst_residual = [&] {
    double worst = 0.0;
    for (Eigen::Index i = 0; i < r.rows(); ++i)
      if (norms(i) > 0.0) worst = std::max(worst, r.row(i).norm() / norms(i));
    return worst;
  };
  std::size_t it = 0;
  double worst = worst_residual();
  for (; it < spec_.max_iterations && worst > tolerance_; ++it) {
    Matrix next = v + mu_ * r + beta_ * (v - prev);
    prev = std::move(v);
    v = std::move(next);
    r.noalias() = rhs - v * system_;
    worst = worst_residual();
    if (!std::isfinite(worst) || worst > 1e12) break;
  }
  if (!(worst <= tolerance_)) {
    std::ostringstream msg;
    msg << "feedback loop did not settle: relative residual " << worst << " after " << it
        << " iterations";
    throw NumericalError(msg.str());
  }
  if (iterations) *iterations = it;
  if (residual) *residual = worst;
  if (diagnostics_on()) report("mmse_feedback_solve", worst);
  return v;
}

FeedbackSolution mmse_feedback_solve(const RowVector& i_in, const Matrix& g_eff,
                                     const FeedbackCircuitSpec& spec) {
  return FeedbackSolver(g_eff, spec).solve(i_in);
}

Matrix complex_to_real_map(const CMatrix& h) {
  const Eigen::Index r = h.rows(), c = h.cols();
  Matrix m(2 * r, 2 * c);
  m.topLeftCorner(r, c) = h.real();
  m.topRightCorner(r, c) = -h.imag();
  m.bottomLeftCorner(r, c) = h.imag();
  m.bottomRightCorner(r, c) = h.real();
  return m;
}

Matrix feedback_conductance(const CMatrix& h, double alpha) {
  return alpha * complex_to_real_map(h).transpose();
}

RowVector stack_complex(const CVector& z) {
  RowVector v(2 * z.size());
  v.head(z.size()) = z.real().transpose();
  v.tail(z.size()) = z.imag().transpose();
  return v;
}

CVector unstack_complex(const RowVector& v) {
  if (v.size() % 2 != 0) throw ConfigError("unstack_complex: odd length");
  const Eigen::Index n = v.size() / 2;
  CVector z(n);
  for (Eigen::Index i = 0; i < n; ++i) z(i) = Complex(v(i), v(n + i));
  return z;
}

}  // namespace faultfree

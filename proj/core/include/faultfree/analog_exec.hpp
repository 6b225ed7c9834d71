#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string_view>
#include <vector>

#include "faultfree/comp_program.hpp"
#include "faultfree/device_model.hpp"
#include "faultfree/types.hpp"

namespace faultfree {

// Signed weights as scale * (G+ - G-).
struct DifferentialPairArray {
  ConductanceMatrix g_plus;
  ConductanceMatrix g_minus;
  double scale = 1.0;

  Matrix effective() const { return scale * (g_plus.values() - g_minus.values()); }
  std::size_t device_count() const { return 2 * g_plus.rows() * g_plus.cols(); }
};

RowVector vmm_differential(const RowVector& x, const DifferentialPairArray& array, double scale);

// Positive entries go to G+, negative magnitudes to G-. The scale maps
// max|m| to g_max unless given.
DifferentialPairArray map_differential(const Matrix& m, const CrossbarSpec& device,
                                       const FaultMask& mask_plus, const FaultMask& mask_minus,
                                       std::uint64_t seed,
                                       std::optional<double> scale = std::nullopt);

struct DifferentialFaults {
  FaultMask plus;
  FaultMask minus;

  static std::vector<DifferentialFaults> simulate(const CrossbarSpec& device, std::size_t m,
                                                  std::size_t n, std::size_t n_layers,
                                                  double r_off, double r_on, std::uint64_t seed);
};

// Differential mapping with compensation: layer i programs the residual of
// layers < i, clipped to the ladder bound max|M| / threshold_ratio^(i-1).
struct DifferentialStack {
  std::vector<DifferentialPairArray> layers;

  Matrix effective() const;
  std::size_t device_count() const;
};

DifferentialStack program_differential_stack(const Matrix& target, const CrossbarSpec& device,
                                             const ProgramPlan& plan,
                                             const std::vector<DifferentialFaults>& faults,
                                             std::uint64_t seed);

struct BridgeConfig {
  SignPattern sign_registers;

  static BridgeConfig for_stack(const CompensationStack& b) { return {b.signs}; }
};

struct ExecOptions {
  double output_noise_sigma = 0.0;  // additive Gaussian, output units
  std::uint64_t seed = 0;
};

// u = x * sum_i k_Ai signed(C_Ai); u_j flipped by register j;
// y = u * sum_i k_Bi |C_Bi|.
RowVector vmm_decomposed(const RowVector& x, const CompensationStack& a, const CompensationStack& b,
                         const BridgeConfig& bridge, double scale = 1.0,
                         const ExecOptions& options = {});

// Receives (label, residual norm) for every executor call while set.
using DiagnosticsSink = std::function<void(std::string_view, double)>;
void set_exec_diagnostics(DiagnosticsSink sink);

// A programmed real matrix seen as y = x * M, whichever mapping realizes it.
class RealEngine {
 public:
  enum class Kind { kIdeal, kDifferential, kDecomposed };

  static RealEngine ideal(Matrix m);
  static RealEngine differential(DifferentialStack stack);
  static RealEngine decomposed(CompensationStack a, CompensationStack b);

  Kind kind() const { return kind_; }
  std::size_t rows() const { return static_cast<std::size_t>(effective_.rows()); }
  std::size_t cols() const { return static_cast<std::size_t>(effective_.cols()); }
  const Matrix& effective() const { return effective_; }
  std::size_t device_count() const { return devices_; }

  RowVector apply(const RowVector& x) const;
  // Applies the engine to every row of x.
  Matrix apply_rows(const Matrix& x) const;

 private:
  Kind kind_ = Kind::kIdeal;
  Matrix effective_;
  // Decomposed path: first stage with signed rows, bridge, unsigned second stage.
  Matrix stage_a_;
  Vector bridge_;
  Matrix stage_b_;
  std::size_t devices_ = 0;
};

struct FeedbackCircuitSpec {
  double g1 = 1.0;
  double g2 = 1.0;
  double alpha = 1.0;
  double tolerance = 1e-11;  // relative residual of the settled loop
  std::size_t max_iterations = 200000;

  void validate() const;
};

struct FeedbackSolution {
  RowVector v;         // settled node voltages
  RowVector v_direct;  // direct solve of the same system
  std::size_t iterations = 0;
  double residual = 0.0;  // |iG^T - v(GG^T + g1g2 I)| / |iG^T|
};

// Settles v(GG^T + g1 g2 I) = i G^T for one conductance matrix, reusable
// across many input currents.
class FeedbackSolver {
 public:
  FeedbackSolver(Matrix g_eff, const FeedbackCircuitSpec& spec);

  FeedbackSolution solve(const RowVector& i_in) const;
  // Settles one loop per row of currents; returns the node voltages row-wise.
  Matrix solve_rows(const Matrix& currents, std::size_t* iterations = nullptr) const;
  double step() const { return mu_; }
  double momentum() const { return beta_; }
  // Tolerance in force: the requested one, raised to the rounding floor of
  // an ill-conditioned loop.
  double tolerance() const { return tolerance_; }

 private:
  Matrix settle(const Matrix& rhs, std::size_t* iterations, double* residual) const;

  Matrix g_;
  FeedbackCircuitSpec spec_;
  Matrix system_;  // GG^T/(g1g2) + I
  Eigen::LLT<Matrix> llt_;
  double mu_ = 0.0;
  double beta_ = 0.0;
  double tolerance_ = 0.0;
};

FeedbackSolution mmse_feedback_solve(const RowVector& i_in, const Matrix& g_eff,
                                     const FeedbackCircuitSpec& spec);

// [[Re H, -Im H], [Im H, Re H]]: maps the stacked vector [Re x; Im x] to
// [Re Hx; Im Hx].
Matrix complex_to_real_map(const CMatrix& h);
// alpha * map(H)^T, the orientation the feedback circuit programs.
Matrix feedback_conductance(const CMatrix& h, double alpha);

RowVector stack_complex(const CVector& z);
CVector unstack_complex(const RowVector& v);

}  // namespace faultfree

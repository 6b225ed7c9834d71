#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "faultfree/device_model.hpp"
#include "faultfree/factorizer.hpp"
#include "faultfree/types.hpp"

namespace faultfree {

enum class Side { kA, kB };

struct ProgramPlan {
  double delta_g = 15.0;          // µS margin subtracted on every layer but the last
  double threshold_ratio = 10.0;  // k_i <= k_{i-1} / threshold_ratio
  std::size_t n_layers = 2;
  // Residual step size as a fraction of the layer's magnitude bound.
  double residual_learning_rate = 1e-2;
  // Relative squared error above which a residual layer is flagged.
  double residual_tolerance = 1e-3;

  void validate() const;
  // delta_g = 3 * write_sigma.
  static ProgramPlan for_device(const CrossbarSpec& spec, std::size_t n_layers);

  std::string to_json() const;
  static ProgramPlan from_json(std::string_view text);
};

struct QuantizedLayer {
  Matrix conductance;  // µS, within [0, g_max]
  double scale = 0.0;  // weight units per µS
};

// G = max(0, |m|/scale - delta_g), scale = max|m| / g_max unless given.
QuantizedLayer quantize_to_conductance(const Matrix& m, double delta_g, double g_max,
                                       std::optional<double> scale = std::nullopt);

struct CompensationStack {
  Side side = Side::kA;
  SignPattern signs;
  std::vector<ConductanceMatrix> layers;
  std::vector<double> scale_ratios;

  std::size_t rows() const;
  std::size_t cols() const;
  // sum_i k_i * diag(signs) * C_i
  Matrix effective() const;
  // sum_i k_i * C_i
  Matrix magnitude() const;
  Matrix layer_weights(std::size_t i) const;

  void validate() const;
  std::string to_json() const;
  static CompensationStack from_json(std::string_view text);
};

Matrix reconstruct(const CompensationStack& a, const CompensationStack& b);

struct LayerFaults {
  FaultMask a;
  FaultMask b;
};

// Fault maps for every layer of one decomposition (separate physical arrays).
struct ChipLayout {
  CrossbarSpec device;
  std::vector<LayerFaults> layers;

  static ChipLayout fault_free(const CrossbarSpec& device, std::size_t m, std::size_t k,
                               std::size_t n, std::size_t n_layers);
  static ChipLayout simulate(const CrossbarSpec& device, std::size_t m, std::size_t k,
                             std::size_t n, std::size_t n_layers, double r_off, double r_on,
                             std::uint64_t seed);
};

// Layer-i system: target = (base_a + X)(base_b + Y) under the shared sign
// pattern, the layer's fault masks and the magnitude ladder bounds.
class ResidualProblem {
 public:
  ResidualProblem(Matrix target, Matrix base_a, Matrix base_b, SignPatterns signs,
                  LayerFaults faults, double bound_a, double bound_b);

  struct Solution {
    Matrix x;
    Matrix y;
    double loss = 0.0;  // relative squared error
    bool clamped_a = false;
    bool clamped_b = false;
  };

  double loss(const Matrix& x, const Matrix& y) const;
  LossAndGrad loss_and_grad(const Matrix& x, const Matrix& y) const;
  // Pins faulty cells, enforces signs and clamps to the bounds.
  void project(Matrix& x, Matrix& y) const;
  Solution solve(const OptimizerConfig& config, double relative_rate) const;

  double bound_a() const { return bound_a_; }
  double bound_b() const { return bound_b_; }
  const Matrix& pinned_a() const { return pin_a_; }
  const Matrix& pinned_b() const { return pin_b_; }

 private:
  Matrix target_, base_a_, base_b_;
  SignPatterns signs_;
  LayerFaults faults_;
  double bound_a_, bound_b_;
  Matrix pin_a_, pin_b_;
  double target_sq_;
};

ResidualProblem residual_target(const Matrix& target, const CompensationStack& a,
                                const CompensationStack& b, const LayerFaults& faults,
                                double bound_a, double bound_b);

struct LayerReport {
  std::size_t layer = 0;  // 1-based
  double similarity = 0.0;
  double error_std = 0.0;
  double relative_error = 0.0;  // Frobenius
  double scale_a = 0.0;
  double scale_b = 0.0;
  double ladder_a = 0.0;  // scale ratio to the previous layer (0 for layer 1)
  double ladder_b = 0.0;
  double fit_loss = 0.0;  // optimizer loss before programming
  bool clamped = false;
  std::size_t faults_a = 0;
  std::size_t faults_b = 0;
};

struct ProgramReport {
  std::vector<LayerReport> layers;
  bool residual_infeasible = false;

  void write_csv(std::ostream& out) const;
};

struct ProgrammedPair {
  CompensationStack a;
  CompensationStack b;
  DecompositionResult initial;
  ProgramReport report;

  Matrix effective() const { return reconstruct(a, b); }
};

// Layer 1 is decomposed and programmed with the delta_g margin; each later
// layer re-reads what was programmed and solves the residual system.
ProgrammedPair program_stack(const Matrix& target, std::size_t k, const ProgramPlan& plan,
                             const ChipLayout& chip, const OptimizerConfig& config,
                             std::uint64_t seed, const DecomposeOptions& options = {});

}  // namespace faultfree

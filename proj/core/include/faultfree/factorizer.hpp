#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "faultfree/device_model.hpp"
#include "faultfree/types.hpp"

namespace faultfree {

struct OptimizerConfig {
  double learning_rate = 3e-2;
  std::size_t epochs = 5000;
  double beta1 = 0.99;
  double beta2 = 0.99;
  double epsilon = 1e-8;
  // Cosine-anneal the step size down to this value; constant when unset.
  std::optional<double> final_learning_rate;
  // Every this many epochs, equalize column l of M_A against row l of M_B
  // (product-preserving). 0 disables.
  std::size_t rebalance_every = 10;
  std::uint64_t seed = 0;

  void validate() const;
  double rate_at(std::size_t epoch) const;  // epoch is 1-based

  std::string to_json() const;
  static OptimizerConfig from_json(std::string_view text);
};

class SignPattern {
 public:
  SignPattern() = default;
  explicit SignPattern(std::vector<int> signs);
  static SignPattern uniform(std::size_t n, int sign = +1);

  std::size_t size() const { return signs_.size(); }
  double operator[](std::size_t i) const { return signs_[i]; }
  const std::vector<int>& values() const { return signs_; }
  Vector as_vector() const;

  bool operator==(const SignPattern& other) const = default;

 private:
  std::vector<int> signs_;
};

struct SignPatterns {
  SignPattern a;  // rows of M_A
  SignPattern b;  // rows of M_B
};

// Values that faulty cells must hold, in weight units.
struct PinnedValues {
  Matrix a;
  Matrix b;

  // OFF cells pin to 0 and ON cells to on_value.
  static PinnedValues from_masks(const FaultMask& mask_a, const FaultMask& mask_b,
                                 double on_value);
};

struct DecompositionResult {
  Matrix m_a;
  Matrix m_b;
  SignPattern signs_a;
  SignPattern signs_b;
  std::vector<double> loss_trace;
  double final_similarity = 0.0;
  std::size_t best_epoch = 0;
  // Positive scalar applied to the product after optimization so that it
  // matches the target in least squares. 1 when pinned ON cells forbid it.
  double product_gain = 1.0;
  std::optional<bool> reached_threshold;

  Matrix product() const { return m_a * m_b; }

  std::string to_json() const;
  static DecompositionResult from_json(std::string_view text);
  void write_loss_csv(std::ostream& out) const;
};

struct LossAndGrad {
  double loss = 0.0;
  Matrix grad_a;
  Matrix grad_b;
};

double cosine_similarity(const Matrix& a, const Matrix& b);

LossAndGrad cosine_loss_and_grad(const Matrix& m_a, const Matrix& m_b, const Matrix& target);

// m[i,:] <- s_i * max(0, s_i * m[i,:])
Matrix project_signs(const Matrix& m, const SignPattern& pattern);
void project_signs_inplace(Matrix& m, const SignPattern& pattern);

Matrix apply_fault_mask(const Matrix& m, const FaultMask& mask, const Matrix& pinned);
void apply_fault_mask_inplace(Matrix& m, const FaultMask& mask, const Matrix& pinned);

// M_A rows are all +1. M_B rows get a seeded random arrangement whose
// negative count follows the negative share of the target's mass.
SignPatterns choose_sign_patterns(const Matrix& target, std::size_t k, std::uint64_t seed);

struct DecomposeOptions {
  std::optional<SignPatterns> patterns;
  std::optional<double> similarity_threshold;
  // Box on |entry| for both factors, in the target's units.
  std::optional<double> magnitude_bound;
  // Called after every epoch with the projected iterate.
  std::function<void(std::size_t, const Matrix&, const Matrix&)> on_epoch;
};

DecompositionResult decompose(const Matrix& target, std::size_t k, const FaultMask& mask_a,
                              const FaultMask& mask_b, const PinnedValues& pinned,
                              const OptimizerConfig& config, const DecomposeOptions& options = {});

// Convenience overload for masks without stuck-ON cells.
DecompositionResult decompose(const Matrix& target, std::size_t k, const FaultMask& mask_a,
                              const FaultMask& mask_b, const OptimizerConfig& config,
                              const DecomposeOptions& options = {});

// Copy of mask with only its stuck-OFF cells.
FaultMask without_on(const FaultMask& mask);
// ON cells hold sign_r * value, OFF cells 0.
Matrix signed_pins(const FaultMask& mask, const SignPattern& signs, double value);

struct StuckOnDecomposition {
  DecompositionResult result;
  double on_weight = 0.0;
};

// Stuck-ON cells pin to sign * w at the top of a shared box |entry| <= w, so
// they map exactly to g_max. Without on_weight, w is the largest magnitude of
// a solve that treats the ON cells as healthy. product_gain is the
// least-squares gain of the pinned product.
StuckOnDecomposition decompose_stuck_on(const Matrix& target, std::size_t k,
                                        const FaultMask& mask_a, const FaultMask& mask_b,
                                        const OptimizerConfig& config,
                                        const DecomposeOptions& options = {},
                                        std::optional<double> on_weight = std::nullopt);

// ||(|A||B|)||_F / ||AB||_F. Write noise on the factors reaches the product
// scaled by roughly this factor, so 1 means no cancellation between terms.
double cancellation_ratio(const Matrix& m_a, const Matrix& m_b);

struct RestartChoice {
  std::uint64_t seed = 0;  // optimizer seed that reproduces `result`
  DecompositionResult result;
  double cancellation = 0.0;
};

// Runs `restarts` seeded decompositions (the first with config.seed) and keeps
// the least-cancelling one among those reaching min_similarity, or the most
// similar one when none does.
RestartChoice decompose_least_cancellation(const Matrix& target, std::size_t k,
                                           const FaultMask& mask_a, const FaultMask& mask_b,
                                           const OptimizerConfig& config, std::size_t restarts,
                                           double min_similarity = 0.999);

// Adam over a pair of matrices, shared with the residual solver.
class PairAdam {
 public:
  PairAdam(const OptimizerConfig& config, const Matrix& a, const Matrix& b);

  void step(Matrix& a, Matrix& b, const Matrix& grad_a, const Matrix& grad_b, double rate_a,
            double rate_b);
  // Keeps the moments consistent with a column/row rescale of the iterate.
  void rescale_pair(Eigen::Index l, double d);
  std::size_t steps() const { return t_; }

 private:
  double beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  Matrix ma_, va_, mb_, vb_;
};

}  // namespace faultfree

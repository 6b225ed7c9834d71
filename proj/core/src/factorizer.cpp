#include "faultfree/factorizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <ostream>

#include <json.hpp>

#include "faultfree/rng.hpp"
#include "config_parse.hpp"
#include "json_util.hpp"

namespace faultfree {

using nlohmann::json;
using detail::matrix_from_json;
using detail::matrix_to_json;

namespace {

void check_shape(const Matrix& m, std::size_t rows, std::size_t cols, const char* what) {
  if (static_cast<std::size_t>(m.rows()) != rows || static_cast<std::size_t>(m.cols()) != cols)
    throw ConfigError(std::string(what) + ": shape mismatch");
}

bool has_on_cells(const FaultMask& mask) { return mask.on_count() > 0; }

bool column_has_on(const FaultMask& mask, std::size_t col) {
  for (std::size_t r = 0; r < mask.rows(); ++r)
    if (mask.at(r, col) == FaultKind::kStuckOn) return true;
  return false;
}

bool row_has_on(const FaultMask& mask, std::size_t row) {
  for (std::size_t c = 0; c < mask.cols(); ++c)
    if (mask.at(row, c) == FaultKind::kStuckOn) return true;
  return false;
}

}  // namespace

void OptimizerConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("optimizer: learning_rate must be > 0");
  if (epochs < 1) throw ConfigError("optimizer: epochs must be >= 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("optimizer: beta1 must be in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("optimizer: beta2 must be in [0, 1)");
  if (!(epsilon > 0.0)) throw ConfigError("optimizer: epsilon must be > 0");
  if (final_learning_rate && !(*final_learning_rate > 0.0))
    throw ConfigError("optimizer: final_learning_rate must be > 0");
}

double OptimizerConfig::rate_at(std::size_t epoch) const {
  if (!final_learning_rate || epochs <= 1) return learning_rate;
  const double f = static_cast<double>(epoch - 1) / static_cast<double>(epochs - 1);
  const double w = 0.5 * (1.0 + std::cos(std::numbers::pi * f));
  return *final_learning_rate + (learning_rate - *final_learning_rate) * w;
}

std::string OptimizerConfig::to_json() const {
  json j{{"learning_rate", learning_rate}, {"epochs", epochs},   {"beta1", beta1},
         {"beta2", beta2},                 {"epsilon", epsilon}, {"rebalance_every", rebalance_every},
         {"seed", seed}};
  j["final_learning_rate"] = final_learning_rate ? json(*final_learning_rate) : json(nullptr);
  return j.dump(2);
}

OptimizerConfig OptimizerConfig::from_json(std::string_view text) {
  return detail::parse_optimizer(detail::parse_json(text, "optimizer"), "");
}

OptimizerConfig detail::parse_optimizer(const json& j, const std::string& path, OptimizerConfig c) {
  Fields f(j, path);
  f.read("learning_rate", c.learning_rate);
  f.read("epochs", c.epochs);
  f.read("beta1", c.beta1);
  f.read("beta2", c.beta2);
  f.read("epsilon", c.epsilon);
  f.read("rebalance_every", c.rebalance_every);
  f.read("seed", c.seed);
  f.read_optional("final_learning_rate", c.final_learning_rate);
  f.finish();
  c.validate();
  return c;
}

SignPattern::SignPattern(std::vector<int> signs) : signs_(std::move(signs)) {
  for (int s : signs_)
    if (s != 1 && s != -1) throw ConfigError("sign pattern entries must be +1 or -1");
}

SignPattern SignPattern::uniform(std::size_t n, int sign) {
  return SignPattern(std::vector<int>(n, sign));
}

Vector SignPattern::as_vector() const {
  Vector v(static_cast<Eigen::Index>(signs_.size()));
  for (std::size_t i = 0; i < signs_.size(); ++i) v(static_cast<Eigen::Index>(i)) = signs_[i];
  return v;
}

PinnedValues PinnedValues::from_masks(const FaultMask& mask_a, const FaultMask& mask_b,
                                      double on_value) {
  return {mask_a.pinned_values(on_value), mask_b.pinned_values(on_value)};
}

std::string DecompositionResult::to_json() const {
  json j;
  j["m_a"] = matrix_to_json(m_a);
  j["m_b"] = matrix_to_json(m_b);
  j["signs_a"] = signs_a.values();
  j["signs_b"] = signs_b.values();
  j["loss_trace"] = loss_trace;
  j["final_similarity"] = final_similarity;
  j["best_epoch"] = best_epoch;
  j["product_gain"] = product_gain;
  j["reached_threshold"] = reached_threshold ? json(*reached_threshold) : json(nullptr);
  return j.dump();
}

DecompositionResult DecompositionResult::from_json(std::string_view text) {
  DecompositionResult r;
  try {
    const json j = json::parse(text);
    r.m_a = matrix_from_json(j.at("m_a"));
    r.m_b = matrix_from_json(j.at("m_b"));
    r.signs_a = SignPattern(j.at("signs_a").get<std::vector<int>>());
    r.signs_b = SignPattern(j.at("signs_b").get<std::vector<int>>());
    r.loss_trace = j.at("loss_trace").get<std::vector<double>>();
    r.final_similarity = j.at("final_similarity").get<double>();
    r.best_epoch = j.value("best_epoch", std::size_t{0});
    r.product_gain = j.value("product_gain", 1.0);
    if (j.contains("reached_threshold") && !j.at("reached_threshold").is_null())
      r.reached_threshold = j.at("reached_threshold").get<bool>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("decomposition json: ") + e.what());
  }
  return r;
}

void DecompositionResult::write_loss_csv(std::ostream& out) const {
  out << "epoch,loss\n";
  const auto old = out.precision(17);
  for (std::size_t i = 0; i < loss_trace.size(); ++i) out << i + 1 << ',' << loss_trace[i] << '\n';
  out.precision(old);
}

double cosine_similarity(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ConfigError("cosine_similarity: shape mismatch");
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) throw NumericalError("cosine_similarity: all-zero operand");
  return std::clamp(a.cwiseProduct(b).sum() / (na * nb), -1.0, 1.0);
}

LossAndGrad cosine_loss_and_grad(const Matrix& m_a, const Matrix& m_b, const Matrix& target) {
  if (m_a.cols() != m_b.rows() || m_a.rows() != target.rows() || m_b.cols() != target.cols())
    throw ConfigError("cosine_loss_and_grad: shapes do not conform");
  const Matrix p = m_a * m_b;
  const double np = p.norm();
  const double nt = target.norm();
  if (np == 0.0) throw NumericalError("cosine loss: product is the zero matrix");
  if (nt == 0.0) throw NumericalError("cosine loss: target is the zero matrix");
  const double c = p.cwiseProduct(target).sum() / (np * nt);
  // dL/dP for L = 1 - <P,T>/(|P||T|)
  const Matrix g = c / (np * np) * p - target / (np * nt);
  return {1.0 - c, g * m_b.transpose(), m_a.transpose() * g};
}

void project_signs_inplace(Matrix& m, const SignPattern& pattern) {
  if (static_cast<std::size_t>(m.rows()) != pattern.size())
    throw ConfigError("project_signs: pattern length differs from row count");
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    if (pattern[static_cast<std::size_t>(r)] > 0)
      m.row(r) = m.row(r).cwiseMax(0.0);
    else
      m.row(r) = m.row(r).cwiseMin(0.0);
  }
}

Matrix project_signs(const Matrix& m, const SignPattern& pattern) {
  Matrix out = m;
  project_signs_inplace(out, pattern);
  return out;
}

void apply_fault_mask_inplace(Matrix& m, const FaultMask& mask, const Matrix& pinned) {
  check_shape(m, mask.rows(), mask.cols(), "apply_fault_mask");
  check_shape(pinned, mask.rows(), mask.cols(), "apply_fault_mask pinned");
  for (std::size_t r = 0; r < mask.rows(); ++r)
    for (std::size_t c = 0; c < mask.cols(); ++c)
      if (!mask.healthy(r, c)) {
        const auto i = static_cast<Eigen::Index>(r), j = static_cast<Eigen::Index>(c);
        m(i, j) = pinned(i, j);
      }
}

Matrix apply_fault_mask(const Matrix& m, const FaultMask& mask, const Matrix& pinned) {
  Matrix out = m;
  apply_fault_mask_inplace(out, mask, pinned);
  return out;
}

SignPatterns choose_sign_patterns(const Matrix& target, std::size_t k, std::uint64_t seed) {
  if (k < 1) throw ConfigError("choose_sign_patterns: k must be >= 1");
  SignPatterns out{SignPattern::uniform(static_cast<std::size_t>(target.rows())), {}};
  const double pos = target.cwiseMax(0.0).sum();
  const double neg = -target.cwiseMin(0.0).sum();
  std::size_t n_neg = 0;
  if (k == 1) {
    n_neg = neg > pos ? 1 : 0;
  } else if (pos == 0.0 && neg > 0.0) {
    n_neg = k;
  } else if (neg > 0.0) {
    const auto share = std::round(static_cast<double>(k) * neg / (pos + neg));
    n_neg = std::clamp<std::size_t>(static_cast<std::size_t>(share), 1, k - 1);
  }
  std::vector<int> signs(k, +1);
  std::fill(signs.begin(), signs.begin() + static_cast<std::ptrdiff_t>(n_neg), -1);
  Rng rng = Rng(seed).split("signs");
  for (std::size_t i = k; i > 1; --i) std::swap(signs[i - 1], signs[rng.below(i)]);
  out.b = SignPattern(std::move(signs));
  return out;
}

PairAdam::PairAdam(const OptimizerConfig& config, const Matrix& a, const Matrix& b)
    : beta1_(config.beta1),
      beta2_(config.beta2),
      eps_(config.epsilon),
      ma_(Matrix::Zero(a.rows(), a.cols())),
      va_(Matrix::Zero(a.rows(), a.cols())),
      mb_(Matrix::Zero(b.rows(), b.cols())),
      vb_(Matrix::Zero(b.rows(), b.cols())) {}

void PairAdam::step(Matrix& a, Matrix& b, const Matrix& grad_a, const Matrix& grad_b,
                    double rate_a, double rate_b) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  auto update = [&](Matrix& x, Matrix& m, Matrix& v, const Matrix& g, double rate) {
    m = beta1_ * m + (1.0 - beta1_) * g;
    v = beta2_ * v + (1.0 - beta2_) * g.cwiseProduct(g);
    x.array() -= rate * (m.array() / c1) / ((v.array() / c2).sqrt() + eps_);
  };
  update(a, ma_, va_, grad_a, rate_a);
  update(b, mb_, vb_, grad_b, rate_b);
}

void PairAdam::rescale_pair(Eigen::Index l, double d) {
  ma_.col(l) /= d;
  va_.col(l) /= d * d;
  mb_.row(l) *= d;
  vb_.row(l) *= d * d;
}

DecompositionResult decompose(const Matrix& target, std::size_t k, const FaultMask& mask_a,
                              const FaultMask& mask_b, const OptimizerConfig& config,
                              const DecomposeOptions& options) {
  if (has_on_cells(mask_a) || has_on_cells(mask_b))
    throw ConfigError("decompose: stuck-ON cells need explicit pinned values");
  const auto m = static_cast<Eigen::Index>(target.rows());
  const auto n = static_cast<Eigen::Index>(target.cols());
  const auto kk = static_cast<Eigen::Index>(k);
  return decompose(target, k, mask_a, mask_b, {Matrix::Zero(m, kk), Matrix::Zero(kk, n)}, config,
                   options);
}

DecompositionResult decompose(const Matrix& target, std::size_t k, const FaultMask& mask_a,
                              const FaultMask& mask_b, const PinnedValues& pinned,
                              const OptimizerConfig& config, const DecomposeOptions& options) {
  config.validate();
  if (k < 1) throw ConfigError("decompose: k must be >= 1");
  const auto m = static_cast<std::size_t>(target.rows());
  const auto n = static_cast<std::size_t>(target.cols());
  if (m == 0 || n == 0) throw ConfigError("decompose: empty target");
  if (mask_a.rows() != m || mask_a.cols() != k) throw ConfigError("decompose: mask_a must be m x k");
  if (mask_b.rows() != k || mask_b.cols() != n) throw ConfigError("decompose: mask_b must be k x n");
  check_shape(pinned.a, m, k, "decompose pinned.a");
  check_shape(pinned.b, k, n, "decompose pinned.b");
  if (options.magnitude_bound && !(*options.magnitude_bound > 0.0))
    throw ConfigError("decompose: magnitude_bound must be > 0");

  const double tmax = target.cwiseAbs().maxCoeff();
  if (tmax == 0.0) throw NumericalError("decompose: target is the zero matrix");

  SignPatterns patterns =
      options.patterns ? *options.patterns : choose_sign_patterns(target, k, config.seed);
  if (patterns.a.size() != m || patterns.b.size() != k)
    throw ConfigError("decompose: sign pattern lengths must be m and k");

  // Work on a unit-peak copy so the step size is target-independent.
  const double root = std::sqrt(tmax);
  const Matrix t = target / tmax;
  const Matrix pin_a = pinned.a / root;
  const Matrix pin_b = pinned.b / root;
  const std::optional<double> bound =
      options.magnitude_bound ? std::optional<double>(*options.magnitude_bound / root) : std::nullopt;

  const bool pinned_on = has_on_cells(mask_a) || has_on_cells(mask_b);
  auto project = [&](Matrix& a, Matrix& b) {
    project_signs_inplace(a, patterns.a);
    project_signs_inplace(b, patterns.b);
    if (bound) {
      a = a.cwiseMax(-*bound).cwiseMin(*bound);
      b = b.cwiseMax(-*bound).cwiseMin(*bound);
    }
    apply_fault_mask_inplace(a, mask_a, pin_a);
    apply_fault_mask_inplace(b, mask_b, pin_b);
  };

  Rng rng = Rng(config.seed).split("init");
  const auto km = static_cast<Eigen::Index>(k);
  Matrix a(static_cast<Eigen::Index>(m), km);
  Matrix b(km, static_cast<Eigen::Index>(n));
  for (Eigen::Index r = 0; r < a.rows(); ++r)
    for (Eigen::Index c = 0; c < a.cols(); ++c)
      a(r, c) = patterns.a[static_cast<std::size_t>(r)] * rng.uniform();
  for (Eigen::Index r = 0; r < b.rows(); ++r)
    for (Eigen::Index c = 0; c < b.cols(); ++c)
      b(r, c) = patterns.b[static_cast<std::size_t>(r)] * rng.uniform();
  {
    const double pn = (a * b).norm();
    if (pn > 0.0) {
      const double s = std::sqrt(t.norm() / pn);
      a *= s;
      b *= s;
    }
  }
  project(a, b);
  if ((a * b).norm() == 0.0)
    throw NumericalError("decompose: product vanishes under the fault masks");

  // Pairs touching a pinned ON cell are never rescaled.
  std::vector<bool> can_rebalance(k, true);
  for (std::size_t l = 0; l < k; ++l)
    can_rebalance[l] = !column_has_on(mask_a, l) && !row_has_on(mask_b, l);

  DecompositionResult result;
  result.signs_a = patterns.a;
  result.signs_b = patterns.b;
  result.loss_trace.reserve(config.epochs);

  const double nt = t.norm();
  Matrix best_a = a, best_b = b;
  double best = std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;
  PairAdam adam(config, a, b);
  Matrix p, g, ga, gb;

  auto evaluate = [&](bool want_grad) {
    p.noalias() = a * b;
    const double np = p.norm();
    if (np == 0.0) throw NumericalError("decompose: iterate collapsed to the zero product");
    const double c = p.cwiseProduct(t).sum() / (np * nt);
    if (want_grad) {
      g = (c / (np * np)) * p - t / (np * nt);
      ga.noalias() = g * b.transpose();
      gb.noalias() = a.transpose() * g;
    }
    return 1.0 - c;
  };

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const double loss = evaluate(true);
    result.loss_trace.push_back(loss);
    if (loss < best) {
      best = loss;
      best_a = a;
      best_b = b;
      best_epoch = epoch - 1;
    }
    const double rate = config.rate_at(epoch);
    adam.step(a, b, ga, gb, rate, rate);
    project(a, b);

    if (config.rebalance_every > 0 && epoch % config.rebalance_every == 0) {
      for (std::size_t l = 0; l < k; ++l) {
        if (!can_rebalance[l]) continue;
        const auto li = static_cast<Eigen::Index>(l);
        const double na = a.col(li).norm();
        const double nb = b.row(li).norm();
        if (na == 0.0 || nb == 0.0) continue;
        double d = std::sqrt(nb / na);
        if (bound) {
          const double amax = a.col(li).cwiseAbs().maxCoeff();
          const double bmax = b.row(li).cwiseAbs().maxCoeff();
          const double lo = bmax / *bound, hi = *bound / amax;
          if (lo > hi) continue;
          d = std::clamp(d, lo, hi);
        }
        a.col(li) *= d;
        b.row(li) /= d;
        adam.rescale_pair(li, d);
      }
    }
    if (options.on_epoch) {
      Matrix ua = a * root, ub = b * root;
      apply_fault_mask_inplace(ua, mask_a, pinned.a);
      apply_fault_mask_inplace(ub, mask_b, pinned.b);
      options.on_epoch(epoch, ua, ub);
    }
  }
  {
    const double loss = evaluate(false);
    if (loss < best) {
      best = loss;
      best_a = a;
      best_b = b;
      best_epoch = config.epochs;
    }
  }

  result.best_epoch = best_epoch;
  result.m_a = best_a * root;
  result.m_b = best_b * root;
  apply_fault_mask_inplace(result.m_a, mask_a, pinned.a);
  apply_fault_mask_inplace(result.m_b, mask_b, pinned.b);
  if (!pinned_on && !bound) {
    const Matrix prod = result.m_a * result.m_b;
    const double pp = prod.squaredNorm();
    const double gain = prod.cwiseProduct(target).sum() / pp;
    if (gain > 0.0 && std::isfinite(gain)) {
      result.m_a *= std::sqrt(gain);
      result.m_b *= std::sqrt(gain);
      result.product_gain = gain;
    }
  }
  result.final_similarity = cosine_similarity(result.m_a * result.m_b, target);
  if (options.similarity_threshold)
    result.reached_threshold = result.final_similarity >= *options.similarity_threshold;
  return result;
}

FaultMask without_on(const FaultMask& mask) {
  FaultMask out(mask.rows(), mask.cols());
  for (std::size_t r = 0; r < mask.rows(); ++r)
    for (std::size_t c = 0; c < mask.cols(); ++c)
      if (mask.at(r, c) == FaultKind::kStuckOff) out.set(r, c, FaultKind::kStuckOff);
  return out;
}

Matrix signed_pins(const FaultMask& mask, const SignPattern& signs, double value) {
  Matrix p = mask.pinned_values(value);
  for (Eigen::Index r = 0; r < p.rows(); ++r) p.row(r) *= signs[static_cast<std::size_t>(r)];
  return p;
}

StuckOnDecomposition decompose_stuck_on(const Matrix& target, std::size_t k,
                                        const FaultMask& mask_a, const FaultMask& mask_b,
                                        const OptimizerConfig& config,
                                        const DecomposeOptions& options,
                                        std::optional<double> on_weight) {
  DecomposeOptions opts = options;
  if (!opts.patterns) opts.patterns = choose_sign_patterns(target, k, config.seed);
  double w = 0.0;
  if (on_weight) {
    if (!(*on_weight > 0.0)) throw ConfigError("decompose_stuck_on: on_weight must be > 0");
    w = *on_weight;
  } else {
    const DecompositionResult probe =
        decompose(target, k, without_on(mask_a), without_on(mask_b), config, opts);
    w = std::max(probe.m_a.cwiseAbs().maxCoeff(), probe.m_b.cwiseAbs().maxCoeff());
  }
  opts.magnitude_bound = opts.magnitude_bound ? std::min(*opts.magnitude_bound, w) : w;
  const PinnedValues pins{signed_pins(mask_a, opts.patterns->a, w),
                          signed_pins(mask_b, opts.patterns->b, w)};
  StuckOnDecomposition out{decompose(target, k, mask_a, mask_b, pins, config, opts), w};
  const Matrix p = out.result.product();
  const double gain = p.cwiseProduct(target).sum() / p.squaredNorm();
  if (gain > 0.0 && std::isfinite(gain)) out.result.product_gain = gain;
  return out;
}

double cancellation_ratio(const Matrix& m_a, const Matrix& m_b) {
  const double net = (m_a * m_b).norm();
  if (net == 0.0) throw NumericalError("cancellation_ratio: zero product");
  return (m_a.cwiseAbs() * m_b.cwiseAbs()).norm() / net;
}

RestartChoice decompose_least_cancellation(const Matrix& target, std::size_t k,
                                           const FaultMask& mask_a, const FaultMask& mask_b,
                                           const OptimizerConfig& config, std::size_t restarts,
                                           double min_similarity) {
  if (restarts < 1) throw ConfigError("decompose_least_cancellation: restarts must be >= 1");
  const Rng seeds(config.seed);
  std::optional<RestartChoice> best;
  bool best_ok = false;
  for (std::size_t r = 0; r < restarts; ++r) {
    OptimizerConfig c = config;
    if (r > 0) c.seed = seeds.split(r).seed();
    RestartChoice cand{c.seed, decompose(target, k, mask_a, mask_b, c), 0.0};
    cand.cancellation = cancellation_ratio(cand.result.m_a, cand.result.m_b);
    const bool ok = cand.result.final_similarity >= min_similarity;
    const bool better =
        !best || (ok && !best_ok) ||
        (ok == best_ok && (ok ? cand.cancellation < best->cancellation
                              : cand.result.final_similarity > best->result.final_similarity));
    if (better) {
      best = std::move(cand);
      best_ok = ok;
    }
  }
  return std::move(*best);
}

}  // namespace faultfree

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "faultfree/factorizer.hpp"
#include "faultfree/types.hpp"

namespace faultfree {

const char* version();

// Runs task(i) for i in [0, count) on up to `threads` workers. Callers write
// into preallocated slots, so results never depend on completion order. The
// first exception is rethrown after all workers stop.
void parallel_for(std::size_t count, std::size_t threads,
                  const std::function<void(std::size_t)>& task);

// Named targets: "dft<N>-real", "dft<N>-imag", "random:<m>x<n>" (uniform in
// [-1, 1] from seed). Anything else is read as a CSV matrix file.
Matrix make_target(const std::string& name, std::uint64_t seed = 0);
Matrix read_matrix_csv(std::istream& in);
void write_matrix_csv(std::ostream& out, const Matrix& m);

// Rank from singular values above rel_tol * largest.
std::size_t numerical_rank(const Matrix& m, double rel_tol = 1e-9);

enum class FaultClass { kStuckOff, kStuckOn };
const char* to_string(FaultClass fault);

struct SweepConfig {
  std::string target = "dft64-real";
  std::vector<double> rates = {0.0, 0.05, 0.1, 0.18, 0.25, 0.39, 0.5, 0.6};
  std::vector<std::size_t> ks = {17, 33, 48, 64};
  std::size_t trials = 50;
  std::uint64_t seed = 1;
  OptimizerConfig optimizer;
  std::size_t threads = 1;
  // Stuck-ON pin in weight units; sized from a healthy solve when unset.
  std::optional<double> on_weight;
  std::string output;  // optional directory hint for the CLI

  void validate() const;
  std::string to_json() const;
  static SweepConfig from_json(std::string_view text);
};

// Seed of one trial. Depends on (seed, k, trial) only, so every rate and
// fault class sees the same fault placement stream and optimizer start.
std::uint64_t trial_seed(std::uint64_t seed, std::size_t k, std::size_t trial);

struct TrialResult {
  double rate = 0.0;
  std::size_t k = 0;
  std::size_t trial = 0;
  std::uint64_t seed = 0;
  std::size_t faulty_cells = 0;
  double similarity = 0.0;
  double on_weight = 0.0;  // stuck-ON sweeps only
  bool failed = false;
  std::string error;
};

struct SweepCell {
  double rate = 0.0;
  std::size_t k = 0;
  std::size_t trials = 0;
  std::size_t failures = 0;
  double mean = 0.0;
  double min = 0.0;
  double max = 0.0;
  double device_usage = 0.0;  // (mk + kn) / 2mn
};

struct SweepResult {
  FaultClass fault = FaultClass::kStuckOff;
  std::size_t m = 0;
  std::size_t n = 0;
  std::vector<TrialResult> trials;  // ordered by (rate, k, trial)
  std::vector<SweepCell> cells;     // ordered by (rate, k)

  void write_cells_csv(std::ostream& out) const;
  void write_trials_csv(std::ostream& out) const;
};

// One decomposition per (rate, k, trial) with independent faults in M_A and
// M_B. A trial that throws is recorded as a failure and the sweep goes on.
SweepResult sweep_fault_k(const SweepConfig& config);
SweepResult stuck_on_sweep(const SweepConfig& config);
SweepResult run_sweep(const SweepConfig& config, FaultClass fault);

// Direct differential-pair mapping of the target under the same fault rates,
// ideal programming otherwise.
struct BaselineCell {
  double rate = 0.0;
  std::size_t trials = 0;
  double mean = 0.0;
  double min = 0.0;
  double max = 0.0;
};
std::vector<BaselineCell> differential_baseline(const Matrix& target, const std::vector<double>& rates,
                                                std::size_t trials, std::uint64_t seed,
                                                FaultClass fault, std::size_t threads = 1);
void write_baseline_csv(std::ostream& out, const std::vector<BaselineCell>& cells);

// 1 - cos for every single stuck-OFF device that carries a nonzero weight of
// a differential-pair mapping, in row-major order of the weights.
std::vector<double> single_fault_cosine_differences(const Matrix& target);

enum class MappingMethod { kDifferential, kDecomposed };
const char* to_string(MappingMethod method);

struct ResourceReport {
  MappingMethod method = MappingMethod::kDecomposed;
  std::size_t m = 0;
  std::size_t n = 0;
  std::size_t k = 0;           // decomposed only
  std::size_t layers = 1;      // 1 + compensation layers
  std::size_t components = 1;  // e.g. 2 for real and imaginary parts
  std::size_t devices = 0;
};

// differential: 2mn * layers * components; decomposed: (mk + kn) * layers *
// components with k = min(m, n) by default.
ResourceReport device_count(std::size_t m, std::size_t n, std::optional<std::size_t> k,
                            std::size_t layers, MappingMethod method, std::size_t components = 1);

// Decomposed count for a complex matrix with each part at its numerical rank.
std::size_t rank_based_devices(const CMatrix& w, std::size_t layers = 1);

struct AccountingRow {
  std::string workload;
  std::string shape;
  std::optional<std::size_t> differential;
  std::optional<std::size_t> decomposed;
  std::string note;
  // Published hardware figures, reported as given and never recomputed.
  std::string literature_devices_differential;
  std::string literature_devices_decomposed;
  std::string literature_area_differential;
  std::string literature_area_decomposed;
  std::string literature_energy_differential;
  std::string literature_energy_decomposed;

  std::optional<double> ratio() const;
};

using Shape = std::pair<std::size_t, std::size_t>;
std::vector<AccountingRow> accounting_table(const std::vector<Shape>& generic_shapes = {
                                                {64, 64}, {128, 64}, {500, 500}});
void write_accounting_csv(std::ostream& out, const std::vector<AccountingRow>& rows);

// Experiments: each writes CSVs and manifest.txt into out_dir.
const std::vector<std::string>& experiment_names();
// Effective configuration (defaults merged with overrides) as canonical JSON.
std::string experiment_config(std::string_view name, std::string_view overrides_json = "{}");
std::uint64_t config_hash(std::string_view canonical_json);

struct ExperimentOptions {
  std::optional<std::uint64_t> seed;  // replaces the config's seed
  std::size_t threads = 1;
  std::function<void(std::string_view)> log;
};

struct ExperimentOutput {
  std::string name;
  std::string config;  // canonical effective JSON
  std::uint64_t hash = 0;
  std::vector<std::string> files;  // relative to out_dir, manifest excluded
};

ExperimentOutput run_experiment(std::string_view name, std::string_view overrides_json,
                                const std::string& out_dir, const ExperimentOptions& options = {});

}  // namespace faultfree

#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "faultfree/harness.hpp"
#include "faultfree/types.hpp"

namespace {

using nlohmann::json;

struct Globals {
  std::optional<std::uint64_t> seed;
  std::string config;
  std::string out;
  std::size_t threads = 1;
};

json load_overrides(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw faultfree::ConfigError("cannot read config '" + path + "'");
  try {
    json j = json::parse(in);
    if (!j.is_object()) throw faultfree::ConfigError(path + ": expected a JSON object");
    return j;
  } catch (const json::exception& e) {
    throw faultfree::ConfigError(path + ": " + e.what());
  }
}

// Sets a nested key such as "plan.n_layers" in the overrides.
template <class T>
void set(json& j, const std::string& dotted, const T& value) {
  json* node = &j;
  std::stringstream ss(dotted);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    json& child = (*node)[parts[i]];
    if (child.is_null()) child = json::object();
    node = &child;
  }
  (*node)[parts.back()] = value;
}

int run(const std::string& experiment, const json& overrides, const Globals& g) {
  faultfree::ExperimentOptions opts;
  opts.seed = g.seed;
  opts.threads = g.threads;
  opts.log = [](std::string_view msg) { std::cerr << msg << '\n'; };
  const std::string dir = g.out.empty() ? "out/" + experiment : g.out;
  const auto result = faultfree::run_experiment(experiment, overrides.dump(), dir, opts);
  std::cout << "wrote";
  for (const auto& f : result.files) std::cout << ' ' << f;
  std::cout << " manifest.txt to " << dir << '\n';
  return 0;
}

void print_count(std::size_t m, std::size_t n, std::optional<std::size_t> k, std::size_t layers,
                 std::size_t components) {
  using faultfree::MappingMethod;
  const auto d = faultfree::device_count(m, n, std::nullopt, layers, MappingMethod::kDifferential,
                                         components);
  const auto c =
      faultfree::device_count(m, n, k, layers, MappingMethod::kDecomposed, components);
  std::cout << "shape " << m << 'x' << n << ", k " << c.k << ", layers " << layers
            << ", components " << components << '\n'
            << "differential " << d.devices << '\n'
            << "decomposed   " << c.devices << '\n'
            << "ratio        " << static_cast<double>(c.devices) / static_cast<double>(d.devices)
            << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fault-tolerant crossbar matrix representation: sweeps, accounting and experiments"};
  app.set_version_flag("--version", std::string(faultfree::version()));
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  std::uint64_t seed_value = 0;
  auto* seed_opt = app.add_option("--seed", seed_value, "Base seed (replaces the config's seed)");
  app.add_option("--config", g.config, "JSON file with configuration overrides");
  app.add_option("--out", g.out, "Output directory (default out/<experiment>)");
  app.add_option("--threads", g.threads, "Worker threads")->check(CLI::PositiveNumber);

  json overrides;
  std::string experiment;
  std::function<void()> action;

  // sweep / stuck-on-sweep
  std::string target;
  std::vector<double> rates;
  std::vector<std::size_t> ks;
  std::size_t trials = 0;
  std::optional<double> on_weight;
  auto add_sweep = [&](const std::string& name, const std::string& fault, const std::string& help) {
    auto* s = app.add_subcommand(name, help);
    s->add_option("--target", target, "dft<N>-real|dft<N>-imag|random:<m>x<n>|<csv file>");
    s->add_option("--rates", rates, "Fault rates")->delimiter(',');
    s->add_option("--ks", ks, "Inner dimensions")->delimiter(',');
    s->add_option("--trials", trials, "Trials per cell");
    if (fault == "on") s->add_option("--on-weight", on_weight, "Stuck-ON value in weight units");
    s->callback([&, fault] {
      experiment = "fig2-sweep";
      action = [&, fault] {
        set(overrides, "fault", fault);
        if (!target.empty()) set(overrides, "target", target);
        if (!rates.empty()) set(overrides, "rates", rates);
        if (!ks.empty()) set(overrides, "ks", ks);
        if (trials) set(overrides, "trials", trials);
        if (on_weight) set(overrides, "on_weight", *on_weight);
      };
    });
  };
  add_sweep("sweep", "off", "Stuck-at-OFF rate x k similarity sweep");
  add_sweep("stuck-on-sweep", "on", "Stuck-at-ON rate x k similarity sweep");

  std::size_t k = 0, layers = 0, runs = 0;
  std::optional<double> fault_rate;
  auto* precision = app.add_subcommand("precision", "Compensation-layer precision on a faulty chip");
  precision->add_option("--target", target, "Target matrix");
  precision->add_option("--k", k, "Inner dimension");
  precision->add_option("--layers", layers, "Total layers (1 + compensation layers)");
  precision->add_option("--runs", runs, "Simulated chips");
  precision->add_option("--fault-rate", fault_rate, "Stuck-at-OFF rate");
  precision->callback([&] {
    experiment = "fig3-precision";
    action = [&] {
      if (!target.empty()) set(overrides, "target", target);
      if (k) set(overrides, "k", k);
      if (layers) set(overrides, "plan.n_layers", layers);
      if (runs) set(overrides, "runs", runs);
      if (fault_rate) set(overrides, "fault_rate", *fault_rate);
    };
  });

  std::string image;
  auto* dft = app.add_subcommand("dft-image", "Tiled 2D DFT reconstruction on simulated hardware");
  dft->add_option("--image", image, "Binary PGM input (default: generated test image)");
  dft->add_option("--k", k, "Inner dimension of the decomposed DFT");
  dft->add_option("--layers", layers, "Total layers (1 + compensation layers)");
  dft->add_option("--runs", runs, "Simulated chips");
  dft->add_option("--fault-rate", fault_rate, "Stuck-at-OFF rate");
  dft->callback([&] {
    experiment = "fig4-dft-image";
    action = [&] {
      if (!image.empty()) set(overrides, "image", image);
      if (k) set(overrides, "k", k);
      if (layers) set(overrides, "plan.n_layers", layers);
      if (runs) set(overrides, "runs", runs);
      if (fault_rate) set(overrides, "fault_rate", *fault_rate);
    };
  });

  std::optional<double> snr_db;
  std::size_t bits = 0;
  std::vector<std::string> receivers;
  auto* baseband = app.add_subcommand("baseband", "MIMO-OFDM link with in-memory receivers");
  baseband->add_option("--snr-db", snr_db, "Per-subcarrier SNR in dB");
  baseband->add_option("--bits", bits, "Payload bits per run");
  baseband->add_option("--runs", runs, "Seeded runs");
  baseband->add_option("--receivers", receivers, "digital,decomposed,direct-faulty")->delimiter(',');
  baseband->add_option("--fault-rate", fault_rate, "Stuck-at-OFF rate of the receiver chip");
  baseband->callback([&] {
    experiment = "fig5-baseband";
    action = [&] {
      if (snr_db) set(overrides, "link.snr_db", *snr_db);
      if (bits) set(overrides, "n_bits", bits);
      if (runs) set(overrides, "runs", runs);
      if (!receivers.empty()) set(overrides, "receivers", receivers);
      if (fault_rate) set(overrides, "chip.fault_rate", *fault_rate);
    };
  });

  std::size_t m = 0, n = 0, components = 1;
  bool table = false;
  auto* count = app.add_subcommand("count", "Device counts, differential pairs vs decomposition");
  count->add_option("--m", m, "Rows");
  count->add_option("--n", n, "Columns");
  count->add_option("--k", k, "Inner dimension (default min(m, n))");
  count->add_option("--layers", layers, "Total layers (default 1)");
  count->add_option("--components", components, "Matrix components, e.g. 2 for complex");
  count->add_flag("--table", table, "Print the workload accounting table");
  count->callback([&] {
    action = [&] {
      if (m || n) {
        if (!m || !n) throw faultfree::ConfigError("count: --m and --n go together");
        print_count(m, n, k ? std::optional<std::size_t>(k) : std::nullopt, layers ? layers : 1,
                    components);
      }
      if (table || (!m && !n)) {
        if (!g.out.empty()) experiment = "table1-accounting";
        else faultfree::write_accounting_csv(std::cout, faultfree::accounting_table());
      }
    };
  });

  std::string name;
  bool print_config = false;
  auto* exp = app.add_subcommand("experiment", "Run a named experiment");
  exp->add_option("name", name, "Experiment name")
      ->required()
      ->check(CLI::IsMember(faultfree::experiment_names()));
  exp->add_flag("--print-config", print_config, "Print the effective configuration and exit");
  exp->callback([&] {
    action = [&] {
      if (print_config) {
        std::cout << json::parse(faultfree::experiment_config(name, overrides.dump())).dump(2)
                  << '\n';
        return;
      }
      experiment = name;
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }
  if (seed_opt->count() > 0) g.seed = seed_value;

  try {
    overrides = load_overrides(g.config);
    if (action) action();
    if (experiment.empty()) return 0;
    return run(experiment, overrides, g);
  } catch (const faultfree::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const faultfree::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}

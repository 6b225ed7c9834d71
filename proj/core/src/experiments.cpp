#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "config_parse.hpp"
#include "faultfree/analog_exec.hpp"
#include "faultfree/baseband_sim.hpp"
#include "faultfree/comp_program.hpp"
#include "faultfree/dft_pipeline.hpp"
#include "faultfree/harness.hpp"
#include "faultfree/rng.hpp"
#include "json_util.hpp"

namespace faultfree {

using nlohmann::json;

namespace {

json as_json(const std::string& text) { return json::parse(text); }

std::uint64_t run_seed(std::uint64_t seed, std::size_t run) { return mix_seed(seed, run); }

double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

// Population standard deviation of the entries.
double entry_std(const Matrix& e) {
  const double mean = e.mean();
  return std::sqrt((e.array() - mean).square().mean());
}

double r_squared(const Matrix& expected, const Matrix& computed) {
  const double mean = expected.mean();
  const double ss_tot = (expected.array() - mean).square().sum();
  const double ss_res = (expected - computed).squaredNorm();
  return ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : std::numeric_limits<double>::quiet_NaN();
}

Matrix uniform_inputs(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Rng rng(seed);
  Matrix x(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index r = 0; r < x.rows(); ++r)
    for (Eigen::Index c = 0; c < x.cols(); ++c) x(r, c) = 2.0 * rng.uniform() - 1.0;
  return x;
}

std::vector<std::uint64_t> run_seeds(std::uint64_t seed, std::size_t runs) {
  std::vector<std::uint64_t> s(runs);
  for (std::size_t i = 0; i < runs; ++i) s[i] = run_seed(seed, i);
  return s;
}

class Bundle {
 public:
  Bundle(std::string dir, std::string name) : dir_(std::move(dir)), name_(std::move(name)) {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (ec) throw ConfigError("output directory '" + dir_ + "': " + ec.message());
  }

  void csv(const std::string& file, const std::function<void(std::ostream&)>& body) {
    std::ostringstream s;
    s.precision(17);
    body(s);
    raw(file, s.str());
  }

  void raw(const std::string& file, const std::string& content) {
    const auto path = std::filesystem::path(dir_) / file;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write '" + path.string() + "'");
    out << content;
    files_.push_back(file);
  }

  void pgm(const std::string& file, const GrayImage& image) {
    write_pgm((std::filesystem::path(dir_) / file).string(), image);
    files_.push_back(file);
  }

  void note(std::string line) { notes_.push_back(std::move(line)); }

  std::vector<std::uint64_t> finish_seeds;  // per-run seeds listed in the manifest

  ExperimentOutput finish(const std::string& config, std::uint64_t seed,
                          const std::vector<std::uint64_t>& seeds) {
    ExperimentOutput out;
    out.name = name_;
    out.config = config;
    out.hash = config_hash(config);
    out.files = files_;
    char hash[17];
    std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(out.hash));
    std::ostringstream m;
    m << "experiment: " << name_ << '\n'
      << "version: " << version() << '\n'
      << "config_hash: fnv1a64:" << hash << '\n'
      << "seed: " << seed << '\n'
      << "run_seeds:";
    for (auto s : seeds) m << ' ' << s;
    m << '\n' << "files:";
    for (const auto& f : files_) m << ' ' << f;
    m << '\n';
    for (const auto& n : notes_) m << "note: " << n << '\n';
    m << "config: " << config << '\n';
    const auto path = std::filesystem::path(dir_) / "manifest.txt";
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot write '" + path.string() + "'");
    f << m.str();
    return out;
  }

 private:
  std::string dir_;
  std::string name_;
  std::vector<std::string> files_;
  std::vector<std::string> notes_;
};

// ---- fig2-sweep ----

struct SweepExperiment {
  SweepConfig sweep;
  FaultClass fault = FaultClass::kStuckOff;
  bool baseline = true;

  SweepExperiment() { sweep.trials = 10; }

  void parse(const json& j) {
    detail::Fields f(j, "");
    detail::read_sweep_fields(f, sweep);
    std::string fault_name = fault == FaultClass::kStuckOff ? "off" : "on";
    f.read("fault", fault_name);
    if (fault_name == "off") fault = FaultClass::kStuckOff;
    else if (fault_name == "on") fault = FaultClass::kStuckOn;
    else throw ConfigError(f.key_path("fault") + ": expected \"off\" or \"on\"");
    f.read("baseline", baseline);
    f.finish();
    sweep.validate();
  }

  json to_json() const {
    json j = as_json(sweep.to_json());
    j.erase("threads");
    j.erase("output");
    j["fault"] = fault == FaultClass::kStuckOff ? "off" : "on";
    j["baseline"] = baseline;
    return j;
  }

  void run(Bundle& b, const ExperimentOptions& o) const {
    SweepConfig c = sweep;
    c.threads = o.threads;
    const SweepResult r = run_sweep(c, fault);
    b.csv("sweep.csv", [&](std::ostream& s) { r.write_cells_csv(s); });
    b.csv("trials.csv", [&](std::ostream& s) { r.write_trials_csv(s); });
    if (baseline) {
      const auto cells = differential_baseline(make_target(c.target, c.seed), c.rates, c.trials,
                                               c.seed, fault, o.threads);
      b.csv("baseline.csv", [&](std::ostream& s) { write_baseline_csv(s, cells); });
    }
    b.note("trial seeds derive from (seed, k, trial) and are shared across rates");
    b.note("default grid is a downscaled stand-in (8 rates x 4 k, 10 trials); set trials to 50 "
           "for the full grid");
  }
};

// ---- fig3-precision ----

struct PrecisionExperiment {
  std::string target = "dft32-real";
  std::size_t k = 17;
  std::size_t runs = 10;
  std::uint64_t seed = 1;
  double fault_rate = 0.05;
  double on_rate = 0.0;
  CrossbarSpec device;
  // Margin of 3 sigma; a ladder of 5 leaves each correction layer room for
  // twice the margin (margin plus the worst write error).
  ProgramPlan plan = [] {
    ProgramPlan p = ProgramPlan::for_device(CrossbarSpec{}, 3);
    p.threshold_ratio = 5.0;
    return p;
  }();
  OptimizerConfig optimizer;
  std::size_t inputs = 256;
  bool baseline = true;

  void parse(const json& j) {
    detail::Fields f(j, "");
    f.read("target", target);
    f.read("k", k);
    f.read("runs", runs);
    f.read("seed", seed);
    f.read("fault_rate", fault_rate);
    f.read("on_rate", on_rate);
    if (const json* d = f.child("device")) device = detail::parse_crossbar(*d, "device", device);
    if (const json* p = f.child("plan")) plan = detail::parse_plan(*p, "plan", plan);
    if (const json* p = f.child("optimizer"))
      optimizer = detail::parse_optimizer(*p, "optimizer", optimizer);
    f.read("inputs", inputs);
    f.read("baseline", baseline);
    f.finish();
    if (k < 1) throw ConfigError("k: must be >= 1");
    if (runs < 1) throw ConfigError("runs: must be >= 1");
    if (inputs < 2) throw ConfigError("inputs: must be >= 2");
    if (!(fault_rate >= 0.0 && on_rate >= 0.0 && fault_rate + on_rate <= 1.0))
      throw ConfigError("fault_rate: rates must be non-negative with a sum <= 1");
  }

  json to_json() const {
    return json{{"target", target},
                {"k", k},
                {"runs", runs},
                {"seed", seed},
                {"fault_rate", fault_rate},
                {"on_rate", on_rate},
                {"device", as_json(device.to_json())},
                {"plan", as_json(plan.to_json())},
                {"optimizer", as_json(optimizer.to_json())},
                {"inputs", inputs},
                {"baseline", baseline}};
  }

  struct Row {
    std::string method;
    std::size_t layers = 0;
    std::size_t devices = 0;
    double error_std = 0.0;
    double relative_error = 0.0;
    double similarity = 0.0;
    double r2 = 0.0;
  };

  struct Run {
    std::vector<Row> rows;
    ProgramReport report;
  };

  Run one(const Matrix& t, std::uint64_t rs) const {
    const Rng rng(rs);
    const auto m = static_cast<std::size_t>(t.rows());
    const auto n = static_cast<std::size_t>(t.cols());
    const Matrix x = uniform_inputs(inputs, m, rng.split("inputs").seed());
    const Matrix expected = x * t;
    Run out;
    auto add = [&](const std::string& method, std::size_t layers, std::size_t devices,
                   const Matrix& eff, const Matrix& computed) {
      Row r;
      r.method = method;
      r.layers = layers;
      r.devices = devices;
      r.error_std = entry_std(eff - t);
      r.relative_error = (eff - t).norm() / t.norm();
      r.similarity = cosine_similarity(eff, t);
      r.r2 = r_squared(expected, computed);
      out.rows.push_back(r);
    };

    // One stack per layer count on the same chip, so every configuration
    // ends with a final layer programmed without the margin.
    const ChipLayout chip = ChipLayout::simulate(device, m, k, n, plan.n_layers, fault_rate,
                                                 on_rate, rng.split("faults").seed());
    OptimizerConfig opt = optimizer;
    opt.seed = rng.split("optimizer").seed();
    for (std::size_t l = 1; l <= plan.n_layers; ++l) {
      ProgramPlan pl = plan;
      pl.n_layers = l;
      ProgrammedPair p = program_stack(t, k, pl, chip, opt, rng.split("program").seed());
      const RealEngine e = RealEngine::decomposed(std::move(p.a), std::move(p.b));
      add("decomposed", l, e.device_count(), e.effective(), e.apply_rows(x));
      if (l == plan.n_layers) out.report = p.report;
    }
    if (baseline) {
      const auto faults = DifferentialFaults::simulate(device, m, n, plan.n_layers, fault_rate,
                                                       on_rate, rng.split("diff_faults").seed());
      for (std::size_t l = 1; l <= plan.n_layers; ++l) {
        ProgramPlan pl = plan;
        pl.n_layers = l;
        const RealEngine e = RealEngine::differential(
            program_differential_stack(t, device, pl, faults, rng.split("diff_program").seed()));
        add("differential", l, e.device_count(), e.effective(), e.apply_rows(x));
      }
    }
    return out;
  }

  void run(Bundle& b, const ExperimentOptions& o) const {
    const Matrix t = make_target(target, seed);
    const auto seeds = run_seeds(seed, runs);
    std::vector<Run> results(runs);
    parallel_for(runs, o.threads, [&](std::size_t i) { results[i] = one(t, seeds[i]); });

    b.csv("precision.csv", [&](std::ostream& s) {
      s << "run,seed,method,layers,compensation_layers,devices,error_std,relative_error,"
           "similarity,r2\n";
      for (std::size_t i = 0; i < runs; ++i)
        for (const Row& r : results[i].rows)
          s << i << ',' << seeds[i] << ',' << r.method << ',' << r.layers << ',' << r.layers - 1
            << ',' << r.devices << ',' << r.error_std << ',' << r.relative_error << ','
            << r.similarity << ',' << r.r2 << '\n';
    });
    b.csv("program_report.csv", [&](std::ostream& s) {
      s << "run,";
      std::ostringstream head;
      ProgramReport{}.write_csv(head);
      s << head.str();
      for (std::size_t i = 0; i < runs; ++i) {
        std::ostringstream body;
        body.precision(17);
        results[i].report.write_csv(body);
        std::istringstream lines(body.str());
        std::string line;
        std::getline(lines, line);  // header
        while (std::getline(lines, line)) s << i << ',' << line << '\n';
      }
    });
    b.csv("summary.csv", [&](std::ostream& s) {
      s << "method,layers,runs,median_error_std,median_relative_error,median_r2,"
           "runs_strictly_decreasing\n";
      for (const std::string method : {"decomposed", "differential"}) {
        if (method == "differential" && !baseline) continue;
        std::size_t decreasing = 0;
        for (const Run& r : results) {
          bool ok = true;
          double prev = std::numeric_limits<double>::infinity();
          for (const Row& row : r.rows)
            if (row.method == method) {
              ok = ok && row.error_std < prev;
              prev = row.error_std;
            }
          decreasing += ok ? 1 : 0;
        }
        for (std::size_t l = 1; l <= plan.n_layers; ++l) {
          std::vector<double> es, re, r2;
          for (const Run& r : results)
            for (const Row& row : r.rows)
              if (row.method == method && row.layers == l) {
                es.push_back(row.error_std);
                re.push_back(row.relative_error);
                r2.push_back(row.r2);
              }
          s << method << ',' << l << ',' << runs << ',' << median(es) << ',' << median(re) << ','
            << median(r2) << ',' << decreasing << '\n';
        }
      }
    });
    b.finish_seeds = seeds;
  }
};

// ---- fig4-dft-image ----

struct ImageExperiment {
  std::string image;  // PGM path; empty selects the generated test image
  std::size_t width = 256;
  std::size_t height = 256;
  std::size_t tile = 32;
  std::size_t k = 32;
  std::size_t runs = 5;
  std::uint64_t seed = 1;
  double fault_rate = 0.05;
  CrossbarSpec device;
  ProgramPlan plan = [] {
    ProgramPlan p;
    p.delta_g = 0.0;
    p.threshold_ratio = 20.0;
    p.n_layers = 2;
    return p;
  }();
  OptimizerConfig optimizer;
  bool write_images = true;

  void parse(const json& j) {
    detail::Fields f(j, "");
    f.read("image", image);
    f.read("width", width);
    f.read("height", height);
    f.read("tile", tile);
    f.read("k", k);
    f.read("runs", runs);
    f.read("seed", seed);
    f.read("fault_rate", fault_rate);
    if (const json* d = f.child("device")) device = detail::parse_crossbar(*d, "device", device);
    if (const json* p = f.child("plan")) plan = detail::parse_plan(*p, "plan", plan);
    if (const json* p = f.child("optimizer"))
      optimizer = detail::parse_optimizer(*p, "optimizer", optimizer);
    f.read("write_images", write_images);
    f.finish();
    if (tile < 1 || k < 1 || runs < 1) throw ConfigError("tile, k and runs must be >= 1");
    if (image.empty() && (width < 1 || height < 1)) throw ConfigError("width: must be >= 1");
    if (!(fault_rate >= 0.0 && fault_rate <= 1.0)) throw ConfigError("fault_rate: must be in [0, 1]");
  }

  json to_json() const {
    return json{{"image", image},
                {"width", width},
                {"height", height},
                {"tile", tile},
                {"k", k},
                {"runs", runs},
                {"seed", seed},
                {"fault_rate", fault_rate},
                {"device", as_json(device.to_json())},
                {"plan", as_json(plan.to_json())},
                {"optimizer", as_json(optimizer.to_json())},
                {"write_images", write_images}};
  }

  struct Row {
    std::string method;
    double snr = 0.0;
    std::size_t devices = 0;
    double sim_real = 1.0;
    double sim_imag = 1.0;
    Matrix pixels;
  };

  void run(Bundle& b, const ExperimentOptions& o) const {
    const GrayImage img = image.empty() ? make_test_image(width, height, seed) : read_pgm(image);
    const CMatrix w = dft_matrix(tile);
    ReceiverChip chip;
    chip.device = device;
    chip.fault_rate = fault_rate;
    chip.plan = plan;
    chip.dft_optimizer = optimizer;
    chip.dft_k = k;
    const auto seeds = run_seeds(seed, runs);
    const std::vector<std::pair<std::string, ReceiverKind>> methods = {
        {"ideal", ReceiverKind::kDigital},
        {"proposed", ReceiverKind::kDecomposed},
        {"traditional", ReceiverKind::kDirectFaulty}};
    std::vector<Row> rows(runs * methods.size());
    parallel_for(rows.size(), o.threads, [&](std::size_t idx) {
      const std::size_t run = idx / methods.size();
      const auto& [name, kind] = methods[idx % methods.size()];
      const ComplexEngine engine =
          build_dft_engine(kind, tile, chip, Rng(seeds[run]).split(name).seed());
      Row& r = rows[idx];
      r.method = name;
      r.pixels = reconstruct_pixels(forward_tiles(img, engine, 1));
      r.snr = snr_db(img.pixels, r.pixels);
      r.devices = kind == ReceiverKind::kDigital ? 0 : engine.device_count();
      r.sim_real = cosine_similarity(engine.real_engine().effective(), w.real());
      r.sim_imag = cosine_similarity(engine.imag_engine().effective(), w.imag());
    });

    b.csv("snr.csv", [&](std::ostream& s) {
      s << "run,seed,method,snr_db,devices,similarity_real,similarity_imag\n";
      for (std::size_t i = 0; i < rows.size(); ++i) {
        const Row& r = rows[i];
        const std::size_t run = i / methods.size();
        s << run << ',' << seeds[run] << ',' << r.method << ',' << r.snr << ',' << r.devices << ','
          << r.sim_real << ',' << r.sim_imag << '\n';
      }
    });
    b.csv("summary.csv", [&](std::ostream& s) {
      s << "method,runs,median_snr_db,min_snr_db,max_snr_db\n";
      for (const auto& [name, kind] : methods) {
        std::vector<double> v;
        for (const Row& r : rows)
          if (r.method == name) v.push_back(r.snr);
        s << name << ',' << runs << ',' << median(v) << ',' << *std::min_element(v.begin(), v.end())
          << ',' << *std::max_element(v.begin(), v.end()) << '\n';
      }
    });
    if (write_images) {
      b.pgm("reference.pgm", img);
      for (std::size_t i = 0; i < methods.size(); ++i)
        b.pgm(rows[i].method + ".pgm", GrayImage::from_matrix(rows[i].pixels));
    }
    b.finish_seeds = seeds;
  }
};

// ---- fig5-baseband ----

struct BasebandExperiment {
  LinkSpec link = [] {
    LinkSpec s;
    s.noise_power = noise_power_for_snr(kDefaultSnrDb, s.n_c);
    return s;
  }();
  ChannelSpec channel;
  ReceiverChip chip = ReceiverChip::defaults();
  std::size_t n_bits = 1000000;
  std::size_t runs = 5;
  std::uint64_t seed = 1;
  std::vector<std::string> receivers = {"digital", "decomposed", "direct-faulty"};
  std::size_t constellation_points = 2048;

  static constexpr double kDefaultSnrDb = 30.0;

  void parse(const json& j) {
    detail::Fields f(j, "");
    if (const json* l = f.child("link")) link = detail::parse_link(*l, "link", link);
    if (const json* c = f.child("channel")) channel = detail::parse_channel(*c, "channel", channel);
    if (const json* c = f.child("chip")) chip = detail::parse_chip(*c, "chip", chip);
    f.read("n_bits", n_bits);
    f.read("runs", runs);
    f.read("seed", seed);
    f.read("receivers", receivers);
    f.read("constellation_points", constellation_points);
    f.finish();
    if (n_bits < 1 || runs < 1) throw ConfigError("n_bits and runs must be >= 1");
    if (receivers.empty()) throw ConfigError("receivers: must not be empty");
    for (const auto& r : receivers) receiver_from_string(r);
  }

  json to_json() const {
    return json{{"link", as_json(link.to_json())},
                {"channel", json{{"taps", channel.taps}, {"decay", channel.decay}}},
                {"chip", as_json(chip.to_json())},
                {"n_bits", n_bits},
                {"runs", runs},
                {"seed", seed},
                {"receivers", receivers},
                {"constellation_points", constellation_points}};
  }

  void run(Bundle& b, const ExperimentOptions& o) const {
    const auto seeds = run_seeds(seed, runs);
    std::vector<LinkResult> results(runs * receivers.size());
    parallel_for(results.size(), o.threads, [&](std::size_t idx) {
      const std::size_t run = idx / receivers.size();
      const ReceiverKind kind = receiver_from_string(receivers[idx % receivers.size()]);
      results[idx] = run_link(link, channel, kind, chip, n_bits, seeds[run],
                              run == 0 ? constellation_points : 0);
    });
    b.csv("ber.csv", [&](std::ostream& s) {
      s << "run,seed,receiver,n_bits,bit_errors,ber,evm,evm_snr_db,dft_similarity,"
           "mmse_similarity,frames\n";
      for (std::size_t i = 0; i < results.size(); ++i) {
        const LinkResult& r = results[i];
        const std::size_t run = i / receivers.size();
        s << run << ',' << seeds[run] << ',' << to_string(r.kind) << ',' << r.n_bits << ','
          << r.bit_errors << ',' << r.ber << ',' << r.evm << ',' << r.evm_snr_db << ','
          << r.dft_similarity << ',' << r.mmse_similarity << ',' << r.frames << '\n';
      }
    });
    b.csv("summary.csv", [&](std::ostream& s) {
      s << "receiver,runs,median_ber,median_evm_snr_db\n";
      for (std::size_t k = 0; k < receivers.size(); ++k) {
        std::vector<double> ber, evm;
        for (std::size_t run = 0; run < runs; ++run) {
          ber.push_back(results[run * receivers.size() + k].ber);
          evm.push_back(results[run * receivers.size() + k].evm_snr_db);
        }
        s << receivers[k] << ',' << runs << ',' << median(ber) << ',' << median(evm) << '\n';
      }
    });
    for (std::size_t k = 0; k < receivers.size(); ++k)
      b.csv("constellation_" + receivers[k] + ".csv", [&](std::ostream& s) {
        LinkResult::write_constellation_csv(s, results[k].constellation);
      });
    b.note("link noise is set per subcarrier before equalization; evm_snr_db is measured after it");
    b.note("mmse_similarity is the worst feedback array of the run, dft_similarity covers both "
           "DFT parts");
    b.finish_seeds = seeds;
  }
};

// ---- table1-accounting ----

struct AccountingExperiment {
  std::vector<Shape> shapes = {{64, 64}, {128, 64}, {500, 500}};

  void parse(const json& j) {
    detail::Fields f(j, "");
    f.read("generic_shapes", shapes);
    f.finish();
    for (const auto& [m, n] : shapes)
      if (m < 1 || n < 1) throw ConfigError("generic_shapes: dimensions must be >= 1");
  }

  json to_json() const { return json{{"generic_shapes", shapes}}; }

  void run(Bundle& b, const ExperimentOptions&) const {
    const auto rows = accounting_table(shapes);
    b.csv("accounting.csv", [&](std::ostream& s) { write_accounting_csv(s, rows); });
    b.note("literature_* columns are published hardware figures, copied verbatim and not computed");
  }
};

template <class E>
E load(const json& overrides) {
  E e;
  e.parse(overrides);
  return e;
}

json parse_overrides(std::string_view text) {
  const json j = detail::parse_json(text.empty() ? std::string_view("{}") : text, "config");
  if (!j.is_object()) throw ConfigError("config: expected a JSON object");
  return j;
}

}  // namespace

const std::vector<std::string>& experiment_names() {
  static const std::vector<std::string> names = {"fig2-sweep", "fig3-precision", "fig4-dft-image",
                                                 "fig5-baseband", "table1-accounting"};
  return names;
}

std::uint64_t config_hash(std::string_view canonical_json) { return fnv1a64(canonical_json); }

namespace {

template <class E>
json effective(const json& overrides, std::optional<std::uint64_t> seed) {
  E e = load<E>(overrides);
  if constexpr (requires { e.seed; }) {
    if (seed) e.seed = *seed;
  }
  if constexpr (requires { e.sweep.seed; }) {
    if (seed) e.sweep.seed = *seed;
  }
  return e.to_json();
}

json effective_config(std::string_view name, const json& overrides,
                      std::optional<std::uint64_t> seed) {
  if (name == "fig2-sweep") return effective<SweepExperiment>(overrides, seed);
  if (name == "fig3-precision") return effective<PrecisionExperiment>(overrides, seed);
  if (name == "fig4-dft-image") return effective<ImageExperiment>(overrides, seed);
  if (name == "fig5-baseband") return effective<BasebandExperiment>(overrides, seed);
  if (name == "table1-accounting") return effective<AccountingExperiment>(overrides, seed);
  throw ConfigError("unknown experiment '" + std::string(name) + "'");
}

}  // namespace

std::string experiment_config(std::string_view name, std::string_view overrides_json) {
  return effective_config(name, parse_overrides(overrides_json), std::nullopt).dump();
}

ExperimentOutput run_experiment(std::string_view name, std::string_view overrides_json,
                                const std::string& out_dir, const ExperimentOptions& options) {
  // Reparse the canonical form so the run sees exactly what the manifest records.
  const json config = effective_config(name, parse_overrides(overrides_json), options.seed);
  const std::string canonical = config.dump();
  Bundle bundle(out_dir, std::string(name));
  if (options.log) options.log("running " + std::string(name));
  auto go = [&](auto experiment) {
    experiment.run(bundle, options);
    std::uint64_t seed = 0;
    if constexpr (requires { experiment.seed; }) seed = experiment.seed;
    if constexpr (requires { experiment.sweep.seed; }) seed = experiment.sweep.seed;
    return bundle.finish(canonical, seed, bundle.finish_seeds);
  };
  if (name == "fig2-sweep") return go(load<SweepExperiment>(config));
  if (name == "fig3-precision") return go(load<PrecisionExperiment>(config));
  if (name == "fig4-dft-image") return go(load<ImageExperiment>(config));
  if (name == "fig5-baseband") return go(load<BasebandExperiment>(config));
  return go(load<AccountingExperiment>(config));
}

}  // namespace faultfree

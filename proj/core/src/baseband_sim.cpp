#include "faultfree/baseband_sim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <ostream>

#include <json.hpp>

#include "config_parse.hpp"
#include "faultfree/rng.hpp"
#include "json_util.hpp"

namespace faultfree {

using nlohmann::json;

namespace {

int axis_bits(int order) { return bits_per_symbol(order) / 2; }

double qam_norm(int order) { return std::sqrt(2.0 * (order - 1) / 3.0); }

std::size_t inverse_gray(std::size_t g) {
  std::size_t b = g;
  for (std::size_t s = g >> 1; s; s >>= 1) b ^= s;
  return b;
}

Complex random_qpsk(Rng& rng) {
  const double a = std::sqrt(0.5);
  return {rng.coin() ? a : -a, rng.coin() ? a : -a};
}

}  // namespace

std::vector<std::size_t> LinkSpec::default_used_subcarriers(std::size_t n_c) {
  std::vector<std::size_t> used;
  if (n_c < 2) return used;
  const std::size_t keep = 3 * n_c / 4;
  const std::size_t edge = n_c - 1 - keep;
  const std::size_t lo = n_c / 2 - edge / 2;
  for (std::size_t f = 1; f < n_c; ++f)
    if (f < lo || f >= lo + edge) used.push_back(f);
  return used;
}

void LinkSpec::validate() const {
  if (n_t < 1 || n_r < 1) throw ConfigError("link: antenna counts must be >= 1");
  if (n_c < 2) throw ConfigError("link: n_c must be >= 2");
  if (used_subcarriers.empty()) throw ConfigError("link: no used subcarriers");
  for (std::size_t f : used_subcarriers)
    if (f >= n_c) throw ConfigError("link: used subcarrier index out of range");
  bits_per_symbol(modulation);
  if (!(noise_power >= 0.0)) throw ConfigError("link: noise_power must be >= 0");
  if (payload_symbols < 1) throw ConfigError("link: payload_symbols must be >= 1");
}

std::size_t LinkSpec::bits_per_frame() const {
  return payload_symbols * used_subcarriers.size() * n_t *
         static_cast<std::size_t>(bits_per_symbol(modulation));
}

std::string LinkSpec::to_json() const {
  json j{{"n_t", n_t},
         {"n_r", n_r},
         {"n_c", n_c},
         {"used_subcarriers", used_subcarriers},
         {"cp_len", cp_len},
         {"modulation", modulation},
         {"noise_power", noise_power},
         {"payload_symbols", payload_symbols}};
  return j.dump(2);
}

LinkSpec LinkSpec::from_json(std::string_view text) {
  return detail::parse_link(detail::parse_json(text, "link"), "");
}

LinkSpec detail::parse_link(const json& j, const std::string& path, LinkSpec s) {
  Fields f(j, path);
  const std::size_t old_c = s.n_c;
  f.read("n_t", s.n_t);
  f.read("n_r", s.n_r);
  f.read("n_c", s.n_c);
  if (s.n_c != old_c) s.used_subcarriers = LinkSpec::default_used_subcarriers(s.n_c);
  f.read("used_subcarriers", s.used_subcarriers);
  f.read("cp_len", s.cp_len);
  f.read("modulation", s.modulation);
  f.read("noise_power", s.noise_power);
  std::optional<double> snr_db;
  f.read_optional("snr_db", snr_db);
  if (snr_db) s.noise_power = noise_power_for_snr(*snr_db, s.n_c);
  f.read("payload_symbols", s.payload_symbols);
  f.finish();
  s.validate();
  return s;
}

double noise_power_for_snr(double snr_db, std::size_t n_c) {
  return 1.0 / (static_cast<double>(n_c) * std::pow(10.0, snr_db / 10.0));
}

int bits_per_symbol(int order) {
  switch (order) {
    case 4: return 2;
    case 16: return 4;
    case 64: return 6;
    case 256: return 8;
    default: throw ConfigError("modulation order must be 4, 16, 64 or 256");
  }
}

CVector modulate(const std::vector<std::uint8_t>& bits, int order) {
  const int b = bits_per_symbol(order);
  if (bits.size() % static_cast<std::size_t>(b) != 0)
    throw ConfigError("modulate: bit count not divisible by bits per symbol");
  const int h = axis_bits(order);
  const auto levels = static_cast<double>(1 << h);
  const double norm = qam_norm(order);
  CVector out(static_cast<Eigen::Index>(bits.size() / static_cast<std::size_t>(b)));
  for (Eigen::Index s = 0; s < out.size(); ++s) {
    std::size_t gi = 0, gq = 0;
    for (int i = 0; i < h; ++i) gi = (gi << 1) | bits[static_cast<std::size_t>(s * b + i)];
    for (int i = 0; i < h; ++i) gq = (gq << 1) | bits[static_cast<std::size_t>(s * b + h + i)];
    const double re = 2.0 * static_cast<double>(inverse_gray(gi)) - (levels - 1.0);
    const double im = 2.0 * static_cast<double>(inverse_gray(gq)) - (levels - 1.0);
    out(s) = Complex(re, im) / norm;
  }
  return out;
}

std::vector<std::uint8_t> demodulate(const CVector& symbols, int order) {
  const int b = bits_per_symbol(order);
  const int h = axis_bits(order);
  const int levels = 1 << h;
  const double norm = qam_norm(order);
  std::vector<std::uint8_t> bits;
  bits.reserve(static_cast<std::size_t>(symbols.size() * b));
  auto slice = [&](double x) {
    const double idx = std::round((x * norm + (levels - 1)) / 2.0);
    const auto i = static_cast<std::size_t>(std::clamp(idx, 0.0, static_cast<double>(levels - 1)));
    return i ^ (i >> 1);
  };
  for (Eigen::Index s = 0; s < symbols.size(); ++s) {
    const std::size_t gi = slice(symbols(s).real()), gq = slice(symbols(s).imag());
    for (int i = h - 1; i >= 0; --i) bits.push_back(static_cast<std::uint8_t>((gi >> i) & 1));
    for (int i = h - 1; i >= 0; --i) bits.push_back(static_cast<std::uint8_t>((gq >> i) & 1));
  }
  return bits;
}

CVector constellation(int order) {
  const int b = bits_per_symbol(order);
  std::vector<std::uint8_t> bits;
  for (int s = 0; s < order; ++s)
    for (int i = b - 1; i >= 0; --i) bits.push_back(static_cast<std::uint8_t>((s >> i) & 1));
  return modulate(bits, order);
}

ChannelModel ChannelModel::identity(std::size_t n_r, std::size_t n_t) {
  ChannelModel m{n_r, n_t, {}};
  m.taps.assign(n_r, std::vector<CVector>(n_t, CVector::Zero(1)));
  for (std::size_t r = 0; r < std::min(n_r, n_t); ++r) m.taps[r][r](0) = 1.0;
  return m;
}

ChannelModel ChannelModel::rayleigh(std::size_t n_r, std::size_t n_t, std::size_t n_taps,
                                    double decay, std::uint64_t seed) {
  if (n_taps < 1) throw ConfigError("channel: at least one tap");
  if (!(decay > 0.0)) throw ConfigError("channel: decay must be > 0");
  std::vector<double> power(n_taps);
  double total = 0.0;
  for (std::size_t l = 0; l < n_taps; ++l) total += power[l] = std::exp(-static_cast<double>(l) / decay);
  Rng rng(seed);
  ChannelModel m{n_r, n_t, {}};
  m.taps.assign(n_r, std::vector<CVector>(n_t, CVector::Zero(static_cast<Eigen::Index>(n_taps))));
  for (std::size_t r = 0; r < n_r; ++r)
    for (std::size_t t = 0; t < n_t; ++t)
      for (std::size_t l = 0; l < n_taps; ++l) {
        const double s = std::sqrt(power[l] / total / 2.0);
        const double re = rng.normal(), im = rng.normal();
        m.taps[r][t](static_cast<Eigen::Index>(l)) = Complex(s * re, s * im);
      }
  return m;
}

std::size_t ChannelModel::max_taps() const {
  std::size_t n = 0;
  for (const auto& row : taps)
    for (const auto& h : row) n = std::max(n, static_cast<std::size_t>(h.size()));
  return n;
}

CMatrix ChannelModel::frequency_response(std::size_t bin, std::size_t n_c) const {
  CMatrix h = CMatrix::Zero(static_cast<Eigen::Index>(n_r), static_cast<Eigen::Index>(n_t));
  for (std::size_t r = 0; r < n_r; ++r)
    for (std::size_t t = 0; t < n_t; ++t) {
      Complex acc = 0.0;
      const CVector& tp = taps[r][t];
      for (Eigen::Index l = 0; l < tp.size(); ++l) {
        const double phase = -2.0 * std::numbers::pi * static_cast<double>((bin * static_cast<std::size_t>(l)) % n_c) /
                             static_cast<double>(n_c);
        acc += tp(l) * std::polar(1.0, phase);
      }
      h(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(t)) = acc;
    }
  return h;
}

std::vector<CMatrix> FrameGrid::ofdm_symbols() const {
  std::vector<CMatrix> out;
  out.push_back(preamble);
  out.insert(out.end(), pilot_grids.begin(), pilot_grids.end());
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

CMatrix default_pilot(std::size_t n_t) {
  // Sylvester Hadamard for powers of two, identity otherwise.
  CMatrix p = CMatrix::Identity(static_cast<Eigen::Index>(n_t), static_cast<Eigen::Index>(n_t));
  if (n_t > 0 && (n_t & (n_t - 1)) == 0) {
    p = CMatrix::Ones(1, 1);
    while (static_cast<std::size_t>(p.rows()) < n_t) {
      const auto k = p.rows();
      CMatrix q(2 * k, 2 * k);
      q << p, p, p, -p;
      p = q;
    }
  }
  return p;
}

FrameGrid build_frame(const LinkSpec& spec, const CVector& payload_symbols, const CMatrix& pilot,
                      std::uint64_t seed) {
  spec.validate();
  const auto nt = static_cast<Eigen::Index>(spec.n_t);
  const auto nc = static_cast<Eigen::Index>(spec.n_c);
  if (pilot.rows() != nt || pilot.cols() != nt) throw ConfigError("frame: pilot must be n_t x n_t");
  if (std::abs(pilot.determinant()) < 1e-12) throw ConfigError("frame: pilot matrix is singular");
  const std::size_t per_symbol = spec.used_subcarriers.size() * spec.n_t;
  if (payload_symbols.size() % static_cast<Eigen::Index>(per_symbol) != 0)
    throw ConfigError("frame: payload does not fill whole OFDM symbols");

  FrameGrid f;
  f.pilot = pilot;
  Rng rng(seed);
  f.preamble = CMatrix::Zero(nt, nc);
  for (std::size_t bin : spec.used_subcarriers)
    for (Eigen::Index a = 0; a < nt; ++a) f.preamble(a, static_cast<Eigen::Index>(bin)) = random_qpsk(rng);
  for (Eigen::Index t = 0; t < nt; ++t) {
    CMatrix g = CMatrix::Zero(nt, nc);
    for (std::size_t bin : spec.used_subcarriers) g.col(static_cast<Eigen::Index>(bin)) = pilot.col(t);
    f.pilot_grids.push_back(std::move(g));
  }
  const std::size_t n_sym = static_cast<std::size_t>(payload_symbols.size()) / per_symbol;
  std::size_t idx = 0;
  for (std::size_t s = 0; s < n_sym; ++s) {
    CMatrix g = CMatrix::Zero(nt, nc);
    for (std::size_t bin : spec.used_subcarriers)
      for (Eigen::Index a = 0; a < nt; ++a)
        g(a, static_cast<Eigen::Index>(bin)) = payload_symbols(static_cast<Eigen::Index>(idx++));
    f.payload.push_back(std::move(g));
  }
  return f;
}

CMatrix transmit(const FrameGrid& frame, const LinkSpec& spec) {
  spec.validate();
  const std::vector<CMatrix> symbols = frame.ofdm_symbols();
  const auto nc = static_cast<Eigen::Index>(spec.n_c);
  const auto cp = static_cast<Eigen::Index>(spec.cp_len);
  const CMatrix winv = dft_matrix(spec.n_c).conjugate() / static_cast<double>(spec.n_c);
  CMatrix out(static_cast<Eigen::Index>(spec.n_t), static_cast<Eigen::Index>(symbols.size()) * (nc + cp));
  for (std::size_t s = 0; s < symbols.size(); ++s) {
    if (symbols[s].rows() != static_cast<Eigen::Index>(spec.n_t) || symbols[s].cols() != nc)
      throw ConfigError("transmit: grid does not conform to the link");
    const CMatrix time = symbols[s] * winv;  // rows are antennas
    const Eigen::Index base = static_cast<Eigen::Index>(s) * (nc + cp);
    out.middleCols(base, cp) = time.rightCols(cp);
    out.middleCols(base + cp, nc) = time;
  }
  return out;
}

CMatrix channel_apply(const CMatrix& streams, const ChannelModel& model, double noise_power,
                      std::uint64_t seed) {
  if (static_cast<std::size_t>(streams.rows()) != model.n_t)
    throw ConfigError("channel: stream count differs from n_t");
  const Eigen::Index len = streams.cols();
  CMatrix out = CMatrix::Zero(static_cast<Eigen::Index>(model.n_r), len);
  for (std::size_t r = 0; r < model.n_r; ++r)
    for (std::size_t t = 0; t < model.n_t; ++t) {
      const CVector& h = model.taps[r][t];
      for (Eigen::Index l = 0; l < h.size(); ++l) {
        if (h(l) == Complex(0.0)) continue;
        out.row(static_cast<Eigen::Index>(r)).tail(len - l) +=
            h(l) * streams.row(static_cast<Eigen::Index>(t)).head(len - l);
      }
    }
  if (noise_power > 0.0) {
    Rng rng(seed);
    const double s = std::sqrt(noise_power / 2.0);
    for (Eigen::Index r = 0; r < out.rows(); ++r)
      for (Eigen::Index i = 0; i < len; ++i) {
        const double re = rng.normal(), im = rng.normal();
        out(r, i) += Complex(s * re, s * im);
      }
  }
  return out;
}

std::vector<CMatrix> ofdm_demod(const CMatrix& streams, const LinkSpec& spec,
                                const ComplexEngine* engine) {
  const auto nc = static_cast<Eigen::Index>(spec.n_c);
  const auto cp = static_cast<Eigen::Index>(spec.cp_len);
  if (streams.cols() % (nc + cp) != 0) throw ConfigError("ofdm_demod: partial OFDM symbol");
  if (engine && engine->size() != spec.n_c) throw ConfigError("ofdm_demod: engine size differs from n_c");
  const Eigen::Index n_sym = streams.cols() / (nc + cp);
  const CMatrix w = engine ? CMatrix() : dft_matrix(spec.n_c);
  std::vector<CMatrix> grids(static_cast<std::size_t>(n_sym), CMatrix(streams.rows(), nc));
  for (Eigen::Index a = 0; a < streams.rows(); ++a) {
    // One row per OFDM symbol, cyclic prefix dropped.
    CMatrix rows(n_sym, nc);
    for (Eigen::Index s = 0; s < n_sym; ++s) rows.row(s) = streams.row(a).segment(s * (nc + cp) + cp, nc);
    const CMatrix spec_rows = engine ? engine->apply_rows(rows) : CMatrix(rows * w);
    for (Eigen::Index s = 0; s < n_sym; ++s) grids[static_cast<std::size_t>(s)].row(a) = spec_rows.row(s);
  }
  return grids;
}

CMatrix estimate_channel(const CMatrix& received_pilots, const CMatrix& pilot) {
  if (pilot.rows() != pilot.cols()) throw ConfigError("estimate_channel: pilot must be square");
  if (received_pilots.cols() != pilot.rows())
    throw ConfigError("estimate_channel: pilot count differs");
  Eigen::FullPivLU<CMatrix> lu(pilot);
  if (!lu.isInvertible()) throw ConfigError("estimate_channel: pilot matrix is singular");
  return received_pilots * lu.inverse();
}

std::vector<CMatrix> estimate_channels(const std::vector<CMatrix>& grids, const FrameGrid& frame,
                                       const LinkSpec& spec) {
  std::vector<CMatrix> out;
  const auto nt = frame.pilot.cols();
  for (std::size_t bin : spec.used_subcarriers) {
    CMatrix r(static_cast<Eigen::Index>(spec.n_r), nt);
    for (Eigen::Index t = 0; t < nt; ++t)
      r.col(t) = grids.at(frame.pilot_offset() + static_cast<std::size_t>(t)).col(static_cast<Eigen::Index>(bin));
    out.push_back(estimate_channel(r, frame.pilot));
  }
  return out;
}

CVector mmse_detect_exact(const CVector& y, const CMatrix& h, double snr) {
  if (!(snr > 0.0)) throw ConfigError("mmse: snr must be > 0");
  CMatrix gram = h.adjoint() * h;
  gram.diagonal().array() += 1.0 / snr;
  return gram.ldlt().solve(h.adjoint() * y);
}

double feedback_alpha(const CMatrix& h) {
  const double peak = complex_to_real_map(h).cwiseAbs().maxCoeff();
  return peak > 0.0 ? 1.0 / peak : 1.0;
}

namespace {

FeedbackCircuitSpec circuit_for(double alpha, double snr, const FeedbackCircuitSpec& base) {
  if (!(snr > 0.0)) throw ConfigError("mmse: snr must be > 0");
  FeedbackCircuitSpec s = base;
  s.alpha = alpha;
  s.g1 = s.g2 = alpha / std::sqrt(snr);
  return s;
}

}  // namespace

CircuitDetector::CircuitDetector(const CMatrix& h, double snr, const RealEngine& g_engine,
                                 double alpha, const FeedbackCircuitSpec& base)
    : alpha_(alpha),
      spec_(circuit_for(alpha, snr, base)),
      solver_(g_engine.effective(), spec_) {
  if (g_engine.rows() != static_cast<std::size_t>(2 * h.cols()) ||
      g_engine.cols() != static_cast<std::size_t>(2 * h.rows()))
    throw ConfigError("circuit detector: engine shape differs from the mapped channel");
}

CVector CircuitDetector::detect(const CVector& y) const {
  return unstack_complex(solver_.solve(alpha_ * stack_complex(y)).v);
}

CMatrix CircuitDetector::detect_many(const CMatrix& ys, std::size_t* iterations) const {
  Matrix currents(ys.cols(), 2 * ys.rows());
  for (Eigen::Index c = 0; c < ys.cols(); ++c) currents.row(c) = alpha_ * stack_complex(ys.col(c));
  const Matrix v = solver_.solve_rows(currents, iterations);
  CMatrix out(v.cols() / 2, v.rows());
  for (Eigen::Index c = 0; c < v.rows(); ++c) out.col(c) = unstack_complex(v.row(c));
  return out;
}

const char* to_string(ReceiverKind kind) {
  switch (kind) {
    case ReceiverKind::kDirectFaulty: return "direct-faulty";
    case ReceiverKind::kDecomposed: return "decomposed";
    default: return "digital";
  }
}

ReceiverKind receiver_from_string(std::string_view name) {
  if (name == "digital") return ReceiverKind::kDigital;
  if (name == "direct-faulty") return ReceiverKind::kDirectFaulty;
  if (name == "decomposed") return ReceiverKind::kDecomposed;
  throw ConfigError("unknown receiver kind '" + std::string(name) + "'");
}

ReceiverChip ReceiverChip::defaults() {
  ReceiverChip c;
  c.plan.delta_g = 0.0;
  c.plan.threshold_ratio = 10.0;
  c.plan.n_layers = 3;
  c.mmse_plan = c.plan;
  c.mmse_optimizer.epochs = 2000;
  return c;
}

std::string ReceiverChip::to_json() const {
  json j;
  j["device"] = json::parse(device.to_json());
  j["fault_rate"] = fault_rate;
  j["plan"] = json::parse(plan.to_json());
  j["mmse_plan"] = json::parse(mmse_plan.to_json());
  j["dft_optimizer"] = json::parse(dft_optimizer.to_json());
  j["mmse_optimizer"] = json::parse(mmse_optimizer.to_json());
  j["dft_k"] = dft_k;
  j["mmse_k"] = mmse_k;
  j["mmse_restarts"] = mmse_restarts;
  return j.dump(2);
}

ReceiverChip ReceiverChip::from_json(std::string_view text) {
  return detail::parse_chip(detail::parse_json(text, "receiver chip"), "", defaults());
}

ReceiverChip detail::parse_chip(const json& j, const std::string& path, ReceiverChip c) {
  Fields f(j, path);
  if (const json* d = f.child("device")) c.device = parse_crossbar(*d, f.key_path("device"), c.device);
  f.read("fault_rate", c.fault_rate);
  if (const json* p = f.child("plan")) c.plan = parse_plan(*p, f.key_path("plan"), c.plan);
  if (const json* p = f.child("mmse_plan"))
    c.mmse_plan = parse_plan(*p, f.key_path("mmse_plan"), c.mmse_plan);
  if (const json* o = f.child("dft_optimizer"))
    c.dft_optimizer = parse_optimizer(*o, f.key_path("dft_optimizer"), c.dft_optimizer);
  if (const json* o = f.child("mmse_optimizer"))
    c.mmse_optimizer = parse_optimizer(*o, f.key_path("mmse_optimizer"), c.mmse_optimizer);
  f.read("dft_k", c.dft_k);
  f.read("mmse_k", c.mmse_k);
  f.read("mmse_restarts", c.mmse_restarts);
  f.finish();
  if (c.mmse_restarts < 1) throw ConfigError(f.key_path("mmse_restarts") + ": must be >= 1");
  if (!(c.fault_rate >= 0.0 && c.fault_rate <= 1.0))
    throw ConfigError(f.key_path("fault_rate") + ": must be in [0, 1]");
  return c;
}

ChannelSpec detail::parse_channel(const json& j, const std::string& path, ChannelSpec c) {
  Fields f(j, path);
  f.read("taps", c.taps);
  f.read("decay", c.decay);
  f.finish();
  if (c.taps < 1) throw ConfigError(f.key_path("taps") + ": must be >= 1");
  if (!(c.decay > 0.0)) throw ConfigError(f.key_path("decay") + ": must be > 0");
  return c;
}

ComplexEngine build_dft_engine(ReceiverKind kind, std::size_t n, const ReceiverChip& chip,
                               std::uint64_t seed) {
  const CMatrix w = dft_matrix(n);
  if (kind == ReceiverKind::kDigital) return ComplexEngine::ideal(w);
  const Rng rng(seed);
  auto part = [&](const Matrix& m, std::uint64_t stream) {
    const Rng r = rng.split(stream);
    if (kind == ReceiverKind::kDirectFaulty) {
      const auto faults = DifferentialFaults::simulate(chip.device, n, n, chip.plan.n_layers,
                                                       chip.fault_rate, 0.0, r.split("faults").seed());
      return RealEngine::differential(
          program_differential_stack(m, chip.device, chip.plan, faults, r.split("program").seed()));
    }
    const ChipLayout layout = ChipLayout::simulate(chip.device, n, chip.dft_k, n, chip.plan.n_layers,
                                                   chip.fault_rate, 0.0, r.split("faults").seed());
    OptimizerConfig opt = chip.dft_optimizer;
    opt.seed = r.split("optimizer").seed();
    ProgrammedPair p = program_stack(m, chip.dft_k, chip.plan, layout, opt, r.split("program").seed());
    return RealEngine::decomposed(std::move(p.a), std::move(p.b));
  };
  return ComplexEngine(part(w.real(), 0), part(w.imag(), 1));
}

void LinkResult::write_constellation_csv(std::ostream& out,
                                         const std::vector<ConstellationPoint>& pts) {
  out << "i,q,ref_i,ref_q,subcarrier,stream\n";
  const auto old = out.precision(10);
  for (const auto& p : pts)
    out << p.i << ',' << p.q << ',' << p.reference.real() << ',' << p.reference.imag() << ','
        << p.subcarrier << ',' << p.stream << '\n';
  out.precision(old);
}

LinkResult run_link(const LinkSpec& spec, const ChannelSpec& channel, ReceiverKind kind,
                    const ReceiverChip& chip, std::size_t n_bits, std::uint64_t seed,
                    std::size_t max_constellation_points) {
  spec.validate();
  if (n_bits < 1) throw ConfigError("run_link: n_bits must be >= 1");
  if (spec.cp_len + 1 < channel.taps) throw ConfigError("run_link: cp_len shorter than the channel");
  const Rng root(seed);
  const Rng hw = root.split("hardware");
  const double snr = spec.noise_power > 0.0 ? spec.bin_snr() : 1e12;
  const std::size_t n_used = spec.used_subcarriers.size();
  const Eigen::Index nt = static_cast<Eigen::Index>(spec.n_t);

  LinkResult res;
  res.kind = kind;
  const ComplexEngine dft = build_dft_engine(kind, spec.n_c, chip, hw.split("dft").seed());
  if (kind != ReceiverKind::kDigital) {
    const CMatrix w = dft_matrix(spec.n_c);
    Matrix ideal(2 * w.rows(), w.cols()), got(2 * w.rows(), w.cols());
    ideal << w.real(), w.imag();
    const CMatrix e = dft.effective();
    got << e.real(), e.imag();
    res.dft_similarity = cosine_similarity(got, ideal);
  }

  // Per-bin feedback arrays keep their fault maps across frames.
  const std::size_t gm = 2 * spec.n_t, gn = 2 * spec.n_r;
  std::vector<ChipLayout> mmse_layouts;
  std::vector<std::vector<DifferentialFaults>> mmse_diff_faults;
  for (std::size_t b = 0; b < n_used; ++b) {
    const std::uint64_t s = hw.split("mmse-faults").split(b).seed();
    if (kind == ReceiverKind::kDecomposed)
      mmse_layouts.push_back(ChipLayout::simulate(chip.device, gm, chip.mmse_k, gn, chip.mmse_plan.n_layers,
                                                  chip.fault_rate, 0.0, s));
    else if (kind == ReceiverKind::kDirectFaulty)
      mmse_diff_faults.push_back(
          DifferentialFaults::simulate(chip.device, gm, gn, chip.mmse_plan.n_layers, chip.fault_rate, 0.0, s));
  }

  const std::size_t per_frame = spec.bits_per_frame();
  const std::size_t frames = (n_bits + per_frame - 1) / per_frame;
  const CMatrix pilot = default_pilot(spec.n_t);
  double err_energy = 0.0, ref_energy = 0.0;
  res.mmse_similarity = 1.0;
  for (std::size_t f = 0; f < frames; ++f) {
    const Rng fr = root.split("frame").split(f);
    Rng bit_rng = fr.split("bits");
    std::vector<std::uint8_t> bits(per_frame);
    for (auto& b : bits) b = bit_rng.coin() ? 1 : 0;
    const CVector symbols = modulate(bits, spec.modulation);
    const FrameGrid frame = build_frame(spec, symbols, pilot, fr.split("preamble").seed());
    const ChannelModel ch = ChannelModel::rayleigh(spec.n_r, spec.n_t, channel.taps, channel.decay,
                                                   fr.split("channel").seed());
    const CMatrix rx = channel_apply(transmit(frame, spec), ch, spec.noise_power, fr.split("noise").seed());
    const std::vector<CMatrix> grids =
        ofdm_demod(rx, spec, kind == ReceiverKind::kDigital ? nullptr : &dft);
    const std::vector<CMatrix> h_hat = estimate_channels(grids, frame, spec);

    CVector detected(symbols.size());
    for (std::size_t b = 0; b < n_used; ++b) {
      const auto bin = static_cast<Eigen::Index>(spec.used_subcarriers[b]);
      CMatrix ys(static_cast<Eigen::Index>(spec.n_r), static_cast<Eigen::Index>(spec.payload_symbols));
      for (std::size_t s = 0; s < spec.payload_symbols; ++s)
        ys.col(static_cast<Eigen::Index>(s)) = grids[frame.payload_offset() + s].col(bin);
      CMatrix xs;
      if (kind == ReceiverKind::kDigital) {
        xs.resize(nt, ys.cols());
        for (Eigen::Index s = 0; s < ys.cols(); ++s) xs.col(s) = mmse_detect_exact(ys.col(s), h_hat[b], snr);
      } else {
        const double alpha = feedback_alpha(h_hat[b]);
        const Matrix g = feedback_conductance(h_hat[b], alpha);
        const Rng pr = hw.split("mmse-program").split(f * n_used + b);
        RealEngine engine = RealEngine::ideal(g);
        if (kind == ReceiverKind::kDecomposed) {
          OptimizerConfig opt = chip.mmse_optimizer;
          opt.seed = pr.split("optimizer").seed();
          const LayerFaults& f1 = mmse_layouts[b].layers[0];
          opt.seed = decompose_least_cancellation(g, chip.mmse_k, f1.a, f1.b, opt, chip.mmse_restarts).seed;
          ProgrammedPair p = program_stack(g, chip.mmse_k, chip.mmse_plan, mmse_layouts[b], opt,
                                           pr.split("program").seed());
          engine = RealEngine::decomposed(std::move(p.a), std::move(p.b));
        } else {
          engine = RealEngine::differential(program_differential_stack(
              g, chip.device, chip.mmse_plan, mmse_diff_faults[b], pr.split("program").seed()));
        }
        res.mmse_similarity = std::min(res.mmse_similarity, cosine_similarity(engine.effective(), g));
        xs = CircuitDetector(h_hat[b], snr, engine, alpha).detect_many(ys);
      }
      for (std::size_t s = 0; s < spec.payload_symbols; ++s)
        for (Eigen::Index a = 0; a < nt; ++a) {
          const auto idx = static_cast<Eigen::Index>((s * n_used + b) * spec.n_t + static_cast<std::size_t>(a));
          detected(idx) = xs(a, static_cast<Eigen::Index>(s));
        }
    }

    const std::vector<std::uint8_t> got = demodulate(detected, spec.modulation);
    const std::size_t count = std::min(per_frame, n_bits - f * per_frame);
    for (std::size_t i = 0; i < count; ++i) res.bit_errors += got[i] != bits[i];
    const auto bps = static_cast<std::size_t>(bits_per_symbol(spec.modulation));
    for (std::size_t i = 0; i < count / bps; ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      err_energy += std::norm(detected(ii) - symbols(ii));
      ref_energy += std::norm(symbols(ii));
      if (res.constellation.size() < max_constellation_points) {
        const std::size_t b = (i / spec.n_t) % n_used;
        res.constellation.push_back({detected(ii).real(), detected(ii).imag(), symbols(ii),
                                     spec.used_subcarriers[b], i % spec.n_t});
      }
    }
  }
  res.frames = frames;
  res.n_bits = n_bits;
  res.ber = static_cast<double>(res.bit_errors) / static_cast<double>(n_bits);
  res.evm = ref_energy > 0.0 ? std::sqrt(err_energy / ref_energy) : 0.0;
  res.evm_snr_db = res.evm > 0.0 ? -20.0 * std::log10(res.evm) : std::numeric_limits<double>::infinity();
  return res;
}

}  // namespace faultfree

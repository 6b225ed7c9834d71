#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "faultfree/analog_exec.hpp"
#include "faultfree/comp_program.hpp"
#include "faultfree/dft_pipeline.hpp"
#include "faultfree/types.hpp"

namespace faultfree {

struct LinkSpec {
  std::size_t n_t = 2;
  std::size_t n_r = 2;
  std::size_t n_c = 32;
  std::vector<std::size_t> used_subcarriers = default_used_subcarriers(32);
  std::size_t cp_len = 4;
  int modulation = 16;
  double noise_power = 1e-4;  // per time-domain sample
  std::size_t payload_symbols = 160;  // OFDM symbols per frame

  // Drops DC and the band-edge bins around Nyquist (7 of 32).
  static std::vector<std::size_t> default_used_subcarriers(std::size_t n_c);

  void validate() const;
  std::size_t bits_per_frame() const;
  // Per-bin SNR seen by the detector for unit-energy symbols.
  double bin_snr() const { return 1.0 / (static_cast<double>(n_c) * noise_power); }

  std::string to_json() const;
  static LinkSpec from_json(std::string_view text);
};

// Per-sample noise power giving the requested per-bin SNR.
double noise_power_for_snr(double snr_db, std::size_t n_c);

int bits_per_symbol(int order);
// Gray-mapped square QAM with unit average energy.
CVector modulate(const std::vector<std::uint8_t>& bits, int order);
std::vector<std::uint8_t> demodulate(const CVector& symbols, int order);
CVector constellation(int order);

struct ChannelModel {
  std::size_t n_r = 0;
  std::size_t n_t = 0;
  std::vector<std::vector<CVector>> taps;  // [rx][tx]

  static ChannelModel identity(std::size_t n_r, std::size_t n_t);
  // Independent Rayleigh taps with power ~ exp(-l / decay), unit expected energy.
  static ChannelModel rayleigh(std::size_t n_r, std::size_t n_t, std::size_t n_taps, double decay,
                               std::uint64_t seed);
  std::size_t max_taps() const;
  CMatrix frequency_response(std::size_t bin, std::size_t n_c) const;
};

struct ChannelSpec {
  std::size_t taps = 3;
  double decay = 1.0;
};

struct FrameGrid {
  CMatrix preamble;              // n_t x n_c
  CMatrix pilot;                     // n_t x n_t, column t sent on every used bin
  std::vector<CMatrix> pilot_grids;  // each n_t x n_c
  std::vector<CMatrix> payload;      // each n_t x n_c

  // Preamble, then one OFDM symbol per pilot column, then payload.
  std::vector<CMatrix> ofdm_symbols() const;
  std::size_t pilot_offset() const { return 1; }
  std::size_t payload_offset() const { return 1 + static_cast<std::size_t>(pilot.cols()); }
};

CMatrix default_pilot(std::size_t n_t);
// Places payload symbols on the used bins: order is symbol, bin, antenna.
FrameGrid build_frame(const LinkSpec& spec, const CVector& payload_symbols, const CMatrix& pilot,
                      std::uint64_t seed);

// n_t x samples, one row per antenna.
CMatrix transmit(const FrameGrid& frame, const LinkSpec& spec);
CMatrix channel_apply(const CMatrix& streams, const ChannelModel& model, double noise_power,
                      std::uint64_t seed);
// Received grids (n_r x n_c) per OFDM symbol; exact DFT when engine is null.
std::vector<CMatrix> ofdm_demod(const CMatrix& streams, const LinkSpec& spec,
                                const ComplexEngine* engine = nullptr);

// H_hat = R P^-1 for one bin.
CMatrix estimate_channel(const CMatrix& received_pilots, const CMatrix& pilot);
std::vector<CMatrix> estimate_channels(const std::vector<CMatrix>& grids, const FrameGrid& frame,
                                       const LinkSpec& spec);

CVector mmse_detect_exact(const CVector& y, const CMatrix& h, double snr);

// The feedback circuit for one channel estimate: G = alpha map(H)^T on some
// engine, g1 = g2 = alpha / sqrt(snr).
class CircuitDetector {
 public:
  CircuitDetector(const CMatrix& h, double snr, const RealEngine& g_engine, double alpha,
                  const FeedbackCircuitSpec& base = {});

  CVector detect(const CVector& y) const;
  // Columns of ys are receive vectors; returns the estimates column-wise.
  CMatrix detect_many(const CMatrix& ys, std::size_t* iterations = nullptr) const;
  const FeedbackCircuitSpec& circuit() const { return spec_; }

 private:
  double alpha_;
  FeedbackCircuitSpec spec_;
  FeedbackSolver solver_;
};

// Scale that maps the largest entry of map(H) to 1.
double feedback_alpha(const CMatrix& h);

enum class ReceiverKind { kDigital, kDirectFaulty, kDecomposed };
const char* to_string(ReceiverKind kind);
ReceiverKind receiver_from_string(std::string_view name);

// Simulated in-memory receiver hardware.
struct ReceiverChip {
  CrossbarSpec device;
  double fault_rate = 0.05;
  ProgramPlan plan;       // DFT arrays
  ProgramPlan mmse_plan;  // per-bin feedback arrays
  OptimizerConfig dft_optimizer;
  OptimizerConfig mmse_optimizer;
  std::size_t dft_k = 32;
  std::size_t mmse_k = 4;
  // Seeded decompositions tried per feedback array; the least-cancelling one
  // is programmed.
  std::size_t mmse_restarts = 6;

  static ReceiverChip defaults();
  std::string to_json() const;
  static ReceiverChip from_json(std::string_view text);
};

ComplexEngine build_dft_engine(ReceiverKind kind, std::size_t n, const ReceiverChip& chip,
                               std::uint64_t seed);

struct ConstellationPoint {
  double i = 0.0;
  double q = 0.0;
  Complex reference;
  std::size_t subcarrier = 0;
  std::size_t stream = 0;
};

struct LinkResult {
  ReceiverKind kind = ReceiverKind::kDigital;
  std::size_t n_bits = 0;
  std::size_t bit_errors = 0;
  double ber = 0.0;
  double evm = 0.0;          // RMS error vector over RMS reference
  double evm_snr_db = 0.0;   // post-equalization, -20 log10(evm)
  double dft_similarity = 1.0;   // programmed vs ideal DFT (complex, stacked)
  double mmse_similarity = 1.0;  // worst programmed feedback matrix
  std::size_t frames = 0;
  std::vector<ConstellationPoint> constellation;

  static void write_constellation_csv(std::ostream& out, const std::vector<ConstellationPoint>& pts);
};

// Full link over block-fading frames. Bits, channels and noise depend only on
// the seed, so different receivers see the same realizations.
LinkResult run_link(const LinkSpec& spec, const ChannelSpec& channel, ReceiverKind kind,
                    const ReceiverChip& chip, std::size_t n_bits, std::uint64_t seed,
                    std::size_t max_constellation_points = 4096);

}  // namespace faultfree

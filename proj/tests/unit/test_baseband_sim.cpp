#include <gtest/gtest.h>

#include "faultfree/baseband_sim.hpp"
#include "faultfree/rng.hpp"
#include "oracles.hpp"

using namespace faultfree;

namespace {

std::vector<std::uint8_t> random_bits(std::size_t n, Rng& rng) {
  std::vector<std::uint8_t> b(n);
  for (auto& x : b) x = rng.coin() ? 1 : 0;
  return b;
}

CMatrix random_channel(Eigen::Index r, Eigen::Index c, Rng& rng) {
  CMatrix h(r, c);
  for (Eigen::Index i = 0; i < h.size(); ++i) h(i) = Complex(rng.normal(), rng.normal()) / std::sqrt(2.0);
  return h;
}

CMatrix random_grid(const LinkSpec& spec, Rng& rng) {
  CMatrix g = CMatrix::Zero(static_cast<Eigen::Index>(spec.n_t), static_cast<Eigen::Index>(spec.n_c));
  for (std::size_t bin : spec.used_subcarriers)
    for (Eigen::Index a = 0; a < g.rows(); ++a)
      g(a, static_cast<Eigen::Index>(bin)) = Complex(rng.normal(), rng.normal());
  return g;
}

FrameGrid one_symbol_frame(const LinkSpec& spec, const CMatrix& grid) {
  FrameGrid f;
  f.pilot = default_pilot(spec.n_t);
  f.preamble = grid;
  return f;
}

}  // namespace

TEST(Qam, RoundTripAllOrders) {
  Rng rng(1);
  for (int order : {4, 16, 64, 256}) {
    const auto bits = random_bits(static_cast<std::size_t>(bits_per_symbol(order)) * 500, rng);
    EXPECT_EQ(demodulate(modulate(bits, order), order), bits) << order;
  }
}

TEST(Qam, UnitAverageEnergy) {
  for (int order : {4, 16, 64}) EXPECT_NEAR(constellation(order).squaredNorm() / order, 1.0, 1e-12);
}

TEST(Qam, NearestNeighboursDifferInOneBit) {
  const CVector c = constellation(16);
  const double d = 2.0 / std::sqrt(10.0);
  for (int a = 0; a < 16; ++a)
    for (int b = 0; b < 16; ++b)
      if (std::abs(std::abs(c(a) - c(b)) - d) < 1e-9) EXPECT_EQ(__builtin_popcount(a ^ b), 1);
}

TEST(Qam, RejectsUnsupportedOrder) {
  EXPECT_THROW(bits_per_symbol(8), ConfigError);
  EXPECT_THROW(modulate({1, 0, 1}, 16), ConfigError);
}

TEST(Qam, AwgnBerMatchesGrayFormula) {
  const std::size_t n_bits = 1000000;
  for (double ebn0_db : {6.0, 10.0, 14.0}) {
    Rng rng(static_cast<std::uint64_t>(ebn0_db));
    const auto bits = random_bits(n_bits, rng);
    CVector s = modulate(bits, 16);
    const double ebn0 = std::pow(10.0, ebn0_db / 10.0);
    const double n0 = 0.25 / ebn0;  // Es = 1, 4 bits per symbol
    for (Eigen::Index i = 0; i < s.size(); ++i)
      s(i) += std::sqrt(n0 / 2.0) * Complex(rng.normal(), rng.normal());
    const auto got = demodulate(s, 16);
    std::size_t errors = 0;
    for (std::size_t i = 0; i < n_bits; ++i) errors += got[i] != bits[i];
    const double p = oracle::qam16_ber(ebn0);
    const double sigma = std::sqrt(p * (1 - p) / n_bits);
    EXPECT_NEAR(static_cast<double>(errors) / n_bits, p, 3.0 * sigma) << ebn0_db << " dB";
  }
}

TEST(Ofdm, SingleSubcarrierIsATone) {
  LinkSpec spec;
  spec.n_t = 1;
  CMatrix grid = CMatrix::Zero(1, 32);
  grid(0, 5) = 1.0;
  const CMatrix x = transmit(one_symbol_frame(spec, grid), spec);
  for (Eigen::Index t = 0; t < 32; ++t) {
    const Complex want = std::polar(1.0 / 32.0, 2.0 * std::numbers::pi * 5.0 * static_cast<double>(t) / 32.0);
    EXPECT_LE(std::abs(x(0, 4 + t) - want), 1e-15);
  }
}

TEST(Ofdm, CyclicPrefixIsSymbolTail) {
  LinkSpec spec;
  Rng rng(2);
  const CMatrix x = transmit(one_symbol_frame(spec, random_grid(spec, rng)), spec);
  EXPECT_EQ(x.leftCols(4), x.middleCols(32, 4));
}

TEST(Ofdm, LoopbackRecoversGrid) {
  LinkSpec spec;
  Rng rng(3);
  const CMatrix grid = random_grid(spec, rng);
  const auto grids = ofdm_demod(transmit(one_symbol_frame(spec, grid), spec), spec);
  ASSERT_EQ(grids.size(), 1u);
  EXPECT_LE((grids[0] - grid).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Ofdm, CyclicPrefixMakesBinsMultiplicative) {
  LinkSpec spec;
  Rng rng(4);
  for (int t = 0; t < 10; ++t) {
    const ChannelModel ch = ChannelModel::rayleigh(2, 2, 5, 1.5, rng.next_u64());
    const CMatrix grid = random_grid(spec, rng);
    const auto rx = ofdm_demod(channel_apply(transmit(one_symbol_frame(spec, grid), spec), ch, 0.0, 0), spec);
    for (std::size_t bin = 0; bin < 32; ++bin) {
      const auto b = static_cast<Eigen::Index>(bin);
      const faultfree::CVector want = ch.frequency_response(bin, 32) * grid.col(b);
      EXPECT_LE((rx[0].col(b) - want).norm(), 1e-9);
    }
  }
}

TEST(Channel, IdentityWithoutNoisePassesThrough) {
  Rng rng(5);
  CMatrix x(2, 50);
  for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = Complex(rng.normal(), rng.normal());
  EXPECT_EQ(channel_apply(x, ChannelModel::identity(2, 2), 0.0, 1), x);
}

TEST(Channel, FrequencyResponseIsTapFft) {
  const ChannelModel ch = ChannelModel::rayleigh(2, 2, 3, 1.0, 6);
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t t = 0; t < 2; ++t) {
      std::vector<Complex> taps(32, 0.0);
      for (Eigen::Index l = 0; l < 3; ++l) taps[static_cast<std::size_t>(l)] = ch.taps[r][t](l);
      const auto f = oracle::fft(taps);
      for (std::size_t bin = 0; bin < 32; ++bin)
        EXPECT_LE(std::abs(ch.frequency_response(bin, 32)(r, t) - f[bin]), 1e-12);
    }
}

TEST(Channel, RayleighEnergyIsUnitInExpectation) {
  double e = 0.0;
  const int n = 4000;
  for (int s = 0; s < n; ++s) {
    const ChannelModel ch = ChannelModel::rayleigh(1, 1, 3, 1.0, static_cast<std::uint64_t>(s));
    e += ch.taps[0][0].squaredNorm();
  }
  EXPECT_NEAR(e / n, 1.0, 0.05);
}

TEST(Channel, NoiseOnlyPower) {
  const double p = 0.37;
  const CMatrix y = channel_apply(CMatrix::Zero(1, 100000), ChannelModel::identity(1, 1), p, 7);
  EXPECT_NEAR(y.squaredNorm() / 100000.0, p, 0.05 * p);
}

TEST(Demod, DifferentialEngineWithoutNoiseMatchesIdeal) {
  LinkSpec spec;
  ReceiverChip chip = ReceiverChip::defaults();
  chip.device.write_sigma = 0.0;
  chip.fault_rate = 0.0;
  chip.plan.n_layers = 1;
  const ComplexEngine e = build_dft_engine(ReceiverKind::kDirectFaulty, 32, chip, 1);
  Rng rng(8);
  const CMatrix x = transmit(one_symbol_frame(spec, random_grid(spec, rng)), spec);
  const auto ideal = ofdm_demod(x, spec), hw = ofdm_demod(x, spec, &e);
  EXPECT_LE((hw[0] - ideal[0]).norm(), 1e-9 * ideal[0].norm());
}

TEST(Estimate, NoiselessAndIdentityPilot) {
  Rng rng(9);
  const CMatrix h = random_channel(2, 2, rng);
  const CMatrix p = default_pilot(2);
  EXPECT_LE((estimate_channel(h * p, p) - h).cwiseAbs().maxCoeff(), 1e-12);
  const CMatrix r = random_channel(2, 2, rng);
  EXPECT_LE((estimate_channel(r, CMatrix::Identity(2, 2)) - r).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_THROW(estimate_channel(r, CMatrix::Zero(2, 2)), ConfigError);
}

TEST(Estimate, MseScalesWithNoisePower) {
  Rng rng(10);
  const CMatrix p = default_pilot(2);
  auto mse = [&](double noise) {
    double acc = 0.0;
    for (int t = 0; t < 100; ++t) {
      const CMatrix h = random_channel(2, 2, rng);
      CMatrix r = h * p;
      for (Eigen::Index i = 0; i < r.size(); ++i)
        r(i) += std::sqrt(noise / 2.0) * Complex(rng.normal(), rng.normal());
      acc += (estimate_channel(r, p) - h).squaredNorm();
    }
    return acc / 100.0;
  };
  const double ratio = mse(1e-2) / mse(1e-3);
  EXPECT_NEAR(ratio, 10.0, 2.0);
}

TEST(Mmse, IdentityAtHighSnrPassesThrough) {
  faultfree::CVector y(2);
  y << Complex(0.3, -1.0), Complex(2.0, 0.5);
  EXPECT_LE((mmse_detect_exact(y, CMatrix::Identity(2, 2), 1e12) - y).norm(), 1e-10);
}

TEST(Mmse, ExactDetectorMatchesOracle) {
  Rng rng(11);
  for (int t = 0; t < 50; ++t) {
    const CMatrix h = random_channel(2, 2, rng);
    faultfree::CVector y(2);
    y << Complex(rng.normal(), rng.normal()), Complex(rng.normal(), rng.normal());
    const double snr = std::pow(10.0, (5.0 + 30.0 * rng.uniform()) / 10.0);
    const faultfree::CVector want = oracle::mmse(h, y, snr);
    EXPECT_LE((mmse_detect_exact(y, h, snr) - want).norm(), 1e-10 * want.norm());
  }
}

TEST(Mmse, CircuitOnIdealArraysMatchesFormula) {
  Rng rng(12);
  for (int t = 0; t < 50; ++t) {
    const CMatrix h = random_channel(2, 2, rng);
    const double snr = std::pow(10.0, (5.0 + 30.0 * rng.uniform()) / 10.0);
    const double alpha = feedback_alpha(h);
    const CircuitDetector det(h, snr, RealEngine::ideal(feedback_conductance(h, alpha)), alpha);
    faultfree::CVector y(2);
    y << Complex(rng.normal(), rng.normal()), Complex(rng.normal(), rng.normal());
    const faultfree::CVector want = oracle::mmse(h, y, snr);
    EXPECT_LE((det.detect(y) - want).norm(), 1e-6 * want.norm());
  }
}

TEST(Mmse, ProgrammedFeedbackArrayKeepsSimilarity) {
  // Median over random channels on a 5% faulty chip with the default plan.
  Rng rng(13);
  const ReceiverChip chip = ReceiverChip::defaults();
  std::vector<double> sims;
  for (int t = 0; t < 15; ++t) {
    const CMatrix h = random_channel(2, 2, rng);
    const Matrix g = feedback_conductance(h, feedback_alpha(h));
    const auto layout = ChipLayout::simulate(chip.device, 4, 4, 4, chip.mmse_plan.n_layers,
                                             chip.fault_rate, 0.0, rng.next_u64());
    OptimizerConfig opt = chip.mmse_optimizer;
    opt.seed = rng.next_u64();
    opt.seed = decompose_least_cancellation(g, 4, layout.layers[0].a, layout.layers[0].b, opt,
                                            chip.mmse_restarts).seed;
    const auto p = program_stack(g, 4, chip.mmse_plan, layout, opt, rng.next_u64());
    sims.push_back(oracle::cosine(p.effective(), g));
  }
  EXPECT_GE(oracle::median(sims), 0.999);
}

TEST(Link, NoiselessDigitalReceiverIsErrorFree) {
  LinkSpec spec;
  spec.noise_power = 0.0;
  const LinkResult r = run_link(spec, ChannelSpec{}, ReceiverKind::kDigital, ReceiverChip::defaults(),
                                20000, 3);
  EXPECT_EQ(r.bit_errors, 0u);
  EXPECT_EQ(r.n_bits, 20000u);
}

TEST(Link, SameSeedSameResult) {
  LinkSpec spec;
  spec.noise_power = noise_power_for_snr(15.0, spec.n_c);
  const auto a = run_link(spec, ChannelSpec{}, ReceiverKind::kDigital, ReceiverChip::defaults(), 20000, 4);
  const auto b = run_link(spec, ChannelSpec{}, ReceiverKind::kDigital, ReceiverChip::defaults(), 20000, 4);
  EXPECT_EQ(a.bit_errors, b.bit_errors);
  EXPECT_EQ(a.evm, b.evm);
}

TEST(Link, DirectMappingHasWorseEvmThanDecomposed) {
  LinkSpec spec;
  spec.noise_power = noise_power_for_snr(30.0, spec.n_c);
  ReceiverChip chip = ReceiverChip::defaults();
  chip.dft_optimizer.epochs = 2000;
  const auto dec = run_link(spec, ChannelSpec{}, ReceiverKind::kDecomposed, chip, 20000, 5, 0);
  const auto dir = run_link(spec, ChannelSpec{}, ReceiverKind::kDirectFaulty, chip, 20000, 5, 0);
  EXPECT_GT(dir.evm, 2.0 * dec.evm);
}

TEST(Link, CpShorterThanChannelIsRejected) {
  LinkSpec spec;
  spec.cp_len = 1;
  ChannelSpec ch;
  ch.taps = 4;
  EXPECT_THROW(run_link(spec, ch, ReceiverKind::kDigital, ReceiverChip::defaults(), 100, 1), ConfigError);
}

TEST(LinkSpec, DefaultsAndJson) {
  const LinkSpec s;
  EXPECT_EQ(s.used_subcarriers.size(), 24u);
  EXPECT_EQ(std::count(s.used_subcarriers.begin(), s.used_subcarriers.end(), 0u), 0);
  const LinkSpec back = LinkSpec::from_json(R"({"snr_db": 20, "modulation": 4})");
  EXPECT_EQ(back.modulation, 4);
  EXPECT_NEAR(10.0 * std::log10(back.bin_snr()), 20.0, 1e-12);
  try {
    ReceiverChip::from_json(R"({"plan": {"nlayers": 2}})");
    FAIL() << "unknown key accepted";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("plan.nlayers"), std::string::npos) << e.what();
  }
}

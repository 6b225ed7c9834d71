#include <benchmark/benchmark.h>

#include "faultfree/analog_exec.hpp"
#include "faultfree/baseband_sim.hpp"
#include "faultfree/comp_program.hpp"
#include "faultfree/dft_pipeline.hpp"
#include "faultfree/harness.hpp"
#include "faultfree/rng.hpp"

namespace {

using namespace faultfree;

Matrix dft_real(std::size_t n) { return dft_matrix(n).real(); }

ChipLayout faulty_chip(std::size_t n, std::size_t k, std::size_t layers, std::uint64_t seed) {
  return ChipLayout::simulate(CrossbarSpec{}, n, k, n, layers, 0.05, 0.0, seed);
}

// Full Adam run for one decomposition; range(0) is N, k = N/2 + 1.
void BM_Decompose(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const std::size_t k = n / 2 + 1;
  const Matrix target = dft_real(n);
  const ChipLayout chip = faulty_chip(n, k, 1, 3);
  OptimizerConfig opt;
  opt.epochs = 1000;
  for (auto _ : state) {
    auto r = decompose(target, k, chip.layers[0].a, chip.layers[0].b, opt);
    benchmark::DoNotOptimize(r.final_similarity);
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(opt.epochs));
}
BENCHMARK(BM_Decompose)->Arg(16)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_ProgramStack(benchmark::State& state) {
  const std::size_t n = 32, k = 17;
  const auto layers = static_cast<std::size_t>(state.range(0));
  const Matrix target = dft_real(n);
  const ChipLayout chip = faulty_chip(n, k, layers, 5);
  ProgramPlan plan;
  plan.delta_g = 0.0;
  plan.n_layers = layers;
  OptimizerConfig opt;
  opt.epochs = 1000;
  for (auto _ : state) {
    auto p = program_stack(target, k, plan, chip, opt, 9);
    benchmark::DoNotOptimize(p.report.layers.back().similarity);
  }
}
BENCHMARK(BM_ProgramStack)->Arg(1)->Arg(2)->Arg(3)->Unit(benchmark::kMillisecond);

void BM_VmmDecomposed(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const std::size_t k = n / 2 + 1;
  const ChipLayout chip = faulty_chip(n, k, 1, 7);
  ProgramPlan plan;
  plan.n_layers = 1;
  OptimizerConfig opt;
  opt.epochs = 300;
  const ProgrammedPair p = program_stack(dft_real(n), k, plan, chip, opt, 11);
  const BridgeConfig bridge = BridgeConfig::for_stack(p.b);
  Rng rng(13);
  RowVector x(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = rng.normal();
  for (auto _ : state) benchmark::DoNotOptimize(vmm_decomposed(x, p.a, p.b, bridge));
}
BENCHMARK(BM_VmmDecomposed)->Arg(32)->Arg(64)->Arg(128);

void BM_VmmDifferential(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const CrossbarSpec dev = CrossbarSpec{}.with_shape(n, n);
  const DifferentialPairArray arr = map_differential(
      dft_real(n), dev, generate_fault_mask(dev, 0.05, 0.0, 1), generate_fault_mask(dev, 0.05, 0.0, 2), 3);
  Rng rng(13);
  RowVector x(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = rng.normal();
  for (auto _ : state) benchmark::DoNotOptimize(vmm_differential(x, arr, arr.scale));
}
BENCHMARK(BM_VmmDifferential)->Arg(32)->Arg(64)->Arg(128);

// One 32x32 tile through ideal and decomposed engines.
void BM_Dft2dTile(benchmark::State& state) {
  const bool decomposed = state.range(0) != 0;
  ReceiverChip chip = ReceiverChip::defaults();
  chip.dft_optimizer.epochs = 500;
  const ComplexEngine engine = build_dft_engine(
      decomposed ? ReceiverKind::kDecomposed : ReceiverKind::kDigital, 32, chip, 17);
  const Matrix tile = make_test_image(32, 32, 1).pixels;
  for (auto _ : state) benchmark::DoNotOptimize(dft2d_inmemory(tile, engine));
  state.SetLabel(decomposed ? "decomposed" : "ideal");
}
BENCHMARK(BM_Dft2dTile)->Arg(0)->Arg(1);

// Feedback settle on a 2x2 complex channel (4x4 real map); range(0) is SNR in dB.
void BM_FeedbackSolve(benchmark::State& state) {
  Rng rng(21);
  CMatrix h(2, 2);
  for (Eigen::Index i = 0; i < 2; ++i)
    for (Eigen::Index j = 0; j < 2; ++j) h(i, j) = Complex(rng.normal(), rng.normal()) / std::sqrt(2.0);
  const double snr = std::pow(10.0, static_cast<double>(state.range(0)) / 10.0);
  const double alpha = feedback_alpha(h);
  const CircuitDetector det(h, snr, RealEngine::ideal(feedback_conductance(h, alpha)), alpha);
  CMatrix ys(2, 64);
  for (Eigen::Index i = 0; i < ys.size(); ++i) ys(i) = Complex(rng.normal(), rng.normal());
  std::size_t iterations = 0;
  for (auto _ : state) benchmark::DoNotOptimize(det.detect_many(ys, &iterations));
  state.counters["iterations"] = static_cast<double>(iterations);
}
BENCHMARK(BM_FeedbackSolve)->Arg(10)->Arg(20)->Arg(30);

}  // namespace

BENCHMARK_MAIN();

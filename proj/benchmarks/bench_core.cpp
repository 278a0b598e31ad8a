#include <benchmark/benchmark.h>

#include <random>

#include "oracles.hpp"
#include "scenarios.hpp"
#include "trackeval/calibration.hpp"
#include "trackeval/features.hpp"
#include "trackeval/metrics.hpp"
#include "trackeval/synth.hpp"

using namespace trackeval;

namespace {

Trajectory patrol(double duration) {
  synth::MotionSpec spec;
  spec.pattern = synth::Pattern::Patrol;
  spec.duration = duration;
  return synth::generate(spec);
}

Trajectory noisy(const Trajectory& gt) {
  synth::DegradationModel m;
  m.drift_rate = 0.03;
  m.trans_noise_std = 0.002;
  m.rng_seed = 1;
  return synth::degrade(gt, m);
}

void BM_Align(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(1);
  const Pose g = oracle::random_pose(rng, 2.0);
  std::vector<Vec3> a(n), b(n);
  for (std::size_t i = 0; i < n; ++i) {
    a[i] = oracle::random_vec(rng, 5.0);
    b[i] = inverse(g).apply(a[i]);
  }
  for (auto _ : state) benchmark::DoNotOptimize(align_points(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}
BENCHMARK(BM_Align)->Arg(1000)->Arg(100000);

void BM_Ape(benchmark::State& state) {
  const auto gt = patrol(static_cast<double>(state.range(0)));
  const auto est = noisy(gt);
  for (auto _ : state) benchmark::DoNotOptimize(metrics::ape(est, gt));
}
BENCHMARK(BM_Ape)->Arg(60)->Arg(600)->Unit(benchmark::kMillisecond);

void BM_Rpe(benchmark::State& state) {
  const auto gt = patrol(static_cast<double>(state.range(0)));
  const auto est = noisy(gt);
  for (auto _ : state) benchmark::DoNotOptimize(metrics::rpe(est, gt));
}
BENCHMARK(BM_Rpe)->Arg(60)->Arg(600)->Unit(benchmark::kMillisecond);

void BM_Fast(benchmark::State& state) {
  const auto img = oracle::random_image(static_cast<int>(state.range(0)), static_cast<int>(state.range(0)) * 3 / 4, 3);
  for (auto _ : state) benchmark::DoNotOptimize(features::detect_fast(img));
}
BENCHMARK(BM_Fast)->Arg(320)->Arg(640)->Unit(benchmark::kMillisecond);

void BM_ImageMetrics(benchmark::State& state) {
  const auto img = oracle::random_image(640, 480, 4);
  for (auto _ : state) benchmark::DoNotOptimize(features::image_metrics(img));
}
BENCHMARK(BM_ImageMetrics)->Unit(benchmark::kMicrosecond);

void BM_Calibrate(benchmark::State& state) {
  const auto gt = scenario::poses(scenario::calibration_motion());
  std::mt19937_64 rng(5);
  const auto est = scenario::observe(gt, scenario::random_extrinsic(rng), oracle::random_pose(rng, 2.0), 0.002, 1);
  for (auto _ : state) benchmark::DoNotOptimize(calibration::calibrate_pairs(gt, est));
}
BENCHMARK(BM_Calibrate)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();

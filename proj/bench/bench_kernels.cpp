#include <benchmark/benchmark.h>

#include <random>

#include "lrm/baselines.hpp"
#include "lrm/spatial.hpp"

using namespace lrm;

namespace {

PointCloud cloud(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(-40.0, 40.0);
  PointCloud c;
  c.points.reserve(n);
  for (std::size_t i = 0; i < n; ++i) c.points.emplace_back(u(rng), u(rng), 0.05 * u(rng));
  return c;
}

void BM_FpsParallel(benchmark::State& state) {
  const auto c = cloud(static_cast<std::size_t>(state.range(0)), 1);
  for (auto _ : state) benchmark::DoNotOptimize(spatial::farthest_point_sample(c.view(), 256));
}

void BM_FpsSerial(benchmark::State& state) {
  const auto c = cloud(static_cast<std::size_t>(state.range(0)), 1);
  for (auto _ : state) benchmark::DoNotOptimize(spatial::serial::farthest_point_sample(c.view(), 256));
}

void BM_KnnParallel(benchmark::State& state) {
  const auto c = cloud(static_cast<std::size_t>(state.range(0)), 2);
  const auto q = cloud(256, 3);
  for (auto _ : state) benchmark::DoNotOptimize(spatial::knn(c.view(), q.view(), 16));
}

void BM_KnnSerial(benchmark::State& state) {
  const auto c = cloud(static_cast<std::size_t>(state.range(0)), 2);
  const auto q = cloud(256, 3);
  for (auto _ : state) benchmark::DoNotOptimize(spatial::serial::knn(c.view(), q.view(), 16));
}

void BM_ChamferParallel(benchmark::State& state) {
  const auto a = cloud(static_cast<std::size_t>(state.range(0)), 4);
  const auto b = cloud(static_cast<std::size_t>(state.range(0)), 5);
  for (auto _ : state) benchmark::DoNotOptimize(baselines::chamfer(a, b));
}

void BM_ChamferSerial(benchmark::State& state) {
  const auto a = cloud(static_cast<std::size_t>(state.range(0)), 4);
  const auto b = cloud(static_cast<std::size_t>(state.range(0)), 5);
  for (auto _ : state) benchmark::DoNotOptimize(baselines::serial::chamfer(a, b));
}

}  // namespace

BENCHMARK(BM_FpsParallel)->Arg(4096)->Arg(16384)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_FpsSerial)->Arg(4096)->Arg(16384)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_KnnParallel)->Arg(4096)->Arg(16384)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_KnnSerial)->Arg(4096)->Arg(16384)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ChamferParallel)->Arg(2048)->Arg(8192)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ChamferSerial)->Arg(2048)->Arg(8192)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();

#include <benchmark/benchmark.h>

#include "ntmc/branching.hpp"
#include "ntmc/spectral.hpp"
#include "ntmc/walk.hpp"

using namespace ntmc;

namespace {

std::shared_ptr<const MaterialModel> benchmark_a() {
  MaterialRegion r;
  r.sigma_s = 1.0;
  r.sigma_f = 0.5;
  r.fission_mean = 1.2;
  return std::make_shared<const MaterialModel>(Domain::ball({0, 0, 0}, 1.0), VelocitySpace(0.5, 1.0),
                                               std::vector<MaterialRegion>{r});
}

const Vec3 kOrigin{0, 0, 0};
const Vec3 kStartV{0.75, 0, 0};

void BM_ExitTimeBall(benchmark::State& state) {
  const Domain d = Domain::ball({0, 0, 0}, 1.0);
  Rng rng(1);
  for (auto _ : state) {
    const Vec3 v = sample_velocity_uniform(VelocitySpace(0.5, 1.0), rng);
    benchmark::DoNotOptimize(exit_time(d, {0.1, 0.2, 0.3}, v));
  }
}
BENCHMARK(BM_ExitTimeBall);

void BM_NbpTrial(benchmark::State& state) {
  const auto mm = benchmark_a();
  const double t = static_cast<double>(state.range(0));
  std::uint64_t i = 0;
  for (auto _ : state) {
    Rng rng = Rng::for_trial(2, i++);
    benchmark::DoNotOptimize(simulate_nbp(*mm, Population::single(kOrigin, kStartV), t, {}, rng).final.count());
  }
}
BENCHMARK(BM_NbpTrial)->Arg(1)->Arg(2);

void BM_WalkTrial(benchmark::State& state) {
  const auto mm = benchmark_a();
  const WalkSpec spec = WalkSpec::many_to_one(*mm);
  std::uint64_t i = 0;
  for (auto _ : state) {
    Rng rng = Rng::for_trial(3, i++);
    benchmark::DoNotOptimize(simulate_nrw(*mm, spec, kOrigin, kStartV, 2.0, rng).death_time);
  }
}
BENCHMARK(BM_WalkTrial);

void BM_StepOperatorApply(benchmark::State& state) {
  const auto mm = benchmark_a();
  const int n = static_cast<int>(state.range(0));
  const PhaseGrid grid(*mm, GridSpec::parse(std::to_string(n) + "x" + std::to_string(n) + "x" + std::to_string(n) + "x32", 0.01));
  const StepOperator op(*mm, grid);
  std::vector<double> f(grid.unknowns(), 1.0), g(grid.unknowns());
  for (auto _ : state) {
    op.apply(f, g);
    f.swap(g);
    benchmark::ClobberMemory();
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(grid.unknowns()));
}
BENCHMARK(BM_StepOperatorApply)->Arg(8)->Arg(16);

}  // namespace
BENCHMARK_MAIN();

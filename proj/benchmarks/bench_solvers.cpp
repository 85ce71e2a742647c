#include <benchmark/benchmark.h>

#include <sgsw/dynamics.hpp>
#include <sgsw/entropic_ot.hpp>
#include <sgsw/numerics.hpp>
#include <sgsw/parallel.hpp>
#include <sgsw/saddle.hpp>
#include <sgsw/scenarios.hpp>

using namespace sgsw;

namespace {

const PhysicalParams kParams{1.0, 0.1};

struct Problem {
  Grid grid;
  DiscreteMeasure sigma;
  SolverConfig cfg;

  explicit Problem(int n) : grid(n, n) {
    sigma = initial_state(grid, make_scenario("perturbed_jet"), kParams).particles;
    cfg.eps = 1.0 / n;
    cfg.tol = 1e-10;
    cfg.max_iters = 100000;
  }
};

FlowModel model_for(const Problem& p, VelocityMode mode) {
  FlowModel m;
  m.grid_measure = p.grid.uniform_measure();
  m.params = kParams;
  m.cfg = p.cfg;
  m.mode = mode;
  return m;
}

}  // namespace

static void BM_LambertW0(benchmark::State& state) {
  double z = 0.1;
  for (auto _ : state) {
    benchmark::DoNotOptimize(lambert_w0(z));
    z = z < 1e6 ? z * 1.37 : 0.1;
  }
}
BENCHMARK(BM_LambertW0);

static void BM_SwsgSweep(benchmark::State& state) {
  const Problem p(static_cast<int>(state.range(0)));
  const auto mu = p.grid.uniform_measure();
  DualPotentials pots;
  pots.phi.assign(mu.size(), 0.0);
  pots.psi.assign(p.sigma.size(), 0.0);
  for (auto _ : state) {
    pots = swsg_sinkhorn_step(pots, mu, p.sigma, kParams, p.cfg);
    benchmark::DoNotOptimize(pots.phi.data());
  }
  state.SetComplexityN(state.range(0) * state.range(0));
}
BENCHMARK(BM_SwsgSweep)->Arg(16)->Arg(32)->Arg(48)->Complexity(benchmark::oNSquared)->Unit(benchmark::kMillisecond);

static void BM_SwsgSolve(benchmark::State& state) {
  const Problem p(static_cast<int>(state.range(0)));
  const auto mu = p.grid.uniform_measure();
  for (auto _ : state) benchmark::DoNotOptimize(solve_swsg_dual(mu, p.sigma, kParams, p.cfg).pots.phi.data());
}
BENCHMARK(BM_SwsgSolve)->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond);

static void BM_SaddleSolve(benchmark::State& state) {
  const Problem p(static_cast<int>(state.range(0)));
  const auto mu = p.grid.uniform_measure();
  for (auto _ : state) benchmark::DoNotOptimize(saddle_sinkhorn(mu, p.sigma, kParams, p.cfg).state.h.data());
}
BENCHMARK(BM_SaddleSolve)->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond);

static void BM_HeunStep(benchmark::State& state) {
  const Problem p(static_cast<int>(state.range(0)));
  const auto model = model_for(p, static_cast<VelocityMode>(state.range(1)));
  const auto init = initial_state(p.grid, make_scenario("perturbed_jet"), kParams);
  const auto warm = snapshot_at(init, model).state;
  for (auto _ : state) benchmark::DoNotOptimize(step(warm, model, Stepper{StepperKind::heun, 0.1}).state.t);
  state.SetLabel(std::string(to_string(model.mode)));
}
BENCHMARK(BM_HeunStep)
    ->Args({16, static_cast<int>(VelocityMode::biased)})
    ->Args({16, static_cast<int>(VelocityMode::debiased)})
    ->Args({16, static_cast<int>(VelocityMode::saddle)})
    ->Unit(benchmark::kMillisecond);

static void BM_ThreadScaling(benchmark::State& state) {
  const int before = thread_count();
  set_thread_count(static_cast<int>(state.range(0)));
  const Problem p(32);
  const auto mu = p.grid.uniform_measure();
  for (auto _ : state) benchmark::DoNotOptimize(solve_swsg_dual(mu, p.sigma, kParams, p.cfg).pots.phi.data());
  set_thread_count(before);
}
BENCHMARK(BM_ThreadScaling)->Arg(1)->Arg(2)->Arg(4)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK_MAIN();

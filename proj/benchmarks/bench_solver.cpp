#include <aeq/arch.hpp>
#include <aeq/eqprop.hpp>
#include <aeq/solver.hpp>
#include <benchmark/benchmark.h>
#include <random>

namespace {

aeq::LayeredNetwork layered(std::size_t hidden) {
  aeq::ArchSpec spec = aeq::ArchSpec::mnist_preset();
  spec.hidden_sizes = {hidden};
  return aeq::build_layered_network(spec, aeq::init_conductances(spec, 1));
}

std::vector<double> random_input(const aeq::ArchSpec& spec, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::vector<double> x(spec.raw_input_dim);
  for (double& v : x) v = 10.0 * aeq::unit_uniform(gen()) - 5.0;
  return aeq::encode_input(x, spec);
}

// Resistor ladder of n rungs driven from one end.
aeq::Netlist ladder(std::size_t n) {
  aeq::Netlist net("ladder");
  net.add_voltage_source("V", 1, aeq::kGround, 1.0);
  for (aeq::NodeId i = 1; i <= n; ++i) {
    net.add_resistor("Rs" + std::to_string(i), i, i + 1, 1.0);
    net.add_resistor("Rp" + std::to_string(i), i + 1, aeq::kGround, 0.5);
  }
  return net;
}

}  // namespace

static void BM_SolveLadder(benchmark::State& state) {
  const aeq::Netlist net = ladder(static_cast<std::size_t>(state.range(0)));
  aeq::SteadyStateSolver solver(net);
  for (auto _ : state) benchmark::DoNotOptimize(solver.solve(net));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_SolveLadder)->RangeMultiplier(4)->Range(16, 4096)->Complexity();

static void BM_FreePhaseMnistShape(benchmark::State& state) {
  const aeq::LayeredNetwork ln = layered(static_cast<std::size_t>(state.range(0)));
  aeq::ArchSpec spec = aeq::ArchSpec::mnist_preset();
  spec.hidden_sizes = {static_cast<std::size_t>(state.range(0))};
  const std::vector<double> in = random_input(spec, 2);
  aeq::PhaseRunner runner(ln.net);
  for (auto _ : state) benchmark::DoNotOptimize(runner.run_free(ln.net, in));
}
BENCHMARK(BM_FreePhaseMnistShape)->Arg(20)->Arg(100)->Unit(benchmark::kMillisecond);

static void BM_NudgedPhaseWarmStart(benchmark::State& state) {
  const aeq::LayeredNetwork ln = layered(100);
  const std::vector<double> in = random_input(aeq::ArchSpec::mnist_preset(), 3);
  aeq::PhaseRunner runner(ln.net);
  const aeq::PhaseRecord free = runner.run_free(ln.net, in);
  const std::vector<double> target(10, 0.1);
  const aeq::Nudge nudge = aeq::nudge_currents({}, free.outputs, target, 0.01);
  for (auto _ : state) benchmark::DoNotOptimize(runner.run_nudged(ln.net, free, nudge.currents, 0.01));
}
BENCHMARK(BM_NudgedPhaseWarmStart)->Unit(benchmark::kMillisecond);

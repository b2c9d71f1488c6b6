#include <aeq/arch.hpp>
#include <aeq/circuit.hpp>
#include <benchmark/benchmark.h>

namespace {

const aeq::Netlist& mnist_net() {
  static const aeq::Netlist net = [] {
    const aeq::ArchSpec spec = aeq::ArchSpec::mnist_preset();
    return aeq::build_layered_network(spec, aeq::init_conductances(spec, 1)).net;
  }();
  return net;
}

}  // namespace

static void BM_Serialize(benchmark::State& state) {
  const aeq::Netlist& net = mnist_net();
  std::size_t bytes = 0;
  for (auto _ : state) {
    const std::string text = aeq::serialize_netlist(net);
    bytes += text.size();
    benchmark::DoNotOptimize(text.data());
  }
  state.SetBytesProcessed(static_cast<std::int64_t>(bytes));
}
BENCHMARK(BM_Serialize)->Unit(benchmark::kMillisecond);

static void BM_Parse(benchmark::State& state) {
  const std::string text = aeq::serialize_netlist(mnist_net());
  for (auto _ : state) benchmark::DoNotOptimize(aeq::parse_netlist(text));
  state.SetBytesProcessed(static_cast<std::int64_t>(state.iterations() * text.size()));
}
BENCHMARK(BM_Parse)->Unit(benchmark::kMillisecond);

static void BM_Validate(benchmark::State& state) {
  const aeq::Netlist& net = mnist_net();
  for (auto _ : state) benchmark::DoNotOptimize(aeq::validate(net));
}
BENCHMARK(BM_Validate)->Unit(benchmark::kMillisecond);

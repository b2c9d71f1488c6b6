#include <aeq/train.hpp>
#include <benchmark/benchmark.h>
#include <random>

namespace {

std::vector<aeq::Sample> synthetic_digits(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::vector<aeq::Sample> out(n);
  for (auto& s : out) {
    std::vector<double> raw(784);
    for (double& v : raw) v = aeq::unit_uniform(gen()) < 0.2 ? aeq::unit_uniform(gen()) : 0.0;
    s.x = aeq::normalize_sample(raw);
    s.y.assign(10, 0.0);
    s.y[gen() % 10] = 1.0;
  }
  return out;
}

}  // namespace

static void BM_Minibatch(benchmark::State& state) {
  const aeq::ArchSpec spec = aeq::ArchSpec::mnist_preset();
  aeq::TrainConfig cfg = aeq::TrainConfig::mnist_preset();
  cfg.learning_rates = {0.1, 0.005};
  cfg.threads = static_cast<std::size_t>(state.range(0));
  aeq::Trainer trainer(spec, cfg, aeq::init_conductances(spec, 1));
  const auto batch = synthetic_digits(20, 2);
  for (auto _ : state) benchmark::DoNotOptimize(trainer.train_minibatch(batch));
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * batch.size()));
}
BENCHMARK(BM_Minibatch)->Arg(1)->Arg(2)->Unit(benchmark::kMillisecond)->UseRealTime();

static void BM_XorTraining(benchmark::State& state) {
  const aeq::ArchSpec spec = aeq::ArchSpec::xor_preset();
  const aeq::TrainConfig cfg = aeq::TrainConfig::xor_preset();
  for (auto _ : state) {
    aeq::Trainer trainer(spec, cfg, aeq::init_conductances(spec, cfg.seed));
    benchmark::DoNotOptimize(aeq::run_xor_training(trainer));
  }
}
BENCHMARK(BM_XorTraining)->Unit(benchmark::kMillisecond);

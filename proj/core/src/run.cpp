#include <chrono>

#include "aeq/train.hpp"

namespace aeq {

namespace {

class Clock {
 public:
  explicit Clock(bool enabled) : enabled_(enabled), start_(std::chrono::steady_clock::now()) {}

  std::optional<double> elapsed_ms() const {
    if (!enabled_) return std::nullopt;
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  bool enabled_;
  std::chrono::steady_clock::time_point start_;
};

// Seeds the sample order independently of the trainer's beta-sign stream.
std::mt19937_64 order_stream(std::uint64_t seed) { return std::mt19937_64(seed ^ 0x9e3779b97f4a7c15ULL); }

MetricsRow test_row(std::size_t iteration, std::size_t epoch, const Evaluation& ev, const Clock& clock) {
  return {iteration, epoch, "test", ev.mean_loss, ev.error_rate, ev.skipped, clock.elapsed_ms()};
}

}  // namespace

RunSummary run_xor_training(Trainer& trainer, const RunOptions& opts) {
  const std::vector<Sample> data = xor_dataset();
  const std::size_t iterations = trainer.config().iterations;
  const Clock clock(opts.wall_time);
  std::mt19937_64 gen = order_stream(trainer.config().seed);
  RunSummary summary;

  summary.initial = trainer.evaluate(data);
  if (opts.metrics) opts.metrics->write(test_row(0, 0, summary.initial, clock));

  trainer.begin_epoch(iterations);
  std::vector<std::size_t> order;
  for (std::size_t it = 0; it < iterations; ++it) {
    const std::size_t pass = it / data.size();
    if (it % data.size() == 0) order = seeded_permutation(data.size(), gen);
    const BatchStats st = trainer.train_minibatch(std::span(&data[order[it % data.size()]], 1));
    ++summary.updates;
    summary.skipped += st.skipped;
    if (opts.metrics) {
      opts.metrics->write({it + 1, pass + 1, "train", st.mean_loss(), st.error_rate(), st.skipped, clock.elapsed_ms()});
    }
  }

  summary.final = trainer.evaluate(data);
  if (opts.metrics) {
    const std::size_t passes = (iterations + data.size() - 1) / data.size();
    opts.metrics->write(test_row(iterations, passes, summary.final, clock));
  }
  return summary;
}

RunSummary run_epoch_training(Trainer& trainer, std::span<const Sample> train, std::span<const Sample> test,
                              const RunOptions& opts) {
  const TrainConfig& cfg = trainer.config();
  const Clock clock(opts.wall_time);
  std::mt19937_64 gen = order_stream(cfg.seed);
  RunSummary summary;
  std::vector<Sample> batch;
  batch.reserve(cfg.minibatch);

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    trainer.begin_epoch(train.size());
    const std::vector<std::size_t> order = seeded_permutation(train.size(), gen);
    for (std::size_t start = 0; start < order.size(); start += cfg.minibatch) {
      batch.clear();
      for (std::size_t k = start; k < std::min(order.size(), start + cfg.minibatch); ++k) {
        batch.push_back(train[order[k]]);
      }
      const BatchStats st = trainer.train_minibatch(batch);
      ++summary.updates;
      summary.skipped += st.skipped;
      if (opts.metrics) {
        opts.metrics->write(
            {summary.updates, epoch, "train", st.mean_loss(), st.error_rate(), st.skipped, clock.elapsed_ms()});
      }
    }
    summary.final = trainer.evaluate(test);
    if (opts.metrics) opts.metrics->write(test_row(summary.updates, epoch, summary.final, clock));
  }
  return summary;
}

}  // namespace aeq

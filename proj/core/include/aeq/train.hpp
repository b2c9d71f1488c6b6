#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "aeq/arch.hpp"
#include "aeq/eqprop.hpp"

namespace aeq {

struct Sample {
  std::vector<double> x;  // raw input volts, before doubling and bias
  std::vector<double> y;  // one-hot, or a single scalar target
};

/// Thrown when too many samples of an epoch fail to solve.
class TrainingAborted : public Error {
 public:
  using Error::Error;
};

struct TrainConfig {
  double beta = 0.01;  // magnitude, siemens
  bool random_beta_sign = true;
  /// Estimate each gradient from phases at +beta and -beta instead of 0 and beta.
  bool two_sided = false;
  /// Per weight layer; a single entry applies to every layer.
  std::vector<double> learning_rates{0.1, 0.05};
  std::size_t minibatch = 100;
  double clip_floor = 1e-7;
  std::size_t epochs = 1;
  /// Single-sample iterations for iteration-driven runs (the XOR preset).
  std::size_t iterations = 0;
  std::uint64_t seed = 1;
  LossSpec loss;
  bool legacy_factor = false;
  /// Weight each conductance gradient by its stage energy weight (see stage_energy_scales).
  bool stage_scaling = false;
  std::size_t threads = 1;
  /// Largest fraction of an epoch's samples allowed to fail before training aborts.
  double max_skip_fraction = 0.01;
  SolveOptions solve;

  static TrainConfig xor_preset();
  static TrainConfig mnist_preset();

  double learning_rate(std::size_t layer) const;
  void validate() const;
};

/// `key=value` lines, the same style as the architecture file.
TrainConfig parse_train_config(std::string_view text, TrainConfig base = {});
std::string serialize_train_config(const TrainConfig& cfg);

struct BatchStats {
  std::size_t samples = 0;
  std::size_t skipped = 0;
  std::size_t errors = 0;    // free-phase misclassifications among solved samples
  double loss_sum = 0.0;     // free-phase loss over solved samples
  std::size_t solver_iterations = 0;

  std::size_t solved() const { return samples - skipped; }
  double mean_loss() const { return solved() ? loss_sum / static_cast<double>(solved()) : 0.0; }
  double error_rate() const { return solved() ? static_cast<double>(errors) / static_cast<double>(solved()) : 0.0; }
};

struct Evaluation {
  double error_rate = 0.0;
  double mean_loss = 0.0;
  std::size_t samples = 0;
  std::size_t skipped = 0;  // counted as errors
};

/// Class index from per-class scores: a single score is thresholded (0.5 for
/// doubled squared-error outputs, 0 for logits); otherwise the argmax, ties to
/// the lowest index.
std::size_t decide_class(LossKind kind, std::span<const double> scores);
/// Class index a target encodes (argmax of one-hot, or scalar > 0.5).
std::size_t target_class(std::span<const double> y);

/// Owns a layered network and trains it by equilibrium propagation.
class Trainer {
 public:
  Trainer(ArchSpec spec, TrainConfig cfg, const WeightMatrices& initial);
  /// Resumes from a network built from `spec` (for instance a checkpoint).
  Trainer(ArchSpec spec, TrainConfig cfg, Netlist net);

  /// One SGD step over `batch`; weights are frozen while the gradients
  /// accumulate. Samples that fail to solve are skipped and counted.
  BatchStats train_minibatch(std::span<const Sample> batch);

  /// Summed gradient of the batch without updating, one matrix per layer.
  /// `signs` gives the beta sign per sample (empty: all positive).
  WeightMatrices batch_gradient(std::span<const Sample> batch, std::span<const double> signs, BatchStats* stats = nullptr);

  std::size_t predict(std::span<const double> x);
  Evaluation evaluate(std::span<const Sample> samples);

  const Netlist& net() const { return net_; }
  const NetworkLayout& layout() const { return layout_; }
  const ArchSpec& spec() const { return spec_; }
  const TrainConfig& config() const { return cfg_; }
  WeightMatrices weights() const { return read_weights(net_, layout_); }
  /// Draws the next beta sign from the trainer's seeded stream.
  double draw_beta_sign();

  /// Diagnostics for skipped samples go here when set.
  void set_log(std::ostream* log) { log_ = log; }
  std::size_t epoch_samples() const { return epoch_samples_; }
  std::size_t epoch_skipped() const { return epoch_skipped_; }
  /// Resets the per-epoch skip counters used for the abort rule.
  void begin_epoch(std::size_t planned_samples);

 private:
  struct SampleResult;
  void run_sample(PhaseRunner& runner, const Sample& s, double sign, SampleResult& out);

  ArchSpec spec_;
  TrainConfig cfg_;
  Netlist net_;
  NetworkLayout layout_;
  std::vector<double> energy_scale_;
  std::vector<PhaseRunner> runners_;
  std::mt19937_64 rng_;
  std::ostream* log_ = nullptr;
  std::size_t epoch_planned_ = 0;
  std::size_t epoch_samples_ = 0;
  std::size_t epoch_skipped_ = 0;
};

// ---- datasets ----

/// The four XOR rows with inputs shifted to +-2 V and scalar targets.
std::vector<Sample> xor_dataset();

/// Affine map to mean 0 and the given (population) standard deviation. A
/// constant vector maps to zeros.
std::vector<double> normalize_sample(std::span<const double> x, double target_std = 5.0);

/// Reads an IDX image/label pair of 28x28 digits. Pixels are scaled to [0, 1]
/// and then normalized; labels become one-hot over ten classes. `limit` caps
/// the number of samples read.
std::vector<Sample> load_mnist_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                                   std::optional<std::size_t> limit = std::nullopt);

/// Same as select_subset(load_mnist_idx(images, labels), n, seed) without
/// materializing the unselected samples.
std::vector<Sample> load_mnist_subset(const std::filesystem::path& images, const std::filesystem::path& labels,
                                      std::size_t n, std::uint64_t seed);

/// The first `n` samples of a seeded permutation.
std::vector<Sample> select_subset(std::span<const Sample> samples, std::size_t n, std::uint64_t seed);

/// Fisher-Yates permutation of 0..n-1 driven by unit_uniform, so the order
/// does not depend on the standard library's distributions.
std::vector<std::size_t> seeded_permutation(std::size_t n, std::mt19937_64& gen);

// ---- metrics ----

struct MetricsRow {
  std::size_t iteration = 0;
  std::size_t epoch = 0;
  std::string split;  // "train" or "test"
  double loss = 0.0;
  double error_rate = 0.0;
  std::size_t skipped_samples = 0;
  std::optional<double> wall_ms;
};

inline constexpr std::string_view kMetricsHeader = "iteration,epoch,split,loss,error_rate,skipped_samples,wall_ms";

std::string format_metrics_row(const MetricsRow& row);
/// Throws ParseError on a header or field mismatch.
std::vector<MetricsRow> parse_metrics_csv(std::string_view text);

/// Appends rows to a stream, flushing after each so a running job can be inspected.
class MetricsWriter {
 public:
  explicit MetricsWriter(std::ostream& out);
  void write(const MetricsRow& row);

 private:
  std::ostream& out_;
};

// ---- training runs ----

struct RunOptions {
  MetricsWriter* metrics = nullptr;
  /// Fill the wall_ms column (makes the CSV depend on the machine).
  bool wall_time = false;
};

struct RunSummary {
  Evaluation initial;  // test split before training, when measured
  Evaluation final;    // test split after training
  std::size_t updates = 0;
  std::size_t skipped = 0;
};

/// Single-sample SGD over the XOR table for `cfg.iterations` steps, visiting
/// the four rows in a fresh seeded order every pass. Logs one train row per
/// iteration and a test row (the whole table) before and after training.
RunSummary run_xor_training(Trainer& trainer, const RunOptions& opts = {});

/// `cfg.epochs` passes of minibatch SGD over `train` in a seeded order per
/// epoch. Logs one train row per minibatch and a test row per epoch.
RunSummary run_epoch_training(Trainer& trainer, std::span<const Sample> train, std::span<const Sample> test,
                              const RunOptions& opts = {});

// ---- checkpoints ----

/// Writes the netlist to `path` and the architecture to `path` + ".arch".
void save_checkpoint(const std::filesystem::path& path, const Netlist& net, const ArchSpec& spec);
struct Checkpoint {
  Netlist net;
  ArchSpec spec;
};
/// Reads both files; `spec_override` replaces the sidecar. Throws on mismatch.
Checkpoint load_checkpoint(const std::filesystem::path& path, std::optional<ArchSpec> spec_override = std::nullopt);

std::string read_text_file(const std::filesystem::path& path);

}  // namespace aeq

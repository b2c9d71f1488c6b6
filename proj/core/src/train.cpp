#include "aeq/train.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <ostream>
#include <thread>

namespace aeq {

TrainConfig TrainConfig::xor_preset() {
  TrainConfig c;
  c.beta = 0.001;
  c.random_beta_sign = false;
  c.learning_rates = {0.001};
  c.minibatch = 1;
  c.epochs = 0;
  c.iterations = 1000;
  return c;
}

TrainConfig TrainConfig::mnist_preset() {
  TrainConfig c;
  c.beta = 0.01;
  c.random_beta_sign = true;
  c.learning_rates = {0.1, 0.05};
  c.minibatch = 100;
  c.epochs = 1;
  return c;
}

double TrainConfig::learning_rate(std::size_t layer) const {
  if (learning_rates.size() == 1) return learning_rates.front();
  if (layer >= learning_rates.size()) {
    throw Error("no learning rate for weight layer " + std::to_string(layer + 1));
  }
  return learning_rates[layer];
}

void TrainConfig::validate() const {
  if (!(beta > 0.0) || !std::isfinite(beta)) throw Error("beta must be positive");
  if (learning_rates.empty()) throw Error("at least one learning rate is required");
  for (double a : learning_rates) {
    if (!(a > 0.0) || !std::isfinite(a)) throw Error("learning rates must be positive");
  }
  if (minibatch < 1) throw Error("minibatch size must be at least 1");
  if (!(clip_floor > 0.0)) throw Error("clip floor must be positive");
  if (!(loss.weight_decay >= 0.0)) throw Error("weight decay must be non-negative");
  if (threads < 1) throw Error("thread count must be at least 1");
  if (!(max_skip_fraction >= 0.0)) throw Error("max_skip_fraction must be non-negative");
  if (!(solve.residual_tol > 0.0) || solve.max_iters < 1) throw Error("invalid solver options");
}

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_value(std::string_view key, std::string_view text) {
  if constexpr (std::is_floating_point_v<T>) {
    if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  }
  T v{};
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (text.empty() || ec != std::errc{} || ptr != text.data() + text.size()) {
    throw Error("bad value for " + std::string(key) + ": '" + std::string(text) + "'");
  }
  return v;
}

bool parse_flag(std::string_view key, std::string_view text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw Error("bad boolean for " + std::string(key) + ": '" + std::string(text) + "'");
}

std::string shortest(double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

}  // namespace

TrainConfig parse_train_config(std::string_view text, TrainConfig c) {
  std::size_t pos = 0, line_no = 0;
  while (pos < text.size()) {
    const std::size_t end = std::min(text.find('\n', pos), text.size());
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ParseError(line_no, "expected key=value");
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    try {
      if (key == "beta") {
        c.beta = parse_value<double>(key, value);
      } else if (key == "random_beta_sign") {
        c.random_beta_sign = parse_flag(key, value);
      } else if (key == "two_sided") {
        c.two_sided = parse_flag(key, value);
      } else if (key == "learning_rates") {
        c.learning_rates.clear();
        std::size_t p = 0;
        while (p <= value.size()) {
          const std::size_t q = std::min(value.find(',', p), value.size());
          c.learning_rates.push_back(parse_value<double>(key, trim(value.substr(p, q - p))));
          p = q + 1;
        }
      } else if (key == "minibatch") {
        c.minibatch = parse_value<std::size_t>(key, value);
      } else if (key == "clip_floor") {
        c.clip_floor = parse_value<double>(key, value);
      } else if (key == "epochs") {
        c.epochs = parse_value<std::size_t>(key, value);
      } else if (key == "iterations") {
        c.iterations = parse_value<std::size_t>(key, value);
      } else if (key == "seed") {
        c.seed = parse_value<std::uint64_t>(key, value);
      } else if (key == "loss") {
        c.loss.kind = parse_loss_kind(value);
      } else if (key == "weight_decay") {
        c.loss.weight_decay = parse_value<double>(key, value);
      } else if (key == "legacy_factor") {
        c.legacy_factor = parse_flag(key, value);
      } else if (key == "stage_scaling") {
        c.stage_scaling = parse_flag(key, value);
      } else if (key == "threads") {
        c.threads = parse_value<std::size_t>(key, value);
      } else if (key == "max_skip_fraction") {
        c.max_skip_fraction = parse_value<double>(key, value);
      } else if (key == "solve.residual_tol") {
        c.solve.residual_tol = parse_value<double>(key, value);
      } else if (key == "solve.max_iters") {
        c.solve.max_iters = parse_value<int>(key, value);
      } else {
        throw Error("unknown key '" + std::string(key) + "'");
      }
    } catch (const ParseError&) {
      throw;
    } catch (const Error& e) {
      throw ParseError(line_no, e.what());
    }
  }
  c.validate();
  return c;
}

std::string serialize_train_config(const TrainConfig& c) {
  std::string out;
  auto put = [&](std::string_view k, const std::string& v) {
    out.append(k).append("=").append(v).append("\n");
  };
  auto flag = [](bool b) { return std::string(b ? "true" : "false"); };
  put("beta", shortest(c.beta));
  put("random_beta_sign", flag(c.random_beta_sign));
  put("two_sided", flag(c.two_sided));
  std::string lrs;
  for (std::size_t i = 0; i < c.learning_rates.size(); ++i) lrs += (i ? "," : "") + shortest(c.learning_rates[i]);
  put("learning_rates", lrs);
  put("minibatch", std::to_string(c.minibatch));
  put("clip_floor", shortest(c.clip_floor));
  put("epochs", std::to_string(c.epochs));
  put("iterations", std::to_string(c.iterations));
  put("seed", std::to_string(c.seed));
  put("loss", std::string(to_string(c.loss.kind)));
  put("weight_decay", shortest(c.loss.weight_decay));
  put("legacy_factor", flag(c.legacy_factor));
  put("stage_scaling", flag(c.stage_scaling));
  put("threads", std::to_string(c.threads));
  put("max_skip_fraction", shortest(c.max_skip_fraction));
  put("solve.residual_tol", shortest(c.solve.residual_tol));
  put("solve.max_iters", std::to_string(c.solve.max_iters));
  return out;
}

std::size_t decide_class(LossKind kind, std::span<const double> scores) {
  if (scores.empty()) throw Error("no class scores");
  if (scores.size() == 1) {
    const double threshold = kind == LossKind::SquaredErrorDoubled ? 0.5 : 0.0;
    return scores[0] > threshold ? 1 : 0;
  }
  return static_cast<std::size_t>(std::max_element(scores.begin(), scores.end()) - scores.begin());
}

std::size_t target_class(std::span<const double> y) {
  if (y.empty()) throw Error("empty target");
  if (y.size() == 1) return y[0] > 0.5 ? 1 : 0;
  return static_cast<std::size_t>(std::max_element(y.begin(), y.end()) - y.begin());
}

struct Trainer::SampleResult {
  bool ok = false;
  bool correct = false;
  double loss = 0.0;
  int iterations = 0;
  std::vector<double> grad;  // by component index
  std::string error;
};

Trainer::Trainer(ArchSpec spec, TrainConfig cfg, const WeightMatrices& initial)
    : Trainer(spec, cfg, build_layered_network(spec, initial).net) {}

Trainer::Trainer(ArchSpec spec, TrainConfig cfg, Netlist net)
    : spec_(std::move(spec)), cfg_(std::move(cfg)), net_(std::move(net)), rng_(cfg_.seed) {
  spec_.validate();
  cfg_.validate();
  layout_ = recover_layout(net_, spec_);
  if (cfg_.learning_rates.size() != 1 && cfg_.learning_rates.size() != spec_.layer_count()) {
    throw Error("expected 1 or " + std::to_string(spec_.layer_count()) + " learning rates, got " +
                std::to_string(cfg_.learning_rates.size()));
  }
  target_size(cfg_.loss.kind, spec_.output_count());
  if (cfg_.stage_scaling) energy_scale_ = stage_energy_scales(net_);
  runners_.emplace_back(net_);
  for (std::size_t t = 1; t < cfg_.threads; ++t) runners_.push_back(runners_.front());
}

double Trainer::draw_beta_sign() {
  if (!cfg_.random_beta_sign) return 1.0;
  return (rng_() >> 63) ? -1.0 : 1.0;
}

void Trainer::begin_epoch(std::size_t planned_samples) {
  epoch_planned_ = planned_samples;
  epoch_samples_ = 0;
  epoch_skipped_ = 0;
}

void Trainer::run_sample(PhaseRunner& runner, const Sample& s, double sign, SampleResult& out) {
  out = SampleResult{};
  try {
    const std::vector<double> x = encode_input(s.x, spec_);
    PhaseOptions opts{cfg_.solve};
    const PhaseRecord free = runner.run_free(net_, x, opts);
    out.iterations = free.iterations;
    const std::vector<double> scores = class_scores(cfg_.loss.kind, free.outputs);
    out.correct = decide_class(cfg_.loss.kind, scores) == target_class(s.y);

    const double beta = sign * cfg_.beta;
    const Nudge nudge = nudge_currents(cfg_.loss, free.outputs, s.y, beta);
    out.loss = nudge.loss;
    GradientOptions gopts{energy_scale_, cfg_.loss.weight_decay, cfg_.legacy_factor};
    if (cfg_.two_sided) {
      const PhaseRecord plus = runner.run_nudged(net_, free, nudge.currents, beta, opts);
      const Nudge back = nudge_currents(cfg_.loss, free.outputs, s.y, -beta);
      const PhaseRecord minus = runner.run_nudged(net_, free, back.currents, -beta, opts);
      out.iterations += plus.iterations + minus.iterations;
      out.grad = conductance_gradients_two_sided(net_, plus, minus, gopts);
    } else {
      const PhaseRecord nudged = runner.run_nudged(net_, free, nudge.currents, beta, opts);
      out.iterations += nudged.iterations;
      out.grad = conductance_gradients(net_, free, nudged, gopts);
    }
    out.ok = true;
  } catch (const SolveError& e) {
    out.ok = false;
    out.error = e.what();
  }
}

WeightMatrices Trainer::batch_gradient(std::span<const Sample> batch, std::span<const double> signs,
                                       BatchStats* stats) {
  if (!signs.empty() && signs.size() != batch.size()) throw Error("one beta sign per sample is required");

  // Canonical order, so the floating-point sum does not depend on how the
  // batch was shuffled or scheduled.
  std::vector<std::size_t> order(batch.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (batch[a].x != batch[b].x) return batch[a].x < batch[b].x;
    if (batch[a].y != batch[b].y) return batch[a].y < batch[b].y;
    return (signs.empty() ? 1.0 : signs[a]) < (signs.empty() ? 1.0 : signs[b]);
  });

  WeightMatrices sum;
  for (std::size_t l = 0; l < layout_.weights.size(); ++l) {
    sum.push_back(Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(layout_.rows[l]),
                                        static_cast<Eigen::Index>(layout_.cols[l])));
  }
  BatchStats local;
  const std::size_t workers = runners_.size();
  std::vector<SampleResult> results(workers);
  for (std::size_t wave = 0; wave < order.size(); wave += workers) {
    const std::size_t count = std::min(workers, order.size() - wave);
    auto job = [&](std::size_t t) {
      const std::size_t i = order[wave + t];
      run_sample(runners_[t], batch[i], signs.empty() ? 1.0 : signs[i], results[t]);
    };
    if (count == 1) {
      job(0);
    } else {
      std::vector<std::jthread> pool;
      for (std::size_t t = 1; t < count; ++t) pool.emplace_back(job, t);
      job(0);
    }
    for (std::size_t t = 0; t < count; ++t) {
      const SampleResult& r = results[t];
      ++local.samples;
      if (!r.ok) {
        ++local.skipped;
        if (log_) *log_ << "skipped sample: " << r.error << '\n';
        continue;
      }
      local.loss_sum += r.loss;
      local.errors += r.correct ? 0 : 1;
      local.solver_iterations += static_cast<std::size_t>(r.iterations);
      for (std::size_t l = 0; l < layout_.weights.size(); ++l) {
        double* dst = sum[l].data();
        const auto& comps = layout_.weights[l];
        const std::size_t cols = layout_.cols[l];
        const std::size_t rows = layout_.rows[l];
        // Eigen storage is column-major; the layout is row-major.
        for (std::size_t k = 0; k < comps.size(); ++k) dst[(k % cols) * rows + k / cols] += r.grad[comps[k]];
      }
    }
  }
  if (stats) *stats = local;
  return sum;
}

BatchStats Trainer::train_minibatch(std::span<const Sample> batch) {
  std::vector<double> signs(batch.size());
  for (double& s : signs) s = draw_beta_sign();
  BatchStats stats;
  const WeightMatrices grad = batch_gradient(batch, signs, &stats);

  if (stats.solved() > 0) {
    const double inv_m = 1.0 / static_cast<double>(stats.solved());
    for (std::size_t l = 0; l < layout_.weights.size(); ++l) {
      const double step = cfg_.learning_rate(l) * inv_m;
      const auto& comps = layout_.weights[l];
      const std::size_t cols = layout_.cols[l];
      for (std::size_t k = 0; k < comps.size(); ++k) {
        const auto i = static_cast<Eigen::Index>(k / cols), j = static_cast<Eigen::Index>(k % cols);
        const double g = std::get<Resistor>(net_.params(comps[k])).conductance;
        net_.set_conductance(comps[k], std::max(cfg_.clip_floor, g - step * grad[l](i, j)));
      }
    }
  }

  epoch_samples_ += stats.samples;
  epoch_skipped_ += stats.skipped;
  const double denom = static_cast<double>(std::max(epoch_planned_, epoch_samples_));
  if (static_cast<double>(epoch_skipped_) > cfg_.max_skip_fraction * denom) {
    throw TrainingAborted("training aborted: " + std::to_string(epoch_skipped_) + " of " +
                          std::to_string(epoch_samples_) + " samples failed to solve this epoch");
  }
  return stats;
}

std::size_t Trainer::predict(std::span<const double> x) {
  const std::vector<double> in = encode_input(x, spec_);
  const PhaseRecord free = runners_.front().run_free(net_, in, PhaseOptions{cfg_.solve});
  return decide_class(cfg_.loss.kind, class_scores(cfg_.loss.kind, free.outputs));
}

Evaluation Trainer::evaluate(std::span<const Sample> samples) {
  Evaluation ev;
  std::size_t wrong = 0;
  double loss_sum = 0.0;
  for (const Sample& s : samples) {
    ++ev.samples;
    try {
      const std::vector<double> in = encode_input(s.x, spec_);
      const PhaseRecord free = runners_.front().run_free(net_, in, PhaseOptions{cfg_.solve});
      const auto scores = class_scores(cfg_.loss.kind, free.outputs);
      if (decide_class(cfg_.loss.kind, scores) != target_class(s.y)) ++wrong;
      loss_sum += loss_value(cfg_.loss, free.outputs, s.y);
    } catch (const SolveError& e) {
      ++ev.skipped;
      ++wrong;
      if (log_) *log_ << "evaluation sample failed: " << e.what() << '\n';
    }
  }
  if (ev.samples > 0) {
    ev.error_rate = static_cast<double>(wrong) / static_cast<double>(ev.samples);
    const std::size_t solved = ev.samples - ev.skipped;
    ev.mean_loss = solved ? loss_sum / static_cast<double>(solved) : 0.0;
  }
  return ev;
}

}  // namespace aeq

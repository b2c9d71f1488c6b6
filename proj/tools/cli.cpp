#include "cli.hpp"

#include <CLI11.hpp>
#include <aeq/oracle.hpp>
#include <aeq/train.hpp>
#include <algorithm>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <thread>

namespace aeq::cli {

namespace fs = std::filesystem;

namespace {

/// Thrown for bad flags, unreadable files and malformed input (exit 1).
struct InputError : Error {
  using Error::Error;
};

/// Thrown when a solve or a check fails numerically (exit 2).
struct NumericalFailure : Error {
  using Error::Error;
};

std::string num(double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::string fixed(double v, int digits = 12) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

std::string slurp(const fs::path& path) {
  if (!fs::exists(path)) throw InputError("no such file: " + path.string());
  try {
    return read_text_file(path);
  } catch (const Error& e) {
    throw InputError(e.what());
  }
}

Netlist load_netlist(const fs::path& path) {
  const std::string text = slurp(path);
  Netlist net;
  try {
    net = parse_netlist(text);
  } catch (const Error& e) {
    throw InputError(path.string() + ": " + e.what());
  }
  return net;
}

std::size_t resolve_threads(std::optional<std::size_t> flag) {
  if (flag) {
    if (*flag == 0) throw InputError("--threads must be at least 1");
    return *flag;
  }
  if (const char* env = std::getenv("EQPROP_THREADS"); env && *env) {
    std::size_t n = 0;
    const std::string_view s(env);
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), n);
    if (ec != std::errc{} || ptr != s.data() + s.size() || n == 0) {
      throw InputError("EQPROP_THREADS must be a positive integer, got '" + std::string(s) + "'");
    }
    return n;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Output goes to `path` when given, else to the command's stream.
class Sink {
 public:
  Sink(const std::string& path, std::ostream& fallback) {
    if (path.empty()) {
      out_ = &fallback;
      return;
    }
    file_.open(path, std::ios::binary | std::ios::trunc);
    if (!file_) throw InputError("cannot write " + path);
    out_ = &file_;
  }
  std::ostream& operator*() { return *out_; }

 private:
  std::ofstream file_;
  std::ostream* out_ = nullptr;
};

// ---- solve ----

struct SolveArgs {
  std::string net;
  std::string out;
  int max_iters = 200;
  double tol = 1e-9;
};

int cmd_solve(const SolveArgs& a, std::ostream& out, std::ostream& err) {
  const Netlist net = load_netlist(a.net);
  if (const auto problems = validate(net); !problems.empty()) {
    for (const auto& p : problems) err << a.net << ": " << p << '\n';
    throw InputError("invalid netlist");
  }
  SolveOptions opts;
  opts.max_iters = a.max_iters;
  opts.residual_tol = a.tol;
  if (!(opts.residual_tol > 0.0) || opts.max_iters < 1) throw InputError("--tol and --max-iters must be positive");

  SolveResult r;
  try {
    r = solve_steady_state(net, opts);
  } catch (const SolveError& e) {
    throw NumericalFailure(e.what());
  }

  Sink sink(a.out, out);
  std::ostream& o = *sink;
  o << "# node voltages (V)\n";
  for (NodeId n : net.nodes()) o << net.node_label(n) << ' ' << fixed(r.voltages[n]) << '\n';
  o << "# branch currents (A)\n";
  for (std::size_t i = 0; i < net.size(); ++i) o << net.component(i).name << ' ' << fixed(r.branch_currents[i]) << '\n';
  o << "iterations " << r.iterations << '\n';
  o << "max_residual " << fixed(r.max_residual, 6) << '\n';
  o << "converged " << (r.converged ? "yes" : "no") << '\n';
  if (!r.converged) {
    throw NumericalFailure("no convergence after " + std::to_string(r.iterations) + " iterations; worst residual " +
                           fixed(r.max_residual, 6) + " A at node " + net.node_label(r.worst_node));
  }
  return kOk;
}

// ---- gradcheck ----

struct GradcheckArgs {
  std::string net;
  std::string loss = "squared";
  double beta = 1e-4;
  std::size_t samples = 1;
  std::uint64_t seed = 1;
  double h_rel = 1e-6;
  bool one_sided = false;
  double input_range = 2.0;
};

std::vector<double> random_target(LossKind kind, std::size_t size, std::mt19937_64& gen) {
  std::vector<double> y(size);
  for (double& v : y) v = unit_uniform(gen());
  if (kind == LossKind::SoftmaxCrossEntropy) {
    double sum = 0.0;
    for (double v : y) sum += v;
    for (double& v : y) v /= sum;
  }
  return y;
}

int cmd_gradcheck(const GradcheckArgs& a, std::ostream& out, std::ostream&) {
  if (a.beta == 0.0 || !std::isfinite(a.beta)) throw InputError("beta must be nonzero");
  if (a.samples == 0) throw InputError("--samples must be at least 1");
  if (!(a.h_rel > 0.0)) throw InputError("--h-rel must be positive");
  const Netlist net = load_netlist(a.net);
  if (const auto problems = validate(net); !problems.empty()) throw InputError(a.net + ": " + problems.front());
  if (net.input_nodes().empty() || net.output_nodes().empty()) {
    throw InputError(a.net + ": gradcheck needs INPUT and OUTPUT nodes");
  }
  LossSpec loss;
  try {
    loss.kind = parse_loss_kind(a.loss);
  } catch (const Error& e) {
    throw InputError(e.what());
  }
  std::size_t target_len = 0;
  try {
    target_len = target_size(loss.kind, net.output_nodes().size());
  } catch (const Error& e) {
    throw InputError(e.what());
  }

  std::vector<double> scale;
  try {
    scale = stage_energy_scales(net);
  } catch (const Error& e) {
    throw InputError(e.what());
  }
  std::vector<oracle::ParamRef> params;
  std::vector<std::size_t> index;
  for (std::size_t i = 0; i < net.size(); ++i) {
    if (net.component(i).is<Resistor>()) {
      params.push_back({net.component(i).name});
      index.push_back(i);
    }
  }
  if (params.empty()) throw InputError(a.net + ": no resistors to check");

  std::mt19937_64 gen(a.seed);
  PhaseRunner runner(net);
  PhaseOptions po;
  po.solve.residual_tol = 1e-12;
  po.solve.max_iters = 500;
  const GradientOptions gopts{scale};
  const oracle::FDSpec fd_spec{a.h_rel, 1e-12};

  out << "sample component eqprop fd rel_err\n";
  std::vector<double> errors;
  for (std::size_t s = 0; s < a.samples; ++s) {
    std::vector<double> x(net.input_nodes().size());
    for (double& v : x) v = a.input_range * (2.0 * unit_uniform(gen()) - 1.0);
    const std::vector<double> y = random_target(loss.kind, target_len, gen);
    std::vector<double> est, fd;
    try {
      const PhaseRecord free = runner.run_free(net, x, po);
      const Nudge up = nudge_currents(loss, free.outputs, y, a.beta);
      const PhaseRecord plus = runner.run_nudged(net, free, up.currents, a.beta, po);
      if (a.one_sided) {
        est = conductance_gradients(net, free, plus, gopts);
      } else {
        const Nudge down = nudge_currents(loss, free.outputs, y, -a.beta);
        const PhaseRecord minus = runner.run_nudged(net, free, down.currents, -a.beta, po);
        est = conductance_gradients_two_sided(net, plus, minus, gopts);
      }
      fd = oracle::fd_loss_gradients(net, {x, y}, loss, params, fd_spec);
    } catch (const SolveError& e) {
      throw NumericalFailure(std::string("sample ") + std::to_string(s) + ": " + e.what());
    }
    std::vector<double> picked(index.size());
    for (std::size_t k = 0; k < index.size(); ++k) picked[k] = est[index[k]];
    const std::vector<double> rel = oracle::relative_errors(picked, fd);
    for (std::size_t k = 0; k < index.size(); ++k) {
      out << s << ' ' << params[k].component << ' ' << fixed(picked[k], 10) << ' ' << fixed(fd[k], 10) << ' '
          << fixed(rel[k], 3) << '\n';
    }
    errors.insert(errors.end(), rel.begin(), rel.end());
  }
  const oracle::ErrorSummary sum = oracle::summarize_errors(errors);
  const bool pass = sum.median < 1e-3 && sum.max < 1e-1;
  out << "parameters " << sum.count << " median " << fixed(sum.median, 3) << " p95 " << fixed(sum.p95, 3) << " max "
      << fixed(sum.max, 3) << '\n';
  out << (pass ? "PASS" : "FAIL") << " (median < 1e-3 and max < 1e-1)\n";
  return pass ? kOk : kNumericalFailure;
}

// ---- training ----

struct TrainArgs {
  std::optional<std::size_t> threads;
  std::string config;
  std::string metrics;
  std::string checkpoint;
  std::optional<std::uint64_t> seed;
  bool wall_time = false;
};

TrainConfig load_config(const std::string& path, TrainConfig base) {
  if (path.empty()) return base;
  try {
    return parse_train_config(slurp(path), base);
  } catch (const InputError&) {
    throw;
  } catch (const Error& e) {
    throw InputError(path + ": " + e.what());
  }
}

ArchSpec load_arch(const std::string& path, ArchSpec base) {
  if (path.empty()) return base;
  try {
    return parse_arch(slurp(path));
  } catch (const InputError&) {
    throw;
  } catch (const Error& e) {
    throw InputError(path + ": " + e.what());
  }
}

struct MetricsFile {
  explicit MetricsFile(const std::string& path) : file(path, std::ios::binary | std::ios::trunc) {
    if (!file) throw InputError("cannot write " + path);
    writer.emplace(file);
  }
  std::ofstream file;
  std::optional<MetricsWriter> writer;
};

void report_final(std::ostream& out, const Evaluation& ev) {
  const std::size_t wrong = static_cast<std::size_t>(std::lround(ev.error_rate * static_cast<double>(ev.samples)));
  out << "final test error_rate " << num(ev.error_rate) << " (" << (ev.samples - wrong) << "/" << ev.samples
      << " correct)\n";
  out << "final test loss " << num(ev.mean_loss) << '\n';
  if (ev.skipped) out << "evaluation samples that failed to solve: " << ev.skipped << '\n';
}

struct XorArgs : TrainArgs {
  std::size_t iters = 1000;
};

int cmd_train_xor(const XorArgs& a, std::ostream& out, std::ostream& err) {
  const ArchSpec spec = ArchSpec::xor_preset();
  TrainConfig cfg = load_config(a.config, TrainConfig::xor_preset());
  cfg.iterations = a.iters;
  if (a.seed) cfg.seed = *a.seed;
  cfg.threads = resolve_threads(a.threads);

  Trainer trainer(spec, cfg, init_conductances(spec, cfg.seed));
  trainer.set_log(&err);
  MetricsFile metrics(a.metrics);
  RunSummary sum;
  try {
    sum = run_xor_training(trainer, {&*metrics.writer, a.wall_time});
  } catch (const TrainingAborted& e) {
    throw NumericalFailure(e.what());
  }
  save_checkpoint(a.checkpoint, trainer.net(), spec);

  out << "iterations " << sum.updates << '\n';
  out << "initial test loss " << num(sum.initial.mean_loss) << '\n';
  out << "x1 x2 target score class\n";
  for (const Sample& s : xor_dataset()) {
    const PhaseRecord free = run_free_phase(trainer.net(), encode_input(s.x, spec), PhaseOptions{cfg.solve});
    const double score = class_scores(cfg.loss.kind, free.outputs).front();
    out << num(s.x[0]) << ' ' << num(s.x[1]) << ' ' << num(s.y[0]) << ' ' << fixed(score, 6) << ' '
        << decide_class(cfg.loss.kind, std::span(&score, 1)) << '\n';
  }
  report_final(out, sum.final);
  out << "metrics written to " << a.metrics << "\ncheckpoint written to " << a.checkpoint << '\n';
  return kOk;
}

struct MnistArgs : TrainArgs {
  std::string data = "data/mnist";
  std::string arch;
  std::optional<std::size_t> train;
  std::size_t test = 1000;
  std::optional<std::size_t> epochs;
};

struct MnistFiles {
  fs::path train_images, train_labels, test_images, test_labels;
};

MnistFiles mnist_files(const fs::path& dir) {
  MnistFiles f{dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte", dir / "t10k-images-idx3-ubyte",
               dir / "t10k-labels-idx1-ubyte"};
  for (const fs::path* p : {&f.train_images, &f.train_labels, &f.test_images, &f.test_labels}) {
    if (!fs::exists(*p)) throw InputError("missing MNIST file: " + p->string());
  }
  return f;
}

std::vector<Sample> load_test_split(const MnistFiles& f, std::size_t count) {
  try {
    std::vector<Sample> test = load_mnist_idx(f.test_images, f.test_labels, count);
    if (test.size() < count) {
      throw InputError("requested " + std::to_string(count) + " test samples but " + f.test_images.string() +
                       " holds " + std::to_string(test.size()));
    }
    return test;
  } catch (const InputError&) {
    throw;
  } catch (const Error& e) {
    throw InputError(e.what());
  }
}

int cmd_train_mnist(const MnistArgs& a, std::ostream& out, std::ostream& err) {
  const ArchSpec spec = load_arch(a.arch, ArchSpec::mnist_preset());
  if (spec.raw_input_dim != 784 || spec.num_classes != 10) {
    throw InputError("MNIST needs raw_input_dim=784 and num_classes=10");
  }
  TrainConfig cfg = load_config(a.config, TrainConfig::mnist_preset());
  if (a.epochs) cfg.epochs = *a.epochs;
  if (a.seed) cfg.seed = *a.seed;
  cfg.threads = resolve_threads(a.threads);

  const MnistFiles files = mnist_files(a.data);
  std::vector<Sample> train, test;
  try {
    train = a.train ? load_mnist_subset(files.train_images, files.train_labels, *a.train, cfg.seed)
                    : load_mnist_idx(files.train_images, files.train_labels);
  } catch (const Error& e) {
    throw InputError(e.what());
  }
  test = load_test_split(files, a.test);
  out << "training on " << train.size() << " samples, testing on " << test.size() << ", " << cfg.epochs
      << " epoch(s), minibatch " << cfg.minibatch << ", " << cfg.threads << " thread(s)\n";

  Trainer trainer(spec, cfg, init_conductances(spec, cfg.seed));
  trainer.set_log(&err);
  MetricsFile metrics(a.metrics);
  RunSummary sum;
  try {
    sum = run_epoch_training(trainer, train, test, {&*metrics.writer, a.wall_time});
  } catch (const TrainingAborted& e) {
    throw NumericalFailure(e.what());
  }
  save_checkpoint(a.checkpoint, trainer.net(), spec);
  out << "minibatch updates " << sum.updates << ", skipped samples " << sum.skipped << '\n';
  report_final(out, sum.final);
  out << "metrics written to " << a.metrics << "\ncheckpoint written to " << a.checkpoint << '\n';
  return kOk;
}

// ---- eval / export ----

struct EvalArgs {
  std::string checkpoint;
  std::string arch;
  std::string config;
  std::string data;
  std::size_t test = 1000;
};

int cmd_eval(const EvalArgs& a, std::ostream& out, std::ostream& err) {
  std::optional<ArchSpec> spec_override;
  if (!a.arch.empty()) spec_override = load_arch(a.arch, {});
  if (!fs::exists(a.checkpoint)) throw InputError("no such file: " + a.checkpoint);
  Checkpoint ck;
  try {
    ck = load_checkpoint(a.checkpoint, spec_override);
  } catch (const Error& e) {
    throw InputError(e.what());
  }

  std::vector<Sample> data;
  TrainConfig base;
  if (a.data == "xor") {
    data = xor_dataset();
    base = TrainConfig::xor_preset();
  } else {
    data = load_test_split(mnist_files(a.data), a.test);
    base = TrainConfig::mnist_preset();
  }
  const TrainConfig cfg = load_config(a.config, base);
  if (!data.empty() && data.front().x.size() != ck.spec.raw_input_dim) {
    throw InputError("dataset has " + std::to_string(data.front().x.size()) + " inputs, checkpoint expects " +
                     std::to_string(ck.spec.raw_input_dim));
  }
  Trainer trainer(ck.spec, cfg, std::move(ck.net));
  trainer.set_log(&err);
  const Evaluation ev = trainer.evaluate(data);
  out << "samples " << ev.samples << '\n';
  out << "error_rate " << num(ev.error_rate) << '\n';
  out << "loss " << num(ev.mean_loss) << '\n';
  out << "skipped " << ev.skipped << '\n';
  return kOk;
}

struct ExportArgs {
  std::string metrics;
  std::string format = "csv";
  std::string out;
};

int cmd_export(const ExportArgs& a, std::ostream& out, std::ostream&) {
  if (a.format != "csv") throw InputError("unsupported format '" + a.format + "' (expected csv)");
  const std::string text = slurp(a.metrics);
  std::vector<MetricsRow> rows;
  if (text.find_first_not_of(" \t\r\n") != std::string::npos) {
    try {
      rows = parse_metrics_csv(text);
    } catch (const Error& e) {
      throw InputError(a.metrics + ": " + e.what());
    }
  }
  Sink sink(a.out, out);
  *sink << kMetricsHeader << '\n';
  for (const MetricsRow& r : rows) *sink << format_metrics_row(r) << '\n';
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Analog equilibrium-propagation simulator and trainer", "aeq"};
  app.require_subcommand(1);
  std::optional<std::size_t> threads;
  app.add_option("--threads", threads, "Worker threads (default: $EQPROP_THREADS, else all cores)");

  SolveArgs solve;
  auto* s = app.add_subcommand("solve", "Solve a netlist's steady state");
  s->add_option("--net", solve.net, "Netlist file")->required();
  s->add_option("--out", solve.out, "Write the table here instead of stdout");
  s->add_option("--max-iters", solve.max_iters, "Newton iteration limit")->capture_default_str();
  s->add_option("--tol", solve.tol, "KCL residual tolerance in amperes")->capture_default_str();

  GradcheckArgs gc;
  auto* g = app.add_subcommand("gradcheck", "Compare EqProp conductance gradients with finite differences");
  g->add_option("--net", gc.net, "Netlist with INPUT and OUTPUT nodes")->required();
  g->add_option("--loss", gc.loss, "squared | softmax | bce")->capture_default_str();
  g->add_option("--beta", gc.beta, "Nudge strength (siemens)")->capture_default_str();
  g->add_option("--samples", gc.samples, "Random input/target draws")->capture_default_str();
  g->add_option("--seed", gc.seed, "Seed for the draws")->capture_default_str();
  g->add_option("--h-rel", gc.h_rel, "Relative finite-difference step")->capture_default_str();
  g->add_option("--input-range", gc.input_range, "Inputs are drawn from [-r, r] volts")->capture_default_str();
  g->add_flag("--one-sided", gc.one_sided, "Use phases at 0 and beta instead of +beta and -beta");

  XorArgs xa;
  xa.metrics = "xor-metrics.csv";
  xa.checkpoint = "xor.net";
  auto* x = app.add_subcommand("train-xor", "Train the two-hidden-neuron XOR network");
  x->add_option("--iters", xa.iters, "Single-sample iterations")->capture_default_str();
  x->add_option("--seed", xa.seed, "Seed for initialization and sample order");
  x->add_option("--config", xa.config, "Training config file (key=value)");
  x->add_option("--metrics", xa.metrics, "Metrics CSV path")->capture_default_str();
  x->add_option("--checkpoint", xa.checkpoint, "Checkpoint path (netlist; architecture in <path>.arch)")
      ->capture_default_str();
  x->add_flag("--wall-time", xa.wall_time, "Fill the wall_ms column");

  MnistArgs ma;
  ma.metrics = "mnist-metrics.csv";
  ma.checkpoint = "mnist.net";
  auto* m = app.add_subcommand("train-mnist", "Train a layered network on MNIST");
  m->add_option("--data", ma.data, "Directory holding the four IDX files")->capture_default_str();
  m->add_option("--arch", ma.arch, "Architecture file (key=value)");
  m->add_option("--config", ma.config, "Training config file (key=value)");
  m->add_option("--train", ma.train, "Seeded training subset size (default: whole file)");
  m->add_option("--test", ma.test, "Leading t10k samples to evaluate")->capture_default_str();
  m->add_option("--epochs", ma.epochs, "Passes over the training subset");
  m->add_option("--seed", ma.seed, "Seed for subset, initialization and order");
  m->add_option("--metrics", ma.metrics, "Metrics CSV path")->capture_default_str();
  m->add_option("--checkpoint", ma.checkpoint, "Checkpoint path")->capture_default_str();
  m->add_flag("--wall-time", ma.wall_time, "Fill the wall_ms column");

  EvalArgs ea;
  auto* e = app.add_subcommand("eval", "Error rate of a checkpoint");
  e->add_option("--checkpoint", ea.checkpoint, "Checkpoint netlist")->required();
  e->add_option("--arch", ea.arch, "Architecture file overriding <checkpoint>.arch");
  e->add_option("--config", ea.config, "Training config (loss kind, solver options)");
  e->add_option("--data", ea.data, "'xor' or an MNIST directory")->required();
  e->add_option("--test", ea.test, "Leading t10k samples to evaluate")->capture_default_str();

  ExportArgs xp;
  auto* p = app.add_subcommand("export", "Validate a metrics CSV and write it in canonical form");
  p->add_option("--metrics", xp.metrics, "Metrics CSV")->required();
  p->add_option("--format", xp.format, "Output format (csv)")->capture_default_str();
  p->add_option("--out", xp.out, "Write here instead of stdout");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& ex) {
    err << "error: " << ex.what() << '\n';
    for (const auto* sub : app.get_subcommands()) err << sub->help();
    return kInputError;
  }

  xa.threads = threads;
  ma.threads = threads;
  try {
    if (s->parsed()) return cmd_solve(solve, out, err);
    if (g->parsed()) return cmd_gradcheck(gc, out, err);
    if (x->parsed()) return cmd_train_xor(xa, out, err);
    if (m->parsed()) return cmd_train_mnist(ma, out, err);
    if (e->parsed()) return cmd_eval(ea, out, err);
    if (p->parsed()) return cmd_export(xp, out, err);
  } catch (const NumericalFailure& ex) {
    err << "error: " << ex.what() << '\n';
    return kNumericalFailure;
  } catch (const SolveError& ex) {
    err << "error: " << ex.what() << '\n';
    return kNumericalFailure;
  } catch (const Error& ex) {
    err << "error: " << ex.what() << '\n';
    return kInputError;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << '\n';
    return kInputError;
  }
  return kInputError;
}

}  // namespace aeq::cli

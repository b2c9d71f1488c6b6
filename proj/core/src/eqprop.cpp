#include "aeq/eqprop.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <limits>
#include <queue>

namespace aeq {

std::string_view to_string(LossKind kind) {
  switch (kind) {
    case LossKind::SquaredErrorDoubled: return "squared";
    case LossKind::SoftmaxCrossEntropy: return "softmax";
    case LossKind::BinaryCrossEntropy: return "bce";
  }
  return "unknown";
}

LossKind parse_loss_kind(std::string_view text) {
  if (text == "squared" || text == "SquaredErrorDoubled") return LossKind::SquaredErrorDoubled;
  if (text == "softmax" || text == "SoftmaxCrossEntropy") return LossKind::SoftmaxCrossEntropy;
  if (text == "bce" || text == "BinaryCrossEntropy") return LossKind::BinaryCrossEntropy;
  throw Error("unknown loss kind '" + std::string(text) + "' (expected squared, softmax or bce)");
}

std::size_t target_size(LossKind kind, std::size_t outputs) {
  switch (kind) {
    case LossKind::SquaredErrorDoubled:
      if (outputs == 0 || outputs % 2 != 0) {
        throw Error("squared-error loss needs an even, non-zero number of outputs, got " + std::to_string(outputs));
      }
      return outputs / 2;
    case LossKind::SoftmaxCrossEntropy:
      if (outputs == 0) throw Error("softmax loss needs at least one output");
      return outputs;
    case LossKind::BinaryCrossEntropy:
      if (outputs != 1) throw Error("binary cross-entropy needs exactly one output, got " + std::to_string(outputs));
      return 1;
  }
  return 0;
}

namespace {

std::string short_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

void check_shapes(LossKind kind, std::span<const double> y_hat, std::span<const double> y) {
  const std::size_t want = target_size(kind, y_hat.size());
  if (y.size() != want) {
    throw Error("loss shape mismatch: " + std::to_string(y_hat.size()) + " outputs need " + std::to_string(want) +
                " targets, got " + std::to_string(y.size()));
  }
  if (kind == LossKind::SoftmaxCrossEntropy) {
    const double total = std::accumulate(y.begin(), y.end(), 0.0);
    if (std::abs(total - 1.0) > 1e-9) throw Error("softmax targets must sum to 1");
  }
}

double log_sum_exp(std::span<const double> z) {
  const double m = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double v : z) s += std::exp(v - m);
  return m + std::log(s);
}

double softplus(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

std::vector<double> class_scores(LossKind kind, std::span<const double> y_hat) {
  if (kind != LossKind::SquaredErrorDoubled) return {y_hat.begin(), y_hat.end()};
  const std::size_t k = target_size(kind, y_hat.size());
  std::vector<double> s(k);
  for (std::size_t i = 0; i < k; ++i) s[i] = y_hat[2 * i] - y_hat[2 * i + 1];
  return s;
}

double loss_value(const LossSpec& loss, std::span<const double> y_hat, std::span<const double> y) {
  return nudge_currents(loss, y_hat, y, 0.0).loss;
}

Nudge nudge_currents(const LossSpec& loss, std::span<const double> y_hat, std::span<const double> y, double beta) {
  check_shapes(loss.kind, y_hat, y);
  Nudge out;
  out.currents.assign(y_hat.size(), 0.0);
  switch (loss.kind) {
    case LossKind::SquaredErrorDoubled:
      for (std::size_t k = 0; k < y.size(); ++k) {
        const double diff = y_hat[2 * k] - y_hat[2 * k + 1] - y[k];
        out.loss += 0.5 * diff * diff;
        out.currents[2 * k] = beta * (y[k] + y_hat[2 * k + 1] - y_hat[2 * k]);
        out.currents[2 * k + 1] = -out.currents[2 * k];
      }
      break;
    case LossKind::SoftmaxCrossEntropy: {
      const double lse = log_sum_exp(y_hat);
      for (std::size_t k = 0; k < y.size(); ++k) {
        out.loss += y[k] * (lse - y_hat[k]);
        out.currents[k] = beta * (y[k] - std::exp(y_hat[k] - lse));
      }
      break;
    }
    case LossKind::BinaryCrossEntropy:
      out.loss = softplus(y_hat[0]) - y[0] * y_hat[0];
      out.currents[0] = beta * (y[0] - sigmoid(y_hat[0]));
      break;
  }
  return out;
}

std::map<std::string, double> PhaseRecord::resistor_drops(const Netlist& net) const {
  std::map<std::string, double> out;
  for (std::size_t i = 0; i < net.size(); ++i) {
    if (net.component(i).is<Resistor>()) out.emplace(net.component(i).name, drops.at(i));
  }
  return out;
}

PhaseRunner::PhaseRunner(const Netlist& topology) : solver_(topology) {
  constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> vsrc(topology.node_slots(), kNone), isrc(topology.node_slots(), kNone);
  for (std::size_t i = topology.size(); i-- > 0;) {
    const auto& c = topology.component(i);
    if (c.is<VoltageSource>()) {
      if (c.b == kGround) vsrc[c.a] = i;
      if (c.a == kGround) vsrc[c.b] = i;
    } else if (c.is<CurrentSource>()) {
      isrc[c.a] = i;
      isrc[c.b] = i;
    }
  }
  for (NodeId n : topology.input_nodes()) {
    if (vsrc[n] == kNone) throw NetlistError("input node " + topology.node_label(n) + " has no voltage source to ground");
    input_sources_.push_back({vsrc[n], n, topology.component(vsrc[n]).a == n ? 1.0 : -1.0});
  }
  for (NodeId n : topology.output_nodes()) {
    if (isrc[n] == kNone) throw NetlistError("output node " + topology.node_label(n) + " has no current source");
    output_sources_.push_back({isrc[n], n, topology.component(isrc[n]).a == n ? 1.0 : -1.0});
  }
}

PhaseRecord PhaseRunner::run(const Netlist& net, std::span<const double> x, std::span<const double> currents,
                             double beta, const SolveOptions& opts) {
  if (x.size() != input_sources_.size()) {
    throw Error("expected " + std::to_string(input_sources_.size()) + " input values, got " +
                std::to_string(x.size()));
  }
  if (currents.size() != output_sources_.size()) {
    throw Error("expected " + std::to_string(output_sources_.size()) + " output currents, got " +
                std::to_string(currents.size()));
  }
  overrides_.clear();
  for (std::size_t i = 0; i < x.size(); ++i) {
    overrides_.push_back({input_sources_[i].component, input_sources_[i].sign * x[i]});
  }
  for (std::size_t k = 0; k < currents.size(); ++k) {
    overrides_.push_back({output_sources_[k].component, output_sources_[k].sign * currents[k]});
  }
  SolveResult r = solver_.solve(net, opts, overrides_);
  if (!r.converged) {
    throw SolveError(SolveError::Kind::NonConvergence,
                     "no convergence after " + std::to_string(r.iterations) + " iterations; worst residual " +
                         short_number(r.max_residual) + " A at node " + net.node_label(r.worst_node));
  }

  PhaseRecord rec;
  rec.inputs.assign(x.begin(), x.end());
  rec.beta = beta;
  rec.iterations = r.iterations;
  rec.drops.resize(net.size());
  for (std::size_t i = 0; i < net.size(); ++i) {
    const auto& c = net.components()[i];
    rec.drops[i] = r.voltages[c.a] - r.voltages[c.b];
  }
  rec.input_source_currents.resize(input_sources_.size());
  for (std::size_t i = 0; i < input_sources_.size(); ++i) {
    rec.input_source_currents[i] = input_sources_[i].sign * r.branch_currents[input_sources_[i].component];
  }
  rec.outputs.resize(output_sources_.size());
  for (std::size_t k = 0; k < output_sources_.size(); ++k) rec.outputs[k] = r.voltages[output_sources_[k].node];
  rec.voltages = std::move(r.voltages);
  rec.branch_currents = std::move(r.branch_currents);
  return rec;
}

PhaseRecord PhaseRunner::run_free(const Netlist& net, std::span<const double> x, const PhaseOptions& opts) {
  const std::vector<double> zero(output_sources_.size(), 0.0);
  return run(net, x, zero, 0.0, opts.solve);
}

PhaseRecord PhaseRunner::run_nudged(const Netlist& net, const PhaseRecord& free, std::span<const double> currents,
                                    double beta, const PhaseOptions& opts) {
  SolveOptions so = opts.solve;
  so.warm_start = free.voltages;
  return run(net, free.inputs, currents, beta, so);
}

PhaseRecord run_free_phase(const Netlist& net, std::span<const double> x, const PhaseOptions& opts) {
  PhaseRunner runner(net);
  return runner.run_free(net, x, opts);
}

PhaseRecord run_nudged_phase(const Netlist& net, const PhaseRecord& free, std::span<const double> currents,
                             double beta, const PhaseOptions& opts) {
  PhaseRunner runner(net);
  return runner.run_nudged(net, free, currents, beta, opts);
}

std::vector<double> stage_energy_scales(const Netlist& net) {
  const NodeClassification cls = classify_nodes(net);
  const std::size_t slots = net.node_slots();

  std::vector<NodeId> parent(slots);
  std::iota(parent.begin(), parent.end(), NodeId{0});
  auto find = [&](NodeId n) {
    while (parent[n] != n) {
      parent[n] = parent[parent[n]];
      n = parent[n];
    }
    return n;
  };
  for (const auto& c : net.components()) {
    if (c.is<Amplifier>() || cls.is_fixed(c.a) || cls.is_fixed(c.b)) continue;
    parent[find(c.a)] = find(c.b);
  }

  // Stage graph: amplifier edges carry the weight ratio in/out = A^2.
  std::vector<std::vector<std::pair<NodeId, double>>> edges(slots);
  for (const auto& c : net.components()) {
    if (!c.is<Amplifier>() || cls.is_fixed(c.a)) continue;
    const double a2 = c.as<Amplifier>().gain * c.as<Amplifier>().gain;
    const NodeId in = find(c.a), out = find(c.b);
    edges[out].emplace_back(in, a2);
    edges[in].emplace_back(out, 1.0 / a2);
  }

  std::vector<double> weight(slots, 0.0);
  auto spread = [&](NodeId root) {
    std::queue<NodeId> q;
    weight[root] = 1.0;
    q.push(root);
    while (!q.empty()) {
      const NodeId s = q.front();
      q.pop();
      for (const auto& [t, ratio] : edges[s]) {
        const double w = weight[s] * ratio;
        if (weight[t] == 0.0) {
          weight[t] = w;
          q.push(t);
        } else if (std::abs(weight[t] - w) > 1e-12 * std::max(weight[t], w)) {
          throw NetlistError("amplifier gains admit no consistent energy weighting");
        }
      }
    }
  };
  for (NodeId n : net.output_nodes()) {
    if (!cls.is_fixed(n) && weight[find(n)] == 0.0) spread(find(n));
  }
  for (NodeId n : net.nodes()) {
    if (!cls.is_fixed(n) && weight[find(n)] == 0.0) spread(find(n));
  }

  std::vector<double> scale(net.size(), 1.0);
  for (std::size_t i = 0; i < net.size(); ++i) {
    const auto& c = net.component(i);
    if (c.is<Amplifier>()) continue;
    const NodeId free_end = cls.is_fixed(c.a) ? c.b : c.a;
    if (!cls.is_fixed(free_end)) scale[i] = weight[find(free_end)];
  }
  return scale;
}

namespace {

void check_pair(const PhaseRecord& free, const PhaseRecord& nudged) {
  if (nudged.beta == 0.0) throw Error("beta must be nonzero");
  if (free.drops.size() != nudged.drops.size()) throw Error("phase records come from different netlists");
}

double scale_of(std::span<const double> scale, std::size_t i) { return scale.empty() ? 1.0 : scale[i]; }

}  // namespace

std::vector<double> conductance_gradients(const Netlist& net, const PhaseRecord& free, const PhaseRecord& nudged,
                                          const GradientOptions& opts) {
  check_pair(free, nudged);
  if (free.drops.size() != net.size()) throw Error("phase records do not match the netlist");
  const double factor = (opts.legacy_factor ? 1.0 : 0.5) / (nudged.beta - free.beta);
  std::vector<double> grad(net.size(), 0.0);
  for (std::size_t i = 0; i < net.size(); ++i) {
    const auto& c = net.components()[i];
    if (!c.is<Resistor>()) continue;
    const double b = nudged.drops[i], f = free.drops[i];
    grad[i] = scale_of(opts.energy_scale, i) * factor * (b * b - f * f) +
              opts.weight_decay * c.as<Resistor>().conductance;
  }
  return grad;
}

std::vector<double> conductance_gradients_two_sided(const Netlist& net, const PhaseRecord& plus,
                                                    const PhaseRecord& minus, const GradientOptions& opts) {
  if (plus.beta == minus.beta) throw Error("two-sided estimate needs phases at distinct beta");
  return conductance_gradients(net, minus, plus, opts);
}

std::map<std::string, double> conductance_gradient_map(const Netlist& net, std::span<const double> gradients) {
  std::map<std::string, double> out;
  for (std::size_t i = 0; i < net.size(); ++i) {
    if (net.component(i).is<Resistor>()) out.emplace(net.component(i).name, gradients[i]);
  }
  return out;
}

double param_gradient(const PhaseRecord& free, const PhaseRecord& nudged, std::size_t component,
                      const std::function<double(double)>& dp_dw, std::span<const double> energy_scale) {
  check_pair(free, nudged);
  const double diff = dp_dw(nudged.drops.at(component)) - dp_dw(free.drops.at(component));
  return scale_of(energy_scale, component) * diff / (nudged.beta - free.beta);
}

std::vector<double> input_gradient(const Netlist& net, const PhaseRecord& free, const PhaseRecord& nudged,
                                   std::span<const double> energy_scale) {
  check_pair(free, nudged);
  const double inv_beta = 1.0 / (nudged.beta - free.beta);
  const auto& inputs = net.input_nodes();
  std::vector<double> grad(inputs.size(), 0.0);
  if (energy_scale.empty()) {
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      grad[i] = inv_beta * (nudged.input_source_currents.at(i) - free.input_source_currents.at(i));
    }
    return grad;
  }
  std::vector<std::size_t> slot(net.node_slots(), inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) slot[inputs[i]] = i;
  for (std::size_t c = 0; c < net.size(); ++c) {
    const auto& comp = net.components()[c];
    if (!comp.is_two_terminal() && !comp.is<CurrentSource>()) continue;
    const double delta = nudged.branch_currents.at(c) - free.branch_currents.at(c);
    // Branch currents flow a -> b; a current source pushes into a.
    const double leaving_a = comp.is<CurrentSource>() ? -delta : delta;
    if (slot[comp.a] < inputs.size()) grad[slot[comp.a]] += energy_scale[c] * leaving_a * inv_beta;
    if (slot[comp.b] < inputs.size()) grad[slot[comp.b]] -= energy_scale[c] * leaving_a * inv_beta;
  }
  return grad;
}

}  // namespace aeq

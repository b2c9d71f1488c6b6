#include <cmath>

#include "aeq/solver.hpp"

namespace aeq {

namespace {

// Antiderivative of the clamped diode characteristic, up to a constant.
double diode_primitive(const Diode& d, double v) {
  const double s = d.scale();
  const double u = (v - d.shift) / s;
  if (u <= kDiodeExponentClamp) return d.saturation_current * (s * std::exp(u) - v);
  const double e = std::exp(kDiodeExponentClamp);
  const double w = v - (d.shift + kDiodeExponentClamp * s);
  return d.saturation_current * (s * e + e * (w + w * w / (2.0 * s)) - v);
}

double diode_pseudo_power(const Diode& d, double dv) {
  const double s = d.scale();
  const double u0 = -d.shift / s;
  const double u1 = (dv - d.shift) / s;
  if (u0 <= kDiodeExponentClamp && u1 <= kDiodeExponentClamp) {
    // Same primitive, written to avoid cancellation for small drops.
    return d.saturation_current * (s * std::exp(u0) * std::expm1(dv / s) - dv);
  }
  return diode_primitive(d, dv) - diode_primitive(d, 0.0);
}

void require_voltages(const Netlist& net, std::span<const double> voltages) {
  if (voltages.size() < net.node_slots()) throw Error("voltage vector is shorter than the node count");
}

void reject_amplifiers(const Netlist& net) {
  for (const auto& c : net.components()) {
    if (c.is<Amplifier>()) throw NetlistError("energy function undefined for controlled sources");
  }
}

/// Current leaving each node through two-terminal branches, minus source injections.
std::vector<double> outflow(const Netlist& net, std::span<const double> v) {
  std::vector<double> out(net.node_slots(), 0.0);
  for (const auto& c : net.components()) {
    if (c.is_two_terminal()) {
      const double i = iv_characteristic(c, v[c.a] - v[c.b]);
      out[c.a] += i;
      out[c.b] -= i;
    } else if (c.is<CurrentSource>()) {
      out[c.a] -= c.as<CurrentSource>().dc;
      out[c.b] += c.as<CurrentSource>().dc;
    }
  }
  return out;
}

}  // namespace

std::map<NodeId, double> kcl_residual(const Netlist& net, std::span<const double> voltages) {
  require_voltages(net, voltages);
  const NodeClassification cls = classify_nodes(net);
  if (!cls.floating_sources.empty()) {
    throw NetlistError("kcl_residual does not support voltage sources without a path to ground");
  }
  std::vector<double> out = outflow(net, voltages);

  // Each amplifier supplies whatever its output node needs and reflects a share
  // of it onto its input. Resolve chains downstream first.
  std::vector<std::size_t> pending;
  for (std::size_t i = 0; i < net.size(); ++i) {
    if (net.component(i).is<Amplifier>()) pending.push_back(i);
  }
  while (!pending.empty()) {
    std::vector<char> feeds_pending(net.node_slots(), 0);
    for (std::size_t k : pending) feeds_pending[net.component(k).a] = 1;
    std::vector<std::size_t> still;
    for (std::size_t k : pending) {
      const auto& c = net.component(k);
      if (feeds_pending[c.b]) {
        still.push_back(k);
        continue;
      }
      out[c.a] += out[c.b] / c.as<Amplifier>().gain;
      out[c.b] = 0.0;
    }
    if (still.size() == pending.size()) throw NetlistError("amplifier feedback loop");
    pending = std::move(still);
  }

  std::map<NodeId, double> result;
  for (NodeId n : net.nodes()) {
    if (cls.roles[n] == NodeRole::Floating) result.emplace(n, out[n]);
  }
  return result;
}

double pseudo_power_component(const Component& c, double dv) {
  switch (c.kind()) {
    case ComponentKind::Resistor: return 0.5 * c.as<Resistor>().conductance * dv * dv;
    case ComponentKind::Diode: return diode_pseudo_power(c.as<Diode>(), dv);
    default: throw NetlistError("no pseudo-power for " + std::string(to_string(c.kind())) + " '" + c.name + "'");
  }
}

double diode_pseudo_power_dis(const Diode& d, double dv) { return diode_pseudo_power(d, dv) / d.saturation_current; }

double pseudo_power_total(const Netlist& net, std::span<const double> voltages) {
  require_voltages(net, voltages);
  reject_amplifiers(net);
  double total = 0.0;
  for (const auto& c : net.components()) {
    const double dv = voltages[c.a] - voltages[c.b];
    if (c.is_two_terminal()) {
      total += pseudo_power_component(c, dv);
    } else if (c.is<CurrentSource>()) {
      total -= c.as<CurrentSource>().dc * dv;
    }
  }
  return total;
}

std::map<NodeId, double> pseudo_power_gradient(const Netlist& net, std::span<const double> voltages) {
  reject_amplifiers(net);
  return kcl_residual(net, voltages);
}

}  // namespace aeq

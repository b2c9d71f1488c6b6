#include "aeq/circuit.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <queue>

namespace aeq {

namespace {

bool is_valid_token(std::string_view s) {
  if (s.empty()) return false;
  return std::none_of(s.begin(), s.end(), [](char ch) {
    return std::isspace(static_cast<unsigned char>(ch)) || ch == '#' || ch == '=';
  });
}

bool is_all_digits(std::string_view s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](char ch) { return ch >= '0' && ch <= '9'; });
}

bool is_identifier(std::string_view s) {
  if (s.empty()) return false;
  const auto head = static_cast<unsigned char>(s.front());
  if (!std::isalpha(head) && s.front() != '_') return false;
  return std::all_of(s.begin() + 1, s.end(), [](char ch) {
    const auto u = static_cast<unsigned char>(ch);
    return std::isalnum(u) || ch == '_' || ch == '.';
  });
}

}  // namespace

std::string_view to_string(ComponentKind kind) {
  switch (kind) {
    case ComponentKind::Resistor: return "resistor";
    case ComponentKind::Diode: return "diode";
    case ComponentKind::VoltageSource: return "voltage source";
    case ComponentKind::CurrentSource: return "current source";
    case ComponentKind::Amplifier: return "amplifier";
  }
  return "unknown";
}

Netlist::Netlist(std::string name) {
  set_name(std::move(name));
  add_node(kGround);
}

void Netlist::set_name(std::string name) {
  if (!is_valid_token(name)) throw NetlistError("invalid netlist name '" + name + "'");
  name_ = std::move(name);
}

NodeId Netlist::add_node(NodeId id) {
  if (id > kMaxNodeId) throw NetlistError("node id " + std::to_string(id) + " too large");
  if (has_node(id)) return id;
  if (present_.size() <= id) present_.resize(static_cast<std::size_t>(id) + 1, 0);
  present_[id] = 1;
  nodes_.insert(std::upper_bound(nodes_.begin(), nodes_.end(), id), id);
  return id;
}

NodeId Netlist::node(std::string_view label) {
  if (is_all_digits(label)) {
    std::uint64_t value = 0;
    const auto [ptr, ec] = std::from_chars(label.data(), label.data() + label.size(), value);
    if (ec != std::errc{} || ptr != label.data() + label.size() || value > kMaxNodeId) {
      throw NetlistError("node id '" + std::string(label) + "' too large");
    }
    return add_node(static_cast<NodeId>(value));
  }
  if (auto it = by_label_.find(std::string(label)); it != by_label_.end()) return it->second;
  if (!is_identifier(label)) throw NetlistError("invalid node label '" + std::string(label) + "'");
  const NodeId id = add_node(max_node() + 1);
  labels_.emplace(id, std::string(label));
  by_label_.emplace(std::string(label), id);
  return id;
}

std::optional<NodeId> Netlist::find_node(std::string_view label) const {
  if (is_all_digits(label)) {
    std::uint64_t value = 0;
    const auto [ptr, ec] = std::from_chars(label.data(), label.data() + label.size(), value);
    if (ec != std::errc{} || value > kMaxNodeId || !has_node(static_cast<NodeId>(value))) return std::nullopt;
    return static_cast<NodeId>(value);
  }
  if (auto it = by_label_.find(std::string(label)); it != by_label_.end()) return it->second;
  return std::nullopt;
}

std::string Netlist::node_label(NodeId id) const {
  if (auto it = labels_.find(id); it != labels_.end()) return it->second;
  return std::to_string(id);
}

std::size_t Netlist::add(Component c) {
  if (!is_valid_token(c.name)) throw NetlistError("invalid component name '" + c.name + "'");
  if (by_name_.contains(c.name)) throw NetlistError("duplicate component name '" + c.name + "'");
  add_node(c.a);
  add_node(c.b);
  const std::size_t index = components_.size();
  by_name_.emplace(c.name, index);
  components_.push_back(std::move(c));
  return index;
}

std::size_t Netlist::add_resistor(std::string name, NodeId a, NodeId b, double g) {
  return add(Component{std::move(name), a, b, Resistor{g}});
}

std::size_t Netlist::add_diode(std::string name, NodeId anode, NodeId cathode, const Diode& d) {
  return add(Component{std::move(name), anode, cathode, d});
}

std::size_t Netlist::add_voltage_source(std::string name, NodeId plus, NodeId minus, double dc) {
  return add(Component{std::move(name), plus, minus, VoltageSource{dc}});
}

std::size_t Netlist::add_current_source(std::string name, NodeId plus, NodeId minus, double dc) {
  return add(Component{std::move(name), plus, minus, CurrentSource{dc}});
}

std::size_t Netlist::add_amplifier(std::string name, NodeId in, NodeId out, double gain) {
  return add(Component{std::move(name), in, out, Amplifier{gain}});
}

std::optional<std::size_t> Netlist::find(std::string_view name) const {
  if (auto it = by_name_.find(std::string(name)); it != by_name_.end()) return it->second;
  return std::nullopt;
}

std::size_t Netlist::index_of(std::string_view name) const {
  if (auto idx = find(name)) return *idx;
  throw NetlistError("no component named '" + std::string(name) + "'");
}

namespace {

void check_role_nodes(const Netlist& net, const std::vector<NodeId>& nodes, const char* role) {
  std::vector<NodeId> sorted = nodes;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw NetlistError(std::string(role) + " node listed twice");
  }
  for (NodeId n : nodes) {
    if (!net.has_node(n)) throw NetlistError(std::string(role) + " references undeclared node " + std::to_string(n));
  }
}

}  // namespace

void Netlist::set_input_nodes(std::vector<NodeId> nodes) {
  check_role_nodes(*this, nodes, "input");
  inputs_ = std::move(nodes);
}

void Netlist::set_output_nodes(std::vector<NodeId> nodes) {
  check_role_nodes(*this, nodes, "output");
  outputs_ = std::move(nodes);
}

bool Netlist::operator==(const Netlist& other) const {
  return name_ == other.name_ && nodes_ == other.nodes_ && labels_ == other.labels_ &&
         components_ == other.components_ && inputs_ == other.inputs_ && outputs_ == other.outputs_;
}

double diode_current(const Diode& d, double dv) {
  const double scale = d.scale();
  const double u = (dv - d.shift) / scale;
  if (u <= kDiodeExponentClamp) return d.saturation_current * std::expm1(u);
  const double e = std::exp(kDiodeExponentClamp);
  return d.saturation_current * (e * (1.0 + (u - kDiodeExponentClamp)) - 1.0);
}

double diode_slope(const Diode& d, double dv) {
  const double scale = d.scale();
  const double u = std::min((dv - d.shift) / scale, kDiodeExponentClamp);
  return d.saturation_current * std::exp(u) / scale;
}

double iv_characteristic(const Component& c, double dv) {
  switch (c.kind()) {
    case ComponentKind::Resistor: return c.as<Resistor>().conductance * dv;
    case ComponentKind::Diode: return diode_current(c.as<Diode>(), dv);
    default:
      throw NetlistError("no two-terminal characteristic for " + std::string(to_string(c.kind())) + " '" +
                         c.name + "'");
  }
}

double iv_characteristic_from(const Component& c, NodeId from, double dv_from) {
  if (from == c.a) return iv_characteristic(c, dv_from);
  if (from == c.b) return -iv_characteristic(c, -dv_from);
  throw NetlistError("node " + std::to_string(from) + " is not a terminal of '" + c.name + "'");
}

double iv_slope(const Component& c, double dv) {
  switch (c.kind()) {
    case ComponentKind::Resistor: return c.as<Resistor>().conductance;
    case ComponentKind::Diode: return diode_slope(c.as<Diode>(), dv);
    default:
      throw NetlistError("no two-terminal characteristic for " + std::string(to_string(c.kind())) + " '" +
                         c.name + "'");
  }
}

namespace {

bool positive(double v) { return std::isfinite(v) && v > 0.0; }

void check_params(const Component& c, std::vector<std::string>& out) {
  auto require = [&](bool ok, const char* what) {
    if (!ok) out.push_back(std::string(what) + ": " + c.name);
  };
  switch (c.kind()) {
    case ComponentKind::Resistor:
      require(positive(c.as<Resistor>().conductance), "non-positive conductance");
      break;
    case ComponentKind::Diode: {
      const auto& d = c.as<Diode>();
      require(positive(d.saturation_current), "non-positive saturation current");
      require(positive(d.emission), "non-positive emission coefficient");
      require(positive(d.thermal_voltage), "non-positive thermal voltage");
      require(std::isfinite(d.shift), "non-finite shift voltage");
      break;
    }
    case ComponentKind::VoltageSource:
      require(std::isfinite(c.as<VoltageSource>().dc), "non-finite source value");
      require(c.a != c.b, "shorted voltage source");
      break;
    case ComponentKind::CurrentSource:
      require(std::isfinite(c.as<CurrentSource>().dc), "non-finite source value");
      break;
    case ComponentKind::Amplifier:
      require(positive(c.as<Amplifier>().gain), "non-positive gain");
      require(c.a != c.b, "amplifier input and output coincide");
      require(c.b != kGround, "amplifier output tied to ground");
      break;
  }
}

}  // namespace

std::vector<std::string> validate(const Netlist& net) {
  std::vector<std::string> out;
  std::unordered_map<std::string_view, int> names;
  for (const auto& c : net.components()) {
    if (++names[c.name] == 2) out.push_back("duplicate component name: " + c.name);
    if (!net.has_node(c.a) || !net.has_node(c.b)) out.push_back("undeclared node referenced by " + c.name);
    check_params(c, out);
  }

  // Connectivity: sources fix voltages relative to their terminals; amplifiers
  // tie both terminals to the ground reference. Current sources do not.
  const std::size_t slots = net.node_slots();
  std::vector<std::vector<NodeId>> adj(slots);
  auto link = [&](NodeId u, NodeId v) {
    if (u >= slots || v >= slots) return;
    adj[u].push_back(v);
    adj[v].push_back(u);
  };
  std::vector<int> drivers(slots, 0);
  for (const auto& c : net.components()) {
    switch (c.kind()) {
      case ComponentKind::CurrentSource: break;
      case ComponentKind::Amplifier:
        link(c.a, kGround);
        link(c.b, kGround);
        if (c.b < slots) ++drivers[c.b];
        break;
      default: link(c.a, c.b); break;
    }
  }
  std::vector<char> seen(slots, 0);
  std::queue<NodeId> frontier;
  frontier.push(kGround);
  seen[kGround] = 1;
  while (!frontier.empty()) {
    const NodeId u = frontier.front();
    frontier.pop();
    for (NodeId v : adj[u]) {
      if (!seen[v]) {
        seen[v] = 1;
        frontier.push(v);
      }
    }
  }
  for (NodeId n : net.nodes()) {
    if (!seen[n]) out.push_back("disconnected node " + net.node_label(n));
    if (drivers[n] > 1) out.push_back("conflicting drivers at node " + net.node_label(n));
  }

  std::vector<char> has_vsrc(slots, 0), has_isrc(slots, 0);
  for (const auto& c : net.components()) {
    if (c.a >= slots || c.b >= slots) continue;
    if (c.is<VoltageSource>()) has_vsrc[c.a] = has_vsrc[c.b] = 1;
    if (c.is<CurrentSource>()) has_isrc[c.a] = has_isrc[c.b] = 1;
  }
  for (NodeId n : net.input_nodes()) {
    if (!has_vsrc[n]) out.push_back("input node without voltage source " + net.node_label(n));
  }
  for (NodeId n : net.output_nodes()) {
    if (!has_isrc[n]) out.push_back("output node without current source " + net.node_label(n));
  }
  return out;
}

}  // namespace aeq

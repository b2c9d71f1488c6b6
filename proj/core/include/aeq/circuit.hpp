#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

#include "aeq/error.hpp"

namespace aeq {

using NodeId = std::uint32_t;

/// Ground is always node 0 and sits at 0 V.
inline constexpr NodeId kGround = 0;

/// Upper bound on node ids accepted from text input.
inline constexpr NodeId kMaxNodeId = (NodeId{1} << 22) - 1;

/// Diode exponent arguments above this are extrapolated linearly.
inline constexpr double kDiodeExponentClamp = 40.0;

struct Resistor {
  double conductance = 0.0;  // siemens
  bool operator==(const Resistor&) const = default;
};

/// Shockley diode, I = I_S [exp((dv - shift) / (n V_T)) - 1]. The shift folds a
/// series voltage source into the device.
struct Diode {
  double saturation_current = 0.0;  // amperes
  double emission = 0.0;            // dimensionless
  double thermal_voltage = 0.0;     // volts
  double shift = 0.0;               // volts
  bool operator==(const Diode&) const = default;

  double scale() const { return emission * thermal_voltage; }
};

/// V(a) - V(b) = dc.
struct VoltageSource {
  double dc = 0.0;
  bool operator==(const VoltageSource&) const = default;
};

/// Injects dc amperes into node a, drawn from node b.
struct CurrentSource {
  double dc = 0.0;
  bool operator==(const CurrentSource&) const = default;
};

/// Bidirectional amplifier between input node a and output node b: a VCVS
/// forcing V(b) = gain * V(a) plus a CCCS drawing I_out / gain out of node a,
/// where I_out is the current the VCVS delivers into node b.
struct Amplifier {
  double gain = 1.0;
  bool operator==(const Amplifier&) const = default;
};

enum class ComponentKind { Resistor, Diode, VoltageSource, CurrentSource, Amplifier };

using ComponentParams = std::variant<Resistor, Diode, VoltageSource, CurrentSource, Amplifier>;

struct Component {
  std::string name;
  NodeId a = kGround;
  NodeId b = kGround;
  ComponentParams params;

  ComponentKind kind() const { return static_cast<ComponentKind>(params.index()); }

  template <class T>
  bool is() const {
    return std::holds_alternative<T>(params);
  }
  template <class T>
  const T& as() const {
    return std::get<T>(params);
  }
  template <class T>
  T& as() {
    return std::get<T>(params);
  }

  bool is_two_terminal() const {
    return kind() == ComponentKind::Resistor || kind() == ComponentKind::Diode;
  }
  NodeId other(NodeId n) const { return n == a ? b : a; }

  bool operator==(const Component&) const = default;
};

std::string_view to_string(ComponentKind kind);

/// Circuit graph: declared nodes, an ordered component list, and the node roles
/// used by training (inputs carry voltage sources, outputs carry current sources).
///
/// Nodes are declared implicitly by the components that touch them. A node may
/// carry a symbolic label; otherwise its label is its decimal id.
class Netlist {
 public:
  explicit Netlist(std::string name = "net");

  const std::string& name() const { return name_; }
  void set_name(std::string name);

  /// Declares node `id` (no-op when it exists).
  NodeId add_node(NodeId id);
  /// Returns the node carrying `label`, creating it if needed. All-digit labels
  /// are numeric ids; anything else gets the next free id.
  NodeId node(std::string_view label);
  std::optional<NodeId> find_node(std::string_view label) const;
  bool has_node(NodeId id) const { return id < present_.size() && present_[id]; }
  std::string node_label(NodeId id) const;
  bool has_symbolic_label(NodeId id) const { return labels_.contains(id); }

  /// Declared nodes in ascending order; always includes ground.
  const std::vector<NodeId>& nodes() const { return nodes_; }
  NodeId max_node() const { return nodes_.back(); }
  /// Size of a dense vector indexed by NodeId.
  std::size_t node_slots() const { return static_cast<std::size_t>(max_node()) + 1; }

  /// Appends a component and declares its endpoints. Throws NetlistError on a
  /// duplicate or malformed name.
  std::size_t add(Component c);
  std::size_t add_resistor(std::string name, NodeId a, NodeId b, double g);
  std::size_t add_diode(std::string name, NodeId anode, NodeId cathode, const Diode& d);
  std::size_t add_voltage_source(std::string name, NodeId plus, NodeId minus, double dc);
  std::size_t add_current_source(std::string name, NodeId plus, NodeId minus, double dc);
  std::size_t add_amplifier(std::string name, NodeId in, NodeId out, double gain);

  const std::vector<Component>& components() const { return components_; }
  std::size_t size() const { return components_.size(); }
  const Component& component(std::size_t i) const { return components_.at(i); }
  /// Parameter access only; endpoints and names are fixed once added.
  ComponentParams& params(std::size_t i) { return components_.at(i).params; }
  std::optional<std::size_t> find(std::string_view name) const;
  std::size_t index_of(std::string_view name) const;

  void set_conductance(std::size_t i, double g) { std::get<Resistor>(params(i)).conductance = g; }

  const std::vector<NodeId>& input_nodes() const { return inputs_; }
  const std::vector<NodeId>& output_nodes() const { return outputs_; }
  /// Throws NetlistError when a node is undeclared or listed twice.
  void set_input_nodes(std::vector<NodeId> nodes);
  void set_output_nodes(std::vector<NodeId> nodes);

  bool operator==(const Netlist& other) const;

 private:
  std::string name_;
  std::vector<NodeId> nodes_;
  std::vector<char> present_;
  std::unordered_map<NodeId, std::string> labels_;
  std::unordered_map<std::string, NodeId> by_label_;
  std::vector<Component> components_;
  std::unordered_map<std::string, std::size_t> by_name_;
  std::vector<NodeId> inputs_;
  std::vector<NodeId> outputs_;
};

/// Current from terminal a to terminal b for a drop dv = V(a) - V(b).
/// Throws NetlistError for components without a two-terminal characteristic.
double iv_characteristic(const Component& c, double dv);

/// The same branch seen from `from`: current leaving `from` for a drop
/// V(from) - V(other).
double iv_characteristic_from(const Component& c, NodeId from, double dv_from);

/// d(iv_characteristic)/d(dv).
double iv_slope(const Component& c, double dv);

double diode_current(const Diode& d, double dv);
double diode_slope(const Diode& d, double dv);

/// Empty iff every invariant holds: positive parameters, unique names, declared
/// endpoints, connectivity to ground, and source attachments on input/output nodes.
std::vector<std::string> validate(const Netlist& net);

/// Text format, one statement per line:
///
///   NET <name>
///   R <name> <a> <b> g=<S>
///   D <name> <anode> <cathode> is=<A> n=<1> vt=<V> vshift=<V>
///   V <name> <+> <-> dc=<V>
///   I <name> <+> <-> dc=<A>
///   A <name> <in> <out> gain=<1>
///   INPUT <node>...
///   OUTPUT <node>...
///
/// '#' starts a comment. Numbers are written in shortest round-trip form.
Netlist parse_netlist(std::string_view text);
std::string serialize_netlist(const Netlist& net);

}  // namespace aeq

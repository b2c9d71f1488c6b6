#pragma once

#include <cstddef>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "aeq/circuit.hpp"

namespace aeq {

struct SolveOptions {
  double residual_tol = 1e-9;  // amperes, max |KCL residual| over floating nodes
  int max_iters = 200;
  double damping = 1.0;  // initial Newton step scale in (0, 1]
  /// Initial node voltages indexed by NodeId; zeros when absent.
  std::optional<std::vector<double>> warm_start;
};

struct SolveResult {
  std::vector<double> voltages;         // by NodeId
  std::vector<double> branch_currents;  // by component index
  int iterations = 0;
  double max_residual = 0.0;  // amperes
  NodeId worst_node = kGround;
  bool converged = false;

  double voltage(NodeId n) const { return voltages.at(n); }
  double current(const Netlist& net, std::string_view name) const { return branch_currents.at(net.index_of(name)); }
};

/// Replaces the dc value of a source component for one solve.
struct SourceOverride {
  std::size_t component;
  double value;
};

/// How each node's voltage is determined.
enum class NodeRole {
  Ground,
  Pinned,      // fixed by a chain of voltage sources back to ground
  Driven,      // output of an amplifier
  Floating,    // set by KCL
};

struct NodeClassification {
  std::vector<NodeRole> roles;  // by NodeId (undeclared slots are Floating and unused)
  /// Voltage sources that pin a node, in dependency order: the reference
  /// terminal of each entry is ground or pinned by an earlier entry.
  struct Pin {
    std::size_t source;
    NodeId node;       // the terminal being pinned
    NodeId reference;  // the terminal already known
    double sign;       // V(node) = V(reference) + sign * dc
  };
  std::vector<Pin> pins;
  /// Voltage sources with neither terminal pinned (solved as MNA branch unknowns).
  std::vector<std::size_t> floating_sources;
  /// Component index of the amplifier driving each Driven node.
  std::vector<std::size_t> driver;  // by NodeId, SIZE_MAX when none

  bool is_fixed(NodeId n) const { return roles[n] == NodeRole::Ground || roles[n] == NodeRole::Pinned; }
};

/// Throws SolveError(Singular) for voltage-source loops or conflicting drivers.
NodeClassification classify_nodes(const Netlist& net);

/// Modified nodal analysis with damped Newton iteration.
///
/// Nodes pinned to ground through voltage sources are eliminated; their source
/// currents are recovered from KCL afterwards. Remaining unknowns are floating
/// node voltages, one branch current per ungrounded voltage source and one
/// output current per amplifier. The Jacobian sparsity pattern depends only on
/// topology, so its symbolic LU analysis is done once at construction and
/// reused by every solve on a netlist with the same topology (weights and
/// source values may differ).
///
/// A solver instance is not thread-safe; copy it per worker. Copies share the
/// immutable plan and redo only the symbolic analysis.
class SteadyStateSolver {
 public:
  explicit SteadyStateSolver(const Netlist& topology);
  SteadyStateSolver(const SteadyStateSolver& other);
  SteadyStateSolver& operator=(const SteadyStateSolver& other);
  SteadyStateSolver(SteadyStateSolver&&) noexcept;
  SteadyStateSolver& operator=(SteadyStateSolver&&) noexcept;
  ~SteadyStateSolver();

  /// Solves `net`, which must share the topology given at construction.
  /// Non-convergence is reported through `converged == false`; a singular
  /// Jacobian throws SolveError.
  SolveResult solve(const Netlist& net, const SolveOptions& opts = {},
                    std::span<const SourceOverride> overrides = {});

  std::size_t unknowns() const;
  const NodeClassification& classification() const;

 private:
  struct Plan;
  struct Workspace;
  std::shared_ptr<const Plan> plan_;
  std::unique_ptr<Workspace> ws_;
};

/// One-shot convenience wrapper around SteadyStateSolver.
SolveResult solve_steady_state(const Netlist& net, const SolveOptions& opts = {});

/// Net current leaving each floating node through its components, minus the
/// current injected by current sources; zero at a steady state. Amplifier
/// outputs are excluded (the VCVS balances them) and the current each one
/// supplies is reflected to its input node through the CCCS.
/// Voltages are indexed by NodeId. Ungrounded voltage sources are not supported.
std::map<NodeId, double> kcl_residual(const Netlist& net, std::span<const double> voltages);

/// Primitive of the component's characteristic vanishing at 0. Throws for
/// components other than resistors and diodes.
double pseudo_power_component(const Component& c, double dv);

/// d p / d I_S for a diode at fixed drop (p is linear in I_S).
double diode_pseudo_power_dis(const Diode& d, double dv);

/// Sum of branch pseudo-powers. Current sources contribute -I * (V(a) - V(b));
/// voltage sources are boundary conditions. Throws NetlistError when the
/// netlist contains amplifiers.
double pseudo_power_total(const Netlist& net, std::span<const double> voltages);

/// dP/dV for each floating node.
std::map<NodeId, double> pseudo_power_gradient(const Netlist& net, std::span<const double> voltages);

}  // namespace aeq

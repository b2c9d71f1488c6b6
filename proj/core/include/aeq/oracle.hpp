#pragma once

#include <span>
#include <string>
#include <vector>

#include "aeq/circuit.hpp"
#include "aeq/eqprop.hpp"

// Brute-force reference computations. They deliberately avoid the Newton path
// of the solver so they can check it.
namespace aeq::oracle {

struct FDSpec {
  double h_rel = 1e-6;        // step relative to the parameter value
  double residual_tol = 1e-12;  // solver tolerance at each perturbed point
};

enum class ParamField { Conductance, SaturationCurrent };

struct ParamRef {
  std::string component;
  ParamField field = ParamField::Conductance;
};

/// A sample as seen by the circuit: one value per input node and a target.
struct Probe {
  std::vector<double> inputs;
  std::vector<double> target;
};

/// Loss after a free phase, plus 0.5 * weight_decay * sum(g^2) over resistors.
double free_phase_loss(const Netlist& net, const Probe& probe, const LossSpec& loss, const FDSpec& spec = {});

/// Central difference (L(w + h) - L(w - h)) / 2h for each parameter, h = h_rel * |w|.
std::vector<double> fd_loss_gradients(const Netlist& net, const Probe& probe, const LossSpec& loss,
                                      std::span<const ParamRef> params, const FDSpec& spec = {});
double fd_loss_gradient(const Netlist& net, const Probe& probe, const LossSpec& loss, const ParamRef& param,
                        const FDSpec& spec = {});

/// Central difference of the loss with respect to each input voltage, absolute step h volts.
std::vector<double> fd_input_gradient(const Netlist& net, const Probe& probe, const LossSpec& loss, double h = 1e-6,
                                      const FDSpec& spec = {});

struct LinearSolution {
  std::vector<double> voltages;  // by NodeId
  std::vector<double> g_terms;   // sum of conductances at each node, by NodeId
};

/// Direct solve of the weighted-mean equations of a network of resistors,
/// grounded voltage sources and current sources. Throws SolveError when a node
/// is isolated from every source.
LinearSolution linear_network_solution(const Netlist& net);

struct DescentResult {
  std::vector<double> voltages;  // by NodeId
  std::vector<double> energy;    // total pseudo-power after each accepted step
  int iterations = 0;
  bool converged = false;
};

/// Gradient descent on the total pseudo-power over floating node voltages,
/// starting from zero. The step is `step_scale / G_max` with G_max the largest
/// nodal sum of branch slopes at the current point, halved until the energy
/// does not increase by more than the rounding noise of its sum. Stops early
/// when no step is accepted. Converged when every |dP/dV| is at most `grad_tol`.
/// Throws SolveError when the energy becomes non-finite.
DescentResult pseudo_power_descent(const Netlist& net, int max_iters, double step_scale = 0.1,
                                   double grad_tol = 1e-12);

/// |estimate - reference| / max(|reference|, floor).
double relative_error(double estimate, double reference, double floor);

struct ErrorSummary {
  double median = 0.0;
  double p95 = 0.0;
  double max = 0.0;
  std::size_t count = 0;
};

/// Per-entry relative errors against `reference`, each floored at
/// 1e-6 * max|reference| so entries that are zero in the reference do not
/// dominate.
std::vector<double> relative_errors(std::span<const double> estimate, std::span<const double> reference);
/// Order statistics (nearest rank) of a list of errors.
ErrorSummary summarize_errors(std::vector<double> errors);

/// Adaptive Gauss-Kronrod integral of the characteristic over [0, dv].
double quadrature_pseudo_power(const Component& c, double dv);

}  // namespace aeq::oracle

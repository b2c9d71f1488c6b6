#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "aeq/circuit.hpp"
#include "aeq/solver.hpp"

namespace aeq {

enum class LossKind {
  SquaredErrorDoubled,  // outputs come in (Y+, Y-) pairs, one pair per target
  SoftmaxCrossEntropy,  // one logit per class, targets sum to 1
  BinaryCrossEntropy,   // a single logit, target in [0, 1]
};

std::string_view to_string(LossKind kind);
/// Accepts "squared", "softmax", "bce" and the enumerator names.
LossKind parse_loss_kind(std::string_view text);

struct LossSpec {
  LossKind kind = LossKind::SquaredErrorDoubled;
  double weight_decay = 0.0;  // lambda >= 0, adds lambda * g to each conductance gradient
};

/// Number of target entries for `outputs` output nodes; throws on a bad shape.
std::size_t target_size(LossKind kind, std::size_t outputs);

/// Per-class score used for prediction: Y+ - Y- for doubled outputs, the raw
/// logits otherwise.
std::vector<double> class_scores(LossKind kind, std::span<const double> y_hat);

double loss_value(const LossSpec& loss, std::span<const double> y_hat, std::span<const double> y);

struct Nudge {
  double loss = 0.0;
  std::vector<double> currents;  // amperes injected into each output node, -beta * dl/dY_k
};

Nudge nudge_currents(const LossSpec& loss, std::span<const double> y_hat, std::span<const double> y, double beta);

/// Measurements from one steady state.
struct PhaseRecord {
  std::vector<double> inputs;                 // volts, one per input node
  std::vector<double> voltages;               // by NodeId
  std::vector<double> branch_currents;        // by component index
  std::vector<double> drops;                  // V(a) - V(b) by component index
  std::vector<double> input_source_currents;  // amperes delivered into each input node by its source
  std::vector<double> outputs;                // volts, one per output node
  double beta = 0.0;
  int iterations = 0;

  std::map<std::string, double> resistor_drops(const Netlist& net) const;
};

struct PhaseOptions {
  SolveOptions solve;
};

/// Runs free and nudged phases on netlists sharing one topology. Input nodes
/// are driven through the voltage source that ties them to ground; output
/// nodes through their current source. Not thread-safe; copy per worker.
class PhaseRunner {
 public:
  explicit PhaseRunner(const Netlist& topology);

  /// Throws SolveError when the solve does not converge.
  PhaseRecord run_free(const Netlist& net, std::span<const double> x, const PhaseOptions& opts = {});
  /// Warm-starts from `free`. `currents` has one entry per output node.
  PhaseRecord run_nudged(const Netlist& net, const PhaseRecord& free, std::span<const double> currents, double beta,
                         const PhaseOptions& opts = {});

  std::size_t input_count() const { return input_sources_.size(); }
  std::size_t output_count() const { return output_sources_.size(); }

 private:
  PhaseRecord run(const Netlist& net, std::span<const double> x, std::span<const double> currents, double beta,
                  const SolveOptions& opts);

  struct Binding {
    std::size_t component;
    NodeId node;
    double sign;  // source value = sign * requested node value
  };
  std::vector<Binding> input_sources_;
  std::vector<Binding> output_sources_;
  std::vector<SourceOverride> overrides_;
  SteadyStateSolver solver_;
};

PhaseRecord run_free_phase(const Netlist& net, std::span<const double> x, const PhaseOptions& opts = {});
PhaseRecord run_nudged_phase(const Netlist& net, const PhaseRecord& free, std::span<const double> currents,
                             double beta, const PhaseOptions& opts = {});

/// Relative weight of each component's pseudo-power in the circuit energy.
///
/// Nodes not fixed by sources split into stages connected only through
/// amplifiers. An amplifier of gain A makes the stage on its input side weigh
/// A^2 times the stage on its output side, which keeps the backward current
/// I_out / A consistent with a single energy function. The stage holding the
/// first output node has weight 1. Without amplifiers every weight is 1.
/// Throws NetlistError when the amplifier gains admit no consistent weighting.
std::vector<double> stage_energy_scales(const Netlist& net);

struct GradientOptions {
  /// Per-component energy weights (see stage_energy_scales); empty means 1.
  std::span<const double> energy_scale;
  double weight_decay = 0.0;
  /// Use 1/beta instead of 1/(2 beta) for conductances.
  bool legacy_factor = false;
};

/// dL/dg for every resistor, indexed by component (0 for other kinds):
/// ((dV^beta)^2 - (dV^0)^2) / (2 beta), plus weight_decay * g.
std::vector<double> conductance_gradients(const Netlist& net, const PhaseRecord& free, const PhaseRecord& nudged,
                                          const GradientOptions& opts = {});

/// Symmetric estimate from phases at +beta and -beta.
std::vector<double> conductance_gradients_two_sided(const Netlist& net, const PhaseRecord& plus,
                                                    const PhaseRecord& minus, const GradientOptions& opts = {});

std::map<std::string, double> conductance_gradient_map(const Netlist& net, std::span<const double> gradients);

/// Gradient wrt a parameter w of component `component`, given dp/dw at a fixed
/// drop: (dp_dw(dV^beta) - dp_dw(dV^0)) / beta, times the component's energy weight.
double param_gradient(const PhaseRecord& free, const PhaseRecord& nudged, std::size_t component,
                      const std::function<double(double)>& dp_dw, std::span<const double> energy_scale = {});

/// dL/dx for each input node: (I^beta - I^0) / beta with I the current its
/// source delivers. With energy weights, each branch at the input node is
/// weighted by its stage.
std::vector<double> input_gradient(const Netlist& net, const PhaseRecord& free, const PhaseRecord& nudged,
                                   std::span<const double> energy_scale = {});

}  // namespace aeq

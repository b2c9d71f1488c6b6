#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "aeq/circuit.hpp"

namespace aeq {

/// Diode pair forming each hidden neuron's transfer function. The upper diode
/// runs from the neuron node to ground with shift `shift_hi`; the lower one
/// runs from ground to the neuron node with shift `shift_lo`.
struct DiodeSpec {
  double saturation_current = 1e-6;
  double emission = 2.0;
  double thermal_voltage = 0.02585;
  double shift_hi = 0.3;
  double shift_lo = -0.7;

  bool operator==(const DiodeSpec&) const = default;

  Diode upper() const { return {saturation_current, emission, thermal_voltage, shift_hi}; }
  Diode lower() const { return {saturation_current, emission, thermal_voltage, shift_lo}; }
};

/// Conductances start uniform on [lower, upper]; when `upper` is unset it is
/// scale / sqrt(fan_in + fan_out) for each matrix.
struct InitSpec {
  double lower = 1e-7;
  double scale = 0.08;
  std::optional<double> upper;

  bool operator==(const InitSpec&) const = default;
};

struct ArchSpec {
  std::size_t raw_input_dim = 2;
  std::vector<std::size_t> hidden_sizes{2};
  std::size_t num_classes = 1;
  double gain = 4.0;
  DiodeSpec diode;
  bool double_inputs = false;
  bool bias_node = true;
  double bias_voltage = 1.0;
  InitSpec init;

  /// Two inputs and a bias, two hidden neurons, one doubled output.
  static ArchSpec xor_preset();
  /// 28x28 doubled inputs plus bias, 100 hidden neurons, ten doubled outputs.
  static ArchSpec mnist_preset();

  /// Input nodes after doubling, including the bias node.
  std::size_t input_count() const;
  std::size_t output_count() const { return 2 * num_classes; }
  std::size_t layer_count() const { return hidden_sizes.size() + 1; }
  std::size_t fan_in(std::size_t layer) const;
  std::size_t fan_out(std::size_t layer) const;

  /// Throws Error naming the first violated constraint.
  void validate() const;

  bool operator==(const ArchSpec&) const = default;
};

/// One line per field, `key=value`; '#' starts a comment. Unknown keys are errors.
ArchSpec parse_arch(std::string_view text);
std::string serialize_arch(const ArchSpec& spec);

/// Per layer, a fan_in x fan_out matrix of conductances in siemens.
using WeightMatrices = std::vector<Eigen::MatrixXd>;

struct NetworkLayout {
  std::vector<NodeId> inputs;                  // x1, -x1, x2, -x2, ..., bias
  std::vector<std::vector<NodeId>> hidden_in;  // per hidden layer, the diode node of each neuron
  std::vector<std::vector<NodeId>> hidden_out; // per hidden layer, the amplifier output of each neuron
  std::vector<NodeId> outputs;                 // y0+, y0-, y1+, y1-, ...
  /// Per layer, component index of each crossbar resistor, row-major (fan_in x fan_out).
  std::vector<std::vector<std::size_t>> weights;
  std::vector<std::size_t> rows;
  std::vector<std::size_t> cols;

  /// Total number of crossbar resistors.
  std::size_t weight_count() const;
};

struct LayeredNetwork {
  Netlist net;
  NetworkLayout layout;
};

LayeredNetwork build_layered_network(const ArchSpec& spec, const WeightMatrices& weights);

/// Deterministic in `seed`.
WeightMatrices init_conductances(const ArchSpec& spec, std::uint64_t seed);

WeightMatrices read_weights(const Netlist& net, const NetworkLayout& layout);
/// Replaces conductance values only. Throws NetlistError on a shape mismatch.
void write_weights(Netlist& net, const NetworkLayout& layout, const WeightMatrices& weights);

/// Layout of a netlist previously built from `spec` (for instance one read
/// back from a checkpoint). Throws NetlistError when the topology differs.
NetworkLayout recover_layout(const Netlist& net, const ArchSpec& spec);

/// Source values for the input nodes: (x_i, -x_i) pairs when doubling, then
/// the bias voltage.
std::vector<double> encode_input(std::span<const double> x, const ArchSpec& spec);

/// Portable uniform draw in [0, 1) from a 64-bit engine output.
inline double unit_uniform(std::uint64_t bits) { return static_cast<double>(bits >> 11) * 0x1.0p-53; }

}  // namespace aeq

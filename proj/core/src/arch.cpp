#include "aeq/arch.hpp"

#include <charconv>
#include <cmath>
#include <random>
#include <sstream>

namespace aeq {

ArchSpec ArchSpec::xor_preset() {
  ArchSpec s;
  s.raw_input_dim = 2;
  s.hidden_sizes = {2};
  s.num_classes = 1;
  s.double_inputs = false;
  s.bias_node = true;
  s.init.lower = 1e-4;
  s.init.upper = 0.1;
  return s;
}

ArchSpec ArchSpec::mnist_preset() {
  ArchSpec s;
  s.raw_input_dim = 28 * 28;
  s.hidden_sizes = {100};
  s.num_classes = 10;
  s.double_inputs = true;
  s.bias_node = true;
  s.init.lower = 1e-7;
  s.init.scale = 0.08;
  return s;
}

std::size_t ArchSpec::input_count() const { return (double_inputs ? 2 : 1) * raw_input_dim + (bias_node ? 1 : 0); }

std::size_t ArchSpec::fan_in(std::size_t layer) const {
  if (layer == 0) return input_count();
  const std::size_t prev = hidden_sizes.at(layer - 1);
  return layer < hidden_sizes.size() && bias_node ? prev + 1 : prev;
}

std::size_t ArchSpec::fan_out(std::size_t layer) const {
  return layer < hidden_sizes.size() ? hidden_sizes[layer] : output_count();
}

void ArchSpec::validate() const {
  if (raw_input_dim < 1) throw Error("arch: raw_input_dim must be at least 1");
  if (num_classes < 1) throw Error("arch: num_classes must be at least 1");
  for (std::size_t h : hidden_sizes) {
    if (h < 1) throw Error("arch: hidden layer sizes must be at least 1");
  }
  if (!(gain > 0.0) || !std::isfinite(gain)) throw Error("arch: gain must be positive");
  if (!(diode.saturation_current > 0.0) || !(diode.emission > 0.0) || !(diode.thermal_voltage > 0.0)) {
    throw Error("arch: diode parameters must be positive");
  }
  if (!(diode.shift_hi > diode.shift_lo)) throw Error("arch: diode.shift_hi must exceed diode.shift_lo");
  if (!(init.lower > 0.0)) throw Error("arch: init.lower must be positive");
  if (init.upper && !(*init.upper >= init.lower)) throw Error("arch: init.upper must be at least init.lower");
  if (!init.upper && !(init.scale > 0.0)) throw Error("arch: init.scale must be positive");
  if (!std::isfinite(bias_voltage)) throw Error("arch: bias_voltage must be finite");
}

namespace {

double parse_double(std::string_view key, std::string_view text) {
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (text.empty() || ec != std::errc{} || ptr != text.data() + text.size() || !std::isfinite(v)) {
    throw Error("arch: bad number for " + std::string(key) + ": '" + std::string(text) + "'");
  }
  return v;
}

std::size_t parse_size(std::string_view key, std::string_view text) {
  std::size_t v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (text.empty() || ec != std::errc{} || ptr != text.data() + text.size()) {
    throw Error("arch: bad integer for " + std::string(key) + ": '" + std::string(text) + "'");
  }
  return v;
}

bool parse_bool(std::string_view key, std::string_view text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw Error("arch: bad boolean for " + std::string(key) + ": '" + std::string(text) + "'");
}

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string format_double(double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

}  // namespace

ArchSpec parse_arch(std::string_view text) {
  ArchSpec s;
  std::size_t pos = 0;
  std::size_t line_no = 0;
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
    const std::string_view key = trim(line.substr(0, eq));
    const std::string_view value = trim(line.substr(eq + 1));
    try {
      if (key == "raw_input_dim") {
        s.raw_input_dim = parse_size(key, value);
      } else if (key == "hidden_sizes") {
        s.hidden_sizes.clear();
        std::size_t p = 0;
        while (p <= value.size() && !value.empty()) {
          const std::size_t c = std::min(value.find(',', p), value.size());
          s.hidden_sizes.push_back(parse_size(key, trim(value.substr(p, c - p))));
          p = c + 1;
        }
      } else if (key == "num_classes") {
        s.num_classes = parse_size(key, value);
      } else if (key == "gain") {
        s.gain = parse_double(key, value);
      } else if (key == "diode.is") {
        s.diode.saturation_current = parse_double(key, value);
      } else if (key == "diode.n") {
        s.diode.emission = parse_double(key, value);
      } else if (key == "diode.vt") {
        s.diode.thermal_voltage = parse_double(key, value);
      } else if (key == "diode.shift_hi") {
        s.diode.shift_hi = parse_double(key, value);
      } else if (key == "diode.shift_lo") {
        s.diode.shift_lo = parse_double(key, value);
      } else if (key == "double_inputs") {
        s.double_inputs = parse_bool(key, value);
      } else if (key == "bias_node") {
        s.bias_node = parse_bool(key, value);
      } else if (key == "bias_voltage") {
        s.bias_voltage = parse_double(key, value);
      } else if (key == "init.lower") {
        s.init.lower = parse_double(key, value);
      } else if (key == "init.scale") {
        s.init.scale = parse_double(key, value);
      } else if (key == "init.upper") {
        if (value.empty() || value == "auto") {
          s.init.upper.reset();
        } else {
          s.init.upper = parse_double(key, value);
        }
      } else {
        throw Error("arch: unknown key '" + std::string(key) + "'");
      }
    } catch (const ParseError&) {
      throw;
    } catch (const Error& e) {
      throw ParseError(line_no, e.what());
    }
  }
  try {
    s.validate();
  } catch (const Error& e) {
    throw ParseError(0, e.what());
  }
  return s;
}

std::string serialize_arch(const ArchSpec& s) {
  std::ostringstream out;
  out << "raw_input_dim=" << s.raw_input_dim << '\n';
  out << "hidden_sizes=";
  for (std::size_t i = 0; i < s.hidden_sizes.size(); ++i) out << (i ? "," : "") << s.hidden_sizes[i];
  out << '\n';
  out << "num_classes=" << s.num_classes << '\n';
  out << "gain=" << format_double(s.gain) << '\n';
  out << "diode.is=" << format_double(s.diode.saturation_current) << '\n';
  out << "diode.n=" << format_double(s.diode.emission) << '\n';
  out << "diode.vt=" << format_double(s.diode.thermal_voltage) << '\n';
  out << "diode.shift_hi=" << format_double(s.diode.shift_hi) << '\n';
  out << "diode.shift_lo=" << format_double(s.diode.shift_lo) << '\n';
  out << "double_inputs=" << (s.double_inputs ? "true" : "false") << '\n';
  out << "bias_node=" << (s.bias_node ? "true" : "false") << '\n';
  out << "bias_voltage=" << format_double(s.bias_voltage) << '\n';
  out << "init.lower=" << format_double(s.init.lower) << '\n';
  out << "init.scale=" << format_double(s.init.scale) << '\n';
  out << "init.upper=" << (s.init.upper ? format_double(*s.init.upper) : "auto") << '\n';
  return out.str();
}

std::size_t NetworkLayout::weight_count() const {
  std::size_t n = 0;
  for (const auto& w : weights) n += w.size();
  return n;
}

namespace {

void check_shapes(const ArchSpec& spec, const WeightMatrices& weights) {
  if (weights.size() != spec.layer_count()) {
    throw NetlistError("expected " + std::to_string(spec.layer_count()) + " weight matrices, got " +
                       std::to_string(weights.size()));
  }
  for (std::size_t l = 0; l < weights.size(); ++l) {
    const auto r = static_cast<Eigen::Index>(spec.fan_in(l)), c = static_cast<Eigen::Index>(spec.fan_out(l));
    if (weights[l].rows() != r || weights[l].cols() != c) {
      throw NetlistError("weight matrix " + std::to_string(l + 1) + " should be " + std::to_string(r) + "x" +
                         std::to_string(c) + ", got " + std::to_string(weights[l].rows()) + "x" +
                         std::to_string(weights[l].cols()));
    }
  }
}

}  // namespace

LayeredNetwork build_layered_network(const ArchSpec& spec, const WeightMatrices& weights) {
  spec.validate();
  check_shapes(spec, weights);
  LayeredNetwork out;
  Netlist& net = out.net;
  NetworkLayout& lay = out.layout;
  net.set_name("layered");

  // Nodes first, in the order the serialized netlist first mentions them, so
  // a checkpoint parses back to the same node ids.
  NodeId bias = kGround;
  std::vector<std::string> input_names;
  for (std::size_t i = 1; i <= spec.raw_input_dim; ++i) {
    input_names.push_back("x" + std::to_string(i));
    if (spec.double_inputs) input_names.push_back("xn" + std::to_string(i));
  }
  for (const auto& name : input_names) lay.inputs.push_back(net.node(name));
  if (spec.bias_node) {
    bias = net.node("xb");
    lay.inputs.push_back(bias);
  }
  for (std::size_t l = 0; l < spec.hidden_sizes.size(); ++l) {
    const std::string tag = std::to_string(l + 1) + "_";
    lay.hidden_in.emplace_back();
    lay.hidden_out.emplace_back();
    for (std::size_t j = 1; j <= spec.hidden_sizes[l]; ++j) {
      lay.hidden_in.back().push_back(net.node("hin" + tag + std::to_string(j)));
    }
    for (std::size_t j = 1; j <= spec.hidden_sizes[l]; ++j) {
      lay.hidden_out.back().push_back(net.node("hout" + tag + std::to_string(j)));
    }
  }
  for (std::size_t k = 0; k < spec.num_classes; ++k) {
    lay.outputs.push_back(net.node("y" + std::to_string(k) + "p"));
    lay.outputs.push_back(net.node("y" + std::to_string(k) + "m"));
  }

  for (std::size_t i = 0; i < lay.inputs.size(); ++i) {
    const std::string label = net.node_label(lay.inputs[i]);
    net.add_voltage_source("V" + label, lay.inputs[i], kGround, lay.inputs[i] == bias ? spec.bias_voltage : 0.0);
  }

  const Diode upper = spec.diode.upper(), lower = spec.diode.lower();
  for (std::size_t l = 0; l < spec.layer_count(); ++l) {
    std::vector<NodeId> from = l == 0 ? lay.inputs : lay.hidden_out[l - 1];
    const bool hidden = l < spec.hidden_sizes.size();
    if (l > 0 && hidden && spec.bias_node) from.push_back(bias);
    const std::vector<NodeId>& to = hidden ? lay.hidden_in[l] : lay.outputs;

    const std::string tag = std::to_string(l + 1) + "_";
    lay.rows.push_back(from.size());
    lay.cols.push_back(to.size());
    lay.weights.emplace_back();
    lay.weights.back().reserve(from.size() * to.size());
    for (std::size_t i = 0; i < from.size(); ++i) {
      for (std::size_t j = 0; j < to.size(); ++j) {
        lay.weights.back().push_back(net.add_resistor("W" + tag + std::to_string(i + 1) + "_" + std::to_string(j + 1),
                                                      from[i], to[j], weights[l](i, j)));
      }
    }
    if (!hidden) continue;
    for (std::size_t j = 0; j < to.size(); ++j) {
      const std::string id = tag + std::to_string(j + 1);
      net.add_diode("Dhi" + id, to[j], kGround, upper);
      net.add_diode("Dlo" + id, kGround, to[j], lower);
      net.add_amplifier("A" + id, to[j], lay.hidden_out[l][j], spec.gain);
    }
  }

  for (NodeId y : lay.outputs) net.add_current_source("I" + net.node_label(y), y, kGround, 0.0);
  net.set_input_nodes(lay.inputs);
  net.set_output_nodes(lay.outputs);
  return out;
}

WeightMatrices init_conductances(const ArchSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 gen(seed);
  WeightMatrices w;
  for (std::size_t l = 0; l < spec.layer_count(); ++l) {
    const std::size_t r = spec.fan_in(l), c = spec.fan_out(l);
    const double lo = spec.init.lower;
    const double hi = spec.init.upper ? *spec.init.upper : spec.init.scale / std::sqrt(static_cast<double>(r + c));
    Eigen::MatrixXd m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = lo + (hi - lo) * unit_uniform(gen());
    }
    w.push_back(std::move(m));
  }
  return w;
}

WeightMatrices read_weights(const Netlist& net, const NetworkLayout& layout) {
  WeightMatrices w;
  for (std::size_t l = 0; l < layout.weights.size(); ++l) {
    Eigen::MatrixXd m(static_cast<Eigen::Index>(layout.rows[l]), static_cast<Eigen::Index>(layout.cols[l]));
    for (std::size_t k = 0; k < layout.weights[l].size(); ++k) {
      const auto& c = net.component(layout.weights[l][k]);
      if (!c.is<Resistor>()) throw NetlistError("layout does not match netlist: '" + c.name + "' is not a resistor");
      m(static_cast<Eigen::Index>(k / layout.cols[l]), static_cast<Eigen::Index>(k % layout.cols[l])) =
          c.as<Resistor>().conductance;
    }
    w.push_back(std::move(m));
  }
  return w;
}

void write_weights(Netlist& net, const NetworkLayout& layout, const WeightMatrices& weights) {
  if (weights.size() != layout.weights.size()) throw NetlistError("weight matrix count does not match the layout");
  for (std::size_t l = 0; l < weights.size(); ++l) {
    if (weights[l].rows() != static_cast<Eigen::Index>(layout.rows[l]) ||
        weights[l].cols() != static_cast<Eigen::Index>(layout.cols[l])) {
      throw NetlistError("weight matrix " + std::to_string(l + 1) + " does not match the layout");
    }
  }
  for (std::size_t l = 0; l < weights.size(); ++l) {
    for (std::size_t k = 0; k < layout.weights[l].size(); ++k) {
      if (!net.component(layout.weights[l][k]).is<Resistor>()) {
        throw NetlistError("layout does not match netlist");
      }
      net.set_conductance(layout.weights[l][k], weights[l](static_cast<Eigen::Index>(k / layout.cols[l]),
                                                           static_cast<Eigen::Index>(k % layout.cols[l])));
    }
  }
}

NetworkLayout recover_layout(const Netlist& net, const ArchSpec& spec) {
  WeightMatrices ones;
  for (std::size_t l = 0; l < spec.layer_count(); ++l) {
    ones.push_back(Eigen::MatrixXd::Ones(static_cast<Eigen::Index>(spec.fan_in(l)),
                                         static_cast<Eigen::Index>(spec.fan_out(l))));
  }
  LayeredNetwork ref = build_layered_network(spec, ones);
  auto mismatch = [](const std::string& what) {
    throw NetlistError("netlist does not match the architecture: " + what);
  };
  if (net.size() != ref.net.size()) {
    mismatch("expected " + std::to_string(ref.net.size()) + " components, found " + std::to_string(net.size()));
  }
  if (net.nodes() != ref.net.nodes()) mismatch("node sets differ");
  for (std::size_t i = 0; i < net.size(); ++i) {
    const auto& a = net.component(i);
    const auto& b = ref.net.component(i);
    if (a.name != b.name || a.kind() != b.kind() || a.a != b.a || a.b != b.b) mismatch("component '" + a.name + "'");
    if (!a.is<Resistor>() && !a.is<VoltageSource>() && a.params != b.params) {
      mismatch("parameters of '" + a.name + "'");
    }
  }
  for (NodeId n : net.nodes()) {
    if (net.node_label(n) != ref.net.node_label(n)) mismatch("node " + std::to_string(n) + " label");
  }
  if (net.input_nodes() != ref.net.input_nodes() || net.output_nodes() != ref.net.output_nodes()) {
    mismatch("input/output designations");
  }
  return ref.layout;
}

std::vector<double> encode_input(std::span<const double> x, const ArchSpec& spec) {
  if (x.size() != spec.raw_input_dim) {
    throw Error("expected " + std::to_string(spec.raw_input_dim) + " input values, got " + std::to_string(x.size()));
  }
  std::vector<double> v;
  v.reserve(spec.input_count());
  for (double xi : x) {
    v.push_back(xi);
    if (spec.double_inputs) v.push_back(-xi);
  }
  if (spec.bias_node) v.push_back(spec.bias_voltage);
  return v;
}

}  // namespace aeq

#include <array>
#include <charconv>
#include <cmath>
#include <optional>
#include <string>
#include <unordered_set>

#include "aeq/circuit.hpp"

namespace aeq {

namespace {

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    const std::size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

double parse_number(std::string_view text, std::size_t line, std::string_view key) {
  std::string_view body = text;
  if (!body.empty() && body.front() == '+') body.remove_prefix(1);
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(body.data(), body.data() + body.size(), value);
  if (body.empty() || ec != std::errc{} || ptr != body.data() + body.size()) {
    throw ParseError(line, "malformed number '" + std::string(text) + "' for " + std::string(key));
  }
  if (!std::isfinite(value)) throw ParseError(line, "non-finite parameter " + std::string(key));
  return value;
}

/// key=value parameters; every key in `keys` must appear exactly once unless
/// it has a default.
struct ParamSpec {
  std::string_view key;
  bool positive;
  std::optional<double> fallback;
};

template <std::size_t N>
std::array<double, N> parse_params(std::span<const std::string_view> tokens, const std::array<ParamSpec, N>& spec,
                                   std::size_t line) {
  std::array<double, N> values{};
  std::array<bool, N> seen{};
  for (std::string_view tok : tokens) {
    const auto eq = tok.find('=');
    if (eq == std::string_view::npos) throw ParseError(line, "expected key=value, got '" + std::string(tok) + "'");
    const std::string_view key = tok.substr(0, eq);
    std::size_t slot = N;
    for (std::size_t i = 0; i < N; ++i) {
      if (spec[i].key == key) slot = i;
    }
    if (slot == N) throw ParseError(line, "unknown parameter '" + std::string(key) + "'");
    if (seen[slot]) throw ParseError(line, "duplicate parameter '" + std::string(key) + "'");
    seen[slot] = true;
    values[slot] = parse_number(tok.substr(eq + 1), line, key);
    if (spec[slot].positive && !(values[slot] > 0.0)) {
      throw ParseError(line, "non-positive parameter " + std::string(key));
    }
  }
  for (std::size_t i = 0; i < N; ++i) {
    if (seen[i]) continue;
    if (!spec[i].fallback) throw ParseError(line, "missing parameter '" + std::string(spec[i].key) + "'");
    values[i] = *spec[i].fallback;
  }
  return values;
}

struct Statement {
  std::size_t line;
  std::vector<std::string_view> tokens;
};

bool is_numeric_token(std::string_view s) {
  return !s.empty() && s.find_first_not_of("0123456789") == std::string_view::npos;
}

}  // namespace

Netlist parse_netlist(std::string_view text) {
  std::vector<Statement> statements;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t end = std::min(text.find('\n', pos), text.size());
    std::string_view line = text.substr(pos, end - pos);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    auto tokens = split_ws(line);
    if (!tokens.empty()) statements.push_back({line_no, std::move(tokens)});
    if (end == text.size()) break;
    pos = end + 1;
  }

  if (statements.empty() || statements.front().tokens.front() != "NET") {
    throw ParseError(statements.empty() ? 1 : statements.front().line, "expected 'NET <name>' header");
  }
  const auto& header = statements.front();
  if (header.tokens.size() != 2) throw ParseError(header.line, "expected 'NET <name>'");
  Netlist net(std::string(header.tokens[1]));

  // Numeric node ids are declared before any symbolic label is numbered, so
  // symbolic nodes get ids above every numeric one in first-appearance order.
  for (std::size_t s = 1; s < statements.size(); ++s) {
    const auto& st = statements[s];
    const auto kw = st.tokens.front();
    if (kw.size() == 1 && std::string_view("RDVIA").find(kw) != std::string_view::npos && st.tokens.size() >= 4) {
      for (std::size_t t = 2; t < 4; ++t) {
        if (!is_numeric_token(st.tokens[t])) continue;
        try {
          net.node(st.tokens[t]);
        } catch (const NetlistError& e) {
          throw ParseError(st.line, e.what());
        }
      }
    }
  }

  std::vector<const Statement*> role_lines;
  for (std::size_t s = 1; s < statements.size(); ++s) {
    const auto& st = statements[s];
    const auto kw = st.tokens.front();
    if (kw == "INPUT" || kw == "OUTPUT") {
      if (st.tokens.size() < 2) throw ParseError(st.line, std::string(kw) + " needs at least one node");
      role_lines.push_back(&st);
      continue;
    }
    if (kw == "NET") throw ParseError(st.line, "duplicate NET header");
    if (kw.size() != 1 || std::string_view("RDVIA").find(kw) == std::string_view::npos) {
      throw ParseError(st.line, "unknown statement '" + std::string(kw) + "'");
    }
    if (st.tokens.size() < 4) throw ParseError(st.line, "expected '<kind> <name> <node> <node> ...'");

    const std::span<const std::string_view> params(st.tokens.begin() + 4, st.tokens.end());
    ComponentParams cp;
    switch (kw.front()) {
      case 'R': {
        static constexpr std::array<ParamSpec, 1> spec{{{"g", true, std::nullopt}}};
        cp = Resistor{parse_params(params, spec, st.line)[0]};
        break;
      }
      case 'D': {
        static constexpr std::array<ParamSpec, 4> spec{{{"is", true, std::nullopt},
                                                        {"n", true, std::nullopt},
                                                        {"vt", true, std::nullopt},
                                                        {"vshift", false, 0.0}}};
        const auto v = parse_params(params, spec, st.line);
        cp = Diode{v[0], v[1], v[2], v[3]};
        break;
      }
      case 'V': {
        static constexpr std::array<ParamSpec, 1> spec{{{"dc", false, std::nullopt}}};
        cp = VoltageSource{parse_params(params, spec, st.line)[0]};
        break;
      }
      case 'I': {
        static constexpr std::array<ParamSpec, 1> spec{{{"dc", false, std::nullopt}}};
        cp = CurrentSource{parse_params(params, spec, st.line)[0]};
        break;
      }
      case 'A': {
        static constexpr std::array<ParamSpec, 1> spec{{{"gain", true, std::nullopt}}};
        cp = Amplifier{parse_params(params, spec, st.line)[0]};
        break;
      }
    }
    try {
      const NodeId a = net.node(st.tokens[2]);
      const NodeId b = net.node(st.tokens[3]);
      net.add(Component{std::string(st.tokens[1]), a, b, cp});
    } catch (const NetlistError& e) {
      throw ParseError(st.line, e.what());
    }
  }

  std::vector<NodeId> inputs, outputs;
  for (const Statement* st : role_lines) {
    auto& target = st->tokens.front() == "INPUT" ? inputs : outputs;
    for (std::size_t t = 1; t < st->tokens.size(); ++t) {
      const auto id = net.find_node(st->tokens[t]);
      if (!id) throw ParseError(st->line, "reference to undeclared node '" + std::string(st->tokens[t]) + "'");
      target.push_back(*id);
    }
    try {
      if (&target == &inputs) {
        net.set_input_nodes(inputs);
      } else {
        net.set_output_nodes(outputs);
      }
    } catch (const NetlistError& e) {
      throw ParseError(st->line, e.what());
    }
  }

  if (const auto violations = validate(net); !violations.empty()) {
    throw ParseError(0, "invalid netlist: " + violations.front());
  }
  return net;
}

namespace {

void append_number(std::string& out, double v) {
  std::array<char, 32> buf{};
  const auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  out.append(buf.data(), ptr);
}

}  // namespace

std::string serialize_netlist(const Netlist& net) {
  std::string out;
  out.reserve(64 + net.size() * 40);
  out += "NET ";
  out += net.name();
  out += '\n';
  for (const auto& c : net.components()) {
    auto head = [&](char kind) {
      out += kind;
      out += ' ';
      out += c.name;
      out += ' ';
      out += net.node_label(c.a);
      out += ' ';
      out += net.node_label(c.b);
    };
    auto param = [&](std::string_view key, double v) {
      out += ' ';
      out += key;
      out += '=';
      append_number(out, v);
    };
    switch (c.kind()) {
      case ComponentKind::Resistor:
        head('R');
        param("g", c.as<Resistor>().conductance);
        break;
      case ComponentKind::Diode: {
        const auto& d = c.as<Diode>();
        head('D');
        param("is", d.saturation_current);
        param("n", d.emission);
        param("vt", d.thermal_voltage);
        param("vshift", d.shift);
        break;
      }
      case ComponentKind::VoltageSource:
        head('V');
        param("dc", c.as<VoltageSource>().dc);
        break;
      case ComponentKind::CurrentSource:
        head('I');
        param("dc", c.as<CurrentSource>().dc);
        break;
      case ComponentKind::Amplifier:
        head('A');
        param("gain", c.as<Amplifier>().gain);
        break;
    }
    out += '\n';
  }
  auto roles = [&](std::string_view kw, const std::vector<NodeId>& nodes) {
    if (nodes.empty()) return;
    out += kw;
    for (NodeId n : nodes) {
      out += ' ';
      out += net.node_label(n);
    }
    out += '\n';
  };
  roles("INPUT", net.input_nodes());
  roles("OUTPUT", net.output_nodes());
  return out;
}

}  // namespace aeq

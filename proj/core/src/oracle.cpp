#include "aeq/oracle.hpp"

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <algorithm>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <cmath>
#include <limits>

namespace aeq::oracle {

namespace {

PhaseOptions tight(const FDSpec& spec, const std::vector<double>* warm) {
  PhaseOptions opts;
  opts.solve.residual_tol = spec.residual_tol;
  opts.solve.max_iters = 500;
  if (warm) opts.solve.warm_start = *warm;
  return opts;
}

double loss_at(PhaseRunner& runner, const Netlist& net, std::span<const double> inputs,
               std::span<const double> target, const LossSpec& loss, const FDSpec& spec,
               const std::vector<double>* warm) {
  const PhaseRecord rec = runner.run_free(net, inputs, tight(spec, warm));
  double value = loss_value(loss, rec.outputs, target);
  if (loss.weight_decay > 0.0) {
    for (const auto& c : net.components()) {
      if (!c.is<Resistor>()) continue;
      const double g = c.as<Resistor>().conductance;
      value += 0.5 * loss.weight_decay * g * g;
    }
  }
  return value;
}

double& param_slot(Netlist& net, const ParamRef& p) {
  const std::size_t idx = net.index_of(p.component);
  auto& params = net.params(idx);
  switch (p.field) {
    case ParamField::Conductance:
      if (auto* r = std::get_if<Resistor>(&params)) return r->conductance;
      break;
    case ParamField::SaturationCurrent:
      if (auto* d = std::get_if<Diode>(&params)) return d->saturation_current;
      break;
  }
  throw NetlistError("component '" + p.component + "' has no such parameter");
}

}  // namespace

double free_phase_loss(const Netlist& net, const Probe& probe, const LossSpec& loss, const FDSpec& spec) {
  PhaseRunner runner(net);
  return loss_at(runner, net, probe.inputs, probe.target, loss, spec, nullptr);
}

std::vector<double> fd_loss_gradients(const Netlist& net, const Probe& probe, const LossSpec& loss,
                                      std::span<const ParamRef> params, const FDSpec& spec) {
  if (!(spec.h_rel > 0.0)) throw Error("finite-difference step must be positive");
  Netlist work = net;
  PhaseRunner runner(work);
  const std::vector<double> warm = runner.run_free(work, probe.inputs, tight(spec, nullptr)).voltages;
  std::vector<double> grad;
  grad.reserve(params.size());
  for (const ParamRef& p : params) {
    double& w = param_slot(work, p);
    const double w0 = w;
    const double h = spec.h_rel * (w0 != 0.0 ? std::abs(w0) : 1.0);
    w = w0 + h;
    const double up = loss_at(runner, work, probe.inputs, probe.target, loss, spec, &warm);
    w = w0 - h;
    const double down = loss_at(runner, work, probe.inputs, probe.target, loss, spec, &warm);
    w = w0;
    grad.push_back((up - down) / (2.0 * h));
  }
  return grad;
}

double fd_loss_gradient(const Netlist& net, const Probe& probe, const LossSpec& loss, const ParamRef& param,
                        const FDSpec& spec) {
  return fd_loss_gradients(net, probe, loss, std::span<const ParamRef>(&param, 1), spec).front();
}

std::vector<double> fd_input_gradient(const Netlist& net, const Probe& probe, const LossSpec& loss, double h,
                                      const FDSpec& spec) {
  if (!(h > 0.0)) throw Error("finite-difference step must be positive");
  PhaseRunner runner(net);
  const std::vector<double> warm = runner.run_free(net, probe.inputs, tight(spec, nullptr)).voltages;
  std::vector<double> x = probe.inputs;
  std::vector<double> grad(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double x0 = x[i];
    x[i] = x0 + h;
    const double up = loss_at(runner, net, x, probe.target, loss, spec, &warm);
    x[i] = x0 - h;
    const double down = loss_at(runner, net, x, probe.target, loss, spec, &warm);
    x[i] = x0;
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

namespace {

/// Node voltages fixed by grounded chains of voltage sources; NaN elsewhere.
std::vector<double> pinned_voltages(const Netlist& net) {
  std::vector<double> v(net.node_slots(), std::nan(""));
  v[kGround] = 0.0;
  std::vector<std::size_t> pending;
  for (std::size_t i = 0; i < net.size(); ++i) {
    const auto& c = net.component(i);
    if (c.is<Amplifier>()) throw NetlistError("oracle does not support amplifiers");
    if (c.is<VoltageSource>()) pending.push_back(i);
  }
  while (!pending.empty()) {
    std::vector<std::size_t> still;
    for (std::size_t i : pending) {
      const auto& c = net.component(i);
      const double dc = c.as<VoltageSource>().dc;
      if (!std::isnan(v[c.b]) && std::isnan(v[c.a])) {
        v[c.a] = v[c.b] + dc;
      } else if (!std::isnan(v[c.a]) && std::isnan(v[c.b])) {
        v[c.b] = v[c.a] - dc;
      } else if (std::isnan(v[c.a]) && std::isnan(v[c.b])) {
        still.push_back(i);
      } else {
        throw SolveError(SolveError::Kind::Singular, "voltage source loop through '" + c.name + "'");
      }
    }
    if (still.size() == pending.size()) throw NetlistError("oracle requires every voltage source to reach ground");
    pending = std::move(still);
  }
  return v;
}

}  // namespace

LinearSolution linear_network_solution(const Netlist& net) {
  for (const auto& c : net.components()) {
    if (c.is<Diode>() || c.is<Amplifier>()) {
      throw NetlistError("linear oracle accepts resistors and sources only, found '" + c.name + "'");
    }
  }
  LinearSolution out;
  out.voltages = pinned_voltages(net);
  out.g_terms.assign(net.node_slots(), 0.0);

  std::vector<int> row(net.node_slots(), -1);
  int n = 0;
  for (NodeId node : net.nodes()) {
    if (std::isnan(out.voltages[node])) row[node] = n++;
  }
  std::vector<Eigen::Triplet<double>> trip;
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n);
  for (const auto& c : net.components()) {
    if (c.is<Resistor>()) {
      const double g = c.as<Resistor>().conductance;
      out.g_terms[c.a] += g;
      out.g_terms[c.b] += g;
      const int ra = row[c.a], rb = row[c.b];
      if (ra >= 0) trip.emplace_back(ra, ra, g);
      if (rb >= 0) trip.emplace_back(rb, rb, g);
      if (ra >= 0 && rb >= 0) {
        trip.emplace_back(ra, rb, -g);
        trip.emplace_back(rb, ra, -g);
      } else if (ra >= 0) {
        rhs[ra] += g * out.voltages[c.b];
      } else if (rb >= 0) {
        rhs[rb] += g * out.voltages[c.a];
      }
    } else if (c.is<CurrentSource>()) {
      if (row[c.a] >= 0) rhs[row[c.a]] += c.as<CurrentSource>().dc;
      if (row[c.b] >= 0) rhs[row[c.b]] -= c.as<CurrentSource>().dc;
    }
  }
  for (double& v : out.voltages) {
    if (std::isnan(v)) v = 0.0;  // undeclared slots and, below, unknowns
  }
  for (NodeId node : net.nodes()) {
    if (row[node] >= 0 && out.g_terms[node] <= 0.0) {
      throw SolveError(SolveError::Kind::Singular, "isolated node " + net.node_label(node));
    }
  }
  if (n == 0) return out;

  Eigen::SparseMatrix<double> G(n, n);
  G.setFromTriplets(trip.begin(), trip.end());
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(G);
  if (ldlt.info() != Eigen::Success) throw SolveError(SolveError::Kind::Singular, "singular weighted-mean system");
  const Eigen::VectorXd x = ldlt.solve(rhs);
  if (ldlt.info() != Eigen::Success || !x.allFinite()) {
    throw SolveError(SolveError::Kind::Singular, "singular weighted-mean system");
  }
  for (NodeId node : net.nodes()) {
    if (row[node] >= 0) out.voltages[node] = x[row[node]];
  }
  return out;
}

namespace {

struct EnergyModel {
  const Netlist& net;
  std::vector<int> row;
  std::vector<NodeId> floating;

  void gradient(const std::vector<double>& v, std::vector<double>& grad, double& g_max) const {
    std::fill(grad.begin(), grad.end(), 0.0);
    std::vector<double> slope(net.node_slots(), 0.0);
    for (const auto& c : net.components()) {
      const double dv = v[c.a] - v[c.b];
      double i = 0.0;
      if (c.is_two_terminal()) {
        i = iv_characteristic(c, dv);
        const double s = iv_slope(c, dv);
        slope[c.a] += s;
        slope[c.b] += s;
      } else if (c.is<CurrentSource>()) {
        i = -c.as<CurrentSource>().dc;
      } else {
        continue;
      }
      if (row[c.a] >= 0) grad[row[c.a]] += i;
      if (row[c.b] >= 0) grad[row[c.b]] -= i;
    }
    g_max = 0.0;
    for (NodeId n : floating) g_max = std::max(g_max, slope[n]);
  }
};

}  // namespace

DescentResult pseudo_power_descent(const Netlist& net, int max_iters, double step_scale, double grad_tol) {
  for (const auto& c : net.components()) {
    if (c.is<Amplifier>()) throw NetlistError("energy function undefined for controlled sources");
  }
  DescentResult out;
  out.voltages = pinned_voltages(net);
  EnergyModel model{net, std::vector<int>(net.node_slots(), -1), {}};
  for (NodeId n : net.nodes()) {
    if (std::isnan(out.voltages[n])) {
      model.row[n] = static_cast<int>(model.floating.size());
      model.floating.push_back(n);
      out.voltages[n] = 0.0;
    }
  }
  for (double& x : out.voltages) {
    if (std::isnan(x)) x = 0.0;
  }

  // Rounding noise of a pseudo-power total, so steps near the minimum are not
  // rejected for changes the sum cannot resolve.
  auto energy_and_noise = [&](const std::vector<double>& v, double& noise) {
    double total = 0.0, magnitude = 0.0;
    for (const auto& c : net.components()) {
      const double dv = v[c.a] - v[c.b];
      double p = 0.0;
      if (c.is_two_terminal()) {
        p = pseudo_power_component(c, dv);
      } else if (c.is<CurrentSource>()) {
        p = -c.as<CurrentSource>().dc * dv;
      }
      total += p;
      magnitude += std::abs(p);
    }
    noise = 16.0 * std::numeric_limits<double>::epsilon() * magnitude;
    return total;
  };

  std::vector<double> grad(model.floating.size()), trial;
  double noise = 0.0;
  double energy = energy_and_noise(out.voltages, noise);
  for (int it = 0; it < max_iters; ++it) {
    double g_max = 0.0;
    model.gradient(out.voltages, grad, g_max);
    double worst = 0.0;
    for (double g : grad) worst = std::max(worst, std::abs(g));
    if (worst <= grad_tol) {
      out.converged = true;
      break;
    }
    if (!(g_max > 0.0)) throw SolveError(SolveError::Kind::Singular, "isolated floating node");
    double step = step_scale / g_max;
    bool accepted = false;
    for (int h = 0; h <= 60 && !accepted; ++h, step *= 0.5) {
      trial = out.voltages;
      for (std::size_t k = 0; k < model.floating.size(); ++k) trial[model.floating[k]] -= step * grad[k];
      double trial_noise = 0.0;
      const double e = energy_and_noise(trial, trial_noise);
      if (std::isfinite(e) && e <= energy + std::max(noise, trial_noise)) {
        energy = e;
        noise = trial_noise;
        accepted = true;
      }
    }
    if (!accepted) {
      if (!std::isfinite(energy)) throw SolveError(SolveError::Kind::NonConvergence, "pseudo-power descent diverged");
      break;
    }
    out.voltages.swap(trial);
    out.energy.push_back(energy);
    out.iterations = it + 1;
  }
  if (!out.converged) {
    double g_max = 0.0;
    model.gradient(out.voltages, grad, g_max);
    double worst = 0.0;
    for (double g : grad) worst = std::max(worst, std::abs(g));
    out.converged = worst <= grad_tol;
  }
  return out;
}

double relative_error(double estimate, double reference, double floor) {
  return std::abs(estimate - reference) / std::max(std::abs(reference), floor);
}

std::vector<double> relative_errors(std::span<const double> estimate, std::span<const double> reference) {
  if (estimate.size() != reference.size()) throw Error("relative_errors: size mismatch");
  double scale = 0.0;
  for (double r : reference) scale = std::max(scale, std::abs(r));
  const double floor = scale > 0.0 ? 1e-6 * scale : std::numeric_limits<double>::min();
  std::vector<double> out(estimate.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = relative_error(estimate[i], reference[i], floor);
  return out;
}

ErrorSummary summarize_errors(std::vector<double> errors) {
  ErrorSummary s;
  s.count = errors.size();
  if (errors.empty()) return s;
  std::sort(errors.begin(), errors.end());
  auto rank = [&](double q) {
    const auto k = static_cast<std::size_t>(std::ceil(q * static_cast<double>(errors.size())));
    return errors[std::clamp<std::size_t>(k, 1, errors.size()) - 1];
  };
  s.median = rank(0.5);
  s.p95 = rank(0.95);
  s.max = errors.back();
  return s;
}

double quadrature_pseudo_power(const Component& c, double dv) {
  if (dv == 0.0) return 0.0;
  auto f = [&](double v) { return iv_characteristic(c, v); };
  double err = 0.0;
  return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, 0.0, dv, 20, 1e-15, &err);
}

}  // namespace aeq::oracle

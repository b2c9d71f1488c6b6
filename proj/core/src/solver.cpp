#include "aeq/solver.hpp"

#include <Eigen/Sparse>
#include <Eigen/SparseLU>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace aeq {

namespace {

constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
// Constraint rows (source and VCVS equations) are linear and hit roundoff after
// one full Newton step.
constexpr double kConstraintTol = 1e-10;
constexpr int kMaxHalvings = 40;

}  // namespace

NodeClassification classify_nodes(const Netlist& net) {
  const std::size_t slots = net.node_slots();
  NodeClassification cls;
  cls.roles.assign(slots, NodeRole::Floating);
  cls.roles[kGround] = NodeRole::Ground;
  cls.driver.assign(slots, kNone);

  std::vector<std::size_t> pending;
  for (std::size_t i = 0; i < net.size(); ++i) {
    if (net.component(i).is<VoltageSource>()) pending.push_back(i);
  }
  bool progress = true;
  while (progress && !pending.empty()) {
    progress = false;
    std::vector<std::size_t> still;
    for (std::size_t idx : pending) {
      const auto& c = net.component(idx);
      const bool fa = cls.is_fixed(c.a), fb = cls.is_fixed(c.b);
      if (fa && fb) {
        throw SolveError(SolveError::Kind::Singular,
                         "floating subnetwork or inconsistent sources: voltage source loop through '" + c.name + "'");
      }
      if (fa) {
        cls.pins.push_back({idx, c.b, c.a, -1.0});
        cls.roles[c.b] = NodeRole::Pinned;
        progress = true;
      } else if (fb) {
        cls.pins.push_back({idx, c.a, c.b, 1.0});
        cls.roles[c.a] = NodeRole::Pinned;
        progress = true;
      } else {
        still.push_back(idx);
      }
    }
    pending = std::move(still);
  }
  cls.floating_sources = std::move(pending);

  for (std::size_t i = 0; i < net.size(); ++i) {
    const auto& c = net.component(i);
    if (!c.is<Amplifier>()) continue;
    if (cls.roles[c.b] != NodeRole::Floating || cls.driver[c.b] != kNone) {
      throw SolveError(SolveError::Kind::Singular,
                       "floating subnetwork or inconsistent sources: conflicting drivers at node " +
                           net.node_label(c.b));
    }
    cls.roles[c.b] = NodeRole::Driven;
    cls.driver[c.b] = i;
  }
  return cls;
}

struct SteadyStateSolver::Plan {
  NodeClassification cls;
  std::size_t slots = 0;
  std::size_t component_count = 0;

  std::vector<int> node_row;                         // by NodeId, -1 when fixed
  std::vector<std::pair<NodeId, int>> unknown_nodes;  // (node, row)
  std::size_t node_rows = 0;
  std::size_t unknowns = 0;

  struct Branch {
    std::size_t comp;
    NodeId a, b;
    int ra, rb;
    int s_aa, s_ab, s_ba, s_bb;  // slots in the Jacobian value array, -1 when absent
  };
  std::vector<Branch> resistors;
  std::vector<Branch> diodes;

  struct Injection {
    std::size_t comp;
    int ra, rb;
  };
  std::vector<Injection> current_sources;

  struct Constraint {
    std::size_t comp;
    NodeId a, b;  // source: (+, -); amplifier: (in, out)
    int ra, rb;
    int row;
    int s_a_row, s_b_row, s_row_a, s_row_b;
  };
  std::vector<Constraint> floating_sources;
  std::vector<Constraint> amplifiers;

  std::vector<std::size_t> source_slot;  // by component: index into per-solve source values
  std::vector<std::size_t> sources;      // components with a dc value, in slot order

  Eigen::SparseMatrix<double> pattern;
};

struct SteadyStateSolver::Workspace {
  Eigen::SparseMatrix<double> jac;
  Eigen::SparseLU<Eigen::SparseMatrix<double>, Eigen::COLAMDOrdering<int>> lu;
  std::vector<double> g;        // resistor conductances
  std::vector<Diode> diode;     // diode parameters
  std::vector<double> dc;       // source values
  std::vector<double> gain;     // amplifier gains
  std::vector<double> v;        // node voltages by NodeId
  Eigen::VectorXd x, f, dx, trial_x, trial_f;

  explicit Workspace(const Plan& plan) : jac(plan.pattern) {
    if (plan.unknowns > 0) lu.analyzePattern(jac);
  }
};

namespace {

int find_slot(Eigen::SparseMatrix<double>& m, int r, int c) {
  if (r < 0 || c < 0) return -1;
  return static_cast<int>(&m.coeffRef(r, c) - m.valuePtr());
}

}  // namespace

SteadyStateSolver::SteadyStateSolver(const Netlist& topology) {
  auto plan = std::make_shared<Plan>();
  plan->cls = classify_nodes(topology);
  plan->slots = topology.node_slots();
  plan->component_count = topology.size();
  plan->node_row.assign(plan->slots, -1);

  for (NodeId n : topology.nodes()) {
    const NodeRole role = plan->cls.roles[n];
    if (role == NodeRole::Floating || role == NodeRole::Driven) {
      const int row = static_cast<int>(plan->unknown_nodes.size());
      plan->node_row[n] = row;
      plan->unknown_nodes.emplace_back(n, row);
    }
  }
  plan->node_rows = plan->unknown_nodes.size();
  int next_row = static_cast<int>(plan->node_rows);

  plan->source_slot.assign(topology.size(), kNone);
  auto add_source_slot = [&](std::size_t comp) {
    plan->source_slot[comp] = plan->sources.size();
    plan->sources.push_back(comp);
  };

  std::vector<Eigen::Triplet<double>> triplets;
  auto touch = [&](int r, int c) {
    if (r >= 0 && c >= 0) triplets.emplace_back(r, c, 0.0);
  };
  const auto& rows = plan->node_row;

  std::vector<char> floating_source(topology.size(), 0);
  for (std::size_t idx : plan->cls.floating_sources) floating_source[idx] = 1;

  for (std::size_t i = 0; i < topology.size(); ++i) {
    const auto& c = topology.component(i);
    const int ra = rows[c.a], rb = rows[c.b];
    switch (c.kind()) {
      case ComponentKind::Resistor:
      case ComponentKind::Diode: {
        Plan::Branch br{i, c.a, c.b, ra, rb, -1, -1, -1, -1};
        touch(ra, ra);
        touch(ra, rb);
        touch(rb, ra);
        touch(rb, rb);
        (c.is<Resistor>() ? plan->resistors : plan->diodes).push_back(br);
        break;
      }
      case ComponentKind::CurrentSource:
        add_source_slot(i);
        plan->current_sources.push_back({i, ra, rb});
        break;
      case ComponentKind::VoltageSource:
        add_source_slot(i);
        if (floating_source[i]) {
          const int row = next_row++;
          plan->floating_sources.push_back({i, c.a, c.b, ra, rb, row, -1, -1, -1, -1});
          touch(ra, row);
          touch(rb, row);
          touch(row, ra);
          touch(row, rb);
        }
        break;
      case ComponentKind::Amplifier: {
        const int row = next_row++;
        plan->amplifiers.push_back({i, c.a, c.b, ra, rb, row, -1, -1, -1, -1});
        touch(ra, row);
        touch(rb, row);
        touch(row, ra);
        touch(row, rb);
        break;
      }
    }
  }
  plan->unknowns = static_cast<std::size_t>(next_row);

  const auto n = static_cast<Eigen::Index>(plan->unknowns);
  plan->pattern.resize(n, n);
  plan->pattern.setFromTriplets(triplets.begin(), triplets.end());
  plan->pattern.makeCompressed();

  auto& m = plan->pattern;
  for (auto* list : {&plan->resistors, &plan->diodes}) {
    for (auto& br : *list) {
      br.s_aa = find_slot(m, br.ra, br.ra);
      br.s_ab = find_slot(m, br.ra, br.rb);
      br.s_ba = find_slot(m, br.rb, br.ra);
      br.s_bb = find_slot(m, br.rb, br.rb);
    }
  }
  for (auto* list : {&plan->floating_sources, &plan->amplifiers}) {
    for (auto& k : *list) {
      k.s_a_row = find_slot(m, k.ra, k.row);
      k.s_b_row = find_slot(m, k.rb, k.row);
      k.s_row_a = find_slot(m, k.row, k.ra);
      k.s_row_b = find_slot(m, k.row, k.rb);
    }
  }

  plan_ = std::move(plan);
  ws_ = std::make_unique<Workspace>(*plan_);
}

SteadyStateSolver::SteadyStateSolver(const SteadyStateSolver& other)
    : plan_(other.plan_), ws_(std::make_unique<Workspace>(*other.plan_)) {}

SteadyStateSolver& SteadyStateSolver::operator=(const SteadyStateSolver& other) {
  if (this != &other) {
    plan_ = other.plan_;
    ws_ = std::make_unique<Workspace>(*plan_);
  }
  return *this;
}

SteadyStateSolver::SteadyStateSolver(SteadyStateSolver&&) noexcept = default;
SteadyStateSolver& SteadyStateSolver::operator=(SteadyStateSolver&&) noexcept = default;
SteadyStateSolver::~SteadyStateSolver() = default;

std::size_t SteadyStateSolver::unknowns() const { return plan_->unknowns; }
const NodeClassification& SteadyStateSolver::classification() const { return plan_->cls; }

namespace {

template <class Plan, class Workspace>
void spread_voltages(const Plan& plan, Workspace& ws, const Eigen::VectorXd& x) {
  for (const auto& [node, row] : plan.unknown_nodes) ws.v[node] = x[row];
  for (const auto& pin : plan.cls.pins) {
    ws.v[pin.node] = ws.v[pin.reference] + pin.sign * ws.dc[plan.source_slot[pin.source]];
  }
}

/// Residual F(x) and, when `jac` is non-null, its Jacobian values.
template <class Plan, class Workspace>
void evaluate(const Plan& plan, Workspace& ws, const Eigen::VectorXd& x, Eigen::VectorXd& f, double* jac) {
  spread_voltages(plan, ws, x);
  f.setZero();
  const auto& v = ws.v;
  auto stamp = [&](int slot, double value) {
    if (slot >= 0) jac[slot] += value;
  };

  for (std::size_t k = 0; k < plan.resistors.size(); ++k) {
    const auto& br = plan.resistors[k];
    const double g = ws.g[k];
    const double i = g * (v[br.a] - v[br.b]);
    if (br.ra >= 0) f[br.ra] += i;
    if (br.rb >= 0) f[br.rb] -= i;
    if (jac) {
      stamp(br.s_aa, g);
      stamp(br.s_ab, -g);
      stamp(br.s_ba, -g);
      stamp(br.s_bb, g);
    }
  }
  for (std::size_t k = 0; k < plan.diodes.size(); ++k) {
    const auto& br = plan.diodes[k];
    const double dv = v[br.a] - v[br.b];
    const double i = diode_current(ws.diode[k], dv);
    if (br.ra >= 0) f[br.ra] += i;
    if (br.rb >= 0) f[br.rb] -= i;
    if (jac) {
      const double g = diode_slope(ws.diode[k], dv);
      stamp(br.s_aa, g);
      stamp(br.s_ab, -g);
      stamp(br.s_ba, -g);
      stamp(br.s_bb, g);
    }
  }
  for (const auto& cs : plan.current_sources) {
    const double i = ws.dc[plan.source_slot[cs.comp]];
    if (cs.ra >= 0) f[cs.ra] -= i;
    if (cs.rb >= 0) f[cs.rb] += i;
  }
  for (const auto& src : plan.floating_sources) {
    const double i = x[src.row];
    if (src.ra >= 0) f[src.ra] -= i;
    if (src.rb >= 0) f[src.rb] += i;
    f[src.row] = v[src.a] - v[src.b] - ws.dc[plan.source_slot[src.comp]];
    if (jac) {
      stamp(src.s_a_row, -1.0);
      stamp(src.s_b_row, 1.0);
      stamp(src.s_row_a, 1.0);
      stamp(src.s_row_b, -1.0);
    }
  }
  for (std::size_t k = 0; k < plan.amplifiers.size(); ++k) {
    const auto& amp = plan.amplifiers[k];
    const double gain = ws.gain[k];
    const double i_out = x[amp.row];
    if (amp.rb >= 0) f[amp.rb] -= i_out;
    if (amp.ra >= 0) f[amp.ra] += i_out / gain;
    f[amp.row] = v[amp.b] - gain * v[amp.a];
    if (jac) {
      stamp(amp.s_b_row, -1.0);
      stamp(amp.s_a_row, 1.0 / gain);
      stamp(amp.s_row_b, 1.0);
      stamp(amp.s_row_a, -gain);
    }
  }
}

}  // namespace

SolveResult SteadyStateSolver::solve(const Netlist& net, const SolveOptions& opts,
                                     std::span<const SourceOverride> overrides) {
  const Plan& plan = *plan_;
  Workspace& ws = *ws_;
  if (net.size() != plan.component_count || net.node_slots() != plan.slots) {
    throw NetlistError("netlist topology differs from the one the solver was built for");
  }
  if (!(opts.residual_tol > 0.0) || opts.max_iters < 1 || !(opts.damping > 0.0 && opts.damping <= 1.0)) {
    throw Error("invalid solve options: need residual_tol > 0, max_iters >= 1, damping in (0, 1]");
  }

  ws.g.resize(plan.resistors.size());
  for (std::size_t k = 0; k < plan.resistors.size(); ++k) {
    ws.g[k] = std::get<Resistor>(net.components()[plan.resistors[k].comp].params).conductance;
  }
  ws.diode.resize(plan.diodes.size());
  for (std::size_t k = 0; k < plan.diodes.size(); ++k) {
    ws.diode[k] = std::get<Diode>(net.components()[plan.diodes[k].comp].params);
  }
  ws.gain.resize(plan.amplifiers.size());
  for (std::size_t k = 0; k < plan.amplifiers.size(); ++k) {
    ws.gain[k] = std::get<Amplifier>(net.components()[plan.amplifiers[k].comp].params).gain;
  }
  ws.dc.resize(plan.sources.size());
  for (std::size_t s = 0; s < plan.sources.size(); ++s) {
    const auto& c = net.components()[plan.sources[s]];
    ws.dc[s] = c.is<VoltageSource>() ? c.as<VoltageSource>().dc : c.as<CurrentSource>().dc;
  }
  for (const auto& o : overrides) {
    if (o.component >= plan.source_slot.size() || plan.source_slot[o.component] == kNone) {
      throw NetlistError("source override targets a component that is not a source");
    }
    ws.dc[plan.source_slot[o.component]] = o.value;
  }

  const auto n = static_cast<Eigen::Index>(plan.unknowns);
  ws.v.assign(plan.slots, 0.0);
  ws.x = Eigen::VectorXd::Zero(n);
  ws.f.resize(n);
  ws.trial_f.resize(n);
  if (opts.warm_start) {
    if (opts.warm_start->size() < plan.slots) throw Error("warm start vector is shorter than the node count");
    for (const auto& [node, row] : plan.unknown_nodes) ws.x[row] = (*opts.warm_start)[node];
  }

  double* jac = ws.jac.valuePtr();
  const auto nnz = static_cast<std::size_t>(ws.jac.nonZeros());
  auto eval = [&](const Eigen::VectorXd& x, Eigen::VectorXd& f) {
    std::fill(jac, jac + nnz, 0.0);
    evaluate(plan, ws, x, f, jac);
  };

  SolveResult result;
  auto measure = [&](const Eigen::VectorXd& f, double& kcl, double& cons, int& worst_row) {
    kcl = 0.0;
    cons = 0.0;
    worst_row = -1;
    for (Eigen::Index r = 0; r < f.size(); ++r) {
      const double a = std::abs(f[r]);
      if (static_cast<std::size_t>(r) < plan.node_rows) {
        if (!(a <= kcl)) {
          kcl = a;
          worst_row = static_cast<int>(r);
        }
      } else if (!(a <= cons)) {
        cons = a;
      }
    }
  };

  if (n > 0) {
    eval(ws.x, ws.f);
    int iter = 0;
    for (;; ++iter) {
      double kcl = 0.0, cons = 0.0;
      int worst_row = -1;
      measure(ws.f, kcl, cons, worst_row);
      result.max_residual = kcl;
      result.worst_node = worst_row >= 0 ? plan.unknown_nodes[worst_row].first : kGround;
      if (kcl <= opts.residual_tol && cons <= kConstraintTol) {
        result.converged = true;
        break;
      }
      if (iter >= opts.max_iters) break;

      ws.lu.factorize(ws.jac);
      if (ws.lu.info() != Eigen::Success) {
        throw SolveError(SolveError::Kind::Singular,
                         "floating subnetwork or inconsistent sources: singular MNA matrix");
      }
      ws.dx = ws.lu.solve(-ws.f);
      if (!ws.dx.allFinite()) {
        throw SolveError(SolveError::Kind::Singular,
                         "floating subnetwork or inconsistent sources: non-finite Newton step");
      }

      // Junction limiting: cap the forward-bias increase across any diode that
      // ends up conducting.
      double scale = 1.0;
      for (std::size_t k = 0; k < plan.diodes.size(); ++k) {
        const auto& br = plan.diodes[k];
        const double da = br.ra >= 0 ? ws.dx[br.ra] : 0.0;
        const double db = br.rb >= 0 ? ws.dx[br.rb] : 0.0;
        const double step = da - db;
        const double limit = 2.0 * ws.diode[k].scale();
        if (step <= limit) continue;
        const double dv_new = ws.v[br.a] - ws.v[br.b] + step;
        if ((dv_new - ws.diode[k].shift) / ws.diode[k].scale() > 1.0) scale = std::min(scale, limit / step);
      }

      const double norm0 = ws.f.squaredNorm();
      double alpha = opts.damping * scale;
      for (int h = 0;; ++h) {
        ws.trial_x = ws.x + alpha * ws.dx;
        eval(ws.trial_x, ws.trial_f);
        const double norm = ws.trial_f.squaredNorm();
        if ((std::isfinite(norm) && norm < norm0) || h >= kMaxHalvings) break;
        alpha *= 0.5;
      }
      ws.x.swap(ws.trial_x);
      ws.f.swap(ws.trial_f);
    }
    result.iterations = iter;
  } else {
    spread_voltages(plan, ws, ws.x);
    result.converged = true;
  }

  spread_voltages(plan, ws, ws.x);
  result.voltages = ws.v;

  // Branch currents; pinned sources are recovered from KCL at the node they pin.
  result.branch_currents.assign(plan.component_count, 0.0);
  std::vector<double> outflow(plan.slots, 0.0);
  const auto& v = ws.v;
  for (std::size_t k = 0; k < plan.resistors.size(); ++k) {
    const auto& br = plan.resistors[k];
    const double i = ws.g[k] * (v[br.a] - v[br.b]);
    result.branch_currents[br.comp] = i;
    outflow[br.a] += i;
    outflow[br.b] -= i;
  }
  for (std::size_t k = 0; k < plan.diodes.size(); ++k) {
    const auto& br = plan.diodes[k];
    const double i = diode_current(ws.diode[k], v[br.a] - v[br.b]);
    result.branch_currents[br.comp] = i;
    outflow[br.a] += i;
    outflow[br.b] -= i;
  }
  for (const auto& cs : plan.current_sources) {
    const double i = ws.dc[plan.source_slot[cs.comp]];
    result.branch_currents[cs.comp] = i;
    const auto& c = net.components()[cs.comp];
    outflow[c.a] -= i;
    outflow[c.b] += i;
  }
  for (const auto& src : plan.floating_sources) {
    const double i = ws.x[src.row];
    result.branch_currents[src.comp] = i;
    outflow[src.a] -= i;
    outflow[src.b] += i;
  }
  for (std::size_t k = 0; k < plan.amplifiers.size(); ++k) {
    const auto& amp = plan.amplifiers[k];
    const double i_out = ws.x[amp.row];
    result.branch_currents[amp.comp] = i_out;
    outflow[amp.b] -= i_out;
    outflow[amp.a] += i_out / ws.gain[k];
  }
  for (auto it = plan.cls.pins.rbegin(); it != plan.cls.pins.rend(); ++it) {
    const double into_node = outflow[it->node];
    outflow[it->node] = 0.0;
    outflow[it->reference] += into_node;
    result.branch_currents[it->source] = it->sign > 0 ? into_node : -into_node;
  }
  return result;
}

SolveResult solve_steady_state(const Netlist& net, const SolveOptions& opts) {
  SteadyStateSolver solver(net);
  return solver.solve(net, opts);
}

}  // namespace aeq

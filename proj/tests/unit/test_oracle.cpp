#include <gtest/gtest.h>

#include <aeq/oracle.hpp>
#include <aeq/solver.hpp>
#include <cmath>

#include "generators.hpp"

using namespace aeq;
using namespace aeq::oracle;
using aeq::testing::Rng;

namespace {

// Two dividers fed by one input. Y+ = x g1/(g1+g2), Y- = x g3/(g3+g4).
struct TwoDividers {
  double x = 1.5, g1 = 0.3, g2 = 0.7, g3 = 0.2, g4 = 1.1, target = 0.05;

  Netlist net() const {
    Netlist n("dividers");
    n.add_voltage_source("Vx", 1, kGround, 0.0);
    n.add_resistor("R1", 1, 2, g1);
    n.add_resistor("R2", 2, kGround, g2);
    n.add_resistor("R3", 1, 3, g3);
    n.add_resistor("R4", 3, kGround, g4);
    n.add_current_source("Ip", 2, kGround, 0.0);
    n.add_current_source("Im", 3, kGround, 0.0);
    n.set_input_nodes({1});
    n.set_output_nodes({2, 3});
    return n;
  }
  Probe probe() const { return {{x}, {target}}; }
  double ratio_p() const { return g1 / (g1 + g2); }
  double ratio_m() const { return g3 / (g3 + g4); }
  double error() const { return x * (ratio_p() - ratio_m()) - target; }
  double loss() const { return 0.5 * error() * error(); }
  std::vector<double> dloss_dg() const {
    const double sp = (g1 + g2) * (g1 + g2), sm = (g3 + g4) * (g3 + g4);
    const double e = error();
    return {e * x * g2 / sp, -e * x * g1 / sp, -e * x * g4 / sm, e * x * g3 / sm};
  }
  double dloss_dx() const { return error() * (ratio_p() - ratio_m()); }
};

const LossSpec kSquared{LossKind::SquaredErrorDoubled, 0.0};

std::vector<ParamRef> resistors(std::initializer_list<const char*> names) {
  std::vector<ParamRef> out;
  for (const char* n : names) out.push_back({n, ParamField::Conductance});
  return out;
}

}  // namespace

TEST(RelativeError, FloorAppliesBelowItsMagnitude) {
  EXPECT_NEAR(relative_error(1.1, 1.0, 1e-6), 0.1, 1e-15);
  EXPECT_DOUBLE_EQ(relative_error(-1.0, 1.0, 1e-6), 2.0);
  EXPECT_DOUBLE_EQ(relative_error(1e-9, 0.0, 1e-6), 1e-3);
  EXPECT_EQ(relative_error(3.0, 3.0, 1.0), 0.0);
}

TEST(RelativeErrors, FloorScalesWithTheLargestReference) {
  const std::vector<double> ref{1000.0, 0.0, 1.0}, est{1001.0, 1e-4, 1.0};
  const auto e = relative_errors(est, ref);
  EXPECT_DOUBLE_EQ(e[0], 1e-3);
  EXPECT_DOUBLE_EQ(e[1], 1e-4 / 1e-3);
  EXPECT_EQ(e[2], 0.0);
  EXPECT_THROW(relative_errors(std::vector<double>{1.0}, ref), Error);
  const std::vector<double> zeros{0.0, 0.0};
  EXPECT_EQ(relative_errors(zeros, zeros), zeros);
}

TEST(SummarizeErrors, NearestRankStatistics) {
  std::vector<double> e;
  for (int i = 20; i >= 1; --i) e.push_back(i);
  const ErrorSummary s = summarize_errors(e);
  EXPECT_EQ(s.count, 20u);
  EXPECT_EQ(s.median, 10.0);
  EXPECT_EQ(s.p95, 19.0);
  EXPECT_EQ(s.max, 20.0);
  const ErrorSummary one = summarize_errors({0.25});
  EXPECT_EQ(one.median, 0.25);
  EXPECT_EQ(one.p95, 0.25);
  EXPECT_EQ(summarize_errors({}).count, 0u);
}

TEST(QuadraturePseudoPower, ResistorIsHalfGDeltaVSquared) {
  Component r{"R", 1, 0, Resistor{0.37}};
  for (double dv : {-3.0, -0.1, 0.0, 0.5, 2.0}) EXPECT_NEAR(quadrature_pseudo_power(r, dv), 0.5 * 0.37 * dv * dv, 1e-14);
}

TEST(QuadraturePseudoPower, DiodeMatchesClosedForm) {
  const Diode d{1e-6, 1.7, 0.02585, 0.2};
  const Component c{"D", 1, 0, d};
  const double a = d.scale();
  for (double dv : {-1.0, -0.2, 0.1, 0.35, 0.6}) {
    const double exact = d.saturation_current * (a * (std::exp((dv - d.shift) / a) - std::exp(-d.shift / a)) - dv);
    EXPECT_NEAR(quadrature_pseudo_power(c, dv), exact, 1e-10 * std::max(1.0, std::abs(exact))) << dv;
  }
}

TEST(LinearNetworkSolution, DividerAndConductanceSums) {
  Netlist n("divider");
  n.add_voltage_source("V", 1, kGround, 9.0);
  n.add_resistor("Ra", 1, 2, 1.0);
  n.add_resistor("Rb", 2, kGround, 2.0);
  n.add_current_source("I", 2, kGround, 0.3);
  const LinearSolution s = linear_network_solution(n);
  EXPECT_NEAR(s.voltages[1], 9.0, 1e-15);
  EXPECT_NEAR(s.voltages[2], (9.0 * 1.0 + 0.3) / 3.0, 1e-14);
  EXPECT_EQ(s.g_terms[2], 3.0);
}

TEST(LinearNetworkSolution, IsolatedNodeThrows) {
  Netlist n("isolated");
  n.add_voltage_source("V", 1, kGround, 1.0);
  n.add_resistor("Ra", 1, kGround, 1.0);
  n.add_resistor("Rb", 2, 3, 1.0);
  EXPECT_THROW(linear_network_solution(n), SolveError);
}

TEST(LinearNetworkSolutionProperty, SatisfiesKclOnRandomNetworks) {
  Rng rng(31);
  for (int trial = 0; trial < 40; ++trial) {
    const Netlist n = aeq::testing::random_linear_network(rng, {.max_nodes = 60, .current_sources = true});
    const LinearSolution s = linear_network_solution(n);
    for (const auto& [node, r] : kcl_residual(n, s.voltages)) EXPECT_LT(std::abs(r), 1e-9) << "node " << node;
  }
}

TEST(LinearNetworkSolutionProperty, MatchesTheSolverAndTheMaximumPrinciple) {
  Rng rng(34);
  SolveOptions tight;
  tight.residual_tol = 1e-12;
  for (int trial = 0; trial < 40; ++trial) {
    const Netlist n = aeq::testing::random_linear_network(rng);
    const LinearSolution s = linear_network_solution(n);
    const SolveResult newton = solve_steady_state(n, tight);
    double lo = 0.0, hi = 0.0;
    for (const auto& c : n.components()) {
      if (!c.is<VoltageSource>()) continue;
      lo = std::min(lo, s.voltages[c.a]);
      hi = std::max(hi, s.voltages[c.a]);
    }
    for (NodeId v : n.nodes()) {
      EXPECT_NEAR(s.voltages[v], newton.voltages[v], 1e-9);
      EXPECT_GE(s.voltages[v], lo - 1e-12);
      EXPECT_LE(s.voltages[v], hi + 1e-12);
    }
  }
}

TEST(LinearNetworkSolution, RejectsDiodes) {
  Netlist n("d");
  n.add_voltage_source("V", 1, kGround, 1.0);
  n.add_diode("D", 1, kGround, {1e-9, 1.0, 0.02585, 0.0});
  EXPECT_THROW(linear_network_solution(n), NetlistError);
}

TEST(FreePhaseLoss, MatchesTheClosedFormAndAddsDecay) {
  const TwoDividers d;
  EXPECT_NEAR(free_phase_loss(d.net(), d.probe(), kSquared), d.loss(), 1e-14);
  const LossSpec decayed{LossKind::SquaredErrorDoubled, 0.01};
  const double sum_sq = d.g1 * d.g1 + d.g2 * d.g2 + d.g3 * d.g3 + d.g4 * d.g4;
  EXPECT_NEAR(free_phase_loss(d.net(), d.probe(), decayed), d.loss() + 0.005 * sum_sq, 1e-14);
}

TEST(FdLossGradients, MatchTheSymbolicDerivative) {
  const TwoDividers d;
  const auto params = resistors({"R1", "R2", "R3", "R4"});
  const auto fd = fd_loss_gradients(d.net(), d.probe(), kSquared, params);
  const auto exact = d.dloss_dg();
  for (std::size_t i = 0; i < 4; ++i) EXPECT_LT(relative_error(fd[i], exact[i], 1e-12), 1e-7) << params[i].component;
  EXPECT_EQ(fd_loss_gradient(d.net(), d.probe(), kSquared, params[2]), fd[2]);
}

TEST(FdLossGradients, ParameterOffThePathHasZeroGradient) {
  const TwoDividers d;
  Netlist n = d.net();
  n.add_voltage_source("Vs", 7, kGround, 0.4);
  n.add_resistor("Rs", 7, 8, 0.9);
  n.add_resistor("Rt", 8, kGround, 0.3);
  EXPECT_LT(std::abs(fd_loss_gradient(n, d.probe(), kSquared, {"Rs", ParamField::Conductance})), 1e-10);
}

TEST(FdLossGradients, WeightDecayAddsLambdaG) {
  const TwoDividers d;
  const LossSpec decayed{LossKind::SquaredErrorDoubled, 0.02};
  const double fd = fd_loss_gradient(d.net(), d.probe(), decayed, {"R2", ParamField::Conductance});
  EXPECT_NEAR(fd, d.dloss_dg()[1] + 0.02 * d.g2, 1e-9);
}

TEST(FdLossGradients, WrongFieldOrUnknownComponentThrows) {
  const TwoDividers d;
  EXPECT_THROW(fd_loss_gradient(d.net(), d.probe(), kSquared, {"R1", ParamField::SaturationCurrent}), Error);
  EXPECT_THROW(fd_loss_gradient(d.net(), d.probe(), kSquared, {"R9", ParamField::Conductance}), Error);
}

TEST(FdInputGradient, MatchesTheSymbolicDerivative) {
  const TwoDividers d;
  const auto g = fd_input_gradient(d.net(), d.probe(), kSquared);
  ASSERT_EQ(g.size(), 1u);
  EXPECT_LT(relative_error(g[0], d.dloss_dx(), 1e-12), 1e-7);
}

TEST(FdSaturationGradient, MatchesAClosedFormSingleDiodeCircuit) {
  // x --R-- y --D-- ground: L = 0.5 (y - t)^2 with y implicit in
  // g (x - y) = I_S (exp((y - s)/a) - 1); dy/dI_S = -(e^u - 1) / (g + I_S e^u / a).
  const double x = 1.0, g = 1e-3, t = 0.2;
  const Diode dd{1e-6, 1.5, 0.02585, 0.1};
  Netlist n("rd");
  n.add_voltage_source("Vx", 1, kGround, 0.0);
  n.add_resistor("R", 1, 2, g);
  n.add_diode("D", 2, kGround, dd);
  n.add_current_source("Iy", 2, kGround, 0.0);
  n.add_current_source("Iz", 3, kGround, 0.0);
  n.add_resistor("Rz", 3, kGround, 1.0);
  n.set_input_nodes({1});
  n.set_output_nodes({2, 3});
  const double a = dd.scale();
  const double y = aeq::testing::bisect([&](double v) { return g * (x - v) - diode_current(dd, v); }, 0.0, x);
  const double eu = std::exp((y - dd.shift) / a);
  const double dy = -(eu - 1.0) / (g + dd.saturation_current * eu / a);
  const double exact = (y - t) * dy;
  const double fd = fd_loss_gradient(n, {{x}, {t}}, kSquared, {"D", ParamField::SaturationCurrent});
  EXPECT_LT(relative_error(fd, exact, 1e-12), 1e-5);
}

TEST(PseudoPowerDescent, DividerSettlesAtHalfTheSource) {
  Netlist n("divider");
  n.add_voltage_source("V", 1, kGround, 1.0);
  n.add_resistor("Ra", 1, 2, 1.0);
  n.add_resistor("Rb", 2, kGround, 1.0);
  const DescentResult r = pseudo_power_descent(n, 10000);
  ASSERT_TRUE(r.converged);
  EXPECT_NEAR(r.voltages[2], 0.5, 1e-12);
}

TEST(PseudoPowerDescent, RejectsAmplifiers) {
  Netlist n("amp");
  n.add_voltage_source("V", 1, kGround, 1.0);
  n.add_amplifier("A", 1, 2, 2.0);
  n.add_resistor("R", 2, kGround, 1.0);
  EXPECT_THROW(pseudo_power_descent(n, 10), NetlistError);
}

TEST(PseudoPowerDescent, LinearNetworkReachesTheDirectSolution) {
  Rng rng(32);
  for (int trial = 0; trial < 5; ++trial) {
    const Netlist n = aeq::testing::random_linear_network(rng, {.max_nodes = 12, .extra_edge_ratio = 0.5});
    const DescentResult r = pseudo_power_descent(n, 2000000, 0.1, 1e-11);
    ASSERT_TRUE(r.converged);
    const LinearSolution s = linear_network_solution(n);
    for (NodeId v : n.nodes()) EXPECT_NEAR(r.voltages[v], s.voltages[v], 1e-6);
  }
}

TEST(PseudoPowerDescent, EnergyNeverIncreasesAndAgreesWithTheSolver) {
  Rng rng(33);
  SolveOptions tight;
  tight.residual_tol = 1e-12;
  tight.max_iters = 500;
  int converged = 0;
  for (int trial = 0; trial < 10; ++trial) {
    const Netlist n = aeq::testing::random_diode_network(rng, 30);
    const DescentResult r = pseudo_power_descent(n, 1000000, 0.1, 1e-10);
    for (std::size_t k = 1; k < r.energy.size(); ++k) {
      EXPECT_LE(r.energy[k], r.energy[k - 1] + 1e-12 * std::max(1.0, std::abs(r.energy[k - 1])));
    }
    if (!r.converged) continue;
    ++converged;
    const SolveResult s = solve_steady_state(n, tight);
    for (NodeId v : n.nodes()) EXPECT_NEAR(r.voltages[v], s.voltages[v], 1e-6) << "node " << v;
  }
  EXPECT_GE(converged, 5);
}

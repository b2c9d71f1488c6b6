#include <gtest/gtest.h>

#include <aeq/eqprop.hpp>
#include <aeq/oracle.hpp>
#include <cmath>

#include "generators.hpp"
#include "gradcheck.hpp"

using namespace aeq;
using aeq::testing::Rng;

namespace {

LossSpec loss_of(LossKind kind) {
  LossSpec l;
  l.kind = kind;
  return l;
}

double median_of(std::vector<double> v) { return oracle::summarize_errors(std::move(v)).median; }

// Input 1 drives the middle of a three-resistor chain; the output node sits
// between it and ground and carries the output current source.
Netlist chain_with_io() {
  Netlist net("chain");
  const NodeId x = net.add_node(1), m = net.add_node(2), y = net.add_node(3), z = net.add_node(4);
  net.add_voltage_source("Vx", x, kGround, 0.0);
  net.add_voltage_source("Vz", z, kGround, 0.0);
  net.add_resistor("R1", x, m, 2.0);
  net.add_resistor("R2", m, y, 1.0);
  net.add_resistor("R3", y, kGround, 0.5);
  net.add_resistor("R4", m, z, 0.25);
  net.add_current_source("Iy", y, kGround, 0.0);
  net.add_current_source("Iw", m, kGround, 0.0);
  net.set_input_nodes({x, z});
  net.set_output_nodes({y, m});
  return net;
}

}  // namespace

// ---- loss and nudge catalog ----

TEST(NudgeCurrents, SquaredErrorDoubledWorkedExample) {
  const std::vector<double> y_hat{0.8, 0.1}, y{1.0};
  const Nudge n = nudge_currents(loss_of(LossKind::SquaredErrorDoubled), y_hat, y, 0.01);
  EXPECT_EQ(n.currents[0], 0.01 * (1.0 + 0.1 - 0.8));
  EXPECT_EQ(n.currents[1], -0.01 * (1.0 + 0.1 - 0.8));
  EXPECT_NEAR(n.currents[0], 0.003, 1e-15);
  EXPECT_EQ(n.loss, 0.5 * (0.8 - 0.1 - 1.0) * (0.8 - 0.1 - 1.0));
}

TEST(NudgeCurrents, SoftmaxOfEqualLogitsIsHalf) {
  const std::vector<double> y_hat{0.0, 0.0}, y{1.0, 0.0};
  const Nudge n = nudge_currents(loss_of(LossKind::SoftmaxCrossEntropy), y_hat, y, 0.01);
  EXPECT_EQ(n.currents[0], 0.01 * 0.5);
  EXPECT_EQ(n.currents[1], -0.01 * 0.5);
  EXPECT_DOUBLE_EQ(n.loss, std::log(2.0));
}

TEST(NudgeCurrents, BinaryCrossEntropyAtZeroLogit) {
  const std::vector<double> y_hat{0.0}, y{1.0};
  const Nudge n = nudge_currents(loss_of(LossKind::BinaryCrossEntropy), y_hat, y, 0.02);
  EXPECT_EQ(n.currents[0], 0.5 * 0.02);
  EXPECT_DOUBLE_EQ(n.loss, std::log(2.0));
}

TEST(NudgeCurrents, ShapeMismatchThrows) {
  const std::vector<double> three{0.0, 0.0, 0.0}, one{1.0}, two{1.0, 0.0};
  EXPECT_THROW(nudge_currents(loss_of(LossKind::SquaredErrorDoubled), three, one, 0.1), Error);
  EXPECT_THROW(nudge_currents(loss_of(LossKind::SoftmaxCrossEntropy), three, two, 0.1), Error);
  EXPECT_THROW(nudge_currents(loss_of(LossKind::BinaryCrossEntropy), two, one, 0.1), Error);
}

TEST(NudgeCurrents, TargetSizesAndScores) {
  EXPECT_EQ(target_size(LossKind::SquaredErrorDoubled, 6), 3u);
  EXPECT_THROW(target_size(LossKind::SquaredErrorDoubled, 3), Error);
  EXPECT_EQ(target_size(LossKind::SoftmaxCrossEntropy, 4), 4u);
  EXPECT_EQ(target_size(LossKind::BinaryCrossEntropy, 1), 1u);
  EXPECT_THROW(target_size(LossKind::BinaryCrossEntropy, 2), Error);
  const std::vector<double> y_hat{0.9, 0.2, 0.1, 0.4};
  EXPECT_EQ(class_scores(LossKind::SquaredErrorDoubled, y_hat), (std::vector<double>{0.9 - 0.2, 0.1 - 0.4}));
  EXPECT_EQ(class_scores(LossKind::SoftmaxCrossEntropy, y_hat), y_hat);
}

TEST(NudgeCurrents, LossKindNames) {
  EXPECT_EQ(parse_loss_kind("squared"), LossKind::SquaredErrorDoubled);
  EXPECT_EQ(parse_loss_kind("softmax"), LossKind::SoftmaxCrossEntropy);
  EXPECT_EQ(parse_loss_kind("bce"), LossKind::BinaryCrossEntropy);
  EXPECT_EQ(parse_loss_kind(to_string(LossKind::SoftmaxCrossEntropy)), LossKind::SoftmaxCrossEntropy);
  EXPECT_THROW(parse_loss_kind("hinge"), Error);
}

TEST(NudgeCurrentsProperty, DoubledPairsCancel) {
  Rng rng(1);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t k = rng.index(1, 10);
    std::vector<double> y_hat(2 * k), y(k);
    for (double& v : y_hat) v = rng.uniform(-5.0, 5.0);
    for (double& v : y) v = rng.uniform(0.0, 1.0);
    const Nudge n = nudge_currents(loss_of(LossKind::SquaredErrorDoubled), y_hat, y, rng.uniform(-1.0, 1.0));
    for (std::size_t i = 0; i < k; ++i) EXPECT_EQ(n.currents[2 * i] + n.currents[2 * i + 1], 0.0);
  }
}

TEST(NudgeCurrentsProperty, CurrentsAreMinusBetaTimesLossGradient) {
  Rng rng(2);
  for (LossKind kind : {LossKind::SquaredErrorDoubled, LossKind::SoftmaxCrossEntropy, LossKind::BinaryCrossEntropy}) {
    for (int trial = 0; trial < 100; ++trial) {
      const std::size_t outputs = kind == LossKind::BinaryCrossEntropy ? 1 : 2 * rng.index(1, 5);
      std::vector<double> y_hat(outputs), y(target_size(kind, outputs));
      for (double& v : y_hat) v = rng.uniform(-3.0, 3.0);
      double sum = 0.0;
      for (double& v : y) sum += (v = rng.uniform(0.0, 1.0));
      if (kind == LossKind::SoftmaxCrossEntropy) {
        for (double& v : y) v /= sum;
      }
      const double beta = rng.uniform(0.001, 0.1);
      const LossSpec loss = loss_of(kind);
      const Nudge n = nudge_currents(loss, y_hat, y, beta);
      for (std::size_t i = 0; i < outputs; ++i) {
        const double h = 1e-6;
        std::vector<double> up = y_hat, down = y_hat;
        up[i] += h;
        down[i] -= h;
        const double dl = (loss_value(loss, up, y) - loss_value(loss, down, y)) / (2 * h);
        EXPECT_NEAR(n.currents[i], -beta * dl, 1e-8) << to_string(kind);
      }
    }
  }
}

TEST(NudgeCurrentsProperty, ZeroGradientPointGivesZeroCurrents) {
  const std::vector<double> y_hat{1.5, 0.5, 0.25, 0.25}, y{1.0, 0.0};
  const Nudge n = nudge_currents(loss_of(LossKind::SquaredErrorDoubled), y_hat, y, 0.1);
  for (double i : n.currents) EXPECT_EQ(i, 0.0);
  EXPECT_EQ(n.loss, 0.0);
}

TEST(NudgeCurrentsProperty, SoftmaxIsShiftInvariant) {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> y_hat(4), y{0.0, 1.0, 0.0, 0.0};
    for (double& v : y_hat) v = rng.uniform(-3.0, 3.0);
    std::vector<double> shifted = y_hat;
    for (double& v : shifted) v += 700.0;
    const auto a = nudge_currents(loss_of(LossKind::SoftmaxCrossEntropy), y_hat, y, 1.0);
    const auto b = nudge_currents(loss_of(LossKind::SoftmaxCrossEntropy), shifted, y, 1.0);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(a.currents[i], b.currents[i], 1e-12);
    EXPECT_NEAR(a.loss, b.loss, 1e-9);
  }
}

// ---- phases ----

TEST(FreePhase, ZeroInputsGiveZeroVoltages) {
  const Netlist net = chain_with_io();
  const std::vector<double> x{0.0, 0.0};
  const PhaseRecord r = run_free_phase(net, x);
  for (double v : r.voltages) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(r.beta, 0.0);
}

TEST(FreePhase, DropsAgreeWithVoltages) {
  Rng rng(4);
  const auto c = aeq::testing::layered_case(rng, 4, 6, 2);
  const PhaseRecord r = run_free_phase(c.net, c.probe.inputs);
  const auto drops = r.resistor_drops(c.net);
  for (std::size_t i = 0; i < c.net.size(); ++i) {
    const Component& comp = c.net.component(i);
    EXPECT_EQ(r.drops[i], r.voltages[comp.a] - r.voltages[comp.b]);
    if (comp.is<Resistor>()) {
      EXPECT_EQ(drops.at(comp.name), r.drops[i]);
    }
  }
  ASSERT_EQ(r.outputs.size(), c.net.output_nodes().size());
  for (std::size_t k = 0; k < r.outputs.size(); ++k) EXPECT_EQ(r.outputs[k], r.voltages[c.net.output_nodes()[k]]);
}

TEST(FreePhase, InputsAreAppliedToTheirNodes) {
  const Netlist net = chain_with_io();
  const std::vector<double> x{1.25, -0.5};
  const PhaseRecord r = run_free_phase(net, x);
  EXPECT_EQ(r.voltages[1], 1.25);
  EXPECT_EQ(r.voltages[4], -0.5);
  EXPECT_EQ(r.inputs, x);
}

TEST(FreePhase, WrongInputCountThrows) {
  const std::vector<double> x{1.0};
  EXPECT_THROW(run_free_phase(chain_with_io(), x), Error);
}

TEST(FreePhase, InputSourceCurrentsBalanceKcl) {
  const Netlist net = chain_with_io();
  const std::vector<double> x{1.0, 0.0};
  const PhaseRecord r = run_free_phase(net, x);
  // Source at node 1 feeds R1 only.
  EXPECT_NEAR(r.input_source_currents[0], 2.0 * (r.voltages[1] - r.voltages[2]), 1e-12);
}

TEST(NudgedPhase, ZeroCurrentsReproduceTheFreePhase) {
  Rng rng(5);
  const auto c = aeq::testing::layered_case(rng, 5, 4, 2);
  PhaseRunner runner(c.net);
  const auto po = aeq::testing::tight_phase_options();
  const PhaseRecord free = runner.run_free(c.net, c.probe.inputs, po);
  const std::vector<double> zero(c.net.output_nodes().size(), 0.0);
  const PhaseRecord nudged = runner.run_nudged(c.net, free, zero, 0.0, po);
  for (std::size_t i = 0; i < free.voltages.size(); ++i) EXPECT_NEAR(nudged.voltages[i], free.voltages[i], 1e-9);
}

TEST(NudgedPhase, PerfectPredictionLeavesTheStateUnchanged) {
  Rng rng(6);
  const auto c = aeq::testing::layered_case(rng, 5, 4, 2);
  PhaseRunner runner(c.net);
  const auto po = aeq::testing::tight_phase_options();
  const PhaseRecord free = runner.run_free(c.net, c.probe.inputs, po);
  const auto scores = class_scores(c.loss.kind, free.outputs);
  const Nudge n = nudge_currents(c.loss, free.outputs, scores, 0.01);
  for (double i : n.currents) EXPECT_EQ(i, 0.0);
  const PhaseRecord nudged = runner.run_nudged(c.net, free, n.currents, 0.01, po);
  for (std::size_t i = 0; i < free.voltages.size(); ++i) EXPECT_NEAR(nudged.voltages[i], free.voltages[i], 1e-9);
  EXPECT_EQ(nudged.beta, 0.01);
}

TEST(NudgedPhase, OppositeBetasMoveDropsOppositeWays) {
  Rng rng(7);
  const auto c = aeq::testing::layered_case(rng, 6, 5, 2);
  const auto t = aeq::testing::run_phases(c, 1e-4);
  double scale = 0.0;
  for (std::size_t i = 0; i < c.net.size(); ++i) scale = std::max(scale, std::abs(t.plus.drops[i] - t.free.drops[i]));
  ASSERT_GT(scale, 0.0);
  for (std::size_t i = 0; i < c.net.size(); ++i) {
    const double up = t.plus.drops[i] - t.free.drops[i];
    const double down = t.minus.drops[i] - t.free.drops[i];
    // Equal and opposite to first order; the remainder is O(beta^2).
    EXPECT_NEAR(up, -down, 1e-3 * scale) << c.net.component(i).name;
  }
}

TEST(NudgedPhase, FirstOrderResponseMatchesDirectionalDerivative) {
  Rng rng(8);
  const auto c = aeq::testing::layered_case(rng, 4, 3, 1);
  const double beta = 1e-5;
  const auto t = aeq::testing::run_phases(c, beta);
  const Nudge unit = nudge_currents(c.loss, t.free.outputs, c.probe.target, 1.0);
  // Finite difference of the free state along the injected currents.
  PhaseRunner runner(c.net);
  const double h = 1e-4;
  std::vector<double> up(unit.currents), down(unit.currents);
  for (double& v : up) v *= h;
  for (double& v : down) v *= -h;
  const auto po = aeq::testing::tight_phase_options();
  const PhaseRecord a = runner.run_nudged(c.net, t.free, up, h, po);
  const PhaseRecord b = runner.run_nudged(c.net, t.free, down, -h, po);
  for (std::size_t i = 0; i < c.net.size(); ++i) {
    const double directional = (a.drops[i] - b.drops[i]) / (2 * h);
    const double observed = (t.plus.drops[i] - t.minus.drops[i]) / (2 * beta);
    EXPECT_NEAR(observed, directional, 1e-5 * std::max(1.0, std::abs(directional)));
  }
}

// ---- gradient estimators ----

TEST(ConductanceGradients, UnchangedDropGivesZero) {
  const Netlist net = chain_with_io();
  const std::vector<double> x{1.0, 0.5};
  PhaseRunner runner(net);
  const PhaseRecord free = runner.run_free(net, x);
  const std::vector<double> zero{0.0, 0.0};
  const PhaseRecord nudged = runner.run_nudged(net, free, zero, 0.5);
  for (double g : conductance_gradients(net, free, nudged)) EXPECT_NEAR(g, 0.0, 1e-9);
}

TEST(ConductanceGradients, ZeroBetaIsRejected) {
  const Netlist net = chain_with_io();
  const std::vector<double> x{1.0, 0.5};
  const PhaseRecord free = run_free_phase(net, x);
  EXPECT_THROW(conductance_gradients(net, free, free), Error);
  EXPECT_THROW(input_gradient(net, free, free), Error);
  EXPECT_THROW(param_gradient(free, free, 2, [](double) { return 0.0; }), Error);
}

TEST(ConductanceGradients, FormulaOnHandMadeRecords) {
  Netlist net;
  net.add_resistor("r", net.add_node(1), kGround, 3.0);
  PhaseRecord free, nudged;
  free.drops = {0.5};
  nudged.drops = {0.6};
  nudged.beta = 0.1;
  const double expected = (0.6 * 0.6 - 0.5 * 0.5) / (2 * 0.1);
  EXPECT_DOUBLE_EQ(conductance_gradients(net, free, nudged)[0], expected);
  GradientOptions legacy;
  legacy.legacy_factor = true;
  EXPECT_DOUBLE_EQ(conductance_gradients(net, free, nudged, legacy)[0], 2 * expected);
  GradientOptions decay;
  decay.weight_decay = 0.25;
  EXPECT_DOUBLE_EQ(conductance_gradients(net, free, nudged, decay)[0], expected + 0.25 * 3.0);
}

TEST(ConductanceGradients, LinearDividerMatchesSymbolicDerivative) {
  // Y = g1 x / (g1 + g2); L = 0.5 (Y+ - Y- - y)^2. Nothing drives Y-, so it
  // sits at 0 V in the free phase and g3 has no effect on the loss.
  Netlist net("div");
  const NodeId x = net.add_node(1), y = net.add_node(2), yn = net.add_node(3);
  net.add_voltage_source("Vx", x, kGround, 0.0);
  net.add_resistor("g1", x, y, 0.7);
  net.add_resistor("g2", y, kGround, 0.3);
  net.add_current_source("Iy", y, kGround, 0.0);
  net.add_resistor("g3", yn, kGround, 1.0);
  net.add_current_source("Iyn", yn, kGround, 0.0);
  net.set_input_nodes({x});
  net.set_output_nodes({y, yn});
  const double xv = 2.0, target = 0.5, g1 = 0.7, g2 = 0.3;
  const double Y = g1 * xv / (g1 + g2);
  const double dY_dg1 = xv * g2 / ((g1 + g2) * (g1 + g2));
  const double dY_dg2 = -xv * g1 / ((g1 + g2) * (g1 + g2));
  const double dl_dY = Y - target;

  aeq::testing::GradientCase c{net, stage_energy_scales(net), {{xv}, {target}}, {}};
  const auto t = aeq::testing::run_phases(c, 1e-4);
  const auto est = aeq::testing::eqprop_conductance_gradients(c, t, true);
  EXPECT_NEAR(est[0], dl_dY * dY_dg1, 1e-8);
  EXPECT_NEAR(est[1], dl_dY * dY_dg2, 1e-8);
  EXPECT_NEAR(est[2], 0.0, 1e-10);
  const auto fd = aeq::testing::fd_conductance_gradients(c);
  EXPECT_NEAR(fd[0], dl_dY * dY_dg1, 1e-8);
  EXPECT_NEAR(fd[1], dl_dY * dY_dg2, 1e-8);
  EXPECT_NEAR(fd[2], 0.0, 1e-10);
}

TEST(ConductanceGradients, LayeredNetworkMatchesFiniteDifferences) {
  Rng rng(9);
  std::vector<double> two_sided, one_sided;
  for (int trial = 0; trial < 3; ++trial) {
    const auto c = aeq::testing::layered_case(rng, 10, 5, 2);
    const auto t = aeq::testing::run_phases(c, 1e-4);
    const auto fd = aeq::testing::fd_conductance_gradients(c);
    const auto a = oracle::relative_errors(aeq::testing::eqprop_conductance_gradients(c, t, true), fd);
    const auto b = oracle::relative_errors(aeq::testing::eqprop_conductance_gradients(c, t, false), fd);
    two_sided.insert(two_sided.end(), a.begin(), a.end());
    one_sided.insert(one_sided.end(), b.begin(), b.end());
  }
  EXPECT_LT(median_of(two_sided), 1e-3);
  EXPECT_LT(median_of(one_sided), 1e-3);
}

TEST(ConductanceGradients, WithoutStageWeightsTheFirstLayerIsShrunkByGainSquared) {
  Rng rng(10);
  const auto c = aeq::testing::layered_case(rng, 4, 3, 1);
  const auto t = aeq::testing::run_phases(c, 1e-4);
  const auto raw = aeq::testing::eqprop_conductance_gradients(c, t, true, false);
  const auto fd = aeq::testing::fd_conductance_gradients(c);
  const auto resistors = aeq::testing::resistor_indices(c.net);
  for (std::size_t k = 0; k < resistors.size(); ++k) {
    if (std::abs(fd[k]) < 1e-9) continue;
    const double expected_ratio = c.scale[resistors[k]] == 1.0 ? 1.0 : 1.0 / 16.0;
    EXPECT_NEAR(raw[k] / fd[k], expected_ratio, 1e-3) << c.net.component(resistors[k]).name;
  }
}

TEST(ConductanceGradientsProperty, SmallerBetaShrinksTheOneSidedBias) {
  Rng rng(11);
  std::vector<double> at_1e4, at_1e5;
  for (int trial = 0; trial < 20; ++trial) {
    const auto c = aeq::testing::layered_case(rng, 4, rng.index(2, 6), 1);
    const auto fd = aeq::testing::fd_conductance_gradients(c);
    const auto a = aeq::testing::run_phases(c, 1e-4);
    const auto b = aeq::testing::run_phases(c, 1e-5);
    at_1e4.push_back(median_of(oracle::relative_errors(aeq::testing::eqprop_conductance_gradients(c, a, false), fd)));
    at_1e5.push_back(median_of(oracle::relative_errors(aeq::testing::eqprop_conductance_gradients(c, b, false), fd)));
  }
  EXPECT_LT(median_of(at_1e5), median_of(at_1e4));
}

TEST(StageEnergyScales, UnitWithoutAmplifiers) {
  for (double s : stage_energy_scales(chain_with_io())) EXPECT_EQ(s, 1.0);
}

TEST(StageEnergyScales, LayeredNetworkWeighsEarlierStagesByGainSquared) {
  Rng rng(12);
  const auto c = aeq::testing::layered_case(rng, 3, 2, 1);
  const ArchSpec spec = aeq::testing::layered_spec(3, 2, 1);
  const NetworkLayout layout = recover_layout(c.net, spec);
  for (std::size_t i : layout.weights[0]) EXPECT_EQ(c.scale[i], 16.0);
  for (std::size_t i : layout.weights[1]) EXPECT_EQ(c.scale[i], 1.0);
}

TEST(StageEnergyScales, InconsistentGainsThrow) {
  Netlist net;
  const NodeId a = net.add_node(1), b = net.add_node(2), c = net.add_node(3);
  net.add_resistor("ra", a, kGround, 1.0);
  net.add_resistor("rc", c, kGround, 1.0);
  net.add_amplifier("A1", a, b, 2.0);
  net.add_resistor("rbc", b, c, 1.0);
  net.add_amplifier("A2", c, net.add_node(4), 3.0);
  net.add_resistor("rloop", 4, a, 1.0);
  net.set_output_nodes({c});
  EXPECT_THROW(stage_energy_scales(net), NetlistError);
}

TEST(ParamGradient, ResistorSpecializationIsExactlyTheConductanceGradient) {
  Rng rng(13);
  const auto c = aeq::testing::layered_case(rng, 4, 3, 1);
  const auto t = aeq::testing::run_phases(c, 1e-4);
  const std::vector<double> direct = conductance_gradients(c.net, t.free, t.plus);
  for (std::size_t i : aeq::testing::resistor_indices(c.net)) {
    const double via_param = param_gradient(t.free, t.plus, i, [](double dv) { return 0.5 * dv * dv; });
    EXPECT_NEAR(via_param, direct[i], 1e-15 * std::max(1.0, std::abs(direct[i])));
  }
}

TEST(ParamGradient, ZeroSensitivityGivesZero) {
  Rng rng(14);
  const auto c = aeq::testing::layered_case(rng, 3, 2, 1);
  const auto t = aeq::testing::run_phases(c, 1e-3);
  EXPECT_EQ(param_gradient(t.free, t.plus, 0, [](double) { return 0.0; }), 0.0);
}

TEST(ParamGradient, DiodeSaturationCurrentMatchesFiniteDifferences) {
  Rng rng(15);
  const auto c = aeq::testing::layered_case(rng, 3, 3, 1);
  const auto t = aeq::testing::run_phases(c, 1e-4);
  const auto fd = aeq::testing::fd_saturation_gradients(c);
  const auto est = aeq::testing::eqprop_saturation_gradients(c, t, false);
  EXPECT_LT(median_of(oracle::relative_errors(est, fd)), 1e-2);
}

TEST(ParamGradient, SaturationSensitivityIsPseudoPowerOverIs) {
  const Diode d{2e-6, 1.5, 0.02585, 0.1};
  const Component comp{"d", 1, 2, d};
  for (double dv : {-0.3, 0.0, 0.2, 0.45}) {
    EXPECT_NEAR(diode_pseudo_power_dis(d, dv), pseudo_power_component(comp, dv) / d.saturation_current,
                1e-12 * std::max(1.0, std::abs(pseudo_power_component(comp, dv) / d.saturation_current)));
  }
}

TEST(InputGradient, ZeroNudgeGivesZero) {
  const Netlist net = chain_with_io();
  const std::vector<double> x{1.0, -1.0};
  PhaseRunner runner(net);
  const PhaseRecord free = runner.run_free(net, x);
  const std::vector<double> zero{0.0, 0.0};
  for (double g : input_gradient(net, free, runner.run_nudged(net, free, zero, 0.1))) EXPECT_NEAR(g, 0.0, 1e-9);
}

TEST(InputGradient, LinearNetworkMatchesSuperposition) {
  const Netlist net = chain_with_io();
  const std::vector<double> x{1.0, -0.4};
  const std::vector<double> target{0.2};
  // Outputs are linear in the inputs: Y = S x. Columns of S from unit inputs.
  auto outputs_for = [&](std::vector<double> in) {
    Netlist copy = net;
    copy.params(0) = VoltageSource{in[0]};
    copy.params(1) = VoltageSource{in[1]};
    const auto sol = oracle::linear_network_solution(copy);
    return std::vector<double>{sol.voltages[3], sol.voltages[2]};
  };
  const auto s0 = outputs_for({1.0, 0.0}), s1 = outputs_for({0.0, 1.0});
  const double y_plus = s0[0] * x[0] + s1[0] * x[1], y_minus = s0[1] * x[0] + s1[1] * x[1];
  const double dl = y_plus - y_minus - target[0];
  const double expected[2] = {dl * (s0[0] - s0[1]), dl * (s1[0] - s1[1])};

  aeq::testing::GradientCase c{net, stage_energy_scales(net), {x, target}, {}};
  const auto t = aeq::testing::run_phases(c, 1e-4);
  const auto est = input_gradient(net, t.minus, t.plus);
  EXPECT_NEAR(est[0], expected[0], 1e-8);
  EXPECT_NEAR(est[1], expected[1], 1e-8);
}

TEST(InputGradient, MatchesFiniteDifferencesOnRandomNetworks) {
  Rng rng(16);
  std::vector<double> errors;
  for (int trial = 0; trial < 4; ++trial) {
    const auto c = trial % 2 ? aeq::testing::layered_case(rng, 3, 3, 1) : aeq::testing::two_terminal_case(rng, 15);
    const auto t = aeq::testing::run_phases(c, 1e-4);
    const auto est = input_gradient(c.net, t.free, t.plus, c.scale);
    const auto fd = oracle::fd_input_gradient(c.net, c.probe, c.loss);
    const auto rel = oracle::relative_errors(est, fd);
    errors.insert(errors.end(), rel.begin(), rel.end());
  }
  EXPECT_LT(median_of(errors), 1e-2);
}

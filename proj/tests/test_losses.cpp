#include "gcr/grad_check.hpp"
#include "gcr/grad_check_suite.hpp"
#include "gcr/losses.hpp"
#include "gcr/ops.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace gcr;

namespace {

Tensor<double> vec(std::vector<double> v, bool grad = false) {
  const auto n = v.size();
  return Tensor<double>::from({n}, std::move(v), grad);
}

Tensor<double> gate(std::size_t h, std::size_t w, double value) { return Tensor<double>::full({h, w, 1}, value); }

}  // namespace

TEST(VerificationLossTest, UnitValues) {
  Tape<double> tape(false);
  auto a = vec({0, 0, 0}), b = vec({1, 0, 0});
  EXPECT_NEAR(verification_loss(tape, a, b, false, 2.0).item(), 0.5, 1e-12);
  EXPECT_NEAR(verification_loss(tape, a, b, true, 2.0).item(), 0.5, 1e-12);
  auto far = vec({0, 3, 4});
  EXPECT_EQ(verification_loss(tape, a, far, false, 2.0).item(), 0.0);
  EXPECT_NEAR(verification_loss(tape, a, far, true, 2.0).item(), 12.5, 1e-12);
  EXPECT_EQ(verification_loss(tape, a, a, true, 2.0).item(), 0.0);
  EXPECT_NEAR(verification_loss(tape, a, a, false, 2.0).item(), 2.0, 1e-12);
}

TEST(VerificationLossTest, ZeroDistanceHasZeroSubgradient) {
  auto a = vec({1, 2}, true), b = vec({1, 2}, true);
  Tape<double> tape;
  tape.backward(verification_loss(tape, a, b, false, 2.0));
  for (double g : a.grad()) EXPECT_EQ(g, 0.0);
  for (double g : b.grad()) EXPECT_EQ(g, 0.0);
}

TEST(VerificationLossTest, MatchesFiniteDifferences) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> d;
  for (bool same : {true, false}) {
    std::vector<double> x(5), y(5);
    for (auto& v : x) v = 0.3 * d(rng);
    for (auto& v : y) v = 0.3 * d(rng);
    auto a = vec(x, true), b = vec(y, true);
    const auto result = grad_check([&](Tape<double>& t) { return verification_loss(t, a, b, same, 2.0); },
                                   {{"a", a}, {"b", b}});
    EXPECT_LT(result.max_relative_error, 1e-6) << "same=" << same;
  }
}

TEST(GateRegularizerTest, UnitValues) {
  Tape<double> tape(false);
  EXPECT_NEAR(gate_regularizer(tape, gate(3, 2, 0.25)).item(), 0.25 * 0.75, 1e-12);
  EXPECT_EQ(gate_regularizer(tape, gate(3, 2, 0.5)).item(), 0.0);
  EXPECT_EQ(gate_regularizer(tape, gate(3, 2, 0.9)).item(), 0.0);
  EXPECT_NEAR(gate_regularizer(tape, gate(2, 2, 0.0)).item(), 0.5, 1e-12);
  // The penalty only sees the mean: half zeros and half 0.5 is mean 0.25.
  auto mixed = Tensor<double>::from({1, 4, 1}, {0, 0.5, 0, 0.5});
  EXPECT_NEAR(gate_regularizer(tape, mixed).item(), 0.1875, 1e-12);
}

TEST(GateRegularizerTest, GradientMatchesClosedForm) {
  // d/dg_k of (0.5 - m)(1 - m) with m the mean over n cells: (2m - 1.5) / n.
  auto g = Tensor<double>::from({2, 2, 1}, {0.1, 0.2, 0.3, 0.2}, true);
  Tape<double> tape;
  tape.backward(gate_regularizer(tape, g));
  const double m = 0.2;
  for (double v : g.grad()) EXPECT_NEAR(v, (2 * m - 1.5) / 4, 1e-14);
}

TEST(IdentificationLossTest, UniformLogitsGiveLogC) {
  for (std::size_t c : {2u, 5u, 17u}) {
    ClassifierParams<double> cls{Tensor<double>::zeros({c, 4})};
    Tape<double> tape(false);
    EXPECT_NEAR(identification_loss(tape, vec({1, -2, 3, 0.5}), 1, cls).item(), std::log(double(c)), 1e-12);
  }
}

TEST(IdentificationLossTest, StableForLargeLogitsAndMatchesFiniteDifferences) {
  ClassifierParams<double> cls{Tensor<double>::from({3, 2}, {1000, 0, 0, 1000, -1000, 0}, true)};
  Tape<double> tape(false);
  const double l = identification_loss(tape, vec({1, 0.999}), 1, cls).item();
  EXPECT_TRUE(std::isfinite(l));
  EXPECT_NEAR(l, std::log1p(std::exp(1.0)), 1e-9);

  std::mt19937_64 rng(2);
  std::normal_distribution<double> d;
  std::vector<double> w(12), x(4);
  for (auto& v : w) v = d(rng);
  for (auto& v : x) v = d(rng);
  ClassifierParams<double> small{Tensor<double>::from({3, 4}, w, true)};
  auto feature = vec(x, true);
  const auto result = grad_check([&](Tape<double>& t) { return identification_loss(t, feature, 2, small); },
                                 {{"w", small.weight}, {"v", feature}});
  EXPECT_LT(result.max_relative_error, 1e-6);
  EXPECT_THROW(identification_loss(tape, feature, 3, small), std::out_of_range);
}

TEST(TotalLossTest, SumsTermsAndAveragesGatePenaltyOverFrames) {
  ClassifierParams<double> cls{Tensor<double>::zeros({4, 3})};
  std::vector<FrameGates<double>> gi(2), gj(1);
  gi[0].fused = gate(2, 2, 0.25);  // 0.1875
  gi[1].fused = gate(2, 2, 0.75);  // 0
  gj[0].fused = gate(2, 2, 0.0);   // 0.5
  Tape<double> tape(false);
  const auto b = total_loss<double>(tape, vec({0, 0, 0}), vec({1, 0, 0}), 0, 3, gi, gj, cls, {2.0, true});
  EXPECT_NEAR(b.id_i, std::log(4.0), 1e-12);
  EXPECT_NEAR(b.id_j, std::log(4.0), 1e-12);
  EXPECT_NEAR(b.ver, 0.5, 1e-12);
  EXPECT_NEAR(b.gate_i, 0.1875 / 2, 1e-12);
  EXPECT_NEAR(b.gate_j, 0.5, 1e-12);
  EXPECT_NEAR(b.total, 2 * std::log(4.0) + 0.5 + 0.09375 + 0.5, 1e-12);
  EXPECT_NEAR(b.total_tensor.item(), b.total, 1e-12);

  const auto off = total_loss<double>(tape, vec({0, 0, 0}), vec({1, 0, 0}), 0, 3, gi, gj, cls, {2.0, false});
  EXPECT_EQ(off.gate_i, 0.0);
  EXPECT_NEAR(off.total, 2 * std::log(4.0) + 0.5, 1e-12);

  std::vector<FrameGates<double>> ungated(2);
  const auto none = total_loss<double>(tape, vec({0, 0, 0}), vec({1, 0, 0}), 0, 0, ungated, ungated, cls, {2.0, true});
  EXPECT_EQ(none.gate_i + none.gate_j, 0.0);
}

TEST(PredictIdentityTest, ArgmaxWithFirstTie) {
  ClassifierParams<double> cls{Tensor<double>::from({3, 2}, {1, 0, 0, 1, 0, 1})};
  EXPECT_EQ(predict_identity(vec({0.2, 0.9}), cls), 1u);
  EXPECT_EQ(predict_identity(vec({0.9, 0.2}), cls), 0u);
}

TEST(GradCheckTest, DetectsExactCubicGradient) {
  auto x = vec({0.7, -1.2}, true);
  const auto r = grad_check([&](Tape<double>& t) { return ops::sum_all(t, ops::mul(t, ops::mul(t, x, x), x)); },
                            {{"x", x}});
  ASSERT_EQ(r.analytic[0].size(), 2u);
  EXPECT_NEAR(r.analytic[0][0], 3 * 0.49, 1e-14);
  EXPECT_LT(r.max_relative_error, 1e-8);
}

TEST(GradCheckSuiteTest, OperatorChecksPassAndCatchAnInjectedFault) {
  GradCheckSuiteOptions options;
  options.end_to_end = false;
  const auto clean = run_gradcheck_suite(options);
  EXPECT_TRUE(clean.passed()) << clean.format();
  EXPECT_GT(clean.entries.size(), 20u);

  for (const std::string op : {"conv2d_same", "sigmoid", "dense", "fuse_gates", "concat"}) {
    debug::set_corrupted_adjoint(op);
    const auto faulty = run_gradcheck_suite(options);
    debug::set_corrupted_adjoint("");
    EXPECT_FALSE(faulty.passed()) << op;
  }
}

TEST(GradCheckSuiteTest, EndToEndNetworkPassesForEveryFusion) {
  GradCheckOptions sampled;
  sampled.max_coordinates_per_input = 12;
  for (auto fusion : {FusionMode::f1, FusionMode::f2, FusionMode::f3, FusionMode::f4}) {
    auto config = tiny_network_config();
    config.fusion = fusion;
    const auto r = end_to_end_grad_check(config, 2, 3, sampled);
    EXPECT_LT(r.max_relative_error, 1e-4) << to_string(fusion);
  }
}

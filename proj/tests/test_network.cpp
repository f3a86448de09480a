#include "gcr/grad_check_suite.hpp"
#include "gcr/network.hpp"
#include "gcr/ops.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace gcr;

namespace {

// Gate values drawn to cover the interior and both saturated ends.
template <typename T>
Tensor<T> random_gate(std::mt19937_64& rng, std::size_t h, std::size_t w, bool grad) {
  std::uniform_real_distribution<double> u(0, 1);
  std::uniform_int_distribution<int> kind(0, 9);
  std::vector<T> v(h * w);
  for (auto& x : v) {
    const int k = kind(rng);
    x = k == 0 ? T(0) : k == 1 ? T(1) : k == 2 ? T(1e-7) : k == 3 ? T(1) - T(1e-6) : static_cast<T>(u(rng));
  }
  return Tensor<T>::from({h, w, 1}, std::move(v), grad);
}

template <typename T>
std::vector<Tensor<T>> random_sequence(std::mt19937_64& rng, std::size_t n, Shape shape) {
  std::normal_distribution<double> d;
  std::vector<Tensor<T>> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<T> v(shape_numel(shape));
    for (auto& x : v) x = static_cast<T>(d(rng));
    out.push_back(Tensor<T>::from(shape, std::move(v)));
  }
  return out;
}

template <typename T>
std::vector<T> values(const Tensor<T>& t) {
  return {t.data().begin(), t.data().end()};
}

template <typename T>
void f3_equals_f4_exactly() {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    auto gc = random_gate<T>(rng, 3, 4, false), gof = random_gate<T>(rng, 3, 4, false);
    Tape<T> tape(false);
    auto f3 = fuse_gates(tape, gc, gof, FusionMode::f3);
    auto f4 = fuse_gates(tape, gc, gof, FusionMode::f4);
    ASSERT_EQ(values(f3), values(f4));
    for (auto v : f4.data()) {
      ASSERT_GE(v, T(0));
      ASSERT_LE(v, T(1));
    }
  }
}

struct Clip {
  std::vector<Tensor<double>> frames, flows;
};

Clip random_clip(std::mt19937_64& rng, const NetworkConfig& c, std::size_t n) {
  return {random_sequence<double>(rng, n, {c.frame_height, c.frame_width, c.color_channels}),
          random_sequence<double>(rng, n, {c.frame_height, c.frame_width, c.flow_channels})};
}

SequenceOutput<double> run(const Clip& clip, const NetworkParams<double>& p, const NetworkConfig& c) {
  Tape<double> tape(false);
  return sequence_forward<double>(tape, clip.frames, clip.flows, p, c);
}

}  // namespace

TEST(FusionTest, F3AndF4ForwardAreBitIdenticalFloat) { f3_equals_f4_exactly<float>(); }
TEST(FusionTest, F3AndF4ForwardAreBitIdenticalDouble) { f3_equals_f4_exactly<double>(); }

TEST(FusionTest, F4AdjointPassesThroughUnchanged) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    auto gc = random_gate<double>(rng, 2, 3, true), gof = random_gate<double>(rng, 2, 3, true);
    auto upstream = random_gate<double>(rng, 2, 3, false);
    Tape<double> tape;
    auto fused = fuse_gates(tape, gc, gof, FusionMode::f4);
    tape.backward(ops::sum_all(tape, ops::mul(tape, fused, upstream)));
    for (std::size_t i = 0; i < 6; ++i) {
      ASSERT_EQ(gc.grad()[i], upstream[i]);
      ASSERT_EQ(gof.grad()[i], upstream[i]);
    }
  }
}

TEST(FusionTest, F3AdjointIsOneMinusOtherGate) {
  std::mt19937_64 rng(7);
  auto gc = random_gate<double>(rng, 2, 3, true), gof = random_gate<double>(rng, 2, 3, true);
  Tape<double> tape;
  tape.backward(ops::sum_all(tape, fuse_gates(tape, gc, gof, FusionMode::f3)));
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_NEAR(gc.grad()[i], 1 - gof[i], 1e-15);
    EXPECT_NEAR(gof.grad()[i], 1 - gc[i], 1e-15);
  }
}

TEST(FusionTest, F1SumsAndF2TakesMaxWithTieToColor) {
  auto gc = Tensor<double>::from({1, 3, 1}, {0.2, 0.7, 0.4}, true);
  auto gof = Tensor<double>::from({1, 3, 1}, {0.5, 0.1, 0.4}, true);
  Tape<double> tape;
  auto f1 = fuse_gates(tape, gc, gof, FusionMode::f1);
  EXPECT_EQ(values(f1), (std::vector<double>{0.2 + 0.5, 0.7 + 0.1, 0.4 + 0.4}));
  auto f2 = fuse_gates(tape, gc, gof, FusionMode::f2);
  EXPECT_EQ(values(f2), (std::vector<double>{0.5, 0.7, 0.4}));
  tape.backward(ops::sum_all(tape, f2));
  EXPECT_EQ(gc.grad()[0], 0);
  EXPECT_EQ(gc.grad()[1], 1);
  EXPECT_EQ(gc.grad()[2], 1);
  EXPECT_EQ(gof.grad()[0], 1);
  EXPECT_EQ(gof.grad()[1], 0);
  EXPECT_EQ(gof.grad()[2], 0);
}

TEST(FusionTest, ShapeMismatchThrows) {
  Tape<double> tape(false);
  EXPECT_THROW(fuse_gates(tape, Tensor<double>::zeros({2, 2, 1}), Tensor<double>::zeros({2, 3, 1}), FusionMode::f4),
               ShapeError);
}

TEST(NetworkTest, ZeroParametersGiveHalfGates) {
  const auto config = tiny_network_config();
  auto params = init_params<double>(config, 0, false);
  for (auto& [name, t] : params.named()) std::fill(t.mutable_data().begin(), t.mutable_data().end(), 0.0);
  std::mt19937_64 rng(8);
  const auto out = run(random_clip(rng, config, 3), params, config);
  ASSERT_EQ(out.gates.size(), 3u);
  for (const auto& g : out.gates) {
    ASSERT_EQ(g.color.shape(), (Shape{config.gate_height(), config.gate_width(), 1}));
    for (double v : g.color.data()) EXPECT_EQ(v, 0.5);
    for (double v : g.flow.data()) EXPECT_EQ(v, 0.5);
    for (double v : g.fused.data()) EXPECT_EQ(v, 0.75);
  }
  for (double v : out.video_feature.data()) EXPECT_EQ(v, 0.0);
}

TEST(NetworkTest, SingleFrameSequence) {
  const auto config = tiny_network_config();
  const auto params = init_params<double>(config, 1, false);
  std::mt19937_64 rng(9);
  const auto out = run(random_clip(rng, config, 1), params, config);
  EXPECT_EQ(out.video_feature.shape(), (Shape{config.feature_dim}));
  EXPECT_EQ(out.gates.size(), 1u);
}

TEST(NetworkTest, FeatureDependsOnFrameOrder) {
  const auto config = tiny_network_config();
  const auto params = init_params<double>(config, 2, false);
  std::mt19937_64 rng(10);
  auto clip = random_clip(rng, config, 3);
  const auto forward = run(clip, params, config);
  std::reverse(clip.frames.begin(), clip.frames.end());
  std::reverse(clip.flows.begin(), clip.flows.end());
  const auto backward = run(clip, params, config);
  double diff = 0;
  for (std::size_t i = 0; i < config.feature_dim; ++i)
    diff = std::max(diff, std::abs(forward.video_feature[i] - backward.video_feature[i]));
  EXPECT_GT(diff, 1e-6);
}

TEST(NetworkTest, F3AndF4NetworksProduceIdenticalFeatures) {
  auto config = tiny_network_config();
  std::mt19937_64 rng(11);
  const auto clip = random_clip(rng, config, 3);
  config.fusion = FusionMode::f3;
  const auto params = init_params<double>(config, 3, false);
  const auto a = run(clip, params, config);
  config.fusion = FusionMode::f4;
  const auto b = run(clip, params, config);
  EXPECT_EQ(values(a.video_feature), values(b.video_feature));
}

TEST(NetworkTest, GateModesExposeTheRightGates) {
  std::mt19937_64 rng(12);
  for (auto mode : {GateMode::fused, GateMode::color_only, GateMode::flow_only, GateMode::concat_single, GateMode::none}) {
    auto config = tiny_network_config();
    config.gate_mode = mode;
    const auto params = init_params<double>(config, 4, false);
    const auto out = run(random_clip(rng, config, 2), params, config);
    const auto& g = out.gates[0];
    switch (mode) {
      case GateMode::fused:
        EXPECT_TRUE(g.color.defined() && g.flow.defined() && g.fused.defined());
        break;
      case GateMode::color_only:
        EXPECT_FALSE(g.flow.defined());
        EXPECT_EQ(values(g.fused), values(g.color));
        break;
      case GateMode::flow_only:
        EXPECT_FALSE(g.color.defined());
        EXPECT_EQ(values(g.fused), values(g.flow));
        break;
      case GateMode::concat_single:
        EXPECT_TRUE(g.fused.defined());
        EXPECT_TRUE(params.gate_concat.defined());
        break;
      case GateMode::none:
        EXPECT_FALSE(g.fused.defined());
        EXPECT_FALSE(params.gate_color.defined());
        break;
    }
  }
}

TEST(NetworkTest, WithoutPreviousStateGatesIgnoreHistory) {
  auto config = tiny_network_config();
  config.use_prev_state = false;
  const auto params = init_params<double>(config, 5, false);
  EXPECT_FALSE(params.gate_color.fc_weight.defined());
  std::mt19937_64 rng(13);
  auto clip = random_clip(rng, config, 3);
  const auto full = run(clip, params, config);
  Clip last{{clip.frames[2]}, {clip.flows[2]}};
  const auto alone = run(last, params, config);
  EXPECT_EQ(values(full.gates[2].fused), values(alone.gates[0].fused));
}

TEST(NetworkTest, ParametersRoundTripByName) {
  const auto config = tiny_network_config();
  const auto params = init_params<double>(config, 6, false);
  const auto named = params.named();
  const auto rebuilt = params_from_named<double>(config, named, false);
  const auto again = rebuilt.named();
  ASSERT_EQ(named.size(), again.size());
  for (std::size_t i = 0; i < named.size(); ++i) {
    EXPECT_EQ(named[i].name, again[i].name);
    EXPECT_EQ(values(named[i].tensor), values(again[i].tensor));
  }
  auto broken = named;
  broken.pop_back();
  EXPECT_THROW(params_from_named<double>(config, broken, false), std::invalid_argument);
}

TEST(NetworkTest, InitializationIsPrecisionIndependent) {
  const auto config = tiny_network_config();
  const auto d = init_params<double>(config, 7, false).named();
  const auto f = init_params<float>(config, 7, false).named();
  for (std::size_t i = 0; i < d.size(); ++i)
    for (std::size_t j = 0; j < d[i].tensor.numel(); ++j) ASSERT_EQ(f[i].tensor[j], static_cast<float>(d[i].tensor[j]));
}

TEST(NetworkTest, InputShapeMismatchThrows) {
  const auto config = tiny_network_config();
  const auto params = init_params<double>(config, 8, false);
  Tape<double> tape(false);
  auto frame = Tensor<double>::zeros({config.frame_height + 2, config.frame_width, 3});
  auto flow = Tensor<double>::zeros({config.frame_height + 2, config.frame_width, 2});
  EXPECT_ANY_THROW(frame_forward(tape, frame, flow, Tensor<double>::zeros({config.state_dim}), params, config));
}

TEST(GateRangeTest, AcceptsValidAndRejectsOutOfRange) {
  auto config = tiny_network_config();
  FrameGates<double> g;
  g.color = Tensor<double>::from({1, 2, 1}, {0.1, 0.9});
  g.flow = Tensor<double>::from({1, 2, 1}, {0.3, 0.4});
  g.fused = Tensor<double>::from({1, 2, 1}, {0.5, 1.0});
  const auto before = gate_range_checks();
  EXPECT_NO_THROW(check_gate_ranges(g, config));
  EXPECT_GT(gate_range_checks(), before);
  g.fused = Tensor<double>::from({1, 2, 1}, {0.5, 1.3});
  EXPECT_THROW(check_gate_ranges(g, config), InvariantError);
  config.fusion = FusionMode::f1;
  EXPECT_NO_THROW(check_gate_ranges(g, config));
  g.color = Tensor<double>::from({1, 2, 1}, {-0.1, 0.5});
  EXPECT_THROW(check_gate_ranges(g, config), InvariantError);
}

TEST(ConfigTest, ValidationAndRoundTrip) {
  NetworkConfig c;
  c.fusion = FusionMode::f2;
  c.gate_mode = GateMode::flow_only;
  c.state_dim = 40;
  NetworkConfig d;
  d.apply(c.to_map());
  EXPECT_EQ(d.to_map().entries(), c.to_map().entries());
  NetworkConfig bad;
  bad.kernel_size = 4;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  EXPECT_THROW(parse_fusion_mode("f5"), std::invalid_argument);
  EXPECT_EQ(parse_gate_mode(to_string(GateMode::concat_single)), GateMode::concat_single);
}

#include "gcr/grad_check_suite.hpp"

#include "gcr/losses.hpp"
#include "gcr/ops.hpp"
#include "gcr/random.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace gcr {
namespace {

using T = Tensor<double>;
using Op = std::function<T(Tape<double>&, const std::vector<T>&)>;

T random_leaf(std::mt19937_64& rng, Shape shape, double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return T::from(std::move(shape), std::move(v), true);
}

// Weighted sum of the op output, so every output element gets its own adjoint.
GradCheckResult check_op(const Op& op, const std::vector<std::pair<std::string, T>>& inputs, std::mt19937_64& rng,
                         const GradCheckOptions& fd) {
  std::vector<T> leaves;
  std::vector<GradCheckInput> named;
  for (const auto& [name, t] : inputs) {
    leaves.push_back(t);
    named.push_back({name, t});
  }
  T weights;
  auto f = [&](Tape<double>& tape) {
    auto y = op(tape, leaves);
    if (!weights.defined()) weights = random_leaf(rng, y.shape(), 0.5, 1.5).clone(false);
    return ops::sum_all(tape, ops::mul(tape, y, weights));
  };
  return grad_check(f, named, fd);
}

std::string fusion_label(FusionMode m) { return to_string(m); }

}  // namespace

NetworkConfig tiny_network_config() {
  NetworkConfig c;
  c.frame_height = 16;
  c.frame_width = 8;
  c.conv1_out = 6;
  c.conv1_of_out = 6;
  c.gate_hidden = 16;
  c.state_dim = 64;
  c.feature_dim = 64;
  c.conv2_out = 12;
  c.conv3_out = 16;
  return c;
}

bool GradCheckReport::passed() const {
  return std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.passed; });
}

double GradCheckReport::worst_relative_error() const {
  double w = 0;
  for (const auto& e : entries) w = std::max(w, e.max_relative_error);
  return w;
}

std::string GradCheckReport::format() const {
  std::ostringstream os;
  os << "check\tmax_rel_error\tmax_abs_error\tcoordinates\tstatus\n";
  for (const auto& e : entries) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.3e\t%.3e", e.max_relative_error, e.max_abs_error);
    os << e.check << '\t' << buf << '\t' << e.coordinates << '\t' << (e.passed ? "PASS" : "FAIL") << '\n';
  }
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.3e", worst_relative_error());
  os << "worst\t" << buf << "\ttolerance " << tolerance << '\t' << (passed() ? "PASS" : "FAIL") << '\n';
  return os.str();
}

GradCheckResult end_to_end_grad_check(const NetworkConfig& config, std::size_t frames, std::uint64_t seed,
                                      const GradCheckOptions& options) {
  config.validate();
  auto rng = seeded_rng({seed, 21});
  auto params = init_params<double>(config, seed);
  // Non-zero biases, and gates pushed below one half so the regularizer is active.
  for (auto& [name, t] : params.named()) {
    if (name.ends_with(".bias")) {
      const bool gate_out = name.ends_with("conv_gate2.bias");
      std::uniform_real_distribution<double> dist(gate_out ? -2.0 : -0.1, gate_out ? -1.5 : 0.1);
      for (auto& v : t.mutable_data()) v = dist(rng);
    }
  }
  auto cls = init_classifier<double>(3, config.feature_dim, seed + 1);

  auto make_clip = [&] {
    std::vector<T> f, o;
    for (std::size_t t = 0; t < frames; ++t) {
      f.push_back(random_leaf(rng, {config.frame_height, config.frame_width, config.color_channels}).clone(false));
      o.push_back(random_leaf(rng, {config.frame_height, config.frame_width, config.flow_channels}).clone(false));
    }
    return std::pair{f, o};
  };
  const auto a = make_clip(), b = make_clip(), c = make_clip();
  // The negative pair's margin sits just above its distance, inside the hinge.
  LossOptions pos_opts{2.0, true}, neg_opts{2.0, true};
  {
    Tape<double> tape(false);
    auto va = sequence_forward<double>(tape, a.first, a.second, params, config).video_feature.data();
    auto vc = sequence_forward<double>(tape, c.first, c.second, params, config).video_feature.data();
    double sq = 0;
    for (std::size_t i = 0; i < va.size(); ++i) sq += (va[i] - vc[i]) * (va[i] - vc[i]);
    neg_opts.margin = std::sqrt(sq) + 0.5;
  }

  auto f = [&](Tape<double>& tape) {
    auto sa = sequence_forward<double>(tape, a.first, a.second, params, config);
    auto sb = sequence_forward<double>(tape, b.first, b.second, params, config);
    auto sc = sequence_forward<double>(tape, c.first, c.second, params, config);
    auto pos = total_loss<double>(tape, sa.video_feature, sb.video_feature, 0, 0, sa.gates, sb.gates, cls, pos_opts);
    auto neg = total_loss<double>(tape, sa.video_feature, sc.video_feature, 0, 2, sa.gates, sc.gates, cls, neg_opts);
    return ops::add(tape, pos.total_tensor, neg.total_tensor);
  };

  std::vector<GradCheckInput> inputs;
  for (const auto& [name, t] : params.named()) inputs.push_back({name, t});
  inputs.push_back({"classifier.weight", cls.weight});

  if (config.gate_mode != GateMode::fused || config.fusion != FusionMode::f4) return grad_check(f, inputs, options);

  debug::FrozenFusionProducts frozen;
  debug::set_frozen_fusion_products(&frozen);
  try {
    {
      Tape<double> tape(false);
      f(tape);
    }
    frozen.capturing = false;
    auto replay = [&](Tape<double>& tape) {
      frozen.rewind();
      return f(tape);
    };
    auto result = grad_check(replay, inputs, options);
    debug::set_frozen_fusion_products(nullptr);
    return result;
  } catch (...) {
    debug::set_frozen_fusion_products(nullptr);
    throw;
  }
}

GradCheckReport run_gradcheck_suite(const GradCheckSuiteOptions& options) {
  GradCheckReport report;
  report.tolerance = options.tolerance;
  auto add = [&](const std::string& check, const GradCheckEntry& e) {
    report.entries.push_back({check, e.max_relative_error, e.max_abs_error, e.coordinates,
                              e.max_relative_error < options.tolerance});
  };
  auto add_total = [&](const std::string& check, const GradCheckResult& r) {
    std::size_t coords = 0;
    for (const auto& e : r.per_input) coords += e.coordinates;
    add(check, {check, r.max_relative_error, r.max_abs_error, coords});
  };
  const auto& fd = options.finite_difference;

  if (options.operator_checks) {
    auto rng = seeded_rng({options.seed, 22});
    auto leaf = [&](Shape s, double lo = -1, double hi = 1) { return random_leaf(rng, std::move(s), lo, hi); };
    auto run = [&](const std::string& name, const Op& op, std::vector<std::pair<std::string, T>> inputs) {
      add_total(name, check_op(op, inputs, rng, fd));
    };

    run("conv2d_same", [](auto& t, const auto& x) { return ops::conv2d_same(t, x[0], x[1], x[2]); },
        {{"input", leaf({6, 5, 3})}, {"kernel", leaf({3, 3, 3, 4})}, {"bias", leaf({4})}});
    run("conv2d_same/k5", [](auto& t, const auto& x) { return ops::conv2d_same(t, x[0], x[1], x[2]); },
        {{"input", leaf({6, 4, 2})}, {"kernel", leaf({5, 5, 2, 3})}, {"bias", leaf({3})}});
    run("maxpool_2x2", [](auto& t, const auto& x) { return ops::maxpool_2x2(t, x[0]); }, {{"input", leaf({5, 7, 3})}});
    run("tanh", [](auto& t, const auto& x) { return ops::tanh_act(t, x[0]); }, {{"input", leaf({10}, -3, 3)}});
    run("sigmoid", [](auto& t, const auto& x) { return ops::sigmoid_act(t, x[0]); }, {{"input", leaf({10}, -4, 4)}});
    run("dense", [](auto& t, const auto& x) { return ops::dense(t, x[0], x[1], x[2]); },
        {{"input", leaf({7})}, {"weight", leaf({4, 7})}, {"bias", leaf({4})}});
    run("add_broadcast_vector", [](auto& t, const auto& x) { return ops::add_broadcast_vector(t, x[0], x[1]); },
        {{"cube", leaf({3, 4, 5})}, {"vector", leaf({5})}});
    run("mul_broadcast_gate", [](auto& t, const auto& x) { return ops::mul_broadcast_gate(t, x[0], x[1]); },
        {{"gate", leaf({3, 4, 1}, 0, 1)}, {"cube", leaf({3, 4, 5})}});
    run("concat", [](auto& t, const auto& x) { return ops::concat_channels(t, x[0], x[1]); },
        {{"a", leaf({3, 4, 2})}, {"b", leaf({3, 4, 3})}});
    run("add", [](auto& t, const auto& x) { return ops::add(t, x[0], x[1]); }, {{"a", leaf({12})}, {"b", leaf({12})}});
    run("sub", [](auto& t, const auto& x) { return ops::sub(t, x[0], x[1]); }, {{"a", leaf({12})}, {"b", leaf({12})}});
    run("mul", [](auto& t, const auto& x) { return ops::mul(t, x[0], x[1]); }, {{"a", leaf({12})}, {"b", leaf({12})}});
    run("max", [](auto& t, const auto& x) { return ops::maximum(t, x[0], x[1]); },
        {{"a", leaf({12})}, {"b", leaf({12})}});
    run("scale", [](auto& t, const auto& x) { return ops::scale(t, x[0], -1.7); }, {{"input", leaf({9})}});
    run("mean_all", [](auto& t, const auto& x) { return ops::mean_all(t, x[0]); }, {{"input", leaf({3, 4})}});
    run("sum_all", [](auto& t, const auto& x) { return ops::sum_all(t, x[0]); }, {{"input", leaf({3, 4})}});
    run("reshape", [](auto& t, const auto& x) { return ops::reshape(t, x[0], Shape{4, 3}); },
        {{"input", leaf({2, 6})}});
    for (auto mode : {FusionMode::f1, FusionMode::f2, FusionMode::f3}) {
      run("fuse_gates/" + fusion_label(mode), [mode](auto& t, const auto& x) { return fuse_gates(t, x[0], x[1], mode); },
          {{"color_gate", leaf({4, 3, 1}, 0.02, 0.98)}, {"flow_gate", leaf({4, 3, 1}, 0.02, 0.98)}});
    }
    {
      // f4 against gc + gof with the product held at its unperturbed value.
      const auto gc = leaf({4, 3, 1}, 0.02, 0.98), gf = leaf({4, 3, 1}, 0.02, 0.98);
      debug::FrozenFusionProducts frozen;
      debug::set_frozen_fusion_products(&frozen);
      try {
        {
          Tape<double> tape(false);
          fuse_gates(tape, gc, gf, FusionMode::f4);
        }
        frozen.capturing = false;
        run("fuse_gates/f4",
            [&frozen](auto& t, const auto& x) {
              frozen.rewind();
              return fuse_gates(t, x[0], x[1], FusionMode::f4);
            },
            {{"color_gate", gc}, {"flow_gate", gf}});
      } catch (...) {
        debug::set_frozen_fusion_products(nullptr);
        throw;
      }
      debug::set_frozen_fusion_products(nullptr);
    }

    const auto cls = ClassifierParams<double>{leaf({4, 6})};
    run("identification_loss", [cls](auto& t, const auto& x) { return identification_loss(t, x[0], 2, cls); },
        {{"feature", leaf({6})}, {"classifier.weight", cls.weight}});
    run("verification_loss/same",
        [](auto& t, const auto& x) { return verification_loss(t, x[0], x[1], true, 2.0); },
        {{"vi", leaf({6})}, {"vj", leaf({6})}});
    run("verification_loss/different",
        [](auto& t, const auto& x) { return verification_loss(t, x[0], x[1], false, 2.0); },
        {{"vi", leaf({6}, -0.3, 0.3)}, {"vj", leaf({6}, -0.3, 0.3)}});
    run("gate_regularizer", [](auto& t, const auto& x) { return gate_regularizer(t, x[0]); },
        {{"gate", leaf({4, 3, 1}, 0.05, 0.6)}});
  }

  if (options.end_to_end) {
    for (auto mode : options.fusions) {
      auto cfg = options.network;
      cfg.fusion = mode;
      const auto r = end_to_end_grad_check(cfg, options.frames, options.seed, fd);
      for (const auto& e : r.per_input) add("network/" + fusion_label(mode) + "/" + e.name, e);
    }
  }
  return report;
}

}  // namespace gcr

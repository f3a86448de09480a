#include "gcr/network.hpp"

#include "gcr/ops.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <random>
#include <stdexcept>

namespace gcr {
namespace {

std::atomic<std::uint64_t> g_gate_checks{0};
thread_local debug::FrozenFusionProducts* t_frozen_products = nullptr;

struct ParamSpec {
  std::string name;
  Shape shape;
  std::size_t fan_in = 0;
  std::size_t fan_out = 0;
  bool bias = false;
};

void add_conv(std::vector<ParamSpec>& specs, const std::string& name, std::size_t k, std::size_t cin, std::size_t cout) {
  specs.push_back({name + ".kernel", {k, k, cin, cout}, k * k * cin, k * k * cout, false});
  specs.push_back({name + ".bias", {cout}, 0, 0, true});
}

void add_dense(std::vector<ParamSpec>& specs, const std::string& name, std::size_t in, std::size_t out) {
  specs.push_back({name + ".weight", {out, in}, in, out, false});
  specs.push_back({name + ".bias", {out}, 0, 0, true});
}

void add_gate(std::vector<ParamSpec>& specs, const std::string& prefix, const NetworkConfig& c, std::size_t cin) {
  add_conv(specs, prefix + ".conv_gate1", c.kernel_size, cin, c.gate_hidden);
  if (c.use_prev_state) add_dense(specs, prefix + ".fc_gate1", c.state_dim, c.gate_hidden);
  add_conv(specs, prefix + ".conv_gate2", c.kernel_size, c.gate_hidden, 1);
}

bool uses_color_gate(GateMode m) { return m == GateMode::fused || m == GateMode::color_only; }
bool uses_flow_gate(GateMode m) { return m == GateMode::fused || m == GateMode::flow_only; }

std::vector<ParamSpec> param_layout(const NetworkConfig& c) {
  std::vector<ParamSpec> specs;
  add_conv(specs, "conv1", c.kernel_size, c.color_channels, c.conv1_out);
  add_conv(specs, "conv1_of", c.kernel_size, c.flow_channels, c.conv1_of_out);
  if (uses_color_gate(c.gate_mode)) add_gate(specs, "gate_color", c, c.conv1_out);
  if (uses_flow_gate(c.gate_mode)) add_gate(specs, "gate_flow", c, c.conv1_of_out);
  if (c.gate_mode == GateMode::concat_single) add_gate(specs, "gate_concat", c, c.conv1_out + c.conv1_of_out);
  add_conv(specs, "conv2", c.kernel_size, c.conv1_out + c.conv1_of_out, c.conv2_out);
  add_conv(specs, "conv3", c.kernel_size, c.conv2_out, c.conv3_out);
  add_dense(specs, "rnn", c.conv3_flat() + c.state_dim, c.state_dim);
  return specs;
}

template <typename P>
auto gate_slots(P& g, const std::string& prefix) {
  using TensorPtr = decltype(&g.conv1_kernel);
  return std::vector<std::pair<std::string, TensorPtr>>{
      {prefix + ".conv_gate1.kernel", &g.conv1_kernel}, {prefix + ".conv_gate1.bias", &g.conv1_bias},
      {prefix + ".fc_gate1.weight", &g.fc_weight},      {prefix + ".fc_gate1.bias", &g.fc_bias},
      {prefix + ".conv_gate2.kernel", &g.conv2_kernel}, {prefix + ".conv_gate2.bias", &g.conv2_bias},
  };
}

// Every slot a parameter set can hold, in canonical order.
template <typename P>
auto all_slots(P& p) {
  using TensorPtr = decltype(&p.conv1_kernel);
  std::vector<std::pair<std::string, TensorPtr>> slots{
      {"conv1.kernel", &p.conv1_kernel},
      {"conv1.bias", &p.conv1_bias},
      {"conv1_of.kernel", &p.conv1_of_kernel},
      {"conv1_of.bias", &p.conv1_of_bias},
  };
  for (auto& s : gate_slots(p.gate_color, "gate_color")) slots.push_back(s);
  for (auto& s : gate_slots(p.gate_flow, "gate_flow")) slots.push_back(s);
  for (auto& s : gate_slots(p.gate_concat, "gate_concat")) slots.push_back(s);
  slots.insert(slots.end(), {{"conv2.kernel", &p.conv2_kernel},
                             {"conv2.bias", &p.conv2_bias},
                             {"conv3.kernel", &p.conv3_kernel},
                             {"conv3.bias", &p.conv3_bias},
                             {"rnn.weight", &p.rnn_weight},
                             {"rnn.bias", &p.rnn_bias}});
  return slots;
}

template <typename T>
Tensor<T>& slot(NetworkParams<T>& p, const std::string& name) {
  for (auto& [n, ptr] : all_slots(p))
    if (n == name) return *ptr;
  throw std::invalid_argument("network: unknown parameter '" + name + "'");
}

template <typename T>
void check_finite(const Tensor<T>& t, const char* what) {
  for (auto v : t.data()) {
    if (!std::isfinite(v)) throw NumericError(std::string("network: non-finite value in ") + what);
  }
}

template <typename T>
void check_range(const Tensor<T>& gate, T lo, T hi, bool open, const char* what) {
  for (auto v : gate.data()) {
    const bool ok = open ? (v > lo && v < hi) : (v >= lo && v <= hi);
    if (!ok) {
      throw InvariantError(std::string("gate range violated: ") + what + " value " + std::to_string(v) +
                           (open ? " outside (" : " outside [") + std::to_string(lo) + ", " + std::to_string(hi) +
                           (open ? ")" : "]"));
    }
  }
}

}  // namespace

std::string to_string(FusionMode mode) {
  switch (mode) {
    case FusionMode::f1: return "f1";
    case FusionMode::f2: return "f2";
    case FusionMode::f3: return "f3";
    case FusionMode::f4: return "f4";
  }
  return "?";
}

std::string to_string(GateMode mode) {
  switch (mode) {
    case GateMode::fused: return "fused";
    case GateMode::color_only: return "color_only";
    case GateMode::flow_only: return "flow_only";
    case GateMode::concat_single: return "concat_single";
    case GateMode::none: return "none";
  }
  return "?";
}

std::string to_string(FeatureOutput mode) { return mode == FeatureOutput::output ? "output" : "state"; }

FusionMode parse_fusion_mode(std::string_view text) {
  if (text == "f1") return FusionMode::f1;
  if (text == "f2") return FusionMode::f2;
  if (text == "f3") return FusionMode::f3;
  if (text == "f4") return FusionMode::f4;
  throw std::invalid_argument("unknown fusion mode '" + std::string(text) + "' (expected f1, f2, f3 or f4)");
}

GateMode parse_gate_mode(std::string_view text) {
  for (auto m : {GateMode::fused, GateMode::color_only, GateMode::flow_only, GateMode::concat_single, GateMode::none})
    if (text == to_string(m)) return m;
  throw std::invalid_argument("unknown gate mode '" + std::string(text) +
                              "' (expected fused, color_only, flow_only, concat_single or none)");
}

FeatureOutput parse_feature_output(std::string_view text) {
  if (text == "output") return FeatureOutput::output;
  if (text == "state") return FeatureOutput::state;
  throw std::invalid_argument("unknown feature output '" + std::string(text) + "' (expected output or state)");
}

void NetworkConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("network config: " + msg); };
  if (color_channels != 3) fail("color_channels must be 3");
  if (flow_channels != 2) fail("flow_channels must be 2");
  if (frame_height < 8 || frame_width < 8) fail("frame_height and frame_width must be at least 8");
  if (frame_height % 4 != 0 || frame_width % 4 != 0) fail("frame_height and frame_width must be divisible by 4");
  for (auto [name, v] : {std::pair{"conv1_out", conv1_out}, {"conv1_of_out", conv1_of_out}, {"gate_hidden", gate_hidden},
                         {"state_dim", state_dim}, {"conv2_out", conv2_out}, {"conv3_out", conv3_out},
                         {"feature_dim", feature_dim}}) {
    if (v == 0) fail(std::string(name) + " must be positive");
  }
  if (kernel_size % 2 == 0) fail("kernel_size must be odd");
  if (state_dim != feature_dim) fail("state_dim must equal feature_dim");
}

std::size_t NetworkConfig::conv3_flat() const {
  auto half = [](std::size_t v) { return (v + 1) / 2; };
  return half(half(half(frame_height))) * half(half(half(frame_width))) * conv3_out;
}

ConfigMap NetworkConfig::to_map() const {
  ConfigMap m;
  m.set("frame_height", std::uint64_t{frame_height});
  m.set("frame_width", std::uint64_t{frame_width});
  m.set("color_channels", std::uint64_t{color_channels});
  m.set("flow_channels", std::uint64_t{flow_channels});
  m.set("conv1_out", std::uint64_t{conv1_out});
  m.set("conv1_of_out", std::uint64_t{conv1_of_out});
  m.set("gate_hidden", std::uint64_t{gate_hidden});
  m.set("state_dim", std::uint64_t{state_dim});
  m.set("conv2_out", std::uint64_t{conv2_out});
  m.set("conv3_out", std::uint64_t{conv3_out});
  m.set("kernel_size", std::uint64_t{kernel_size});
  m.set("fusion", to_string(fusion));
  m.set("gate_mode", to_string(gate_mode));
  m.set("use_prev_state", use_prev_state);
  m.set("feature_dim", std::uint64_t{feature_dim});
  m.set("feature_output", to_string(feature_output));
  return m;
}

void NetworkConfig::apply(const ConfigMap& m) {
  auto size = [&](const char* key, std::size_t& field) {
    if (m.contains(key)) field = m.get_uint(key);
  };
  size("frame_height", frame_height);
  size("frame_width", frame_width);
  size("color_channels", color_channels);
  size("flow_channels", flow_channels);
  size("conv1_out", conv1_out);
  size("conv1_of_out", conv1_of_out);
  size("gate_hidden", gate_hidden);
  size("state_dim", state_dim);
  size("conv2_out", conv2_out);
  size("conv3_out", conv3_out);
  size("kernel_size", kernel_size);
  size("feature_dim", feature_dim);
  if (m.contains("fusion")) fusion = parse_fusion_mode(m.get("fusion"));
  if (m.contains("gate_mode")) gate_mode = parse_gate_mode(m.get("gate_mode"));
  if (m.contains("use_prev_state")) use_prev_state = m.get_bool("use_prev_state");
  if (m.contains("feature_output")) feature_output = parse_feature_output(m.get("feature_output"));
}

template <typename T>
std::vector<NamedTensor<T>> NetworkParams<T>::named() const {
  std::vector<NamedTensor<T>> out;
  for (auto& [name, ptr] : all_slots(*this))
    if (ptr->defined()) out.push_back({name, *ptr});
  return out;
}

template <typename T>
NetworkParams<T> NetworkParams<T>::clone(bool requires_grad) const {
  NetworkParams<T> copy;
  auto src = all_slots(*this);
  auto dst = all_slots(copy);
  for (std::size_t i = 0; i < src.size(); ++i)
    if (src[i].second->defined()) *dst[i].second = src[i].second->clone(requires_grad);
  return copy;
}

template <typename T>
NetworkParams<T> init_params(const NetworkConfig& config, std::uint64_t seed, bool requires_grad) {
  config.validate();
  std::mt19937_64 rng(seed);
  NetworkParams<T> params;
  for (const auto& spec : param_layout(config)) {
    std::vector<T> values(shape_numel(spec.shape), T(0));
    if (!spec.bias) {
      const double limit = std::sqrt(6.0 / static_cast<double>(spec.fan_in + spec.fan_out));
      std::uniform_real_distribution<double> dist(-limit, limit);
      for (auto& v : values) v = static_cast<T>(dist(rng));
    }
    slot(params, spec.name) = Tensor<T>::from(spec.shape, std::move(values), requires_grad);
  }
  return params;
}

template <typename T>
NetworkParams<T> params_from_named(const NetworkConfig& config, const std::vector<NamedTensor<T>>& arrays,
                                   bool requires_grad) {
  config.validate();
  NetworkParams<T> params;
  for (const auto& spec : param_layout(config)) {
    auto it = std::find_if(arrays.begin(), arrays.end(), [&](const auto& a) { return a.name == spec.name; });
    if (it == arrays.end()) throw std::invalid_argument("network: missing parameter '" + spec.name + "'");
    if (it->tensor.shape() != spec.shape) {
      throw ShapeError("network: parameter '" + spec.name + "' has shape " + shape_str(it->tensor.shape()) +
                       ", configuration expects " + shape_str(spec.shape));
    }
    slot(params, spec.name) = it->tensor.clone(requires_grad);
  }
  return params;
}

template <typename To, typename From>
NetworkParams<To> cast_params(const NetworkConfig& config, const NetworkParams<From>& params, bool requires_grad) {
  std::vector<NamedTensor<To>> arrays;
  for (const auto& [name, t] : params.named()) {
    std::vector<To> values(t.data().begin(), t.data().end());
    arrays.push_back({name, Tensor<To>::from(t.shape(), std::move(values))});
  }
  return params_from_named(config, arrays, requires_grad);
}

template <typename T>
Tensor<T> shared_conv(Tape<T>& tape, Stream stream, const Tensor<T>& input, const NetworkParams<T>& params) {
  const bool color = stream == Stream::color;
  const auto& kernel = color ? params.conv1_kernel : params.conv1_of_kernel;
  const auto& bias = color ? params.conv1_bias : params.conv1_of_bias;
  if (input.rank() != 3 || input.dim(2) != kernel.dim(2)) {
    throw ShapeError(std::string("shared_conv: ") + (color ? "color" : "flow") + " stream expects " +
                     std::to_string(kernel.dim(2)) + " input channels, got input " + shape_str(input.shape()));
  }
  return ops::tanh_act(tape, ops::maxpool_2x2(tape, ops::conv2d_same(tape, input, kernel, bias)));
}

template <typename T>
Tensor<T> compute_gate(Tape<T>& tape, const Tensor<T>& cube, const Tensor<T>& prev_state, const GateParams<T>& gate,
                       bool use_prev_state) {
  auto hidden = ops::conv2d_same(tape, cube, gate.conv1_kernel, gate.conv1_bias);
  if (use_prev_state) {
    auto projected = ops::dense(tape, prev_state, gate.fc_weight, gate.fc_bias);
    hidden = ops::add_broadcast_vector(tape, hidden, projected);
  }
  hidden = ops::tanh_act(tape, hidden);
  return ops::sigmoid_act(tape, ops::conv2d_same(tape, hidden, gate.conv2_kernel, gate.conv2_bias));
}

template <typename T>
Tensor<T> fuse_gates(Tape<T>& tape, const Tensor<T>& color_gate, const Tensor<T>& flow_gate, FusionMode mode) {
  if (color_gate.shape() != flow_gate.shape()) {
    throw ShapeError("fuse_gates: gate shapes differ " + shape_str(color_gate.shape()) + " vs " +
                     shape_str(flow_gate.shape()));
  }
  auto out = tape.make_output(color_gate.shape(), {&color_gate, &flow_gate});
  auto gc = color_gate.data();
  auto gf = flow_gate.data();
  auto dst = out.mutable_data();
  const std::vector<double>* frozen = nullptr;
  if (auto* hook = t_frozen_products; hook && mode == FusionMode::f4) {
    if (hook->capturing) {
      auto& p = hook->products.emplace_back(dst.size());
      for (std::size_t i = 0; i < dst.size(); ++i) p[i] = static_cast<double>(gc[i]) * static_cast<double>(gf[i]);
    } else {
      if (hook->next >= hook->products.size()) throw std::logic_error("fuse_gates: frozen product list exhausted");
      frozen = &hook->products[hook->next++];
      if (frozen->size() != dst.size()) throw ShapeError("fuse_gates: frozen product has the wrong size");
    }
  }
  for (std::size_t i = 0; i < dst.size(); ++i) {
    if (frozen) {
      dst[i] = static_cast<T>(gc[i] + gf[i] - static_cast<T>((*frozen)[i]));
      continue;
    }
    switch (mode) {
      case FusionMode::f1: dst[i] = gc[i] + gf[i]; break;
      case FusionMode::f2: dst[i] = std::max(gc[i], gf[i]); break;
      case FusionMode::f3:
      case FusionMode::f4: dst[i] = T(1) - (T(1) - gc[i]) * (T(1) - gf[i]); break;
    }
  }
  tape.record("fuse_gates", out, [mode, cn = color_gate.node(), fn = flow_gate.node(), o = out.node()] {
    const T corrupt = debug::adjoint_corrupted("fuse_gates") ? T(1.01) : T(1);
    for (std::size_t i = 0; i < o->grad.size(); ++i) {
      const T g = o->grad[i] * corrupt;
      T dc = g, df = g;  // f1 and f4: pass-through
      if (mode == FusionMode::f2) {
        const bool color_wins = cn->value[i] >= fn->value[i];
        dc = color_wins ? g : T(0);
        df = color_wins ? T(0) : g;
      } else if (mode == FusionMode::f3) {
        dc = g * (T(1) - fn->value[i]);
        df = g * (T(1) - cn->value[i]);
      }
      if (cn->requires_grad) cn->grad[i] += dc;
      if (fn->requires_grad) fn->grad[i] += df;
    }
  });
  return out;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> feature_path(Tape<T>& tape, const Tensor<T>& color_cube, const Tensor<T>& flow_cube,
                                             const Tensor<T>& gate, const Tensor<T>& prev_state,
                                             const NetworkParams<T>& params, const NetworkConfig& /*config*/) {
  Tensor<T> color = color_cube, flow = flow_cube;
  if (gate.defined()) {
    color = ops::mul_broadcast_gate(tape, gate, color_cube);
    flow = ops::mul_broadcast_gate(tape, gate, flow_cube);
  }
  auto x = ops::concat_channels(tape, color, flow);
  x = ops::tanh_act(tape, ops::maxpool_2x2(tape, ops::conv2d_same(tape, x, params.conv2_kernel, params.conv2_bias)));
  x = ops::tanh_act(tape, ops::maxpool_2x2(tape, ops::conv2d_same(tape, x, params.conv3_kernel, params.conv3_bias)));
  auto joint = ops::concat_channels(tape, ops::flatten(tape, x), prev_state);
  auto o = ops::dense(tape, joint, params.rnn_weight, params.rnn_bias);
  auto h = ops::tanh_act(tape, o);
  return {o, h};
}

template <typename T>
void check_gate_ranges(const FrameGates<T>& gates, const NetworkConfig& config) {
  g_gate_checks.fetch_add(1, std::memory_order_relaxed);
  if (gates.color.defined()) check_range(gates.color, T(0), T(1), true, "color gate");
  if (gates.flow.defined()) check_range(gates.flow, T(0), T(1), true, "flow gate");
  if (!gates.fused.defined()) return;
  if (config.gate_mode == GateMode::fused) {
    const T hi = config.fusion == FusionMode::f1 ? T(2) : T(1);
    check_range(gates.fused, T(0), hi, false, "fused gate");
  } else {
    check_range(gates.fused, T(0), T(1), true, "single gate");
  }
}

std::uint64_t gate_range_checks() { return g_gate_checks.load(); }

void debug::set_frozen_fusion_products(FrozenFusionProducts* hook) { t_frozen_products = hook; }

template <typename T>
FrameOutput<T> frame_forward(Tape<T>& tape, const Tensor<T>& frame, const Tensor<T>& flow, const Tensor<T>& prev_state,
                             const NetworkParams<T>& params, const NetworkConfig& config) {
  if (frame.rank() != 3 || flow.rank() != 3 || frame.dim(0) != flow.dim(0) || frame.dim(1) != flow.dim(1)) {
    throw ShapeError("frame_forward: frame " + shape_str(frame.shape()) + " and flow " + shape_str(flow.shape()) +
                     " must share spatial extents");
  }
  auto color_cube = shared_conv(tape, Stream::color, frame, params);
  auto flow_cube = shared_conv(tape, Stream::flow, flow, params);

  FrameGates<T> gates;
  const bool prev = config.use_prev_state;
  switch (config.gate_mode) {
    case GateMode::fused:
      gates.color = compute_gate(tape, color_cube, prev_state, params.gate_color, prev);
      gates.flow = compute_gate(tape, flow_cube, prev_state, params.gate_flow, prev);
      gates.fused = fuse_gates(tape, gates.color, gates.flow, config.fusion);
      break;
    case GateMode::color_only:
      gates.color = compute_gate(tape, color_cube, prev_state, params.gate_color, prev);
      gates.fused = gates.color;
      break;
    case GateMode::flow_only:
      gates.flow = compute_gate(tape, flow_cube, prev_state, params.gate_flow, prev);
      gates.fused = gates.flow;
      break;
    case GateMode::concat_single:
      gates.fused = compute_gate(tape, ops::concat_channels(tape, color_cube, flow_cube), prev_state,
                                 params.gate_concat, prev);
      break;
    case GateMode::none: break;
  }
  check_gate_ranges(gates, config);

  auto [o, h] = feature_path(tape, color_cube, flow_cube, gates.fused, prev_state, params, config);
  check_finite(o, "RNN output");
  auto feature = config.feature_output == FeatureOutput::output ? o : h;
  return {feature, h, gates};
}

template <typename T>
SequenceOutput<T> sequence_forward(Tape<T>& tape, std::span<const Tensor<T>> frames, std::span<const Tensor<T>> flows,
                                   const NetworkParams<T>& params, const NetworkConfig& config) {
  if (frames.empty()) throw std::invalid_argument("sequence_forward: empty clip");
  if (frames.size() != flows.size()) {
    throw std::invalid_argument("sequence_forward: " + std::to_string(frames.size()) + " frames but " +
                                std::to_string(flows.size()) + " flow fields");
  }
  SequenceOutput<T> result;
  auto state = Tensor<T>::zeros({config.state_dim});
  Tensor<T> sum;
  for (std::size_t t = 0; t < frames.size(); ++t) {
    auto out = frame_forward(tape, frames[t], flows[t], state, params, config);
    sum = t == 0 ? out.feature : ops::add(tape, sum, out.feature);
    state = out.next_state;
    result.gates.push_back(std::move(out.gates));
  }
  result.video_feature = frames.size() == 1 ? sum : ops::scale(tape, sum, T(1) / static_cast<T>(frames.size()));
  return result;
}

#define GCR_INSTANTIATE_NETWORK(T)                                                                                   \
  template struct NetworkParams<T>;                                                                                  \
  template NetworkParams<T> init_params<T>(const NetworkConfig&, std::uint64_t, bool);                              \
  template NetworkParams<T> params_from_named<T>(const NetworkConfig&, const std::vector<NamedTensor<T>>&, bool);   \
  template Tensor<T> shared_conv(Tape<T>&, Stream, const Tensor<T>&, const NetworkParams<T>&);                      \
  template Tensor<T> compute_gate(Tape<T>&, const Tensor<T>&, const Tensor<T>&, const GateParams<T>&, bool);        \
  template Tensor<T> fuse_gates(Tape<T>&, const Tensor<T>&, const Tensor<T>&, FusionMode);                          \
  template std::pair<Tensor<T>, Tensor<T>> feature_path(Tape<T>&, const Tensor<T>&, const Tensor<T>&,               \
                                                        const Tensor<T>&, const Tensor<T>&, const NetworkParams<T>&, \
                                                        const NetworkConfig&);                                       \
  template void check_gate_ranges(const FrameGates<T>&, const NetworkConfig&);                                      \
  template FrameOutput<T> frame_forward(Tape<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,             \
                                        const NetworkParams<T>&, const NetworkConfig&);                              \
  template SequenceOutput<T> sequence_forward(Tape<T>&, std::span<const Tensor<T>>, std::span<const Tensor<T>>,     \
                                              const NetworkParams<T>&, const NetworkConfig&);

GCR_INSTANTIATE_NETWORK(float)
GCR_INSTANTIATE_NETWORK(double)

template NetworkParams<float> cast_params<float, double>(const NetworkConfig&, const NetworkParams<double>&, bool);
template NetworkParams<double> cast_params<double, float>(const NetworkConfig&, const NetworkParams<float>&, bool);
template NetworkParams<float> cast_params<float, float>(const NetworkConfig&, const NetworkParams<float>&, bool);
template NetworkParams<double> cast_params<double, double>(const NetworkConfig&, const NetworkParams<double>&, bool);

}  // namespace gcr

#pragma once

#include "gcr/config_map.hpp"
#include "gcr/tensor.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace gcr {

enum class FusionMode { f1, f2, f3, f4 };
enum class GateMode { fused, color_only, flow_only, concat_single, none };
/// Which RNN quantity is averaged into the video feature: the output o(t)
/// or the state h(t) = tanh(o(t)).
enum class FeatureOutput { output, state };
enum class Stream { color, flow };

std::string to_string(FusionMode mode);
std::string to_string(GateMode mode);
std::string to_string(FeatureOutput mode);
FusionMode parse_fusion_mode(std::string_view text);
GateMode parse_gate_mode(std::string_view text);
FeatureOutput parse_feature_output(std::string_view text);

class InvariantError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct NetworkConfig {
  std::size_t frame_height = 64;
  std::size_t frame_width = 32;
  std::size_t color_channels = 3;
  std::size_t flow_channels = 2;
  std::size_t conv1_out = 12;
  std::size_t conv1_of_out = 12;
  std::size_t gate_hidden = 32;
  std::size_t state_dim = 128;
  std::size_t conv2_out = 24;
  std::size_t conv3_out = 32;
  std::size_t kernel_size = 5;
  FusionMode fusion = FusionMode::f4;
  GateMode gate_mode = GateMode::fused;
  bool use_prev_state = true;
  std::size_t feature_dim = 128;
  FeatureOutput feature_output = FeatureOutput::output;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;

  std::size_t gate_height() const { return (frame_height + 1) / 2; }
  std::size_t gate_width() const { return (frame_width + 1) / 2; }
  /// Length of the flattened conv3 output.
  std::size_t conv3_flat() const;

  ConfigMap to_map() const;
  /// Applies every recognised "net."-less key in `map`; unknown keys are ignored.
  void apply(const ConfigMap& map);
};

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

template <typename T>
struct GateParams {
  Tensor<T> conv1_kernel, conv1_bias;  // conv_gate1
  Tensor<T> fc_weight, fc_bias;        // fc_gate1; undefined without the previous-state path
  Tensor<T> conv2_kernel, conv2_bias;  // conv_gate2
  bool defined() const { return conv1_kernel.defined(); }
};

template <typename T>
struct NetworkParams {
  Tensor<T> conv1_kernel, conv1_bias;
  Tensor<T> conv1_of_kernel, conv1_of_bias;
  GateParams<T> gate_color, gate_flow, gate_concat;
  Tensor<T> conv2_kernel, conv2_bias;
  Tensor<T> conv3_kernel, conv3_bias;
  Tensor<T> rnn_weight, rnn_bias;

  /// Every defined array in a fixed order. Handles share storage with *this.
  std::vector<NamedTensor<T>> named() const;
  /// Deep copy; leaves of the copy require grad iff `requires_grad`.
  NetworkParams clone(bool requires_grad) const;
};

/// Allocates the arrays the configuration needs. Kernels and weights are
/// uniform in +-sqrt(6 / (fan_in + fan_out)), biases zero. Values are drawn in
/// double precision, so both precisions see the same initialization.
template <typename T>
NetworkParams<T> init_params(const NetworkConfig& config, std::uint64_t seed, bool requires_grad = true);

/// Rebuilds a parameter set from named arrays, validating names and shapes.
template <typename T>
NetworkParams<T> params_from_named(const NetworkConfig& config, const std::vector<NamedTensor<T>>& arrays,
                                   bool requires_grad = true);

template <typename To, typename From>
NetworkParams<To> cast_params(const NetworkConfig& config, const NetworkParams<From>& params, bool requires_grad);

template <typename T>
struct FrameGates {
  Tensor<T> color;  // [H/2, W/2, 1]; undefined when the mode has no color gate
  Tensor<T> flow;
  Tensor<T> fused;  // the gate applied to the feature path
};

template <typename T>
struct FrameOutput {
  Tensor<T> feature;     // [feature_dim]
  Tensor<T> next_state;  // [state_dim]
  FrameGates<T> gates;
};

template <typename T>
struct SequenceOutput {
  Tensor<T> video_feature;  // [feature_dim]
  std::vector<FrameGates<T>> gates;
};

/// conv2d_same -> maxpool_2x2 -> tanh with the stream's first layer.
template <typename T>
Tensor<T> shared_conv(Tape<T>& tape, Stream stream, const Tensor<T>& input, const NetworkParams<T>& params);

/// sigmoid(conv_gate2(tanh(conv_gate1(cube) + broadcast(fc_gate1(h_prev))))).
/// The fc_gate1 term is skipped when `use_prev_state` is false.
template <typename T>
Tensor<T> compute_gate(Tape<T>& tape, const Tensor<T>& cube, const Tensor<T>& prev_state, const GateParams<T>& gate,
                       bool use_prev_state);

/// f1 = gc + gof, f2 = max(gc, gof), f3 = gc + gof - gc*gof,
/// f4 = gc + gof - [gc*gof]_const. f3 and f4 share the forward computation
/// 1 - (1-gc)(1-gof), which stays within [0, 1] in floating point; under f4
/// the adjoint passes through to both gates unchanged.
template <typename T>
Tensor<T> fuse_gates(Tape<T>& tape, const Tensor<T>& color_gate, const Tensor<T>& flow_gate, FusionMode mode);

/// Gated cubes -> concat -> conv2 -> conv3 -> flatten -> RNN. An undefined
/// `gate` leaves the cubes ungated. Returns {o(t), h(t)}.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> feature_path(Tape<T>& tape, const Tensor<T>& color_cube, const Tensor<T>& flow_cube,
                                             const Tensor<T>& gate, const Tensor<T>& prev_state,
                                             const NetworkParams<T>& params, const NetworkConfig& config);

template <typename T>
FrameOutput<T> frame_forward(Tape<T>& tape, const Tensor<T>& frame, const Tensor<T>& flow, const Tensor<T>& prev_state,
                             const NetworkParams<T>& params, const NetworkConfig& config);

/// Runs the recurrence from a zero state and averages the per-frame features.
template <typename T>
SequenceOutput<T> sequence_forward(Tape<T>& tape, std::span<const Tensor<T>> frames, std::span<const Tensor<T>> flows,
                                   const NetworkParams<T>& params, const NetworkConfig& config);

/// Throws InvariantError unless every gate value lies in its mode's range:
/// color/flow in (0, 1); fused in [0, 2] for f1 and [0, 1] otherwise.
template <typename T>
void check_gate_ranges(const FrameGates<T>& gates, const NetworkConfig& config);

/// Number of gate-range checks performed so far in this process.
std::uint64_t gate_range_checks();

namespace debug {
/// Test hook for checking f4 against finite differences. The f4 adjoint is the
/// exact gradient of gc + gof - P when the product P is held constant. While
/// installed on the current thread, a capturing hook records gc * gof of each
/// f4 fusion call in order; a replaying hook makes the k-th call since the
/// last rewind compute gc + gof - P_k instead.
struct FrozenFusionProducts {
  bool capturing = true;
  std::vector<std::vector<double>> products;
  std::size_t next = 0;
  void rewind() { next = 0; }
};
void set_frozen_fusion_products(FrozenFusionProducts* hook);
}  // namespace debug

}  // namespace gcr

#pragma once

#include "gcr/tensor.hpp"

// Differentiable operators. Spatial tensors are laid out [height, width, channels].

namespace gcr::ops {

/// "Same" convolution, stride 1, zero padding of (k-1)/2 on every side.
/// kernel: [k, k, Cin, Cout], bias: [Cout].
template <typename T>
Tensor<T> conv2d_same(Tape<T>& tape, const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias);

/// 2x2 max pooling with stride 2. Odd extents keep a partial trailing window,
/// so the output is [ceil(H/2), ceil(W/2), C]. The adjoint goes to the first
/// maximal element of each window in row-major order.
template <typename T>
Tensor<T> maxpool_2x2(Tape<T>& tape, const Tensor<T>& input);

template <typename T>
Tensor<T> tanh_act(Tape<T>& tape, const Tensor<T>& input);

template <typename T>
Tensor<T> sigmoid_act(Tape<T>& tape, const Tensor<T>& input);

/// weight [M, N] times input [N] plus bias [M]. An undefined bias means none.
template <typename T>
Tensor<T> dense(Tape<T>& tape, const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias);

/// cube [H, W, C] + vec [C] at every spatial position.
template <typename T>
Tensor<T> add_broadcast_vector(Tape<T>& tape, const Tensor<T>& cube, const Tensor<T>& vec);

/// gate [H, W, 1] times every channel of cube [H, W, C].
template <typename T>
Tensor<T> mul_broadcast_gate(Tape<T>& tape, const Tensor<T>& gate, const Tensor<T>& cube);

/// Concatenation along the last axis; all leading extents must agree.
template <typename T>
Tensor<T> concat_channels(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);

/// Identity on values, zero adjoint to the input.
template <typename T>
Tensor<T> stop_gradient(Tape<T>& tape, const Tensor<T>& input);

enum class BinaryOp { add, sub, mul, max };

template <typename T>
Tensor<T> elementwise_binary(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b, BinaryOp op);

template <typename T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  return elementwise_binary(tape, a, b, BinaryOp::add);
}
template <typename T>
Tensor<T> sub(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  return elementwise_binary(tape, a, b, BinaryOp::sub);
}
template <typename T>
Tensor<T> mul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  return elementwise_binary(tape, a, b, BinaryOp::mul);
}
/// Ties route the adjoint to `a`.
template <typename T>
Tensor<T> maximum(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  return elementwise_binary(tape, a, b, BinaryOp::max);
}

template <typename T>
Tensor<T> scale(Tape<T>& tape, const Tensor<T>& input, T factor);

/// Scalar (shape [1]) mean of all elements.
template <typename T>
Tensor<T> mean_all(Tape<T>& tape, const Tensor<T>& input);

/// Scalar (shape [1]) sum of all elements.
template <typename T>
Tensor<T> sum_all(Tape<T>& tape, const Tensor<T>& input);

template <typename T>
Tensor<T> reshape(Tape<T>& tape, const Tensor<T>& input, Shape shape);

template <typename T>
Tensor<T> flatten(Tape<T>& tape, const Tensor<T>& input) {
  return reshape(tape, input, Shape{input.numel()});
}

}  // namespace gcr::ops

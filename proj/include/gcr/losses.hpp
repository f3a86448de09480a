#pragma once

#include "gcr/network.hpp"
#include "gcr/tensor.hpp"

#include <cstdint>
#include <span>

namespace gcr {

/// Softmax classifier over training identities; row c scores identity c.
/// There is no bias term.
template <typename T>
struct ClassifierParams {
  Tensor<T> weight;  // [num_identities, feature_dim]

  std::size_t num_identities() const { return weight.dim(0); }
};

template <typename T>
ClassifierParams<T> init_classifier(std::size_t num_identities, std::size_t feature_dim, std::uint64_t seed,
                                    bool requires_grad = true);

/// Scalar values of one pair's objective plus the differentiable total.
template <typename T>
struct LossBreakdown {
  double id_i = 0, id_j = 0, ver = 0, gate_i = 0, gate_j = 0, total = 0;
  Tensor<T> total_tensor;
};

/// -log softmax(W v)[true_id].
template <typename T>
Tensor<T> identification_loss(Tape<T>& tape, const Tensor<T>& feature, std::size_t true_id,
                              const ClassifierParams<T>& cls);

/// same: 0.5 |vi - vj|^2; different: 0.5 max(margin - |vi - vj|, 0)^2.
/// The hinge corner and a zero distance take subgradient 0.
template <typename T>
Tensor<T> verification_loss(Tape<T>& tape, const Tensor<T>& vi, const Tensor<T>& vj, bool same_person, T margin);

/// max(0.5 - mean(g), 0) * (1 - mean(g)), mean over every spatial position.
template <typename T>
Tensor<T> gate_regularizer(Tape<T>& tape, const Tensor<T>& gate);

struct LossOptions {
  double margin = 2.0;
  bool gate_regularizer = true;
};

/// L_id(vi) + L_id(vj) + L_ver(vi, vj) + mean_k L_gate(gi_k) + mean_k L_gate(gj_k).
/// Frames whose gate is undefined (ungated network) contribute 0.
template <typename T>
LossBreakdown<T> total_loss(Tape<T>& tape, const Tensor<T>& vi, const Tensor<T>& vj, std::size_t id_i,
                            std::size_t id_j, std::span<const FrameGates<T>> gates_i,
                            std::span<const FrameGates<T>> gates_j, const ClassifierParams<T>& cls,
                            const LossOptions& options);

/// argmax of W v (first maximum on ties).
template <typename T>
std::size_t predict_identity(const Tensor<T>& feature, const ClassifierParams<T>& cls);

}  // namespace gcr

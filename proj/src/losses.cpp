#include "gcr/losses.hpp"

#include "gcr/ops.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace gcr {
namespace {

// -log softmax(logits)[target], computed through log-sum-exp.
template <typename T>
Tensor<T> softmax_nll(Tape<T>& tape, const Tensor<T>& logits, std::size_t target) {
  const auto n = logits.numel();
  if (target >= n) {
    throw std::out_of_range("identification_loss: identity " + std::to_string(target) + " not in " +
                            std::to_string(n) + " classes");
  }
  auto z = logits.data();
  const T zmax = *std::max_element(z.begin(), z.end());
  T sum = 0;
  for (auto v : z) sum += std::exp(v - zmax);
  const T lse = zmax + std::log(sum);
  auto out = tape.make_output({1}, {&logits});
  out.mutable_data()[0] = lse - z[target];
  tape.record("softmax_nll", out, [target, lse, in = logits.node(), o = out.node()] {
    if (!in->requires_grad) return;
    const T g = o->grad[0];
    for (std::size_t c = 0; c < in->value.size(); ++c) {
      const T p = std::exp(in->value[c] - lse);
      in->grad[c] += g * (p - (c == target ? T(1) : T(0)));
    }
  });
  return out;
}

}  // namespace

template <typename T>
ClassifierParams<T> init_classifier(std::size_t num_identities, std::size_t feature_dim, std::uint64_t seed,
                                    bool requires_grad) {
  if (num_identities == 0 || feature_dim == 0) throw std::invalid_argument("classifier: empty shape");
  std::mt19937_64 rng(seed);
  const double limit = std::sqrt(6.0 / static_cast<double>(num_identities + feature_dim));
  std::uniform_real_distribution<double> dist(-limit, limit);
  std::vector<T> values(num_identities * feature_dim);
  for (auto& v : values) v = static_cast<T>(dist(rng));
  return {Tensor<T>::from({num_identities, feature_dim}, std::move(values), requires_grad)};
}

template <typename T>
Tensor<T> identification_loss(Tape<T>& tape, const Tensor<T>& feature, std::size_t true_id,
                              const ClassifierParams<T>& cls) {
  auto logits = ops::dense(tape, feature, cls.weight, Tensor<T>{});
  return softmax_nll(tape, logits, true_id);
}

template <typename T>
Tensor<T> verification_loss(Tape<T>& tape, const Tensor<T>& vi, const Tensor<T>& vj, bool same_person, T margin) {
  if (vi.shape() != vj.shape()) {
    throw ShapeError("verification_loss: feature shapes differ " + shape_str(vi.shape()) + " vs " + shape_str(vj.shape()));
  }
  if (!(margin > T(0))) throw std::invalid_argument("verification_loss: margin must be positive");
  auto a = vi.data();
  auto b = vj.data();
  T sq = 0;
  for (std::size_t k = 0; k < a.size(); ++k) sq += (a[k] - b[k]) * (a[k] - b[k]);
  const T dist = std::sqrt(sq);
  const T hinge = std::max(margin - dist, T(0));
  auto out = tape.make_output({1}, {&vi, &vj});
  out.mutable_data()[0] = same_person ? T(0.5) * sq : T(0.5) * hinge * hinge;

  // dL/dvi = coef * (vi - vj); dL/dvj = -coef * (vi - vj).
  T coef = 0;
  if (same_person) {
    coef = 1;
  } else if (hinge > T(0) && dist > T(0)) {
    coef = -hinge / dist;
  }
  tape.record("verification_loss", out, [coef, an = vi.node(), bn = vj.node(), o = out.node()] {
    const T g = o->grad[0] * coef;
    if (g == T(0)) return;
    for (std::size_t k = 0; k < an->value.size(); ++k) {
      const T d = g * (an->value[k] - bn->value[k]);
      if (an->requires_grad) an->grad[k] += d;
      if (bn->requires_grad) bn->grad[k] -= d;
    }
  });
  return out;
}

template <typename T>
Tensor<T> gate_regularizer(Tape<T>& tape, const Tensor<T>& gate) {
  if (gate.numel() == 0) throw std::invalid_argument("gate_regularizer: empty gate");
  T sum = 0;
  for (auto v : gate.data()) sum += v;
  const T n = static_cast<T>(gate.numel());
  const T mean = sum / n;
  auto out = tape.make_output({1}, {&gate});
  const bool active = mean < T(0.5);
  out.mutable_data()[0] = active ? (T(0.5) - mean) * (T(1) - mean) : T(0);
  // d/dmean [(0.5 - m)(1 - m)] = 2m - 1.5
  const T dmean = active ? T(2) * mean - T(1.5) : T(0);
  tape.record("gate_regularizer", out, [dmean, n, in = gate.node(), o = out.node()] {
    if (!in->requires_grad || dmean == T(0)) return;
    const T g = o->grad[0] * dmean / n;
    for (auto& d : in->grad) d += g;
  });
  return out;
}

template <typename T>
LossBreakdown<T> total_loss(Tape<T>& tape, const Tensor<T>& vi, const Tensor<T>& vj, std::size_t id_i,
                            std::size_t id_j, std::span<const FrameGates<T>> gates_i,
                            std::span<const FrameGates<T>> gates_j, const ClassifierParams<T>& cls,
                            const LossOptions& options) {
  if (gates_i.empty() || gates_j.empty()) throw std::invalid_argument("total_loss: empty gate list");
  LossBreakdown<T> out;
  auto lid_i = identification_loss(tape, vi, id_i, cls);
  auto lid_j = identification_loss(tape, vj, id_j, cls);
  auto lver = verification_loss(tape, vi, vj, id_i == id_j, static_cast<T>(options.margin));
  out.id_i = lid_i.item();
  out.id_j = lid_j.item();
  out.ver = lver.item();
  auto total = ops::add(tape, ops::add(tape, lid_i, lid_j), lver);

  auto gate_term = [&](std::span<const FrameGates<T>> gates, double& value) {
    if (!options.gate_regularizer) return;
    Tensor<T> sum;
    for (const auto& g : gates) {
      if (!g.fused.defined()) continue;
      auto r = gate_regularizer(tape, g.fused);
      sum = sum.defined() ? ops::add(tape, sum, r) : r;
    }
    if (!sum.defined()) return;
    auto term = ops::scale(tape, sum, T(1) / static_cast<T>(gates.size()));
    value = term.item();
    total = ops::add(tape, total, term);
  };
  gate_term(gates_i, out.gate_i);
  gate_term(gates_j, out.gate_j);
  out.total = total.item();
  out.total_tensor = total;
  return out;
}

template <typename T>
std::size_t predict_identity(const Tensor<T>& feature, const ClassifierParams<T>& cls) {
  Tape<T> tape(false);
  auto logits = ops::dense(tape, feature, cls.weight, Tensor<T>{});
  auto z = logits.data();
  return static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin());
}

#define GCR_INSTANTIATE_LOSSES(T)                                                                                   \
  template ClassifierParams<T> init_classifier<T>(std::size_t, std::size_t, std::uint64_t, bool);                  \
  template Tensor<T> identification_loss(Tape<T>&, const Tensor<T>&, std::size_t, const ClassifierParams<T>&);     \
  template Tensor<T> verification_loss(Tape<T>&, const Tensor<T>&, const Tensor<T>&, bool, T);                     \
  template Tensor<T> gate_regularizer(Tape<T>&, const Tensor<T>&);                                                 \
  template LossBreakdown<T> total_loss(Tape<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t, std::size_t,     \
                                       std::span<const FrameGates<T>>, std::span<const FrameGates<T>>,             \
                                       const ClassifierParams<T>&, const LossOptions&);                            \
  template std::size_t predict_identity(const Tensor<T>&, const ClassifierParams<T>&);

GCR_INSTANTIATE_LOSSES(float)
GCR_INSTANTIATE_LOSSES(double)

}  // namespace gcr

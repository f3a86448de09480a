#include "gcr/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>

namespace gcr::ops {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;
template <typename T>
using MapVec = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;
template <typename T>
using ConstMapVec = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;

template <typename T>
T fault_factor(std::string_view op) {
  return debug::adjoint_corrupted(op) ? T(1.01) : T(1);
}

void require(bool ok, const std::string& message) {
  if (!ok) throw ShapeError(message);
}

void require_rank(const Shape& s, std::size_t rank, const char* op, const char* what) {
  require(s.size() == rank, std::string(op) + ": " + what + " must have rank " + std::to_string(rank) +
                                ", got " + shape_str(s));
}

struct ConvGeometry {
  std::size_t h, w, cin, cout, k, pad;
  std::size_t rows() const { return h * w; }
  std::size_t cols() const { return k * k * cin; }
};

// patches[(y*w + x), ((ky*k + kx)*cin + c)] = input[y+ky-pad, x+kx-pad, c], zero outside.
template <typename T>
void im2col(const ConvGeometry& g, std::span<const T> in, AlignedVector<T>& patches) {
  patches.assign(g.rows() * g.cols(), T(0));
  const auto ih = static_cast<std::ptrdiff_t>(g.h);
  const auto iw = static_cast<std::ptrdiff_t>(g.w);
  const auto pad = static_cast<std::ptrdiff_t>(g.pad);
  for (std::ptrdiff_t y = 0; y < ih; ++y) {
    for (std::ptrdiff_t x = 0; x < iw; ++x) {
      T* row = patches.data() + (static_cast<std::size_t>(y) * g.w + static_cast<std::size_t>(x)) * g.cols();
      for (std::size_t ky = 0; ky < g.k; ++ky) {
        const auto sy = y + static_cast<std::ptrdiff_t>(ky) - pad;
        if (sy < 0 || sy >= ih) continue;
        for (std::size_t kx = 0; kx < g.k; ++kx) {
          const auto sx = x + static_cast<std::ptrdiff_t>(kx) - pad;
          if (sx < 0 || sx >= iw) continue;
          const T* src = in.data() + (static_cast<std::size_t>(sy) * g.w + static_cast<std::size_t>(sx)) * g.cin;
          std::copy(src, src + g.cin, row + (ky * g.k + kx) * g.cin);
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const ConvGeometry& g, const AlignedVector<T>& patches, std::span<T> out) {
  const auto ih = static_cast<std::ptrdiff_t>(g.h);
  const auto iw = static_cast<std::ptrdiff_t>(g.w);
  const auto pad = static_cast<std::ptrdiff_t>(g.pad);
  for (std::ptrdiff_t y = 0; y < ih; ++y) {
    for (std::ptrdiff_t x = 0; x < iw; ++x) {
      const T* row = patches.data() + (static_cast<std::size_t>(y) * g.w + static_cast<std::size_t>(x)) * g.cols();
      for (std::size_t ky = 0; ky < g.k; ++ky) {
        const auto sy = y + static_cast<std::ptrdiff_t>(ky) - pad;
        if (sy < 0 || sy >= ih) continue;
        for (std::size_t kx = 0; kx < g.k; ++kx) {
          const auto sx = x + static_cast<std::ptrdiff_t>(kx) - pad;
          if (sx < 0 || sx >= iw) continue;
          T* dst = out.data() + (static_cast<std::size_t>(sy) * g.w + static_cast<std::size_t>(sx)) * g.cin;
          const T* src = row + (ky * g.k + kx) * g.cin;
          for (std::size_t c = 0; c < g.cin; ++c) dst[c] += src[c];
        }
      }
    }
  }
}

template <typename T, typename Fwd, typename Deriv>
Tensor<T> unary(Tape<T>& tape, const Tensor<T>& input, std::string_view name, Fwd fwd, Deriv deriv_from_output) {
  auto out = tape.make_output(input.shape(), {&input});
  {
    auto src = input.data();
    auto dst = out.mutable_data();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = fwd(src[i]);
  }
  tape.record(name, out, [in = input.node(), o = out.node(), name, deriv_from_output] {
    if (!in->requires_grad) return;
    const T f = fault_factor<T>(name);
    for (std::size_t i = 0; i < o->value.size(); ++i) in->grad[i] += f * o->grad[i] * deriv_from_output(o->value[i]);
  });
  return out;
}

}  // namespace

template <typename T>
Tensor<T> conv2d_same(Tape<T>& tape, const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias) {
  require(input.defined() && kernel.defined() && bias.defined(), "conv2d_same: undefined operand");
  require_rank(input.shape(), 3, "conv2d_same", "input");
  require_rank(kernel.shape(), 4, "conv2d_same", "kernel");
  require_rank(bias.shape(), 1, "conv2d_same", "bias");
  const auto& ks = kernel.shape();
  require(ks[0] == ks[1] && ks[0] % 2 == 1, "conv2d_same: kernel must be square with odd extent, got " + shape_str(ks));
  require(ks[2] == input.dim(2), "conv2d_same: input has " + std::to_string(input.dim(2)) +
                                     " channels but kernel expects " + std::to_string(ks[2]));
  require(bias.dim(0) == ks[3], "conv2d_same: bias length " + std::to_string(bias.dim(0)) +
                                    " does not match " + std::to_string(ks[3]) + " output channels");
  require(input.dim(0) >= 1 && input.dim(1) >= 1, "conv2d_same: empty spatial extent");

  const ConvGeometry g{input.dim(0), input.dim(1), ks[2], ks[3], ks[0], (ks[0] - 1) / 2};
  auto out = tape.make_output({g.h, g.w, g.cout}, {&input, &kernel, &bias});

  auto patches = std::make_shared<AlignedVector<T>>();
  im2col(g, input.data(), *patches);
  {
    ConstMapMat<T> p(patches->data(), g.rows(), g.cols());
    ConstMapMat<T> k(kernel.data().data(), g.cols(), g.cout);
    MapMat<T> o(out.mutable_data().data(), g.rows(), g.cout);
    o.noalias() = p * k;
    ConstMapVec<T> b(bias.data().data(), g.cout);
    o.rowwise() += b.transpose();
  }

  tape.record("conv2d_same", out, [g, patches, x = input.node(), kn = kernel.node(), bn = bias.node(), o = out.node()] {
    const T f = fault_factor<T>("conv2d_same");
    ConstMapMat<T> dout(o->grad.data(), g.rows(), g.cout);
    if (kn->requires_grad) {
      ConstMapMat<T> p(patches->data(), g.rows(), g.cols());
      MapMat<T> dk(kn->grad.data(), g.cols(), g.cout);
      dk.noalias() += f * (p.transpose() * dout);
    }
    if (bn->requires_grad) {
      MapVec<T> db(bn->grad.data(), g.cout);
      db += f * dout.colwise().sum().transpose();
    }
    if (x->requires_grad) {
      AlignedVector<T> dp(g.rows() * g.cols());
      MapMat<T> dpm(dp.data(), g.rows(), g.cols());
      ConstMapMat<T> k(kn->value.data(), g.cols(), g.cout);
      dpm.noalias() = f * (dout * k.transpose());
      col2im_add(g, dp, std::span<T>(x->grad));
    }
  });
  return out;
}

template <typename T>
Tensor<T> maxpool_2x2(Tape<T>& tape, const Tensor<T>& input) {
  require_rank(input.shape(), 3, "maxpool_2x2", "input");
  const auto h = input.dim(0), w = input.dim(1), c = input.dim(2);
  require(h >= 1 && w >= 1, "maxpool_2x2: empty spatial extent");
  const auto oh = (h + 1) / 2, ow = (w + 1) / 2;
  auto out = tape.make_output({oh, ow, c}, {&input});
  auto argmax = std::make_shared<std::vector<std::size_t>>(oh * ow * c);
  auto src = input.data();
  auto dst = out.mutable_data();
  for (std::size_t oy = 0; oy < oh; ++oy) {
    for (std::size_t ox = 0; ox < ow; ++ox) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        std::size_t best = (2 * oy * w + 2 * ox) * c + ch;
        for (std::size_t y = 2 * oy; y < std::min(2 * oy + 2, h); ++y) {
          for (std::size_t x = 2 * ox; x < std::min(2 * ox + 2, w); ++x) {
            const auto idx = (y * w + x) * c + ch;
            if (src[idx] > src[best]) best = idx;
          }
        }
        const auto o = (oy * ow + ox) * c + ch;
        dst[o] = src[best];
        (*argmax)[o] = best;
      }
    }
  }
  tape.record("maxpool_2x2", out, [argmax, in = input.node(), o = out.node()] {
    if (!in->requires_grad) return;
    const T f = fault_factor<T>("maxpool_2x2");
    for (std::size_t i = 0; i < argmax->size(); ++i) in->grad[(*argmax)[i]] += f * o->grad[i];
  });
  return out;
}

template <typename T>
Tensor<T> tanh_act(Tape<T>& tape, const Tensor<T>& input) {
  return unary(
      tape, input, "tanh", [](T v) { return std::tanh(v); }, [](T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> sigmoid_act(Tape<T>& tape, const Tensor<T>& input) {
  return unary(
      tape, input, "sigmoid",
      [](T v) {
        if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> dense(Tape<T>& tape, const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias) {
  require_rank(input.shape(), 1, "dense", "input");
  require_rank(weight.shape(), 2, "dense", "weight");
  const auto m = weight.dim(0), n = weight.dim(1);
  require(input.dim(0) == n, "dense: weight " + shape_str(weight.shape()) + " cannot multiply input " +
                                 shape_str(input.shape()));
  const bool has_bias = bias.defined();
  if (has_bias) {
    require(bias.shape() == Shape{m}, "dense: bias " + shape_str(bias.shape()) + " does not match " +
                                          std::to_string(m) + " outputs");
  }
  auto out = has_bias ? tape.make_output({m}, {&input, &weight, &bias}) : tape.make_output({m}, {&input, &weight});
  {
    ConstMapMat<T> wm(weight.data().data(), m, n);
    ConstMapVec<T> x(input.data().data(), n);
    MapVec<T> o(out.mutable_data().data(), m);
    o.noalias() = wm * x;
    if (has_bias) o += ConstMapVec<T>(bias.data().data(), m);
  }
  auto bn = has_bias ? bias.node() : nullptr;
  tape.record("dense", out, [m, n, x = input.node(), wn = weight.node(), bn, o = out.node()] {
    const T f = fault_factor<T>("dense");
    ConstMapVec<T> dout(o->grad.data(), m);
    if (wn->requires_grad) {
      MapMat<T> dw(wn->grad.data(), m, n);
      dw.noalias() += f * (dout * ConstMapVec<T>(x->value.data(), n).transpose());
    }
    if (bn && bn->requires_grad) MapVec<T>(bn->grad.data(), m) += f * dout;
    if (x->requires_grad) {
      MapVec<T>(x->grad.data(), n).noalias() += f * (ConstMapMat<T>(wn->value.data(), m, n).transpose() * dout);
    }
  });
  return out;
}

template <typename T>
Tensor<T> add_broadcast_vector(Tape<T>& tape, const Tensor<T>& cube, const Tensor<T>& vec) {
  require_rank(cube.shape(), 3, "add_broadcast_vector", "cube");
  require_rank(vec.shape(), 1, "add_broadcast_vector", "vec");
  const auto c = cube.dim(2);
  require(vec.dim(0) == c, "add_broadcast_vector: vector length " + std::to_string(vec.dim(0)) +
                               " does not match " + std::to_string(c) + " channels");
  const auto positions = cube.dim(0) * cube.dim(1);
  auto out = tape.make_output(cube.shape(), {&cube, &vec});
  auto src = cube.data();
  auto v = vec.data();
  auto dst = out.mutable_data();
  for (std::size_t p = 0; p < positions; ++p)
    for (std::size_t ch = 0; ch < c; ++ch) dst[p * c + ch] = src[p * c + ch] + v[ch];
  tape.record("add_broadcast_vector", out, [positions, c, cn = cube.node(), vn = vec.node(), o = out.node()] {
    const T f = fault_factor<T>("add_broadcast_vector");
    if (cn->requires_grad)
      for (std::size_t i = 0; i < o->grad.size(); ++i) cn->grad[i] += f * o->grad[i];
    if (vn->requires_grad)
      for (std::size_t p = 0; p < positions; ++p)
        for (std::size_t ch = 0; ch < c; ++ch) vn->grad[ch] += f * o->grad[p * c + ch];
  });
  return out;
}

template <typename T>
Tensor<T> mul_broadcast_gate(Tape<T>& tape, const Tensor<T>& gate, const Tensor<T>& cube) {
  require_rank(gate.shape(), 3, "mul_broadcast_gate", "gate");
  require_rank(cube.shape(), 3, "mul_broadcast_gate", "cube");
  require(gate.dim(2) == 1, "mul_broadcast_gate: gate must have one channel, got " + shape_str(gate.shape()));
  require(gate.dim(0) == cube.dim(0) && gate.dim(1) == cube.dim(1),
          "mul_broadcast_gate: gate " + shape_str(gate.shape()) + " and cube " + shape_str(cube.shape()) +
              " differ spatially");
  const auto c = cube.dim(2);
  const auto positions = cube.dim(0) * cube.dim(1);
  auto out = tape.make_output(cube.shape(), {&gate, &cube});
  auto g = gate.data();
  auto src = cube.data();
  auto dst = out.mutable_data();
  for (std::size_t p = 0; p < positions; ++p)
    for (std::size_t ch = 0; ch < c; ++ch) dst[p * c + ch] = g[p] * src[p * c + ch];
  tape.record("mul_broadcast_gate", out, [positions, c, gn = gate.node(), cn = cube.node(), o = out.node()] {
    const T f = fault_factor<T>("mul_broadcast_gate");
    for (std::size_t p = 0; p < positions; ++p) {
      T acc = 0;
      for (std::size_t ch = 0; ch < c; ++ch) {
        const auto i = p * c + ch;
        acc += o->grad[i] * cn->value[i];
        if (cn->requires_grad) cn->grad[i] += f * o->grad[i] * gn->value[p];
      }
      if (gn->requires_grad) gn->grad[p] += f * acc;
    }
  });
  return out;
}

template <typename T>
Tensor<T> concat_channels(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  require(a.rank() == b.rank() && a.rank() >= 1, "concat_channels: rank mismatch " + shape_str(a.shape()) + " vs " +
                                                      shape_str(b.shape()));
  for (std::size_t i = 0; i + 1 < a.rank(); ++i) {
    require(a.dim(i) == b.dim(i),
            "concat_channels: leading extents differ " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const auto ca = a.shape().back(), cb = b.shape().back();
  const auto rows = ca + cb == 0 ? std::size_t{0} : (a.numel() + b.numel()) / (ca + cb);
  Shape shape = a.shape();
  shape.back() = ca + cb;
  auto out = tape.make_output(shape, {&a, &b});
  auto dst = out.mutable_data();
  auto sa = a.data();
  auto sb = b.data();
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(sa.data() + r * ca, ca, dst.data() + r * (ca + cb));
    std::copy_n(sb.data() + r * cb, cb, dst.data() + r * (ca + cb) + ca);
  }
  tape.record("concat", out, [rows, ca, cb, an = a.node(), bn = b.node(), o = out.node()] {
    const T f = fault_factor<T>("concat");
    for (std::size_t r = 0; r < rows; ++r) {
      if (an->requires_grad)
        for (std::size_t i = 0; i < ca; ++i) an->grad[r * ca + i] += f * o->grad[r * (ca + cb) + i];
      if (bn->requires_grad)
        for (std::size_t i = 0; i < cb; ++i) bn->grad[r * cb + i] += f * o->grad[r * (ca + cb) + ca + i];
    }
  });
  return out;
}

template <typename T>
Tensor<T> stop_gradient(Tape<T>&, const Tensor<T>& input) {
  return Tensor<T>::from(input.shape(), std::vector<T>(input.data().begin(), input.data().end()), false);
}

template <typename T>
Tensor<T> elementwise_binary(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b, BinaryOp op) {
  require(a.shape() == b.shape(), "elementwise_binary: shape mismatch " + shape_str(a.shape()) + " vs " +
                                      shape_str(b.shape()));
  auto out = tape.make_output(a.shape(), {&a, &b});
  auto sa = a.data();
  auto sb = b.data();
  auto dst = out.mutable_data();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    switch (op) {
      case BinaryOp::add: dst[i] = sa[i] + sb[i]; break;
      case BinaryOp::sub: dst[i] = sa[i] - sb[i]; break;
      case BinaryOp::mul: dst[i] = sa[i] * sb[i]; break;
      case BinaryOp::max: dst[i] = sa[i] >= sb[i] ? sa[i] : sb[i]; break;
    }
  }
  static constexpr std::string_view names[] = {"add", "sub", "mul", "max"};
  const auto name = names[static_cast<int>(op)];
  tape.record(name, out, [op, name, an = a.node(), bn = b.node(), o = out.node()] {
    const T f = fault_factor<T>(name);
    for (std::size_t i = 0; i < o->grad.size(); ++i) {
      const T g = f * o->grad[i];
      T da = 0, db = 0;
      switch (op) {
        case BinaryOp::add: da = g; db = g; break;
        case BinaryOp::sub: da = g; db = -g; break;
        case BinaryOp::mul: da = g * bn->value[i]; db = g * an->value[i]; break;
        case BinaryOp::max: (an->value[i] >= bn->value[i] ? da : db) = g; break;
      }
      if (an->requires_grad) an->grad[i] += da;
      if (bn->requires_grad) bn->grad[i] += db;
    }
  });
  return out;
}

template <typename T>
Tensor<T> scale(Tape<T>& tape, const Tensor<T>& input, T factor) {
  auto out = tape.make_output(input.shape(), {&input});
  auto src = input.data();
  auto dst = out.mutable_data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = factor * src[i];
  tape.record("scale", out, [factor, in = input.node(), o = out.node()] {
    if (!in->requires_grad) return;
    const T f = fault_factor<T>("scale");
    for (std::size_t i = 0; i < o->grad.size(); ++i) in->grad[i] += f * factor * o->grad[i];
  });
  return out;
}

template <typename T>
Tensor<T> sum_all(Tape<T>& tape, const Tensor<T>& input) {
  auto out = tape.make_output({1}, {&input});
  T acc = 0;
  for (auto v : input.data()) acc += v;
  out.mutable_data()[0] = acc;
  tape.record("sum_all", out, [in = input.node(), o = out.node()] {
    if (!in->requires_grad) return;
    const T g = fault_factor<T>("sum_all") * o->grad[0];
    for (auto& d : in->grad) d += g;
  });
  return out;
}

template <typename T>
Tensor<T> mean_all(Tape<T>& tape, const Tensor<T>& input) {
  require(input.numel() > 0, "mean_all: empty tensor");
  auto out = tape.make_output({1}, {&input});
  T acc = 0;
  for (auto v : input.data()) acc += v;
  const T n = static_cast<T>(input.numel());
  out.mutable_data()[0] = acc / n;
  tape.record("mean_all", out, [n, in = input.node(), o = out.node()] {
    if (!in->requires_grad) return;
    const T g = fault_factor<T>("mean_all") * o->grad[0] / n;
    for (auto& d : in->grad) d += g;
  });
  return out;
}

template <typename T>
Tensor<T> reshape(Tape<T>& tape, const Tensor<T>& input, Shape shape) {
  require(shape_numel(shape) == input.numel(), "reshape: cannot view " + shape_str(input.shape()) + " as " +
                                                   shape_str(shape));
  auto out = tape.make_output(std::move(shape), {&input});
  std::copy(input.data().begin(), input.data().end(), out.mutable_data().begin());
  tape.record("reshape", out, [in = input.node(), o = out.node()] {
    if (!in->requires_grad) return;
    const T f = fault_factor<T>("reshape");
    for (std::size_t i = 0; i < o->grad.size(); ++i) in->grad[i] += f * o->grad[i];
  });
  return out;
}

#define GCR_INSTANTIATE_OPS(T)                                                                            \
  template Tensor<T> conv2d_same(Tape<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);         \
  template Tensor<T> maxpool_2x2(Tape<T>&, const Tensor<T>&);                                             \
  template Tensor<T> tanh_act(Tape<T>&, const Tensor<T>&);                                                \
  template Tensor<T> sigmoid_act(Tape<T>&, const Tensor<T>&);                                             \
  template Tensor<T> dense(Tape<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);               \
  template Tensor<T> add_broadcast_vector(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                  \
  template Tensor<T> mul_broadcast_gate(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                    \
  template Tensor<T> concat_channels(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                       \
  template Tensor<T> stop_gradient(Tape<T>&, const Tensor<T>&);                                           \
  template Tensor<T> elementwise_binary(Tape<T>&, const Tensor<T>&, const Tensor<T>&, BinaryOp);          \
  template Tensor<T> scale(Tape<T>&, const Tensor<T>&, T);                                                \
  template Tensor<T> sum_all(Tape<T>&, const Tensor<T>&);                                                 \
  template Tensor<T> mean_all(Tape<T>&, const Tensor<T>&);                                                \
  template Tensor<T> reshape(Tape<T>&, const Tensor<T>&, Shape);

GCR_INSTANTIATE_OPS(float)
GCR_INSTANTIATE_OPS(double)

}  // namespace gcr::ops

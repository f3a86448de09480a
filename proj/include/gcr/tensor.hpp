#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace gcr {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Buffers aligned to Eigen's widest packet. Vectorized reductions then split
/// their work the same way for every allocation, which keeps results
/// bit-reproducible across runs and threads.
template <typename T>
using AlignedVector = std::vector<T, Eigen::aligned_allocator<T>>;

template <typename T>
struct TensorNode {
  Shape shape;
  AlignedVector<T> value;
  AlignedVector<T> grad;  // same length as value when requires_grad, else empty
  bool requires_grad = false;
};

/// Dense row-major array. Copies share storage; use clone() for a deep copy.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }

  std::span<const T> data() const { return node_->value; }
  std::span<T> mutable_data() { return node_->value; }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->grad; }

  T item() const;
  T operator[](std::size_t i) const { return node_->value[i]; }

  void zero_grad();
  /// Deep copy of values; the copy is a fresh leaf.
  Tensor clone(bool requires_grad = false) const;

  const std::shared_ptr<TensorNode<T>>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<TensorNode<T>> node) : node_(std::move(node)) {}
  std::shared_ptr<TensorNode<T>> node_;

  template <typename U>
  friend class Tape;
};

/// Ordered record of executed differentiable operations.
///
/// A tape belongs to one thread. When constructed with recording disabled,
/// operations still compute values but nothing is kept for the backward pass.
template <typename T>
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }
  std::size_t size() const { return records_.size(); }

  /// Allocates an op output. It requires grad iff recording and any input does.
  Tensor<T> make_output(Shape shape, std::initializer_list<const Tensor<T>*> inputs);
  Tensor<T> make_output(Shape shape, std::span<const Tensor<T>> inputs);

  /// Registers the adjoint routine of an op whose output is `out`. Skipped
  /// when `out` does not require grad.
  void record(std::string_view op, const Tensor<T>& out, std::function<void()> backward);

  /// Seeds d(loss)/d(loss) = 1 and replays records in reverse execution order.
  void backward(const Tensor<T>& loss);

  /// Op names in execution order, for diagnostics.
  std::vector<std::string> op_names() const;

 private:
  struct Record {
    std::string op;
    std::function<void()> backward;
  };
  bool recording_;
  std::vector<Record> records_;
};

namespace debug {
/// Test hook: while set, the backward routine of the named op scales its
/// adjoint contributions by (1 + 1e-2). Empty string disables it.
void set_corrupted_adjoint(std::string op);
bool adjoint_corrupted(std::string_view op);
}  // namespace debug

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace gcr

#include "gcr/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace gcr {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return from(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::from(Shape shape, std::vector<T> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("tensor: shape " + shape_str(shape) + " holds " +
                     std::to_string(shape_numel(shape)) + " elements, got " +
                     std::to_string(values.size()));
  }
  auto node = std::make_shared<TensorNode<T>>();
  node->shape = std::move(shape);
  node->value.assign(values.begin(), values.end());
  node->requires_grad = requires_grad;
  if (requires_grad) node->grad.assign(node->value.size(), T(0));
  return Tensor(std::move(node));
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ShapeError("item: tensor of shape " + shape_str(shape()) + " is not a scalar");
  return node_->value[0];
}

template <typename T>
void Tensor<T>::zero_grad() {
  std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::clone(bool requires_grad) const {
  return from(node_->shape, std::vector<T>(node_->value.begin(), node_->value.end()), requires_grad);
}

template <typename T>
Tensor<T> Tape<T>::make_output(Shape shape, std::initializer_list<const Tensor<T>*> inputs) {
  bool needs = false;
  if (recording_) {
    for (const auto* in : inputs) needs = needs || in->requires_grad();
  }
  return Tensor<T>::zeros(std::move(shape), needs);
}

template <typename T>
Tensor<T> Tape<T>::make_output(Shape shape, std::span<const Tensor<T>> inputs) {
  bool needs = false;
  if (recording_) {
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  }
  return Tensor<T>::zeros(std::move(shape), needs);
}

template <typename T>
void Tape<T>::record(std::string_view op, const Tensor<T>& out, std::function<void()> backward) {
  if (!recording_ || !out.requires_grad()) return;
  records_.push_back({std::string(op), std::move(backward)});
}

template <typename T>
void Tape<T>::backward(const Tensor<T>& loss) {
  if (loss.numel() != 1) throw ShapeError("backward: loss must be a scalar, got " + shape_str(loss.shape()));
  if (!loss.requires_grad()) return;
  loss.node()->grad[0] += T(1);
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) it->backward();
}

template <typename T>
std::vector<std::string> Tape<T>::op_names() const {
  std::vector<std::string> names;
  names.reserve(records_.size());
  for (const auto& r : records_) names.push_back(r.op);
  return names;
}

namespace debug {
namespace {
std::string& corrupted_op() {
  static std::string op;
  return op;
}
}  // namespace

void set_corrupted_adjoint(std::string op) { corrupted_op() = std::move(op); }

bool adjoint_corrupted(std::string_view op) {
  const auto& c = corrupted_op();
  return !c.empty() && c == op;
}
}  // namespace debug

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;

}  // namespace gcr

#include "fmpi/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace fmpi {

Index shape_numel(const Shape& shape) {
  Index n = 1;
  for (Index extent : shape) {
    if (extent < 0) fail(ErrorCode::kDimension, "negative extent in shape " + shape_str(shape));
    n *= extent;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "," : "") << shape[i];
  out << ']';
  return out.str();
}

namespace detail {

template <typename T>
struct Access {
  static const NodePtr<T>& node(const Tensor<T>& t) { return t.node_; }
};

}  // namespace detail

// ---------------------------------------------------------------------------
// Tensor

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values) {
  if (shape_numel(shape) != static_cast<Index>(values.size())) {
    fail(ErrorCode::kDimension, "shape " + shape_str(shape) + " does not hold " +
                                    std::to_string(values.size()) + " values");
  }
  node_ = std::make_shared<detail::Node<T>>();
  node_->shape = std::move(shape);
  node_->data = std::move(values);
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape) {
  return full(std::move(shape), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value) {
  const Index n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<T>(static_cast<std::size_t>(n), value));
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value) {
  return Tensor(Shape{}, std::vector<T>{value});
}

template <typename T>
const detail::Node<T>& Tensor<T>::node() const {
  if (!node_) fail(ErrorCode::kInvalidArgument, "use of an undefined tensor");
  return *node_;
}

template <typename T>
const Shape& Tensor<T>::shape() const {
  return node().shape;
}

template <typename T>
Index Tensor<T>::rank() const {
  return static_cast<Index>(node().shape.size());
}

template <typename T>
Index Tensor<T>::dim(Index axis) const {
  const Index r = rank();
  const Index a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    fail(ErrorCode::kDimension, "axis " + std::to_string(axis) + " out of range for shape " +
                                    shape_str(shape()));
  }
  return node().shape[static_cast<std::size_t>(a)];
}

template <typename T>
Index Tensor<T>::numel() const {
  return static_cast<Index>(node().data.size());
}

template <typename T>
std::span<const T> Tensor<T>::data() const {
  return node().data;
}

template <typename T>
std::span<T> Tensor<T>::mutable_data() {
  node();
  if (node_->tape != nullptr) {
    fail(ErrorCode::kInvalidArgument, "cannot mutate a tensor recorded on a gradient tape");
  }
  return node_->data;
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) {
    fail(ErrorCode::kDimension, "item() on tensor of shape " + shape_str(shape()));
  }
  return node().data.front();
}

template <typename T>
T Tensor<T>::at(std::initializer_list<Index> index) const {
  const Shape& s = shape();
  if (index.size() != s.size()) fail(ErrorCode::kDimension, "index rank mismatch");
  Index flat = 0;
  std::size_t axis = 0;
  for (Index i : index) {
    if (i < 0 || i >= s[axis]) fail(ErrorCode::kDimension, "index out of range");
    flat = flat * s[axis] + i;
    ++axis;
  }
  return node().data[static_cast<std::size_t>(flat)];
}

template <typename T>
bool Tensor<T>::requires_grad() const {
  return node().requires_grad;
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool on) {
  node();
  if (node_->tape != nullptr) {
    fail(ErrorCode::kInvalidArgument, "requires_grad can only be set on leaf tensors");
  }
  node_->requires_grad = on;
  return *this;
}

template <typename T>
bool Tensor<T>::has_grad() const {
  return !node().grad.empty();
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
  return node().grad;
}

template <typename T>
void Tensor<T>::zero_grad() {
  node();
  node_->grad.clear();
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor(shape(), node().data);
}

// ---------------------------------------------------------------------------
// GradTape

namespace {

template <typename T>
GradTape<T>*& active_slot() {
  thread_local GradTape<T>* slot = nullptr;
  return slot;
}

}  // namespace

template <typename T>
GradTape<T>::~GradTape() {
  clear();
}

template <typename T>
GradTape<T>* GradTape<T>::active() {
  return active_slot<T>();
}

template <typename T>
GradTape<T>::Scope::Scope(GradTape& tape) : previous_(active_slot<T>()) {
  active_slot<T>() = &tape;
}

template <typename T>
GradTape<T>::Scope::~Scope() {
  active_slot<T>() = previous_;
}

template <typename T>
void GradTape<T>::record(const detail::NodePtr<T>& output, BackwardFn<T> backward) {
  output->requires_grad = true;
  output->tape = this;
  output->tape_index = entries_.size();
  entries_.push_back(Entry{output, std::move(backward)});
}

template <typename T>
void GradTape<T>::clear() {
  for (Entry& e : entries_) e.output->tape = nullptr;
  entries_.clear();
}

template <typename T>
void GradTape<T>::backward(const Tensor<T>& loss) {
  const auto& node = detail::Access<T>::node(loss);
  if (!node) fail(ErrorCode::kInvalidArgument, "backward on undefined tensor");
  if (node->data.size() != 1) {
    fail(ErrorCode::kDimension, "backward requires a scalar loss, got shape " + shape_str(node->shape));
  }
  if (node->tape != this) {
    fail(ErrorCode::kInvalidArgument, "loss was not recorded on this tape");
  }
  node->grad.assign(1, T(1));
  for (std::size_t i = node->tape_index + 1; i-- > 0;) {
    Entry& e = entries_[i];
    if (e.output->grad.empty()) continue;
    e.backward(std::span<const T>(e.output->grad));
  }
}

template <typename T>
void backward(const Tensor<T>& loss) {
  const auto& node = detail::Access<T>::node(loss);
  if (!node) fail(ErrorCode::kInvalidArgument, "backward on undefined tensor");
  if (node->tape != nullptr) {
    node->tape->backward(loss);
    return;
  }
  if (node->data.size() != 1) {
    fail(ErrorCode::kDimension, "backward requires a scalar loss, got shape " + shape_str(node->shape));
  }
  if (!node->requires_grad) {
    fail(ErrorCode::kInvalidArgument, "loss is neither on a tape nor a gradient leaf");
  }
  node->grad.assign(1, T(1));
}

template <typename T>
bool is_recording(std::span<const Tensor<T>> inputs) {
  if (GradTape<T>::active() == nullptr) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor<T>& t) { return t.requires_grad(); });
}

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> values, std::span<const Tensor<T>> inputs,
                      BackwardFn<T> backward) {
  Tensor<T> out(std::move(shape), std::move(values));
  if (is_recording(inputs)) {
    GradTape<T>::active()->record(detail::Access<T>::node(out), std::move(backward));
  }
  return out;
}

template <typename T>
std::span<T> grad_sink(const Tensor<T>& input) {
  const auto& node = detail::Access<T>::node(input);
  if (!node->requires_grad) return {};
  if (node->grad.empty()) node->grad.assign(node->data.size(), T(0));
  return node->grad;
}

template class Tensor<float>;
template class Tensor<double>;
template class GradTape<float>;
template class GradTape<double>;

#define FMPI_INSTANTIATE(T)                                                                  \
  template void backward<T>(const Tensor<T>&);                                               \
  template bool is_recording<T>(std::span<const Tensor<T>>);                                 \
  template Tensor<T> make_result<T>(Shape, std::vector<T>, std::span<const Tensor<T>>,        \
                                    BackwardFn<T>);                                          \
  template std::span<T> grad_sink<T>(const Tensor<T>&);

FMPI_INSTANTIATE(float)
FMPI_INSTANTIATE(double)
#undef FMPI_INSTANTIATE

}  // namespace fmpi

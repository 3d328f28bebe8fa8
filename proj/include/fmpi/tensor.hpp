#pragma once

// Dense row-major tensor with an opt-in reverse-mode gradient tape.
//
// A Tensor is a cheap handle to an immutable value buffer. Differentiable
// operations produce new tensors; when a GradTape is active on the calling
// thread and any operand requires a gradient, the operation appends a
// backward closure to that tape. GradTape::backward replays the closures in
// reverse recording order, which is a reverse topological order of the graph.

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fmpi/error.hpp"

namespace fmpi {

using Index = std::int64_t;
using Shape = std::vector<Index>;

Index shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename T>
class Tensor;
template <typename T>
class GradTape;

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;
  GradTape<T>* tape = nullptr;
  std::size_t tape_index = 0;
};

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

template <typename T>
struct Access;

}  // namespace detail

template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  Tensor(Shape shape, std::vector<T> values);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, T value);
  static Tensor scalar(T value);

  bool defined() const noexcept { return node_ != nullptr; }

  const Shape& shape() const;
  Index rank() const;
  /// Extent of `axis`; negative axes count from the back.
  Index dim(Index axis) const;
  Index numel() const;

  std::span<const T> data() const;
  /// Writable view of a tensor that was not produced by a recorded op.
  std::span<T> mutable_data();

  T item() const;
  T at(std::initializer_list<Index> index) const;

  bool requires_grad() const;
  /// Marks a leaf as a gradient target.
  Tensor& set_requires_grad(bool on);
  bool has_grad() const;
  std::span<const T> grad() const;
  void zero_grad();

  /// Copy of the values with no gradient history.
  Tensor detach() const;

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data().begin(), data().end());
    return Tensor<U>(shape(), std::move(out));
  }

 private:
  explicit Tensor(detail::NodePtr<T> node) : node_(std::move(node)) {}
  const detail::Node<T>& node() const;

  detail::NodePtr<T> node_;

  friend struct detail::Access<T>;
  friend class GradTape<T>;
};

template <typename T>
using BackwardFn = std::function<void(std::span<const T> grad_output)>;

/// Ordered record of differentiable operations.
template <typename T>
class GradTape {
 public:
  GradTape() = default;
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;
  ~GradTape();

  /// Seeds d loss / d loss = 1 and propagates to every recorded input.
  void backward(const Tensor<T>& loss);
  void clear();
  std::size_t size() const noexcept { return entries_.size(); }

  static GradTape* active();

  /// Makes a tape the recording target of the current thread for its lifetime.
  class Scope {
   public:
    explicit Scope(GradTape& tape);
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;
    ~Scope();

   private:
    GradTape* previous_;
  };

  void record(const detail::NodePtr<T>& output, BackwardFn<T> backward);

 private:
  struct Entry {
    detail::NodePtr<T> output;
    BackwardFn<T> backward;
  };
  std::vector<Entry> entries_;
};

/// Backpropagates from a scalar loss using the tape it was recorded on.
template <typename T>
void backward(const Tensor<T>& loss);

/// True when an op over `inputs` would be recorded.
template <typename T>
bool is_recording(std::span<const Tensor<T>> inputs);
template <typename T, typename... Rest>
bool is_recording(const Tensor<T>& first, const Rest&... rest) {
  return GradTape<T>::active() != nullptr && (first.requires_grad() || ... || rest.requires_grad());
}

/// Wraps freshly computed values as the result of an op over `inputs`.
/// `backward` is recorded only when is_recording(inputs) holds.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> values, std::span<const Tensor<T>> inputs,
                      BackwardFn<T> backward);
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> values, std::initializer_list<Tensor<T>> inputs,
                      BackwardFn<T> backward) {
  return make_result<T>(std::move(shape), std::move(values),
                        std::span<const Tensor<T>>(inputs.begin(), inputs.size()),
                        std::move(backward));
}

/// Gradient accumulator of an op input, for use inside a backward function.
/// Empty when the input does not require a gradient.
template <typename T>
std::span<T> grad_sink(const Tensor<T>& input);

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class GradTape<float>;
extern template class GradTape<double>;

}  // namespace fmpi

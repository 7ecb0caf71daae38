#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace deca {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

namespace detail {

/// One vertex of the recorded computation graph. Values live in shared
/// storage so that reshapes are free; gradients are per node.
template <typename T>
struct Node {
  Shape shape;
  std::shared_ptr<std::vector<T>> storage;
  std::vector<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  std::span<const T> value() const { return {storage->data(), storage->size()}; }

  // Lazily allocates a zero gradient buffer.
  std::span<T> grad_buffer() {
    if (grad.size() != storage->size()) grad.assign(storage->size(), T(0));
    return {grad.data(), grad.size()};
  }
};

}  // namespace detail

/// Thread-local switch for graph recording. Eval-mode forwards run with
/// recording disabled so intermediate buffers are released immediately.
class GradMode {
 public:
  static bool enabled() noexcept;
  static void set_enabled(bool enabled) noexcept;
};

class NoGradGuard {
 public:
  NoGradGuard() : previous_(GradMode::enabled()) { GradMode::set_enabled(false); }
  ~NoGradGuard() { GradMode::set_enabled(previous_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Dense row-major tensor handle with reverse-mode gradient tracking.
///
/// Copies are shallow: two handles to the same node observe the same value
/// and gradient. Values are immutable once an op has consumed them; the one
/// sanctioned mutation is `mutable_data()` on leaves (optimizer updates,
/// initialization, checkpoint loading).
template <typename T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  Tensor() = default;
  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim() const { return node_->shape.size(); }
  std::size_t size(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t numel() const { return node_->storage->size(); }

  std::span<const T> data() const { return node_->value(); }
  std::span<T> mutable_data();
  T operator[](std::size_t flat_index) const { return (*node_->storage)[flat_index]; }
  T item() const;

  bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
  bool is_leaf() const noexcept { return node_ && !node_->backward; }
  bool has_grad() const noexcept { return node_ && !node_->grad.empty(); }
  std::span<const T> grad() const { return {node_->grad.data(), node_->grad.size()}; }
  void zero_grad();

  /// Same storage, no history.
  Tensor detach() const;

  /// Reverse sweep from this scalar. Leaf gradients accumulate; interior
  /// gradients are rebuilt from zero on every call and released afterwards.
  void backward() const;

  const NodePtr& node() const noexcept { return node_; }
  static Tensor from_node(NodePtr node);

 private:
  NodePtr node_;
};

/// Builds an op result. The backward closure is kept only when recording is
/// enabled and at least one input requires a gradient.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> values,
                      std::initializer_list<Tensor<T>> inputs,
                      std::function<void(detail::Node<T>&)> backward);

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> values, const std::vector<Tensor<T>>& inputs,
                      std::function<void(detail::Node<T>&)> backward);

/// As make_result, but the result aliases existing storage (reshape views).
template <typename T>
Tensor<T> make_view(Shape shape, std::shared_ptr<std::vector<T>> storage, const Tensor<T>& input,
                    std::function<void(detail::Node<T>&)> backward);

/// Throws a numeric error naming `what` if any element is NaN or infinite.
template <typename T>
void assert_finite(const Tensor<T>& t, const std::string& what);

template <typename T>
bool all_finite(std::span<const T> values);

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace deca

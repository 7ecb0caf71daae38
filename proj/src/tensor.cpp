#include "deca/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "deca/error.hpp"

namespace deca {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto extent : shape) n *= extent;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

namespace {
thread_local bool grad_mode_enabled = true;
}

bool GradMode::enabled() noexcept { return grad_mode_enabled; }
void GradMode::set_enabled(bool enabled) noexcept { grad_mode_enabled = enabled; }

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values, bool requires_grad) {
  for (auto extent : shape)
    require(extent > 0, ErrorKind::Dimension, "tensor extents must be positive, got " + to_string(shape));
  require(deca::numel(shape) == values.size(), ErrorKind::Dimension,
          "shape " + to_string(shape) + " does not match " + std::to_string(values.size()) + " values");
  node_ = std::make_shared<detail::Node<T>>();
  node_->shape = std::move(shape);
  node_->storage = std::make_shared<std::vector<T>>(std::move(values));
  node_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  std::vector<T> values(deca::numel(shape), value);
  return Tensor(std::move(shape), std::move(values), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return Tensor(Shape{}, std::vector<T>{value}, requires_grad);
}

template <typename T>
std::span<T> Tensor<T>::mutable_data() {
  return {node_->storage->data(), node_->storage->size()};
}

template <typename T>
T Tensor<T>::item() const {
  require(numel() == 1, ErrorKind::Contract, "item() on tensor of shape " + to_string(shape()));
  return (*node_->storage)[0];
}

template <typename T>
void Tensor<T>::zero_grad() {
  if (node_ && !node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  auto node = std::make_shared<detail::Node<T>>();
  node->shape = node_->shape;
  node->storage = node_->storage;
  return from_node(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::from_node(NodePtr node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

template <typename T>
void Tensor<T>::backward() const {
  require(defined(), ErrorKind::Contract, "backward() on an undefined tensor");
  require(numel() == 1, ErrorKind::Contract,
          "backward() needs a scalar loss, got shape " + to_string(shape()));
  require(node_->requires_grad, ErrorKind::Contract,
          "backward() on a detached tensor (no recorded graph)");

  if (!node_->backward) {
    node_->grad_buffer()[0] += T(1);
    return;
  }

  // Iterative post-order DFS yields a topological order.
  using NodeT = detail::Node<T>;
  std::vector<NodeT*> order;
  std::vector<NodeT*> leaves;
  std::unordered_set<NodeT*> visited;
  std::vector<std::pair<NodeT*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      NodeT* child = node->inputs[next++].get();
      if (!child->requires_grad || !visited.insert(child).second) continue;
      if (child->backward)
        stack.emplace_back(child, 0);
      else
        leaves.push_back(child);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  // Leaf gradients of this pass are built from zero and then added to what
  // was already accumulated, so k passes give exactly the k-fold sum.
  std::vector<std::vector<T>> previous(leaves.size());
  for (std::size_t l = 0; l < leaves.size(); ++l) previous[l].swap(leaves[l]->grad);
  for (NodeT* node : order) node->grad.assign(node->storage->size(), T(0));
  node_->grad[0] = T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) (*it)->backward(**it);
  for (std::size_t l = 0; l < leaves.size(); ++l) {
    auto& grad = leaves[l]->grad;
    if (previous[l].empty()) continue;
    if (grad.empty()) {
      grad.swap(previous[l]);
      continue;
    }
    for (std::size_t i = 0; i < grad.size(); ++i) grad[i] = previous[l][i] + grad[i];
  }
  for (NodeT* node : order) {
    node->grad.clear();
    node->grad.shrink_to_fit();
  }
}

namespace {

template <typename T, typename Range>
Tensor<T> make_result_impl(Shape shape, std::vector<T> values, const Range& inputs,
                           std::function<void(detail::Node<T>&)> backward) {
  auto node = std::make_shared<detail::Node<T>>();
  node->shape = std::move(shape);
  node->storage = std::make_shared<std::vector<T>>(std::move(values));
  if (GradMode::enabled()) {
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (any) {
      node->requires_grad = true;
      node->backward = std::move(backward);
      node->inputs.reserve(inputs.size());
      for (const auto& in : inputs) node->inputs.push_back(in.node());
    }
  }
  return Tensor<T>::from_node(std::move(node));
}

}  // namespace

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> values, std::initializer_list<Tensor<T>> inputs,
                      std::function<void(detail::Node<T>&)> backward) {
  return make_result_impl<T>(std::move(shape), std::move(values), inputs, std::move(backward));
}

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> values, const std::vector<Tensor<T>>& inputs,
                      std::function<void(detail::Node<T>&)> backward) {
  return make_result_impl<T>(std::move(shape), std::move(values), inputs, std::move(backward));
}

template <typename T>
Tensor<T> make_view(Shape shape, std::shared_ptr<std::vector<T>> storage, const Tensor<T>& input,
                    std::function<void(detail::Node<T>&)> backward) {
  auto node = std::make_shared<detail::Node<T>>();
  node->shape = std::move(shape);
  node->storage = std::move(storage);
  if (GradMode::enabled() && input.requires_grad()) {
    node->requires_grad = true;
    node->backward = std::move(backward);
    node->inputs.push_back(input.node());
  }
  return Tensor<T>::from_node(std::move(node));
}

template <typename T>
bool all_finite(std::span<const T> values) {
  return std::all_of(values.begin(), values.end(), [](T v) { return std::isfinite(v); });
}

template <typename T>
void assert_finite(const Tensor<T>& t, const std::string& what) {
  require(all_finite(t.data()), ErrorKind::Numeric, "non-finite values in " + what);
}

#define DECA_INSTANTIATE(T)                                                                    \
  template class Tensor<T>;                                                                    \
  template Tensor<T> make_result(Shape, std::vector<T>, std::initializer_list<Tensor<T>>,      \
                                 std::function<void(detail::Node<T>&)>);                      \
  template Tensor<T> make_result(Shape, std::vector<T>, const std::vector<Tensor<T>>&,         \
                                 std::function<void(detail::Node<T>&)>);                      \
  template Tensor<T> make_view(Shape, std::shared_ptr<std::vector<T>>, const Tensor<T>&,        \
                               std::function<void(detail::Node<T>&)>);                         \
  template bool all_finite(std::span<const T>);                                                \
  template void assert_finite(const Tensor<T>&, const std::string&);

DECA_INSTANTIATE(float)
DECA_INSTANTIATE(double)
#undef DECA_INSTANTIATE

}  // namespace deca

#include "deca/losses.hpp"

#include "deca/error.hpp"

namespace deca {

const char* to_string(InverseGraphicsMode m) noexcept {
  return m == InverseGraphicsMode::Eq5Consistent ? "eq5_consistent" : "paper_literal";
}

InverseGraphicsMode parse_inverse_graphics_mode(const std::string& s) {
  if (s == "eq5_consistent") return InverseGraphicsMode::Eq5Consistent;
  if (s == "paper_literal") return InverseGraphicsMode::PaperLiteral;
  fail(ErrorKind::Config, "unknown inverse-graphics mode '" + s + "' (expected eq5_consistent or paper_literal)");
}

namespace {

template <typename T>
void require_same_shape(const Tensor<T>& pred, const Tensor<T>& target, const char* what) {
  require(pred.shape() == target.shape() && pred.dim() >= 1, ErrorKind::Dimension,
          std::string(what) + ": prediction " + to_string(pred.shape()) + " vs target " + to_string(target.shape()));
}

}  // namespace

template <typename T>
Tensor<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  require_same_shape(pred, target, "mse_loss");
  return mul_scalar(sum(square(sub(pred, target))), T(1) / static_cast<T>(pred.size(0)));
}

template <typename T>
Tensor<T> masked_l1_loss(const Tensor<T>& pred, const Tensor<T>& target, T threshold) {
  require_same_shape(pred, target, "masked_l1_loss");
  std::vector<T> weight(target.numel());
  const auto tv = target.data();
  for (std::size_t i = 0; i < weight.size(); ++i) weight[i] = tv[i] > threshold ? T(2) : T(1);
  const Tensor<T> d = abs(sub(pred, target));
  return mul_scalar(sum(mul(d, Tensor<T>(target.shape(), std::move(weight)))),
                    T(1) / (T(2) * static_cast<T>(pred.size(0))));
}

template <typename T>
Tensor<T> inverse_graphics_loss(const Tensor<T>& inverse_graphics, const Tensor<T>& weights,
                                InverseGraphicsMode mode) {
  require(inverse_graphics.dim() == 3 && inverse_graphics.size(1) == 4 && inverse_graphics.size(2) == 4,
          ErrorKind::Dimension, "inverse_graphics_loss: expected [J, 4, 4], got " + to_string(inverse_graphics.shape()));
  require(weights.dim() == 4 && weights.size(1) == inverse_graphics.size(0) && weights.size(2) == 4 &&
              weights.size(3) == 4,
          ErrorKind::Dimension,
          "inverse_graphics_loss: weights " + to_string(weights.shape()) + " do not match " +
              to_string(inverse_graphics.shape()));
  const std::size_t types = weights.size(0), classes = weights.size(1);
  Tensor<T> product = matmul(inverse_graphics, weights);  // [types, J, 4, 4]
  if (mode == InverseGraphicsMode::Eq5Consistent) {
    std::vector<T> eye(16, T(0));
    for (std::size_t d = 0; d < 4; ++d) eye[d * 5] = T(1);
    product = sub(product, Tensor<T>({4, 4}, std::move(eye)));
  }
  const Tensor<T> norms = sqrt(sum(reshape(square(product), {types, classes, 16}), 2, false));
  return mean(norms);
}

template <typename T>
LossWeights<T> LossWeights<T>::create(const std::vector<Task>& tasks) {
  LossWeights w;
  w.tasks = tasks;
  for (Task t : tasks) w.s.push_back(make_parameter(std::string("loss.s_") + to_string(t), Tensor<T>::full({1}, T(1))));
  return w;
}

template <typename T>
const Parameter<T>& LossWeights<T>::weight(Task task) const {
  for (std::size_t i = 0; i < tasks.size(); ++i)
    if (tasks[i] == task) return s[i];
  fail(ErrorKind::Config, std::string("no loss weight for task ") + to_string(task));
}

template <typename T>
Tensor<T> total_loss(const LossWeights<T>& weights, const std::map<Task, Tensor<T>>& losses) {
  require(losses.size() == weights.tasks.size(), ErrorKind::Config,
          "total_loss: " + std::to_string(losses.size()) + " losses for " + std::to_string(weights.tasks.size()) +
              " weighted tasks");
  Tensor<T> total;
  for (std::size_t i = 0; i < weights.tasks.size(); ++i) {
    const auto it = losses.find(weights.tasks[i]);
    require(it != losses.end(), ErrorKind::Config,
            std::string("total_loss: missing loss for task ") + to_string(weights.tasks[i]));
    const Tensor<T> s = reshape(weights.s[i].tensor, {});
    const Tensor<T> term = add(s, mul(exp(neg(s)), reshape(it->second, {})));
    total = total.defined() ? add(total, term) : term;
  }
  require(total.defined(), ErrorKind::Config, "total_loss: no tasks");
  return total;
}

#define DECA_INSTANTIATE(T)                                                                          \
  template Tensor<T> mse_loss(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> masked_l1_loss(const Tensor<T>&, const Tensor<T>&, T);                          \
  template Tensor<T> inverse_graphics_loss(const Tensor<T>&, const Tensor<T>&, InverseGraphicsMode); \
  template struct LossWeights<T>;                                                                    \
  template Tensor<T> total_loss(const LossWeights<T>&, const std::map<Task, Tensor<T>>&);

DECA_INSTANTIATE(float)
DECA_INSTANTIATE(double)
#undef DECA_INSTANTIATE

}  // namespace deca

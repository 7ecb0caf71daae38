#pragma once

#include <map>
#include <vector>

#include "deca/model.hpp"

namespace deca {

enum class InverseGraphicsMode {
  /// mean over (i, j) of ||Y_j W_ij - I||_F; zero when Y_j inverts every W_ij.
  Eq5Consistent,
  /// mean over (i, j) of ||Y_j W_ij||_F; minimized by Y = 0.
  PaperLiteral,
};

const char* to_string(InverseGraphicsMode m) noexcept;
InverseGraphicsMode parse_inverse_graphics_mode(const std::string& s);

/// Sum of squared differences divided by the batch size (leading extent).
template <typename T>
Tensor<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target);

/// (sum(mask |d|) + sum(|d|)) / (2 B) with mask = target > threshold.
template <typename T>
Tensor<T> masked_l1_loss(const Tensor<T>& pred, const Tensor<T>& target, T threshold);

/// inverse_graphics: [J, 4, 4]; weights: [types, J, 4, 4].
template <typename T>
Tensor<T> inverse_graphics_loss(const Tensor<T>& inverse_graphics, const Tensor<T>& weights,
                                InverseGraphicsMode mode);

/// One trainable scalar s per enabled task, initialized to 1.
template <typename T>
struct LossWeights {
  std::vector<Task> tasks;
  ParameterList<T> s;

  static LossWeights create(const std::vector<Task>& tasks);
  const Parameter<T>& weight(Task task) const;
};

/// sum over tasks of s + exp(-s) L.
template <typename T>
Tensor<T> total_loss(const LossWeights<T>& weights, const std::map<Task, Tensor<T>>& losses);

}  // namespace deca

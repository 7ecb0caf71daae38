#pragma once

#include <string>
#include <vector>

#include "deca/tensor.hpp"

namespace deca {

/// A named trainable leaf. Names are dotted paths ("encoder.conv0.weight")
/// and are unique within a model.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> tensor;
};

template <typename T>
using ParameterList = std::vector<Parameter<T>>;

template <typename T>
Parameter<T> make_parameter(std::string name, Tensor<T> init) {
  return {std::move(name), Tensor<T>(init.shape(), std::vector<T>(init.data().begin(), init.data().end()), true)};
}

template <typename T>
void zero_grads(const ParameterList<T>& params) {
  for (auto p : params) p.tensor.zero_grad();
}

template <typename T>
std::size_t parameter_count(const ParameterList<T>& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.tensor.numel();
  return n;
}

}  // namespace deca

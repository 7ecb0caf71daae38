#pragma once

#include <cstddef>
#include <string>

#include "deca/ops.hpp"
#include "deca/parameter.hpp"
#include "deca/rng.hpp"

namespace deca {

enum class Mode { Train, Eval };

/// Glorot/Xavier uniform: U(-b, b) with b = sqrt(6 / (fan_in + fan_out)).
/// For shapes (out, in, k...) the fans include the receptive field area.
template <typename T>
Tensor<T> xavier_uniform_init(const Shape& shape, Rng& rng);

/// (fan_in, fan_out) of a weight shape as used by xavier_uniform_init.
std::pair<std::size_t, std::size_t> xavier_fans(const Shape& shape);

/// Inverted dropout: train mode zeroes each element with probability p and
/// scales survivors by 1/(1-p); eval mode returns the input handle unchanged.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, Mode mode, Rng* rng);

template <typename T>
struct Conv2dLayer {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 3;
  std::size_t stride = 2;
  std::size_t padding = 1;
  Parameter<T> weight;
  Parameter<T> bias;

  static Conv2dLayer create(const std::string& name, std::size_t in, std::size_t out, Rng& rng,
                            std::size_t kernel = 3, std::size_t stride = 2, std::size_t padding = 1);
  Tensor<T> operator()(const Tensor<T>& x) const;
  std::size_t output_extent(std::size_t in) const { return conv_output_extent(in, kernel, stride, padding); }
};

template <typename T>
struct InstanceNormLayer {
  std::size_t channels = 0;
  T eps = T(1e-5);
  Parameter<T> gamma;
  Parameter<T> beta;

  static InstanceNormLayer create(const std::string& name, std::size_t channels, T eps = T(1e-5));
  Tensor<T> operator()(const Tensor<T>& x) const;
};

template <typename T>
struct LinearLayer {
  std::size_t in_features = 0;
  std::size_t out_features = 0;
  Parameter<T> weight;
  Parameter<T> bias;

  static LinearLayer create(const std::string& name, std::size_t in, std::size_t out, Rng& rng);
  Tensor<T> operator()(const Tensor<T>& x) const;
};

}  // namespace deca

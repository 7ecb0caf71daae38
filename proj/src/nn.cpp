#include "deca/nn.hpp"

#include <cmath>

#include "deca/error.hpp"

namespace deca {

std::pair<std::size_t, std::size_t> xavier_fans(const Shape& shape) {
  require(shape.size() >= 2, ErrorKind::Contract,
          "xavier_uniform_init needs at least 2 dims, got " + to_string(shape));
  std::size_t receptive = 1;
  for (std::size_t d = 2; d < shape.size(); ++d) receptive *= shape[d];
  return {shape[1] * receptive, shape[0] * receptive};
}

template <typename T>
Tensor<T> xavier_uniform_init(const Shape& shape, Rng& rng) {
  const auto [fan_in, fan_out] = xavier_fans(shape);
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<T> values(numel(shape));
  for (auto& v : values) v = static_cast<T>(uniform(rng, -bound, bound));
  return Tensor<T>(shape, std::move(values));
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, Mode mode, Rng* rng) {
  require(p >= 0.0 && p < 1.0, ErrorKind::Contract, "dropout probability must be in [0, 1), got " + std::to_string(p));
  if (mode == Mode::Eval || p == 0.0) return x;
  require(rng != nullptr, ErrorKind::Contract, "dropout in train mode needs a random generator");
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  std::vector<T> mask(x.numel());
  for (auto& m : mask) m = uniform01(*rng) < p ? T(0) : keep_scale;
  return mul(x, Tensor<T>(x.shape(), std::move(mask)));
}

template <typename T>
Conv2dLayer<T> Conv2dLayer<T>::create(const std::string& name, std::size_t in, std::size_t out, Rng& rng,
                                      std::size_t kernel, std::size_t stride, std::size_t padding) {
  Conv2dLayer layer;
  layer.in_channels = in;
  layer.out_channels = out;
  layer.kernel = kernel;
  layer.stride = stride;
  layer.padding = padding;
  layer.weight = make_parameter(name + ".weight", xavier_uniform_init<T>({out, in, kernel, kernel}, rng));
  layer.bias = make_parameter(name + ".bias", Tensor<T>::zeros({out}));
  return layer;
}

template <typename T>
Tensor<T> Conv2dLayer<T>::operator()(const Tensor<T>& x) const {
  return conv2d(x, weight.tensor, bias.tensor, stride, padding);
}

template <typename T>
InstanceNormLayer<T> InstanceNormLayer<T>::create(const std::string& name, std::size_t channels, T eps) {
  require(eps > T(0), ErrorKind::Config, "instance norm eps must be positive");
  InstanceNormLayer layer;
  layer.channels = channels;
  layer.eps = eps;
  layer.gamma = make_parameter(name + ".gamma", Tensor<T>::full({channels}, T(1)));
  layer.beta = make_parameter(name + ".beta", Tensor<T>::zeros({channels}));
  return layer;
}

template <typename T>
Tensor<T> InstanceNormLayer<T>::operator()(const Tensor<T>& x) const {
  return instance_norm(x, gamma.tensor, beta.tensor, eps);
}

template <typename T>
LinearLayer<T> LinearLayer<T>::create(const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
  LinearLayer layer;
  layer.in_features = in;
  layer.out_features = out;
  layer.weight = make_parameter(name + ".weight", xavier_uniform_init<T>({out, in}, rng));
  layer.bias = make_parameter(name + ".bias", Tensor<T>::zeros({out}));
  return layer;
}

template <typename T>
Tensor<T> LinearLayer<T>::operator()(const Tensor<T>& x) const {
  return linear(x, weight.tensor, bias.tensor);
}

template Tensor<float> xavier_uniform_init(const Shape&, Rng&);
template Tensor<double> xavier_uniform_init(const Shape&, Rng&);
template Tensor<float> dropout(const Tensor<float>&, double, Mode, Rng*);
template Tensor<double> dropout(const Tensor<double>&, double, Mode, Rng*);
template struct Conv2dLayer<float>;
template struct Conv2dLayer<double>;
template struct InstanceNormLayer<float>;
template struct InstanceNormLayer<double>;
template struct LinearLayer<float>;
template struct LinearLayer<double>;

}  // namespace deca

#include "deca/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "deca/error.hpp"
#include "deca/ops.hpp"
#include "deca/rng.hpp"

namespace deca {

template <typename T>
GradCheckReport<T> finite_diff_report(const std::function<Tensor<T>()>& f, const ParameterList<T>& params,
                                      const GradCheckOptions<T>& options) {
  require(options.eps > T(0), ErrorKind::Contract, "finite_diff_check: eps must be positive");
  zero_grads(params);
  {
    Tensor<T> loss = f();
    require(loss.numel() == 1, ErrorKind::Contract, "finite_diff_check: f must return a scalar");
    require(std::isfinite(loss.item()), ErrorKind::Numeric, "finite_diff_check: f is not finite");
    loss.backward();
  }
  std::vector<std::vector<T>> analytic;
  for (const auto& p : params) {
    if (p.tensor.has_grad())
      analytic.emplace_back(p.tensor.grad().begin(), p.tensor.grad().end());
    else
      analytic.emplace_back(p.tensor.numel(), T(0));
  }
  zero_grads(params);

  const auto evaluate = [&] {
    NoGradGuard guard;
    const T v = f().item();
    require(std::isfinite(v), ErrorKind::Numeric, "finite_diff_check: non-finite f evaluation");
    return v;
  };

  GradCheckReport<T> report;
  Rng rng(options.seed);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor<T> tensor = params[pi].tensor;
    const std::size_t n = tensor.numel();
    std::vector<std::size_t> coords(n);
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (options.max_coords_per_param > 0 && n > options.max_coords_per_param) {
      for (std::size_t i = 0; i < options.max_coords_per_param; ++i)
        std::swap(coords[i], coords[i + uniform_index(rng, n - i)]);
      coords.resize(options.max_coords_per_param);
      std::sort(coords.begin(), coords.end());
    }
    auto values = tensor.mutable_data();
    for (std::size_t idx : coords) {
      const T saved = values[idx];
      values[idx] = saved + options.eps;
      const T plus = evaluate();
      values[idx] = saved - options.eps;
      const T minus = evaluate();
      values[idx] = saved;
      const T numeric = (plus - minus) / (T(2) * options.eps);
      const T a = analytic[pi][idx];
      const T denom = std::max({std::abs(a), std::abs(numeric), T(1e-8)});
      const T rel = std::abs(a - numeric) / denom;
      ++report.coordinates;
      if (report.worst_parameter.empty() || rel > report.max_relative_error) {
        report.max_relative_error = rel;
        report.worst_parameter = params[pi].name;
        report.worst_index = idx;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

template <typename T>
Tensor<T> random_projection(const Tensor<T>& y, std::uint64_t seed, T scale) {
  Rng rng(seed);
  std::vector<T> c(y.numel());
  for (auto& v : c) v = static_cast<T>(uniform(rng, -1.0, 1.0)) * scale;
  return sum(mul(y, Tensor<T>(y.shape(), std::move(c))));
}

template GradCheckReport<float> finite_diff_report(const std::function<Tensor<float>()>&, const ParameterList<float>&,
                                                   const GradCheckOptions<float>&);
template GradCheckReport<double> finite_diff_report(const std::function<Tensor<double>()>&,
                                                    const ParameterList<double>&, const GradCheckOptions<double>&);
template Tensor<float> random_projection(const Tensor<float>&, std::uint64_t, float);
template Tensor<double> random_projection(const Tensor<double>&, std::uint64_t, double);

}  // namespace deca

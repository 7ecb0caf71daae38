#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "deca/parameter.hpp"

namespace deca {

template <typename T>
struct GradCheckOptions {
  T eps = T(1e-4);
  /// 0 checks every coordinate; otherwise a seeded sample of at most this
  /// many coordinates per parameter.
  std::size_t max_coords_per_param = 0;
  std::uint64_t seed = 0;
};

template <typename T>
struct GradCheckReport {
  T max_relative_error = 0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  T worst_analytic = 0;
  T worst_numeric = 0;
  std::size_t coordinates = 0;
};

/// Compares backward() against central differences
/// (f(p + eps) - f(p - eps)) / (2 eps) coordinate by coordinate. The relative
/// error of a coordinate is |a - n| / max(|a|, |n|, 1e-8). Parameter values
/// are restored and gradients zeroed on return.
template <typename T>
GradCheckReport<T> finite_diff_report(const std::function<Tensor<T>()>& f, const ParameterList<T>& params,
                                      const GradCheckOptions<T>& options = {});

template <typename T>
T finite_diff_check(const std::function<Tensor<T>()>& f, const ParameterList<T>& params, T eps = T(1e-4)) {
  GradCheckOptions<T> options;
  options.eps = eps;
  return finite_diff_report(f, params, options).max_relative_error;
}

/// A fixed pseudo-random projection sum(c * y) of an arbitrary output, used
/// to turn tensor-valued graphs into scalars for gradient checking.
template <typename T>
Tensor<T> random_projection(const Tensor<T>& y, std::uint64_t seed, T scale = T(1));

}  // namespace deca

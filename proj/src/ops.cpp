#include "deca/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "deca/error.hpp"

namespace deca {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using CMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using MMap = Eigen::Map<RowMat<T>>;

template <typename T>
using NodeT = detail::Node<T>;

std::vector<std::size_t> contiguous_strides(const Shape& shape) {
  std::vector<std::size_t> strides(shape.size(), 1);
  for (std::size_t d = shape.size(); d-- > 1;) strides[d - 1] = strides[d] * shape[d];
  return strides;
}

struct Broadcast {
  Shape out;
  std::vector<std::size_t> stride_a;
  std::vector<std::size_t> stride_b;
  bool same = false;
};

Broadcast plan_broadcast(const Shape& a, const Shape& b, const char* op) {
  Broadcast p;
  p.same = a == b;
  const std::size_t nd = std::max(a.size(), b.size());
  p.out.resize(nd);
  p.stride_a.assign(nd, 0);
  p.stride_b.assign(nd, 0);
  const auto sa = contiguous_strides(a);
  const auto sb = contiguous_strides(b);
  for (std::size_t d = 0; d < nd; ++d) {
    const std::ptrdiff_t da = static_cast<std::ptrdiff_t>(d) - static_cast<std::ptrdiff_t>(nd - a.size());
    const std::ptrdiff_t db = static_cast<std::ptrdiff_t>(d) - static_cast<std::ptrdiff_t>(nd - b.size());
    const std::size_t ea = da >= 0 ? a[da] : 1;
    const std::size_t eb = db >= 0 ? b[db] : 1;
    if (ea != eb && ea != 1 && eb != 1)
      fail(ErrorKind::Dimension, std::string(op) + ": cannot broadcast " + to_string(a) + " with " + to_string(b));
    p.out[d] = std::max(ea, eb);
    if (ea != 1) p.stride_a[d] = sa[da];
    if (eb != 1) p.stride_b[d] = sb[db];
  }
  return p;
}

// Calls f(out_index, a_index, b_index) for every output element in row-major order.
template <typename F>
void for_each_broadcast(const Broadcast& p, F&& f) {
  const std::size_t total = numel(p.out);
  if (p.same) {
    for (std::size_t i = 0; i < total; ++i) f(i, i, i);
    return;
  }
  const std::size_t nd = p.out.size();
  if (nd == 0) {
    f(0, 0, 0);
    return;
  }
  const std::size_t inner = p.out[nd - 1];
  const std::size_t ia_step = p.stride_a[nd - 1];
  const std::size_t ib_step = p.stride_b[nd - 1];
  std::vector<std::size_t> counter(nd, 0);
  std::size_t ia = 0, ib = 0, o = 0;
  const std::size_t outer = total / inner;
  for (std::size_t q = 0; q < outer; ++q) {
    std::size_t xa = ia, xb = ib;
    for (std::size_t k = 0; k < inner; ++k, ++o, xa += ia_step, xb += ib_step) f(o, xa, xb);
    for (std::size_t d = nd - 1; d-- > 0;) {
      ++counter[d];
      ia += p.stride_a[d];
      ib += p.stride_b[d];
      if (counter[d] < p.out[d]) break;
      ia -= p.stride_a[d] * p.out[d];
      ib -= p.stride_b[d] * p.out[d];
      counter[d] = 0;
    }
  }
}

// Binary elementwise op. da/db return the partial derivative of the output
// with respect to a/b given (a, b, out).
template <typename T, typename Fwd, typename DA, typename DB>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, const char* name, Fwd fwd, DA da, DB db) {
  auto plan = std::make_shared<Broadcast>(plan_broadcast(a.shape(), b.shape(), name));
  std::vector<T> out(numel(plan->out));
  const auto av = a.data();
  const auto bv = b.data();
  for_each_broadcast(*plan, [&](std::size_t o, std::size_t ia, std::size_t ib) { out[o] = fwd(av[ia], bv[ib]); });
  return make_result<T>(plan->out, std::move(out), {a, b}, [plan, da, db](NodeT<T>& self) {
    auto& na = *self.inputs[0];
    auto& nb = *self.inputs[1];
    const auto& g = self.grad;
    const auto y = self.value();
    const auto av = na.value();
    const auto bv = nb.value();
    if (na.requires_grad) {
      auto ga = na.grad_buffer();
      for_each_broadcast(*plan, [&](std::size_t o, std::size_t ia, std::size_t ib) {
        ga[ia] += g[o] * da(av[ia], bv[ib], y[o]);
      });
    }
    if (nb.requires_grad) {
      auto gb = nb.grad_buffer();
      for_each_broadcast(*plan, [&](std::size_t o, std::size_t ia, std::size_t ib) {
        gb[ib] += g[o] * db(av[ia], bv[ib], y[o]);
      });
    }
  });
}

template <typename T, typename Fwd, typename Deriv>
Tensor<T> unary(const Tensor<T>& x, Fwd fwd, Deriv deriv) {
  const auto xv = x.data();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
  return make_result<T>(x.shape(), std::move(out), {x}, [deriv](NodeT<T>& self) {
    auto& nx = *self.inputs[0];
    auto gx = nx.grad_buffer();
    const auto xv = nx.value();
    const auto y = self.value();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * deriv(xv[i], y[i]);
  });
}

// Splits a shape around `axis` into (outer, extent, inner).
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t d = 0; d < axis; ++d) s.outer *= shape[d];
  s.extent = shape[axis];
  for (std::size_t d = axis + 1; d < shape.size(); ++d) s.inner *= shape[d];
  return s;
}

void check_axis(const Shape& shape, std::size_t axis, const char* op) {
  require(axis < shape.size(), ErrorKind::Dimension,
          std::string(op) + ": axis " + std::to_string(axis) + " out of range for " + to_string(shape));
}

template <typename T>
T sigmoid_value(T x) {
  if (x >= 0) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

// C[m,n] (+)= A[m,k] B[k,n]. Small products use a plain loop in (i, j, p) order.
template <typename T>
void gemm(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  if (m * n * k <= 512) {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        T acc = 0;
        for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
        c[i * n + j] = accumulate ? c[i * n + j] + acc : acc;
      }
    return;
  }
  CMap<T> A(a, m, k);
  CMap<T> B(b, k, n);
  MMap<T> C(c, m, n);
  if (accumulate)
    C.noalias() += A * B;
  else
    C.noalias() = A * B;
}

// C[m,n] += A[m,k] B[n,k]^T
template <typename T>
void gemm_nt_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  if (m * n * k <= 512) {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        T acc = 0;
        for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[j * k + p];
        c[i * n + j] += acc;
      }
    return;
  }
  MMap<T>(c, m, n).noalias() += CMap<T>(a, m, k) * CMap<T>(b, n, k).transpose();
}

// C[m,n] += A[k,m]^T B[k,n]
template <typename T>
void gemm_tn_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  if (m * n * k <= 512) {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        T acc = 0;
        for (std::size_t p = 0; p < k; ++p) acc += a[p * m + i] * b[p * n + j];
        c[i * n + j] += acc;
      }
    return;
  }
  MMap<T>(c, m, n).noalias() += CMap<T>(a, k, m).transpose() * CMap<T>(b, k, n);
}

}  // namespace

std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t padding) {
  require(stride > 0, ErrorKind::Config, "stride must be positive");
  require(in + 2 * padding >= kernel, ErrorKind::Dimension,
          "window of " + std::to_string(kernel) + " does not fit extent " + std::to_string(in) + " with padding " +
              std::to_string(padding));
  return (in + 2 * padding - kernel) / stride + 1;
}

template <typename T>
T gelu_value(T x) {
  constexpr T c = T(0.7978845608028654);  // sqrt(2/pi)
  return T(0.5) * x * (T(1) + std::tanh(c * (x + T(0.044715) * x * x * x)));
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(
      a, b, "add", [](T x, T y) { return x + y; }, [](T, T, T) { return T(1); }, [](T, T, T) { return T(1); });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(
      a, b, "sub", [](T x, T y) { return x - y; }, [](T, T, T) { return T(1); }, [](T, T, T) { return T(-1); });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(
      a, b, "mul", [](T x, T y) { return x * y; }, [](T, T y, T) { return y; }, [](T x, T, T) { return x; });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(
      a, b, "div", [](T x, T y) { return x / y; }, [](T, T y, T) { return T(1) / y; },
      [](T, T y, T out) { return -out / y; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
  return unary(a, [s](T x) { return x + s; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, T s) {
  return unary(a, [s](T x) { return x * s; }, [s](T, T) { return s; });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& x) {
  return unary(x, [](T v) { return -v; }, [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
  return unary(x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& x) {
  return unary(x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <typename T>
Tensor<T> sqrt(const Tensor<T>& x) {
  return unary(
      x, [](T v) { return std::sqrt(v); }, [](T, T y) { return y > T(0) ? T(0.5) / y : T(0); });
}

template <typename T>
Tensor<T> square(const Tensor<T>& x) {
  return unary(x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <typename T>
Tensor<T> abs(const Tensor<T>& x) {
  return unary(
      x, [](T v) { return std::abs(v); }, [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Tensor<T> clamp_min(const Tensor<T>& x, T lo) {
  return unary(
      x, [lo](T v) { return v < lo ? lo : v; }, [lo](T v, T) { return v < lo ? T(0) : T(1); });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return unary(x, [](T v) { return sigmoid_value(v); }, [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> log_sigmoid(const Tensor<T>& x) {
  return unary(
      x, [](T v) { return std::min(v, T(0)) - std::log1p(std::exp(-std::abs(v))); },
      [](T v, T) { return sigmoid_value(-v); });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  return unary(x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  return unary(
      x, [](T v) { return gelu_value(v); },
      [](T v, T) {
        constexpr T c = T(0.7978845608028654);
        const T th = std::tanh(c * (v + T(0.044715) * v * v * v));
        return T(0.5) * (T(1) + th) + T(0.5) * v * (T(1) - th * th) * c * (T(1) + T(3 * 0.044715) * v * v);
      });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  const auto xv = x.data();
  T acc = 0;
  for (T v : xv) acc += v;
  return make_result<T>(Shape{}, {acc}, {x}, [](NodeT<T>& self) {
    auto gx = self.inputs[0]->grad_buffer();
    const T g = self.grad[0];
    for (auto& v : gx) v += g;
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return mul_scalar(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x, std::size_t axis, bool keepdim) {
  check_axis(x.shape(), axis, "sum");
  const auto s = split_axis(x.shape(), axis);
  Shape out_shape = x.shape();
  if (keepdim)
    out_shape[axis] = 1;
  else
    out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  const auto xv = x.data();
  std::vector<T> out(s.outer * s.inner, T(0));
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t k = 0; k < s.extent; ++k) {
      const T* src = xv.data() + (o * s.extent + k) * s.inner;
      T* dst = out.data() + o * s.inner;
      for (std::size_t i = 0; i < s.inner; ++i) dst[i] += src[i];
    }
  return make_result<T>(std::move(out_shape), std::move(out), {x}, [s](NodeT<T>& self) {
    auto gx = self.inputs[0]->grad_buffer();
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t k = 0; k < s.extent; ++k) {
        T* dst = gx.data() + (o * s.extent + k) * s.inner;
        const T* g = self.grad.data() + o * s.inner;
        for (std::size_t i = 0; i < s.inner; ++i) dst[i] += g[i];
      }
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x, std::size_t axis, bool keepdim) {
  check_axis(x.shape(), axis, "mean");
  return mul_scalar(sum(x, axis, keepdim), T(1) / static_cast<T>(x.size(axis)));
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  check_axis(x.shape(), axis, "softmax");
  const auto s = split_axis(x.shape(), axis);
  const auto xv = x.data();
  std::vector<T> out(xv.size());
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.extent * s.inner + i;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t k = 0; k < s.extent; ++k) mx = std::max(mx, xv[base + k * s.inner]);
      T total = 0;
      for (std::size_t k = 0; k < s.extent; ++k) {
        const T e = std::exp(xv[base + k * s.inner] - mx);
        out[base + k * s.inner] = e;
        total += e;
      }
      for (std::size_t k = 0; k < s.extent; ++k) out[base + k * s.inner] /= total;
    }
  return make_result<T>(x.shape(), std::move(out), {x}, [s](NodeT<T>& self) {
    auto gx = self.inputs[0]->grad_buffer();
    const auto y = self.value();
    const auto& g = self.grad;
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = o * s.extent * s.inner + i;
        T dot = 0;
        for (std::size_t k = 0; k < s.extent; ++k) dot += g[base + k * s.inner] * y[base + k * s.inner];
        for (std::size_t k = 0; k < s.extent; ++k) {
          const std::size_t idx = base + k * s.inner;
          gx[idx] += y[idx] * (g[idx] - dot);
        }
      }
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  require(numel(shape) == x.numel(), ErrorKind::Dimension,
          "reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  return make_view<T>(std::move(shape), x.node()->storage, x, [](NodeT<T>& self) {
    auto gx = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& axes) {
  const std::size_t nd = x.dim();
  require(axes.size() == nd, ErrorKind::Dimension, "permute: axis list does not match " + to_string(x.shape()));
  std::vector<bool> seen(nd, false);
  for (auto a : axes) {
    require(a < nd && !seen[a], ErrorKind::Dimension, "permute: invalid axis permutation");
    seen[a] = true;
  }
  const auto in_strides = contiguous_strides(x.shape());
  Shape out_shape(nd);
  std::vector<std::size_t> src_strides(nd);
  for (std::size_t d = 0; d < nd; ++d) {
    out_shape[d] = x.shape()[axes[d]];
    src_strides[d] = in_strides[axes[d]];
  }
  // Flat source offset of every output element.
  auto offsets = std::make_shared<std::vector<std::size_t>>(x.numel());
  {
    std::vector<std::size_t> counter(nd, 0);
    std::size_t src = 0;
    for (std::size_t o = 0; o < offsets->size(); ++o) {
      (*offsets)[o] = src;
      for (std::size_t d = nd; d-- > 0;) {
        ++counter[d];
        src += src_strides[d];
        if (counter[d] < out_shape[d]) break;
        src -= src_strides[d] * out_shape[d];
        counter[d] = 0;
      }
    }
  }
  const auto xv = x.data();
  std::vector<T> out(xv.size());
  for (std::size_t o = 0; o < out.size(); ++o) out[o] = xv[(*offsets)[o]];
  return make_result<T>(std::move(out_shape), std::move(out), {x}, [offsets](NodeT<T>& self) {
    auto gx = self.inputs[0]->grad_buffer();
    for (std::size_t o = 0; o < offsets->size(); ++o) gx[(*offsets)[o]] += self.grad[o];
  });
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t length) {
  check_axis(x.shape(), axis, "slice");
  require(length > 0 && start + length <= x.size(axis), ErrorKind::Dimension,
          "slice: [" + std::to_string(start) + ", " + std::to_string(start + length) + ") out of range for " +
              to_string(x.shape()));
  const auto s = split_axis(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  const auto xv = x.data();
  std::vector<T> out(s.outer * length * s.inner);
  for (std::size_t o = 0; o < s.outer; ++o)
    std::copy_n(xv.data() + (o * s.extent + start) * s.inner, length * s.inner, out.data() + o * length * s.inner);
  return make_result<T>(std::move(out_shape), std::move(out), {x}, [s, start, length](NodeT<T>& self) {
    auto gx = self.inputs[0]->grad_buffer();
    for (std::size_t o = 0; o < s.outer; ++o) {
      T* dst = gx.data() + (o * s.extent + start) * s.inner;
      const T* g = self.grad.data() + o * length * s.inner;
      for (std::size_t i = 0; i < length * s.inner; ++i) dst[i] += g[i];
    }
  });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& xs, std::size_t axis) {
  require(!xs.empty(), ErrorKind::Contract, "concat: no inputs");
  check_axis(xs[0].shape(), axis, "concat");
  Shape reference = xs[0].shape();
  reference[axis] = 0;
  std::vector<std::size_t> extents;
  for (const auto& t : xs) {
    Shape probe = t.shape();
    require(probe.size() == reference.size(), ErrorKind::Dimension, "concat: rank mismatch");
    probe[axis] = 0;
    require(probe == reference, ErrorKind::Dimension, "concat: incompatible shape " + to_string(t.shape()));
    extents.push_back(t.size(axis));
  }
  Shape out_shape = xs[0].shape();
  const std::size_t total = std::accumulate(extents.begin(), extents.end(), std::size_t{0});
  out_shape[axis] = total;
  const auto s = split_axis(out_shape, axis);
  std::vector<T> out(numel(out_shape));
  std::size_t offset = 0;
  for (std::size_t n = 0; n < xs.size(); ++n) {
    const auto xv = xs[n].data();
    for (std::size_t o = 0; o < s.outer; ++o)
      std::copy_n(xv.data() + o * extents[n] * s.inner, extents[n] * s.inner,
                  out.data() + (o * total + offset) * s.inner);
    offset += extents[n];
  }
  return make_result<T>(std::move(out_shape), std::move(out), xs, [s, extents, total](NodeT<T>& self) {
    std::size_t offset = 0;
    for (std::size_t n = 0; n < extents.size(); ++n) {
      auto& in = *self.inputs[n];
      if (in.requires_grad) {
        auto gx = in.grad_buffer();
        for (std::size_t o = 0; o < s.outer; ++o) {
          const T* g = self.grad.data() + (o * total + offset) * s.inner;
          T* dst = gx.data() + o * extents[n] * s.inner;
          for (std::size_t i = 0; i < extents[n] * s.inner; ++i) dst[i] += g[i];
        }
      }
      offset += extents[n];
    }
  });
}

template <typename T>
Tensor<T> index_select(const Tensor<T>& x, std::size_t axis, const std::vector<std::ptrdiff_t>& indices) {
  check_axis(x.shape(), axis, "index_select");
  require(!indices.empty(), ErrorKind::Contract, "index_select: empty index list");
  const auto s = split_axis(x.shape(), axis);
  for (auto idx : indices)
    require(idx < static_cast<std::ptrdiff_t>(s.extent), ErrorKind::Dimension,
            "index_select: index " + std::to_string(idx) + " out of range for " + to_string(x.shape()));
  Shape out_shape = x.shape();
  out_shape[axis] = indices.size();
  const std::size_t q = indices.size();
  const auto xv = x.data();
  std::vector<T> out(s.outer * q * s.inner, T(0));
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t k = 0; k < q; ++k)
      if (indices[k] >= 0)
        std::copy_n(xv.data() + (o * s.extent + static_cast<std::size_t>(indices[k])) * s.inner, s.inner,
                    out.data() + (o * q + k) * s.inner);
  return make_result<T>(std::move(out_shape), std::move(out), {x}, [s, indices](NodeT<T>& self) {
    auto gx = self.inputs[0]->grad_buffer();
    const std::size_t q = indices.size();
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t k = 0; k < q; ++k) {
        if (indices[k] < 0) continue;
        T* dst = gx.data() + (o * s.extent + static_cast<std::size_t>(indices[k])) * s.inner;
        const T* g = self.grad.data() + (o * q + k) * s.inner;
        for (std::size_t i = 0; i < s.inner; ++i) dst[i] += g[i];
      }
  });
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const auto describe = [&] { return to_string(a.shape()) + " and " + to_string(b.shape()); };
  require(a.dim() >= 2 && b.dim() >= 2, ErrorKind::Dimension, "matmul: operands must be at least 2-D, got " + describe());
  const std::size_t m = a.shape()[a.dim() - 2];
  const std::size_t k = a.shape()[a.dim() - 1];
  const std::size_t n = b.shape()[b.dim() - 1];
  require(b.shape()[b.dim() - 2] == k, ErrorKind::Dimension, "matmul: inner dimensions differ for " + describe());
  const Shape batch_a(a.shape().begin(), a.shape().end() - 2);
  const Shape batch_b(b.shape().begin(), b.shape().end() - 2);
  Broadcast plan;
  try {
    plan = plan_broadcast(batch_a, batch_b, "matmul");
  } catch (const Error&) {
    fail(ErrorKind::Dimension, "matmul: batch dimensions do not broadcast for " + describe());
  }
  auto shared_plan = std::make_shared<Broadcast>(std::move(plan));
  Shape out_shape = shared_plan->out;
  out_shape.push_back(m);
  out_shape.push_back(n);
  std::vector<T> out(numel(out_shape));
  const auto av = a.data();
  const auto bv = b.data();
  for_each_broadcast(*shared_plan, [&](std::size_t o, std::size_t ia, std::size_t ib) {
    gemm(av.data() + ia * m * k, bv.data() + ib * k * n, out.data() + o * m * n, m, k, n, false);
  });
  return make_result<T>(std::move(out_shape), std::move(out), {a, b}, [shared_plan, m, k, n](NodeT<T>& self) {
    auto& na = *self.inputs[0];
    auto& nb = *self.inputs[1];
    const auto av = na.value();
    const auto bv = nb.value();
    const T* g = self.grad.data();
    if (na.requires_grad) {
      auto ga = na.grad_buffer();
      for_each_broadcast(*shared_plan, [&](std::size_t o, std::size_t ia, std::size_t ib) {
        gemm_nt_acc(g + o * m * n, bv.data() + ib * k * n, ga.data() + ia * m * k, m, n, k);
      });
    }
    if (nb.requires_grad) {
      auto gb = nb.grad_buffer();
      for_each_broadcast(*shared_plan, [&](std::size_t o, std::size_t ia, std::size_t ib) {
        gemm_tn_acc(av.data() + ia * m * k, g + o * m * n, gb.data() + ib * k * n, k, m, n);
      });
    }
  });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  require(x.dim() == 2 && weight.dim() == 2 && bias.dim() == 1, ErrorKind::Dimension,
          "linear: expected x[N,in], weight[out,in], bias[out], got " + to_string(x.shape()) + ", " +
              to_string(weight.shape()) + ", " + to_string(bias.shape()));
  const std::size_t rows = x.size(0), in = x.size(1), out_f = weight.size(0);
  require(weight.size(1) == in && bias.size(0) == out_f, ErrorKind::Dimension,
          "linear: feature mismatch between " + to_string(x.shape()) + " and weight " + to_string(weight.shape()));
  std::vector<T> out(rows * out_f);
  const auto bv = bias.data();
  for (std::size_t r = 0; r < rows; ++r) std::copy(bv.begin(), bv.end(), out.begin() + r * out_f);
  gemm_nt_acc(x.data().data(), weight.data().data(), out.data(), rows, in, out_f);
  return make_result<T>(Shape{rows, out_f}, std::move(out), {x, weight, bias},
                        [rows, in, out_f](NodeT<T>& self) {
                          auto& nx = *self.inputs[0];
                          auto& nw = *self.inputs[1];
                          auto& nb = *self.inputs[2];
                          const T* g = self.grad.data();
                          if (nx.requires_grad)
                            gemm(g, nw.value().data(), nx.grad_buffer().data(), rows, out_f, in, true);
                          if (nw.requires_grad)
                            gemm_tn_acc(g, nx.value().data(), nw.grad_buffer().data(), out_f, rows, in);
                          if (nb.requires_grad) {
                            auto gb = nb.grad_buffer();
                            for (std::size_t r = 0; r < rows; ++r)
                              for (std::size_t o = 0; o < out_f; ++o) gb[o] += g[r * out_f + o];
                          }
                        });
}

namespace {

struct ConvGeometry {
  std::size_t batch, in_c, h, w, out_c, k, stride, pad, oh, ow;
  std::size_t patch() const { return in_c * k * k; }
  std::size_t positions() const { return oh * ow; }
};

// Direct evaluation for small problems: for every output, accumulate over
// (c, kh, kw) in order, then add the bias.
template <typename T>
void conv_direct(const ConvGeometry& g, const T* x, const T* w, const T* b, T* y) {
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t co = 0; co < g.out_c; ++co)
      for (std::size_t oy = 0; oy < g.oh; ++oy)
        for (std::size_t ox = 0; ox < g.ow; ++ox) {
          T acc = 0;
          for (std::size_t c = 0; c < g.in_c; ++c)
            for (std::size_t ky = 0; ky < g.k; ++ky)
              for (std::size_t kx = 0; kx < g.k; ++kx) {
                const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
                if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(g.h) || ix >= static_cast<std::ptrdiff_t>(g.w))
                  continue;
                acc += x[((n * g.in_c + c) * g.h + iy) * g.w + ix] * w[((co * g.in_c + c) * g.k + ky) * g.k + kx];
              }
          y[((n * g.out_c + co) * g.oh + oy) * g.ow + ox] = acc + b[co];
        }
}

template <typename T>
void im2col(const ConvGeometry& g, const T* x, T* cols) {
  const std::size_t positions = g.positions();
  for (std::size_t c = 0; c < g.in_c; ++c)
    for (std::size_t ky = 0; ky < g.k; ++ky)
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        T* row = cols + ((c * g.k + ky) * g.k + kx) * positions;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
            const bool inside =
                iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(g.h) && ix < static_cast<std::ptrdiff_t>(g.w);
            row[oy * g.ow + ox] = inside ? x[(c * g.h + iy) * g.w + ix] : T(0);
          }
        }
      }
}

template <typename T>
void col2im_add(const ConvGeometry& g, const T* cols, T* dx) {
  const std::size_t positions = g.positions();
  for (std::size_t c = 0; c < g.in_c; ++c)
    for (std::size_t ky = 0; ky < g.k; ++ky)
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const T* row = cols + ((c * g.k + ky) * g.k + kx) * positions;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
            dx[(c * g.h + iy) * g.w + ix] += row[oy * g.ow + ox];
          }
        }
      }
}

constexpr std::size_t kDirectConvLimit = std::size_t{1} << 17;

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, std::size_t stride,
                 std::size_t padding) {
  require(x.dim() == 4, ErrorKind::Dimension, "conv2d: expected x[B,C,H,W], got " + to_string(x.shape()));
  require(weight.dim() == 4 && weight.size(2) == weight.size(3), ErrorKind::Dimension,
          "conv2d: expected square weight[C',C,k,k], got " + to_string(weight.shape()));
  require(x.size(1) == weight.size(1), ErrorKind::Dimension,
          "conv2d: input has " + std::to_string(x.size(1)) + " channels, weight " + to_string(weight.shape()) +
              " expects " + std::to_string(weight.size(1)));
  require(bias.dim() == 1 && bias.size(0) == weight.size(0), ErrorKind::Dimension,
          "conv2d: bias " + to_string(bias.shape()) + " does not match weight " + to_string(weight.shape()));
  ConvGeometry g{x.size(0), x.size(1), x.size(2), x.size(3), weight.size(0), weight.size(2), stride, padding, 0, 0};
  g.oh = conv_output_extent(g.h, g.k, stride, padding);
  g.ow = conv_output_extent(g.w, g.k, stride, padding);

  Shape out_shape{g.batch, g.out_c, g.oh, g.ow};
  std::vector<T> out(numel(out_shape));
  const bool direct = g.batch * g.out_c * g.positions() * g.patch() <= kDirectConvLimit;
  auto cols = std::make_shared<std::vector<T>>();
  if (direct) {
    conv_direct(g, x.data().data(), weight.data().data(), bias.data().data(), out.data());
  } else {
    const std::size_t per_sample = g.patch() * g.positions();
    cols->resize(g.batch * per_sample);
    const T* xv = x.data().data();
    const T* bv = bias.data().data();
    for (std::size_t n = 0; n < g.batch; ++n) {
      T* col = cols->data() + n * per_sample;
      im2col(g, xv + n * g.in_c * g.h * g.w, col);
      T* y = out.data() + n * g.out_c * g.positions();
      for (std::size_t co = 0; co < g.out_c; ++co) std::fill_n(y + co * g.positions(), g.positions(), bv[co]);
      gemm(weight.data().data(), col, y, g.out_c, g.patch(), g.positions(), true);
    }
    if (!GradMode::enabled() || !(x.requires_grad() || weight.requires_grad())) cols.reset();
  }

  return make_result<T>(std::move(out_shape), std::move(out), {x, weight, bias}, [g, direct, cols](NodeT<T>& self) {
    auto& nx = *self.inputs[0];
    auto& nw = *self.inputs[1];
    auto& nb = *self.inputs[2];
    const T* grad = self.grad.data();
    const std::size_t positions = g.positions();
    if (nb.requires_grad) {
      auto gb = nb.grad_buffer();
      for (std::size_t n = 0; n < g.batch; ++n)
        for (std::size_t co = 0; co < g.out_c; ++co) {
          const T* row = grad + (n * g.out_c + co) * positions;
          T acc = 0;
          for (std::size_t p = 0; p < positions; ++p) acc += row[p];
          gb[co] += acc;
        }
    }
    if (direct) {
      const T* xv = nx.value().data();
      const T* wv = nw.value().data();
      T* gx = nx.requires_grad ? nx.grad_buffer().data() : nullptr;
      T* gw = nw.requires_grad ? nw.grad_buffer().data() : nullptr;
      for (std::size_t n = 0; n < g.batch; ++n)
        for (std::size_t co = 0; co < g.out_c; ++co)
          for (std::size_t oy = 0; oy < g.oh; ++oy)
            for (std::size_t ox = 0; ox < g.ow; ++ox) {
              const T go = grad[((n * g.out_c + co) * g.oh + oy) * g.ow + ox];
              for (std::size_t c = 0; c < g.in_c; ++c)
                for (std::size_t ky = 0; ky < g.k; ++ky)
                  for (std::size_t kx = 0; kx < g.k; ++kx) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
                    const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
                    if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(g.h) || ix >= static_cast<std::ptrdiff_t>(g.w))
                      continue;
                    const std::size_t xi = ((n * g.in_c + c) * g.h + iy) * g.w + ix;
                    const std::size_t wi = ((co * g.in_c + c) * g.k + ky) * g.k + kx;
                    if (gx) gx[xi] += go * wv[wi];
                    if (gw) gw[wi] += go * xv[xi];
                  }
            }
      return;
    }
    const std::size_t per_sample = g.patch() * positions;
    const T* wv = nw.value().data();
    std::vector<T> dcols;
    if (nx.requires_grad) dcols.resize(per_sample);
    for (std::size_t n = 0; n < g.batch; ++n) {
      const T* gy = grad + n * g.out_c * positions;
      if (nw.requires_grad)
        gemm_nt_acc(gy, cols->data() + n * per_sample, nw.grad_buffer().data(), g.out_c, positions, g.patch());
      if (nx.requires_grad) {
        std::fill(dcols.begin(), dcols.end(), T(0));
        gemm_tn_acc(wv, gy, dcols.data(), g.patch(), g.out_c, positions);
        col2im_add(g, dcols.data(), nx.grad_buffer().data() + n * g.in_c * g.h * g.w);
      }
    }
  });
}

template <typename T>
Tensor<T> instance_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  require(x.dim() == 4, ErrorKind::Dimension, "instance_norm: expected x[B,C,H,W], got " + to_string(x.shape()));
  const std::size_t batch = x.size(0), channels = x.size(1), spatial = x.size(2) * x.size(3);
  require(gamma.numel() == channels && beta.numel() == channels, ErrorKind::Dimension,
          "instance_norm: affine parameters do not match " + std::to_string(channels) + " channels");
  require(eps > T(0) || spatial >= 2, ErrorKind::Numeric, "instance_norm: spatial size 1 with eps = 0");
  const auto xv = x.data();
  const auto gv = gamma.data();
  const auto bv = beta.data();
  auto xhat = std::make_shared<std::vector<T>>(xv.size());
  auto inv_std = std::make_shared<std::vector<T>>(batch * channels);
  std::vector<T> out(xv.size());
  for (std::size_t bc = 0; bc < batch * channels; ++bc) {
    const T* src = xv.data() + bc * spatial;
    T mu = 0;
    for (std::size_t i = 0; i < spatial; ++i) mu += src[i];
    mu /= static_cast<T>(spatial);
    T var = 0;
    for (std::size_t i = 0; i < spatial; ++i) var += (src[i] - mu) * (src[i] - mu);
    var /= static_cast<T>(spatial);
    const T inv = T(1) / std::sqrt(var + eps);
    require(std::isfinite(inv), ErrorKind::Numeric, "instance_norm: zero variance with eps = 0");
    (*inv_std)[bc] = inv;
    const std::size_t c = bc % channels;
    for (std::size_t i = 0; i < spatial; ++i) {
      const T h = (src[i] - mu) * inv;
      (*xhat)[bc * spatial + i] = h;
      out[bc * spatial + i] = gv[c] * h + bv[c];
    }
  }
  return make_result<T>(x.shape(), std::move(out), {x, gamma, beta},
                        [xhat, inv_std, batch, channels, spatial](NodeT<T>& self) {
                          auto& nx = *self.inputs[0];
                          auto& ng = *self.inputs[1];
                          auto& nb = *self.inputs[2];
                          const auto gv = ng.value();
                          const T* grad = self.grad.data();
                          const T n = static_cast<T>(spatial);
                          for (std::size_t bc = 0; bc < batch * channels; ++bc) {
                            const std::size_t c = bc % channels;
                            const T* gy = grad + bc * spatial;
                            const T* h = xhat->data() + bc * spatial;
                            T sum_g = 0, sum_gh = 0;
                            for (std::size_t i = 0; i < spatial; ++i) {
                              sum_g += gy[i];
                              sum_gh += gy[i] * h[i];
                            }
                            if (ng.requires_grad) ng.grad_buffer()[c] += sum_gh;
                            if (nb.requires_grad) nb.grad_buffer()[c] += sum_g;
                            if (nx.requires_grad) {
                              T* gx = nx.grad_buffer().data() + bc * spatial;
                              const T scale = gv[c] * (*inv_std)[bc] / n;
                              for (std::size_t i = 0; i < spatial; ++i)
                                gx[i] += scale * (n * gy[i] - sum_g - h[i] * sum_gh);
                            }
                          }
                        });
}

#define DECA_INSTANTIATE(T)                                                                                  \
  template T gelu_value(T);                                                                                  \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                                \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                                \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                                \
  template Tensor<T> div(const Tensor<T>&, const Tensor<T>&);                                                \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                                        \
  template Tensor<T> mul_scalar(const Tensor<T>&, T);                                                        \
  template Tensor<T> neg(const Tensor<T>&);                                                                  \
  template Tensor<T> exp(const Tensor<T>&);                                                                  \
  template Tensor<T> log(const Tensor<T>&);                                                                  \
  template Tensor<T> sqrt(const Tensor<T>&);                                                                 \
  template Tensor<T> square(const Tensor<T>&);                                                               \
  template Tensor<T> abs(const Tensor<T>&);                                                                  \
  template Tensor<T> clamp_min(const Tensor<T>&, T);                                                         \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                              \
  template Tensor<T> log_sigmoid(const Tensor<T>&);                                                          \
  template Tensor<T> tanh(const Tensor<T>&);                                                                 \
  template Tensor<T> gelu(const Tensor<T>&);                                                                 \
  template Tensor<T> sum(const Tensor<T>&);                                                                  \
  template Tensor<T> mean(const Tensor<T>&);                                                                 \
  template Tensor<T> sum(const Tensor<T>&, std::size_t, bool);                                               \
  template Tensor<T> mean(const Tensor<T>&, std::size_t, bool);                                              \
  template Tensor<T> softmax(const Tensor<T>&, std::size_t);                                                 \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                                       \
  template Tensor<T> permute(const Tensor<T>&, const std::vector<std::size_t>&);                             \
  template Tensor<T> slice(const Tensor<T>&, std::size_t, std::size_t, std::size_t);                         \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, std::size_t);                                     \
  template Tensor<T> index_select(const Tensor<T>&, std::size_t, const std::vector<std::ptrdiff_t>&);        \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                             \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t, std::size_t); \
  template Tensor<T> instance_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);

DECA_INSTANTIATE(float)
DECA_INSTANTIATE(double)
#undef DECA_INSTANTIATE

}  // namespace deca

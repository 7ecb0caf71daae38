#include <cmath>

#include "deca/error.hpp"
#include "deca/grad_check.hpp"
#include "deca/ops.hpp"
#include "doctest.h"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace deca;
using deca::testing::max_abs_diff;
using deca::testing::random_tensor;
using deca::testing::to_doubles;

TEST_CASE("tensor construction validates shape and values") {
  CHECK_THROWS_AS(Tensor<double>({2, 0}, {}), Error);
  CHECK_THROWS_AS(Tensor<double>({2, 2}, {1, 2, 3}), Error);
  const Tensor<double> t({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.numel() == 6);
  CHECK(t.size(1) == 3);
  CHECK(Tensor<double>::scalar(4.0).item() == 4.0);
}

TEST_CASE("matmul identity and 2x2 product") {
  const auto a = random_tensor<double>({4, 4}, 1);
  std::vector<double> eye(16, 0.0);
  for (int i = 0; i < 4; ++i) eye[i * 5] = 1.0;
  CHECK(max_abs_diff(matmul(Tensor<double>({4, 4}, eye), a), a) == 0.0);

  const Tensor<double> x({2, 2}, {1, 2, 3, 4});
  const Tensor<double> y({2, 2}, {5, 6, 7, 8});
  const auto z = matmul(x, y);
  CHECK(to_doubles(z) == std::vector<double>{19, 22, 43, 50});
  CHECK(to_doubles(z) == oracle::matmul(to_doubles(x), to_doubles(y), 2, 2, 2));
}

TEST_CASE("batched matmul equals per-slice loop, small and large paths") {
  for (std::size_t n : {4u, 24u}) {
    const auto a = random_tensor<double>({3, n, n}, 2);
    const auto b = random_tensor<double>({3, n, n}, 3);
    const auto c = matmul(a, b);
    for (std::size_t s = 0; s < 3; ++s) {
      const std::vector<double> as(a.data().begin() + s * n * n, a.data().begin() + (s + 1) * n * n);
      const std::vector<double> bs(b.data().begin() + s * n * n, b.data().begin() + (s + 1) * n * n);
      const std::vector<double> cs(c.data().begin() + s * n * n, c.data().begin() + (s + 1) * n * n);
      CHECK(max_abs_diff(cs, oracle::matmul(as, bs, n, n, n)) < 1e-12);
    }
  }
}

TEST_CASE("matmul broadcasting and shape errors") {
  const auto a = random_tensor<double>({2, 1, 3, 4}, 4);
  const auto b = random_tensor<double>({5, 4, 2}, 5);
  CHECK(matmul(a, b).shape() == Shape{2, 5, 3, 2});
  try {
    matmul(a, random_tensor<double>({3, 2}, 6));
    FAIL("expected a dimension error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Dimension);
    CHECK(std::string(e.what()).find("(3,2)") != std::string::npos);
  }
}

TEST_CASE("backward of sum of squares") {
  const Tensor<double> x({3}, {1, 2, 3}, true);
  sum(square(x)).backward();
  CHECK(to_doubles(Tensor<double>({3}, std::vector<double>(x.grad().begin(), x.grad().end()))) ==
        std::vector<double>{2, 4, 6});
}

TEST_CASE("backward contract errors") {
  const Tensor<double> x({3}, {1, 2, 3}, true);
  CHECK_THROWS_AS(square(x).backward(), Error);
  CHECK_THROWS_AS(sum(square(x)).detach().backward(), Error);
}

TEST_CASE("constant loss leaves gradients zero") {
  const Tensor<double> x({2}, {1, 2}, true);
  const auto c = add_scalar(sub(sum(x), sum(x)), 3.0);
  c.backward();
  CHECK(x.grad()[0] == 0.0);
  CHECK(x.grad()[1] == 0.0);
}

TEST_CASE("gradients accumulate and are deterministic") {
  const auto x = random_tensor<double>({2, 3, 5, 5}, 7, -1, 1, true);
  auto w = random_tensor<double>({4, 3, 3, 3}, 8, -1, 1, true);
  const auto b = random_tensor<double>({4}, 9, -1, 1, true);
  auto f = [&] { return random_projection(gelu(conv2d(x, w, b, 2, 1)), 11); };
  f().backward();
  const auto g1 = std::vector<double>(w.grad().begin(), w.grad().end());
  f().backward();
  for (std::size_t i = 0; i < g1.size(); ++i) CHECK(w.grad()[i] == 2.0 * g1[i]);
  w.zero_grad();
  f().backward();
  for (std::size_t i = 0; i < g1.size(); ++i) CHECK(w.grad()[i] == g1[i]);
}

TEST_CASE("finite difference check: exact polynomial and injected fault") {
  auto x = Parameter<double>{"x", random_tensor<double>({5}, 12, -1, 1, true)};
  ParameterList<double> params{x};
  CHECK(finite_diff_check<double>([&] { return sum(square(x.tensor)); }, params) < 1e-8);

  // Custom op whose backward is deliberately 10% too large.
  auto faulty = [&] {
    const auto& in = x.tensor;
    std::vector<double> v(in.data().begin(), in.data().end());
    for (auto& e : v) e = e * e;
    auto node = in.node();
    return sum(make_result<double>(in.shape(), v, {in}, [node](detail::Node<double>& self) {
      auto g = node->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += 1.1 * 2.0 * node->value()[i] * self.grad[i];
    }));
  };
  CHECK(finite_diff_check<double>(faulty, params) > 0.05);
}

TEST_CASE("finite difference check on a composite graph") {
  ParameterList<double> params{
      {"x", random_tensor<double>({2, 2, 6, 6}, 21, -1, 1, true)},
      {"conv.w", random_tensor<double>({3, 2, 3, 3}, 22, -0.5, 0.5, true)},
      {"conv.b", random_tensor<double>({3}, 23, -0.5, 0.5, true)},
      {"norm.g", random_tensor<double>({3}, 24, 0.5, 1.5, true)},
      {"norm.b", random_tensor<double>({3}, 25, -0.5, 0.5, true)},
      {"fc.w", random_tensor<double>({4, 27}, 26, -0.5, 0.5, true)},
      {"fc.b", random_tensor<double>({4}, 27, -0.5, 0.5, true)},
  };
  auto f = [&] {
    auto h = conv2d(params[0].tensor, params[1].tensor, params[2].tensor, 2, 1);
    h = gelu(instance_norm(h, params[3].tensor, params[4].tensor, 1e-5));
    h = linear(reshape(h, {2, 27}), params[5].tensor, params[6].tensor);
    // Small projection: conv biases feeding a norm have an exactly zero
    // gradient, so the finite difference there is pure round-off.
    return random_projection(h, 5, 1e-3);
  };
  CHECK(finite_diff_check<double>(f, params) < 1e-5);
}

TEST_CASE("elementwise and reduction gradients") {
  ParameterList<double> params{{"a", random_tensor<double>({3, 4}, 31, 0.2, 1.5, true)},
                               {"b", random_tensor<double>({4}, 32, 0.2, 1.5, true)}};
  auto f = [&] {
    const auto& a = params[0].tensor;
    const auto& b = params[1].tensor;
    auto y = add(div(exp(a), b), mul(log(a), sqrt(b)));
    y = add(y, mul(tanh(a), log_sigmoid(sub(a, b))));
    y = concat<double>({softmax(y, 1), abs(sub(a, b)), sigmoid(a)}, 0);
    y = permute(y, {1, 0});
    y = index_select(y, 1, {0, 3, -1, 8, 2});
    return add(random_projection(mean(y, 1, false), 1), random_projection(slice(sum(y, 0, true), 1, 1, 3), 2));
  };
  CHECK(finite_diff_check<double>(f, params, 1e-6) < 1e-6);
}

TEST_CASE("sqrt derivative is zero at zero") {
  const Tensor<double> x({2}, {0.0, 4.0}, true);
  sum(sqrt(x)).backward();
  CHECK(x.grad()[0] == 0.0);
  CHECK(x.grad()[1] == doctest::Approx(0.25));
}

TEST_CASE("non-finite detection") {
  const Tensor<double> x({2}, {1.0, std::nan("")});
  CHECK_THROWS_AS(assert_finite(x, "x"), Error);
  CHECK_NOTHROW(assert_finite(Tensor<double>({1}, {1.0}), "y"));
}

TEST_CASE("no-grad mode records nothing") {
  const Tensor<double> x({2}, {1, 2}, true);
  Tensor<double> y;
  {
    NoGradGuard guard;
    y = sum(square(x));
  }
  CHECK(!y.requires_grad());
  CHECK_THROWS_AS(y.backward(), Error);
}

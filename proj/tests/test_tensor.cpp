// Copyright 2026 dcfnet authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <catch2/catch_amalgamated.hpp>

#include "dcfnet/gradcheck.hpp"
#include "dcfnet/tensor.hpp"

using namespace dcfnet;
using Catch::Approx;

TEST_CASE("elementwise ops compute expected values") {
  auto a = Tensor<double>::from({3}, {1.0, 2.0, 3.0});
  auto b = Tensor<double>::from({3}, {4.0, 5.0, 6.0});
  CHECK(add(a, b).data()[1] == 7.0);
  CHECK(sub(a, b).data()[0] == -3.0);
  CHECK(mul(a, b).data()[2] == 18.0);
  CHECK(div(b, a).data()[1] == 2.5);
  CHECK(mul_scalar(a, 2.0).data()[2] == 6.0);
  CHECK(sum_all(a).item() == 6.0);
  CHECK(mean_all(b).item() == 5.0);
}

TEST_CASE("shape mismatches are rejected") {
  auto a = Tensor<double>::zeros({2, 3});
  auto b = Tensor<double>::zeros({3, 2});
  CHECK_THROWS_AS(add(a, b), ShapeError);
  CHECK_THROWS_AS(mul(a, b), ShapeError);
  CHECK_THROWS_AS(reshape(a, {5}), ShapeError);
}

TEST_CASE("sigmoid derivative at zero is 0.25") {
  auto x = Tensor<double>::scalar(0.0, true);
  auto y = sigmoid(x);
  y.backward();
  CHECK(x.grad()[0] == Approx(0.25).margin(1e-15));
}

TEST_CASE("elementwise product gradient is the other factor") {
  auto x = Tensor<double>::from({4}, {1.0, -2.0, 0.5, 3.0}, true);
  auto y = Tensor<double>::from({4}, {2.0, 0.25, -1.0, 5.0});
  auto z = sum_all(mul(x, y));
  z.backward();
  for (size_t i = 0; i < 4; ++i) CHECK(x.grad()[i] == y.data()[i]);
}

TEST_CASE("random five-leaf composite graph matches finite differences") {
  Rng rng(42);
  auto a = detail::rand_tensor({3, 4}, rng);
  auto b = detail::rand_tensor({3, 4}, rng);
  auto c = detail::rand_tensor({4, 2}, rng);
  auto d = detail::rand_tensor({3, 2}, rng);
  auto e = detail::rand_tensor({3, 2}, rng);
  auto forward = [&] {
    auto u = tanh_op(add(mul(a, b), a));
    auto v = matmul(u, c);
    auto w = sigmoid(add(v, mul(d, e)));
    return sum_all(mul(w, w));
  };
  CHECK(finite_diff_check({a, b, c, d, e}, forward) < 1e-6);
}

TEST_CASE("backward requires a scalar root") {
  auto x = Tensor<double>::from({2}, {1.0, 2.0}, true);
  auto y = mul(x, x);
  CHECK_THROWS_AS(y.backward(), ShapeError);
}

TEST_CASE("graph reuse without retain throws, with retain works") {
  auto x = Tensor<double>::scalar(2.0, true);
  auto y = mul(x, x);
  auto z = sum_all(y);
  z.backward();
  CHECK(x.grad()[0] == Approx(4.0));
  CHECK_THROWS_AS(z.backward(), Error);

  auto x2 = Tensor<double>::scalar(3.0, true);
  auto z2 = sum_all(mul(x2, x2));
  z2.backward(1.0, /*retain_graph=*/true);
  z2.backward(1.0, /*retain_graph=*/true);
  CHECK(x2.grad()[0] == Approx(12.0));  // two accumulated passes
}

TEST_CASE("untouched leaves get no gradient, touched leaves accumulate") {
  auto x = Tensor<double>::scalar(1.5, true);
  auto unused = Tensor<double>::scalar(7.0, true);
  auto z = mul_scalar(x, 3.0);
  z.backward();
  CHECK(x.grad()[0] == 3.0);
  CHECK(unused.grad().empty());
}

TEST_CASE("backward is linear in the loss combination") {
  // gradients of a*f + b*g equal a*grad(f) + b*grad(g) at shared leaves
  Rng rng(7);
  auto x = detail::rand_tensor({5}, rng);
  x.set_requires_grad(true);
  const double ca = 1.7, cb = -0.6;

  auto f = [&] { return sum_all(mul(x, x)); };
  auto g = [&] { return sum_all(sigmoid(x)); };

  x.zero_grad();
  f().backward();
  auto gf = x.grad();
  x.zero_grad();
  g().backward();
  auto gg = x.grad();
  x.zero_grad();
  add(mul_scalar(f(), ca), mul_scalar(g(), cb)).backward();
  for (size_t i = 0; i < 5; ++i)
    CHECK(x.grad()[i] == Approx(ca * gf[i] + cb * gg[i]).margin(1e-10));
}

TEST_CASE("forward ops are deterministic") {
  Rng rng(3);
  auto x = detail::rand_tensor({4, 7}, rng);
  auto y = detail::rand_tensor({7, 3}, rng);
  auto r1 = softmax_last(matmul(tanh_op(x), y));
  auto r2 = softmax_last(matmul(tanh_op(x), y));
  for (size_t i = 0; i < r1.numel(); ++i) CHECK(r1.data()[i] == r2.data()[i]);
}

TEST_CASE("softmax rows sum to one") {
  Rng rng(11);
  auto x = detail::rand_tensor({6, 9}, rng, 4.0);
  auto s = softmax_last(x);
  for (size_t r = 0; r < 6; ++r) {
    double sum = 0.0;
    for (size_t c = 0; c < 9; ++c) sum += s.data()[r * 9 + c];
    CHECK(sum == Approx(1.0).margin(1e-12));
  }
}

TEST_CASE("softmax is stable under large logits") {
  auto x = Tensor<double>::from({1, 3}, {1000.0, 1001.0, 999.0});
  auto s = softmax_last(x);
  CHECK(std::isfinite(s.data()[0]));
  CHECK(s.data()[1] > s.data()[0]);
}

TEST_CASE("matmul matches hand computation and broadcasts 2-D rhs") {
  auto a = Tensor<double>::from({2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
  auto b = Tensor<double>::from({2, 2}, {1, 0, 0, 1});
  auto c = matmul(a, b);
  for (size_t i = 0; i < 8; ++i) CHECK(c.data()[i] == a.data()[i]);

  auto m = Tensor<double>::from({2, 3}, {1, 2, 3, 4, 5, 6});
  auto n = Tensor<double>::from({3, 2}, {7, 8, 9, 10, 11, 12});
  auto p = matmul(m, n);
  CHECK(p.data()[0] == 58.0);
  CHECK(p.data()[3] == 154.0);
}

TEST_CASE("permute and slice round trip with gradients") {
  Rng rng(5);
  auto x = detail::rand_tensor({2, 3, 4}, rng);
  auto p = permute(x, {2, 0, 1});
  CHECK(p.shape() == Shape{4, 2, 3});
  auto back = permute(p, {1, 2, 0});
  for (size_t i = 0; i < x.numel(); ++i) CHECK(back.data()[i] == x.data()[i]);

  auto forward = [&] {
    auto s1 = slice(x, 1, 0, 2);
    auto s2 = slice(x, 1, 1, 2);
    return sum_all(mul(permute(s1, {1, 0, 2}), permute(s2, {1, 0, 2})));
  };
  CHECK(finite_diff_check({x}, forward) < 1e-7);
}

TEST_CASE("concat splits gradient back to parts") {
  Rng rng(13);
  auto a = detail::rand_tensor({2, 3}, rng);
  auto b = detail::rand_tensor({3, 3}, rng);
  auto cat = concat<double>({a, b}, 0);
  CHECK(cat.shape() == Shape{5, 3});
  auto forward = [&] { return sum_all(mul(concat<double>({a, b}, 0), concat<double>({a, b}, 0))); };
  CHECK(finite_diff_check({a, b}, forward) < 1e-7);
}

TEST_CASE("rms_norm matches the direct formula") {
  auto x = Tensor<double>::from({2, 1}, {3.0, 4.0});
  auto g = Tensor<double>::filled({2}, 1.0);
  auto y = rms_norm(x, g);
  CHECK(y.data()[0] == Approx(0.84853).margin(1e-5));
  CHECK(y.data()[1] == Approx(1.13137).margin(1e-5));

  // constant positive channel vector, gain 1 -> all ones
  auto c = Tensor<double>::filled({4, 1}, 2.5);
  auto ones = rms_norm(c, Tensor<double>::filled({4}, 1.0));
  for (size_t i = 0; i < 4; ++i) CHECK(ones.data()[i] == Approx(1.0).margin(1e-7));
}

TEST_CASE("rms_norm is scale invariant for positive scalars") {
  Rng rng(17);
  auto x = detail::rand_tensor({5, 6}, rng, 3.0);
  auto g = Tensor<double>::filled({5}, 1.0);
  auto y1 = rms_norm(x, g);
  auto y2 = rms_norm(mul_scalar(x, 37.5), g);
  for (size_t i = 0; i < y1.numel(); ++i)
    CHECK(y2.data()[i] == Approx(y1.data()[i]).margin(1e-9));
}

TEST_CASE("rms_norm handles zero vectors through epsilon") {
  auto x = Tensor<double>::zeros({3, 2});
  auto y = rms_norm(x, Tensor<double>::filled({3}, 1.0));
  for (size_t i = 0; i < y.numel(); ++i) CHECK(y.data()[i] == 0.0);
}

TEST_CASE("finite check flags NaN") {
  auto x = Tensor<double>::from({2}, {1.0, std::nan("")});
  CHECK_FALSE(x.all_finite());
  auto y = Tensor<double>::from({2}, {1.0, 2.0});
  CHECK(y.all_finite());
}

TEST_CASE("no-grad mode skips graph recording") {
  auto x = Tensor<double>::scalar(2.0, true);
  Tensor<double> y;
  {
    NoGradGuard guard;
    y = mul(x, x);
  }
  CHECK(y.is_leaf());
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("global_avg_pool and channel_scale gradients check out") {
  Rng rng(23);
  auto x = detail::rand_tensor({3, 4, 2}, rng);
  auto s = detail::rand_tensor({3}, rng);
  auto forward = [&] { return sum_all(mul(channel_scale(x, s), channel_scale(x, s))); };
  CHECK(finite_diff_check({x, s}, forward) < 1e-7);

  auto pooled = global_avg_pool(Tensor<double>::from({2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8}));
  CHECK(pooled.data()[0] == 2.5);
  CHECK(pooled.data()[1] == 6.5);
}

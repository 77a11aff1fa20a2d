// Copyright 2026 dcfnet authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <catch2/catch_amalgamated.hpp>

#include "dcfnet/conv.hpp"
#include "dcfnet/gradcheck.hpp"

using namespace dcfnet;
using Catch::Approx;

TEST_CASE("1x1 identity kernel reproduces the input") {
  Rng rng(1);
  auto x = detail::rand_tensor({1, 4, 5}, rng);
  auto k = Tensor<double>::from({1, 1, 1, 1}, {1.0});
  auto y = conv2d(x, k);
  REQUIRE(y.shape() == x.shape());
  for (size_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("depthwise averaging kernel keeps interior constant") {
  const double c = 3.7;
  auto x = Tensor<double>::filled({2, 6, 7}, c);
  auto k = Tensor<double>::filled({2, 1, 3, 3}, 1.0 / 9.0);
  ConvSpec spec;
  spec.groups = 2;
  auto y = conv2d(x, k, spec);
  REQUIRE(y.shape() == x.shape());
  for (size_t ch = 0; ch < 2; ++ch)
    for (size_t i = 1; i + 1 < 6; ++i)
      for (size_t j = 1; j + 1 < 7; ++j)
        CHECK(y.data()[(ch * 6 + i) * 7 + j] == Approx(c).margin(1e-12));
  // zero padding pulls border outputs below the constant
  CHECK(y.data()[0] < c);
  CHECK(y.data()[6] < c);
}

TEST_CASE("doubling conv shape arithmetic at paper dimensions") {
  auto x = Tensor<double>::zeros({256, 129, 63});
  auto k = Tensor<double>::zeros({512, 256, 1, 1});
  auto y = conv2d(x, k);
  CHECK(y.shape() == Shape{512, 129, 63});
}

TEST_CASE("same padding preserves extents for odd kernels at stride 1") {
  Rng rng(9);
  for (size_t ks : {1, 3, 5}) {
    auto x = detail::rand_tensor({2, 7, 9}, rng);
    auto k = detail::rand_tensor({3, 2, ks, ks}, rng);
    auto y = conv2d(x, k);
    CHECK(y.shape() == Shape{3, 7, 9});
  }
}

TEST_CASE("dilated same padding also preserves extents") {
  Rng rng(10);
  auto x = detail::rand_tensor({2, 8, 8}, rng);
  auto k = detail::rand_tensor({2, 2, 3, 3}, rng);
  for (size_t d : {1, 2, 3}) {
    ConvSpec spec;
    spec.dilation_h = spec.dilation_w = d;
    CHECK(conv2d(x, k, spec).shape() == Shape{2, 8, 8});
  }
}

TEST_CASE("stride two halves extents") {
  auto x = Tensor<double>::zeros({1, 8, 8});
  auto k = Tensor<double>::zeros({1, 1, 3, 3});
  ConvSpec spec;
  spec.stride_h = spec.stride_w = 2;
  spec.padding = Padding::kValid;
  auto y = conv2d(x, k, spec);
  CHECK(y.shape() == Shape{1, 3, 3});
}

TEST_CASE("group misconfiguration is rejected") {
  auto x = Tensor<double>::zeros({3, 4, 4});
  auto k = Tensor<double>::zeros({4, 1, 1, 1});
  ConvSpec spec;
  spec.groups = 2;  // does not divide 3 input channels
  CHECK_THROWS_AS(conv2d(x, k, spec), ShapeError);

  auto k2 = Tensor<double>::zeros({4, 3, 1, 1});
  ConvSpec g3;
  g3.groups = 3;  // kernel says C_in/groups == 3, inconsistent
  CHECK_THROWS_AS(conv2d(x, k2, g3), ShapeError);
}

TEST_CASE("bias shape is validated") {
  auto x = Tensor<double>::zeros({1, 2, 2});
  auto k = Tensor<double>::zeros({2, 1, 1, 1});
  auto bad = Tensor<double>::zeros({3});
  CHECK_THROWS_AS(conv2d(x, k, bad, ConvSpec{}), ShapeError);
}

TEST_CASE("strided dilated grouped conv matches finite differences") {
  Rng rng(21);
  auto x = detail::rand_tensor({4, 6, 7}, rng);
  auto k = detail::rand_tensor({4, 2, 2, 3}, rng);
  auto b = detail::rand_tensor({4}, rng);
  ConvSpec spec;
  spec.groups = 2;
  spec.stride_w = 2;
  spec.dilation_h = 2;
  detail::ScalarProbe probe(99);
  auto fd = finite_diff_check({x, k, b}, [&] {
    probe.begin();
    return probe.weigh(conv2d(x, k, b, spec));
  });
  CHECK(fd < 1e-6);
}

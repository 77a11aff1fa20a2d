// Copyright 2026 dcfnet authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <catch2/catch_amalgamated.hpp>

#include "dcfnet/gradcheck.hpp"
#include "dcfnet/nn.hpp"

using namespace dcfnet;
using Catch::Approx;

namespace {

void fill(Tensor<double>& t, double v) {
  auto d = t.mutable_data();
  std::fill(d.begin(), d.end(), v);
}

void set_identity(Tensor<double>& t) {
  // square [n,n] weight
  auto d = t.mutable_data();
  const size_t n = t.dim(0);
  std::fill(d.begin(), d.end(), 0.0);
  for (size_t i = 0; i < n; ++i) d[i * n + i] = 1.0;
}

}  // namespace

TEST_CASE("parameter store rejects duplicates and iterates lexicographically") {
  ModelParameters<double> params;
  params.add("b.x", Tensor<double>::zeros({2}));
  params.add("a.y", Tensor<double>::zeros({3}));
  params.add("a.b", Tensor<double>::zeros({1}));
  CHECK_THROWS_AS(params.add("a.y", Tensor<double>::zeros({3})), Error);
  std::vector<std::string> names;
  for (auto& [k, v] : params.entries()) names.push_back(k);
  CHECK(names == std::vector<std::string>{"a.b", "a.y", "b.x"});
  CHECK(params.count_scalars() == 6);
}

TEST_CASE("linear layer computes x W + b") {
  ModelParameters<double> params;
  Rng rng(1);
  Linear<double> lin(params, "lin", 3, 2, rng);
  auto wd = lin.weight.mutable_data();
  // W[in=3,out=2]
  double wv[6] = {1, 0, 0, 1, 1, 1};
  std::copy(wv, wv + 6, wd.begin());
  auto bd = lin.bias.mutable_data();
  bd[0] = 0.5;
  bd[1] = -0.5;
  auto x = Tensor<double>::from({1, 3}, {2.0, 3.0, 4.0});
  auto y = lin.forward(x);
  CHECK(y.data()[0] == Approx(2.0 + 4.0 + 0.5));
  CHECK(y.data()[1] == Approx(3.0 + 4.0 - 0.5));
}

TEST_CASE("mha with identity projections and equal keys averages the values") {
  ModelParameters<double> params;
  Rng rng(2);
  const size_t d = 4, L = 3, S = 5;
  MhaParams<double> p(params, "mha", d, rng);
  set_identity(p.q.weight);
  set_identity(p.k.weight);
  set_identity(p.v.weight);
  set_identity(p.out.weight);
  fill(p.q.bias, 0.0);
  fill(p.k.bias, 0.0);
  fill(p.v.bias, 0.0);
  fill(p.out.bias, 0.0);

  auto query = detail::rand_tensor({1, L, d}, rng);
  auto key = Tensor<double>::filled({1, S, d}, 0.7);  // all keys equal
  auto value = detail::rand_tensor({1, S, d}, rng);
  auto out = multi_head_attention(query, key, value, /*heads=*/1, p);
  REQUIRE(out.shape() == Shape{1, L, d});
  for (size_t l = 0; l < L; ++l)
    for (size_t c = 0; c < d; ++c) {
      double mean = 0.0;
      for (size_t s = 0; s < S; ++s) mean += value.data()[s * d + c];
      mean /= S;
      CHECK(out.data()[l * d + c] == Approx(mean).margin(1e-12));
    }
}

TEST_CASE("mha paper dimensions preserve shape") {
  ModelParameters<double> params;
  Rng rng(3);
  MhaParams<double> p(params, "mha", 64, rng);
  auto x = detail::rand_tensor({1, 63, 64}, rng);
  auto y = multi_head_attention(x, x, x, 4, p);
  CHECK(y.shape() == Shape{1, 63, 64});
}

TEST_CASE("mha rejects dims not divisible by heads") {
  ModelParameters<double> params;
  Rng rng(4);
  MhaParams<double> p(params, "mha", 6, rng);
  auto x = detail::rand_tensor({1, 4, 6}, rng);
  CHECK_THROWS_AS(multi_head_attention(x, x, x, 4, p), ShapeError);
}

TEST_CASE("blstm with zero weights and biases outputs zeros") {
  ModelParameters<double> params;
  Rng rng(5);
  BlstmParams<double> p(params, "b", 4, 3, rng);
  for (auto t : {&p.wih_f, &p.whh_f, &p.b_f, &p.wih_b, &p.whh_b, &p.b_b}) fill(*t, 0.0);
  auto x = detail::rand_tensor({1, 6, 4}, rng);
  auto y = blstm(x, p);
  REQUIRE(y.shape() == Shape{1, 6, 6});
  for (size_t i = 0; i < y.numel(); ++i) CHECK(y.data()[i] == 0.0);
}

TEST_CASE("blstm output shape matches paper dimensions") {
  ModelParameters<double> params;
  Rng rng(6);
  BlstmParams<double> p(params, "b", 64, 128, rng);
  auto x = detail::rand_tensor({1, 63, 64}, rng);
  CHECK(blstm(x, p).shape() == Shape{1, 63, 256});
  CHECK(blstm_seq(reshape(x, {63, 64}), p).shape() == Shape{63, 256});
}

TEST_CASE("blstm rejects empty sequences") {
  ModelParameters<double> params;
  Rng rng(7);
  BlstmParams<double> p(params, "b", 4, 3, rng);
  auto x = Tensor<double>::zeros({1, 0, 4});
  CHECK_THROWS_AS(blstm(x, p), ShapeError);
}

TEST_CASE("tying directions makes blstm equivariant to sequence reversal") {
  ModelParameters<double> params;
  Rng rng(8);
  const size_t L = 3, in = 4, h = 3;
  BlstmParams<double> p(params, "b", in, h, rng);
  // Tie the backward direction to the forward direction.
  std::copy(p.wih_f.data().begin(), p.wih_f.data().end(), p.wih_b.mutable_data().begin());
  std::copy(p.whh_f.data().begin(), p.whh_f.data().end(), p.whh_b.mutable_data().begin());
  std::copy(p.b_f.data().begin(), p.b_f.data().end(), p.b_b.mutable_data().begin());

  auto x = detail::rand_tensor({1, L, in}, rng);
  std::vector<double> rev(L * in);
  for (size_t t = 0; t < L; ++t)
    for (size_t i = 0; i < in; ++i) rev[t * in + i] = x.data()[(L - 1 - t) * in + i];
  auto xr = Tensor<double>::from({1, L, in}, rev);

  auto y = blstm(x, p);
  auto yr = blstm(xr, p);
  // output(reverse(seq)) == reverse(output(seq)) with direction halves swapped
  for (size_t t = 0; t < L; ++t)
    for (size_t j = 0; j < h; ++j) {
      CHECK(yr.data()[t * 2 * h + j] == Approx(y.data()[(L - 1 - t) * 2 * h + h + j]).margin(1e-12));
      CHECK(yr.data()[t * 2 * h + h + j] == Approx(y.data()[(L - 1 - t) * 2 * h + j]).margin(1e-12));
    }
}

TEST_CASE("se block zeroes zero input and scales channels uniformly") {
  ModelParameters<double> params;
  Rng rng(9);
  SeParams<double> p(params, "se", 4, rng);
  auto zero = Tensor<double>::zeros({4, 3, 5});
  auto out0 = se_block(zero, p);
  for (size_t i = 0; i < out0.numel(); ++i) CHECK(out0.data()[i] == 0.0);

  auto x = detail::rand_tensor({4, 3, 5}, rng);
  auto y = se_block(x, p);
  // per-channel output/input ratio is constant over positions
  for (size_t c = 0; c < 4; ++c) {
    double ratio = 0.0;
    bool first = true;
    for (size_t i = 0; i < 15; ++i) {
      const double xv = x.data()[c * 15 + i];
      if (std::abs(xv) < 1e-9) continue;
      const double r = y.data()[c * 15 + i] / xv;
      if (first) {
        ratio = r;
        first = false;
      } else {
        CHECK(r == Approx(ratio).margin(1e-12));
      }
    }
    // sigmoid gate lies strictly inside (0,1)
    CHECK(ratio > 0.0);
    CHECK(ratio < 1.0);
  }
}

TEST_CASE("se bottleneck variant runs and differs structurally") {
  ModelParameters<double> params;
  Rng rng(10);
  SeParams<double> p(params, "se", 8, rng, /*reduction_ratio=*/4);
  CHECK(params.has("se.reduce.weight"));
  CHECK(params.has("se.expand.weight"));
  auto x = detail::rand_tensor({8, 2, 3}, rng);
  CHECK(se_block(x, p).shape() == x.shape());
}

TEST_CASE("prelu keeps positives and scales negatives per channel") {
  auto x = Tensor<double>::from({2, 2}, {1.0, -2.0, 3.0, -4.0});
  auto a = Tensor<double>::from({2}, {0.5, 0.25});
  auto y = prelu(x, a);
  CHECK(y.data()[0] == 1.0);
  CHECK(y.data()[1] == -1.0);
  CHECK(y.data()[2] == 3.0);
  CHECK(y.data()[3] == -1.0);
}

TEST_CASE("weight init follows the fan-in rule") {
  Rng rng(11);
  auto w = init_weight<double>({64, 32}, 64, rng);
  const double bound = std::sqrt(1.0 / 64.0);
  for (double v : w.data()) {
    CHECK(v <= bound);
    CHECK(v >= -bound);
  }
  // forget-gate bias of a fresh BLSTM is one, everything else zero
  ModelParameters<double> params;
  BlstmParams<double> p(params, "b", 4, 3, rng);
  for (size_t j = 0; j < 12; ++j) {
    const double expect = (j >= 3 && j < 6) ? 1.0 : 0.0;
    CHECK(p.b_f.data()[j] == expect);
  }
}

// Copyright 2026 dcfnet authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <catch2/catch_amalgamated.hpp>

#include "dcfnet/gradcheck.hpp"
#include "dcfnet/stft.hpp"
#include "dcfnet/wav.hpp"

using namespace dcfnet;
using Catch::Approx;

namespace {

template <typename T>
std::vector<T> random_signal(size_t n, uint64_t seed, double amp = 0.9) {
  Rng rng(seed);
  std::vector<T> v(n);
  for (auto& x : v) x = static_cast<T>(rng.uniform(-amp, amp));
  return v;
}

template <typename T>
double rel_l2(std::span<const T> a, std::span<const T> b) {
  double num = 0.0, den = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    num += d * d;
    den += static_cast<double>(a[i]) * static_cast<double>(a[i]);
  }
  return std::sqrt(num / std::max(den, 1e-300));
}

}  // namespace

TEST_CASE("stft shape arithmetic") {
  auto w = Tensor<double>::from({8000}, random_signal<double>(8000, 1));
  auto s = stft(w);
  CHECK(s.shape() == Shape{2, 129, 63});
}

TEST_CASE("stft of zero signal is zero") {
  auto w = Tensor<double>::zeros({1000});
  auto s = stft(w);
  for (size_t i = 0; i < s.numel(); ++i) CHECK(s.data()[i] == 0.0);
}

TEST_CASE("stft of a constant signal matches the window DFT on interior frames") {
  const size_t n = 2000;
  WindowSpec spec;
  auto w = Tensor<double>::filled({n}, 1.0);
  auto s = stft(w, spec);
  const size_t frames = spec.frames(n);
  const size_t F = spec.bins();

  // Oracle: direct DFT of the analysis window.
  const auto win = detail::sqrt_hann(spec.n_fft);
  std::vector<double> wre(F, 0.0), wim(F, 0.0);
  for (size_t k = 0; k < F; ++k)
    for (size_t i = 0; i < spec.n_fft; ++i) {
      const double a = 2.0 * M_PI * k * i / spec.n_fft;
      wre[k] += win[i] * std::cos(a);
      wim[k] -= win[i] * std::sin(a);
    }
  double win_sum = 0.0;
  for (double v : win) win_sum += v;

  // Interior frames see a pure constant; edge frames see the reflection pad
  // (also constant, so every frame applies).
  for (size_t m : {size_t(5), frames / 2, frames - 3}) {
    CHECK(s.data()[0 * frames + m] == Approx(win_sum).margin(1e-9));
    for (size_t k = 0; k < F; ++k) {
      CHECK(s.data()[k * frames + m] == Approx(wre[k]).margin(1e-9));
      CHECK(s.data()[F * frames + k * frames + m] == Approx(wim[k]).margin(1e-9));
    }
  }
}

TEST_CASE("stft rejects waveforms shorter than hop") {
  auto w = Tensor<double>::zeros({100});
  CHECK_THROWS_AS(stft(w), Error);
}

TEST_CASE("round trip reconstructs the waveform in double") {
  for (size_t len : {size_t(1000), size_t(8000), size_t(8001)}) {
    for (uint64_t seed = 0; seed < 5; ++seed) {
      auto x = random_signal<double>(len, seed * 31 + len);
      auto w = Tensor<double>::from({len}, x);
      auto back = istft(stft(w), len);
      CHECK(rel_l2<double>(std::span<const double>(x), back.data()) < 1e-10);
    }
  }
}

TEST_CASE("round trip in single precision stays under 1e-5") {
  for (size_t len : {size_t(1000), size_t(8000), size_t(8001)}) {
    auto x = random_signal<float>(len, len + 9);
    auto w = Tensor<float>::from({len}, x);
    auto back = istft(stft(w), len);
    CHECK(rel_l2<float>(std::span<const float>(x), back.data()) < 1e-5);
  }
}

TEST_CASE("istft of zero spectrogram is zero, with padding to out_len") {
  auto s = Tensor<double>::zeros({2, 129, 10});
  auto w = istft(s, 2000);
  CHECK(w.numel() == 2000);
  for (size_t i = 0; i < w.numel(); ++i) CHECK(w.data()[i] == 0.0);
}

TEST_CASE("istft is linear in the spectrogram") {
  const size_t len = 1500;
  auto a = stft(Tensor<double>::from({len}, random_signal<double>(len, 3)));
  auto b = stft(Tensor<double>::from({len}, random_signal<double>(len, 4)));
  auto sum = istft(add(a, b), len);
  auto parts = add(istft(a, len), istft(b, len));
  CHECK(rel_l2<double>(sum.data(), parts.data()) < 1e-10);
}

TEST_CASE("stft is linear in the waveform") {
  const size_t len = 1200;
  auto x1 = random_signal<double>(len, 5);
  auto x2 = random_signal<double>(len, 6);
  const double a = 1.25, b = -0.75;
  std::vector<double> mix(len);
  for (size_t i = 0; i < len; ++i) mix[i] = a * x1[i] + b * x2[i];
  auto s_mix = stft(Tensor<double>::from({len}, mix));
  auto s_sep = add(mul_scalar(stft(Tensor<double>::from({len}, x1)), a),
                   mul_scalar(stft(Tensor<double>::from({len}, x2)), b));
  CHECK(rel_l2<double>(s_mix.data(), s_sep.data()) < 1e-10);
}

TEST_CASE("non-COLA window configurations are rejected") {
  WindowSpec bad;
  bad.hop = 96;  // does not tile the sqrt-Hann overlap
  auto s = Tensor<double>::zeros({2, 129, 4});
  CHECK_THROWS_AS(istft(s, 500, bad), ValueError);
  WindowSpec toobig;
  toobig.hop = 300;
  CHECK_THROWS_AS(istft(s, 500, toobig), Error);
}

TEST_CASE("alternate COLA hops work too") {
  WindowSpec quarter;
  quarter.hop = 64;
  const size_t len = 1000;
  auto x = random_signal<double>(len, 7);
  auto back = istft(stft(Tensor<double>::from({len}, x), quarter), len, quarter);
  CHECK(rel_l2<double>(std::span<const double>(x), back.data()) < 1e-10);
}

TEST_CASE("drc on real positive bin takes the magnitude power") {
  // one-bin spectrogram: 4+0j -> 2+0j at exponent 0.5
  auto s = Tensor<double>::from({2, 1, 1}, {4.0, 0.0});
  auto c = drc(s, 0.5);
  CHECK(c.data()[0] == Approx(2.0).margin(1e-12));
  CHECK(c.data()[1] == 0.0);

  auto z = drc(Tensor<double>::from({2, 1, 1}, {0.0, 0.0}), 0.5);
  CHECK(z.data()[0] == 0.0);
  CHECK(z.data()[1] == 0.0);
}

TEST_CASE("drc preserves phase and compresses magnitude") {
  auto s = Tensor<double>::from({2, 1, 1}, {3.0, 4.0});
  auto c = drc(s, 0.5);
  const double mag = std::hypot(c.data()[0], c.data()[1]);
  CHECK(mag == Approx(std::sqrt(5.0)).margin(1e-9));
  CHECK(std::atan2(c.data()[1], c.data()[0]) == Approx(std::atan2(4.0, 3.0)).margin(1e-12));
}

TEST_CASE("idrc inverts drc to 1e-10 over magnitudes up to 100") {
  Rng rng(8);
  const size_t F = 9, Tt = 7;
  std::vector<double> v(2 * F * Tt);
  for (auto& x : v) x = rng.uniform(-70.0, 70.0);  // magnitudes up to ~100
  auto s = Tensor<double>::from({2, F, Tt}, v);
  auto round1 = idrc(drc(s, 0.5), 0.5);
  auto round2 = drc(idrc(s, 0.5), 0.5);
  CHECK(rel_l2<double>(s.data(), round1.data()) < 1e-10);
  CHECK(rel_l2<double>(s.data(), round2.data()) < 1e-10);

  auto two = idrc(Tensor<double>::from({2, 1, 1}, {2.0, 0.0}), 0.5);
  CHECK(two.data()[0] == Approx(4.0).margin(1e-12));
}

TEST_CASE("phase is preserved wherever magnitude is above threshold") {
  Rng rng(12);
  const size_t F = 5, Tt = 6;
  std::vector<double> v(2 * F * Tt);
  for (auto& x : v) x = rng.uniform(-3.0, 3.0);
  auto s = Tensor<double>::from({2, F, Tt}, v);
  auto c = drc(s, 0.3);
  for (size_t j = 0; j < F * Tt; ++j) {
    const double re = s.data()[j], im = s.data()[F * Tt + j];
    if (std::hypot(re, im) > 1e-12) {
      CHECK(std::atan2(c.data()[F * Tt + j], c.data()[j]) ==
            Approx(std::atan2(im, re)).margin(1e-9));
    }
  }
}

TEST_CASE("non-positive exponents are rejected") {
  auto s = Tensor<double>::zeros({2, 2, 2});
  CHECK_THROWS_AS(drc(s, 0.0), Error);
  CHECK_THROWS_AS(drc(s, -0.5), Error);
  CHECK_THROWS_AS(idrc(s, 0.0), Error);
}

TEST_CASE("istft gradient matches finite differences") {
  WindowSpec small;
  small.n_fft = 8;
  small.hop = 4;
  Rng rng(31);
  auto s = detail::rand_tensor({2, 5, 4}, rng);
  detail::ScalarProbe probe(77);
  // istft is linear in the spectrogram, so a large step has no truncation
  // error and lifts the probe far above finite-difference roundoff noise.
  FdOptions opt;
  opt.step = 1e-2;
  auto fd = finite_diff_check(
      {s},
      [&] {
        probe.begin();
        return probe.weigh(istft(s, 12, small));
      },
      opt);
  CHECK(fd < 1e-8);
}

TEST_CASE("stft gradient matches finite differences") {
  WindowSpec small;
  small.n_fft = 8;
  small.hop = 4;
  Rng rng(32);
  auto w = detail::rand_tensor({20}, rng);
  detail::ScalarProbe probe(78);
  FdOptions opt;
  opt.step = 1e-2;  // stft is linear as well
  auto fd = finite_diff_check(
      {w},
      [&] {
        probe.begin();
        return probe.weigh(stft(w, small));
      },
      opt);
  CHECK(fd < 1e-8);
}

TEST_CASE("drc/idrc gradients match finite differences") {
  Rng rng(33);
  auto s = detail::rand_tensor({2, 3, 4}, rng, 2.0);
  detail::ScalarProbe probe(79);
  auto fd = finite_diff_check({s}, [&] {
    probe.begin();
    return probe.weigh(idrc(s, 0.5));
  });
  CHECK(fd < 1e-6);
}

TEST_CASE("wav float round trip and pcm16 reads") {
  Waveform w;
  w.sample_rate = 8000;
  w.samples = random_signal<double>(333, 44, 0.8);
  // float32 storage: quantize the reference the same way
  for (auto& s : w.samples) s = static_cast<double>(static_cast<float>(s));
  const std::string path = "test_roundtrip.wav";
  write_wav(path, w);
  auto r = read_wav(path);
  REQUIRE(r.size() == w.size());
  CHECK(r.sample_rate == 8000);
  for (size_t i = 0; i < w.size(); ++i) CHECK(r.samples[i] == w.samples[i]);
  std::remove(path.c_str());
}

TEST_CASE("wav reader validates format") {
  const std::string path = "test_bogus.wav";
  std::ofstream f(path, std::ios::binary);
  f << "not a wav file at all";
  f.close();
  CHECK_THROWS_AS(read_wav(path), IoError);
  std::remove(path.c_str());
}

TEST_CASE("waveform invariants are enforced") {
  Waveform bad;
  bad.samples = {0.1, 5.0};  // exceeds headroom
  CHECK_THROWS_AS(bad.validate(), ValueError);
  Waveform nan_w;
  nan_w.samples = {0.1, std::nan("")};
  CHECK_THROWS_AS(nan_w.validate(), ValueError);
  Waveform empty;
  CHECK_THROWS_AS(empty.validate(), Error);
}

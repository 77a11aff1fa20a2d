// Copyright 2026 dcfnet authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <catch2/catch_amalgamated.hpp>

#include "dcfnet/gradcheck.hpp"
#include "dcfnet/metrics.hpp"

using namespace dcfnet;
using Catch::Approx;

namespace {

Waveform random_wave(size_t n, uint64_t seed, double amp = 0.9) {
  Rng rng(seed);
  Waveform w;
  w.samples.resize(n);
  for (auto& s : w.samples) s = rng.uniform(-amp, amp);
  return w;
}

void zero_mean(Waveform& w) {
  double m = 0.0;
  for (double s : w.samples) m += s;
  m /= w.size();
  for (double& s : w.samples) s -= m;
}

// n orthogonalized against s (both zero-mean), scaled to the given energy.
Waveform orthogonal_noise(const Waveform& s, uint64_t seed, double energy) {
  Waveform n = random_wave(s.size(), seed, 0.5);
  zero_mean(n);
  double dot = 0.0, ss = 0.0;
  for (size_t i = 0; i < s.size(); ++i) {
    dot += n.samples[i] * s.samples[i];
    ss += s.samples[i] * s.samples[i];
  }
  for (size_t i = 0; i < s.size(); ++i) n.samples[i] -= (dot / ss) * s.samples[i];
  const double scale = std::sqrt(energy / n.energy());
  for (double& v : n.samples) v *= scale;
  return n;
}

}  // namespace

TEST_CASE("orthogonal noise at one tenth the energy gives exactly 10 dB") {
  auto s = random_wave(4096, 1);
  zero_mean(s);
  auto n = orthogonal_noise(s, 2, s.energy() / 10.0);
  Waveform est = s;
  for (size_t i = 0; i < s.size(); ++i) est.samples[i] += n.samples[i];
  CHECK(si_sdr(s, est) == Approx(10.0).margin(1e-6));
}

TEST_CASE("perfect reconstruction up to power-of-two scale hits the +inf sentinel") {
  // Power-of-two scaling is exact in floating point, so the residual
  // cancels to exactly zero and the sentinel is reachable.
  auto s = random_wave(1024, 3);
  Waveform est = s;
  for (double& v : est.samples) v *= 2.0;
  CHECK(std::isinf(si_sdr(s, est)));
  CHECK(si_sdr(s, est) > 0);

  Waveform neg = s;
  for (double& v : neg.samples) v *= -2.0;
  CHECK(std::isinf(si_sdr(s, neg)));
}

TEST_CASE("si_sdr is scale invariant") {
  auto s = random_wave(2048, 4);
  auto est = random_wave(2048, 5);
  const double base = si_sdr(s, est);
  Waveform scaled = est;
  for (double& v : scaled.samples) v *= 2.7;
  CHECK(std::abs(si_sdr(s, scaled) - base) < 1e-9);
}

TEST_CASE("si_sdr is invariant to constant offsets") {
  auto s = random_wave(2048, 6);
  auto est = random_wave(2048, 7);
  const double base = si_sdr(s, est);
  Waveform shifted = est;
  for (double& v : shifted.samples) v += 0.37;
  CHECK(std::abs(si_sdr(s, shifted) - base) < 1e-9);
}

TEST_CASE("si_sdr validates inputs") {
  auto s = random_wave(100, 8);
  auto other = random_wave(99, 9);
  CHECK_THROWS_AS(si_sdr(s, other), Error);
  Waveform zero;
  zero.samples.assign(100, 0.0);
  CHECK_THROWS_AS(si_sdr(zero, s), Error);
}

TEST_CASE("identity system yields zero improvement") {
  auto s = random_wave(3000, 10);
  auto n = orthogonal_noise(s, 11, s.energy());
  Waveform mix = s;
  for (size_t i = 0; i < s.size(); ++i) mix.samples[i] += n.samples[i];
  auto item = improvements(mix, /*s_hat=*/mix, s, "id");
  CHECK(item.si_sdri == 0.0);
  CHECK(item.sdri == 0.0);
  CHECK_FALSE(item.confused);
}

TEST_CASE("orthogonal zero dB mixture makes si_sdri equal si_sdr_est") {
  auto s = random_wave(3000, 12);
  zero_mean(s);
  auto n = orthogonal_noise(s, 13, s.energy());  // 0 dB SNR
  Waveform mix = s;
  for (size_t i = 0; i < s.size(); ++i) mix.samples[i] += n.samples[i];
  auto est = random_wave(3000, 14);
  auto item = improvements(mix, est, s);
  CHECK(item.si_sdr_mix == Approx(0.0).margin(1e-9));
  CHECK(item.si_sdri == Approx(item.si_sdr_est).margin(1e-9));
}

TEST_CASE("oracle system hits the ceiling") {
  auto s = random_wave(2000, 15);
  auto n = orthogonal_noise(s, 16, s.energy() / 4.0);
  Waveform mix = s;
  for (size_t i = 0; i < s.size(); ++i) mix.samples[i] += n.samples[i];
  auto item = improvements(mix, /*s_hat=*/s, s);
  CHECK(std::isinf(item.si_sdr_est));
  CHECK(std::isinf(item.si_sdri));
  CHECK(std::isinf(item.sdri));
  CHECK_FALSE(item.confused);
}

TEST_CASE("tcp_rate counts negative improvements") {
  std::vector<EvalItem> items(1000);
  for (size_t i = 0; i < items.size(); ++i) {
    items[i].si_sdri = 1.0;
    items[i].confused = false;
  }
  for (size_t i : {7, 130, 555, 999}) {
    items[i].si_sdri = -0.5;
    items[i].confused = true;
  }
  CHECK(tcp_rate(items) == 0.004);

  for (auto& it : items) it.confused = false;
  CHECK(tcp_rate(items) == 0.0);
  for (auto& it : items) it.confused = true;
  CHECK(tcp_rate(items) == 1.0);

  std::vector<EvalItem> empty;
  CHECK_THROWS_AS(tcp_rate(empty), Error);
}

TEST_CASE("tcp_rate equals a brute-force count on random lists") {
  Rng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    const size_t n = 1 + rng.randint(200);
    std::vector<EvalItem> items(n);
    size_t expected = 0;
    for (auto& it : items) {
      it.si_sdri = rng.uniform(-5.0, 15.0);
      it.confused = it.si_sdri < 0.0;
      if (it.si_sdri < 0.0) ++expected;
    }
    CHECK(tcp_rate(items) == static_cast<double>(expected) / n);
  }
}

TEST_CASE("report csv has one row per item plus an aggregate footer") {
  EvalReport rep;
  for (int i = 0; i < 5; ++i) {
    EvalItem it;
    it.id = "item" + std::to_string(i);
    it.si_sdri = i - 1.0;
    it.confused = it.si_sdri < 0;
    rep.items.push_back(it);
  }
  const std::string path = "test_report.csv";
  write_report_csv(path, rep);
  std::ifstream f(path);
  std::string line;
  size_t rows = 0;
  std::string last;
  while (std::getline(f, line))
    if (!line.empty()) {
      ++rows;
      last = line;
    }
  CHECK(rows == 1 + 5 + 1);  // header + items + footer
  CHECK(last.substr(0, 9) == "aggregate");
  std::remove(path.c_str());
}

TEST_CASE("si_sdr_loss is finite and large-magnitude at perfect reconstruction") {
  Rng rng(18);
  std::vector<double> v(4000);
  for (auto& x : v) x = rng.uniform(-0.9, 0.9);
  auto s = Tensor<double>::from({4000}, v);
  auto sh = Tensor<double>::from({4000}, v);
  const double loss = si_sdr_loss(s, sh).item();
  CHECK(std::isfinite(loss));
  CHECK(loss <= -80.0);  // epsilon-capped, not infinite
}

TEST_CASE("si_sdr_loss gradient matches finite differences on 64-sample signals") {
  Rng rng(19);
  auto s = detail::rand_tensor({64}, rng);
  auto sh = detail::rand_tensor({64}, rng);
  auto fd = finite_diff_check({sh}, [&] { return si_sdr_loss(s, sh); });
  CHECK(fd < 1e-6);
}

TEST_CASE("si_sdr_loss agrees with the pure metric away from the caps") {
  Rng rng(23);
  const size_t n = 512;
  std::vector<double> sv(n), ev(n);
  for (auto& x : sv) x = rng.uniform(-0.9, 0.9);
  for (auto& x : ev) x = rng.uniform(-0.9, 0.9);
  auto loss = si_sdr_loss(Tensor<double>::from({n}, sv), Tensor<double>::from({n}, ev)).item();
  Waveform ws, we;
  ws.samples = sv;
  we.samples = ev;
  CHECK(loss == Approx(-si_sdr(ws, we)).margin(1e-6));
}

TEST_CASE("directly optimizing the estimate decreases the loss monotonically") {
  Rng rng(20);
  const size_t n = 64;
  std::vector<double> target(n), est(n);
  for (auto& x : target) x = rng.uniform(-1.0, 1.0);
  for (auto& x : est) x = 0.1 * rng.normal();
  auto s = Tensor<double>::from({n}, target);
  auto sh = Tensor<double>::from({n}, est, /*requires_grad=*/true);

  double prev = std::numeric_limits<double>::infinity();
  const double lr = 5e-4;
  for (int step = 0; step < 50; ++step) {
    sh.zero_grad();
    auto loss = si_sdr_loss(s, sh);
    const double value = loss.item();
    CHECK(value < prev);
    prev = value;
    loss.backward();
    auto vals = sh.mutable_data();
    for (size_t i = 0; i < n; ++i) vals[i] -= lr * sh.grad()[i];
  }
  CHECK(prev < -5.0);  // descended ~30 dB from the initial loss
}

TEST_CASE("scatter csv writes one row per point") {
  std::vector<ScatterPoint> pts{{10.0, -3.0}, {8.5, -1.0}};
  const std::string path = "test_scatter.csv";
  write_scatter_csv(path, pts);
  std::ifstream f(path);
  std::string line;
  size_t rows = 0;
  while (std::getline(f, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 3);
  std::remove(path.c_str());
}

// Copyright 2026 dcfnet authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// SI-SDR and SDR metrics, per-item improvement bookkeeping and the
// differentiable SI-SDR training loss. Metrics are computed in double no
// matter what precision the network runs at. Exact reconstructions hit
// +/- infinity sentinels in the pure metrics; only the loss is
// epsilon-stabilized.

#pragma once

#include <fstream>
#include <limits>
#include <vector>

#include "dcfnet/nn.hpp"
#include "dcfnet/wav.hpp"

namespace dcfnet {

// Scale-invariant SDR in dB. Both signals are zero-meaned first; the target
// projection s~ = (<s,s_hat>/||s||^2) s and residual e~ = s_hat - s~ give
// 10 log10(||s~||^2 / ||e~||^2).
inline double si_sdr(const Waveform& s, const Waveform& s_hat) {
  check(s.size() == s_hat.size(), "si_sdr: length mismatch");
  const size_t n = s.size();
  check(n > 0, "si_sdr: empty signals");
  double ms = 0.0, mh = 0.0;
  for (size_t i = 0; i < n; ++i) {
    ms += s.samples[i];
    mh += s_hat.samples[i];
  }
  ms /= n;
  mh /= n;
  double dot = 0.0, ss = 0.0, hh = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double a = s.samples[i] - ms;
    const double b = s_hat.samples[i] - mh;
    dot += a * b;
    ss += a * a;
    hh += b * b;
  }
  check(ss > 0.0, "si_sdr: zero reference signal");
  const double scale = dot / ss;
  const double target_e = scale * scale * ss;  // ||s~||^2
  // ||e~||^2 = ||s_hat||^2 - 2 scale <s,s_hat> + scale^2 ||s||^2
  const double resid_e = hh - 2.0 * scale * dot + target_e;
  if (target_e == 0.0) return -std::numeric_limits<double>::infinity();
  if (resid_e <= 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(target_e / resid_e);
}

// Plain energy-ratio SDR (no allowed-distortion projection):
// 10 log10(||s||^2 / ||s - s_hat||^2).
inline double sdr(const Waveform& s, const Waveform& s_hat) {
  check(s.size() == s_hat.size(), "sdr: length mismatch");
  double se = 0.0, de = 0.0;
  for (size_t i = 0; i < s.size(); ++i) {
    const double d = s.samples[i] - s_hat.samples[i];
    se += s.samples[i] * s.samples[i];
    de += d * d;
  }
  if (de == 0.0) return std::numeric_limits<double>::infinity();
  if (se == 0.0) return -std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(se / de);
}

struct EvalItem {
  std::string id;
  double si_sdr_mix = 0.0;
  double si_sdr_est = 0.0;
  double si_sdri = 0.0;
  double sdri = 0.0;
  bool confused = false;  // si_sdri < 0
};

inline EvalItem improvements(const Waveform& mix, const Waveform& s_hat, const Waveform& s,
                             std::string id = "") {
  EvalItem item;
  item.id = std::move(id);
  item.si_sdr_mix = si_sdr(s, mix);
  item.si_sdr_est = si_sdr(s, s_hat);
  item.si_sdri = item.si_sdr_est - item.si_sdr_mix;
  item.sdri = sdr(s, s_hat) - sdr(s, mix);
  item.confused = item.si_sdri < 0.0;
  return item;
}

inline double tcp_rate(const std::vector<EvalItem>& items) {
  check(!items.empty(), "tcp_rate: empty item list");
  size_t confused = 0;
  for (const auto& it : items)
    if (it.confused) ++confused;
  return static_cast<double>(confused) / static_cast<double>(items.size());
}

struct EvalReport {
  std::vector<EvalItem> items;

  double mean_si_sdri() const {
    double s = 0.0;
    for (const auto& it : items) s += it.si_sdri;
    return s / static_cast<double>(items.size());
  }
  double mean_sdri() const {
    double s = 0.0;
    for (const auto& it : items) s += it.sdri;
    return s / static_cast<double>(items.size());
  }
  double tcp() const { return tcp_rate(items); }
};

inline void write_report_csv(const std::string& path, const EvalReport& report) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path);
  f << "id,si_sdr_mix,si_sdr_est,si_sdri,sdri,confused\n";
  f.precision(9);
  for (const auto& it : report.items)
    f << it.id << ',' << it.si_sdr_mix << ',' << it.si_sdr_est << ',' << it.si_sdri << ','
      << it.sdri << ',' << (it.confused ? 1 : 0) << '\n';
  // Aggregate footer: means per metric column, TCP rate in the confused slot.
  double mix = 0.0, est = 0.0;
  for (const auto& it : report.items) {
    mix += it.si_sdr_mix;
    est += it.si_sdr_est;
  }
  const double n = static_cast<double>(report.items.size());
  f << "aggregate," << mix / n << ',' << est / n << ',' << report.mean_si_sdri() << ','
    << report.mean_sdri() << ',' << report.tcp() << '\n';
  if (!f) throw IoError("short write: " + path);
}

// Scatter data for confusion plots: SI-SDRi of the estimate against the
// target speaker (s1) and against the interfering speaker (s2).
struct ScatterPoint {
  double si_sdri_s1 = 0.0;
  double si_sdri_s2 = 0.0;
};

inline void write_scatter_csv(const std::string& path, const std::vector<ScatterPoint>& pts) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path);
  f << "si_sdri_s1,si_sdri_s2\n";
  f.precision(9);
  for (const auto& p : pts) f << p.si_sdri_s1 << ',' << p.si_sdri_s2 << '\n';
  if (!f) throw IoError("short write: " + path);
}

// Differentiable negative SI-SDR with epsilon-stabilized denominators.
// `target` is treated as a constant; gradients flow through `estimate`.
template <typename T>
Tensor<T> si_sdr_loss(const Tensor<T>& target, const Tensor<T>& estimate, T eps = T(1e-8)) {
  check_shape(target.shape() == estimate.shape(), "si_sdr_loss: shape mismatch");
  check_shape(target.rank() == 1, "si_sdr_loss: expects rank-1 waveforms");
  auto zm_t = sub(target, broadcast_scalar(mean_all(target), target.shape()));
  auto zm_e = sub(estimate, broadcast_scalar(mean_all(estimate), estimate.shape()));
  auto dot = sum_all(mul(zm_t, zm_e));
  auto ss = add_scalar(sum_all(mul(zm_t, zm_t)), eps);
  auto scale = div(dot, ss);
  auto s_tilde = mul(broadcast_scalar(scale, target.shape()), zm_t);
  auto e_tilde = sub(zm_e, s_tilde);
  auto num = add_scalar(sum_all(mul(s_tilde, s_tilde)), eps);
  auto den = add_scalar(sum_all(mul(e_tilde, e_tilde)), eps);
  const T k = static_cast<T>(-10.0 / std::log(10.0));
  return mul_scalar(log_op(div(num, den)), k);
}

}  // namespace dcfnet

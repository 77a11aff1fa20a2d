// Copyright 2026 dcfnet authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// Waveform <-> compressed complex spectrogram conversions. The analysis and
// synthesis windows are both square-root Hann so the overlap-add product
// window is plain Hann, which satisfies constant overlap-add at hop = n_fft/2.
// Spectrograms are [2,F,T] tensors (channel 0 real, channel 1 imaginary)
// with F = n_fft/2 + 1 bins.

#pragma once

#include <map>
#include <mutex>

#include "dcfnet/tensor.hpp"
#include "dcfnet/wav.hpp"

namespace dcfnet {

struct WindowSpec {
  size_t n_fft = 256;
  size_t hop = 128;
  bool centered = true;

  size_t bins() const { return n_fft / 2 + 1; }
  size_t frames(size_t len) const { return len / hop + 1; }
};

namespace detail {

inline std::vector<double> sqrt_hann(size_t n) {
  std::vector<double> w(n);
  for (size_t i = 0; i < n; ++i)
    w[i] = std::sqrt(0.5 * (1.0 - std::cos(2.0 * M_PI * static_cast<double>(i) / n)));
  return w;
}

// Cached DFT tables and window for one configuration.
struct StftTables {
  size_t n_fft = 0;
  std::vector<double> window;             // sqrt-Hann, n_fft
  std::vector<double> cos_t, sin_t;       // [F][n_fft]

  explicit StftTables(size_t n) : n_fft(n), window(sqrt_hann(n)) {
    const size_t F = n / 2 + 1;
    cos_t.resize(F * n);
    sin_t.resize(F * n);
    for (size_t k = 0; k < F; ++k)
      for (size_t i = 0; i < n; ++i) {
        const double a = 2.0 * M_PI * static_cast<double>(k) * static_cast<double>(i) / n;
        cos_t[k * n + i] = std::cos(a);
        sin_t[k * n + i] = std::sin(a);
      }
    // DC and Nyquist rows are exactly real; pin them so the imaginary parts
    // (and their gradients) vanish identically instead of at ~1e-16.
    for (size_t i = 0; i < n; ++i) {
      sin_t[0 * n + i] = 0.0;
      sin_t[(F - 1) * n + i] = 0.0;
      cos_t[(F - 1) * n + i] = (i % 2 == 0) ? 1.0 : -1.0;
    }
  }
};

inline const StftTables& stft_tables(size_t n_fft) {
  static std::map<size_t, StftTables> cache;
  static std::mutex m;
  std::lock_guard<std::mutex> lock(m);
  auto it = cache.find(n_fft);
  if (it == cache.end()) it = cache.emplace(n_fft, StftTables(n_fft)).first;
  return it->second;
}

// Fold an out-of-range index back into [0, n) by reflection (no edge repeat).
inline size_t reflect_index(ptrdiff_t i, size_t n) {
  if (n == 1) return 0;
  const ptrdiff_t period = 2 * static_cast<ptrdiff_t>(n) - 2;
  ptrdiff_t r = i % period;
  if (r < 0) r += period;
  if (r >= static_cast<ptrdiff_t>(n)) r = period - r;
  return static_cast<size_t>(r);
}

inline void validate_window(const WindowSpec& spec) {
  check(spec.n_fft >= 2 && spec.n_fft % 2 == 0, "window: n_fft must be even and >= 2");
  check(spec.hop >= 1 && spec.hop <= spec.n_fft, "window: hop must be in [1, n_fft]");
  check(spec.centered, "window: only centered framing is supported");
  // Constant overlap-add: the product of analysis and synthesis windows,
  // summed over all hop shifts, must be flat over the interior.
  const auto w = sqrt_hann(spec.n_fft);
  std::vector<double> acc(4 * spec.n_fft, 0.0);
  for (size_t start = 0; start + spec.n_fft <= acc.size(); start += spec.hop)
    for (size_t i = 0; i < spec.n_fft; ++i) acc[start + i] += w[i] * w[i];
  double lo = 1e300, hi = -1e300;
  for (size_t i = spec.n_fft; i + spec.n_fft < acc.size(); ++i) {
    lo = std::min(lo, acc[i]);
    hi = std::max(hi, acc[i]);
  }
  if (!(hi - lo < 1e-6 * hi))
    throw ValueError("window: configuration violates constant overlap-add (n_fft=" +
                     std::to_string(spec.n_fft) + ", hop=" + std::to_string(spec.hop) + ")");
}

}  // namespace detail

// Short-time Fourier transform of a waveform tensor [n] -> [2,F,T] with
// T = floor(n/hop) + 1 (centered, reflection padding of n_fft/2 per side).
template <typename T>
Tensor<T> stft(const Tensor<T>& wave, const WindowSpec& spec = {}) {
  detail::validate_window(spec);
  check_shape(wave.rank() == 1, "stft: waveform must be rank 1");
  const size_t n = wave.numel();
  check(n >= spec.hop, "stft: waveform shorter than hop");
  const size_t N = spec.n_fft, H = spec.hop, P = N / 2;
  const size_t F = spec.bins();
  const size_t frames = spec.frames(n);
  const auto& tab = detail::stft_tables(N);

  // Centered reflection padding.
  std::vector<T> padded(n + N);
  const auto xv = wave.data();
  for (size_t i = 0; i < padded.size(); ++i)
    padded[i] = xv[detail::reflect_index(static_cast<ptrdiff_t>(i) - static_cast<ptrdiff_t>(P), n)];

  std::vector<T> out(2 * F * frames);
  std::vector<T> frame(N);
  for (size_t m = 0; m < frames; ++m) {
    for (size_t i = 0; i < N; ++i)
      frame[i] = padded[m * H + i] * static_cast<T>(tab.window[i]);
    for (size_t k = 0; k < F; ++k) {
      const double* ck = tab.cos_t.data() + k * N;
      const double* sk = tab.sin_t.data() + k * N;
      T re = T(0), im = T(0);
      for (size_t i = 0; i < N; ++i) {
        re += frame[i] * static_cast<T>(ck[i]);
        im -= frame[i] * static_cast<T>(sk[i]);
      }
      out[k * frames + m] = re;
      out[F * frames + k * frames + m] = im;
    }
  }
  return detail::make_op<T>(
      "stft", {2, F, frames}, std::move(out), {wave},
      [n, N, H, P, F, frames](detail::Node<T>& self, const std::vector<T>& up,
                              detail::GradTable<T>& gtab) {
        auto& p = self.parents[0];
        if (!p->requires_grad) return;
        const auto& tab = detail::stft_tables(N);
        // Adjoint: per-frame inverse projection, windowed overlap-add into the
        // padded buffer, then reflect-scatter back onto the signal.
        std::vector<T> gpad(n + N, T(0));
        for (size_t m = 0; m < frames; ++m)
          for (size_t i = 0; i < N; ++i) {
            T acc = T(0);
            for (size_t k = 0; k < F; ++k) {
              acc += up[k * frames + m] * static_cast<T>(tab.cos_t[k * N + i]);
              acc -= up[F * frames + k * frames + m] * static_cast<T>(tab.sin_t[k * N + i]);
            }
            gpad[m * H + i] += acc * static_cast<T>(tab.window[i]);
          }
        std::vector<T> g(n, T(0));
        for (size_t i = 0; i < gpad.size(); ++i)
          g[detail::reflect_index(static_cast<ptrdiff_t>(i) - static_cast<ptrdiff_t>(P), n)] +=
              gpad[i];
        detail::accum(gtab, p, std::move(g));
      });
}

// Inverse STFT: [2,F,T] -> waveform [out_len]. Windowed overlap-add with
// per-sample normalization by the overlap-added product window, so edge
// frames (where fewer windows overlap) reconstruct exactly too.
template <typename T>
Tensor<T> istft(const Tensor<T>& spec_t, size_t out_len, const WindowSpec& spec = {}) {
  detail::validate_window(spec);
  check_shape(spec_t.rank() == 3 && spec_t.dim(0) == 2, "istft: input must be [2,F,T]");
  const size_t N = spec.n_fft, H = spec.hop, P = N / 2;
  const size_t F = spec.bins();
  check_shape(spec_t.dim(1) == F, "istft: F must be n_fft/2+1 for the window spec");
  const size_t frames = spec_t.dim(2);
  const auto& tab = detail::stft_tables(N);

  const size_t padded_len = (frames - 1) * H + N;
  // Normalization: sum over frames of analysis*synthesis window at each tap.
  auto wsum = std::make_shared<std::vector<double>>(padded_len, 0.0);
  for (size_t m = 0; m < frames; ++m)
    for (size_t i = 0; i < N; ++i) (*wsum)[m * H + i] += tab.window[i] * tab.window[i];

  const auto sv = spec_t.data();
  std::vector<T> acc(padded_len, T(0));
  std::vector<T> frame(N);
  const T invN = T(1.0 / static_cast<double>(N));
  for (size_t m = 0; m < frames; ++m) {
    // Real inverse DFT with Hermitian symmetry over rfft bins.
    for (size_t i = 0; i < N; ++i) {
      T s = sv[0 * frames + m];  // k = 0 real
      for (size_t k = 1; k + 1 < F; ++k) {
        s += T(2) * (sv[k * frames + m] * static_cast<T>(tab.cos_t[k * N + i]) -
                     sv[F * frames + k * frames + m] * static_cast<T>(tab.sin_t[k * N + i]));
      }
      s += sv[(F - 1) * frames + m] * static_cast<T>(tab.cos_t[(F - 1) * N + i]);
      frame[i] = s * invN;
    }
    for (size_t i = 0; i < N; ++i)
      acc[m * H + i] += frame[i] * static_cast<T>(tab.window[i]);
  }
  std::vector<T> out(out_len, T(0));
  for (size_t j = 0; j < out_len; ++j) {
    const size_t p = P + j;
    if (p < padded_len && (*wsum)[p] > 1e-12)
      out[j] = acc[p] / static_cast<T>((*wsum)[p]);
  }
  return detail::make_op<T>(
      "istft", {out_len}, std::move(out), {spec_t},
      [N, H, P, F, frames, out_len, padded_len, wsum](detail::Node<T>& self,
                                                      const std::vector<T>& up,
                                                      detail::GradTable<T>& gtab) {
        auto& p = self.parents[0];
        if (!p->requires_grad) return;
        const auto& tab = detail::stft_tables(N);
        std::vector<T> gacc(padded_len, T(0));
        for (size_t j = 0; j < out_len; ++j) {
          const size_t q = P + j;
          if (q < padded_len && (*wsum)[q] > 1e-12)
            gacc[q] = up[j] / static_cast<T>((*wsum)[q]);
        }
        std::vector<T> g(2 * F * frames, T(0));
        std::vector<T> gframe(N);
        const T invN = T(1.0 / static_cast<double>(N));
        for (size_t m = 0; m < frames; ++m) {
          for (size_t i = 0; i < N; ++i)
            gframe[i] = gacc[m * H + i] * static_cast<T>(tab.window[i]) * invN;
          for (size_t k = 0; k < F; ++k) {
            const double* ck = tab.cos_t.data() + k * N;
            const double* sk = tab.sin_t.data() + k * N;
            const T mult = (k == 0 || k == F - 1) ? T(1) : T(2);
            T gre = T(0), gim = T(0);
            for (size_t i = 0; i < N; ++i) {
              gre += gframe[i] * static_cast<T>(ck[i]);
              gim -= gframe[i] * static_cast<T>(sk[i]);
            }
            g[k * frames + m] += mult * gre;
            g[F * frames + k * frames + m] += mult * gim;
          }
        }
        detail::accum(gtab, p, std::move(g));
      });
}

namespace detail {

// |x|^q with phase preserved, elementwise over a [2,F,T] spectrogram.
// Zero bins map to zero; the gradient there is defined as zero.
template <typename T>
Tensor<T> complex_mag_pow(const Tensor<T>& s, double q, const char* name) {
  check_shape(s.rank() == 3 && s.dim(0) == 2, std::string(name) + ": input must be [2,F,T]");
  const size_t M = s.dim(1) * s.dim(2);
  std::vector<T> out(2 * M);
  const auto sv = s.data();
  for (size_t j = 0; j < M; ++j) {
    const double re = static_cast<double>(sv[j]);
    const double im = static_cast<double>(sv[M + j]);
    const double r = std::hypot(re, im);
    const double f = r > 0.0 ? std::pow(r, q - 1.0) : 0.0;
    out[j] = static_cast<T>(re * f);
    out[M + j] = static_cast<T>(im * f);
  }
  return make_op<T>(
      name, s.shape(), std::move(out), {s},
      [M, q](Node<T>& self, const std::vector<T>& up, GradTable<T>& gtab) {
        auto& p = self.parents[0];
        if (!p->requires_grad) return;
        std::vector<T> g(2 * M, T(0));
        for (size_t j = 0; j < M; ++j) {
          const double re = static_cast<double>(p->value[j]);
          const double im = static_cast<double>(p->value[M + j]);
          const double r2 = re * re + im * im;
          if (r2 < 1e-24) continue;
          const double r = std::sqrt(r2);
          const double f = std::pow(r, q - 1.0);
          const double h = (q - 1.0) * std::pow(r, q - 3.0);
          const double ure = static_cast<double>(up[j]);
          const double uim = static_cast<double>(up[M + j]);
          g[j] = static_cast<T>(ure * (f + h * re * re) + uim * h * re * im);
          g[M + j] = static_cast<T>(ure * h * re * im + uim * (f + h * im * im));
        }
        accum(gtab, p, std::move(g));
      });
}

}  // namespace detail

// Dynamic range compression: per-bin magnitude |x| -> |x|^exponent, phase
// preserved. exponent in (0,1] compresses; idrc applies the exact inverse.
template <typename T>
Tensor<T> drc(const Tensor<T>& s, double exponent) {
  check(exponent > 0.0, "drc: exponent must be positive");
  return detail::complex_mag_pow(s, exponent, "drc");
}

template <typename T>
Tensor<T> idrc(const Tensor<T>& s, double exponent) {
  check(exponent > 0.0, "idrc: exponent must be positive");
  return detail::complex_mag_pow(s, 1.0 / exponent, "idrc");
}

}  // namespace dcfnet

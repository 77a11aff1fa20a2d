// Copyright 2026 dcfnet authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include "dcfnet/tensor.hpp"

namespace dcfnet {

enum class Padding { kSame, kValid };

struct ConvSpec {
  size_t stride_h = 1, stride_w = 1;
  size_t dilation_h = 1, dilation_w = 1;
  Padding padding = Padding::kSame;
  size_t groups = 1;
};

namespace detail {

struct ConvDims {
  size_t c_in, h, w;
  size_t c_out, cg, kh, kw;
  size_t pad_top, pad_left;
  size_t h_out, w_out;
  size_t groups;
  size_t stride_h, stride_w, dil_h, dil_w;
};

inline ConvDims conv_dims(const Shape& in, const Shape& kernel, const ConvSpec& spec) {
  check_shape(in.size() == 3, "conv2d: input must be [C,H,W], got " + shape_str(in));
  check_shape(kernel.size() == 4, "conv2d: kernel must be [C_out,C_in/groups,kh,kw], got " +
                                      shape_str(kernel));
  ConvDims d{};
  d.c_in = in[0];
  d.h = in[1];
  d.w = in[2];
  d.c_out = kernel[0];
  d.cg = kernel[1];
  d.kh = kernel[2];
  d.kw = kernel[3];
  d.groups = spec.groups;
  d.stride_h = spec.stride_h;
  d.stride_w = spec.stride_w;
  d.dil_h = spec.dilation_h;
  d.dil_w = spec.dilation_w;
  check_shape(d.groups >= 1 && d.c_in % d.groups == 0,
              "conv2d: groups must divide input channels");
  check_shape(d.c_out % d.groups == 0, "conv2d: groups must divide output channels");
  check_shape(d.cg == d.c_in / d.groups,
              "conv2d: kernel in-channels " + std::to_string(d.cg) + " != C_in/groups");
  const size_t eff_kh = d.dil_h * (d.kh - 1) + 1;
  const size_t eff_kw = d.dil_w * (d.kw - 1) + 1;
  size_t pad_h = 0, pad_w = 0;
  if (spec.padding == Padding::kSame) {
    pad_h = eff_kh - 1;
    pad_w = eff_kw - 1;
  } else {
    check_shape(d.h >= eff_kh && d.w >= eff_kw, "conv2d: input smaller than kernel");
  }
  d.pad_top = pad_h / 2;
  d.pad_left = pad_w / 2;
  d.h_out = (d.h + pad_h - eff_kh) / d.stride_h + 1;
  d.w_out = (d.w + pad_w - eff_kw) / d.stride_w + 1;
  return d;
}

// Valid output range [lo, hi) along one axis for a fixed kernel tap, i.e.
// all xo with 0 <= xo*stride + tap_offset < extent. Hoisting this out of the
// inner loops removes per-element bounds checks.
inline void tap_range(ptrdiff_t tap_off, size_t stride, size_t extent, size_t out_extent,
                      size_t& lo, size_t& hi) {
  ptrdiff_t lo_s = 0;
  if (tap_off < 0)
    lo_s = (-tap_off + static_cast<ptrdiff_t>(stride) - 1) / static_cast<ptrdiff_t>(stride);
  ptrdiff_t hi_s = (static_cast<ptrdiff_t>(extent) - tap_off +
                    static_cast<ptrdiff_t>(stride) - 1) /
                   static_cast<ptrdiff_t>(stride);
  hi_s = std::min<ptrdiff_t>(hi_s, static_cast<ptrdiff_t>(out_extent));
  lo = static_cast<size_t>(std::max<ptrdiff_t>(lo_s, 0));
  hi = static_cast<size_t>(std::max<ptrdiff_t>(hi_s, static_cast<ptrdiff_t>(lo)));
}

}  // namespace detail

// 2-D cross-correlation (no kernel flip), zero padding.
//   input  [C_in, H, W]
//   kernel [C_out, C_in/groups, kh, kw]
//   bias   [C_out] or undefined
// Depthwise convolution is groups == C_in == C_out.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                 const ConvSpec& spec = {}) {
  const auto d = detail::conv_dims(input.shape(), kernel.shape(), spec);
  const bool has_bias = bias.defined();
  if (has_bias)
    check_shape(bias.rank() == 1 && bias.dim(0) == d.c_out, "conv2d: bias must be [C_out]");

  std::vector<T> out(d.c_out * d.h_out * d.w_out, T(0));
  const auto in = input.data();
  const auto kw_ = kernel.data();
  const size_t out_per_group = d.c_out / d.groups;

  for (size_t o = 0; o < d.c_out; ++o) {
    T* oplane = out.data() + o * d.h_out * d.w_out;
    if (has_bias) {
      const T b = bias.data()[o];
      for (size_t i = 0; i < d.h_out * d.w_out; ++i) oplane[i] = b;
    }
    const size_t g = o / out_per_group;
    for (size_t ic = 0; ic < d.cg; ++ic) {
      const T* iplane = in.data() + (g * d.cg + ic) * d.h * d.w;
      const T* kplane = kw_.data() + (o * d.cg + ic) * d.kh * d.kw;
      for (size_t ky = 0; ky < d.kh; ++ky)
        for (size_t kx = 0; kx < d.kw; ++kx) {
          const T wv = kplane[ky * d.kw + kx];
          if (wv == T(0)) continue;
          const ptrdiff_t off_y =
              static_cast<ptrdiff_t>(ky * d.dil_h) - static_cast<ptrdiff_t>(d.pad_top);
          const ptrdiff_t off_x =
              static_cast<ptrdiff_t>(kx * d.dil_w) - static_cast<ptrdiff_t>(d.pad_left);
          size_t ylo, yhi, xlo, xhi;
          detail::tap_range(off_y, d.stride_h, d.h, d.h_out, ylo, yhi);
          detail::tap_range(off_x, d.stride_w, d.w, d.w_out, xlo, xhi);
          for (size_t yo = ylo; yo < yhi; ++yo) {
            const T* irow = iplane + (yo * d.stride_h + off_y) * d.w + off_x;
            T* orow = oplane + yo * d.w_out;
            if (d.stride_w == 1) {
              for (size_t xo = xlo; xo < xhi; ++xo) orow[xo] += wv * irow[xo];
            } else {
              for (size_t xo = xlo; xo < xhi; ++xo) orow[xo] += wv * irow[xo * d.stride_w];
            }
          }
        }
    }
  }

  std::vector<Tensor<T>> parents{input, kernel};
  if (has_bias) parents.push_back(bias);
  return detail::make_op<T>(
      "conv2d", {d.c_out, d.h_out, d.w_out}, std::move(out), std::move(parents),
      [d, has_bias, out_per_group](detail::Node<T>& self, const std::vector<T>& up,
                                   detail::GradTable<T>& gtab) {
        auto& pin = self.parents[0];
        auto& pker = self.parents[1];
        const auto& in = pin->value;
        const auto& kw_ = pker->value;
        const bool want_gin = pin->requires_grad;
        const bool want_gker = pker->requires_grad;
        std::vector<T> gin, gker;
        if (want_gin) gin.assign(pin->numel(), T(0));
        if (want_gker) gker.assign(pker->numel(), T(0));
        if (want_gin || want_gker) {
          for (size_t o = 0; o < d.c_out; ++o) {
            const T* uplane = up.data() + o * d.h_out * d.w_out;
            const size_t g = o / out_per_group;
            for (size_t ic = 0; ic < d.cg; ++ic) {
              const size_t in_off = (g * d.cg + ic) * d.h * d.w;
              const size_t k_off = (o * d.cg + ic) * d.kh * d.kw;
              for (size_t ky = 0; ky < d.kh; ++ky)
                for (size_t kx = 0; kx < d.kw; ++kx) {
                  const T wv = kw_[k_off + ky * d.kw + kx];
                  const ptrdiff_t off_y =
                      static_cast<ptrdiff_t>(ky * d.dil_h) - static_cast<ptrdiff_t>(d.pad_top);
                  const ptrdiff_t off_x =
                      static_cast<ptrdiff_t>(kx * d.dil_w) - static_cast<ptrdiff_t>(d.pad_left);
                  size_t ylo, yhi, xlo, xhi;
                  detail::tap_range(off_y, d.stride_h, d.h, d.h_out, ylo, yhi);
                  detail::tap_range(off_x, d.stride_w, d.w, d.w_out, xlo, xhi);
                  T wgrad = T(0);
                  for (size_t yo = ylo; yo < yhi; ++yo) {
                    const T* urow = uplane + yo * d.w_out;
                    const size_t irow = in_off + (yo * d.stride_h + off_y) * d.w + off_x;
                    if (d.stride_w == 1) {
                      if (want_gin) {
                        T* grow = gin.data() + irow;
                        for (size_t xo = xlo; xo < xhi; ++xo) grow[xo] += wv * urow[xo];
                      }
                      if (want_gker && xhi > xlo)
                        wgrad += detail::dot_lanes(urow + xlo, in.data() + irow + xlo, xhi - xlo);
                    } else {
                      for (size_t xo = xlo; xo < xhi; ++xo) {
                        const size_t xi = irow + xo * d.stride_w;
                        if (want_gin) gin[xi] += wv * urow[xo];
                        if (want_gker) wgrad += urow[xo] * in[xi];
                      }
                    }
                  }
                  if (want_gker) gker[k_off + ky * d.kw + kx] += wgrad;
                }
            }
          }
        }
        if (want_gin) detail::accum(gtab, pin, std::move(gin));
        if (want_gker) detail::accum(gtab, pker, std::move(gker));
        if (has_bias && self.parents[2]->requires_grad) {
          std::vector<T> gb(d.c_out, T(0));
          for (size_t o = 0; o < d.c_out; ++o) {
            const T* uplane = up.data() + o * d.h_out * d.w_out;
            for (size_t i = 0; i < d.h_out * d.w_out; ++i) gb[o] += uplane[i];
          }
          detail::accum(gtab, self.parents[2], std::move(gb));
        }
      });
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const ConvSpec& spec = {}) {
  return conv2d(input, kernel, Tensor<T>(), spec);
}

}  // namespace dcfnet

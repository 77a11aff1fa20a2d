// Copyright 2026 dcfnet authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// Layer primitives composed by the extraction network: named parameter
// store, linear / conv layers, multi-head attention and a fused BLSTM with
// hand-written backpropagation through time.

#pragma once

#include <map>
#include <utility>

#include "dcfnet/conv.hpp"
#include "dcfnet/rng.hpp"
#include "dcfnet/tensor.hpp"

namespace dcfnet {

// Named, hierarchically addressed collection of learnable tensors.
// Iteration order is lexicographic (std::map), which fixes checkpoint layout
// and gradient-reduction order.
template <typename T>
class ModelParameters {
 public:
  Tensor<T> add(const std::string& name, Tensor<T> t) {
    check(!entries_.count(name), "duplicate parameter name: " + name);
    t.set_requires_grad(true);
    entries_.emplace(name, t);
    return t;
  }

  bool has(const std::string& name) const { return entries_.count(name) != 0; }

  Tensor<T>& at(const std::string& name) {
    auto it = entries_.find(name);
    check(it != entries_.end(), "unknown parameter: " + name);
    return it->second;
  }

  const std::map<std::string, Tensor<T>>& entries() const { return entries_; }
  std::map<std::string, Tensor<T>>& entries() { return entries_; }

  size_t count_scalars() const {
    size_t n = 0;
    for (auto& [k, v] : entries_) n += v.numel();
    return n;
  }

  void zero_grad() {
    for (auto& [k, v] : entries_) v.zero_grad();
  }

 private:
  std::map<std::string, Tensor<T>> entries_;
};

// Uniform +-sqrt(1/fan_in) for weights, zeros for biases, ones for gains.
template <typename T>
Tensor<T> init_weight(Shape shape, size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
  std::vector<T> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
  return Tensor<T>::from(std::move(shape), std::move(v));
}

template <typename T>
Tensor<T> init_zeros(Shape shape) {
  return Tensor<T>::zeros(std::move(shape));
}

template <typename T>
Tensor<T> init_ones(Shape shape) {
  return Tensor<T>::filled(std::move(shape), T(1));
}

// Broadcast a scalar tensor to an arbitrary shape (gradient sums back).
template <typename T>
Tensor<T> broadcast_scalar(const Tensor<T>& s, Shape shape) {
  check_shape(s.numel() == 1, "broadcast_scalar: source must be scalar");
  std::vector<T> out(shape_numel(shape), s.data()[0]);
  return detail::make_op<T>(
      "broadcast_scalar", std::move(shape), std::move(out), {s},
      [](detail::Node<T>& self, const std::vector<T>& up, detail::GradTable<T>& gtab) {
        auto& p = self.parents[0];
        if (!p->requires_grad) return;
        T s = T(0);
        for (T v : up) s += v;
        gtab.at(p.get(), 1)[0] += s;
      });
}

// ---------------------------------------------------------------------------
// Linear: y = x W + b with W stored [in, out].

template <typename T>
struct Linear {
  Tensor<T> weight, bias;
  size_t in = 0, out = 0;

  Linear() = default;
  Linear(ModelParameters<T>& params, const std::string& prefix, size_t in_dim, size_t out_dim,
         Rng& rng, bool with_bias = true)
      : in(in_dim), out(out_dim) {
    weight = params.add(prefix + ".weight", init_weight<T>({in_dim, out_dim}, in_dim, rng));
    if (with_bias) bias = params.add(prefix + ".bias", init_zeros<T>({out_dim}));
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    auto y = matmul(x, weight);
    return bias.defined() ? add_rowvec(y, bias) : y;
  }
};

// 1x1 or kxk convolution layer over [C,H,W].
template <typename T>
struct Conv2dLayer {
  Tensor<T> kernel, bias;
  ConvSpec spec;

  Conv2dLayer() = default;
  Conv2dLayer(ModelParameters<T>& params, const std::string& prefix, size_t c_in, size_t c_out,
              size_t kh, size_t kw, Rng& rng, ConvSpec s = {}, bool with_bias = true)
      : spec(s) {
    const size_t cg = c_in / s.groups;
    kernel = params.add(prefix + ".weight", init_weight<T>({c_out, cg, kh, kw}, cg * kh * kw, rng));
    if (with_bias) bias = params.add(prefix + ".bias", init_zeros<T>({c_out}));
  }

  Tensor<T> forward(const Tensor<T>& x) const { return conv2d(x, kernel, bias, spec); }
};

template <typename T>
struct RmsNorm {
  Tensor<T> gain;
  T eps = T(1e-8);

  RmsNorm() = default;
  RmsNorm(ModelParameters<T>& params, const std::string& prefix, size_t channels) {
    gain = params.add(prefix + ".gain", init_ones<T>({channels}));
  }

  Tensor<T> forward(const Tensor<T>& x) const { return rms_norm(x, gain, eps); }
};

// ---------------------------------------------------------------------------
// Multi-head attention.

template <typename T>
struct MhaParams {
  Linear<T> q, k, v, out;

  MhaParams() = default;
  MhaParams(ModelParameters<T>& params, const std::string& prefix, size_t d, Rng& rng) {
    q = Linear<T>(params, prefix + ".q", d, d, rng);
    k = Linear<T>(params, prefix + ".k", d, d, rng);
    v = Linear<T>(params, prefix + ".v", d, d, rng);
    out = Linear<T>(params, prefix + ".out", d, d, rng);
  }
};

// query [B,L,d], key/value [B,S,d] -> [B,L,d].
// Scaled dot-product per head, softmax over the S axis.
template <typename T>
Tensor<T> multi_head_attention(const Tensor<T>& query, const Tensor<T>& key,
                               const Tensor<T>& value, size_t heads, const MhaParams<T>& p) {
  check_shape(query.rank() == 3 && key.rank() == 3 && value.rank() == 3,
              "mha: inputs must be [B,L,d]");
  const size_t B = query.dim(0), L = query.dim(1), d = query.dim(2);
  const size_t S = key.dim(1);
  check_shape(key.dim(2) == d && value.dim(2) == d && value.dim(1) == S,
              "mha: key/value dims must match query feature dim");
  check_shape(d % heads == 0, "mha: model dim " + std::to_string(d) +
                                  " not divisible by heads " + std::to_string(heads));
  const size_t dh = d / heads;

  auto split = [&](const Tensor<T>& x, size_t len) {
    // [B,len,d] -> [B,heads,len,dh]
    return permute(reshape(x, {B, len, heads, dh}), {0, 2, 1, 3});
  };
  // The 1/sqrt(dh) score scale is folded into q, which is much smaller than
  // the [B,heads,L,S] score tensor.
  auto q = split(mul_scalar(p.q.forward(query),
                            static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)))),
                 L);
  auto k = split(p.k.forward(key), S);
  auto v = split(p.v.forward(value), S);

  auto scores = matmul(q, permute(k, {0, 1, 3, 2}));  // [B,heads,L,S]
  auto attn = softmax_last(scores);
  auto ctx = matmul(attn, v);  // [B,heads,L,dh]
  auto merged = reshape(permute(ctx, {0, 2, 1, 3}), {B, L, d});
  return p.out.forward(merged);
}

// Spec-shaped convenience overload for a single sequence: [L,d] inputs.
template <typename T>
Tensor<T> multi_head_attention(const Tensor<T>& query_2d, const Tensor<T>& key_2d,
                               const Tensor<T>& value_2d, size_t heads, const MhaParams<T>& p,
                               int /*tag*/) {
  const size_t L = query_2d.dim(0), d = query_2d.dim(1), S = key_2d.dim(0);
  auto out = multi_head_attention(reshape(query_2d, {1, L, d}), reshape(key_2d, {1, S, d}),
                                  reshape(value_2d, {1, S, d}), heads, p);
  return reshape(out, {L, d});
}

// ---------------------------------------------------------------------------
// Fused bidirectional LSTM.
//
// Gate order is (input, forget, cell, output); the forget-gate bias is
// initialized to 1. Initial states are zero. Checkpoints depend on both
// conventions.

template <typename T>
struct BlstmParams {
  Tensor<T> wih_f, whh_f, b_f;  // forward direction: [in,4h], [h,4h], [4h]
  Tensor<T> wih_b, whh_b, b_b;  // backward direction
  size_t hidden = 0;

  BlstmParams() = default;
  BlstmParams(ModelParameters<T>& params, const std::string& prefix, size_t in, size_t h, Rng& rng)
      : hidden(h) {
    auto bias_init = [&]() {
      std::vector<T> b(4 * h, T(0));
      for (size_t j = h; j < 2 * h; ++j) b[j] = T(1);  // forget gate
      return Tensor<T>::from({4 * h}, std::move(b));
    };
    wih_f = params.add(prefix + ".fwd.wih", init_weight<T>({in, 4 * h}, in, rng));
    whh_f = params.add(prefix + ".fwd.whh", init_weight<T>({h, 4 * h}, h, rng));
    b_f = params.add(prefix + ".fwd.bias", bias_init());
    wih_b = params.add(prefix + ".bwd.wih", init_weight<T>({in, 4 * h}, in, rng));
    whh_b = params.add(prefix + ".bwd.whh", init_weight<T>({h, 4 * h}, h, rng));
    b_b = params.add(prefix + ".bwd.bias", bias_init());
  }
};

namespace detail {

template <typename T>
struct LstmDirSaved {
  // Post-activation gates and states, [L][B*h] flattened.
  std::vector<T> i, f, g, o, c, tc, h;
};

// One direction over x laid out [L][B*in]; writes h_seq [L][B*h].
template <typename T>
void lstm_dir_forward(const T* x, size_t L, size_t B, size_t in, size_t h, const T* wih,
                      const T* whh, const T* bias, bool reversed, LstmDirSaved<T>& sv) {
  const size_t bh = B * h;
  sv.i.assign(L * bh, T(0));
  sv.f.assign(L * bh, T(0));
  sv.g.assign(L * bh, T(0));
  sv.o.assign(L * bh, T(0));
  sv.c.assign(L * bh, T(0));
  sv.tc.assign(L * bh, T(0));
  sv.h.assign(L * bh, T(0));
  std::vector<T> z(B * 4 * h);
  std::vector<T> h_prev(bh, T(0)), c_prev(bh, T(0));
  for (size_t step = 0; step < L; ++step) {
    const size_t t = reversed ? L - 1 - step : step;
    for (size_t b = 0; b < B; ++b)
      for (size_t j = 0; j < 4 * h; ++j) z[b * 4 * h + j] = bias[j];
    gemm_acc(x + t * B * in, wih, z.data(), B, in, 4 * h);
    gemm_acc(h_prev.data(), whh, z.data(), B, h, 4 * h);
    T* iv = sv.i.data() + t * bh;
    T* fv = sv.f.data() + t * bh;
    T* gv = sv.g.data() + t * bh;
    T* ov = sv.o.data() + t * bh;
    T* cv = sv.c.data() + t * bh;
    T* tcv = sv.tc.data() + t * bh;
    T* hv = sv.h.data() + t * bh;
    for (size_t b = 0; b < B; ++b) {
      const T* zb = z.data() + b * 4 * h;
      for (size_t j = 0; j < h; ++j) {
        const size_t k = b * h + j;
        iv[k] = sigmoid_fn(zb[j]);
        fv[k] = sigmoid_fn(zb[h + j]);
        gv[k] = tanh_fn(zb[2 * h + j]);
        ov[k] = sigmoid_fn(zb[3 * h + j]);
        cv[k] = fv[k] * c_prev[k] + iv[k] * gv[k];
        tcv[k] = tanh_fn(cv[k]);
        hv[k] = ov[k] * tcv[k];
      }
    }
    std::copy(sv.h.begin() + t * bh, sv.h.begin() + (t + 1) * bh, h_prev.begin());
    std::copy(sv.c.begin() + t * bh, sv.c.begin() + (t + 1) * bh, c_prev.begin());
  }
}

// BPTT for one direction. Upstream gh_out is [L][B*h] (gradient w.r.t. the
// direction's h sequence); accumulates into gx [L][B*in] and weight grads.
template <typename T>
void lstm_dir_backward(const T* x, size_t L, size_t B, size_t in, size_t h, const T* wih,
                       const T* whh, bool reversed, const LstmDirSaved<T>& sv, const T* gh_out,
                       T* gx, T* gwih, T* gwhh, T* gbias) {
  const size_t bh = B * h;
  std::vector<T> gh_rec(bh, T(0)), gc_rec(bh, T(0));
  std::vector<T> dz(B * 4 * h);
  std::vector<T> h_prev(bh), c_prev(bh);
  for (size_t step = L; step-- > 0;) {
    const size_t t = reversed ? L - 1 - step : step;
    // States feeding step t (zero at the sequence start).
    if (step == 0) {
      std::fill(h_prev.begin(), h_prev.end(), T(0));
      std::fill(c_prev.begin(), c_prev.end(), T(0));
    } else {
      const size_t tp = reversed ? t + 1 : t - 1;
      std::copy(sv.h.begin() + tp * bh, sv.h.begin() + (tp + 1) * bh, h_prev.begin());
      std::copy(sv.c.begin() + tp * bh, sv.c.begin() + (tp + 1) * bh, c_prev.begin());
    }
    const T* iv = sv.i.data() + t * bh;
    const T* fv = sv.f.data() + t * bh;
    const T* gv = sv.g.data() + t * bh;
    const T* ov = sv.o.data() + t * bh;
    const T* tcv = sv.tc.data() + t * bh;
    for (size_t b = 0; b < B; ++b) {
      T* dzb = dz.data() + b * 4 * h;
      for (size_t j = 0; j < h; ++j) {
        const size_t k = b * h + j;
        const T gh = gh_out[t * bh + k] + gh_rec[k];
        const T go = gh * tcv[k];
        T gc = gh * ov[k] * (T(1) - tcv[k] * tcv[k]) + gc_rec[k];
        const T gf = gc * c_prev[k];
        const T gi = gc * gv[k];
        const T gg = gc * iv[k];
        gc_rec[k] = gc * fv[k];
        dzb[j] = gi * iv[k] * (T(1) - iv[k]);
        dzb[h + j] = gf * fv[k] * (T(1) - fv[k]);
        dzb[2 * h + j] = gg * (T(1) - gv[k] * gv[k]);
        dzb[3 * h + j] = go * ov[k] * (T(1) - ov[k]);
      }
    }
    // gx_t += dz W_ih^T ; gh_rec = dz W_hh^T ; gW += inputs^T dz
    gemm_a_bt(dz.data(), wih, gx + t * B * in, B, 4 * h, in);
    std::fill(gh_rec.begin(), gh_rec.end(), T(0));
    gemm_a_bt(dz.data(), whh, gh_rec.data(), B, 4 * h, h);
    gemm_at_b(x + t * B * in, dz.data(), gwih, B, in, 4 * h);
    gemm_at_b(h_prev.data(), dz.data(), gwhh, B, h, 4 * h);
    for (size_t b = 0; b < B; ++b)
      for (size_t j = 0; j < 4 * h; ++j) gbias[j] += dz[b * 4 * h + j];
  }
}

}  // namespace detail

// Bidirectional LSTM over a batch of sequences: x [B,L,in] -> [B,L,2h].
// Both directions start from zero states; features are concatenated
// (forward half first).
template <typename T>
Tensor<T> blstm(const Tensor<T>& x, const BlstmParams<T>& p) {
  check_shape(x.rank() == 3, "blstm: input must be [B,L,in]");
  const size_t B = x.dim(0), L = x.dim(1), in = x.dim(2);
  check_shape(L >= 1, "blstm: empty sequence");
  const size_t h = p.hidden;
  check_shape(p.wih_f.dim(0) == in, "blstm: input dim mismatch with params");

  // Relayout to [L][B*in] so each timestep is a contiguous gemm operand.
  std::vector<T> xt(L * B * in);
  {
    const auto xv = x.data();
    for (size_t b = 0; b < B; ++b)
      for (size_t t = 0; t < L; ++t)
        std::copy(xv.begin() + (b * L + t) * in, xv.begin() + (b * L + t + 1) * in,
                  xt.begin() + (t * B + b) * in);
  }
  auto saved_f = std::make_shared<detail::LstmDirSaved<T>>();
  auto saved_b = std::make_shared<detail::LstmDirSaved<T>>();
  detail::lstm_dir_forward(xt.data(), L, B, in, h, p.wih_f.data().data(), p.whh_f.data().data(),
                           p.b_f.data().data(), false, *saved_f);
  detail::lstm_dir_forward(xt.data(), L, B, in, h, p.wih_b.data().data(), p.whh_b.data().data(),
                           p.b_b.data().data(), true, *saved_b);
  std::vector<T> out(B * L * 2 * h);
  for (size_t b = 0; b < B; ++b)
    for (size_t t = 0; t < L; ++t) {
      T* dst = out.data() + (b * L + t) * 2 * h;
      std::copy(saved_f->h.begin() + (t * B + b) * h, saved_f->h.begin() + (t * B + b + 1) * h,
                dst);
      std::copy(saved_b->h.begin() + (t * B + b) * h, saved_b->h.begin() + (t * B + b + 1) * h,
                dst + h);
    }
  auto xt_shared = std::make_shared<std::vector<T>>(std::move(xt));

  return detail::make_op<T>(
      "blstm", {B, L, 2 * h}, std::move(out),
      {x, p.wih_f, p.whh_f, p.b_f, p.wih_b, p.whh_b, p.b_b},
      [B, L, in, h, saved_f, saved_b, xt_shared](detail::Node<T>& self, const std::vector<T>& up,
                                                 detail::GradTable<T>& gtab) {
        // Split upstream into per-direction [L][B*h] halves.
        std::vector<T> gh_f(L * B * h), gh_b(L * B * h);
        for (size_t b = 0; b < B; ++b)
          for (size_t t = 0; t < L; ++t) {
            const T* src = up.data() + (b * L + t) * 2 * h;
            std::copy(src, src + h, gh_f.begin() + (t * B + b) * h);
            std::copy(src + h, src + 2 * h, gh_b.begin() + (t * B + b) * h);
          }
        std::vector<T> gx(L * B * in, T(0));
        std::vector<T> gwih_f(in * 4 * h, T(0)), gwhh_f(h * 4 * h, T(0)), gb_f(4 * h, T(0));
        std::vector<T> gwih_b(in * 4 * h, T(0)), gwhh_b(h * 4 * h, T(0)), gb_b(4 * h, T(0));
        detail::lstm_dir_backward(xt_shared->data(), L, B, in, h, self.parents[1]->value.data(),
                                  self.parents[2]->value.data(), false, *saved_f, gh_f.data(),
                                  gx.data(), gwih_f.data(), gwhh_f.data(), gb_f.data());
        detail::lstm_dir_backward(xt_shared->data(), L, B, in, h, self.parents[4]->value.data(),
                                  self.parents[5]->value.data(), true, *saved_b, gh_b.data(),
                                  gx.data(), gwih_b.data(), gwhh_b.data(), gb_b.data());
        if (self.parents[0]->requires_grad) {
          std::vector<T> gx_blc(B * L * in);
          for (size_t b = 0; b < B; ++b)
            for (size_t t = 0; t < L; ++t)
              std::copy(gx.begin() + (t * B + b) * in, gx.begin() + (t * B + b + 1) * in,
                        gx_blc.begin() + (b * L + t) * in);
          detail::accum(gtab, self.parents[0], std::move(gx_blc));
        }
        detail::accum(gtab, self.parents[1], std::move(gwih_f));
        detail::accum(gtab, self.parents[2], std::move(gwhh_f));
        detail::accum(gtab, self.parents[3], std::move(gb_f));
        detail::accum(gtab, self.parents[4], std::move(gwih_b));
        detail::accum(gtab, self.parents[5], std::move(gwhh_b));
        detail::accum(gtab, self.parents[6], std::move(gb_b));
      });
}

// Single-sequence form: [L,in] -> [L,2h].
template <typename T>
Tensor<T> blstm_seq(const Tensor<T>& x, const BlstmParams<T>& p) {
  check_shape(x.rank() == 2, "blstm_seq: input must be [L,in]");
  const size_t L = x.dim(0), in = x.dim(1);
  return reshape(blstm(reshape(x, {1, L, in}), p), {L, 2 * p.hidden});
}

// ---------------------------------------------------------------------------
// Squeeze-and-Excitation: global average pool -> gate -> per-channel rescale.
// The default uses a single 1x1 conv to form the gate; reduction > 0 selects
// a bottleneck pair for ablation.

template <typename T>
struct SeParams {
  Linear<T> fc1, fc2;
  size_t reduction = 0;

  SeParams() = default;
  SeParams(ModelParameters<T>& params, const std::string& prefix, size_t channels, Rng& rng,
           size_t reduction_ratio = 0)
      : reduction(reduction_ratio) {
    if (reduction == 0) {
      fc1 = Linear<T>(params, prefix + ".gate", channels, channels, rng);
    } else {
      const size_t mid = std::max<size_t>(1, channels / reduction);
      fc1 = Linear<T>(params, prefix + ".reduce", channels, mid, rng);
      fc2 = Linear<T>(params, prefix + ".expand", mid, channels, rng);
    }
  }
};

template <typename T>
Tensor<T> se_block(const Tensor<T>& x, const SeParams<T>& p) {
  const size_t C = x.dim(0);
  auto pooled = reshape(global_avg_pool(x), {size_t(1), C});
  Tensor<T> gate;
  if (p.reduction == 0) {
    gate = sigmoid(p.fc1.forward(pooled));
  } else {
    gate = sigmoid(p.fc2.forward(relu(p.fc1.forward(pooled))));
  }
  return channel_scale(x, reshape(gate, {C}));
}

}  // namespace dcfnet

// Copyright 2026 dcfnet authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// The extraction network: encoder with enrollment/mixture interaction and
// multi-range convolution, the dual-stream fusion block stack, the dual-path
// mask estimator and the masking decoder.

#pragma once

#include "dcfnet/metrics.hpp"
#include "dcfnet/nn.hpp"
#include "dcfnet/stft.hpp"

namespace dcfnet {

enum class ExtractorKind { kImproved, kBaseTransformer, kRnn };

inline const char* extractor_kind_name(ExtractorKind k) {
  switch (k) {
    case ExtractorKind::kImproved: return "improved";
    case ExtractorKind::kBaseTransformer: return "base";
    case ExtractorKind::kRnn: return "rnn";
  }
  return "?";
}

inline ExtractorKind extractor_kind_from(const std::string& s) {
  if (s == "improved" || s == "it") return ExtractorKind::kImproved;
  if (s == "base" || s == "bt") return ExtractorKind::kBaseTransformer;
  if (s == "rnn") return ExtractorKind::kRnn;
  throw ValueError("unknown extractor kind: " + s);
}

struct ModelConfig {
  size_t channels = 256;        // C, encoder/DSFB channel count
  size_t fused_dim = 64;        // D, dimension fed into the mask estimator
  size_t dsfb_blocks = 2;       // O (0 selects the concatenation baseline)
  size_t dual_path_blocks = 6;  // N
  size_t heads = 4;
  size_t hidden = 128;          // recurrent hidden size
  size_t d_attn = 64;           // interaction attention dim
  std::vector<size_t> ranges = {1, 2, 3};  // multi-range conv dilations
  size_t se_reduction = 0;      // 0 = single-conv SE gate
  ExtractorKind extractor = ExtractorKind::kImproved;
  size_t n_fft = 256;
  size_t hop = 128;
  double drc_exponent = 0.5;

  size_t bins() const { return n_fft / 2 + 1; }
  WindowSpec window() const { return WindowSpec{n_fft, hop, true}; }

  static ModelConfig paper() { return ModelConfig{}; }

  static ModelConfig desk() {
    ModelConfig c;
    c.channels = 32;
    c.fused_dim = 16;
    c.dsfb_blocks = 2;
    c.dual_path_blocks = 2;
    c.heads = 4;
    c.hidden = 32;
    return c;
  }
};

// ---------------------------------------------------------------------------
// Encoder

// Frame-level attention aligning enrollment frames to mixture frames.
// Queries/keys are formed through a channel bottleneck (1x1 conv C->1, then
// a frequency-axis projection to d_attn); values and the output path are
// full-channel 1x1 convolutions, so the contextualized enrollment keeps the
// mixture's time extent at full channel rank.
template <typename T>
struct InteractionParams {
  Conv2dLayer<T> q_chan, k_chan;  // C -> 1
  Linear<T> q_lin, k_lin;         // F -> d_attn
  Conv2dLayer<T> value, out;      // C -> C
  size_t d_attn = 0;

  InteractionParams() = default;
  InteractionParams(ModelParameters<T>& params, const std::string& prefix, size_t C, size_t F,
                    size_t d, Rng& rng)
      : d_attn(d) {
    q_chan = Conv2dLayer<T>(params, prefix + ".q_chan", C, 1, 1, 1, rng);
    k_chan = Conv2dLayer<T>(params, prefix + ".k_chan", C, 1, 1, 1, rng);
    q_lin = Linear<T>(params, prefix + ".q_lin", F, d, rng);
    k_lin = Linear<T>(params, prefix + ".k_lin", F, d, rng);
    value = Conv2dLayer<T>(params, prefix + ".value", C, C, 1, 1, rng);
    out = Conv2dLayer<T>(params, prefix + ".out", C, C, 1, 1, rng);
  }
};

template <typename T>
struct InteractionResult {
  Tensor<T> output;  // [C,F,T]
  Tensor<T> attn;    // [T,T1], rows sum to 1
};

template <typename T>
InteractionResult<T> interaction_block_full(const Tensor<T>& enroll, const Tensor<T>& mixture,
                                            const InteractionParams<T>& p) {
  check_shape(enroll.rank() == 3 && mixture.rank() == 3, "interaction: inputs must be [C,F,T]");
  check_shape(enroll.dim(0) == mixture.dim(0) && enroll.dim(1) == mixture.dim(1),
              "interaction: channel/frequency mismatch between enrollment and mixture");
  const size_t C = mixture.dim(0), F = mixture.dim(1), Tm = mixture.dim(2);
  const size_t T1 = enroll.dim(2);
  check_shape(T1 >= 1, "interaction: enrollment has no frames");

  auto frame_feat = [&](const Tensor<T>& x, const Conv2dLayer<T>& chan, const Linear<T>& lin,
                        size_t frames) {
    auto prof = reshape(chan.forward(x), {F, frames});     // [F,T]
    return lin.forward(permute(prof, {1, 0}));             // [T,d]
  };
  auto q = frame_feat(mixture, p.q_chan, p.q_lin, Tm);
  auto k = frame_feat(enroll, p.k_chan, p.k_lin, T1);
  auto scores = mul_scalar(matmul(q, permute(k, {1, 0})),
                           static_cast<T>(1.0 / std::sqrt(static_cast<double>(p.d_attn))));
  auto attn = softmax_last(scores);  // [T,T1]

  auto v = reshape(p.value.forward(enroll), {C * F, T1});
  auto attended = reshape(matmul(v, permute(attn, {1, 0})), {C, F, Tm});
  return {p.out.forward(attended), attn};
}

template <typename T>
Tensor<T> interaction_block(const Tensor<T>& enroll, const Tensor<T>& mixture,
                            const InteractionParams<T>& p) {
  return interaction_block_full(enroll, mixture, p).output;
}

// Shared 3x3 depthwise kernel applied at each dilation in `ranges`; the
// responses are mixed by learned per-range scalars, then ReLU.
template <typename T>
struct MultirangeParams {
  Tensor<T> kernel;  // [C,1,3,3], shared across ranges
  Tensor<T> bias;    // [C]
  Tensor<T> mix;     // [R]
  std::vector<size_t> ranges;

  MultirangeParams() = default;
  MultirangeParams(ModelParameters<T>& params, const std::string& prefix, size_t C,
                   std::vector<size_t> dilations, Rng& rng)
      : ranges(std::move(dilations)) {
    kernel = params.add(prefix + ".weight", init_weight<T>({C, 1, 3, 3}, 9, rng));
    bias = params.add(prefix + ".bias", init_zeros<T>({C}));
    mix = params.add(prefix + ".mix", init_weight<T>({ranges.size()}, ranges.size(), rng));
  }
};

template <typename T>
Tensor<T> multirange_conv(const Tensor<T>& x, const MultirangeParams<T>& p) {
  const size_t C = x.dim(0);
  Tensor<T> acc;
  for (size_t r = 0; r < p.ranges.size(); ++r) {
    ConvSpec spec;
    spec.dilation_h = spec.dilation_w = p.ranges[r];
    spec.groups = C;
    auto resp = conv2d(x, p.kernel, p.bias, spec);
    auto w = reshape(slice(p.mix, 0, r, 1), {size_t(1)});
    auto term = mul(broadcast_scalar(w, resp.shape()), resp);
    acc = acc.defined() ? add(acc, term) : term;
  }
  return relu(acc);
}

template <typename T>
struct EncoderParams {
  Conv2dLayer<T> proj_y, proj_e;  // 2 -> C channel lift
  InteractionParams<T> interaction;
  MultirangeParams<T> multirange_y, multirange_e;

  EncoderParams() = default;
  EncoderParams(ModelParameters<T>& params, const ModelConfig& cfg, Rng& rng) {
    const size_t C = cfg.channels, F = cfg.bins();
    proj_y = Conv2dLayer<T>(params, "encoder.proj_y", 2, C, 1, 1, rng);
    proj_e = Conv2dLayer<T>(params, "encoder.proj_e", 2, C, 1, 1, rng);
    interaction = InteractionParams<T>(params, "encoder.interaction", C, F, cfg.d_attn, rng);
    multirange_y = MultirangeParams<T>(params, "encoder.multirange_y", C, cfg.ranges, rng);
    multirange_e = MultirangeParams<T>(params, "encoder.multirange_e", C, cfg.ranges, rng);
  }
};

template <typename T>
struct EncoderOutput {
  Tensor<T> mixture_rep;     // [C,F,T]
  Tensor<T> enrollment_rep;  // [C,F,T]
};

// Lift both compressed spectrograms to C channels, contextualize the
// enrollment against the mixture frames, then refine each stream with the
// multi-range convolution. Both outputs share the mixture's shape.
template <typename T>
EncoderOutput<T> encode(const Tensor<T>& y_spec, const Tensor<T>& e_spec,
                        const EncoderParams<T>& p) {
  check_shape(y_spec.dim(1) == e_spec.dim(1),
              "encode: frequency axes differ between mixture and enrollment");
  auto y0 = p.proj_y.forward(y_spec);
  auto e0 = p.proj_e.forward(e_spec);
  auto e_ctx = interaction_block(e0, y0, p.interaction);
  return {multirange_conv(y0, p.multirange_y), multirange_conv(e_ctx, p.multirange_e)};
}

// ---------------------------------------------------------------------------
// DualStream Fusion Block

template <typename T>
struct StreamPair {
  Tensor<T> y_stream;
  Tensor<T> e_stream;
};

// Multiplicative gated interaction: split each stream into channel halves
// and cross-multiply, halving the channel count.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> mgi(const Tensor<T>& y_in, const Tensor<T>& e_in) {
  check_shape(y_in.shape() == e_in.shape(), "mgi: stream shape mismatch");
  const size_t C2 = y_in.dim(0);
  check_shape(C2 % 2 == 0, "mgi: channel count must be even, got " + std::to_string(C2));
  const size_t Ch = C2 / 2;
  auto y1 = slice(y_in, 0, 0, Ch);
  auto y2 = slice(y_in, 0, Ch, Ch);
  auto e1 = slice(e_in, 0, 0, Ch);
  auto e2 = slice(e_in, 0, Ch, Ch);
  return {mul(y1, e2), mul(y2, e1)};
}

template <typename T>
struct DsfbFlowParams {
  RmsNorm<T> norm1, norm2;
  Conv2dLayer<T> conv1;    // C -> 2C
  Conv2dLayer<T> dw;       // 3x3 depthwise on 2C
  SeParams<T> se;          // on C channels (post-MGI)
  Conv2dLayer<T> conv_out;  // C -> C
  Conv2dLayer<T> conv1b;   // C -> 2C (second sub-block)
  Conv2dLayer<T> conv_outb;  // C -> C

  DsfbFlowParams() = default;
  DsfbFlowParams(ModelParameters<T>& params, const std::string& prefix, size_t C, Rng& rng,
                 size_t se_reduction) {
    norm1 = RmsNorm<T>(params, prefix + ".norm1", C);
    conv1 = Conv2dLayer<T>(params, prefix + ".conv1", C, 2 * C, 1, 1, rng);
    ConvSpec dwspec;
    dwspec.groups = 2 * C;
    dw = Conv2dLayer<T>(params, prefix + ".dw", 2 * C, 2 * C, 3, 3, rng, dwspec);
    se = SeParams<T>(params, prefix + ".se", C, rng, se_reduction);
    conv_out = Conv2dLayer<T>(params, prefix + ".conv_out", C, C, 1, 1, rng);
    norm2 = RmsNorm<T>(params, prefix + ".norm2", C);
    conv1b = Conv2dLayer<T>(params, prefix + ".conv1b", C, 2 * C, 1, 1, rng);
    conv_outb = Conv2dLayer<T>(params, prefix + ".conv_outb", C, C, 1, 1, rng);
  }
};

template <typename T>
struct DsfbParams {
  DsfbFlowParams<T> flow_y, flow_e;

  DsfbParams() = default;
  DsfbParams(ModelParameters<T>& params, const std::string& prefix, size_t C, Rng& rng,
             size_t se_reduction = 0) {
    flow_y = DsfbFlowParams<T>(params, prefix + ".y", C, rng, se_reduction);
    flow_e = DsfbFlowParams<T>(params, prefix + ".e", C, rng, se_reduction);
  }
};

// One DSFB: two symmetric flows exchanging information through MGI.
// Sub-block 1: RMS-Norm -> 1x1 (C->2C) -> 3x3 depthwise -> MGI -> SE ->
// 1x1 (C->C) -> residual. Sub-block 2 repeats without the depthwise conv
// and SE. Zero-initialized convolutions make the whole block an identity.
template <typename T>
StreamPair<T> dsfb_forward(const StreamPair<T>& in, const DsfbParams<T>& p) {
  check_shape(in.y_stream.shape() == in.e_stream.shape(), "dsfb: stream shape mismatch");
  const size_t C = in.y_stream.dim(0);

  auto uy = p.flow_y.dw.forward(p.flow_y.conv1.forward(p.flow_y.norm1.forward(in.y_stream)));
  auto ue = p.flow_e.dw.forward(p.flow_e.conv1.forward(p.flow_e.norm1.forward(in.e_stream)));
  check_shape(uy.dim(0) == 2 * C, "dsfb: conv1 must double the channels");
  auto [yh, eh] = mgi(uy, ue);
  check_shape(yh.dim(0) == C, "dsfb: MGI must halve the channels");
  auto y1 = add(in.y_stream, p.flow_y.conv_out.forward(se_block(yh, p.flow_y.se)));
  auto e1 = add(in.e_stream, p.flow_e.conv_out.forward(se_block(eh, p.flow_e.se)));

  auto vy = p.flow_y.conv1b.forward(p.flow_y.norm2.forward(y1));
  auto ve = p.flow_e.conv1b.forward(p.flow_e.norm2.forward(e1));
  check_shape(vy.dim(0) == 2 * C, "dsfb: conv1b must double the channels");
  auto [yh2, eh2] = mgi(vy, ve);
  auto y2 = add(y1, p.flow_y.conv_outb.forward(yh2));
  auto e2 = add(e1, p.flow_e.conv_outb.forward(eh2));
  return {y2, e2};
}

template <typename T>
struct FuseParams {
  Conv2dLayer<T> conv;  // 2C -> D

  FuseParams() = default;
  FuseParams(ModelParameters<T>& params, const std::string& prefix, size_t C, size_t D, Rng& rng) {
    conv = Conv2dLayer<T>(params, prefix + ".conv", 2 * C, D, 1, 1, rng);
  }
};

// O DSFB stages, concatenation over channels, 1x1 conv to D, ReLU.
// O = 0 concatenates the encoder pair directly (the CC baseline).
template <typename T>
Tensor<T> fuse_streams(const StreamPair<T>& in, const std::vector<DsfbParams<T>>& blocks,
                       const FuseParams<T>& fuse) {
  StreamPair<T> pair = in;
  for (const auto& b : blocks) pair = dsfb_forward(pair, b);
  auto cat = concat<T>({pair.y_stream, pair.e_stream}, 0);
  return relu(fuse.conv.forward(cat));
}

// ---------------------------------------------------------------------------
// Extractor (dual-path mask estimator)

template <typename T>
struct SequenceLayerParams {
  ExtractorKind kind = ExtractorKind::kImproved;
  size_t heads = 4;
  MhaParams<T> mha;
  RmsNorm<T> norm1, norm2;
  BlstmParams<T> rnn;
  Linear<T> rnn_proj;       // 2*hidden -> d
  Linear<T> ffn1, ffn2;     // base-transformer feed-forward pair

  SequenceLayerParams() = default;
  SequenceLayerParams(ModelParameters<T>& params, const std::string& prefix, size_t d,
                      size_t heads_, size_t hidden, ExtractorKind kind_, Rng& rng)
      : kind(kind_), heads(heads_) {
    if (kind != ExtractorKind::kRnn) {
      mha = MhaParams<T>(params, prefix + ".mha", d, rng);
      norm1 = RmsNorm<T>(params, prefix + ".norm1", d);
    }
    if (kind == ExtractorKind::kBaseTransformer) {
      ffn1 = Linear<T>(params, prefix + ".ffn1", d, 2 * hidden, rng);
      ffn2 = Linear<T>(params, prefix + ".ffn2", 2 * hidden, d, rng);
    } else {
      rnn = BlstmParams<T>(params, prefix + ".blstm", d, hidden, rng);
      rnn_proj = Linear<T>(params, prefix + ".proj", 2 * hidden, d, rng);
    }
    norm2 = RmsNorm<T>(params, prefix + ".norm2", d);
  }
};

// One sequence-modeling layer over [B,L,d]. The improved-transformer form is
// a self-attention sub-layer followed by a recurrent (BLSTM) sub-layer, each
// with residual and RMS-Norm.
template <typename T>
Tensor<T> sequence_layer(const Tensor<T>& x, const SequenceLayerParams<T>& p) {
  check_shape(x.rank() == 3, "sequence_layer: input must be [B,L,d]");
  Tensor<T> h = x;
  if (p.kind != ExtractorKind::kRnn) {
    auto a = multi_head_attention(h, h, h, p.heads, p.mha);
    h = rms_norm_last(add(h, a), p.norm1.gain);
  }
  Tensor<T> f;
  if (p.kind == ExtractorKind::kBaseTransformer) {
    f = p.ffn2.forward(relu(p.ffn1.forward(h)));
  } else {
    f = p.rnn_proj.forward(blstm(h, p.rnn));
  }
  return rms_norm_last(add(h, f), p.norm2.gain);
}

template <typename T>
Tensor<T> improved_transformer_layer(const Tensor<T>& seq, const SequenceLayerParams<T>& p) {
  check_shape(seq.rank() == 2, "improved_transformer_layer: input must be [L,d]");
  const size_t L = seq.dim(0), d = seq.dim(1);
  return reshape(sequence_layer(reshape(seq, {1, L, d}), p), {L, d});
}

template <typename T>
struct DualPathBlockParams {
  SequenceLayerParams<T> intra, inter;

  DualPathBlockParams() = default;
  DualPathBlockParams(ModelParameters<T>& params, const std::string& prefix, size_t d,
                      size_t heads, size_t hidden, ExtractorKind kind, Rng& rng) {
    intra = SequenceLayerParams<T>(params, prefix + ".intra", d, heads, hidden, kind, rng);
    inter = SequenceLayerParams<T>(params, prefix + ".inter", d, heads, hidden, kind, rng);
  }
};

// Intra pass: per frame, model the frequency axis (weights shared across
// frames). Inter pass: per frequency, model the frame axis (weights shared
// across frequencies).
template <typename T>
Tensor<T> dual_path_block(const Tensor<T>& x, const DualPathBlockParams<T>& p) {
  check_shape(x.rank() == 3, "dual_path_block: input must be [D,F,T]");
  auto intra_in = permute(x, {2, 1, 0});  // [T,F,D]
  auto intra_out = sequence_layer(intra_in, p.intra);
  auto inter_in = permute(intra_out, {1, 0, 2});  // [F,T,D]
  auto inter_out = sequence_layer(inter_in, p.inter);
  return permute(inter_out, {2, 0, 1});  // back to [D,F,T]
}

// Exposes the intra-pass result for the structural independence tests.
template <typename T>
Tensor<T> dual_path_intra(const Tensor<T>& x, const DualPathBlockParams<T>& p) {
  auto intra_out = sequence_layer(permute(x, {2, 1, 0}), p.intra);
  return permute(intra_out, {2, 1, 0});
}

template <typename T>
struct ExtractorParams {
  std::vector<DualPathBlockParams<T>> blocks;
  Tensor<T> prelu_alpha;
  Conv2dLayer<T> head;

  ExtractorParams() = default;
  ExtractorParams(ModelParameters<T>& params, const ModelConfig& cfg, Rng& rng) {
    for (size_t i = 0; i < cfg.dual_path_blocks; ++i)
      blocks.emplace_back(params, "extractor." + std::to_string(i), cfg.fused_dim, cfg.heads,
                          cfg.hidden, cfg.extractor, rng);
    prelu_alpha =
        params.add("extractor.head.alpha", Tensor<T>::filled({cfg.fused_dim}, T(0.25)));
    head = Conv2dLayer<T>(params, "extractor.head.conv", cfg.fused_dim, cfg.fused_dim, 1, 1, rng);
  }
};

// N dual-path blocks, then PReLU and a 1x1 conv. The mask is unbounded.
template <typename T>
Tensor<T> estimate_mask(const Tensor<T>& x, const ExtractorParams<T>& p) {
  Tensor<T> h = x;
  for (const auto& b : p.blocks) h = dual_path_block(h, b);
  return p.head.forward(prelu(h, p.prelu_alpha));
}

// ---------------------------------------------------------------------------
// Decoder

template <typename T>
struct DecoderParams {
  Conv2dLayer<T> embed;  // C -> D mixture embedding
  Conv2dLayer<T> out;    // D -> 2, bias-free so zero mask means zero output

  DecoderParams() = default;
  DecoderParams(ModelParameters<T>& params, const ModelConfig& cfg, Rng& rng) {
    embed = Conv2dLayer<T>(params, "decoder.embed", cfg.channels, cfg.fused_dim, 1, 1, rng);
    out = Conv2dLayer<T>(params, "decoder.out", cfg.fused_dim, 2, 1, 1, rng, ConvSpec{},
                         /*with_bias=*/false);
  }
};

template <typename T>
Tensor<T> apply_mask(const Tensor<T>& mixture_embed, const Tensor<T>& mask) {
  check_shape(mixture_embed.shape() == mask.shape(), "apply_mask: shape mismatch");
  return mul(mixture_embed, mask);
}

// Masked embedding -> compressed complex spectrum -> inverse DRC ->
// inverse STFT, truncated/padded to out_len samples.
template <typename T>
Tensor<T> reconstruct(const Tensor<T>& masked, const DecoderParams<T>& p,
                      const WindowSpec& window, double drc_exponent, size_t out_len) {
  auto spec = p.out.forward(masked);
  return istft(idrc(spec, drc_exponent), out_len, window);
}

// ---------------------------------------------------------------------------
// Full network

template <typename T>
struct DcfNet {
  ModelConfig cfg;
  ModelParameters<T> params;
  EncoderParams<T> encoder;
  std::vector<DsfbParams<T>> dsfb;
  FuseParams<T> fuse;
  ExtractorParams<T> extractor;
  DecoderParams<T> decoder;

  explicit DcfNet(const ModelConfig& config, uint64_t seed) : cfg(config) {
    Rng rng(derive_seed(seed, 0xdcf));
    encoder = EncoderParams<T>(params, cfg, rng);
    for (size_t i = 0; i < cfg.dsfb_blocks; ++i)
      dsfb.emplace_back(params, "dsfb." + std::to_string(i), cfg.channels, rng, cfg.se_reduction);
    fuse = FuseParams<T>(params, "fuse", cfg.channels, cfg.fused_dim, rng);
    extractor = ExtractorParams<T>(params, cfg, rng);
    decoder = DecoderParams<T>(params, cfg, rng);
  }

  // mixture/enrollment waveforms in, estimated target waveform out
  // (same length as the mixture).
  Tensor<T> forward(const Tensor<T>& mixture, const Tensor<T>& enrollment) const {
    const auto win = cfg.window();
    auto y_spec = drc(stft(mixture, win), cfg.drc_exponent);
    auto e_spec = drc(stft(enrollment, win), cfg.drc_exponent);
    auto enc = encode(y_spec, e_spec, encoder);
    auto fused = fuse_streams(StreamPair<T>{enc.mixture_rep, enc.enrollment_rep}, dsfb, fuse);
    auto mask = estimate_mask(fused, extractor);
    auto embed = decoder.embed.forward(enc.mixture_rep);
    auto masked = apply_mask(embed, mask);
    return reconstruct(masked, decoder, win, cfg.drc_exponent, mixture.numel());
  }

  Tensor<T> loss(const Tensor<T>& mixture, const Tensor<T>& enrollment,
                 const Tensor<T>& target) const {
    return si_sdr_loss(target, forward(mixture, enrollment));
  }

  size_t param_count() const { return params.count_scalars(); }
};

}  // namespace dcfnet

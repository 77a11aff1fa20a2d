// Copyright 2026 dcfnet authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// Finite-difference gradient validation. Small layers are checked
// exhaustively, coordinate by coordinate, against central differences; large
// compositions (the full network) are checked along random parameter-space
// directions, which validates the projected gradient at a handful of
// forward evaluations.

#pragma once

#include <functional>
#include <iostream>

#include "dcfnet/model.hpp"

namespace dcfnet {

struct FdOptions {
  double step = 1e-6;          // central-difference step, scaled by |x|
  bool directional = false;    // one probe over all leaves instead of per-coordinate
  int directions = 3;
};

// Relative error as reported by every check:
// |analytic - numeric| / max(|analytic|, |numeric|, 1e-12)
inline double rel_err(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-12});
  return std::abs(analytic - numeric) / denom;
}

// Max relative error between analytic gradients (reverse mode) and central
// finite differences, over every coordinate of every leaf. `forward` must be
// a pure function of the leaves.
inline double finite_diff_check(std::vector<Tensor<double>> leaves,
                                const std::function<Tensor<double>()>& forward,
                                const FdOptions& opt = {}) {
  for (auto& l : leaves) {
    l.set_requires_grad(true);
    l.zero_grad();
  }
  auto out = forward();
  out.backward();
  std::vector<std::vector<double>> analytic;
  for (auto& l : leaves) analytic.push_back(l.grad());

  double worst = 0.0;
  NoGradGuard no_grad;  // finite-difference probes only need values
  if (!opt.directional) {
    for (size_t li = 0; li < leaves.size(); ++li) {
      auto vals = leaves[li].mutable_data();
      for (size_t i = 0; i < vals.size(); ++i) {
        const double x0 = vals[i];
        const double h = opt.step * std::max(1.0, std::abs(x0));
        vals[i] = x0 + h;
        const double fp = forward().item();
        vals[i] = x0 - h;
        const double fm = forward().item();
        vals[i] = x0;
        const double numeric = (fp - fm) / (2.0 * h);
        worst = std::max(worst, rel_err(analytic[li][i], numeric));
      }
    }
  } else {
    Rng rng(0x5eed);
    for (int d = 0; d < opt.directions; ++d) {
      std::vector<std::vector<double>> dir(leaves.size());
      double dot = 0.0;
      for (size_t li = 0; li < leaves.size(); ++li) {
        dir[li].resize(leaves[li].numel());
        for (size_t i = 0; i < dir[li].size(); ++i) {
          dir[li][i] = rng.normal();
          dot += analytic[li][i] * dir[li][i];
        }
      }
      const double h = opt.step;
      auto shift = [&](double sign) {
        for (size_t li = 0; li < leaves.size(); ++li) {
          auto vals = leaves[li].mutable_data();
          for (size_t i = 0; i < vals.size(); ++i) vals[i] += sign * h * dir[li][i];
        }
      };
      shift(+1.0);
      const double fp = forward().item();
      shift(-2.0);
      const double fm = forward().item();
      shift(+1.0);
      const double numeric = (fp - fm) / (2.0 * h);
      worst = std::max(worst, rel_err(dot, numeric));
    }
  }
  return worst;
}

namespace detail {

// Reduces tensors to a scalar with fixed random weights. The weights are
// drawn once, on the first pass, and reused on every subsequent forward so
// the probed function stays pure under finite differencing.
class ScalarProbe {
 public:
  explicit ScalarProbe(uint64_t seed) : rng_(seed) {}

  void begin() { cursor_ = 0; }

  Tensor<double> weigh(const Tensor<double>& t) {
    if (cursor_ == weights_.size()) {
      std::vector<double> w(t.numel());
      for (auto& v : w) v = rng_.uniform(-1.0, 1.0);
      weights_.push_back(Tensor<double>::from(t.shape(), std::move(w)));
    }
    return sum_all(mul(t, weights_[cursor_++]));
  }

 private:
  Rng rng_;
  std::vector<Tensor<double>> weights_;
  size_t cursor_ = 0;
};

inline Tensor<double> rand_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(-scale, scale);
  return Tensor<double>::from(std::move(shape), std::move(v));
}

}  // namespace detail

struct GradCheckReport {
  std::string layer;
  double max_rel_err = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

// Registry of named per-layer checks. Every layer type used by the pipeline
// registers here; the CLI `gradcheck` command and the acceptance suite both
// run the same set.
class GradCheckRegistry {
 public:
  using CheckFn = std::function<double(uint64_t seed)>;

  void add(const std::string& name, double tolerance, int seeds, CheckFn fn) {
    entries_.push_back({name, tolerance, seeds, std::move(fn)});
  }

  bool has(const std::string& name) const {
    for (const auto& e : entries_)
      if (e.name == name) return true;
    return false;
  }

  double run_one(const std::string& name, uint64_t seed) const {
    for (const auto& e : entries_)
      if (e.name == name) return e.fn(seed);
    throw Error("gradcheck: layer not registered: " + name);
  }

  std::vector<GradCheckReport> run_all(uint64_t base_seed = 1) const {
    std::vector<GradCheckReport> out;
    for (const auto& e : entries_) {
      GradCheckReport r;
      r.layer = e.name;
      r.tolerance = e.tolerance;
      for (int s = 0; s < e.seeds; ++s)
        r.max_rel_err = std::max(r.max_rel_err, e.fn(derive_seed(base_seed, e.name.size(), s)));
      r.pass = r.max_rel_err < e.tolerance;
      out.push_back(std::move(r));
    }
    return out;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> n;
    for (const auto& e : entries_) n.push_back(e.name);
    return n;
  }

 private:
  struct Entry {
    std::string name;
    double tolerance;
    int seeds;
    CheckFn fn;
  };
  std::vector<Entry> entries_;
};

// Standard registry covering every layer type in the pipeline.
// `with_broken_fixture` injects a deliberately wrong gradient, used to prove
// the harness actually fails on bad gradients.
inline GradCheckRegistry standard_gradcheck_registry(bool with_broken_fixture = false) {
  using D = double;
  GradCheckRegistry reg;

  reg.add("conv2d", 1e-6, 3, [](uint64_t seed) {
    Rng rng(seed);
    auto x = detail::rand_tensor({2, 5, 5}, rng);
    auto k = detail::rand_tensor({3, 2, 3, 3}, rng);
    auto b = detail::rand_tensor({3}, rng);
    detail::ScalarProbe probe(seed + 1);
    return finite_diff_check({x, k, b}, [&] {
      probe.begin();
      return probe.weigh(conv2d(x, k, b));
    });
  });

  reg.add("depthwise_conv", 1e-6, 3, [](uint64_t seed) {
    Rng rng(seed);
    auto x = detail::rand_tensor({4, 5, 6}, rng);
    auto k = detail::rand_tensor({4, 1, 3, 3}, rng);
    auto b = detail::rand_tensor({4}, rng);
    ConvSpec spec;
    spec.groups = 4;
    detail::ScalarProbe probe(seed + 1);
    return finite_diff_check({x, k, b}, [&] {
      probe.begin();
      return probe.weigh(conv2d(x, k, b, spec));
    });
  });

  reg.add("mha", 1e-5, 3, [](uint64_t seed) {
    Rng rng(seed);
    ModelParameters<D> params;
    MhaParams<D> p(params, "mha", 8, rng);
    auto x = detail::rand_tensor({1, 5, 8}, rng);
    std::vector<Tensor<D>> leaves{x};
    for (auto& [k, v] : params.entries()) leaves.push_back(v);
    detail::ScalarProbe probe(seed + 1);
    return finite_diff_check(leaves, [&] {
      probe.begin();
      return probe.weigh(multi_head_attention(x, x, x, 2, p));
    });
  });

  reg.add("blstm", 1e-5, 3, [](uint64_t seed) {
    Rng rng(seed);
    ModelParameters<D> params;
    BlstmParams<D> p(params, "blstm", 4, 3, rng);
    auto x = detail::rand_tensor({2, 3, 4}, rng);
    std::vector<Tensor<D>> leaves{x};
    for (auto& [k, v] : params.entries()) leaves.push_back(v);
    detail::ScalarProbe probe(seed + 1);
    return finite_diff_check(leaves, [&] {
      probe.begin();
      return probe.weigh(blstm(x, p));
    });
  });

  reg.add("rms_norm", 1e-6, 3, [](uint64_t seed) {
    Rng rng(seed);
    auto x = detail::rand_tensor({4, 3, 5}, rng);
    auto g = detail::rand_tensor({4}, rng);
    detail::ScalarProbe probe(seed + 1);
    return finite_diff_check({x, g}, [&] {
      probe.begin();
      return probe.weigh(rms_norm(x, g));
    });
  });

  reg.add("mgi", 1e-6, 3, [](uint64_t seed) {
    Rng rng(seed);
    auto y = detail::rand_tensor({6, 3, 4}, rng);
    auto e = detail::rand_tensor({6, 3, 4}, rng);
    detail::ScalarProbe probe(seed + 1);
    return finite_diff_check({y, e}, [&] {
      probe.begin();
      auto [a, b] = mgi(y, e);
      return add(probe.weigh(a), probe.weigh(b));
    });
  });

  reg.add("se_block", 1e-5, 3, [](uint64_t seed) {
    Rng rng(seed);
    ModelParameters<D> params;
    SeParams<D> p(params, "se", 5, rng);
    auto x = detail::rand_tensor({5, 4, 3}, rng);
    std::vector<Tensor<D>> leaves{x};
    for (auto& [k, v] : params.entries()) leaves.push_back(v);
    detail::ScalarProbe probe(seed + 1);
    return finite_diff_check(leaves, [&] {
      probe.begin();
      return probe.weigh(se_block(x, p));
    });
  });

  reg.add("prelu", 1e-6, 3, [](uint64_t seed) {
    Rng rng(seed);
    auto x = detail::rand_tensor({3, 4, 5}, rng);
    auto a = detail::rand_tensor({3}, rng, 0.5);
    detail::ScalarProbe probe(seed + 1);
    return finite_diff_check({x, a}, [&] {
      probe.begin();
      return probe.weigh(prelu(x, a));
    });
  });

  reg.add("improved_transformer", 1e-5, 3, [](uint64_t seed) {
    Rng rng(seed);
    ModelParameters<D> params;
    SequenceLayerParams<D> p(params, "layer", 8, 2, 4, ExtractorKind::kImproved, rng);
    auto x = detail::rand_tensor({5, 8}, rng);
    std::vector<Tensor<D>> leaves{x};
    for (auto& [k, v] : params.entries()) leaves.push_back(v);
    detail::ScalarProbe probe(seed + 1);
    return finite_diff_check(leaves, [&] {
      probe.begin();
      return probe.weigh(improved_transformer_layer(x, p));
    });
  });

  reg.add("dsfb", 1e-5, 3, [](uint64_t seed) {
    Rng rng(seed);
    ModelParameters<D> params;
    DsfbParams<D> p(params, "dsfb", 8, rng);
    auto y = detail::rand_tensor({8, 6, 7}, rng);
    auto e = detail::rand_tensor({8, 6, 7}, rng);
    std::vector<Tensor<D>> leaves{y, e};
    for (auto& [k, v] : params.entries()) leaves.push_back(v);
    detail::ScalarProbe probe(seed + 1);
    return finite_diff_check(leaves, [&] {
      probe.begin();
      auto out = dsfb_forward(StreamPair<D>{y, e}, p);
      return add(probe.weigh(out.y_stream), probe.weigh(out.e_stream));
    });
  });

  reg.add("interaction_block", 1e-5, 3, [](uint64_t seed) {
    Rng rng(seed);
    ModelParameters<D> params;
    InteractionParams<D> p(params, "ib", 6, 9, 8, rng);
    auto e = detail::rand_tensor({6, 9, 4}, rng);
    auto y = detail::rand_tensor({6, 9, 7}, rng);
    std::vector<Tensor<D>> leaves{e, y};
    for (auto& [k, v] : params.entries()) leaves.push_back(v);
    detail::ScalarProbe probe(seed + 1);
    return finite_diff_check(leaves, [&] {
      probe.begin();
      return probe.weigh(interaction_block(e, y, p));
    });
  });

  reg.add("multirange_conv", 1e-5, 3, [](uint64_t seed) {
    Rng rng(seed);
    ModelParameters<D> params;
    MultirangeParams<D> p(params, "mr", 4, {1, 2, 3}, rng);
    auto x = detail::rand_tensor({4, 6, 7}, rng);
    std::vector<Tensor<D>> leaves{x};
    for (auto& [k, v] : params.entries()) leaves.push_back(v);
    detail::ScalarProbe probe(seed + 1);
    return finite_diff_check(leaves, [&] {
      probe.begin();
      return probe.weigh(multirange_conv(x, p));
    });
  });

  reg.add("encoder", 1e-5, 3, [](uint64_t seed) {
    Rng rng(seed);
    ModelConfig cfg = ModelConfig::desk();
    cfg.channels = 6;
    cfg.d_attn = 8;
    cfg.n_fft = 16;  // F = 9
    cfg.hop = 8;
    ModelParameters<D> params;
    EncoderParams<D> p(params, cfg, rng);
    auto y = detail::rand_tensor({2, 9, 7}, rng);
    auto e = detail::rand_tensor({2, 9, 4}, rng);
    std::vector<Tensor<D>> leaves{y, e};
    for (auto& [k, v] : params.entries()) leaves.push_back(v);
    detail::ScalarProbe probe(seed + 1);
    return finite_diff_check(leaves, [&] {
      probe.begin();
      auto out = encode(y, e, p);
      return add(probe.weigh(out.mixture_rep), probe.weigh(out.enrollment_rep));
    });
  });

  reg.add("si_sdr_loss", 1e-6, 3, [](uint64_t seed) {
    Rng rng(seed);
    auto s = detail::rand_tensor({64}, rng);
    auto sh = detail::rand_tensor({64}, rng);
    return finite_diff_check({sh}, [&] { return si_sdr_loss(s, sh); });
  });

  reg.add("decoder_reconstruct", 1e-5, 3, [](uint64_t seed) {
    Rng rng(seed);
    ModelConfig cfg = ModelConfig::desk();
    cfg.channels = 3;
    cfg.fused_dim = 3;
    cfg.n_fft = 8;
    cfg.hop = 4;
    ModelParameters<D> params;
    DecoderParams<D> p(params, cfg, rng);
    auto h = detail::rand_tensor({3, 5, 4}, rng);
    std::vector<Tensor<D>> leaves{h};
    for (auto& [k, v] : params.entries()) leaves.push_back(v);
    detail::ScalarProbe probe(seed + 1);
    return finite_diff_check(leaves, [&] {
      probe.begin();
      return probe.weigh(reconstruct(h, p, cfg.window(), cfg.drc_exponent, 12));
    });
  });

  reg.add("full_model_desk", 1e-5, 1, [](uint64_t seed) {
    ModelConfig cfg = ModelConfig::desk();
    DcfNet<D> net(cfg, seed);
    Rng rng(seed + 7);
    const size_t n = 4000;  // 0.5 s at 8 kHz
    std::vector<double> mix(n), enr(n), tgt(n);
    for (size_t i = 0; i < n; ++i) {
      tgt[i] = 0.3 * std::sin(0.07 * i) + 0.05 * rng.normal();
      mix[i] = tgt[i] + 0.3 * std::sin(0.11 * i + 1.0) + 0.05 * rng.normal();
      enr[i] = 0.3 * std::sin(0.07 * i + 0.5) + 0.05 * rng.normal();
    }
    auto mix_t = Tensor<D>::from({n}, std::move(mix));
    auto enr_t = Tensor<D>::from({n}, std::move(enr));
    auto tgt_t = Tensor<D>::from({n}, std::move(tgt));
    std::vector<Tensor<D>> leaves;
    for (auto& [k, v] : net.params.entries()) leaves.push_back(v);
    FdOptions opt;
    opt.directional = true;
    opt.directions = 3;
    opt.step = 1e-5;
    return finite_diff_check(
        leaves, [&] { return net.loss(mix_t, enr_t, tgt_t); }, opt);
  });

  if (with_broken_fixture) {
    reg.add("broken_gradient_fixture", 1e-5, 1, [](uint64_t seed) {
      Rng rng(seed);
      auto x = detail::rand_tensor({8}, rng);
      // Deliberately scales the true gradient by 1.01.
      auto broken_square = [](const Tensor<D>& a) {
        std::vector<D> out(a.numel());
        for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * a.data()[i];
        return detail::make_op<D>(
            "broken_square", a.shape(), std::move(out), {a},
            [](dcfnet::detail::Node<D>& self, const std::vector<D>& up,
               dcfnet::detail::GradTable<D>& gtab) {
              std::vector<D> g(up.size());
              for (size_t i = 0; i < up.size(); ++i)
                g[i] = up[i] * D(2.02) * self.parents[0]->value[i];
              detail::accum(gtab, self.parents[0], g.data());
            });
      };
      return finite_diff_check({x}, [&] { return sum_all(broken_square(x)); });
    });
  }

  return reg;
}

}  // namespace dcfnet

// Copyright 2026 dcfnet authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include "dcfnet/nn.hpp"

namespace dcfnet {

// Warmup-cosine schedule: linear ramp from 0 to base_lr over the warmup
// epochs, then cosine annealing to exactly 0 at total_epochs. Continuous at
// the junction.
struct Schedule {
  double base_lr = 5e-4;
  double warmup_epochs = 5.0;
  double total_epochs = 150.0;
};

inline double lr_at(double epoch, const Schedule& sched) {
  check(sched.warmup_epochs < sched.total_epochs, "schedule: warmup must end before total");
  check(epoch >= 0.0 && epoch <= sched.total_epochs,
        "schedule: epoch " + std::to_string(epoch) + " outside [0, total]");
  if (epoch <= sched.warmup_epochs) return sched.base_lr * epoch / sched.warmup_epochs;
  const double progress =
      (epoch - sched.warmup_epochs) / (sched.total_epochs - sched.warmup_epochs);
  return sched.base_lr * 0.5 * (1.0 + std::cos(M_PI * progress));
}

template <typename T>
using NamedGrads = std::map<std::string, std::vector<T>>;

// Global L2 norm over all gradients, accumulated in double.
template <typename T>
double grad_global_norm(const NamedGrads<T>& grads) {
  double ss = 0.0;
  for (const auto& [name, g] : grads)
    for (T v : g) ss += static_cast<double>(v) * static_cast<double>(v);
  return std::sqrt(ss);
}

template <typename T>
void clip_grad_norm(NamedGrads<T>& grads, double max_norm) {
  const double norm = grad_global_norm(grads);
  if (norm <= max_norm || norm == 0.0) return;
  const T scale = static_cast<T>(max_norm / norm);
  for (auto& [name, g] : grads)
    for (T& v : g) v *= scale;
}

// AdamW with decoupled weight decay and bias-corrected moments:
//   m^ = m / (1 - b1^t),  v^ = v / (1 - b2^t)
//   p -= lr * m^ / (sqrt(v^) + eps) + lr * wd * p
template <typename T>
class AdamW {
 public:
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;

  void step(ModelParameters<T>& params, const NamedGrads<T>& grads, double lr) {
    ++step_;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_));
    for (auto& [name, p] : params.entries()) {
      auto git = grads.find(name);
      check(git != grads.end(), "adamw: missing gradient for " + name);
      const auto& g = git->second;
      check(g.size() == p.numel(), "adamw: gradient shape mismatch for " + name);
      auto& m = m_[name];
      auto& v = v_[name];
      if (m.empty()) {
        m.assign(p.numel(), T(0));
        v.assign(p.numel(), T(0));
      }
      auto pv = p.mutable_data();
      for (size_t i = 0; i < pv.size(); ++i) {
        const double gi = static_cast<double>(g[i]);
        const double mi = beta1 * static_cast<double>(m[i]) + (1.0 - beta1) * gi;
        const double vi = beta2 * static_cast<double>(v[i]) + (1.0 - beta2) * gi * gi;
        m[i] = static_cast<T>(mi);
        v[i] = static_cast<T>(vi);
        const double mhat = mi / bc1;
        const double vhat = vi / bc2;
        const double x = static_cast<double>(pv[i]);
        pv[i] = static_cast<T>(x - lr * (mhat / (std::sqrt(vhat) + eps)) - lr * weight_decay * x);
      }
    }
  }

  uint64_t step_count() const { return step_; }
  void set_step_count(uint64_t s) { step_ = s; }

  std::map<std::string, std::vector<T>>& first_moments() { return m_; }
  std::map<std::string, std::vector<T>>& second_moments() { return v_; }

 private:
  uint64_t step_ = 0;
  std::map<std::string, std::vector<T>> m_, v_;
};

}  // namespace dcfnet

// Copyright 2026 dcfnet authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// Minimal dense-tensor engine with reverse-mode automatic differentiation.
// Tensors are shared handles onto graph nodes; ops are free functions that
// record a backward closure when gradients are enabled. A backward pass walks
// the recorded graph in reverse topological order and accumulates gradients
// for leaf nodes only (parameters and inputs).

#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace dcfnet {

namespace detail {

// Vectorizable exp for the float path (~1 ulp, exact at 0). Double keeps
// std::exp so finite-difference validation runs at full precision.
inline float fast_expf(float x) {
  x = std::min(88.0f, std::max(-87.0f, x));
  const float t = x * 1.44269504088896341f;  // log2(e)
  const float k = std::floor(t + 0.5f);
  const float f = t - k;
  float p = 1.535336188319500e-4f;
  p = p * f + 1.339887440266574e-3f;
  p = p * f + 9.618437357674640e-3f;
  p = p * f + 5.550332471162809e-2f;
  p = p * f + 2.402264791363012e-1f;
  p = p * f + 6.931472028550421e-1f;
  p = p * f + 1.0f;
  const uint32_t bits = static_cast<uint32_t>(static_cast<int32_t>(k) + 127) << 23;
  return p * std::bit_cast<float>(bits);
}

inline float exp_fn(float x) { return fast_expf(x); }
inline double exp_fn(double x) { return std::exp(x); }

template <typename T>
inline T sigmoid_fn(T x) {
  return x >= T(0) ? T(1) / (T(1) + exp_fn(-x)) : exp_fn(x) / (T(1) + exp_fn(x));
}

inline float tanh_fn(float x) { return 2.0f / (1.0f + exp_fn(-2.0f * x)) - 1.0f; }
inline double tanh_fn(double x) { return std::tanh(x); }

}  // namespace detail

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ShapeError : Error {
  using Error::Error;
};
struct ValueError : Error {
  using Error::Error;
};
struct IoError : Error {
  using Error::Error;
};

using Shape = std::vector<size_t>;

inline size_t shape_numel(const Shape& s) {
  size_t n = 1;
  for (size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

inline void check(bool cond, const std::string& msg) {
  if (!cond) throw Error(msg);
}
inline void check_shape(bool cond, const std::string& msg) {
  if (!cond) throw ShapeError(msg);
}

// Thread-local switch disabling graph recording (inference / metric paths).
inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

struct NoGradGuard {
  NoGradGuard() : prev_(grad_mode_flag()) { grad_mode_flag() = false; }
  ~NoGradGuard() { grad_mode_flag() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

template <typename T>
class Tensor;

namespace detail {

// Per-backward-pass gradient table. Interior-node gradients are dropped as
// soon as their backward closure has run; leaf gradients are exported at the
// end. Keeping scratch out of the nodes lets independent graphs over shared
// (frozen) parameters run backward concurrently.
template <typename T>
struct GradTable {
  std::unordered_map<const void*, std::vector<T>> slots;

  std::vector<T>& at(const void* node, size_t n) {
    auto& v = slots[node];
    if (v.empty()) v.assign(n, T(0));
    return v;
  }
  std::vector<T>* find(const void* node) {
    auto it = slots.find(node);
    return it == slots.end() ? nullptr : &it->second;
  }
  void drop(const void* node) { slots.erase(node); }
};

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // leaf accumulator, filled by Tensor::backward
  bool requires_grad = false;
  bool is_leaf = true;
  bool consumed = false;  // backward already ran through this op
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node<T>>> parents;
  // Receives this node's upstream gradient; accumulates into parents' slots.
  std::function<void(Node<T>&, const std::vector<T>&, GradTable<T>&)> backward_fn;

  size_t numel() const { return value.size(); }
};

}  // namespace detail

template <typename T>
using GradMap = std::unordered_map<const void*, std::vector<T>>;

template <typename T>
class Tensor {
 public:
  using Node = detail::Node<T>;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return filled(std::move(shape), T(0), requires_grad);
  }

  static Tensor filled(Shape shape, T v, bool requires_grad = false) {
    auto n = std::make_shared<Node>();
    n->value.assign(shape_numel(shape), v);
    n->shape = std::move(shape);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor from(Shape shape, std::vector<T> data, bool requires_grad = false) {
    check_shape(shape_numel(shape) == data.size(),
                "tensor data size " + std::to_string(data.size()) +
                    " does not match shape " + shape_str(shape));
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(data);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor scalar(T v, bool requires_grad = false) {
    return from({1}, {v}, requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  size_t numel() const { return node_->value.size(); }
  size_t dim(size_t i) const { return node_->shape.at(i); }
  size_t rank() const { return node_->shape.size(); }

  std::span<const T> data() const { return node_->value; }
  // Mutable access is reserved for leaves (parameter updates, input staging);
  // rewriting an interior node would desynchronize saved backward state.
  std::span<T> mutable_data() {
    check(node_->is_leaf, "mutable_data on non-leaf tensor");
    return node_->value;
  }

  T item() const {
    check_shape(numel() == 1, "item() on non-scalar tensor " + shape_str(shape()));
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool rg) {
    check(node_->is_leaf, "requires_grad may only be toggled on leaves");
    node_->requires_grad = rg;
  }

  bool is_leaf() const { return node_->is_leaf; }
  const char* op() const { return node_->op; }

  // Gradient accumulated by backward(); empty until a pass has touched it.
  const std::vector<T>& grad() const { return node_->grad; }
  void zero_grad() { node_->grad.assign(node_->value.size(), T(0)); }
  void clear_grad() { node_->grad.clear(); }

  bool all_finite() const {
    for (T v : node_->value)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  // Reverse-mode pass from a scalar root. Leaf gradients accumulate into each
  // leaf's grad buffer. A graph may be walked once; pass retain_graph to walk
  // it again (e.g. for gradient-of-gradient experiments or repeated probes).
  void backward(T seed = T(1), bool retain_graph = false) {
    GradMap<T> sink;
    backward_collect(sink, seed, retain_graph);
    for (auto& [ptr, g] : sink) {
      auto* node = static_cast<Node*>(const_cast<void*>(ptr));
      if (node->grad.empty()) node->grad.assign(node->numel(), T(0));
      for (size_t i = 0; i < g.size(); ++i) node->grad[i] += g[i];
    }
  }

  // As backward(), but leaf gradients are returned in `sink` keyed by node
  // pointer instead of being accumulated in place. This is the thread-safe
  // form used for batch-parallel training over shared frozen parameters.
  void backward_collect(GradMap<T>& sink, T seed = T(1), bool retain_graph = false) {
    check_shape(numel() == 1, "backward requires a scalar output, got " + shape_str(shape()));
    // Topological order over the requires_grad subgraph.
    std::vector<Node*> topo;
    std::unordered_map<Node*, int> state;  // 0 unseen, 1 open, 2 done
    std::vector<Node*> stack{node_.get()};
    while (!stack.empty()) {
      Node* n = stack.back();
      int& st = state[n];
      if (st == 0) {
        st = 1;
        for (auto& p : n->parents)
          if (p->requires_grad && state[p.get()] != 2) stack.push_back(p.get());
      } else {
        stack.pop_back();
        if (st == 1) {
          st = 2;
          topo.push_back(n);
        }
      }
    }
    for (Node* n : topo)
      if (!n->is_leaf && n->consumed && !retain_graph)
        throw Error(std::string("graph through op '") + n->op +
                    "' already consumed by backward (pass retain_graph to reuse)");

    detail::GradTable<T> gtab;
    gtab.at(node_.get(), 1)[0] = seed;
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
      Node* n = *it;
      auto* up = gtab.find(n);
      if (up == nullptr) continue;  // no gradient reached this node
      if (!n->is_leaf) {
        if (n->backward_fn) n->backward_fn(*n, *up, gtab);
        if (!retain_graph) n->consumed = true;
        gtab.drop(n);
      }
    }
    for (auto& [ptr, g] : gtab.slots) {
      auto* node = static_cast<Node*>(const_cast<void*>(ptr));
      if (node->is_leaf && node->requires_grad) sink[ptr].swap(g);
    }
  }

  const void* id() const { return node_.get(); }
  std::shared_ptr<Node>& node() { return node_; }
  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

namespace detail {

template <typename T>
Tensor<T> make_op(const char* op, Shape shape, std::vector<T> value,
                  std::vector<Tensor<T>> parents,
                  std::function<void(Node<T>&, const std::vector<T>&, GradTable<T>&)> bwd) {
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->op = op;
  n->is_leaf = false;
  bool rg = false;
  for (auto& p : parents) rg = rg || p.requires_grad();
  rg = rg && grad_mode_flag();
  n->requires_grad = rg;
  if (rg) {
    n->parents.reserve(parents.size());
    for (auto& p : parents) n->parents.push_back(p.node());
    n->backward_fn = std::move(bwd);
  } else {
    n->is_leaf = true;  // constant result; reusable without backward bookkeeping
    n->op = op;
  }
  return Tensor<T>(std::move(n));
}

template <typename T>
void accum(GradTable<T>& gtab, const std::shared_ptr<Node<T>>& p, const T* contrib) {
  if (!p->requires_grad) return;
  auto& slot = gtab.slots[p.get()];
  if (slot.empty())
    slot.assign(contrib, contrib + p->numel());
  else
    for (size_t i = 0; i < slot.size(); ++i) slot[i] += contrib[i];
}

// Move form: donates the contribution vector when this is the first gradient
// reaching the parent, which it almost always is.
template <typename T>
void accum(GradTable<T>& gtab, const std::shared_ptr<Node<T>>& p, std::vector<T>&& contrib) {
  if (!p->requires_grad) return;
  auto& slot = gtab.slots[p.get()];
  if (slot.empty())
    slot = std::move(contrib);
  else
    for (size_t i = 0; i < slot.size(); ++i) slot[i] += contrib[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  check_shape(a.shape() == b.shape(),
              "add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<T> out(a.numel());
  const auto av = a.data(), bv = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return detail::make_op<T>(
      "add", a.shape(), std::move(out), {a, b},
      [](detail::Node<T>& self, const std::vector<T>& up, detail::GradTable<T>& gtab) {
        detail::accum(gtab, self.parents[0], up.data());
        detail::accum(gtab, self.parents[1], up.data());
      });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  check_shape(a.shape() == b.shape(),
              "sub: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<T> out(a.numel());
  const auto av = a.data(), bv = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return detail::make_op<T>(
      "sub", a.shape(), std::move(out), {a, b},
      [](detail::Node<T>& self, const std::vector<T>& up, detail::GradTable<T>& gtab) {
        detail::accum(gtab, self.parents[0], up.data());
        if (self.parents[1]->requires_grad) {
          std::vector<T> neg(up.size());
          for (size_t i = 0; i < up.size(); ++i) neg[i] = -up[i];
          detail::accum(gtab, self.parents[1], std::move(neg));
        }
      });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  check_shape(a.shape() == b.shape(),
              "mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<T> out(a.numel());
  const auto av = a.data(), bv = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return detail::make_op<T>(
      "mul", a.shape(), std::move(out), {a, b},
      [](detail::Node<T>& self, const std::vector<T>& up, detail::GradTable<T>& gtab) {
        auto& pa = self.parents[0];
        auto& pb = self.parents[1];
        if (pa->requires_grad) {
          std::vector<T> g(up.size());
          for (size_t i = 0; i < up.size(); ++i) g[i] = up[i] * pb->value[i];
          detail::accum(gtab, pa, std::move(g));
        }
        if (pb->requires_grad) {
          std::vector<T> g(up.size());
          for (size_t i = 0; i < up.size(); ++i) g[i] = up[i] * pa->value[i];
          detail::accum(gtab, pb, std::move(g));
        }
      });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  check_shape(a.shape() == b.shape(),
              "div: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<T> out(a.numel());
  const auto av = a.data(), bv = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] / bv[i];
  return detail::make_op<T>(
      "div", a.shape(), std::move(out), {a, b},
      [](detail::Node<T>& self, const std::vector<T>& up, detail::GradTable<T>& gtab) {
        auto& pa = self.parents[0];
        auto& pb = self.parents[1];
        if (pa->requires_grad) {
          std::vector<T> g(up.size());
          for (size_t i = 0; i < up.size(); ++i) g[i] = up[i] / pb->value[i];
          detail::accum(gtab, pa, std::move(g));
        }
        if (pb->requires_grad) {
          std::vector<T> g(up.size());
          for (size_t i = 0; i < up.size(); ++i)
            g[i] = -up[i] * pa->value[i] / (pb->value[i] * pb->value[i]);
          detail::accum(gtab, pb, std::move(g));
        }
      });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, T c) {
  std::vector<T> out(a.numel());
  const auto av = a.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] * c;
  return detail::make_op<T>(
      "mul_scalar", a.shape(), std::move(out), {a},
      [c](detail::Node<T>& self, const std::vector<T>& up, detail::GradTable<T>& gtab) {
        std::vector<T> g(up.size());
        for (size_t i = 0; i < up.size(); ++i) g[i] = up[i] * c;
        detail::accum(gtab, self.parents[0], std::move(g));
      });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T c) {
  std::vector<T> out(a.numel());
  const auto av = a.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] + c;
  return detail::make_op<T>(
      "add_scalar", a.shape(), std::move(out), {a},
      [](detail::Node<T>& self, const std::vector<T>& up, detail::GradTable<T>& gtab) {
        detail::accum(gtab, self.parents[0], up.data());
      });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& a) {
  return mul_scalar(a, T(-1));
}

// ---------------------------------------------------------------------------
// Nonlinearities

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  std::vector<T> out(a.numel());
  const auto av = a.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = detail::sigmoid_fn(av[i]);
  return detail::make_op<T>(
      "sigmoid", a.shape(), std::move(out), {a},
      [](detail::Node<T>& self, const std::vector<T>& up, detail::GradTable<T>& gtab) {
        std::vector<T> g(up.size());
        for (size_t i = 0; i < up.size(); ++i) {
          const T y = self.value[i];
          g[i] = up[i] * y * (T(1) - y);
        }
        detail::accum(gtab, self.parents[0], std::move(g));
      });
}

template <typename T>
Tensor<T> tanh_op(const Tensor<T>& a) {
  std::vector<T> out(a.numel());
  const auto av = a.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = detail::tanh_fn(av[i]);
  return detail::make_op<T>(
      "tanh", a.shape(), std::move(out), {a},
      [](detail::Node<T>& self, const std::vector<T>& up, detail::GradTable<T>& gtab) {
        std::vector<T> g(up.size());
        for (size_t i = 0; i < up.size(); ++i) {
          const T y = self.value[i];
          g[i] = up[i] * (T(1) - y * y);
        }
        detail::accum(gtab, self.parents[0], std::move(g));
      });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  std::vector<T> out(a.numel());
  const auto av = a.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] > T(0) ? av[i] : T(0);
  return detail::make_op<T>(
      "relu", a.shape(), std::move(out), {a},
      [](detail::Node<T>& self, const std::vector<T>& up, detail::GradTable<T>& gtab) {
        auto& p = self.parents[0];
        std::vector<T> g(up.size());
        for (size_t i = 0; i < up.size(); ++i) g[i] = p->value[i] > T(0) ? up[i] : T(0);
        detail::accum(gtab, p, std::move(g));
      });
}

template <typename T>
Tensor<T> log_op(const Tensor<T>& a) {
  std::vector<T> out(a.numel());
  const auto av = a.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = std::log(av[i]);
  return detail::make_op<T>(
      "log", a.shape(), std::move(out), {a},
      [](detail::Node<T>& self, const std::vector<T>& up, detail::GradTable<T>& gtab) {
        auto& p = self.parents[0];
        std::vector<T> g(up.size());
        for (size_t i = 0; i < up.size(); ++i) g[i] = up[i] / p->value[i];
        detail::accum(gtab, p, std::move(g));
      });
}

// PReLU with one learnable slope per leading-axis channel.
template <typename T>
Tensor<T> prelu(const Tensor<T>& x, const Tensor<T>& alpha) {
  check_shape(x.rank() >= 1 && alpha.rank() == 1 && alpha.dim(0) == x.dim(0),
              "prelu: alpha must be [C] matching leading axis of x");
  const size_t C = x.dim(0);
  const size_t inner = x.numel() / C;
  std::vector<T> out(x.numel());
  const auto xv = x.data(), av = alpha.data();
  for (size_t c = 0; c < C; ++c)
    for (size_t i = 0; i < inner; ++i) {
      const T v = xv[c * inner + i];
      out[c * inner + i] = v > T(0) ? v : av[c] * v;
    }
  return detail::make_op<T>(
      "prelu", x.shape(), std::move(out), {x, alpha},
      [C, inner](detail::Node<T>& self, const std::vector<T>& up, detail::GradTable<T>& gtab) {
        auto& px = self.parents[0];
        auto& pa = self.parents[1];
        if (px->requires_grad) {
          std::vector<T> g(up.size());
          for (size_t c = 0; c < C; ++c)
            for (size_t i = 0; i < inner; ++i) {
              const size_t k = c * inner + i;
              g[k] = px->value[k] > T(0) ? up[k] : pa->value[c] * up[k];
            }
          detail::accum(gtab, px, std::move(g));
        }
        if (pa->requires_grad) {
          std::vector<T> g(C, T(0));
          for (size_t c = 0; c < C; ++c)
            for (size_t i = 0; i < inner; ++i) {
              const size_t k = c * inner + i;
              if (px->value[k] <= T(0)) g[c] += up[k] * px->value[k];
            }
          detail::accum(gtab, pa, std::move(g));
        }
      });
}

// ---------------------------------------------------------------------------
// Shape ops

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  check_shape(shape_numel(shape) == a.numel(),
              "reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  std::vector<T> out(a.data().begin(), a.data().end());
  return detail::make_op<T>(
      "reshape", std::move(shape), std::move(out), {a},
      [](detail::Node<T>& self, const std::vector<T>& up, detail::GradTable<T>& gtab) {
        detail::accum(gtab, self.parents[0], up.data());
      });
}

namespace detail {

inline std::vector<size_t> row_major_strides(const Shape& s) {
  std::vector<size_t> st(s.size(), 1);
  for (size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

template <typename T>
void permute_fill(const Shape& in_shape, const std::vector<T>& in,
                  const std::vector<size_t>& axes, std::vector<T>& out) {
  const size_t r = in_shape.size();
  Shape out_shape(r);
  for (size_t i = 0; i < r; ++i) out_shape[i] = in_shape[axes[i]];
  const auto in_str = row_major_strides(in_shape);
  const auto out_str = row_major_strides(out_shape);
  std::vector<size_t> src_stride(r);
  for (size_t i = 0; i < r; ++i) src_stride[i] = in_str[axes[i]];
  const size_t n = in.size();
  std::vector<size_t> idx(r, 0);
  size_t src = 0;
  for (size_t o = 0; o < n; ++o) {
    out[o] = in[src];
    for (size_t i = r; i-- > 0;) {
      if (++idx[i] < out_shape[i]) {
        src += src_stride[i];
        break;
      }
      idx[i] = 0;
      src -= src_stride[i] * (out_shape[i] - 1);
    }
  }
}

}  // namespace detail

template <typename T>
Tensor<T> permute(const Tensor<T>& a, std::vector<size_t> axes) {
  const size_t r = a.rank();
  check_shape(axes.size() == r, "permute: axes rank mismatch");
  Shape out_shape(r);
  for (size_t i = 0; i < r; ++i) out_shape[i] = a.dim(axes[i]);
  std::vector<T> out(a.numel());
  std::vector<T> in(a.data().begin(), a.data().end());
  detail::permute_fill(a.shape(), in, axes, out);
  return detail::make_op<T>(
      "permute", std::move(out_shape), std::move(out), {a},
      [axes](detail::Node<T>& self, const std::vector<T>& up, detail::GradTable<T>& gtab) {
        // Gradient of a permutation is the inverse permutation.
        std::vector<size_t> inv(axes.size());
        for (size_t i = 0; i < axes.size(); ++i) inv[axes[i]] = i;
        std::vector<T> g(up.size());
        detail::permute_fill(self.shape, up, inv, g);
        detail::accum(gtab, self.parents[0], std::move(g));
      });
}

// Contiguous slice along one axis.
template <typename T>
Tensor<T> slice(const Tensor<T>& a, size_t axis, size_t start, size_t len) {
  check_shape(axis < a.rank(), "slice: axis out of range");
  check_shape(start + len <= a.dim(axis), "slice: range exceeds axis extent");
  Shape out_shape = a.shape();
  out_shape[axis] = len;
  size_t outer = 1, inner = 1;
  for (size_t i = 0; i < axis; ++i) outer *= a.dim(i);
  for (size_t i = axis + 1; i < a.rank(); ++i) inner *= a.dim(i);
  const size_t in_axis = a.dim(axis);
  std::vector<T> out(shape_numel(out_shape));
  const auto av = a.data();
  for (size_t o = 0; o < outer; ++o)
    std::copy(av.begin() + (o * in_axis + start) * inner,
              av.begin() + (o * in_axis + start + len) * inner,
              out.begin() + o * len * inner);
  return detail::make_op<T>(
      "slice", std::move(out_shape), std::move(out), {a},
      [axis, start, len, outer, inner, in_axis](detail::Node<T>& self, const std::vector<T>& up,
                                                detail::GradTable<T>& gtab) {
        auto& p = self.parents[0];
        if (!p->requires_grad) return;
        auto& slot = gtab.at(p.get(), p->numel());
        for (size_t o = 0; o < outer; ++o)
          for (size_t j = 0; j < len * inner; ++j)
            slot[(o * in_axis + start) * inner + j] += up[o * len * inner + j];
      });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, size_t axis) {
  check(!parts.empty(), "concat: empty input list");
  const Shape& s0 = parts[0].shape();
  check_shape(axis < s0.size(), "concat: axis out of range");
  size_t total = 0;
  for (const auto& p : parts) {
    check_shape(p.rank() == s0.size(), "concat: rank mismatch");
    for (size_t i = 0; i < s0.size(); ++i)
      check_shape(i == axis || p.dim(i) == s0[i], "concat: extent mismatch off-axis");
    total += p.dim(axis);
  }
  Shape out_shape = s0;
  out_shape[axis] = total;
  size_t outer = 1, inner = 1;
  for (size_t i = 0; i < axis; ++i) outer *= s0[i];
  for (size_t i = axis + 1; i < s0.size(); ++i) inner *= s0[i];
  std::vector<T> out(shape_numel(out_shape));
  std::vector<size_t> extents;
  for (size_t o = 0; o < outer; ++o) {
    size_t off = 0;
    for (const auto& p : parts) {
      const size_t span = p.dim(axis) * inner;
      std::copy(p.data().begin() + o * span, p.data().begin() + (o + 1) * span,
                out.begin() + (o * total + off) * inner);
      off += p.dim(axis);
    }
  }
  for (const auto& p : parts) extents.push_back(p.dim(axis));
  return detail::make_op<T>(
      "concat", std::move(out_shape), std::move(out), parts,
      [axis, outer, inner, total, extents](detail::Node<T>& self, const std::vector<T>& up,
                                           detail::GradTable<T>& gtab) {
        size_t off = 0;
        for (size_t k = 0; k < self.parents.size(); ++k) {
          auto& p = self.parents[k];
          const size_t ext = extents[k];
          if (p->requires_grad) {
            auto& slot = gtab.at(p.get(), p->numel());
            for (size_t o = 0; o < outer; ++o)
              for (size_t j = 0; j < ext * inner; ++j)
                slot[o * ext * inner + j] += up[(o * total + off) * inner + j];
          }
          off += ext;
        }
      });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Tensor<T> sum_all(const Tensor<T>& a) {
  T s = T(0);
  for (T v : a.data()) s += v;
  return detail::make_op<T>(
      "sum", {1}, {s}, {a},
      [](detail::Node<T>& self, const std::vector<T>& up, detail::GradTable<T>& gtab) {
        auto& p = self.parents[0];
        if (!p->requires_grad) return;
        auto& slot = gtab.at(p.get(), p->numel());
        for (auto& g : slot) g += up[0];
      });
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& a) {
  return mul_scalar(sum_all(a), T(1) / static_cast<T>(a.numel()));
}

// Softmax over the last axis, computed with max subtraction.
template <typename T>
Tensor<T> softmax_last(const Tensor<T>& a) {
  const size_t cols = a.dim(a.rank() - 1);
  const size_t rows = a.numel() / cols;
  std::vector<T> out(a.numel());
  const auto av = a.data();
  for (size_t r = 0; r < rows; ++r) {
    const T* x = av.data() + r * cols;
    T* y = out.data() + r * cols;
    T mx = x[0];
    for (size_t c = 1; c < cols; ++c) mx = std::max(mx, x[c]);
    T sum = T(0);
    for (size_t c = 0; c < cols; ++c) {
      y[c] = detail::exp_fn(x[c] - mx);
      sum += y[c];
    }
    const T inv = T(1) / sum;
    for (size_t c = 0; c < cols; ++c) y[c] *= inv;
  }
  return detail::make_op<T>(
      "softmax", a.shape(), std::move(out), {a},
      [cols, rows](detail::Node<T>& self, const std::vector<T>& up, detail::GradTable<T>& gtab) {
        auto& p = self.parents[0];
        if (!p->requires_grad) return;
        std::vector<T> g(up.size());
        for (size_t r = 0; r < rows; ++r) {
          const T* y = self.value.data() + r * cols;
          const T* u = up.data() + r * cols;
          T dot = T(0);
          for (size_t c = 0; c < cols; ++c) dot += u[c] * y[c];
          for (size_t c = 0; c < cols; ++c) g[r * cols + c] = y[c] * (u[c] - dot);
        }
        detail::accum(gtab, p, std::move(g));
      });
}

// ---------------------------------------------------------------------------
// Matrix multiply
//
// a: [..., M, K], b: [K, N] or [..., K, N] with identical leading dims.
// A 2-D b is broadcast across a's batch.

namespace detail {

template <typename T>
void gemm_acc(const T* a, const T* b, T* c, size_t M, size_t K, size_t N) {
  // c[M,N] += a[M,K] * b[K,N]; k-inner-j loop streams b rows contiguously.
  for (size_t m = 0; m < M; ++m) {
    T* crow = c + m * N;
    const T* arow = a + m * K;
    for (size_t k = 0; k < K; ++k) {
      const T av = arow[k];
      if (av == T(0)) continue;
      const T* brow = b + k * N;
      for (size_t n = 0; n < N; ++n) crow[n] += av * brow[n];
    }
  }
}

template <typename T>
void gemm_at_b(const T* a, const T* b, T* c, size_t M, size_t K, size_t N) {
  // c[K,N] += a[M,K]^T * b[M,N]
  for (size_t m = 0; m < M; ++m) {
    const T* arow = a + m * K;
    const T* brow = b + m * N;
    for (size_t k = 0; k < K; ++k) {
      const T av = arow[k];
      if (av == T(0)) continue;
      T* crow = c + k * N;
      for (size_t n = 0; n < N; ++n) crow[n] += av * brow[n];
    }
  }
}

// Dot product with eight independent accumulator lanes. The fixed summation
// order keeps results deterministic while letting the compiler vectorize a
// reduction it could not otherwise reassociate.
template <typename T>
T dot_lanes(const T* a, const T* b, size_t n) {
  T acc[8] = {T(0), T(0), T(0), T(0), T(0), T(0), T(0), T(0)};
  size_t i = 0;
  for (; i + 8 <= n; i += 8)
    for (size_t j = 0; j < 8; ++j) acc[j] += a[i + j] * b[i + j];
  T s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

template <typename T>
void gemm_a_bt(const T* a, const T* b, T* c, size_t M, size_t N, size_t K) {
  // c[M,K] += a[M,N] * b[K,N]^T; dot of contiguous rows.
  for (size_t m = 0; m < M; ++m) {
    const T* arow = a + m * N;
    T* crow = c + m * K;
    for (size_t k = 0; k < K; ++k) crow[k] += dot_lanes(arow, b + k * N, N);
  }
}

}  // namespace detail

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  check_shape(a.rank() >= 2 && b.rank() >= 2, "matmul: inputs must have rank >= 2");
  const size_t M = a.dim(a.rank() - 2), K = a.dim(a.rank() - 1);
  const size_t Kb = b.dim(b.rank() - 2), N = b.dim(b.rank() - 1);
  check_shape(K == Kb, "matmul: inner dims differ, " + shape_str(a.shape()) + " x " +
                           shape_str(b.shape()));
  const bool b_broadcast = (b.rank() == 2);
  size_t batch = 1;
  for (size_t i = 0; i + 2 < a.rank(); ++i) batch *= a.dim(i);
  if (!b_broadcast) {
    check_shape(a.rank() == b.rank(), "matmul: batch rank mismatch");
    for (size_t i = 0; i + 2 < a.rank(); ++i)
      check_shape(a.dim(i) == b.dim(i), "matmul: batch extent mismatch");
  }
  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  out_shape.push_back(N);
  std::vector<T> out(batch * M * N, T(0));
  const auto av = a.data(), bv = b.data();
  for (size_t i = 0; i < batch; ++i)
    detail::gemm_acc(av.data() + i * M * K, bv.data() + (b_broadcast ? 0 : i * K * N),
                     out.data() + i * M * N, M, K, N);
  return detail::make_op<T>(
      "matmul", std::move(out_shape), std::move(out), {a, b},
      [M, K, N, batch, b_broadcast](detail::Node<T>& self, const std::vector<T>& up,
                                    detail::GradTable<T>& gtab) {
        auto& pa = self.parents[0];
        auto& pb = self.parents[1];
        if (pa->requires_grad) {
          std::vector<T> g(pa->numel(), T(0));
          for (size_t i = 0; i < batch; ++i)
            detail::gemm_a_bt(up.data() + i * M * N,
                              pb->value.data() + (b_broadcast ? 0 : i * K * N),
                              g.data() + i * M * K, M, N, K);
          detail::accum(gtab, pa, std::move(g));
        }
        if (pb->requires_grad) {
          std::vector<T> g(pb->numel(), T(0));
          for (size_t i = 0; i < batch; ++i)
            detail::gemm_at_b(pa->value.data() + i * M * K, up.data() + i * M * N,
                              g.data() + (b_broadcast ? 0 : i * K * N), M, K, N);
          detail::accum(gtab, pb, std::move(g));
        }
      });
}

// y[..., N] = x[..., N] + b[N]
template <typename T>
Tensor<T> add_rowvec(const Tensor<T>& x, const Tensor<T>& b) {
  check_shape(b.rank() == 1 && x.dim(x.rank() - 1) == b.dim(0),
              "add_rowvec: bias length must match last axis");
  const size_t N = b.dim(0);
  const size_t rows = x.numel() / N;
  std::vector<T> out(x.numel());
  const auto xv = x.data(), bv = b.data();
  for (size_t r = 0; r < rows; ++r)
    for (size_t n = 0; n < N; ++n) out[r * N + n] = xv[r * N + n] + bv[n];
  return detail::make_op<T>(
      "add_rowvec", x.shape(), std::move(out), {x, b},
      [N, rows](detail::Node<T>& self, const std::vector<T>& up, detail::GradTable<T>& gtab) {
        detail::accum(gtab, self.parents[0], up.data());
        auto& pb = self.parents[1];
        if (pb->requires_grad) {
          std::vector<T> g(N, T(0));
          for (size_t r = 0; r < rows; ++r)
            for (size_t n = 0; n < N; ++n) g[n] += up[r * N + n];
          detail::accum(gtab, pb, std::move(g));
        }
      });
}

// ---------------------------------------------------------------------------
// Channel-axis helpers (leading axis of a [C, ...] tensor)

// Per-channel scaling: y[c, ...] = x[c, ...] * s[c]. Used by SE gating.
template <typename T>
Tensor<T> channel_scale(const Tensor<T>& x, const Tensor<T>& s) {
  check_shape(s.rank() == 1 && x.rank() >= 1 && s.dim(0) == x.dim(0),
              "channel_scale: scale must be [C] matching leading axis");
  const size_t C = x.dim(0);
  const size_t inner = x.numel() / C;
  std::vector<T> out(x.numel());
  const auto xv = x.data(), sv = s.data();
  for (size_t c = 0; c < C; ++c)
    for (size_t i = 0; i < inner; ++i) out[c * inner + i] = xv[c * inner + i] * sv[c];
  return detail::make_op<T>(
      "channel_scale", x.shape(), std::move(out), {x, s},
      [C, inner](detail::Node<T>& self, const std::vector<T>& up, detail::GradTable<T>& gtab) {
        auto& px = self.parents[0];
        auto& ps = self.parents[1];
        if (px->requires_grad) {
          std::vector<T> g(up.size());
          for (size_t c = 0; c < C; ++c)
            for (size_t i = 0; i < inner; ++i)
              g[c * inner + i] = up[c * inner + i] * ps->value[c];
          detail::accum(gtab, px, std::move(g));
        }
        if (ps->requires_grad) {
          std::vector<T> g(C, T(0));
          for (size_t c = 0; c < C; ++c)
            for (size_t i = 0; i < inner; ++i) g[c] += up[c * inner + i] * px->value[c * inner + i];
          detail::accum(gtab, ps, std::move(g));
        }
      });
}

// Mean over all non-leading axes: [C, ...] -> [C]. The squeeze step of SE.
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  check_shape(x.rank() >= 2, "global_avg_pool: rank must be >= 2");
  const size_t C = x.dim(0);
  const size_t inner = x.numel() / C;
  std::vector<T> out(C, T(0));
  const auto xv = x.data();
  for (size_t c = 0; c < C; ++c) {
    T s = T(0);
    for (size_t i = 0; i < inner; ++i) s += xv[c * inner + i];
    out[c] = s / static_cast<T>(inner);
  }
  return detail::make_op<T>(
      "global_avg_pool", {C}, std::move(out), {x},
      [C, inner](detail::Node<T>& self, const std::vector<T>& up, detail::GradTable<T>& gtab) {
        auto& p = self.parents[0];
        if (!p->requires_grad) return;
        auto& slot = gtab.at(p.get(), p->numel());
        const T scale = T(1) / static_cast<T>(inner);
        for (size_t c = 0; c < C; ++c)
          for (size_t i = 0; i < inner; ++i) slot[c * inner + i] += up[c] * scale;
      });
}

// RMS normalization over the last axis with per-feature gain, for sequence
// layouts [..., d]: y[p, c] = x[p, c] / sqrt(mean_c x[p, c]^2 + eps) * gain[c]
template <typename T>
Tensor<T> rms_norm_last(const Tensor<T>& x, const Tensor<T>& gain, T eps = T(1e-8)) {
  const size_t C = x.dim(x.rank() - 1);
  check_shape(gain.rank() == 1 && gain.dim(0) == C,
              "rms_norm_last: gain must be [d] matching last axis");
  const size_t P = x.numel() / C;
  std::vector<T> out(x.numel());
  std::vector<T> inv_rms(P);
  const auto xv = x.data(), gv = gain.data();
  for (size_t p = 0; p < P; ++p) {
    const T* row = xv.data() + p * C;
    T ss = T(0);
    for (size_t c = 0; c < C; ++c) ss += row[c] * row[c];
    const T r = T(1) / std::sqrt(ss / static_cast<T>(C) + eps);
    inv_rms[p] = r;
    for (size_t c = 0; c < C; ++c) out[p * C + c] = row[c] * r * gv[c];
  }
  return detail::make_op<T>(
      "rms_norm_last", x.shape(), std::move(out), {x, gain},
      [C, P, inv_rms](detail::Node<T>& self, const std::vector<T>& up, detail::GradTable<T>& gtab) {
        auto& px = self.parents[0];
        auto& pg = self.parents[1];
        const auto& xv = px->value;
        const auto& gv = pg->value;
        if (px->requires_grad) {
          std::vector<T> g(px->numel());
          for (size_t p = 0; p < P; ++p) {
            const T* row = xv.data() + p * C;
            const T* urow = up.data() + p * C;
            T dot = T(0);
            for (size_t c = 0; c < C; ++c) dot += urow[c] * gv[c] * row[c];
            const T r = inv_rms[p];
            const T corr = dot * r * r / static_cast<T>(C);
            for (size_t c = 0; c < C; ++c) g[p * C + c] = r * (gv[c] * urow[c] - row[c] * corr);
          }
          detail::accum(gtab, px, std::move(g));
        }
        if (pg->requires_grad) {
          std::vector<T> g(C, T(0));
          for (size_t p = 0; p < P; ++p)
            for (size_t c = 0; c < C; ++c) g[c] += up[p * C + c] * xv[p * C + c] * inv_rms[p];
          detail::accum(gtab, pg, std::move(g));
        }
      });
}

// RMS normalization over the channel (leading) axis with per-channel gain:
//   y[c, p] = x[c, p] / sqrt(mean_c x[c, p]^2 + eps) * gain[c]
template <typename T>
Tensor<T> rms_norm(const Tensor<T>& x, const Tensor<T>& gain, T eps = T(1e-8)) {
  check_shape(gain.rank() == 1 && gain.dim(0) == x.dim(0),
              "rms_norm: gain must be [C] matching leading axis");
  const size_t C = x.dim(0);
  const size_t P = x.numel() / C;
  std::vector<T> out(x.numel());
  std::vector<T> inv_rms(P);
  const auto xv = x.data(), gv = gain.data();
  for (size_t p = 0; p < P; ++p) {
    T ss = T(0);
    for (size_t c = 0; c < C; ++c) {
      const T v = xv[c * P + p];
      ss += v * v;
    }
    inv_rms[p] = T(1) / std::sqrt(ss / static_cast<T>(C) + eps);
  }
  for (size_t c = 0; c < C; ++c)
    for (size_t p = 0; p < P; ++p) out[c * P + p] = xv[c * P + p] * inv_rms[p] * gv[c];
  return detail::make_op<T>(
      "rms_norm", x.shape(), std::move(out), {x, gain},
      [C, P, inv_rms](detail::Node<T>& self, const std::vector<T>& up, detail::GradTable<T>& gtab) {
        auto& px = self.parents[0];
        auto& pg = self.parents[1];
        const auto& xv = px->value;
        const auto& gv = pg->value;
        if (px->requires_grad) {
          // y_c = x_c * r * g_c with r = (mean x^2 + eps)^{-1/2}:
          // dL/dx_c = r * (g_c * u_c - x_c * r^2 / C * sum_k u_k g_k x_k)
          std::vector<T> g(px->numel());
          for (size_t p = 0; p < P; ++p) {
            T dot = T(0);
            for (size_t c = 0; c < C; ++c) dot += up[c * P + p] * gv[c] * xv[c * P + p];
            const T r = inv_rms[p];
            const T corr = dot * r * r / static_cast<T>(C);
            for (size_t c = 0; c < C; ++c)
              g[c * P + p] = r * (gv[c] * up[c * P + p] - xv[c * P + p] * corr);
          }
          detail::accum(gtab, px, std::move(g));
        }
        if (pg->requires_grad) {
          std::vector<T> g(C, T(0));
          for (size_t c = 0; c < C; ++c)
            for (size_t p = 0; p < P; ++p) g[c] += up[c * P + p] * xv[c * P + p] * inv_rms[p];
          detail::accum(gtab, pg, std::move(g));
        }
      });
}

}  // namespace dcfnet

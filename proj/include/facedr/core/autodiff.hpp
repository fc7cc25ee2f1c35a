#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <unordered_map>
#include <vector>

#include "facedr/core/errors.hpp"
#include "facedr/core/kernels.hpp"
#include "facedr/core/tensor.hpp"

// Eager reverse-mode autodiff. Ops compute values immediately through the
// kernels layer and, while recording is enabled, register a backward closure
// that expresses parent gradients *in terms of other ops*. Because backward
// emits graph nodes, calling grad() with create_graph=true yields gradients
// that are themselves differentiable — which the Wasserstein gradient
// penalty needs for its second-order term.
//
// Known limitation: warp_bilinear's backward produces constant gradients
// (exact first order, no higher-order graph); nothing in the training
// objective differentiates twice through the warp.

namespace facedr::ad {

inline thread_local bool g_recording = true;

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(g_recording) { g_recording = false; }
  ~NoGradGuard() { g_recording = prev; }
};

struct GradModeGuard {
  bool prev;
  explicit GradModeGuard(bool enable) : prev(g_recording) { g_recording = enable; }
  ~GradModeGuard() { g_recording = prev; }
};

inline uint64_t next_node_id() {
  static std::atomic<uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

template <typename T>
class Var;

template <typename T>
struct Node {
  TensorT<T> value;
  TensorT<T> grad_acc;  // accumulated raw gradient, for parameter leaves
  bool requires_grad = false;
  uint64_t id = 0;
  std::vector<std::shared_ptr<Node<T>>> parents;
  // Maps the upstream gradient to one gradient per parent (same order).
  std::function<std::vector<Var<T>>(const Var<T>&)> backward;
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> n) : n_(std::move(n)) {}

  static Var constant(TensorT<T> value) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->id = next_node_id();
    return Var(n);
  }

  static Var leaf(TensorT<T> value) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->requires_grad = true;
    n->id = next_node_id();
    return Var(n);
  }

  bool defined() const { return n_ != nullptr; }
  const TensorT<T>& value() const { return n_->value; }
  TensorT<T>& mutable_value() { return n_->value; }
  const std::vector<int64_t>& shape() const { return n_->value.shape(); }
  int64_t numel() const { return n_->value.numel(); }
  bool requires_grad() const { return n_ && n_->requires_grad; }

  TensorT<T>& grad_acc() {
    if (!n_->grad_acc.defined()) n_->grad_acc = TensorT<T>::zeros(n_->value.shape());
    return n_->grad_acc;
  }
  void zero_grad() {
    if (n_->grad_acc.defined()) kern::fill(n_->grad_acc.data(), n_->grad_acc.numel(), T(0));
  }

  Var detach() const { return constant(n_->value); }

  std::shared_ptr<Node<T>> node() const { return n_; }

 private:
  std::shared_ptr<Node<T>> n_;
};

// ---------------------------------------------------------------------------
// node construction helper
// ---------------------------------------------------------------------------

template <typename T>
Var<T> make_op(TensorT<T> value, std::vector<Var<T>> parents,
               std::function<std::vector<Var<T>>(const Var<T>&)> backward) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->id = next_node_id();
  bool any = false;
  for (const auto& p : parents) any = any || (p.defined() && p.requires_grad());
  if (g_recording && any) {
    n->requires_grad = true;
    n->parents.reserve(parents.size());
    for (auto& p : parents) n->parents.push_back(p.node());
    n->backward = std::move(backward);
  }
  return Var<T>(n);
}

// ---------------------------------------------------------------------------
// elementwise ops
// ---------------------------------------------------------------------------

template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> div(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> neg(const Var<T>& a);
template <typename T> Var<T> mul_scalar(const Var<T>& a, T c);
template <typename T> Var<T> add_scalar(const Var<T>& a, T c);

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  check_same_shape(a.value(), b.value(), "add");
  TensorT<T> y(a.shape());
  kern::add(a.value().data(), b.value().data(), y.data(), y.numel());
  return make_op<T>(std::move(y), {a, b},
                    [](const Var<T>& g) { return std::vector<Var<T>>{g, g}; });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  check_same_shape(a.value(), b.value(), "sub");
  TensorT<T> y(a.shape());
  kern::sub(a.value().data(), b.value().data(), y.data(), y.numel());
  return make_op<T>(std::move(y), {a, b},
                    [](const Var<T>& g) { return std::vector<Var<T>>{g, neg(g)}; });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  check_same_shape(a.value(), b.value(), "mul");
  TensorT<T> y(a.shape());
  kern::mul(a.value().data(), b.value().data(), y.data(), y.numel());
  return make_op<T>(std::move(y), {a, b}, [a, b](const Var<T>& g) {
    return std::vector<Var<T>>{mul(g, b), mul(g, a)};
  });
}

template <typename T>
Var<T> div(const Var<T>& a, const Var<T>& b) {
  check_same_shape(a.value(), b.value(), "div");
  TensorT<T> y(a.shape());
  kern::div(a.value().data(), b.value().data(), y.data(), y.numel());
  return make_op<T>(std::move(y), {a, b}, [a, b](const Var<T>& g) {
    Var<T> da = div(g, b);
    Var<T> db = neg(mul(da, div(a, b)));  // -g*a/b^2
    return std::vector<Var<T>>{da, db};
  });
}

template <typename T>
Var<T> neg(const Var<T>& a) {
  TensorT<T> y(a.shape());
  kern::neg(a.value().data(), y.data(), y.numel());
  return make_op<T>(std::move(y), {a},
                    [](const Var<T>& g) { return std::vector<Var<T>>{neg(g)}; });
}

template <typename T>
Var<T> mul_scalar(const Var<T>& a, T c) {
  TensorT<T> y(a.shape());
  kern::scale(a.value().data(), c, y.data(), y.numel());
  return make_op<T>(std::move(y), {a},
                    [c](const Var<T>& g) { return std::vector<Var<T>>{mul_scalar(g, c)}; });
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, T c) {
  TensorT<T> y(a.shape());
  kern::add_scalar(a.value().data(), c, y.data(), y.numel());
  return make_op<T>(std::move(y), {a},
                    [](const Var<T>& g) { return std::vector<Var<T>>{g}; });
}

template <typename T>
Var<T> abs_(const Var<T>& a) {
  TensorT<T> y(a.shape());
  kern::abs_(a.value().data(), y.data(), y.numel());
  return make_op<T>(std::move(y), {a}, [a](const Var<T>& g) {
    TensorT<T> s(a.shape());
    kern::sign(a.value().data(), s.data(), s.numel());
    return std::vector<Var<T>>{mul(g, Var<T>::constant(std::move(s)))};
  });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
  TensorT<T> y(a.shape());
  kern::relu(a.value().data(), y.data(), y.numel());
  return make_op<T>(std::move(y), {a}, [a](const Var<T>& g) {
    TensorT<T> m(a.shape());
    kern::lrelu_mask(a.value().data(), T(0), m.data(), m.numel());
    return std::vector<Var<T>>{mul(g, Var<T>::constant(std::move(m)))};
  });
}

template <typename T>
Var<T> leaky_relu(const Var<T>& a, T slope) {
  TensorT<T> y(a.shape());
  kern::lrelu(a.value().data(), slope, y.data(), y.numel());
  return make_op<T>(std::move(y), {a}, [a, slope](const Var<T>& g) {
    TensorT<T> m(a.shape());
    kern::lrelu_mask(a.value().data(), slope, m.data(), m.numel());
    return std::vector<Var<T>>{mul(g, Var<T>::constant(std::move(m)))};
  });
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
  TensorT<T> y(a.shape());
  kern::sigmoid(a.value().data(), y.data(), y.numel());
  return make_op<T>(std::move(y), {a}, [a](const Var<T>& g) {
    // recompute sigma(a) as an op so the derivative stays differentiable
    Var<T> s = sigmoid(a);
    Var<T> ds = mul(s, add_scalar(neg(s), T(1)));
    return std::vector<Var<T>>{mul(g, ds)};
  });
}

template <typename T>
Var<T> tanh_(const Var<T>& a) {
  TensorT<T> y(a.shape());
  kern::tanh_(a.value().data(), y.data(), y.numel());
  return make_op<T>(std::move(y), {a}, [a](const Var<T>& g) {
    Var<T> t = tanh_(a);
    return std::vector<Var<T>>{mul(g, add_scalar(neg(mul(t, t)), T(1)))};
  });
}

template <typename T>
Var<T> exp_(const Var<T>& a) {
  TensorT<T> y(a.shape());
  kern::exp_(a.value().data(), y.data(), y.numel());
  return make_op<T>(std::move(y), {a}, [a](const Var<T>& g) {
    return std::vector<Var<T>>{mul(g, exp_(a))};
  });
}

template <typename T>
Var<T> log_(const Var<T>& a) {
  TensorT<T> y(a.shape());
  kern::log_(a.value().data(), y.data(), y.numel());
  return make_op<T>(std::move(y), {a},
                    [a](const Var<T>& g) { return std::vector<Var<T>>{div(g, a)}; });
}

template <typename T>
Var<T> sqrt_(const Var<T>& a) {
  TensorT<T> y(a.shape());
  kern::sqrt_(a.value().data(), y.data(), y.numel());
  return make_op<T>(std::move(y), {a}, [a](const Var<T>& g) {
    return std::vector<Var<T>>{div(mul_scalar(g, T(0.5)), sqrt_(a))};
  });
}

template <typename T>
Var<T> square(const Var<T>& a) {
  TensorT<T> y(a.shape());
  kern::square(a.value().data(), y.data(), y.numel());
  return make_op<T>(std::move(y), {a}, [a](const Var<T>& g) {
    return std::vector<Var<T>>{mul(g, mul_scalar(a, T(2)))};
  });
}

// ---------------------------------------------------------------------------
// reductions and broadcasts
// ---------------------------------------------------------------------------

template <typename T> Var<T> broadcast_scalar(const Var<T>& a, std::vector<int64_t> shape);

template <typename T>
Var<T> sum_all(const Var<T>& a) {
  TensorT<T> y({1});
  y[0] = kern::reduce_sum(a.value().data(), a.numel());
  auto shape = a.shape();
  return make_op<T>(std::move(y), {a}, [shape](const Var<T>& g) {
    return std::vector<Var<T>>{broadcast_scalar(g, shape)};
  });
}

template <typename T>
Var<T> broadcast_scalar(const Var<T>& a, std::vector<int64_t> shape) {
  if (a.numel() != 1) throw BadShape("broadcast_scalar expects a scalar");
  TensorT<T> y(shape, a.value()[0]);
  return make_op<T>(std::move(y), {a},
                    [](const Var<T>& g) { return std::vector<Var<T>>{sum_all(g)}; });
}

template <typename T>
Var<T> mean_all(const Var<T>& a) {
  return mul_scalar(sum_all(a), T(1) / static_cast<T>(a.numel()));
}

template <typename T> Var<T> broadcast_rows(const Var<T>& a, std::vector<int64_t> shape);

// collapse all trailing dims: [N, ...] -> [N]
template <typename T>
Var<T> sum_rows(const Var<T>& a) {
  const int64_t n = a.shape()[0];
  const int64_t len = a.numel() / n;
  TensorT<T> y({n});
  kern::sum_rows(a.value().data(), n, len, y.data());
  auto shape = a.shape();
  return make_op<T>(std::move(y), {a}, [shape](const Var<T>& g) {
    return std::vector<Var<T>>{broadcast_rows(g, shape)};
  });
}

template <typename T>
Var<T> broadcast_rows(const Var<T>& a, std::vector<int64_t> shape) {
  const int64_t n = shape[0];
  if (a.numel() != n) throw BadShape("broadcast_rows: row count mismatch");
  TensorT<T> y(shape);
  kern::broadcast_rows(a.value().data(), n, y.numel() / n, y.data());
  return make_op<T>(std::move(y), {a},
                    [](const Var<T>& g) { return std::vector<Var<T>>{sum_rows(g)}; });
}

template <typename T> Var<T> broadcast_channels(const Var<T>& a, int64_t C);

template <typename T>
Var<T> sum_channels(const Var<T>& a) {
  const auto& s = a.shape();
  TensorT<T> y({s[0], 1, s[2], s[3]});
  kern::sum_channels(a.value().data(), s[0], s[1], s[2] * s[3], y.data());
  const int64_t C = s[1];
  return make_op<T>(std::move(y), {a}, [C](const Var<T>& g) {
    return std::vector<Var<T>>{broadcast_channels(g, C)};
  });
}

template <typename T>
Var<T> broadcast_channels(const Var<T>& a, int64_t C) {
  const auto& s = a.shape();
  if (s[1] != 1) throw BadShape("broadcast_channels expects singleton channel dim");
  TensorT<T> y({s[0], C, s[2], s[3]});
  kern::broadcast_channels(a.value().data(), s[0], C, s[2] * s[3], y.data());
  return make_op<T>(std::move(y), {a},
                    [](const Var<T>& g) { return std::vector<Var<T>>{sum_channels(g)}; });
}

template <typename T> Var<T> broadcast_hw(const Var<T>& a, int64_t H, int64_t W);

// [N,C,H,W] -> [N,C]
template <typename T>
Var<T> sum_hw(const Var<T>& a) {
  const auto& s = a.shape();
  TensorT<T> y({s[0], s[1]});
  kern::sum_hw(a.value().data(), s[0] * s[1], s[2] * s[3], y.data());
  const int64_t H = s[2], W = s[3];
  return make_op<T>(std::move(y), {a}, [H, W](const Var<T>& g) {
    return std::vector<Var<T>>{broadcast_hw(g, H, W)};
  });
}

template <typename T>
Var<T> broadcast_hw(const Var<T>& a, int64_t H, int64_t W) {
  const auto& s = a.shape();
  TensorT<T> y({s[0], s[1], H, W});
  kern::broadcast_hw(a.value().data(), s[0] * s[1], H * W, y.data());
  return make_op<T>(std::move(y), {a},
                    [](const Var<T>& g) { return std::vector<Var<T>>{sum_hw(g)}; });
}

template <typename T> Var<T> bias_broadcast(const Var<T>& b, int64_t N, int64_t H, int64_t W);

// [N,C,H,W] -> [C]
template <typename T>
Var<T> sum_nhw(const Var<T>& a) {
  const auto& s = a.shape();
  TensorT<T> y({s[1]});
  kern::sum_nhw(a.value().data(), s[0], s[1], s[2] * s[3], y.data());
  const int64_t N = s[0], H = s[2], W = s[3];
  return make_op<T>(std::move(y), {a}, [N, H, W](const Var<T>& g) {
    return std::vector<Var<T>>{bias_broadcast(g, N, H, W)};
  });
}

template <typename T>
Var<T> bias_broadcast(const Var<T>& b, int64_t N, int64_t H, int64_t W) {
  const int64_t C = b.numel();
  TensorT<T> y({N, C, H, W});
  kern::bias_broadcast(b.value().data(), N, C, H * W, y.data());
  return make_op<T>(std::move(y), {b},
                    [](const Var<T>& g) { return std::vector<Var<T>>{sum_nhw(g)}; });
}

// ---------------------------------------------------------------------------
// structural ops
// ---------------------------------------------------------------------------

template <typename T> Var<T> slice_ch(const Var<T>& a, int64_t c0, int64_t len);
template <typename T> Var<T> pad_ch(const Var<T>& a, int64_t c0, int64_t C_total);

template <typename T>
Var<T> concat_ch(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw BadShape("concat_ch: empty");
  const auto& s0 = parts[0].shape();
  int64_t C = 0;
  for (const auto& p : parts) {
    const auto& s = p.shape();
    if (s.size() != 4 || s[0] != s0[0] || s[2] != s0[2] || s[3] != s0[3])
      throw ShapeMismatch("concat_ch: incompatible shapes");
    C += s[1];
  }
  TensorT<T> y({s0[0], C, s0[2], s0[3]});
  const int64_t HW = s0[2] * s0[3], N = s0[0];
  int64_t off = 0;
  std::vector<int64_t> offsets, lens;
  for (const auto& p : parts) {
    const int64_t pc = p.shape()[1];
    for (int64_t n = 0; n < N; ++n)
      kern::copy(p.value().data() + n * pc * HW, y.data() + (n * C + off) * HW, pc * HW);
    offsets.push_back(off);
    lens.push_back(pc);
    off += pc;
  }
  return make_op<T>(std::move(y), parts, [offsets, lens](const Var<T>& g) {
    std::vector<Var<T>> out;
    for (size_t i = 0; i < offsets.size(); ++i) out.push_back(slice_ch(g, offsets[i], lens[i]));
    return out;
  });
}

template <typename T>
Var<T> slice_ch(const Var<T>& a, int64_t c0, int64_t len) {
  const auto& s = a.shape();
  if (c0 < 0 || c0 + len > s[1]) throw BadShape("slice_ch: range out of bounds");
  TensorT<T> y({s[0], len, s[2], s[3]});
  const int64_t HW = s[2] * s[3];
  for (int64_t n = 0; n < s[0]; ++n)
    kern::copy(a.value().data() + (n * s[1] + c0) * HW, y.data() + n * len * HW, len * HW);
  const int64_t C_total = s[1];
  return make_op<T>(std::move(y), {a}, [c0, C_total](const Var<T>& g) {
    return std::vector<Var<T>>{pad_ch(g, c0, C_total)};
  });
}

template <typename T>
Var<T> pad_ch(const Var<T>& a, int64_t c0, int64_t C_total) {
  const auto& s = a.shape();
  TensorT<T> y({s[0], C_total, s[2], s[3]});
  const int64_t HW = s[2] * s[3];
  for (int64_t n = 0; n < s[0]; ++n)
    kern::copy(a.value().data() + n * s[1] * HW, y.data() + (n * C_total + c0) * HW, s[1] * HW);
  const int64_t len = s[1];
  return make_op<T>(std::move(y), {a}, [c0, len](const Var<T>& g) {
    return std::vector<Var<T>>{slice_ch(g, c0, len)};
  });
}

template <typename T> Var<T> downsum2(const Var<T>& a);

template <typename T>
Var<T> upsample2(const Var<T>& a) {
  const auto& s = a.shape();
  TensorT<T> y({s[0], s[1], s[2] * 2, s[3] * 2});
  kern::upsample2(a.value().data(), s[0] * s[1], s[2], s[3], y.data());
  return make_op<T>(std::move(y), {a},
                    [](const Var<T>& g) { return std::vector<Var<T>>{downsum2(g)}; });
}

template <typename T>
Var<T> downsum2(const Var<T>& a) {
  const auto& s = a.shape();
  TensorT<T> y({s[0], s[1], s[2] / 2, s[3] / 2});
  kern::downsum2(a.value().data(), s[0] * s[1], s[2], s[3], y.data());
  return make_op<T>(std::move(y), {a},
                    [](const Var<T>& g) { return std::vector<Var<T>>{upsample2(g)}; });
}

// ---------------------------------------------------------------------------
// matmul family
// ---------------------------------------------------------------------------

template <typename T> Var<T> matmul_nt(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> matmul_tn(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> matmul_nn(const Var<T>& a, const Var<T>& b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0]) throw ShapeMismatch("matmul_nn");
  TensorT<T> y({sa[0], sb[1]});
  kern::gemm_nn(sa[0], sb[1], sa[1], a.value().data(), b.value().data(), y.data(), false);
  return make_op<T>(std::move(y), {a, b}, [a, b](const Var<T>& g) {
    return std::vector<Var<T>>{matmul_nt(g, b), matmul_tn(a, g)};
  });
}

template <typename T>
Var<T> matmul_nt(const Var<T>& a, const Var<T>& b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[1]) throw ShapeMismatch("matmul_nt");
  TensorT<T> y({sa[0], sb[0]});
  kern::gemm_nt(sa[0], sb[0], sa[1], a.value().data(), b.value().data(), y.data(), false);
  return make_op<T>(std::move(y), {a, b}, [a, b](const Var<T>& g) {
    return std::vector<Var<T>>{matmul_nn(g, b), matmul_tn(g, a)};
  });
}

template <typename T>
Var<T> matmul_tn(const Var<T>& a, const Var<T>& b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sa.size() != 2 || sb.size() != 2 || sa[0] != sb[0]) throw ShapeMismatch("matmul_tn");
  TensorT<T> y({sa[1], sb[1]});
  kern::gemm_tn(sa[1], sb[1], sa[0], a.value().data(), b.value().data(), y.data(), false);
  return make_op<T>(std::move(y), {a, b}, [a, b](const Var<T>& g) {
    return std::vector<Var<T>>{matmul_nt(b, g), matmul_nn(a, g)};
  });
}

// ---------------------------------------------------------------------------
// convolution family (closed under differentiation)
// ---------------------------------------------------------------------------

template <typename T>
Var<T> conv2d_input_grad_op(const Var<T>& gy, const Var<T>& w, int64_t stride, int64_t pad,
                            int64_t H, int64_t W);
template <typename T>
Var<T> conv2d_weight_grad_op(const Var<T>& x, const Var<T>& gy, int64_t stride, int64_t pad,
                             int64_t k);

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, int64_t stride, int64_t pad) {
  const auto& sx = x.shape();
  const auto& sw = w.shape();
  if (sx.size() != 4 || sw.size() != 4 || sx[1] != sw[1]) throw ShapeMismatch("conv2d");
  const int64_t Ho = kern::conv_out_dim(sx[2], sw[2], stride, pad);
  const int64_t Wo = kern::conv_out_dim(sx[3], sw[3], stride, pad);
  TensorT<T> y({sx[0], sw[0], Ho, Wo});
  kern::conv2d_forward(x.value(), w.value(), stride, pad, y);
  const int64_t H = sx[2], W = sx[3], k = sw[2];
  return make_op<T>(std::move(y), {x, w}, [x, w, stride, pad, H, W, k](const Var<T>& g) {
    return std::vector<Var<T>>{conv2d_input_grad_op(g, w, stride, pad, H, W),
                               conv2d_weight_grad_op(x, g, stride, pad, k)};
  });
}

template <typename T>
Var<T> conv2d_input_grad_op(const Var<T>& gy, const Var<T>& w, int64_t stride, int64_t pad,
                            int64_t H, int64_t W) {
  const auto& sg = gy.shape();
  const auto& sw = w.shape();
  TensorT<T> y({sg[0], sw[1], H, W});
  kern::conv2d_input_grad(gy.value(), w.value(), stride, pad, H, W, y);
  const int64_t k = sw[2];
  return make_op<T>(std::move(y), {gy, w}, [gy, w, stride, pad, k](const Var<T>& u) {
    return std::vector<Var<T>>{conv2d(u, w, stride, pad),
                               conv2d_weight_grad_op(u, gy, stride, pad, k)};
  });
}

template <typename T>
Var<T> conv2d_weight_grad_op(const Var<T>& x, const Var<T>& gy, int64_t stride, int64_t pad,
                             int64_t k) {
  const auto& sx = x.shape();
  const auto& sg = gy.shape();
  TensorT<T> y({sg[1], sx[1], k, k});
  kern::conv2d_weight_grad(x.value(), gy.value(), stride, pad, k, y);
  const int64_t H = sx[2], W = sx[3];
  return make_op<T>(std::move(y), {x, gy}, [x, gy, stride, pad, H, W](const Var<T>& u) {
    return std::vector<Var<T>>{conv2d_input_grad_op(gy, u, stride, pad, H, W),
                               conv2d(x, u, stride, pad)};
  });
}

template <typename T>
Var<T> bias_add(const Var<T>& x, const Var<T>& b) {
  const auto& s = x.shape();
  if (b.numel() != s[1]) throw ShapeMismatch("bias_add");
  Var<T> bb = bias_broadcast(b, s[0], s[2], s[3]);
  return add(x, bb);
}

// ---------------------------------------------------------------------------
// softmax over channels
// ---------------------------------------------------------------------------

template <typename T>
Var<T> softmax_ch(const Var<T>& a) {
  const auto& s = a.shape();
  TensorT<T> y(s);
  kern::softmax_channels(a.value().data(), s[0], s[1], s[2] * s[3], y.data());
  return make_op<T>(std::move(y), {a}, [a](const Var<T>& g) {
    Var<T> y2 = softmax_ch(a);
    Var<T> gy = mul(g, y2);
    Var<T> dot = sum_channels(gy);
    Var<T> dx = mul(y2, sub(g, broadcast_channels(dot, a.shape()[1])));
    return std::vector<Var<T>>{dx};
  });
}

// ---------------------------------------------------------------------------
// bilinear warp (exact first-order gradients; not twice-differentiable)
// ---------------------------------------------------------------------------

template <typename T>
Var<T> warp_bilinear_op(const Var<T>& src, const Var<T>& coords) {
  const auto& ss = src.shape();
  const auto& sc = coords.shape();
  if (ss.size() != 4 || sc.size() != 4 || sc[1] != 2 || ss[0] != sc[0] || ss[2] != sc[2] ||
      ss[3] != sc[3])
    throw ShapeMismatch("warp_bilinear: src " + src.value().shape_str() + " coords " +
                        coords.value().shape_str());
  TensorT<T> y(ss);
  kern::warp_forward(src.value(), coords.value(), y);
  return make_op<T>(std::move(y), {src, coords}, [src, coords](const Var<T>& g) {
    TensorT<T> dsrc(src.shape());
    TensorT<T> dcoords(coords.shape());
    kern::warp_backward(src.value(), coords.value(), g.value(), dsrc, dcoords);
    return std::vector<Var<T>>{Var<T>::constant(std::move(dsrc)),
                               Var<T>::constant(std::move(dcoords))};
  });
}

// ---------------------------------------------------------------------------
// backward engine
// ---------------------------------------------------------------------------

template <typename T>
std::unordered_map<Node<T>*, Var<T>> run_backward(const Var<T>& root, bool create_graph) {
  std::unordered_map<Node<T>*, Var<T>> gradmap;
  if (!root.requires_grad()) return gradmap;

  // collect the reachable differentiable subgraph
  std::vector<std::shared_ptr<Node<T>>> order;
  std::unordered_map<Node<T>*, bool> seen;
  std::vector<std::shared_ptr<Node<T>>> stack{root.node()};
  while (!stack.empty()) {
    auto n = stack.back();
    stack.pop_back();
    if (seen[n.get()]) continue;
    seen[n.get()] = true;
    order.push_back(n);
    for (auto& p : n->parents)
      if (p->requires_grad && !seen[p.get()]) stack.push_back(p);
  }
  // creation ids give a valid topological order
  std::sort(order.begin(), order.end(),
            [](const auto& a, const auto& b) { return a->id > b->id; });

  gradmap[root.node().get()] = Var<T>::constant(TensorT<T>(root.shape(), T(1)));

  GradModeGuard guard(create_graph);
  for (auto& n : order) {
    if (!n->backward) continue;
    auto it = gradmap.find(n.get());
    if (it == gradmap.end()) continue;
    std::vector<Var<T>> pgrads = n->backward(it->second);
    if (pgrads.size() != n->parents.size()) throw std::logic_error("backward arity mismatch");
    for (size_t i = 0; i < pgrads.size(); ++i) {
      auto& parent = n->parents[i];
      if (!parent->requires_grad || !pgrads[i].defined()) continue;
      auto pit = gradmap.find(parent.get());
      if (pit == gradmap.end())
        gradmap[parent.get()] = pgrads[i];
      else
        pit->second = add(pit->second, pgrads[i]);
    }
  }
  return gradmap;
}

/// Accumulate raw gradients of `loss` into every reachable leaf's grad_acc.
template <typename T>
void backward(const Var<T>& loss) {
  auto gradmap = run_backward(loss, /*create_graph=*/false);
  for (auto& [node, g] : gradmap) {
    if (node->requires_grad && !node->backward) {
      if (!node->grad_acc.defined()) node->grad_acc = TensorT<T>::zeros(node->value.shape());
      kern::axpy(T(1), g.value().data(), node->grad_acc.data(), node->grad_acc.numel());
    }
  }
}

/// Differentiable gradients of `output` w.r.t. `inputs` (for the gradient
/// penalty). Missing entries come back as zeros.
template <typename T>
std::vector<Var<T>> grad(const Var<T>& output, const std::vector<Var<T>>& inputs,
                         bool create_graph) {
  auto gradmap = run_backward(output, create_graph);
  std::vector<Var<T>> out;
  out.reserve(inputs.size());
  for (const auto& in : inputs) {
    auto it = gradmap.find(in.node().get());
    if (it == gradmap.end())
      out.push_back(Var<T>::constant(TensorT<T>::zeros(in.shape())));
    else
      out.push_back(it->second);
  }
  return out;
}

template <typename T>
bool all_finite(const TensorT<T>& t) {
  for (int64_t i = 0; i < t.numel(); ++i)
    if (!std::isfinite(t[i])) return false;
  return true;
}

}  // namespace facedr::ad

#pragma once

// Dense tensor with reverse-mode automatic differentiation. The graph is
// built implicitly as ops run (define-by-run): each result node records its
// parents and a backprop closure; backward() replays the closures in reverse
// topological order exactly once. Compute type is a template parameter:
// float is the production type, double exists for finite-difference checks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "sliceterp/common.hpp"
#include "sliceterp/gemm.hpp"
#include "sliceterp/rng.hpp"

namespace sliceterp {

template <typename T>
struct TensorNode {
    std::vector<int> shape;
    std::vector<T> values;
    std::vector<T> grad;  // allocated during backward; empty = absent
    bool requires_grad = false;
    bool is_leaf = true;
    const char* op = "leaf";
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backprop;
    bool backward_done = false;
};

namespace detail {
inline thread_local int no_grad_depth = 0;
}

// Disables graph construction in scope (evaluation loops).
struct NoGradGuard {
    NoGradGuard() { ++detail::no_grad_depth; }
    ~NoGradGuard() { --detail::no_grad_depth; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

inline bool grad_enabled() { return detail::no_grad_depth == 0; }

template <typename T>
class TensorT {
public:
    TensorT() = default;
    explicit TensorT(std::shared_ptr<TensorNode<T>> node) : node_(std::move(node)) {}

    static TensorT zeros(std::vector<int> shape, bool requires_grad = false) {
        return filled(std::move(shape), T(0), requires_grad);
    }

    static TensorT filled(std::vector<int> shape, T value, bool requires_grad = false) {
        auto node = std::make_shared<TensorNode<T>>();
        node->values.assign(check_numel(shape), value);
        node->shape = std::move(shape);
        node->requires_grad = requires_grad;
        return TensorT(node);
    }

    static TensorT from_values(std::vector<int> shape, std::vector<T> values,
                               bool requires_grad = false) {
        if (static_cast<size_t>(check_numel(shape)) != values.size())
            throw ShapeError("value count " + std::to_string(values.size()) +
                             " does not match shape " + shape_str(shape));
        auto node = std::make_shared<TensorNode<T>>();
        node->shape = std::move(shape);
        node->values = std::move(values);
        node->requires_grad = requires_grad;
        return TensorT(node);
    }

    static TensorT scalar(T value, bool requires_grad = false) {
        return from_values({1}, {value}, requires_grad);
    }

    // Uniform init in +-sqrt(1/fan_in); the standard trainable-parameter ctor.
    static TensorT param_uniform(std::vector<int> shape, int fan_in, Rng& rng) {
        double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
        auto t = zeros(std::move(shape), true);
        for (auto& v : t.values_mut()) v = static_cast<T>(rng.uniform(-bound, bound));
        return t;
    }

    static TensorT randn(std::vector<int> shape, Rng& rng, bool requires_grad = false) {
        auto t = zeros(std::move(shape), requires_grad);
        for (auto& v : t.values_mut()) v = static_cast<T>(rng.gaussian());
        return t;
    }

    bool defined() const { return node_ != nullptr; }
    const std::vector<int>& shape() const { return node_->shape; }
    int dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
    int ndim() const { return static_cast<int>(node_->shape.size()); }
    int64_t numel() const { return static_cast<int64_t>(node_->values.size()); }
    const std::vector<T>& values() const { return node_->values; }
    std::vector<T>& values_mut() { return node_->values; }
    bool requires_grad() const { return node_->requires_grad; }
    bool has_grad() const { return !node_->grad.empty(); }
    const std::vector<T>& grad() const {
        if (node_->grad.empty())
            throw std::invalid_argument("gradient not populated; run backward() first");
        return node_->grad;
    }
    void zero_grad() { node_->grad.clear(); }
    T item() const {
        if (numel() != 1)
            throw std::invalid_argument("item() requires a scalar tensor, got shape " +
                                        shape_str(node_->shape));
        return node_->values[0];
    }

    TensorT detach() const {
        auto node = std::make_shared<TensorNode<T>>();
        node->shape = node_->shape;
        node->values = node_->values;
        return TensorT(node);
    }

    std::shared_ptr<TensorNode<T>> node() const { return node_; }

private:
    static int64_t check_numel(const std::vector<int>& shape) {
        int64_t n = 1;
        for (int e : shape) {
            if (e <= 0) throw ShapeError("non-positive extent in shape " + shape_str(shape));
            n *= e;
        }
        return n;
    }

    std::shared_ptr<TensorNode<T>> node_;
};

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;

template <typename T>
std::vector<T>& ensure_grad(TensorNode<T>& node) {
    if (node.grad.empty()) node.grad.assign(node.values.size(), T(0));
    return node.grad;
}

// Wires a freshly computed result into the graph. Parents and the closure
// are only retained when some input needs gradients and grad mode is on.
template <typename T>
TensorT<T> make_op(const char* name, std::initializer_list<TensorT<T>> inputs,
                   std::vector<int> shape, std::vector<T> values,
                   std::function<void(TensorNode<T>&)> backprop) {
    auto node = std::make_shared<TensorNode<T>>();
    node->shape = std::move(shape);
    node->values = std::move(values);
    node->is_leaf = false;
    node->op = name;
    bool rg = false;
    for (const auto& in : inputs) rg = rg || in.requires_grad();
    if (rg && grad_enabled()) {
        node->requires_grad = true;
        for (const auto& in : inputs) node->parents.push_back(in.node());
        node->backprop = std::move(backprop);
    }
    return TensorT<T>(node);
}

template <typename T>
void check_same_shape(const TensorT<T>& a, const TensorT<T>& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
}

// ---------------------------------------------------------------------------
// Elementwise ops

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
    check_same_shape(a, b, "add");
    std::vector<T> out(a.values().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
    return make_op<T>("add", {a, b}, a.shape(), std::move(out), [](TensorNode<T>& self) {
        for (int p = 0; p < 2; ++p) {
            auto& parent = *self.parents[static_cast<size_t>(p)];
            if (!parent.requires_grad) continue;
            auto& g = ensure_grad(parent);
            for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
    });
}

template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
    check_same_shape(a, b, "sub");
    std::vector<T> out(a.values().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
    return make_op<T>("sub", {a, b}, a.shape(), std::move(out), [](TensorNode<T>& self) {
        if (self.parents[0]->requires_grad) {
            auto& g = ensure_grad(*self.parents[0]);
            for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (self.parents[1]->requires_grad) {
            auto& g = ensure_grad(*self.parents[1]);
            for (size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
        }
    });
}

template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
    check_same_shape(a, b, "mul");
    std::vector<T> out(a.values().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
    return make_op<T>("mul", {a, b}, a.shape(), std::move(out), [](TensorNode<T>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad) {
            auto& g = ensure_grad(pa);
            for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.values[i];
        }
        if (pb.requires_grad) {
            auto& g = ensure_grad(pb);
            for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.values[i];
        }
    });
}

template <typename T>
TensorT<T> mul_scalar(const TensorT<T>& x, double c) {
    std::vector<T> out(x.values().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(x.values()[i] * c);
    return make_op<T>("mul_scalar", {x}, x.shape(), std::move(out), [c](TensorNode<T>& self) {
        auto& g = ensure_grad(*self.parents[0]);
        for (size_t i = 0; i < g.size(); ++i) g[i] += static_cast<T>(self.grad[i] * c);
    });
}

// y = gamma * x with a one-element gate tensor (attention residual gate).
template <typename T>
TensorT<T> scale_gate(const TensorT<T>& x, const TensorT<T>& gamma) {
    if (gamma.numel() != 1) throw ShapeError("scale_gate: gate must be a scalar tensor");
    T gv = gamma.values()[0];
    std::vector<T> out(x.values().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = gv * x.values()[i];
    return make_op<T>("scale_gate", {x, gamma}, x.shape(), std::move(out),
                      [](TensorNode<T>& self) {
                          auto& px = *self.parents[0];
                          auto& pg = *self.parents[1];
                          T gv = pg.values[0];
                          if (px.requires_grad) {
                              auto& g = ensure_grad(px);
                              for (size_t i = 0; i < g.size(); ++i) g[i] += gv * self.grad[i];
                          }
                          if (pg.requires_grad) {
                              auto& g = ensure_grad(pg);
                              T acc = T(0);
                              for (size_t i = 0; i < self.grad.size(); ++i)
                                  acc += self.grad[i] * px.values[i];
                              g[0] += acc;
                          }
                      });
}

template <typename T>
TensorT<T> relu(const TensorT<T>& x) {
    std::vector<T> out(x.values().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = x.values()[i] > T(0) ? x.values()[i] : T(0);
    return make_op<T>("relu", {x}, x.shape(), std::move(out), [](TensorNode<T>& self) {
        auto& p = *self.parents[0];
        auto& g = ensure_grad(p);
        for (size_t i = 0; i < g.size(); ++i)
            if (p.values[i] > T(0)) g[i] += self.grad[i];
    });
}

template <typename T>
TensorT<T> leaky_relu(const TensorT<T>& x, double slope = 0.2) {
    std::vector<T> out(x.values().size());
    for (size_t i = 0; i < out.size(); ++i)
        out[i] = x.values()[i] > T(0) ? x.values()[i] : static_cast<T>(slope * x.values()[i]);
    return make_op<T>("leaky_relu", {x}, x.shape(), std::move(out),
                      [slope](TensorNode<T>& self) {
                          auto& p = *self.parents[0];
                          auto& g = ensure_grad(p);
                          for (size_t i = 0; i < g.size(); ++i)
                              g[i] += p.values[i] > T(0)
                                          ? self.grad[i]
                                          : static_cast<T>(slope * self.grad[i]);
                      });
}

template <typename T>
TensorT<T> sigmoid(const TensorT<T>& x) {
    std::vector<T> out(x.values().size());
    for (size_t i = 0; i < out.size(); ++i) {
        T v = x.values()[i];
        if (v >= T(0)) {
            out[i] = T(1) / (T(1) + std::exp(-v));
        } else {
            T e = std::exp(v);
            out[i] = e / (T(1) + e);
        }
    }
    return make_op<T>("sigmoid", {x}, x.shape(), std::move(out), [](TensorNode<T>& self) {
        auto& g = ensure_grad(*self.parents[0]);
        for (size_t i = 0; i < g.size(); ++i) {
            T y = self.values[i];
            g[i] += self.grad[i] * y * (T(1) - y);
        }
    });
}

// ---------------------------------------------------------------------------
// Shape ops

template <typename T>
TensorT<T> reshape(const TensorT<T>& x, std::vector<int> new_shape) {
    int64_t n = 1;
    for (int e : new_shape) n *= e;
    if (n != x.numel())
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                         shape_str(new_shape));
    return make_op<T>("reshape", {x}, std::move(new_shape), x.values(),
                      [](TensorNode<T>& self) {
                          auto& g = ensure_grad(*self.parents[0]);
                          for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                      });
}

// Channel-dim concat of two NCHW tensors, a first then b.
template <typename T>
TensorT<T> channel_concat(const TensorT<T>& a, const TensorT<T>& b) {
    if (a.ndim() != 4 || b.ndim() != 4)
        throw ShapeError("channel_concat expects 4-D tensors");
    if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3))
        throw ShapeError("channel_concat: non-channel extents differ, " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    int B = a.dim(0), Ca = a.dim(1), Cb = b.dim(1), H = a.dim(2), W = a.dim(3);
    int64_t plane = static_cast<int64_t>(H) * W;
    std::vector<T> out(static_cast<size_t>(B) * (Ca + Cb) * plane);
    for (int n = 0; n < B; ++n) {
        const T* pa = a.values().data() + static_cast<int64_t>(n) * Ca * plane;
        const T* pb = b.values().data() + static_cast<int64_t>(n) * Cb * plane;
        T* po = out.data() + static_cast<int64_t>(n) * (Ca + Cb) * plane;
        std::copy(pa, pa + Ca * plane, po);
        std::copy(pb, pb + Cb * plane, po + Ca * plane);
    }
    return make_op<T>("channel_concat", {a, b}, {B, Ca + Cb, H, W}, std::move(out),
                      [B, Ca, Cb, plane](TensorNode<T>& self) {
                          auto& pa = *self.parents[0];
                          auto& pb = *self.parents[1];
                          for (int n = 0; n < B; ++n) {
                              const T* gs =
                                  self.grad.data() + static_cast<int64_t>(n) * (Ca + Cb) * plane;
                              if (pa.requires_grad) {
                                  auto& g = ensure_grad(pa);
                                  T* gp = g.data() + static_cast<int64_t>(n) * Ca * plane;
                                  for (int64_t i = 0; i < Ca * plane; ++i) gp[i] += gs[i];
                              }
                              if (pb.requires_grad) {
                                  auto& g = ensure_grad(pb);
                                  T* gp = g.data() + static_cast<int64_t>(n) * Cb * plane;
                                  for (int64_t i = 0; i < Cb * plane; ++i)
                                      gp[i] += gs[Ca * plane + i];
                              }
                          }
                      });
}

// Transpose the last two dims of a [..., M, N] tensor.
template <typename T>
TensorT<T> transpose_last2(const TensorT<T>& x) {
    if (x.ndim() < 2) throw ShapeError("transpose_last2 expects >= 2 dims");
    auto shp = x.shape();
    int M = shp[shp.size() - 2], N = shp.back();
    int64_t batch = x.numel() / (static_cast<int64_t>(M) * N);
    std::swap(shp[shp.size() - 2], shp[shp.size() - 1]);
    std::vector<T> out(x.values().size());
    for (int64_t b = 0; b < batch; ++b) {
        const T* src = x.values().data() + b * M * N;
        T* dst = out.data() + b * M * N;
        for (int i = 0; i < M; ++i)
            for (int j = 0; j < N; ++j) dst[static_cast<int64_t>(j) * M + i] = src[static_cast<int64_t>(i) * N + j];
    }
    return make_op<T>("transpose_last2", {x}, std::move(shp), std::move(out),
                      [M, N, batch](TensorNode<T>& self) {
                          auto& g = ensure_grad(*self.parents[0]);
                          for (int64_t b = 0; b < batch; ++b) {
                              const T* gs = self.grad.data() + b * M * N;
                              T* gp = g.data() + b * M * N;
                              for (int j = 0; j < N; ++j)
                                  for (int i = 0; i < M; ++i)
                                      gp[static_cast<int64_t>(i) * N + j] += gs[static_cast<int64_t>(j) * M + i];
                          }
                      });
}

// ---------------------------------------------------------------------------
// Matmul / softmax / linear

// Batched matmul: [B,M,K] x [B,K,N] -> [B,M,N].
template <typename T>
TensorT<T> bmm(const TensorT<T>& a, const TensorT<T>& b) {
    if (a.ndim() != 3 || b.ndim() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1))
        throw ShapeError("bmm: incompatible shapes " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    int B = a.dim(0), M = a.dim(1), K = a.dim(2), N = b.dim(2);
    std::vector<T> out(static_cast<size_t>(B) * M * N);
    for (int i = 0; i < B; ++i)
        gemm(a.values().data() + static_cast<int64_t>(i) * M * K,
             b.values().data() + static_cast<int64_t>(i) * K * N,
             out.data() + static_cast<int64_t>(i) * M * N, M, K, N);
    return make_op<T>("bmm", {a, b}, {B, M, N}, std::move(out),
                      [B, M, K, N](TensorNode<T>& self) {
                          auto& pa = *self.parents[0];
                          auto& pb = *self.parents[1];
                          for (int i = 0; i < B; ++i) {
                              const T* g = self.grad.data() + static_cast<int64_t>(i) * M * N;
                              if (pa.requires_grad) {
                                  auto& ga = ensure_grad(pa);
                                  gemm_bt(g, pb.values.data() + static_cast<int64_t>(i) * K * N,
                                          ga.data() + static_cast<int64_t>(i) * M * K, M, N, K,
                                          true);
                              }
                              if (pb.requires_grad) {
                                  auto& gb = ensure_grad(pb);
                                  gemm_at(pa.values.data() + static_cast<int64_t>(i) * M * K, g,
                                          gb.data() + static_cast<int64_t>(i) * K * N, K, M, N,
                                          true);
                              }
                          }
                      });
}

// Softmax over the last dim; rows sum to one.
template <typename T>
TensorT<T> softmax_lastdim(const TensorT<T>& x) {
    int N = x.shape().back();
    int64_t rows = x.numel() / N;
    std::vector<T> out(x.values().size());
    for (int64_t r = 0; r < rows; ++r) {
        const T* src = x.values().data() + r * N;
        T* dst = out.data() + r * N;
        T mx = src[0];
        for (int j = 1; j < N; ++j) mx = std::max(mx, src[j]);
        T sum = T(0);
        for (int j = 0; j < N; ++j) {
            dst[j] = std::exp(src[j] - mx);
            sum += dst[j];
        }
        for (int j = 0; j < N; ++j) dst[j] /= sum;
    }
    return make_op<T>("softmax", {x}, x.shape(), std::move(out),
                      [N, rows](TensorNode<T>& self) {
                          auto& g = ensure_grad(*self.parents[0]);
                          for (int64_t r = 0; r < rows; ++r) {
                              const T* y = self.values.data() + r * N;
                              const T* gy = self.grad.data() + r * N;
                              T dot = T(0);
                              for (int j = 0; j < N; ++j) dot += gy[j] * y[j];
                              T* gp = g.data() + r * N;
                              for (int j = 0; j < N; ++j) gp[j] += y[j] * (gy[j] - dot);
                          }
                      });
}

// Fully connected: x[B,Fin] * w[Fout,Fin]^T + bias[Fout].
template <typename T>
TensorT<T> linear(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& bias) {
    if (x.ndim() != 2 || w.ndim() != 2 || x.dim(1) != w.dim(1))
        throw ShapeError("linear: incompatible shapes " + shape_str(x.shape()) + " x " +
                         shape_str(w.shape()));
    int B = x.dim(0), Fin = x.dim(1), Fout = w.dim(0);
    if (bias.numel() != Fout) throw ShapeError("linear: bias extent mismatch");
    std::vector<T> out(static_cast<size_t>(B) * Fout);
    gemm_bt(x.values().data(), w.values().data(), out.data(), B, Fin, Fout);
    for (int i = 0; i < B; ++i)
        for (int o = 0; o < Fout; ++o) out[static_cast<size_t>(i) * Fout + o] += bias.values()[static_cast<size_t>(o)];
    return make_op<T>("linear", {x, w, bias}, {B, Fout}, std::move(out),
                      [B, Fin, Fout](TensorNode<T>& self) {
                          auto& px = *self.parents[0];
                          auto& pw = *self.parents[1];
                          auto& pb = *self.parents[2];
                          if (px.requires_grad) {
                              auto& g = ensure_grad(px);
                              gemm(self.grad.data(), pw.values.data(), g.data(), B, Fout, Fin,
                                   true);
                          }
                          if (pw.requires_grad) {
                              auto& g = ensure_grad(pw);
                              gemm_at(self.grad.data(), px.values.data(), g.data(), Fout, B, Fin,
                                      true);
                          }
                          if (pb.requires_grad) {
                              auto& g = ensure_grad(pb);
                              for (int i = 0; i < B; ++i)
                                  for (int o = 0; o < Fout; ++o)
                                      g[static_cast<size_t>(o)] += self.grad[static_cast<size_t>(i) * Fout + o];
                          }
                      });
}

// Adds a per-(batch, channel) bias over spatial dims: x[B,C,H,W] + b[B,C].
template <typename T>
TensorT<T> add_channel_bias(const TensorT<T>& x, const TensorT<T>& bias) {
    if (x.ndim() != 4 || bias.ndim() != 2 || x.dim(0) != bias.dim(0) || x.dim(1) != bias.dim(1))
        throw ShapeError("add_channel_bias: expected x[B,C,H,W], bias[B,C], got " +
                         shape_str(x.shape()) + " and " + shape_str(bias.shape()));
    int B = x.dim(0), C = x.dim(1);
    int64_t plane = static_cast<int64_t>(x.dim(2)) * x.dim(3);
    std::vector<T> out(x.values().size());
    for (int n = 0; n < B; ++n)
        for (int c = 0; c < C; ++c) {
            T bv = bias.values()[static_cast<size_t>(n) * C + c];
            const T* src = x.values().data() + (static_cast<int64_t>(n) * C + c) * plane;
            T* dst = out.data() + (static_cast<int64_t>(n) * C + c) * plane;
            for (int64_t i = 0; i < plane; ++i) dst[i] = src[i] + bv;
        }
    return make_op<T>("add_channel_bias", {x, bias}, x.shape(), std::move(out),
                      [B, C, plane](TensorNode<T>& self) {
                          auto& px = *self.parents[0];
                          auto& pb = *self.parents[1];
                          if (px.requires_grad) {
                              auto& g = ensure_grad(px);
                              for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                          }
                          if (pb.requires_grad) {
                              auto& g = ensure_grad(pb);
                              for (int n = 0; n < B; ++n)
                                  for (int c = 0; c < C; ++c) {
                                      const T* gs = self.grad.data() +
                                                    (static_cast<int64_t>(n) * C + c) * plane;
                                      T acc = T(0);
                                      for (int64_t i = 0; i < plane; ++i) acc += gs[i];
                                      g[static_cast<size_t>(n) * C + c] += acc;
                                  }
                          }
                      });
}

// ---------------------------------------------------------------------------
// Reductions and losses (mean reduction throughout)

template <typename T>
TensorT<T> sum(const TensorT<T>& x) {
    T acc = T(0);
    for (T v : x.values()) acc += v;
    return make_op<T>("sum", {x}, {1}, {acc}, [](TensorNode<T>& self) {
        auto& g = ensure_grad(*self.parents[0]);
        for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0];
    });
}

template <typename T>
TensorT<T> mean(const TensorT<T>& x) {
    T acc = T(0);
    for (T v : x.values()) acc += v;
    int64_t n = x.numel();
    return make_op<T>("mean", {x}, {1}, {static_cast<T>(acc / static_cast<T>(n))},
                      [n](TensorNode<T>& self) {
                          auto& g = ensure_grad(*self.parents[0]);
                          T s = self.grad[0] / static_cast<T>(n);
                          for (size_t i = 0; i < g.size(); ++i) g[i] += s;
                      });
}

template <typename T>
TensorT<T> l1_loss(const TensorT<T>& pred, const TensorT<T>& target) {
    check_same_shape(pred, target, "l1_loss");
    T acc = T(0);
    for (size_t i = 0; i < pred.values().size(); ++i)
        acc += std::abs(pred.values()[i] - target.values()[i]);
    int64_t n = pred.numel();
    return make_op<T>("l1_loss", {pred, target}, {1}, {static_cast<T>(acc / static_cast<T>(n))},
                      [n](TensorNode<T>& self) {
                          auto& pp = *self.parents[0];
                          auto& pt = *self.parents[1];
                          T s = self.grad[0] / static_cast<T>(n);
                          for (size_t i = 0; i < pp.values.size(); ++i) {
                              T d = pp.values[i] - pt.values[i];
                              T sg = d > T(0) ? s : (d < T(0) ? -s : T(0));
                              if (pp.requires_grad) ensure_grad(pp)[i] += sg;
                              if (pt.requires_grad) ensure_grad(pt)[i] -= sg;
                          }
                      });
}

template <typename T>
TensorT<T> mse_loss(const TensorT<T>& pred, const TensorT<T>& target) {
    check_same_shape(pred, target, "mse_loss");
    T acc = T(0);
    for (size_t i = 0; i < pred.values().size(); ++i) {
        T d = pred.values()[i] - target.values()[i];
        acc += d * d;
    }
    int64_t n = pred.numel();
    return make_op<T>("mse_loss", {pred, target}, {1}, {static_cast<T>(acc / static_cast<T>(n))},
                      [n](TensorNode<T>& self) {
                          auto& pp = *self.parents[0];
                          auto& pt = *self.parents[1];
                          T s = self.grad[0] * T(2) / static_cast<T>(n);
                          for (size_t i = 0; i < pp.values.size(); ++i) {
                              T d = s * (pp.values[i] - pt.values[i]);
                              if (pp.requires_grad) ensure_grad(pp)[i] += d;
                              if (pt.requires_grad) ensure_grad(pt)[i] -= d;
                          }
                      });
}

template <typename T>
TensorT<T> bce_with_logits(const TensorT<T>& logits, const TensorT<T>& labels) {
    check_same_shape(logits, labels, "bce_with_logits");
    T acc = T(0);
    for (size_t i = 0; i < logits.values().size(); ++i) {
        T x = logits.values()[i], y = labels.values()[i];
        acc += std::max(x, T(0)) - x * y + std::log1p(std::exp(-std::abs(x)));
    }
    int64_t n = logits.numel();
    return make_op<T>("bce_with_logits", {logits, labels}, {1},
                      {static_cast<T>(acc / static_cast<T>(n))}, [n](TensorNode<T>& self) {
                          auto& pl = *self.parents[0];
                          auto& py = *self.parents[1];
                          T s = self.grad[0] / static_cast<T>(n);
                          for (size_t i = 0; i < pl.values.size(); ++i) {
                              T x = pl.values[i];
                              T sig = x >= T(0) ? T(1) / (T(1) + std::exp(-x))
                                                : std::exp(x) / (T(1) + std::exp(x));
                              if (pl.requires_grad)
                                  ensure_grad(pl)[i] += s * (sig - py.values[i]);
                              if (py.requires_grad) ensure_grad(py)[i] += s * (-x);
                          }
                      });
}

// ---------------------------------------------------------------------------
// backward

// Populates .grad on every requires_grad tensor reachable from the loss,
// visiting each recorded op exactly once in reverse topological order.
template <typename T>
void backward(const TensorT<T>& loss) {
    if (loss.numel() != 1)
        throw std::invalid_argument("backward: loss must be a scalar, got shape " +
                                    shape_str(loss.shape()));
    auto* root = loss.node().get();
    if (root->backward_done)
        throw std::invalid_argument("backward: called twice on the same loss without reset");
    if (!root->requires_grad) {
        warn("backward: loss is detached from any differentiable input; no-op");
        return;
    }
    root->backward_done = true;

    std::vector<TensorNode<T>*> order;
    std::unordered_set<TensorNode<T>*> visited;
    struct Frame {
        TensorNode<T>* n;
        size_t next;
    };
    std::vector<Frame> stack{{root, 0}};
    visited.insert(root);
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next < f.n->parents.size()) {
            TensorNode<T>* p = f.n->parents[f.next++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(f.n);
            stack.pop_back();
        }
    }
    ensure_grad(*root)[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backprop) (*it)->backprop(**it);
}

}  // namespace sliceterp

#pragma once

// Spatial ops over NCHW tensors: cross-correlation conv, its transpose,
// max-pooling, batch norm, and the softmax spatial attention block.
// conv2d/conv_transpose2d lower to im2col/col2im plus GEMM.

#include <cmath>
#include <vector>

#include "sliceterp/tensor.hpp"

namespace sliceterp {

namespace detail {

// Gathers padded input patches into col[Cin*kh*kw][OH*OW] for one image.
template <typename T>
void im2col(const T* in, int cin, int h, int w, int kh, int kw, int stride, int padding,
            int oh, int ow, T* col) {
    std::fill(col, col + static_cast<int64_t>(cin) * kh * kw * oh * ow, T(0));
    for (int ci = 0; ci < cin; ++ci) {
        for (int ki = 0; ki < kh; ++ki) {
            for (int kj = 0; kj < kw; ++kj) {
                T* row = col + ((static_cast<int64_t>(ci) * kh + ki) * kw + kj) *
                                   (static_cast<int64_t>(oh) * ow);
                const T* plane = in + static_cast<int64_t>(ci) * h * w;
                for (int oy = 0; oy < oh; ++oy) {
                    int iy = oy * stride + ki - padding;
                    if (iy < 0 || iy >= h) continue;
                    for (int ox = 0; ox < ow; ++ox) {
                        int ix = ox * stride + kj - padding;
                        if (ix < 0 || ix >= w) continue;
                        row[static_cast<int64_t>(oy) * ow + ox] = plane[static_cast<int64_t>(iy) * w + ix];
                    }
                }
            }
        }
    }
}

// Scatter-add of col back into the (unpadded) input layout; adjoint of im2col.
template <typename T>
void col2im(const T* col, int cin, int h, int w, int kh, int kw, int stride, int padding,
            int oh, int ow, T* in) {
    for (int ci = 0; ci < cin; ++ci) {
        for (int ki = 0; ki < kh; ++ki) {
            for (int kj = 0; kj < kw; ++kj) {
                const T* row = col + ((static_cast<int64_t>(ci) * kh + ki) * kw + kj) *
                                         (static_cast<int64_t>(oh) * ow);
                T* plane = in + static_cast<int64_t>(ci) * h * w;
                for (int oy = 0; oy < oh; ++oy) {
                    int iy = oy * stride + ki - padding;
                    if (iy < 0 || iy >= h) continue;
                    for (int ox = 0; ox < ow; ++ox) {
                        int ix = ox * stride + kj - padding;
                        if (ix < 0 || ix >= w) continue;
                        plane[static_cast<int64_t>(iy) * w + ix] += row[static_cast<int64_t>(oy) * ow + ox];
                    }
                }
            }
        }
    }
}

}  // namespace detail

// Standard cross-correlation. input[B,Cin,H,W], weight[Cout,Cin,kh,kw],
// bias[Cout]. H' = floor((H + 2*padding - kh)/stride) + 1.
template <typename T>
TensorT<T> conv2d(const TensorT<T>& input, const TensorT<T>& weight, const TensorT<T>& bias,
                  int stride = 1, int padding = 0) {
    if (stride <= 0) throw std::invalid_argument("conv2d: stride must be positive");
    if (padding < 0) throw std::invalid_argument("conv2d: padding must be non-negative");
    if (input.ndim() != 4 || weight.ndim() != 4)
        throw ShapeError("conv2d: expected 4-D input and weight, got " +
                         shape_str(input.shape()) + " and " + shape_str(weight.shape()));
    int B = input.dim(0), Cin = input.dim(1), H = input.dim(2), W = input.dim(3);
    int Cout = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
    if (weight.dim(1) != Cin)
        throw ShapeError("conv2d: input channels " + std::to_string(Cin) +
                         " do not match weight " + shape_str(weight.shape()));
    if (bias.numel() != Cout) throw ShapeError("conv2d: bias extent mismatch");
    int OH = (H + 2 * padding - kh) / stride + 1;
    int OW = (W + 2 * padding - kw) / stride + 1;
    if (H + 2 * padding < kh || W + 2 * padding < kw || OH < 1 || OW < 1)
        throw ShapeError("conv2d: kernel " + shape_str(weight.shape()) +
                         " does not fit input " + shape_str(input.shape()));

    int K = Cin * kh * kw;
    int64_t N = static_cast<int64_t>(OH) * OW;
    std::vector<T> col(static_cast<size_t>(K) * N);
    std::vector<T> out(static_cast<size_t>(B) * Cout * N);
    for (int b = 0; b < B; ++b) {
        detail::im2col(input.values().data() + static_cast<int64_t>(b) * Cin * H * W, Cin, H, W,
                       kh, kw, stride, padding, OH, OW, col.data());
        T* ob = out.data() + static_cast<int64_t>(b) * Cout * N;
        gemm(weight.values().data(), col.data(), ob, Cout, K, static_cast<int>(N));
        for (int co = 0; co < Cout; ++co) {
            T bv = bias.values()[static_cast<size_t>(co)];
            for (int64_t i = 0; i < N; ++i) ob[static_cast<int64_t>(co) * N + i] += bv;
        }
    }

    auto bp = [B, Cin, H, W, Cout, kh, kw, stride, padding, OH, OW, K, N](TensorNode<T>& self) {
        auto& pin = *self.parents[0];
        auto& pw = *self.parents[1];
        auto& pb = *self.parents[2];
        std::vector<T> col(static_cast<size_t>(K) * N);
        std::vector<T> dcol(static_cast<size_t>(K) * N);
        for (int b = 0; b < B; ++b) {
            const T* g = self.grad.data() + static_cast<int64_t>(b) * Cout * N;
            if (pw.requires_grad || pin.requires_grad) {
                if (pw.requires_grad) {
                    detail::im2col(pin.values.data() + static_cast<int64_t>(b) * Cin * H * W, Cin,
                                   H, W, kh, kw, stride, padding, OH, OW, col.data());
                    gemm_bt(g, col.data(), ensure_grad(pw).data(), Cout, static_cast<int>(N), K,
                            true);
                }
                if (pin.requires_grad) {
                    gemm_at(pw.values.data(), g, dcol.data(), K, Cout, static_cast<int>(N));
                    detail::col2im(dcol.data(), Cin, H, W, kh, kw, stride, padding, OH, OW,
                                   ensure_grad(pin).data() + static_cast<int64_t>(b) * Cin * H * W);
                }
            }
            if (pb.requires_grad) {
                auto& gb = ensure_grad(pb);
                for (int co = 0; co < Cout; ++co) {
                    T acc = T(0);
                    for (int64_t i = 0; i < N; ++i) acc += g[static_cast<int64_t>(co) * N + i];
                    gb[static_cast<size_t>(co)] += acc;
                }
            }
        }
    };
    return make_op<T>("conv2d", {input, weight, bias}, {B, Cout, OH, OW}, std::move(out), bp);
}

// Transposed convolution (exact adjoint of conv2d with the same kernel and
// stride, zero padding). weight[Cin,Cout,kh,kw]; output extent (in-1)*s + k.
template <typename T>
TensorT<T> conv_transpose2d(const TensorT<T>& input, const TensorT<T>& weight,
                            const TensorT<T>& bias, int stride) {
    if (stride <= 0) throw std::invalid_argument("conv_transpose2d: stride must be positive");
    if (input.ndim() != 4 || weight.ndim() != 4)
        throw ShapeError("conv_transpose2d: expected 4-D input and weight");
    int B = input.dim(0), Cin = input.dim(1), IH = input.dim(2), IW = input.dim(3);
    int Cout = weight.dim(1), kh = weight.dim(2), kw = weight.dim(3);
    if (weight.dim(0) != Cin)
        throw ShapeError("conv_transpose2d: input channels " + std::to_string(Cin) +
                         " do not match weight " + shape_str(weight.shape()));
    if (bias.numel() != Cout) throw ShapeError("conv_transpose2d: bias extent mismatch");
    int OH = (IH - 1) * stride + kh;
    int OW = (IW - 1) * stride + kw;

    int K = Cout * kh * kw;
    int64_t N = static_cast<int64_t>(IH) * IW;
    std::vector<T> cols(static_cast<size_t>(K) * N);
    std::vector<T> out(static_cast<size_t>(B) * Cout * OH * OW, T(0));
    for (int b = 0; b < B; ++b) {
        // cols[Cout*kh*kw, IH*IW] = weight^T[Cin, K] * in_b[Cin, N]
        gemm_at(weight.values().data(), input.values().data() + static_cast<int64_t>(b) * Cin * N,
                cols.data(), K, Cin, static_cast<int>(N));
        T* ob = out.data() + static_cast<int64_t>(b) * Cout * OH * OW;
        // scatter: out[co, ih*s+ki, iw*s+kj] += cols[(co,ki,kj), (ih,iw)]
        detail::col2im(cols.data(), Cout, OH, OW, kh, kw, stride, 0, IH, IW, ob);
        for (int co = 0; co < Cout; ++co) {
            T bv = bias.values()[static_cast<size_t>(co)];
            for (int64_t i = 0; i < static_cast<int64_t>(OH) * OW; ++i)
                ob[static_cast<int64_t>(co) * OH * OW + i] += bv;
        }
    }

    auto bp = [B, Cin, Cout, IH, IW, kh, kw, stride, OH, OW, K, N](TensorNode<T>& self) {
        auto& pin = *self.parents[0];
        auto& pw = *self.parents[1];
        auto& pb = *self.parents[2];
        std::vector<T> gcols(static_cast<size_t>(K) * N);
        for (int b = 0; b < B; ++b) {
            const T* g = self.grad.data() + static_cast<int64_t>(b) * Cout * OH * OW;
            // gcols = patches of the upstream gradient at the scatter positions
            detail::im2col(g, Cout, OH, OW, kh, kw, stride, 0, IH, IW, gcols.data());
            if (pin.requires_grad)
                gemm(pw.values.data(), gcols.data(),
                     ensure_grad(pin).data() + static_cast<int64_t>(b) * Cin * N, Cin, K,
                     static_cast<int>(N), true);
            if (pw.requires_grad)
                gemm_bt(pin.values.data() + static_cast<int64_t>(b) * Cin * N, gcols.data(),
                        ensure_grad(pw).data(), Cin, static_cast<int>(N), K, true);
            if (pb.requires_grad) {
                auto& gb = ensure_grad(pb);
                for (int co = 0; co < Cout; ++co) {
                    T acc = T(0);
                    for (int64_t i = 0; i < static_cast<int64_t>(OH) * OW; ++i)
                        acc += g[static_cast<int64_t>(co) * OH * OW + i];
                    gb[static_cast<size_t>(co)] += acc;
                }
            }
        }
    };
    return make_op<T>("conv_transpose2d", {input, weight, bias}, {B, Cout, OH, OW},
                      std::move(out), bp);
}

// 2x2 max pooling, stride 2. Gradient routes to the argmax cell; ties break
// to the first cell in row-major window scan.
template <typename T>
TensorT<T> maxpool2d(const TensorT<T>& input, int window = 2) {
    if (window != 2) throw std::invalid_argument("maxpool2d: only window 2 is supported");
    if (input.ndim() != 4) throw ShapeError("maxpool2d: expected 4-D input");
    int B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    if (H % 2 != 0 || W % 2 != 0)
        throw std::invalid_argument("maxpool2d: extents must be even, got " +
                                    shape_str(input.shape()));
    int OH = H / 2, OW = W / 2;
    std::vector<T> out(static_cast<size_t>(B) * C * OH * OW);
    std::vector<int64_t> argmax(out.size());
    int64_t o = 0;
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            const T* plane =
                input.values().data() + (static_cast<int64_t>(b) * C + c) * H * W;
            int64_t base = (static_cast<int64_t>(b) * C + c) * H * W;
            for (int oy = 0; oy < OH; ++oy)
                for (int ox = 0; ox < OW; ++ox, ++o) {
                    T best = plane[static_cast<int64_t>(2 * oy) * W + 2 * ox];
                    int64_t besti = static_cast<int64_t>(2 * oy) * W + 2 * ox;
                    for (int dy = 0; dy < 2; ++dy)
                        for (int dx = 0; dx < 2; ++dx) {
                            int64_t idx = static_cast<int64_t>(2 * oy + dy) * W + 2 * ox + dx;
                            if (plane[idx] > best) {
                                best = plane[idx];
                                besti = idx;
                            }
                        }
                    out[static_cast<size_t>(o)] = best;
                    argmax[static_cast<size_t>(o)] = base + besti;
                }
        }
    return make_op<T>("maxpool2d", {input}, {B, C, OH, OW}, std::move(out),
                      [argmax = std::move(argmax)](TensorNode<T>& self) {
                          auto& g = ensure_grad(*self.parents[0]);
                          for (size_t i = 0; i < argmax.size(); ++i)
                              g[static_cast<size_t>(argmax[i])] += self.grad[i];
                      });
}

enum class BnMode { Train, Eval };

// Batch normalization over (B,H,W) per channel. Train mode normalizes with
// batch statistics and updates the caller-owned running buffers in place;
// eval mode normalizes with the running statistics. Biased variance is used
// both for normalization and for the running update.
template <typename T>
TensorT<T> batchnorm2d(const TensorT<T>& x, const TensorT<T>& gamma, const TensorT<T>& beta,
                       std::vector<T>& running_mean, std::vector<T>& running_var, BnMode mode,
                       double momentum = 0.1, double eps = 1e-5) {
    if (x.ndim() != 4) throw ShapeError("batchnorm2d: expected 4-D input");
    int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (B < 1) throw std::invalid_argument("batchnorm2d: zero batch");
    if (gamma.numel() != C || beta.numel() != C ||
        running_mean.size() != static_cast<size_t>(C) ||
        running_var.size() != static_cast<size_t>(C))
        throw ShapeError("batchnorm2d: channel count mismatch for C=" + std::to_string(C));

    int64_t plane = static_cast<int64_t>(H) * W;
    int64_t n = static_cast<int64_t>(B) * plane;
    std::vector<T> mean_c(static_cast<size_t>(C)), invstd_c(static_cast<size_t>(C));
    if (mode == BnMode::Train) {
        for (int c = 0; c < C; ++c) {
            double m = 0.0;
            for (int b = 0; b < B; ++b) {
                const T* p = x.values().data() + (static_cast<int64_t>(b) * C + c) * plane;
                for (int64_t i = 0; i < plane; ++i) m += p[i];
            }
            m /= static_cast<double>(n);
            double v = 0.0;
            for (int b = 0; b < B; ++b) {
                const T* p = x.values().data() + (static_cast<int64_t>(b) * C + c) * plane;
                for (int64_t i = 0; i < plane; ++i) {
                    double d = p[i] - m;
                    v += d * d;
                }
            }
            v /= static_cast<double>(n);
            mean_c[static_cast<size_t>(c)] = static_cast<T>(m);
            invstd_c[static_cast<size_t>(c)] = static_cast<T>(1.0 / std::sqrt(v + eps));
            running_mean[static_cast<size_t>(c)] =
                static_cast<T>((1.0 - momentum) * running_mean[static_cast<size_t>(c)] + momentum * m);
            running_var[static_cast<size_t>(c)] =
                static_cast<T>((1.0 - momentum) * running_var[static_cast<size_t>(c)] + momentum * v);
        }
    } else {
        for (int c = 0; c < C; ++c) {
            mean_c[static_cast<size_t>(c)] = running_mean[static_cast<size_t>(c)];
            invstd_c[static_cast<size_t>(c)] = static_cast<T>(
                1.0 / std::sqrt(static_cast<double>(running_var[static_cast<size_t>(c)]) + eps));
        }
    }

    std::vector<T> out(x.values().size());
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            const T* p = x.values().data() + (static_cast<int64_t>(b) * C + c) * plane;
            T* q = out.data() + (static_cast<int64_t>(b) * C + c) * plane;
            T m = mean_c[static_cast<size_t>(c)], is = invstd_c[static_cast<size_t>(c)];
            T gm = gamma.values()[static_cast<size_t>(c)], bt = beta.values()[static_cast<size_t>(c)];
            for (int64_t i = 0; i < plane; ++i) q[i] = gm * (p[i] - m) * is + bt;
        }

    bool train = mode == BnMode::Train;
    auto bp = [B, C, plane, n, train, mean_c, invstd_c](TensorNode<T>& self) {
        auto& px = *self.parents[0];
        auto& pg = *self.parents[1];
        auto& pb = *self.parents[2];
        for (int c = 0; c < C; ++c) {
            T m = mean_c[static_cast<size_t>(c)], is = invstd_c[static_cast<size_t>(c)];
            T gm = pg.values[static_cast<size_t>(c)];
            // Accumulate per-channel sums of dy and dy*xhat.
            double sum_dy = 0.0, sum_dy_xhat = 0.0;
            for (int b = 0; b < B; ++b) {
                const T* xv = px.values.data() + (static_cast<int64_t>(b) * C + c) * plane;
                const T* gy = self.grad.data() + (static_cast<int64_t>(b) * C + c) * plane;
                for (int64_t i = 0; i < plane; ++i) {
                    sum_dy += gy[i];
                    sum_dy_xhat += gy[i] * (xv[i] - m) * is;
                }
            }
            if (pg.requires_grad) ensure_grad(pg)[static_cast<size_t>(c)] += static_cast<T>(sum_dy_xhat);
            if (pb.requires_grad) ensure_grad(pb)[static_cast<size_t>(c)] += static_cast<T>(sum_dy);
            if (px.requires_grad) {
                auto& gx = ensure_grad(px);
                for (int b = 0; b < B; ++b) {
                    const T* xv = px.values.data() + (static_cast<int64_t>(b) * C + c) * plane;
                    const T* gy = self.grad.data() + (static_cast<int64_t>(b) * C + c) * plane;
                    T* go = gx.data() + (static_cast<int64_t>(b) * C + c) * plane;
                    if (train) {
                        for (int64_t i = 0; i < plane; ++i) {
                            T xhat = (xv[i] - m) * is;
                            go[i] += static_cast<T>(
                                gm * is *
                                (gy[i] - sum_dy / static_cast<double>(n) -
                                 xhat * sum_dy_xhat / static_cast<double>(n)));
                        }
                    } else {
                        for (int64_t i = 0; i < plane; ++i) go[i] += gm * is * gy[i];
                    }
                }
            }
        }
    };
    return make_op<T>("batchnorm2d", {x, gamma, beta}, x.shape(), std::move(out), bp);
}

// Self-attention over spatial positions with 1x1 query/key/value convs, a
// softmax over keys, and a learnable scalar residual gate (identity at
// gamma = 0). Query/key channels are C / reduction.
template <typename T>
TensorT<T> softmax_matmul_attention(const TensorT<T>& x, const TensorT<T>& wq,
                                    const TensorT<T>& bq, const TensorT<T>& wk,
                                    const TensorT<T>& bk, const TensorT<T>& wv,
                                    const TensorT<T>& bv, const TensorT<T>& gamma,
                                    int reduction = 8) {
    if (x.ndim() != 4) throw ShapeError("attention: expected 4-D input");
    int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (C % reduction != 0)
        throw ShapeError("attention: channels " + std::to_string(C) +
                         " not divisible by reduction " + std::to_string(reduction));
    int Cr = C / reduction, N = H * W;
    auto q = reshape(conv2d(x, wq, bq, 1, 0), {B, Cr, N});
    auto k = reshape(conv2d(x, wk, bk, 1, 0), {B, Cr, N});
    auto v = reshape(conv2d(x, wv, bv, 1, 0), {B, C, N});
    auto attn = softmax_lastdim(bmm(transpose_last2(q), k));  // [B,N,N], rows sum to 1
    auto out = reshape(bmm(v, transpose_last2(attn)), {B, C, H, W});
    return add(scale_gate(out, gamma), x);
}

}  // namespace sliceterp

#pragma once

// Linear-algebra and convolution primitives on top of the tensor engine.
// Each op is a single graph node with a hand-written backward rule.

#include "stenoseg/tensor.hpp"

namespace stenoseg {

// matmul supports:
//   [M,K]   x [K,N]   -> [M,N]
//   [B,M,K] x [K,N]   -> [B,M,N]   (shared right operand)
//   [B,M,K] x [B,K,N] -> [B,M,N]
template <class T>
inline Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    std::size_t Ba = 1, M, K, Bb = 1, Kb, N;
    if (a.rank() == 2) {
        M = a.extent(0);
        K = a.extent(1);
    } else if (a.rank() == 3) {
        Ba = a.extent(0);
        M = a.extent(1);
        K = a.extent(2);
    } else {
        throw ShapeError("matmul lhs rank must be 2 or 3");
    }
    if (b.rank() == 2) {
        Kb = b.extent(0);
        N = b.extent(1);
    } else if (b.rank() == 3) {
        Bb = b.extent(0);
        Kb = b.extent(1);
        N = b.extent(2);
    } else {
        throw ShapeError("matmul rhs rank must be 2 or 3");
    }
    if (K != Kb)
        throw ShapeError("matmul inner extents differ: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    if (a.rank() == 3 && b.rank() == 3 && Ba != Bb) throw ShapeError("matmul batch mismatch");
    const std::size_t B = std::max(Ba, Bb);

    Shape out_shape = (a.rank() == 2 && b.rank() == 2) ? Shape{M, N} : Shape{B, M, N};
    std::vector<T> out(B * M * N, T(0));
    const auto& av = a.values();
    const auto& bv = b.values();
    for (std::size_t bi = 0; bi < B; ++bi) {
        const T* ap = &av[(Ba == 1 ? 0 : bi) * M * K];
        const T* bp = &bv[(Bb == 1 ? 0 : bi) * K * N];
        T* op = &out[bi * M * N];
        for (std::size_t m = 0; m < M; ++m)
            for (std::size_t k = 0; k < K; ++k) {
                const T x = ap[m * K + k];
                const T* brow = &bp[k * N];
                T* orow = &op[m * N];
                for (std::size_t n = 0; n < N; ++n) orow[n] += x * brow[n];
            }
    }
    auto an = a.node();
    auto bn = b.node();
    return make_op<T>(
        out_shape, std::move(out), {a, b},
        [an, bn, B, Ba, Bb, M, K, N](Node<T>& self) {
            for (std::size_t bi = 0; bi < B; ++bi) {
                const T* g = &self.grad[bi * M * N];
                const T* ap = &an->value[(Ba == 1 ? 0 : bi) * M * K];
                const T* bp = &bn->value[(Bb == 1 ? 0 : bi) * K * N];
                if (an->requires_grad) {
                    an->ensure_grad();
                    T* ga = &an->grad[(Ba == 1 ? 0 : bi) * M * K];
                    for (std::size_t m = 0; m < M; ++m)
                        for (std::size_t n = 0; n < N; ++n) {
                            const T gv = g[m * N + n];
                            for (std::size_t k = 0; k < K; ++k)
                                ga[m * K + k] += gv * bp[k * N + n];
                        }
                }
                if (bn->requires_grad) {
                    bn->ensure_grad();
                    T* gb = &bn->grad[(Bb == 1 ? 0 : bi) * K * N];
                    for (std::size_t m = 0; m < M; ++m)
                        for (std::size_t k = 0; k < K; ++k) {
                            const T x = ap[m * K + k];
                            const T* grow = &g[m * N];
                            for (std::size_t n = 0; n < N; ++n)
                                gb[k * N + n] += x * grow[n];
                        }
                }
            }
        },
        "matmul");
}

// Swap the last two axes of a rank-3 tensor.
template <class T>
inline Tensor<T> transpose_last2(const Tensor<T>& a) {
    if (a.rank() != 3) throw ShapeError("transpose_last2 expects rank 3");
    return permute(a, {0, 2, 1});
}

// ---------------------------------------------------------------------------
// conv2d: x [B,Cin,H,W], w [O,Cin/g,kh,kw], optional bias [O].
// Zero padding, equal stride/padding per spatial axis.
template <class T>
inline Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                        std::size_t stride, std::size_t pad, std::size_t groups) {
    if (x.rank() != 4 || w.rank() != 4) throw ShapeError("conv2d expects rank-4 x and w");
    const std::size_t B = x.extent(0), Cin = x.extent(1), H = x.extent(2), W = x.extent(3);
    const std::size_t O = w.extent(0), Cg = w.extent(1), kh = w.extent(2), kw = w.extent(3);
    if (Cin % groups != 0 || O % groups != 0)
        throw ShapeError("conv2d channels not divisible by groups");
    if (Cg != Cin / groups) throw ShapeError("conv2d weight channel extent mismatch");
    if (H + 2 * pad < kh || W + 2 * pad < kw)
        throw ShapeError("conv2d kernel larger than padded input");
    const bool has_bias = bias.defined();
    if (has_bias && (bias.rank() != 1 || bias.extent(0) != O))
        throw ShapeError("conv2d bias shape");
    const std::size_t Ho = (H + 2 * pad - kh) / stride + 1;
    const std::size_t Wo = (W + 2 * pad - kw) / stride + 1;
    const std::size_t Og = O / groups;

    std::vector<T> out(B * O * Ho * Wo, T(0));
    const auto& xv = x.values();
    const auto& wv = w.values();
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t g = 0; g < groups; ++g)
            for (std::size_t oc = 0; oc < Og; ++oc) {
                const std::size_t o = g * Og + oc;
                const T bias_v = has_bias ? bias.values()[o] : T(0);
                for (std::size_t oy = 0; oy < Ho; ++oy)
                    for (std::size_t ox = 0; ox < Wo; ++ox) {
                        T acc = bias_v;
                        for (std::size_t ic = 0; ic < Cg; ++ic) {
                            const std::size_t c = g * Cg + ic;
                            for (std::size_t ky = 0; ky < kh; ++ky) {
                                const std::ptrdiff_t iy =
                                    std::ptrdiff_t(oy * stride + ky) - std::ptrdiff_t(pad);
                                if (iy < 0 || iy >= std::ptrdiff_t(H)) continue;
                                for (std::size_t kx = 0; kx < kw; ++kx) {
                                    const std::ptrdiff_t ix =
                                        std::ptrdiff_t(ox * stride + kx) - std::ptrdiff_t(pad);
                                    if (ix < 0 || ix >= std::ptrdiff_t(W)) continue;
                                    acc += xv[((b * Cin + c) * H + iy) * W + ix] *
                                           wv[((o * Cg + ic) * kh + ky) * kw + kx];
                                }
                            }
                        }
                        out[((b * O + o) * Ho + oy) * Wo + ox] = acc;
                    }
            }

    std::vector<Tensor<T>> inputs{x, w};
    if (has_bias) inputs.push_back(bias);
    auto xn = x.node();
    auto wn = w.node();
    auto biasn = has_bias ? bias.node() : nullptr;
    return make_op<T>(
        Shape{B, O, Ho, Wo}, std::move(out), inputs,
        [=](Node<T>& self) {
            const auto& g = self.grad;
            if (xn->requires_grad) xn->ensure_grad();
            if (wn->requires_grad) wn->ensure_grad();
            if (biasn && biasn->requires_grad) biasn->ensure_grad();
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t grp = 0; grp < groups; ++grp)
                    for (std::size_t oc = 0; oc < Og; ++oc) {
                        const std::size_t o = grp * Og + oc;
                        for (std::size_t oy = 0; oy < Ho; ++oy)
                            for (std::size_t ox = 0; ox < Wo; ++ox) {
                                const T gv = g[((b * O + o) * Ho + oy) * Wo + ox];
                                if (gv == T(0)) continue;
                                if (biasn && biasn->requires_grad) biasn->grad[o] += gv;
                                for (std::size_t ic = 0; ic < Cg; ++ic) {
                                    const std::size_t c = grp * Cg + ic;
                                    for (std::size_t ky = 0; ky < kh; ++ky) {
                                        const std::ptrdiff_t iy =
                                            std::ptrdiff_t(oy * stride + ky) - std::ptrdiff_t(pad);
                                        if (iy < 0 || iy >= std::ptrdiff_t(H)) continue;
                                        for (std::size_t kx = 0; kx < kw; ++kx) {
                                            const std::ptrdiff_t ix =
                                                std::ptrdiff_t(ox * stride + kx) -
                                                std::ptrdiff_t(pad);
                                            if (ix < 0 || ix >= std::ptrdiff_t(W)) continue;
                                            const std::size_t xi =
                                                ((b * Cin + c) * H + iy) * W + ix;
                                            const std::size_t wi =
                                                ((o * Cg + ic) * kh + ky) * kw + kx;
                                            if (xn->requires_grad)
                                                xn->grad[xi] += gv * wn->value[wi];
                                            if (wn->requires_grad)
                                                wn->grad[wi] += gv * xn->value[xi];
                                        }
                                    }
                                }
                            }
                    }
        },
        "conv2d");
}

template <class T>
inline Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, std::size_t stride,
                        std::size_t pad, std::size_t groups = 1) {
    return conv2d(x, w, Tensor<T>(), stride, pad, groups);
}

// Depthwise causal 1D convolution on [B,L,C] token sequences: each channel
// has its own k-tap filter, left-padded so position t sees t-k+1..t.
template <class T>
inline Tensor<T> conv1d_depthwise_causal(const Tensor<T>& x, const Tensor<T>& w,
                                         const Tensor<T>& bias) {
    if (x.rank() != 3) throw ShapeError("conv1d expects [B,L,C]");
    const std::size_t B = x.extent(0), L = x.extent(1), C = x.extent(2);
    if (w.rank() != 2 || w.extent(0) != C) throw ShapeError("conv1d weight must be [C,k]");
    const std::size_t k = w.extent(1);
    const bool has_bias = bias.defined();

    std::vector<T> out(B * L * C, T(0));
    const auto& xv = x.values();
    const auto& wv = w.values();
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t t = 0; t < L; ++t)
            for (std::size_t c = 0; c < C; ++c) {
                T acc = has_bias ? bias.values()[c] : T(0);
                for (std::size_t j = 0; j < k; ++j) {
                    const std::ptrdiff_t tt = std::ptrdiff_t(t) - std::ptrdiff_t(k - 1 - j);
                    if (tt < 0) continue;
                    acc += xv[(b * L + tt) * C + c] * wv[c * k + j];
                }
                out[(b * L + t) * C + c] = acc;
            }

    std::vector<Tensor<T>> inputs{x, w};
    if (has_bias) inputs.push_back(bias);
    auto xn = x.node();
    auto wn = w.node();
    auto biasn = has_bias ? bias.node() : nullptr;
    return make_op<T>(
        x.shape(), std::move(out), inputs,
        [=](Node<T>& self) {
            if (xn->requires_grad) xn->ensure_grad();
            if (wn->requires_grad) wn->ensure_grad();
            if (biasn && biasn->requires_grad) biasn->ensure_grad();
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t t = 0; t < L; ++t)
                    for (std::size_t c = 0; c < C; ++c) {
                        const T gv = self.grad[(b * L + t) * C + c];
                        if (gv == T(0)) continue;
                        if (biasn && biasn->requires_grad) biasn->grad[c] += gv;
                        for (std::size_t j = 0; j < k; ++j) {
                            const std::ptrdiff_t tt =
                                std::ptrdiff_t(t) - std::ptrdiff_t(k - 1 - j);
                            if (tt < 0) continue;
                            const std::size_t xi = (b * L + std::size_t(tt)) * C + c;
                            if (xn->requires_grad) xn->grad[xi] += gv * wn->value[c * k + j];
                            if (wn->requires_grad) wn->grad[c * k + j] += gv * xn->value[xi];
                        }
                    }
        },
        "conv1d");
}

// ---------------------------------------------------------------------------
// Layer normalization over the trailing `norm_rank` axes, with affine
// gamma/beta shaped like that suffix.
template <class T>
inline Tensor<T> layer_norm(const Tensor<T>& x, std::size_t norm_rank, const Tensor<T>& gamma,
                            const Tensor<T>& beta, T eps = T(1e-5)) {
    if (norm_rank == 0 || norm_rank > x.rank()) throw ShapeError("layer_norm bad norm rank");
    std::size_t inner = 1;
    for (std::size_t d = x.rank() - norm_rank; d < x.rank(); ++d) inner *= x.extent(d);
    if (inner == 0) throw ShapeError("layer_norm empty normalization slice");
    const std::size_t outer = x.numel() / inner;
    const bool affine = gamma.defined();
    if (affine && (gamma.numel() != inner || beta.numel() != inner))
        throw ShapeError("layer_norm affine shape mismatch");

    std::vector<T> out(x.numel());
    std::vector<T> mu(outer), rstd(outer);
    const auto& xv = x.values();
    for (std::size_t o = 0; o < outer; ++o) {
        const T* xs = &xv[o * inner];
        T m = 0;
        for (std::size_t i = 0; i < inner; ++i) m += xs[i];
        m /= T(inner);
        T var = 0;
        for (std::size_t i = 0; i < inner; ++i) var += (xs[i] - m) * (xs[i] - m);
        var /= T(inner);
        const T r = T(1) / std::sqrt(var + eps);
        mu[o] = m;
        rstd[o] = r;
        for (std::size_t i = 0; i < inner; ++i) {
            T y = (xs[i] - m) * r;
            if (affine) y = y * gamma.values()[i] + beta.values()[i];
            out[o * inner + i] = y;
        }
    }

    std::vector<Tensor<T>> inputs{x};
    if (affine) {
        inputs.push_back(gamma);
        inputs.push_back(beta);
    }
    auto xn = x.node();
    auto gn = affine ? gamma.node() : nullptr;
    auto bn = affine ? beta.node() : nullptr;
    return make_op<T>(
        x.shape(), std::move(out), inputs,
        [xn, gn, bn, outer, inner, mu, rstd](Node<T>& self) {
            if (xn->requires_grad) xn->ensure_grad();
            if (gn && gn->requires_grad) gn->ensure_grad();
            if (bn && bn->requires_grad) bn->ensure_grad();
            for (std::size_t o = 0; o < outer; ++o) {
                const T* xs = &xn->value[o * inner];
                const T* g = &self.grad[o * inner];
                const T m = mu[o], r = rstd[o];
                // dL/dxhat
                std::vector<T> dxh(inner);
                for (std::size_t i = 0; i < inner; ++i) {
                    const T xh = (xs[i] - m) * r;
                    const T gv = g[i];
                    const T dy = gn ? gv * gn->value[i] : gv;
                    dxh[i] = dy;
                    if (gn && gn->requires_grad) gn->grad[i] += gv * xh;
                    if (bn && bn->requires_grad) bn->grad[i] += gv;
                }
                if (xn->requires_grad) {
                    T sum_dxh = 0, sum_dxh_xh = 0;
                    for (std::size_t i = 0; i < inner; ++i) {
                        sum_dxh += dxh[i];
                        sum_dxh_xh += dxh[i] * (xs[i] - m) * r;
                    }
                    const T invn = T(1) / T(inner);
                    for (std::size_t i = 0; i < inner; ++i) {
                        const T xh = (xs[i] - m) * r;
                        xn->grad[o * inner + i] +=
                            r * (dxh[i] - invn * sum_dxh - xh * invn * sum_dxh_xh);
                    }
                }
            }
        },
        "layer_norm");
}

template <class T>
inline Tensor<T> layer_norm(const Tensor<T>& x, std::size_t norm_rank, T eps = T(1e-5)) {
    return layer_norm(x, norm_rank, Tensor<T>(), Tensor<T>(), eps);
}

// ---------------------------------------------------------------------------
// softmax / log_softmax over an arbitrary axis.

namespace detail {
template <class T>
inline void axis_layout(const Tensor<T>& x, std::size_t axis, std::size_t& outer, std::size_t& n,
                        std::size_t& inner) {
    outer = 1;
    inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= x.extent(d);
    n = x.extent(axis);
    for (std::size_t d = axis + 1; d < x.rank(); ++d) inner *= x.extent(d);
}
}  // namespace detail

template <class T>
inline Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
    std::size_t outer, n, inner;
    detail::axis_layout(x, axis, outer, n, inner);
    std::vector<T> out(x.numel());
    const auto& xv = x.values();
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i) {
            T mx = xv[o * n * inner + i];
            for (std::size_t j = 1; j < n; ++j)
                mx = std::max(mx, xv[(o * n + j) * inner + i]);
            T z = 0;
            for (std::size_t j = 0; j < n; ++j) {
                const T e = std::exp(xv[(o * n + j) * inner + i] - mx);
                out[(o * n + j) * inner + i] = e;
                z += e;
            }
            for (std::size_t j = 0; j < n; ++j) out[(o * n + j) * inner + i] /= z;
        }
    auto xn = x.node();
    return make_op<T>(
        x.shape(), std::move(out), {x},
        [xn, outer, n, inner](Node<T>& self) {
            xn->ensure_grad();
            for (std::size_t o = 0; o < outer; ++o)
                for (std::size_t i = 0; i < inner; ++i) {
                    T dot = 0;
                    for (std::size_t j = 0; j < n; ++j) {
                        const std::size_t k = (o * n + j) * inner + i;
                        dot += self.grad[k] * self.value[k];
                    }
                    for (std::size_t j = 0; j < n; ++j) {
                        const std::size_t k = (o * n + j) * inner + i;
                        xn->grad[k] += self.value[k] * (self.grad[k] - dot);
                    }
                }
        },
        "softmax");
}

template <class T>
inline Tensor<T> log_softmax(const Tensor<T>& x, std::size_t axis) {
    std::size_t outer, n, inner;
    detail::axis_layout(x, axis, outer, n, inner);
    std::vector<T> out(x.numel());
    const auto& xv = x.values();
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i) {
            T mx = xv[o * n * inner + i];
            for (std::size_t j = 1; j < n; ++j)
                mx = std::max(mx, xv[(o * n + j) * inner + i]);
            T z = 0;
            for (std::size_t j = 0; j < n; ++j)
                z += std::exp(xv[(o * n + j) * inner + i] - mx);
            const T lz = std::log(z) + mx;
            for (std::size_t j = 0; j < n; ++j) {
                const std::size_t k = (o * n + j) * inner + i;
                out[k] = xv[k] - lz;
            }
        }
    auto xn = x.node();
    return make_op<T>(
        x.shape(), std::move(out), {x},
        [xn, outer, n, inner](Node<T>& self) {
            xn->ensure_grad();
            for (std::size_t o = 0; o < outer; ++o)
                for (std::size_t i = 0; i < inner; ++i) {
                    T gsum = 0;
                    for (std::size_t j = 0; j < n; ++j)
                        gsum += self.grad[(o * n + j) * inner + i];
                    for (std::size_t j = 0; j < n; ++j) {
                        const std::size_t k = (o * n + j) * inner + i;
                        xn->grad[k] += self.grad[k] - std::exp(self.value[k]) * gsum;
                    }
                }
        },
        "log_softmax");
}

// ---------------------------------------------------------------------------
// Spatial resampling on [B,C,H,W].

enum class ResampleMode { DownsampleStride2, UpsampleNearest2 };

template <class T>
inline Tensor<T> resample(const Tensor<T>& x, ResampleMode mode) {
    if (x.rank() != 4) throw ShapeError("resample expects [B,C,H,W]");
    const std::size_t B = x.extent(0), C = x.extent(1), H = x.extent(2), W = x.extent(3);
    if (mode == ResampleMode::DownsampleStride2) {
        if (H % 2 || W % 2) throw ShapeError("downsample-stride2 needs even spatial extents");
        const std::size_t Ho = H / 2, Wo = W / 2;
        std::vector<T> out(B * C * Ho * Wo);
        const auto& xv = x.values();
        for (std::size_t bc = 0; bc < B * C; ++bc)
            for (std::size_t y = 0; y < Ho; ++y)
                for (std::size_t xw = 0; xw < Wo; ++xw)
                    out[(bc * Ho + y) * Wo + xw] = xv[(bc * H + 2 * y) * W + 2 * xw];
        auto xn = x.node();
        return make_op<T>(
            Shape{B, C, Ho, Wo}, std::move(out), {x},
            [xn, B, C, H, W, Ho, Wo](Node<T>& self) {
                xn->ensure_grad();
                for (std::size_t bc = 0; bc < B * C; ++bc)
                    for (std::size_t y = 0; y < Ho; ++y)
                        for (std::size_t xw = 0; xw < Wo; ++xw)
                            xn->grad[(bc * H + 2 * y) * W + 2 * xw] +=
                                self.grad[(bc * Ho + y) * Wo + xw];
            },
            "downsample2");
    }
    const std::size_t Ho = H * 2, Wo = W * 2;
    std::vector<T> out(B * C * Ho * Wo);
    const auto& xv = x.values();
    for (std::size_t bc = 0; bc < B * C; ++bc)
        for (std::size_t y = 0; y < Ho; ++y)
            for (std::size_t xw = 0; xw < Wo; ++xw)
                out[(bc * Ho + y) * Wo + xw] = xv[(bc * H + y / 2) * W + xw / 2];
    auto xn = x.node();
    return make_op<T>(
        Shape{B, C, Ho, Wo}, std::move(out), {x},
        [xn, B, C, H, W, Ho, Wo](Node<T>& self) {
            xn->ensure_grad();
            for (std::size_t bc = 0; bc < B * C; ++bc)
                for (std::size_t y = 0; y < Ho; ++y)
                    for (std::size_t xw = 0; xw < Wo; ++xw)
                        xn->grad[(bc * H + y / 2) * W + xw / 2] +=
                            self.grad[(bc * Ho + y) * Wo + xw];
        },
        "upsample_nearest2");
}

// 2x transposed convolution, kernel 2, stride 2: w [Cin,Cout,2,2].
template <class T>
inline Tensor<T> conv_transpose2x2(const Tensor<T>& x, const Tensor<T>& w) {
    if (x.rank() != 4 || w.rank() != 4 || w.extent(2) != 2 || w.extent(3) != 2)
        throw ShapeError("conv_transpose2x2 expects [B,Cin,H,W] and [Cin,Cout,2,2]");
    const std::size_t B = x.extent(0), Cin = x.extent(1), H = x.extent(2), W = x.extent(3);
    if (w.extent(0) != Cin) throw ShapeError("conv_transpose2x2 channel mismatch");
    const std::size_t Cout = w.extent(1);
    const std::size_t Ho = H * 2, Wo = W * 2;
    std::vector<T> out(B * Cout * Ho * Wo, T(0));
    const auto& xv = x.values();
    const auto& wv = w.values();
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t ci = 0; ci < Cin; ++ci)
            for (std::size_t y = 0; y < H; ++y)
                for (std::size_t xw = 0; xw < W; ++xw) {
                    const T v = xv[((b * Cin + ci) * H + y) * W + xw];
                    for (std::size_t co = 0; co < Cout; ++co)
                        for (std::size_t ky = 0; ky < 2; ++ky)
                            for (std::size_t kx = 0; kx < 2; ++kx)
                                out[((b * Cout + co) * Ho + 2 * y + ky) * Wo + 2 * xw + kx] +=
                                    v * wv[((ci * Cout + co) * 2 + ky) * 2 + kx];
                }
    auto xn = x.node();
    auto wn = w.node();
    return make_op<T>(
        Shape{B, Cout, Ho, Wo}, std::move(out), {x, w},
        [xn, wn, B, Cin, Cout, H, W, Ho, Wo](Node<T>& self) {
            if (xn->requires_grad) xn->ensure_grad();
            if (wn->requires_grad) wn->ensure_grad();
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t ci = 0; ci < Cin; ++ci)
                    for (std::size_t y = 0; y < H; ++y)
                        for (std::size_t xw = 0; xw < W; ++xw) {
                            const std::size_t xi = ((b * Cin + ci) * H + y) * W + xw;
                            for (std::size_t co = 0; co < Cout; ++co)
                                for (std::size_t ky = 0; ky < 2; ++ky)
                                    for (std::size_t kx = 0; kx < 2; ++kx) {
                                        const T g = self.grad[((b * Cout + co) * Ho + 2 * y + ky) *
                                                                  Wo +
                                                              2 * xw + kx];
                                        const std::size_t wi = ((ci * Cout + co) * 2 + ky) * 2 + kx;
                                        if (xn->requires_grad)
                                            xn->grad[xi] += g * wn->value[wi];
                                        if (wn->requires_grad)
                                            wn->grad[wi] += g * xn->value[xi];
                                    }
                        }
        },
        "conv_transpose2x2");
}

// Symmetric zero padding / cropping on the two trailing spatial axes.
template <class T>
inline Tensor<T> pad2d(const Tensor<T>& x, std::size_t top, std::size_t bottom, std::size_t left,
                       std::size_t right) {
    if (x.rank() != 4) throw ShapeError("pad2d expects [B,C,H,W]");
    const std::size_t B = x.extent(0), C = x.extent(1), H = x.extent(2), W = x.extent(3);
    const std::size_t Ho = H + top + bottom, Wo = W + left + right;
    std::vector<T> out(B * C * Ho * Wo, T(0));
    const auto& xv = x.values();
    for (std::size_t bc = 0; bc < B * C; ++bc)
        for (std::size_t y = 0; y < H; ++y)
            std::memcpy(&out[(bc * Ho + y + top) * Wo + left], &xv[(bc * H + y) * W],
                        W * sizeof(T));
    auto xn = x.node();
    return make_op<T>(
        Shape{B, C, Ho, Wo}, std::move(out), {x},
        [xn, B, C, H, W, Ho, Wo, top, left](Node<T>& self) {
            xn->ensure_grad();
            for (std::size_t bc = 0; bc < B * C; ++bc)
                for (std::size_t y = 0; y < H; ++y)
                    for (std::size_t xw = 0; xw < W; ++xw)
                        xn->grad[(bc * H + y) * W + xw] +=
                            self.grad[(bc * Ho + y + top) * Wo + xw + left];
        },
        "pad2d");
}

template <class T>
inline Tensor<T> crop2d(const Tensor<T>& x, std::size_t top, std::size_t left, std::size_t Ho,
                        std::size_t Wo) {
    if (x.rank() != 4) throw ShapeError("crop2d expects [B,C,H,W]");
    const std::size_t B = x.extent(0), C = x.extent(1), H = x.extent(2), W = x.extent(3);
    if (top + Ho > H || left + Wo > W) throw ShapeError("crop2d out of range");
    std::vector<T> out(B * C * Ho * Wo);
    const auto& xv = x.values();
    for (std::size_t bc = 0; bc < B * C; ++bc)
        for (std::size_t y = 0; y < Ho; ++y)
            std::memcpy(&out[(bc * Ho + y) * Wo], &xv[(bc * H + y + top) * W + left],
                        Wo * sizeof(T));
    auto xn = x.node();
    return make_op<T>(
        Shape{B, C, Ho, Wo}, std::move(out), {x},
        [xn, B, C, H, W, Ho, Wo, top, left](Node<T>& self) {
            xn->ensure_grad();
            for (std::size_t bc = 0; bc < B * C; ++bc)
                for (std::size_t y = 0; y < Ho; ++y)
                    for (std::size_t xw = 0; xw < Wo; ++xw)
                        xn->grad[(bc * H + y + top) * W + xw + left] +=
                            self.grad[(bc * Ho + y) * Wo + xw];
        },
        "crop2d");
}

// Contiguous slice along the last axis.
template <class T>
inline Tensor<T> slice_last(const Tensor<T>& x, std::size_t start, std::size_t len) {
    const std::size_t C = x.extent(x.rank() - 1);
    if (start + len > C) throw ShapeError("slice_last out of range");
    const std::size_t outer = x.numel() / C;
    Shape out_shape = x.shape();
    out_shape.back() = len;
    std::vector<T> out(outer * len);
    const auto& xv = x.values();
    for (std::size_t o = 0; o < outer; ++o)
        std::memcpy(&out[o * len], &xv[o * C + start], len * sizeof(T));
    auto xn = x.node();
    return make_op<T>(
        out_shape, std::move(out), {x},
        [xn, outer, len, C, start](Node<T>& self) {
            xn->ensure_grad();
            for (std::size_t o = 0; o < outer; ++o)
                for (std::size_t i = 0; i < len; ++i)
                    xn->grad[o * C + start + i] += self.grad[o * len + i];
        },
        "slice_last");
}

// out[i] = table[index[i]]; backward scatter-adds. Used for relative
// position bias lookup in window attention.
template <class T>
inline Tensor<T> gather(const Tensor<T>& table, const std::vector<std::size_t>& index,
                        const Shape& out_shape) {
    if (shape_numel(out_shape) != index.size()) throw ShapeError("gather index/shape mismatch");
    std::vector<T> out(index.size());
    const auto& tv = table.values();
    for (std::size_t i = 0; i < index.size(); ++i) {
        if (index[i] >= tv.size()) throw ShapeError("gather index out of range");
        out[i] = tv[index[i]];
    }
    auto tn = table.node();
    return make_op<T>(
        out_shape, std::move(out), {table},
        [tn, index](Node<T>& self) {
            tn->ensure_grad();
            for (std::size_t i = 0; i < index.size(); ++i)
                tn->grad[index[i]] += self.grad[i];
        },
        "gather");
}

}  // namespace stenoseg

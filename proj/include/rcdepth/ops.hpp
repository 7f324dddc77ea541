#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <utility>
#include <vector>

#include "rcdepth/common.hpp"
#include "rcdepth/tape.hpp"
#include "rcdepth/tensor.hpp"

// Differentiable primitives. Every op returns a new tape node whose backward
// closure accumulates adjoints into its parents. Reductions whose summation
// order would otherwise depend on point storage order (attention over a key
// set, scatter collisions) accumulate in a canonical content-derived order so
// point-set ops stay bit-exactly permutation-equivariant.
namespace rcdepth::nn {

enum class Pad { same, valid };

namespace detail {

inline void check_same_tape(const Var& a, const Var& b, const char* what) {
    if (a.tape != b.tape) throw StateError(std::string(what) + ": vars from different tapes");
}

inline void accumulate(Tensor& dst, const Tensor& src) {
    for (std::size_t i = 0; i < dst.numel(); ++i) dst[i] += src[i];
}

// Indices 0..M-1 ordered lexicographically by row content of `a`, ties by
// row content of `b`. Rows that compare equal are identical, so any order
// among them yields the same floating-point sum.
inline std::vector<std::size_t> canonical_row_order(const Tensor& a, const Tensor& b) {
    const std::size_t m = a.extent(0);
    const std::size_t ca = a.extent(1);
    const std::size_t cb = b.empty() ? 0 : b.extent(1);
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
        for (std::size_t c = 0; c < ca; ++c) {
            if (a.at(i, c) < a.at(j, c)) return true;
            if (a.at(i, c) > a.at(j, c)) return false;
        }
        for (std::size_t c = 0; c < cb; ++c) {
            if (b.at(i, c) < b.at(j, c)) return true;
            if (b.at(i, c) > b.at(j, c)) return false;
        }
        return false;
    });
    return order;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic
// ---------------------------------------------------------------------------

inline Var add(Var a, Var b) {
    detail::check_same_tape(a, b, "add");
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (!av.same_shape(bv)) throw ShapeError("add: shape mismatch " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
    Tensor out = av;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += bv[i];
    return a.tape->make(std::move(out), [a, b](Tape& t, const Tensor& g) {
        detail::accumulate(t.grad_slot(a.id), g);
        detail::accumulate(t.grad_slot(b.id), g);
    });
}

inline Var sub(Var a, Var b) {
    detail::check_same_tape(a, b, "sub");
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (!av.same_shape(bv)) throw ShapeError("sub: shape mismatch");
    Tensor out = av;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= bv[i];
    return a.tape->make(std::move(out), [a, b](Tape& t, const Tensor& g) {
        detail::accumulate(t.grad_slot(a.id), g);
        Tensor& gb = t.grad_slot(b.id);
        for (std::size_t i = 0; i < gb.numel(); ++i) gb[i] -= g[i];
    });
}

inline Var mul(Var a, Var b) {
    detail::check_same_tape(a, b, "mul");
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (!av.same_shape(bv)) throw ShapeError("mul: shape mismatch");
    Tensor out = av;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= bv[i];
    return a.tape->make(std::move(out), [a, b](Tape& t, const Tensor& g) {
        const Tensor& av = t.value(a.id);
        const Tensor& bv = t.value(b.id);
        Tensor& ga = t.grad_slot(a.id);
        Tensor& gb = t.grad_slot(b.id);
        for (std::size_t i = 0; i < g.numel(); ++i) {
            ga[i] += g[i] * bv[i];
            gb[i] += g[i] * av[i];
        }
    });
}

inline Var scale(Var a, double s) {
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= s;
    return a.tape->make(std::move(out), [a, s](Tape& t, const Tensor& g) {
        Tensor& ga = t.grad_slot(a.id);
        for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += s * g[i];
    });
}

// Elementwise product with a constant tensor (masking).
inline Var mul_const(Var a, Tensor m) {
    const Tensor& av = a.value();
    if (!av.same_shape(m)) throw ShapeError("mul_const: shape mismatch");
    Tensor out = av;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= m[i];
    return a.tape->make(std::move(out), [a, m = std::move(m)](Tape& t, const Tensor& g) {
        Tensor& ga = t.grad_slot(a.id);
        for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += g[i] * m[i];
    });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

inline Var sum(Var a) {
    const Tensor& av = a.value();
    double s = 0.0;
    for (std::size_t i = 0; i < av.numel(); ++i) s += av[i];
    return a.tape->make(Tensor::scalar(s), [a](Tape& t, const Tensor& g) {
        Tensor& ga = t.grad_slot(a.id);
        for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += g[0];
    });
}

inline Var mean(Var a) {
    const std::size_t n = a.value().numel();
    if (n == 0) throw PreconditionError("mean of empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(n));
}

// ---------------------------------------------------------------------------
// Linear maps
// ---------------------------------------------------------------------------

inline Var matmul(Var a, Var b) {
    detail::check_same_tape(a, b, "matmul");
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    require_rank(av, 2, "matmul lhs");
    require_rank(bv, 2, "matmul rhs");
    const std::size_t n = av.extent(0), k = av.extent(1), m = bv.extent(1);
    if (bv.extent(0) != k) throw ShapeError("matmul: inner extents differ: " + shape_str(av.shape()) + " * " + shape_str(bv.shape()));
    Tensor out({n, m});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t l = 0; l < k; ++l) {
            const double x = av.at(i, l);
            for (std::size_t j = 0; j < m; ++j) out.at(i, j) += x * bv.at(l, j);
        }
    return a.tape->make(std::move(out), [a, b, n, k, m](Tape& t, const Tensor& g) {
        const Tensor& av = t.value(a.id);
        const Tensor& bv = t.value(b.id);
        Tensor& ga = t.grad_slot(a.id);
        Tensor& gb = t.grad_slot(b.id);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j) {
                const double gij = g.at(i, j);
                for (std::size_t l = 0; l < k; ++l) {
                    ga.at(i, l) += gij * bv.at(l, j);
                    gb.at(l, j) += gij * av.at(i, l);
                }
            }
    });
}

// y = x W + b, row-wise.
inline Var linear(Var x, Var w, Var b) {
    detail::check_same_tape(x, w, "linear");
    detail::check_same_tape(x, b, "linear");
    const Tensor& xv = x.value();
    const Tensor& wv = w.value();
    const Tensor& bv = b.value();
    require_rank(xv, 2, "linear input");
    require_rank(wv, 2, "linear weights");
    const std::size_t n = xv.extent(0), cin = xv.extent(1), cout = wv.extent(1);
    if (wv.extent(0) != cin)
        throw ShapeError("linear: input width " + std::to_string(cin) + " vs weight rows " + std::to_string(wv.extent(0)));
    if (bv.numel() != cout) throw ShapeError("linear: bias length mismatch");
    Tensor out({n, cout});
    for (std::size_t i = 0; i < n; ++i) {
        double* orow = &out.at(i, 0);
        for (std::size_t j = 0; j < cout; ++j) orow[j] = bv[j];
        for (std::size_t l = 0; l < cin; ++l) {
            const double xv_il = xv.at(i, l);
            const double* wrow = &wv.at(l, 0);
            for (std::size_t j = 0; j < cout; ++j) orow[j] += xv_il * wrow[j];
        }
    }
    return x.tape->make(std::move(out), [x, w, b, n, cin, cout](Tape& t, const Tensor& g) {
        const Tensor& xv = t.value(x.id);
        const Tensor& wv = t.value(w.id);
        Tensor& gx = t.grad_slot(x.id);
        Tensor& gw = t.grad_slot(w.id);
        Tensor& gb = t.grad_slot(b.id);
        for (std::size_t i = 0; i < n; ++i) {
            const double* grow = &g.at(i, 0);
            for (std::size_t j = 0; j < cout; ++j) gb[j] += grow[j];
            for (std::size_t l = 0; l < cin; ++l) {
                const double* wrow = &wv.at(l, 0);
                double acc = 0.0;
                for (std::size_t j = 0; j < cout; ++j) acc += grow[j] * wrow[j];
                gx.at(i, l) += acc;
                double* gwrow = &gw.at(l, 0);
                const double xv_il = xv.at(i, l);
                for (std::size_t j = 0; j < cout; ++j) gwrow[j] += xv_il * grow[j];
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

inline Var leaky_relu(Var a, double slope) {
    const Tensor& av = a.value();
    Tensor out = av;
    for (std::size_t i = 0; i < out.numel(); ++i)
        if (out[i] <= 0.0) out[i] *= slope;
    return a.tape->make(std::move(out), [a, slope](Tape& t, const Tensor& g) {
        const Tensor& av = t.value(a.id);
        Tensor& ga = t.grad_slot(a.id);
        for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += g[i] * (av[i] > 0.0 ? 1.0 : slope);
    });
}

inline double sigmoid_scalar(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline Var sigmoid(Var a) {
    const Tensor& av = a.value();
    Tensor out = av;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = sigmoid_scalar(out[i]);
    return a.tape->make(std::move(out), [a](Tape& t, const Tensor& g) {
        Tensor& ga = t.grad_slot(a.id);
        const Tensor& av = t.value(a.id);
        for (std::size_t i = 0; i < ga.numel(); ++i) {
            const double s = sigmoid_scalar(av[i]);
            ga[i] += g[i] * s * (1.0 - s);
        }
    });
}

inline double softplus_scalar(double x) { return std::log1p(std::exp(-std::abs(x))) + std::max(x, 0.0); }

inline Var softplus(Var a) {
    const Tensor& av = a.value();
    Tensor out = av;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = softplus_scalar(out[i]);
    return a.tape->make(std::move(out), [a](Tape& t, const Tensor& g) {
        Tensor& ga = t.grad_slot(a.id);
        const Tensor& av = t.value(a.id);
        for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += g[i] * sigmoid_scalar(av[i]);
    });
}

inline Var abs(Var a) {
    const Tensor& av = a.value();
    Tensor out = av;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::abs(out[i]);
    return a.tape->make(std::move(out), [a](Tape& t, const Tensor& g) {
        const Tensor& av = t.value(a.id);
        Tensor& ga = t.grad_slot(a.id);
        for (std::size_t i = 0; i < ga.numel(); ++i)
            ga[i] += g[i] * (av[i] > 0.0 ? 1.0 : (av[i] < 0.0 ? -1.0 : 0.0));
    });
}

// ---------------------------------------------------------------------------
// 2D convolution (cross-correlation), images stored H x W x C
// ---------------------------------------------------------------------------

struct Conv2dDims {
    std::size_t h, w, cin, kh, kw, cout, oh, ow;
    std::size_t ph, pw;  // top/left padding
    std::size_t stride;
};

inline Conv2dDims conv2d_dims(const Tensor& x, const Tensor& kernel, std::size_t stride, Pad pad) {
    require_rank(x, 3, "conv2d input");
    require_rank(kernel, 4, "conv2d kernel");
    Conv2dDims d{};
    d.h = x.extent(0);
    d.w = x.extent(1);
    d.cin = x.extent(2);
    d.kh = kernel.extent(0);
    d.kw = kernel.extent(1);
    d.cout = kernel.extent(3);
    d.stride = stride;
    if (kernel.extent(2) != d.cin)
        throw ShapeError("conv2d: kernel cin " + std::to_string(kernel.extent(2)) + " vs input " + std::to_string(d.cin));
    if (stride == 0) throw ConfigError("conv2d: stride must be positive");
    if (pad == Pad::same) {
        if (d.kh % 2 == 0 || d.kw % 2 == 0) throw PreconditionError("conv2d: same padding requires odd kernel");
        d.ph = (d.kh - 1) / 2;
        d.pw = (d.kw - 1) / 2;
    } else {
        d.ph = d.pw = 0;
    }
    const std::ptrdiff_t oh = static_cast<std::ptrdiff_t>(d.h + 2 * d.ph - d.kh) / static_cast<std::ptrdiff_t>(stride) + 1;
    const std::ptrdiff_t ow = static_cast<std::ptrdiff_t>(d.w + 2 * d.pw - d.kw) / static_cast<std::ptrdiff_t>(stride) + 1;
    if (d.h + 2 * d.ph < d.kh || d.w + 2 * d.pw < d.kw || oh < 1 || ow < 1)
        throw ShapeError("conv2d: kernel larger than padded input");
    d.oh = static_cast<std::size_t>(oh);
    d.ow = static_cast<std::size_t>(ow);
    return d;
}

inline Tensor conv2d_value(const Tensor& x, const Tensor& kernel, std::size_t stride, Pad pad) {
    const Conv2dDims d = conv2d_dims(x, kernel, stride, pad);
    Tensor out({d.oh, d.ow, d.cout});
    for (std::size_t yo = 0; yo < d.oh; ++yo)
        for (std::size_t xo = 0; xo < d.ow; ++xo) {
            double* orow = &out.at(yo, xo, 0);
            for (std::size_t ky = 0; ky < d.kh; ++ky) {
                const std::ptrdiff_t yy = static_cast<std::ptrdiff_t>(yo * d.stride + ky) - static_cast<std::ptrdiff_t>(d.ph);
                if (yy < 0 || yy >= static_cast<std::ptrdiff_t>(d.h)) continue;
                for (std::size_t kx = 0; kx < d.kw; ++kx) {
                    const std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(xo * d.stride + kx) - static_cast<std::ptrdiff_t>(d.pw);
                    if (xx < 0 || xx >= static_cast<std::ptrdiff_t>(d.w)) continue;
                    const double* xrow = &x.at(static_cast<std::size_t>(yy), static_cast<std::size_t>(xx), 0);
                    const double* krow = &kernel.at(ky, kx, 0, 0);
                    for (std::size_t ci = 0; ci < d.cin; ++ci) {
                        const double xv = xrow[ci];
                        const double* kk = krow + ci * d.cout;
                        for (std::size_t co = 0; co < d.cout; ++co) orow[co] += xv * kk[co];
                    }
                }
            }
        }
    return out;
}

inline Var conv2d(Var x, Var kernel, std::size_t stride, Pad pad) {
    detail::check_same_tape(x, kernel, "conv2d");
    Tensor out = conv2d_value(x.value(), kernel.value(), stride, pad);
    const Conv2dDims d = conv2d_dims(x.value(), kernel.value(), stride, pad);
    return x.tape->make(std::move(out), [x, kernel, d](Tape& t, const Tensor& g) {
        const Tensor& xv = t.value(x.id);
        const Tensor& kv = t.value(kernel.id);
        Tensor& gx = t.grad_slot(x.id);
        Tensor& gk = t.grad_slot(kernel.id);
        for (std::size_t yo = 0; yo < d.oh; ++yo)
            for (std::size_t xo = 0; xo < d.ow; ++xo) {
                const double* grow = &g.at(yo, xo, 0);
                for (std::size_t ky = 0; ky < d.kh; ++ky) {
                    const std::ptrdiff_t yy = static_cast<std::ptrdiff_t>(yo * d.stride + ky) - static_cast<std::ptrdiff_t>(d.ph);
                    if (yy < 0 || yy >= static_cast<std::ptrdiff_t>(d.h)) continue;
                    for (std::size_t kx = 0; kx < d.kw; ++kx) {
                        const std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(xo * d.stride + kx) - static_cast<std::ptrdiff_t>(d.pw);
                        if (xx < 0 || xx >= static_cast<std::ptrdiff_t>(d.w)) continue;
                        const double* xrow = &xv.at(static_cast<std::size_t>(yy), static_cast<std::size_t>(xx), 0);
                        double* gxrow = &gx.at(static_cast<std::size_t>(yy), static_cast<std::size_t>(xx), 0);
                        const double* krow = &kv.at(ky, kx, 0, 0);
                        double* gkrow = &gk.at(ky, kx, 0, 0);
                        for (std::size_t ci = 0; ci < d.cin; ++ci) {
                            const double* kk = krow + ci * d.cout;
                            double* gkk = gkrow + ci * d.cout;
                            const double xv_c = xrow[ci];
                            double acc = 0.0;
                            for (std::size_t co = 0; co < d.cout; ++co) {
                                acc += grow[co] * kk[co];
                                gkk[co] += xv_c * grow[co];
                            }
                            gxrow[ci] += acc;
                        }
                    }
                }
            }
    });
}

inline Var add_channel_bias(Var x, Var b) {
    detail::check_same_tape(x, b, "add_channel_bias");
    const Tensor& xv = x.value();
    require_rank(xv, 3, "add_channel_bias input");
    const std::size_t c = xv.extent(2);
    if (b.value().numel() != c) throw ShapeError("add_channel_bias: bias length mismatch");
    Tensor out = xv;
    const Tensor& bv = b.value();
    const std::size_t hw = xv.extent(0) * xv.extent(1);
    for (std::size_t p = 0; p < hw; ++p)
        for (std::size_t ci = 0; ci < c; ++ci) out[p * c + ci] += bv[ci];
    return x.tape->make(std::move(out), [x, b, hw, c](Tape& t, const Tensor& g) {
        detail::accumulate(t.grad_slot(x.id), g);
        Tensor& gb = t.grad_slot(b.id);
        for (std::size_t p = 0; p < hw; ++p)
            for (std::size_t ci = 0; ci < c; ++ci) gb[ci] += g[p * c + ci];
    });
}

// Per-channel y = gamma * x + beta (the per-channel affine used instead of
// batch norm).
inline Var channel_affine(Var x, Var gamma, Var beta) {
    detail::check_same_tape(x, gamma, "channel_affine");
    const Tensor& xv = x.value();
    require_rank(xv, 3, "channel_affine input");
    const std::size_t c = xv.extent(2);
    if (gamma.value().numel() != c || beta.value().numel() != c) throw ShapeError("channel_affine: parameter length mismatch");
    Tensor out = xv;
    const Tensor& gv = gamma.value();
    const Tensor& bv = beta.value();
    const std::size_t hw = xv.extent(0) * xv.extent(1);
    for (std::size_t p = 0; p < hw; ++p)
        for (std::size_t ci = 0; ci < c; ++ci) out[p * c + ci] = out[p * c + ci] * gv[ci] + bv[ci];
    return x.tape->make(std::move(out), [x, gamma, beta, hw, c](Tape& t, const Tensor& g) {
        const Tensor& xv = t.value(x.id);
        const Tensor& gv = t.value(gamma.id);
        Tensor& gx = t.grad_slot(x.id);
        Tensor& gg = t.grad_slot(gamma.id);
        Tensor& gb = t.grad_slot(beta.id);
        for (std::size_t p = 0; p < hw; ++p)
            for (std::size_t ci = 0; ci < c; ++ci) {
                const double gi = g[p * c + ci];
                gx[p * c + ci] += gi * gv[ci];
                gg[ci] += gi * xv[p * c + ci];
                gb[ci] += gi;
            }
    });
}

// ---------------------------------------------------------------------------
// Normalized sparse convolution (stride 1, same padding)
//   out(u) = sum_w mask*x*k / (sum_w mask + eps) where the dilated mask is
//   set, else 0. The observation mask is data, not a differentiable input.
// ---------------------------------------------------------------------------

inline constexpr double kSparseConvEps = 1e-8;

inline Tensor dilate_mask(const Tensor& mask, std::size_t k) {
    require_rank(mask, 2, "dilate_mask");
    const std::size_t h = mask.extent(0), w = mask.extent(1), r = (k - 1) / 2;
    Tensor out({h, w});
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            double m = 0.0;
            for (std::size_t ky = 0; ky < k && m == 0.0; ++ky) {
                const std::ptrdiff_t yy = static_cast<std::ptrdiff_t>(y + ky) - static_cast<std::ptrdiff_t>(r);
                if (yy < 0 || yy >= static_cast<std::ptrdiff_t>(h)) continue;
                for (std::size_t kx = 0; kx < k; ++kx) {
                    const std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(x + kx) - static_cast<std::ptrdiff_t>(r);
                    if (xx < 0 || xx >= static_cast<std::ptrdiff_t>(w)) continue;
                    if (mask.at(static_cast<std::size_t>(yy), static_cast<std::size_t>(xx)) != 0.0) {
                        m = 1.0;
                        break;
                    }
                }
            }
            out.at(y, x) = m;
        }
    return out;
}

inline Var sparse_conv2d(Var x, Var kernel, const Tensor& mask) {
    detail::check_same_tape(x, kernel, "sparse_conv2d");
    const Tensor& xv = x.value();
    const Tensor& kv = kernel.value();
    require_rank(xv, 3, "sparse_conv2d input");
    require_rank(kv, 4, "sparse_conv2d kernel");
    require_shape(mask, {xv.extent(0), xv.extent(1)}, "sparse_conv2d mask");
    const std::size_t h = xv.extent(0), w = xv.extent(1), cin = xv.extent(2);
    const std::size_t kh = kv.extent(0), kw = kv.extent(1), cout = kv.extent(3);
    if (kv.extent(2) != cin) throw ShapeError("sparse_conv2d: channel mismatch");
    if (kh % 2 == 0 || kw % 2 == 0) throw PreconditionError("sparse_conv2d: kernel must be odd");
    const std::size_t rh = (kh - 1) / 2, rw = (kw - 1) / 2;

    Tensor out({h, w, cout});
    Tensor denom({h, w});
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t xo = 0; xo < w; ++xo) {
            double cnt = 0.0;
            double* orow = &out.at(y, xo, 0);
            for (std::size_t ky = 0; ky < kh; ++ky) {
                const std::ptrdiff_t yy = static_cast<std::ptrdiff_t>(y + ky) - static_cast<std::ptrdiff_t>(rh);
                if (yy < 0 || yy >= static_cast<std::ptrdiff_t>(h)) continue;
                for (std::size_t kx = 0; kx < kw; ++kx) {
                    const std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(xo + kx) - static_cast<std::ptrdiff_t>(rw);
                    if (xx < 0 || xx >= static_cast<std::ptrdiff_t>(w)) continue;
                    if (mask.at(static_cast<std::size_t>(yy), static_cast<std::size_t>(xx)) == 0.0) continue;
                    cnt += 1.0;
                    const double* xrow = &xv.at(static_cast<std::size_t>(yy), static_cast<std::size_t>(xx), 0);
                    const double* krow = &kv.at(ky, kx, 0, 0);
                    for (std::size_t ci = 0; ci < cin; ++ci) {
                        const double xc = xrow[ci];
                        const double* kk = krow + ci * cout;
                        for (std::size_t co = 0; co < cout; ++co) orow[co] += xc * kk[co];
                    }
                }
            }
            denom.at(y, xo) = cnt;
            if (cnt > 0.0) {
                const double inv = 1.0 / (cnt + kSparseConvEps);
                for (std::size_t co = 0; co < cout; ++co) orow[co] *= inv;
            } else {
                for (std::size_t co = 0; co < cout; ++co) orow[co] = 0.0;
            }
        }

    return x.tape->make(std::move(out),
                        [x, kernel, mask, denom = std::move(denom), h, w, cin, kh, kw, cout, rh, rw](Tape& t, const Tensor& g) {
                            const Tensor& xv = t.value(x.id);
                            const Tensor& kv = t.value(kernel.id);
                            Tensor& gx = t.grad_slot(x.id);
                            Tensor& gk = t.grad_slot(kernel.id);
                            for (std::size_t y = 0; y < h; ++y)
                                for (std::size_t xo = 0; xo < w; ++xo) {
                                    const double cnt = denom.at(y, xo);
                                    if (cnt == 0.0) continue;
                                    const double inv = 1.0 / (cnt + kSparseConvEps);
                                    const double* grow = &g.at(y, xo, 0);
                                    for (std::size_t ky = 0; ky < kh; ++ky) {
                                        const std::ptrdiff_t yy = static_cast<std::ptrdiff_t>(y + ky) - static_cast<std::ptrdiff_t>(rh);
                                        if (yy < 0 || yy >= static_cast<std::ptrdiff_t>(h)) continue;
                                        for (std::size_t kx = 0; kx < kw; ++kx) {
                                            const std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(xo + kx) - static_cast<std::ptrdiff_t>(rw);
                                            if (xx < 0 || xx >= static_cast<std::ptrdiff_t>(w)) continue;
                                            if (mask.at(static_cast<std::size_t>(yy), static_cast<std::size_t>(xx)) == 0.0) continue;
                                            const double* xrow = &xv.at(static_cast<std::size_t>(yy), static_cast<std::size_t>(xx), 0);
                                            double* gxrow = &gx.at(static_cast<std::size_t>(yy), static_cast<std::size_t>(xx), 0);
                                            const double* krow = &kv.at(ky, kx, 0, 0);
                                            double* gkrow = &gk.at(ky, kx, 0, 0);
                                            for (std::size_t ci = 0; ci < cin; ++ci) {
                                                const double* kk = krow + ci * cout;
                                                double* gkk = gkrow + ci * cout;
                                                const double xc = xrow[ci];
                                                double acc = 0.0;
                                                for (std::size_t co = 0; co < cout; ++co) {
                                                    const double gw = grow[co] * inv;
                                                    acc += gw * kk[co];
                                                    gkk[co] += gw * xc;
                                                }
                                                gxrow[ci] += acc;
                                            }
                                        }
                                    }
                                }
                        });
}

// ---------------------------------------------------------------------------
// Transposed 1D convolution over the point axis: n x C -> (tau*n) x C'.
// Defined as zero-insertion by factor tau followed by a same-padded
// cross-correlation with an odd kernel (K x Cin x Cout).
// ---------------------------------------------------------------------------

inline Var transposed_conv1d_points(Var f, Var kernel, std::size_t tau) {
    detail::check_same_tape(f, kernel, "transposed_conv1d_points");
    if (tau < 2) throw ConfigError("transposed_conv1d_points: rate must be >= 2");
    const Tensor& fv = f.value();
    const Tensor& kv = kernel.value();
    require_rank(fv, 2, "transposed_conv1d input");
    require_rank(kv, 3, "transposed_conv1d kernel");
    const std::size_t n = fv.extent(0), cin = fv.extent(1);
    if (n < 1) throw PreconditionError("transposed_conv1d_points: empty input");
    const std::size_t kt = kv.extent(0), cout = kv.extent(2);
    if (kv.extent(1) != cin) throw ShapeError("transposed_conv1d: channel mismatch");
    if (kt % 2 == 0) throw PreconditionError("transposed_conv1d: kernel must be odd");
    const std::size_t out_n = tau * n;
    const std::ptrdiff_t r = static_cast<std::ptrdiff_t>((kt - 1) / 2);

    Tensor out({out_n, cout});
    for (std::size_t s = 0; s < out_n; ++s) {
        double* orow = &out.at(s, 0);
        for (std::size_t kk = 0; kk < kt; ++kk) {
            const std::ptrdiff_t j = static_cast<std::ptrdiff_t>(s + kk) - r;
            if (j < 0 || j >= static_cast<std::ptrdiff_t>(out_n)) continue;
            if (j % static_cast<std::ptrdiff_t>(tau) != 0) continue;
            const std::size_t src = static_cast<std::size_t>(j) / tau;
            const double* frow = &fv.at(src, 0);
            const double* krow = &kv.data()[(kk * cin) * cout];
            for (std::size_t ci = 0; ci < cin; ++ci) {
                const double xv = frow[ci];
                for (std::size_t co = 0; co < cout; ++co) orow[co] += xv * krow[ci * cout + co];
            }
        }
    }
    return f.tape->make(std::move(out), [f, kernel, tau, n, cin, kt, cout, r, out_n](Tape& t, const Tensor& g) {
        const Tensor& fv = t.value(f.id);
        const Tensor& kv = t.value(kernel.id);
        Tensor& gf = t.grad_slot(f.id);
        Tensor& gk = t.grad_slot(kernel.id);
        for (std::size_t s = 0; s < out_n; ++s) {
            const double* grow = &g.at(s, 0);
            for (std::size_t kk = 0; kk < kt; ++kk) {
                const std::ptrdiff_t j = static_cast<std::ptrdiff_t>(s + kk) - r;
                if (j < 0 || j >= static_cast<std::ptrdiff_t>(out_n)) continue;
                if (j % static_cast<std::ptrdiff_t>(tau) != 0) continue;
                const std::size_t src = static_cast<std::size_t>(j) / tau;
                const double* frow = &fv.at(src, 0);
                double* gfrow = &gf.at(src, 0);
                for (std::size_t ci = 0; ci < cin; ++ci) {
                    const double* krow = &kv.data()[(kk * cin + ci) * cout];
                    double* gkrow = &gk.data()[(kk * cin + ci) * cout];
                    double acc = 0.0;
                    for (std::size_t co = 0; co < cout; ++co) {
                        acc += grow[co] * krow[co];
                        gkrow[co] += grow[co] * frow[ci];
                    }
                    gfrow[ci] += acc;
                }
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Row plumbing
// ---------------------------------------------------------------------------

inline Var gather_rows(Var x, std::vector<std::size_t> idx) {
    const Tensor& xv = x.value();
    require_rank(xv, 2, "gather_rows input");
    const std::size_t c = xv.extent(1);
    for (std::size_t i : idx)
        if (i >= xv.extent(0)) throw Error("gather_rows: index out of range");
    Tensor out({idx.size(), c});
    for (std::size_t r = 0; r < idx.size(); ++r)
        for (std::size_t j = 0; j < c; ++j) out.at(r, j) = xv.at(idx[r], j);
    return x.tape->make(std::move(out), [x, idx = std::move(idx), c](Tape& t, const Tensor& g) {
        Tensor& gx = t.grad_slot(x.id);
        for (std::size_t r = 0; r < idx.size(); ++r)
            for (std::size_t j = 0; j < c; ++j) gx.at(idx[r], j) += g.at(r, j);
    });
}

// Each input row repeated `factor` times, block order: row i occupies output
// rows [i*factor, (i+1)*factor).
inline Var repeat_rows(Var x, std::size_t factor) {
    const Tensor& xv = x.value();
    require_rank(xv, 2, "repeat_rows input");
    const std::size_t n = xv.extent(0), c = xv.extent(1);
    Tensor out({n * factor, c});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t r = 0; r < factor; ++r)
            for (std::size_t j = 0; j < c; ++j) out.at(i * factor + r, j) = xv.at(i, j);
    return x.tape->make(std::move(out), [x, n, c, factor](Tape& t, const Tensor& g) {
        Tensor& gx = t.grad_slot(x.id);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t r = 0; r < factor; ++r)
                for (std::size_t j = 0; j < c; ++j) gx.at(i, j) += g.at(i * factor + r, j);
    });
}

// Concatenate along the last axis; all leading extents must agree. Works for
// rank-2 (N x C) and rank-3 (H x W x C) tensors.
inline Var concat_last(const std::vector<Var>& parts) {
    if (parts.empty()) throw PreconditionError("concat_last: no inputs");
    const Tensor& first = parts[0].value();
    const std::size_t rank = first.rank();
    if (rank < 2) throw ShapeError("concat_last: rank must be >= 2");
    std::size_t lead = 1;
    for (std::size_t d = 0; d + 1 < rank; ++d) lead *= first.extent(d);
    std::size_t total_c = 0;
    std::vector<std::size_t> widths;
    for (const Var& p : parts) {
        detail::check_same_tape(parts[0], p, "concat_last");
        const Tensor& v = p.value();
        if (v.rank() != rank) throw ShapeError("concat_last: rank mismatch");
        for (std::size_t d = 0; d + 1 < rank; ++d)
            if (v.extent(d) != first.extent(d)) throw ShapeError("concat_last: leading extent mismatch");
        widths.push_back(v.extent(rank - 1));
        total_c += widths.back();
    }
    Shape out_shape = first.shape();
    out_shape[rank - 1] = total_c;
    Tensor out(out_shape);
    for (std::size_t row = 0; row < lead; ++row) {
        double* orow = out.data() + row * total_c;
        std::size_t off = 0;
        for (std::size_t p = 0; p < parts.size(); ++p) {
            const double* src = parts[p].value().data() + row * widths[p];
            for (std::size_t j = 0; j < widths[p]; ++j) orow[off + j] = src[j];
            off += widths[p];
        }
    }
    std::vector<std::uint32_t> ids;
    for (const Var& p : parts) ids.push_back(p.id);
    return parts[0].tape->make(std::move(out), [ids, widths, lead, total_c](Tape& t, const Tensor& g) {
        std::size_t off = 0;
        for (std::size_t p = 0; p < ids.size(); ++p) {
            Tensor& gp = t.grad_slot(ids[p]);
            for (std::size_t row = 0; row < lead; ++row) {
                const double* grow = g.data() + row * total_c + off;
                double* dst = gp.data() + row * widths[p];
                for (std::size_t j = 0; j < widths[p]; ++j) dst[j] += grow[j];
            }
            off += widths[p];
        }
    });
}

inline Var concat_cols(Var a, Var b) { return concat_last({a, b}); }

// Max over contiguous groups of `group` rows: (N*group) x C -> N x C.
inline Var group_max(Var x, std::size_t group) {
    const Tensor& xv = x.value();
    require_rank(xv, 2, "group_max input");
    if (group == 0 || xv.extent(0) % group != 0) throw ShapeError("group_max: row count not divisible by group size");
    const std::size_t n = xv.extent(0) / group, c = xv.extent(1);
    Tensor out({n, c});
    std::vector<std::size_t> argmax(n * c);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) {
            double best = xv.at(i * group, j);
            std::size_t bi = i * group;
            for (std::size_t r = 1; r < group; ++r) {
                const double v = xv.at(i * group + r, j);
                if (v > best) {
                    best = v;
                    bi = i * group + r;
                }
            }
            out.at(i, j) = best;
            argmax[i * c + j] = bi;
        }
    return x.tape->make(std::move(out), [x, argmax = std::move(argmax), n, c](Tape& t, const Tensor& g) {
        Tensor& gx = t.grad_slot(x.id);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < c; ++j) gx.at(argmax[i * c + j], j) += g.at(i, j);
    });
}

// Same data, new extents.
inline Var reshape(Var x, Shape shape) {
    const Tensor& xv = x.value();
    if (shape_numel(shape) != xv.numel()) throw ShapeError("reshape: element count mismatch");
    Tensor out = Tensor::raw(shape, xv.vec());
    Shape old_shape = xv.shape();
    return x.tape->make(std::move(out), [x, old_shape = std::move(old_shape)](Tape& t, const Tensor& g) {
        Tensor& gx = t.grad_slot(x.id);
        for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += g[i];
    });
}

// ---------------------------------------------------------------------------
// Map <-> point plumbing
// ---------------------------------------------------------------------------

struct Cell {
    std::size_t y, x;
};

// Read one feature row per cell from an H x W x C map.
inline Var gather_cells(Var map, std::vector<Cell> cells) {
    const Tensor& mv = map.value();
    require_rank(mv, 3, "gather_cells input");
    const std::size_t h = mv.extent(0), w = mv.extent(1), c = mv.extent(2);
    for (const Cell& cl : cells)
        if (cl.y >= h || cl.x >= w) throw Error("gather_cells: coordinate out of bounds");
    Tensor out({cells.size(), c});
    for (std::size_t i = 0; i < cells.size(); ++i)
        for (std::size_t j = 0; j < c; ++j) out.at(i, j) = mv.at(cells[i].y, cells[i].x, j);
    return map.tape->make(std::move(out), [map, cells = std::move(cells), c](Tape& t, const Tensor& g) {
        Tensor& gm = t.grad_slot(map.id);
        for (std::size_t i = 0; i < cells.size(); ++i)
            for (std::size_t j = 0; j < c; ++j) gm.at(cells[i].y, cells[i].x, j) += g.at(i, j);
    });
}

// out = map with rows added into cells. Rows landing on the same cell are
// accumulated in a canonical content-sorted order so the result does not
// depend on point storage order.
inline Var scatter_add_cells(Var map, Var rows, const std::vector<Cell>& cells) {
    detail::check_same_tape(map, rows, "scatter_add_cells");
    const Tensor& mv = map.value();
    const Tensor& rv = rows.value();
    require_rank(mv, 3, "scatter_add_cells map");
    require_rank(rv, 2, "scatter_add_cells rows");
    if (rv.extent(0) != cells.size()) throw ShapeError("scatter_add_cells: row/coord count mismatch");
    if (rv.extent(1) != mv.extent(2)) throw ShapeError("scatter_add_cells: channel mismatch");
    const std::size_t h = mv.extent(0), w = mv.extent(1), c = mv.extent(2);
    std::map<std::size_t, std::vector<std::size_t>> by_cell;
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (cells[i].y >= h || cells[i].x >= w) throw Error("scatter_add_cells: coordinate out of bounds");
        by_cell[cells[i].y * w + cells[i].x].push_back(i);
    }
    Tensor out = mv;
    for (auto& [cell, idxs] : by_cell) {
        std::sort(idxs.begin(), idxs.end(), [&](std::size_t a, std::size_t b) {
            for (std::size_t j = 0; j < c; ++j) {
                if (rv.at(a, j) < rv.at(b, j)) return true;
                if (rv.at(a, j) > rv.at(b, j)) return false;
            }
            return false;
        });
        double* dst = out.data() + cell * c;
        for (std::size_t i : idxs) {
            const double* src = &rv.at(i, 0);
            for (std::size_t j = 0; j < c; ++j) dst[j] += src[j];
        }
    }
    auto cells_copy = cells;
    return map.tape->make(std::move(out), [map, rows, cells = std::move(cells_copy), c](Tape& t, const Tensor& g) {
        detail::accumulate(t.grad_slot(map.id), g);
        Tensor& gr = t.grad_slot(rows.id);
        for (std::size_t i = 0; i < cells.size(); ++i)
            for (std::size_t j = 0; j < c; ++j) gr.at(i, j) += g.at(cells[i].y, cells[i].x, j);
    });
}

// Nearest-neighbor 2x spatial upsampling of an H x W x C map.
inline Var upsample2x_nearest(Var x) {
    const Tensor& xv = x.value();
    require_rank(xv, 3, "upsample2x input");
    const std::size_t h = xv.extent(0), w = xv.extent(1), c = xv.extent(2);
    Tensor out({2 * h, 2 * w, c});
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t xx = 0; xx < w; ++xx)
            for (std::size_t dy = 0; dy < 2; ++dy)
                for (std::size_t dx = 0; dx < 2; ++dx)
                    for (std::size_t j = 0; j < c; ++j) out.at(2 * y + dy, 2 * xx + dx, j) = xv.at(y, xx, j);
    return x.tape->make(std::move(out), [x, h, w, c](Tape& t, const Tensor& g) {
        Tensor& gx = t.grad_slot(x.id);
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t xx = 0; xx < w; ++xx)
                for (std::size_t j = 0; j < c; ++j) {
                    double acc = 0.0;
                    for (std::size_t dy = 0; dy < 2; ++dy)
                        for (std::size_t dx = 0; dx < 2; ++dx) acc += g.at(2 * y + dy, 2 * xx + dx, j);
                    gx.at(y, xx, j) += acc;
                }
    });
}

// ---------------------------------------------------------------------------
// Row interpolation (the reshape block core): N rows resampled at n evenly
// spaced positions spanning [0, N-1].
// ---------------------------------------------------------------------------

struct InterpStop {
    std::size_t lo, hi;
    double frac;
};

inline std::vector<InterpStop> interp_positions(std::size_t n_in, std::size_t n_out) {
    if (n_in == 0) throw PreconditionError("interp_positions: empty input");
    std::vector<InterpStop> stops(n_out);
    for (std::size_t t = 0; t < n_out; ++t) {
        double pos = 0.0;
        if (n_out > 1 && n_in > 1)
            pos = static_cast<double>(t) * static_cast<double>(n_in - 1) / static_cast<double>(n_out - 1);
        const double fl = std::floor(pos);
        std::size_t lo = static_cast<std::size_t>(fl);
        double frac = pos - fl;
        if (lo >= n_in - 1) {
            lo = n_in - 1;
            frac = 0.0;
        }
        stops[t] = InterpStop{lo, frac == 0.0 ? lo : lo + 1, frac};
    }
    return stops;
}

inline Tensor interp_rows_value(const Tensor& x, const std::vector<InterpStop>& stops) {
    require_rank(x, 2, "interp_rows input");
    const std::size_t c = x.extent(1);
    Tensor out({stops.size(), c});
    for (std::size_t t = 0; t < stops.size(); ++t) {
        const InterpStop& s = stops[t];
        if (s.frac == 0.0) {
            for (std::size_t j = 0; j < c; ++j) out.at(t, j) = x.at(s.lo, j);
        } else {
            const double a = 1.0 - s.frac;
            for (std::size_t j = 0; j < c; ++j) out.at(t, j) = a * x.at(s.lo, j) + s.frac * x.at(s.hi, j);
        }
    }
    return out;
}

inline Var interp_rows(Var x, const std::vector<InterpStop>& stops) {
    Tensor out = interp_rows_value(x.value(), stops);
    const std::size_t c = x.value().extent(1);
    auto stops_copy = stops;
    return x.tape->make(std::move(out), [x, stops = std::move(stops_copy), c](Tape& t, const Tensor& g) {
        Tensor& gx = t.grad_slot(x.id);
        for (std::size_t ti = 0; ti < stops.size(); ++ti) {
            const InterpStop& s = stops[ti];
            if (s.frac == 0.0) {
                for (std::size_t j = 0; j < c; ++j) gx.at(s.lo, j) += g.at(ti, j);
            } else {
                const double a = 1.0 - s.frac;
                for (std::size_t j = 0; j < c; ++j) {
                    gx.at(s.lo, j) += a * g.at(ti, j);
                    gx.at(s.hi, j) += s.frac * g.at(ti, j);
                }
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Scaled dot-product attention, single head.
//   out = softmax(q k^T / sqrt(d)) v
// Keys/values may come from a permutable point set, so the softmax
// denominator and the value combination accumulate in canonical row order.
// ---------------------------------------------------------------------------

namespace detail {

inline Tensor attention_weights_impl(const Tensor& q, const Tensor& k, const std::vector<std::size_t>& order) {
    const std::size_t n = q.extent(0), d = q.extent(1), m = k.extent(0);
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    Tensor w({n, m});
    std::vector<double> scores(m);
    for (std::size_t i = 0; i < n; ++i) {
        double smax = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < m; ++j) {
            double s = 0.0;
            for (std::size_t c = 0; c < d; ++c) s += q.at(i, c) * k.at(j, c);
            scores[j] = s * scale;
            smax = std::max(smax, scores[j]);
        }
        double denom = 0.0;
        for (std::size_t j : order) {
            const double e = std::exp(scores[j] - smax);
            w.at(i, j) = e;
            denom += e;
        }
        const double inv = 1.0 / denom;
        for (std::size_t j = 0; j < m; ++j) w.at(i, j) *= inv;
    }
    return w;
}

}  // namespace detail

// Softmax weight matrix of an attention call (testing / diagnostics).
inline Tensor attention_weights(const Tensor& q, const Tensor& k, const Tensor& v) {
    if (k.extent(0) == 0) throw PreconditionError("attention: empty key set");
    if (q.extent(1) != k.extent(1)) throw ShapeError("attention: query/key width mismatch");
    return detail::attention_weights_impl(q, k, detail::canonical_row_order(k, v));
}

inline Var attention(Var q, Var k, Var v) {
    detail::check_same_tape(q, k, "attention");
    detail::check_same_tape(q, v, "attention");
    const Tensor& qv = q.value();
    const Tensor& kv = k.value();
    const Tensor& vv = v.value();
    require_rank(qv, 2, "attention query");
    require_rank(kv, 2, "attention keys");
    require_rank(vv, 2, "attention values");
    if (kv.extent(0) == 0 || qv.extent(0) == 0) throw PreconditionError("attention: empty query or key set");
    if (qv.extent(1) != kv.extent(1)) throw ShapeError("attention: query/key width mismatch");
    if (kv.extent(0) != vv.extent(0)) throw ShapeError("attention: key/value row count mismatch");
    const std::size_t n = qv.extent(0), d = qv.extent(1), m = kv.extent(0), dv = vv.extent(1);

    const std::vector<std::size_t> order = detail::canonical_row_order(kv, vv);
    Tensor w = detail::attention_weights_impl(qv, kv, order);
    Tensor out({n, dv});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j : order) {
            const double wij = w.at(i, j);
            for (std::size_t c = 0; c < dv; ++c) out.at(i, c) += wij * vv.at(j, c);
        }

    return q.tape->make(std::move(out), [q, k, v, w = std::move(w), n, d, m, dv](Tape& t, const Tensor& g) {
        const Tensor& qv = t.value(q.id);
        const Tensor& kv = t.value(k.id);
        const Tensor& vv = t.value(v.id);
        Tensor& gq = t.grad_slot(q.id);
        Tensor& gk = t.grad_slot(k.id);
        Tensor& gv = t.grad_slot(v.id);
        const double scale = 1.0 / std::sqrt(static_cast<double>(d));
        std::vector<double> dw(m), ds(m);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < m; ++j) {
                double acc = 0.0;
                for (std::size_t c = 0; c < dv; ++c) acc += g.at(i, c) * vv.at(j, c);
                dw[j] = acc;
            }
            double dot = 0.0;
            for (std::size_t j = 0; j < m; ++j) dot += w.at(i, j) * dw[j];
            for (std::size_t j = 0; j < m; ++j) ds[j] = w.at(i, j) * (dw[j] - dot);
            for (std::size_t j = 0; j < m; ++j) {
                const double wij = w.at(i, j);
                for (std::size_t c = 0; c < dv; ++c) gv.at(j, c) += wij * g.at(i, c);
                const double dsj = ds[j] * scale;
                for (std::size_t c = 0; c < d; ++c) {
                    gq.at(i, c) += dsj * kv.at(j, c);
                    gk.at(j, c) += dsj * qv.at(i, c);
                }
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

// Mean absolute error over pixels where target > 0. The validity mask is a
// property of the target; invalid pixels never touch the value or gradient.
inline Var masked_l1_mean(Var pred, Tensor target) {
    const Tensor& pv = pred.value();
    if (!pv.same_shape(target)) throw ShapeError("masked_l1_mean: shape mismatch");
    std::size_t count = 0;
    double acc = 0.0;
    for (std::size_t i = 0; i < pv.numel(); ++i)
        if (target[i] > 0.0) {
            acc += std::abs(pv[i] - target[i]);
            ++count;
        }
    if (count == 0) throw PreconditionError("masked_l1_mean: no valid pixels");
    const double inv = 1.0 / static_cast<double>(count);
    return pred.tape->make(Tensor::scalar(acc * inv), [pred, target = std::move(target), inv](Tape& t, const Tensor& g) {
        const Tensor& pv = t.value(pred.id);
        Tensor& gp = t.grad_slot(pred.id);
        for (std::size_t i = 0; i < gp.numel(); ++i) {
            if (target[i] <= 0.0) continue;
            const double diff = pv[i] - target[i];
            const double s = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
            gp[i] += g[0] * s * inv;
        }
    });
}

namespace detail {

// Nearest row of `b` for every row of `a` (squared Euclidean, ties keep the
// lower index), plus the summed minimum distances in storage order.
inline double nearest_sum(const Tensor& a, const Tensor& b, std::vector<std::size_t>& nn) {
    const std::size_t na = a.extent(0), nb = b.extent(0), c = a.extent(1);
    nn.resize(na);
    double total = 0.0;
    for (std::size_t i = 0; i < na; ++i) {
        double best = std::numeric_limits<double>::infinity();
        std::size_t bi = 0;
        for (std::size_t j = 0; j < nb; ++j) {
            double d = 0.0;
            for (std::size_t k = 0; k < c; ++k) {
                const double diff = a.at(i, k) - b.at(j, k);
                d += diff * diff;
            }
            if (d < best) {
                best = d;
                bi = j;
            }
        }
        nn[i] = bi;
        total += best;
    }
    return total;
}

}  // namespace detail

// Two-term symmetric Chamfer distance with squared Euclidean distances:
// mean-over-A of the nearest squared distance to B, plus the mirrored term.
inline Var chamfer(Var a, Var b) {
    detail::check_same_tape(a, b, "chamfer");
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    require_rank(av, 2, "chamfer lhs");
    require_rank(bv, 2, "chamfer rhs");
    if (av.extent(0) == 0 || bv.extent(0) == 0) throw PreconditionError("chamfer: empty point set");
    if (av.extent(1) != bv.extent(1)) throw ShapeError("chamfer: dimension mismatch");
    std::vector<std::size_t> nn_ab, nn_ba;
    const double sum_ab = detail::nearest_sum(av, bv, nn_ab);
    const double sum_ba = detail::nearest_sum(bv, av, nn_ba);
    const double inv_a = 1.0 / static_cast<double>(av.extent(0));
    const double inv_b = 1.0 / static_cast<double>(bv.extent(0));
    const double value = sum_ab * inv_a + sum_ba * inv_b;
    return a.tape->make(Tensor::scalar(value),
                        [a, b, nn_ab = std::move(nn_ab), nn_ba = std::move(nn_ba), inv_a, inv_b](Tape& t, const Tensor& g) {
                            const Tensor& av = t.value(a.id);
                            const Tensor& bv = t.value(b.id);
                            Tensor& ga = t.grad_slot(a.id);
                            Tensor& gb = t.grad_slot(b.id);
                            const std::size_t c = av.extent(1);
                            for (std::size_t i = 0; i < nn_ab.size(); ++i) {
                                const std::size_t j = nn_ab[i];
                                for (std::size_t k = 0; k < c; ++k) {
                                    const double diff = 2.0 * (av.at(i, k) - bv.at(j, k)) * inv_a * g[0];
                                    ga.at(i, k) += diff;
                                    gb.at(j, k) -= diff;
                                }
                            }
                            for (std::size_t j = 0; j < nn_ba.size(); ++j) {
                                const std::size_t i = nn_ba[j];
                                for (std::size_t k = 0; k < c; ++k) {
                                    const double diff = 2.0 * (bv.at(j, k) - av.at(i, k)) * inv_b * g[0];
                                    gb.at(j, k) += diff;
                                    ga.at(i, k) -= diff;
                                }
                            }
                        });
}

}  // namespace rcdepth::nn

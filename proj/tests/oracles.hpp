#pragma once

// Independent brute-force oracles. Everything here is written as the most
// literal possible restatement of each definition, kept free of any code
// from include/rcdepth, so the two routes can disagree.

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "rcdepth/tensor.hpp"

namespace oracle {

using rcdepth::Tensor;

inline Tensor random_tensor(rcdepth::Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = dist(rng);
    return t;
}

// Direct nested-loop cross-correlation. pad_same=false means valid padding.
inline Tensor conv2d(const Tensor& x, const Tensor& k, std::size_t stride, bool pad_same) {
    const long h = static_cast<long>(x.extent(0)), w = static_cast<long>(x.extent(1));
    const long cin = static_cast<long>(x.extent(2));
    const long kh = static_cast<long>(k.extent(0)), kw = static_cast<long>(k.extent(1));
    const long cout = static_cast<long>(k.extent(3));
    const long ph = pad_same ? (kh - 1) / 2 : 0;
    const long pw = pad_same ? (kw - 1) / 2 : 0;
    const long oh = (h + 2 * ph - kh) / static_cast<long>(stride) + 1;
    const long ow = (w + 2 * pw - kw) / static_cast<long>(stride) + 1;
    Tensor out({static_cast<std::size_t>(oh), static_cast<std::size_t>(ow), static_cast<std::size_t>(cout)});
    for (long yo = 0; yo < oh; ++yo)
        for (long xo = 0; xo < ow; ++xo)
            for (long co = 0; co < cout; ++co) {
                double acc = 0.0;
                for (long ky = 0; ky < kh; ++ky)
                    for (long kx = 0; kx < kw; ++kx)
                        for (long ci = 0; ci < cin; ++ci) {
                            const long yy = yo * static_cast<long>(stride) + ky - ph;
                            const long xx = xo * static_cast<long>(stride) + kx - pw;
                            if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
                            acc += x.at(yy, xx, ci) * k.at(ky, kx, ci, co);
                        }
                out.at(yo, xo, co) = acc;
            }
    return out;
}

// Literal masked, count-normalized convolution (stride 1, same padding).
inline Tensor sparse_conv2d(const Tensor& x, const Tensor& k, const Tensor& mask, double eps) {
    const long h = static_cast<long>(x.extent(0)), w = static_cast<long>(x.extent(1));
    const long cin = static_cast<long>(x.extent(2));
    const long kh = static_cast<long>(k.extent(0)), kw = static_cast<long>(k.extent(1));
    const long cout = static_cast<long>(k.extent(3));
    const long ph = (kh - 1) / 2, pw = (kw - 1) / 2;
    Tensor out({x.extent(0), x.extent(1), static_cast<std::size_t>(cout)});
    for (long yo = 0; yo < h; ++yo)
        for (long xo = 0; xo < w; ++xo) {
            double count = 0.0;
            for (long ky = 0; ky < kh; ++ky)
                for (long kx = 0; kx < kw; ++kx) {
                    const long yy = yo + ky - ph, xx = xo + kx - pw;
                    if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
                    if (mask.at(yy, xx) != 0.0) count += 1.0;
                }
            for (long co = 0; co < cout; ++co) {
                if (count == 0.0) {
                    out.at(yo, xo, co) = 0.0;
                    continue;
                }
                double acc = 0.0;
                for (long ky = 0; ky < kh; ++ky)
                    for (long kx = 0; kx < kw; ++kx)
                        for (long ci = 0; ci < cin; ++ci) {
                            const long yy = yo + ky - ph, xx = xo + kx - pw;
                            if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
                            acc += mask.at(yy, xx) * x.at(yy, xx, ci) * k.at(ky, kx, ci, co);
                        }
                out.at(yo, xo, co) = acc / (count + eps);
            }
        }
    return out;
}

// Transposed 1D conv over the point axis by literal zero insertion followed
// by a direct same-padded cross-correlation. Kernel is K x Cin x Cout.
inline Tensor transposed_conv1d(const Tensor& f, const Tensor& k, std::size_t tau) {
    const long n = static_cast<long>(f.extent(0)), cin = static_cast<long>(f.extent(1));
    const long kt = static_cast<long>(k.extent(0)), cout = static_cast<long>(k.extent(2));
    const long out_n = n * static_cast<long>(tau);
    std::vector<double> up(static_cast<std::size_t>(out_n * cin), 0.0);
    for (long i = 0; i < n; ++i)
        for (long c = 0; c < cin; ++c) up[static_cast<std::size_t>(i * static_cast<long>(tau) * cin + c)] = f.at(i, c);
    Tensor out({static_cast<std::size_t>(out_n), static_cast<std::size_t>(cout)});
    const long r = (kt - 1) / 2;
    for (long s = 0; s < out_n; ++s)
        for (long co = 0; co < cout; ++co) {
            double acc = 0.0;
            for (long kk = 0; kk < kt; ++kk) {
                const long j = s + kk - r;
                if (j < 0 || j >= out_n) continue;
                for (long ci = 0; ci < cin; ++ci)
                    acc += up[static_cast<std::size_t>(j * cin + ci)] * k.data()[(kk * cin + ci) * cout + co];
            }
            out.at(s, co) = acc;
        }
    return out;
}

// k nearest neighbors by repeated minimum extraction (self excluded, ties by
// lower index).
inline std::vector<std::size_t> knn(const Tensor& pts, std::size_t k) {
    const std::size_t n = pts.extent(0), c = pts.extent(1);
    std::vector<std::size_t> out(n * k);
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<bool> used(n, false);
        used[i] = true;
        for (std::size_t pick = 0; pick < k; ++pick) {
            double best = std::numeric_limits<double>::infinity();
            std::size_t bj = n;
            for (std::size_t j = 0; j < n; ++j) {
                if (used[j]) continue;
                double d = 0.0;
                for (std::size_t a = 0; a < c; ++a) {
                    const double diff = pts.at(i, a) - pts.at(j, a);
                    d += diff * diff;
                }
                if (d < best) {
                    best = d;
                    bj = j;
                }
            }
            used[bj] = true;
            out[i * k + pick] = bj;
        }
    }
    return out;
}

inline double chamfer(const Tensor& a, const Tensor& b) {
    auto one_way = [](const Tensor& p, const Tensor& q) {
        double total = 0.0;
        for (std::size_t i = 0; i < p.extent(0); ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < q.extent(0); ++j) {
                double d = 0.0;
                for (std::size_t c = 0; c < p.extent(1); ++c) {
                    const double diff = p.at(i, c) - q.at(j, c);
                    d += diff * diff;
                }
                best = std::min(best, d);
            }
            total += best;
        }
        return total / static_cast<double>(p.extent(0));
    };
    return one_way(a, b) + one_way(b, a);
}

// Scalar per-pixel evaluation metrics over 0 < gt <= cap.
struct Metrics {
    double mae = 0, rmse = 0, absrel = 0, log10 = 0, rmselog = 0;
    double d1 = 0, d2 = 0, d3 = 0;
    std::size_t count = 0;
};

inline Metrics metrics(const Tensor& pred, const Tensor& gt, double cap) {
    Metrics m;
    double se = 0, selog = 0;
    for (std::size_t i = 0; i < gt.numel(); ++i) {
        const double d = gt[i];
        if (!(d > 0.0) || d > cap) continue;
        const double p = pred[i];
        ++m.count;
        m.mae += std::abs(p - d);
        se += (p - d) * (p - d);
        m.absrel += std::abs(p - d) / d;
        m.log10 += std::abs(std::log10(p) - std::log10(d));
        const double dl = std::log(p) - std::log(d);
        selog += dl * dl;
        const double ratio = std::max(p / d, d / p);
        if (ratio < 1.25) m.d1 += 1.0;
        if (ratio < 1.25 * 1.25) m.d2 += 1.0;
        if (ratio < 1.25 * 1.25 * 1.25) m.d3 += 1.0;
    }
    const double n = static_cast<double>(m.count);
    m.mae /= n;
    m.rmse = std::sqrt(se / n);
    m.absrel /= n;
    m.log10 /= n;
    m.rmselog = std::sqrt(selog / n);
    m.d1 /= n;
    m.d2 /= n;
    m.d3 /= n;
    return m;
}

}  // namespace oracle

// Brute-force reference implementations used only by tests. Each is written
// directly from the operator's definition and shares no code with src/.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "dpanet/tensor.hpp"

namespace oracle {

using dpanet::Shape;
using dpanet::Tensor;

template <typename T>
Tensor<T> random_tensor(Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0,
                        bool requires_grad = false) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<T> v(s.numel());
    for (auto& x : v) x = static_cast<T>(u(rng));
    return Tensor<T>(s, std::move(v), requires_grad);
}

/// Six nested loops over (n, oc, oy, ox, ic, ky, kx) with zero padding.
template <typename T>
std::vector<double> conv2d(const Tensor<T>& in, const Tensor<T>& w, const Tensor<T>& b, int stride,
                           int pad) {
    const Shape s = in.shape(), ws = w.shape();
    const int oh = (s.h + 2 * pad - ws.h) / stride + 1;
    const int ow = (s.w + 2 * pad - ws.w) / stride + 1;
    std::vector<double> out;
    for (int n = 0; n < s.n; ++n)
        for (int oc = 0; oc < ws.n; ++oc)
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox) {
                    double acc = b.at(oc, 0, 0, 0);
                    for (int ic = 0; ic < s.c; ++ic)
                        for (int ky = 0; ky < ws.h; ++ky)
                            for (int kx = 0; kx < ws.w; ++kx) {
                                const int iy = oy * stride - pad + ky;
                                const int ix = ox * stride - pad + kx;
                                if (iy < 0 || iy >= s.h || ix < 0 || ix >= s.w) continue;
                                acc += double(w.at(oc, ic, ky, kx)) * double(in.at(n, ic, iy, ix));
                            }
                    out.push_back(acc);
                }
    return out;
}

/// Scans every 2x2 window.
template <typename T>
std::vector<T> maxpool2(const Tensor<T>& in) {
    const Shape s = in.shape();
    std::vector<T> out;
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int y = 0; y < s.h; y += 2)
                for (int x = 0; x < s.w; x += 2)
                    out.push_back(std::max({in.at(n, c, y, x), in.at(n, c, y, x + 1),
                                            in.at(n, c, y + 1, x), in.at(n, c, y + 1, x + 1)}));
    return out;
}

/// Quadruple loop over (position, displacement) with explicit inner product.
template <typename T>
std::vector<double> cost_volume(const Tensor<T>& l, const Tensor<T>& r, int d) {
    const Shape s = l.shape();
    const int span = 2 * d + 1;
    std::vector<double> out(static_cast<std::size_t>(s.n) * span * span * s.h * s.w, 0.0);
    for (int n = 0; n < s.n; ++n)
        for (int y = 0; y < s.h; ++y)
            for (int x = 0; x < s.w; ++x)
                for (int dy = -d; dy <= d; ++dy)
                    for (int dx = -d; dx <= d; ++dx) {
                        const int y2 = y + dy, x2 = x + dx;
                        double dot = 0.0;
                        if (y2 >= 0 && y2 < s.h && x2 >= 0 && x2 < s.w)
                            for (int c = 0; c < s.c; ++c) dot += double(l.at(n, c, y, x)) * double(r.at(n, c, y2, x2));
                        const int ch = (dy + d) * span + (dx + d);
                        out[((static_cast<std::size_t>(n) * span * span + ch) * s.h + y) * s.w + x] = dot / s.c;
                    }
    return out;
}

/// Bilinear read written as a sum of tent weights over every pixel within
/// distance 1 of the sample point.
template <typename T>
double tent_sample(const Tensor<T>& img, int n, int c, double y, double x) {
    const Shape s = img.shape();
    double acc = 0.0;
    for (int iy = static_cast<int>(std::floor(y)) - 1; iy <= static_cast<int>(std::floor(y)) + 2; ++iy)
        for (int ix = static_cast<int>(std::floor(x)) - 1; ix <= static_cast<int>(std::floor(x)) + 2; ++ix) {
            if (iy < 0 || iy >= s.h || ix < 0 || ix >= s.w) continue;
            const double wy = std::max(0.0, 1.0 - std::abs(y - iy));
            const double wx = std::max(0.0, 1.0 - std::abs(x - ix));
            acc += wy * wx * double(img.at(n, c, iy, ix));
        }
    return acc;
}

/// Per-output-pixel modulated deformable convolution.
template <typename T>
std::vector<double> deform_conv2d(const Tensor<T>& in, const Tensor<T>& w, const Tensor<T>& b,
                                  const Tensor<T>& off, const Tensor<T>& mod) {
    const Shape s = in.shape(), ws = w.shape();
    const int k = ws.h, half = k / 2;
    std::vector<double> out;
    for (int n = 0; n < s.n; ++n)
        for (int oc = 0; oc < ws.n; ++oc)
            for (int y = 0; y < s.h; ++y)
                for (int x = 0; x < s.w; ++x) {
                    double acc = b.at(oc, 0, 0, 0);
                    for (int ky = 0; ky < k; ++ky)
                        for (int kx = 0; kx < k; ++kx) {
                            const int t = ky * k + kx;
                            const double py = y + (ky - half) + double(off.at(n, 2 * t, y, x));
                            const double px = x + (kx - half) + double(off.at(n, 2 * t + 1, y, x));
                            const double m = mod.at(n, t, y, x);
                            for (int ic = 0; ic < s.c; ++ic)
                                acc += double(w.at(oc, ic, ky, kx)) * tent_sample(in, n, ic, py, px) * m;
                        }
                    out.push_back(acc);
                }
    return out;
}

template <typename A, typename B>
double max_rel_diff(const A& got, const B& want) {
    double worst = 0.0;
    for (std::size_t i = 0; i < want.size(); ++i) {
        const double g = got[i], e = want[i];
        worst = std::max(worst, std::abs(g - e) / std::max(1.0, std::abs(e)));
    }
    return worst;
}

/// SSIM by direct weighted window sums (11 x 11 Gaussian, sigma 1.5), no
/// separable filtering.
template <typename T>
double ssim(const Tensor<T>& a, const Tensor<T>& b) {
    const Shape s = a.shape();
    double g[11];
    double gs = 0;
    for (int i = 0; i < 11; ++i) gs += g[i] = std::exp(-(i - 5) * (i - 5) / (2 * 1.5 * 1.5));
    for (double& v : g) v /= gs;
    const double c1 = 1e-4, c2 = 9e-4;
    double total = 0;
    int windows = 0;
    auto pa = a.values(), pb = b.values();
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int y = 0; y + 11 <= s.h; ++y)
                for (int x = 0; x + 11 <= s.w; ++x) {
                    double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
                    for (int i = 0; i < 11; ++i)
                        for (int j = 0; j < 11; ++j) {
                            const std::size_t k = ((std::size_t(n) * s.c + c) * s.h + y + i) * s.w + x + j;
                            const double w = g[i] * g[j];
                            ma += w * pa[k];
                            mb += w * pb[k];
                            saa += w * pa[k] * pa[k];
                            sbb += w * pb[k] * pb[k];
                            sab += w * pa[k] * pb[k];
                        }
                    const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
                    total += (2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                    ++windows;
                }
    return total / windows;
}

/// Brute-force search for the s maximizing the normalized cross-correlation
/// of luma a(y, x) with b(y, x + s) over the window [y0, y1) x [x0, x1).
inline int ncc_shift(const Tensor<float>& a, const Tensor<float>& b, int y0, int y1, int x0, int x1, int max_shift) {
    auto luma = [](const Tensor<float>& img, int y, int x) {
        return (img.at(0, 0, y, x) + img.at(0, 1, y, x) + img.at(0, 2, y, x)) / 3.0;
    };
    int best = 0;
    double best_score = -2.0;
    for (int s = -max_shift; s <= max_shift; ++s) {
        double ma = 0, mb = 0;
        int n = 0;
        for (int y = y0; y < y1; ++y)
            for (int x = x0; x < x1; ++x, ++n) {
                ma += luma(a, y, x);
                mb += luma(b, y, x + s);
            }
        ma /= n;
        mb /= n;
        double sab = 0, saa = 0, sbb = 0;
        for (int y = y0; y < y1; ++y)
            for (int x = x0; x < x1; ++x) {
                const double da = luma(a, y, x) - ma, db = luma(b, y, x + s) - mb;
                sab += da * db;
                saa += da * da;
                sbb += db * db;
            }
        const double score = sab / std::sqrt(saa * sbb);
        if (score > best_score) best_score = score, best = s;
    }
    return best;
}

}  // namespace oracle

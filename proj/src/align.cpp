#include "dpanet/align.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "kernels.hpp"

namespace dpanet {

namespace {

// Corner weights of one bilinear read. Corners outside the image carry
// weight but read as zero, which keeps the derivative formulas uniform.
template <typename T>
struct Bilinear {
    int y0 = 0, x0 = 0;
    T ly = 0, lx = 0;
    bool inside = false;  // at least one corner inside the image

    // Reuses a given cell; the weights extend linearly outside it.
    Bilinear(std::int64_t cy, std::int64_t cx, T y, T x) {
        if (cy == std::numeric_limits<std::int64_t>::min()) return;
        y0 = static_cast<int>(cy);
        x0 = static_cast<int>(cx);
        ly = y - T(y0);
        lx = x - T(x0);
        inside = true;
    }

    Bilinear(int height, int width, T y, T x) {
        if (!(y > T(-1) && y < T(height) && x > T(-1) && x < T(width))) return;
        const T fy = std::floor(y);
        const T fx = std::floor(x);
        y0 = static_cast<int>(fy);
        x0 = static_cast<int>(fx);
        ly = y - fy;
        lx = x - fx;
        inside = true;
    }
};

template <typename T>
inline T pixel(const T* plane, int height, int width, int y, int x) {
    return (y >= 0 && y < height && x >= 0 && x < width)
               ? plane[static_cast<std::size_t>(y) * width + x]
               : T(0);
}

template <typename T>
inline void scatter(T* plane, int height, int width, int y, int x, T v) {
    if (y >= 0 && y < height && x >= 0 && x < width) plane[static_cast<std::size_t>(y) * width + x] += v;
}

template <typename T>
void check_deform_shapes(const Tensor<T>& input, const DeformKernel<T>& k, const Tensor<T>& offsets,
                         const Tensor<T>& modulation) {
    const Shape in = input.shape();
    const Shape w = k.weight.shape();
    if (w.h != w.w || w.h % 2 == 0)
        throw DimensionError("deform_conv2d: kernel must be square and odd, got weight " + w.str());
    if (w.c != in.c)
        throw DimensionError("deform_conv2d: input " + in.str() + " vs weight " + w.str() +
                             " channel mismatch");
    if (k.bias.shape() != Shape{w.n, 1, 1, 1})
        throw DimensionError("deform_conv2d: bias " + k.bias.shape().str() +
                             " inconsistent with weight " + w.str());
    const int taps = w.h * w.w;
    const Shape want_off{in.n, 2 * taps, in.h, in.w};
    const Shape want_mod{in.n, taps, in.h, in.w};
    if (offsets.shape() != want_off)
        throw DimensionError("deform_conv2d: offsets " + offsets.shape().str() + " do not match input " +
                             in.str() + " (expected " + want_off.str() + ")");
    if (modulation.shape() != want_mod)
        throw DimensionError("deform_conv2d: modulation " + modulation.shape().str() +
                             " does not match input " + in.str() + " (expected " + want_mod.str() + ")");
}

// Fills the modulated, deformed column matrix (C * K, H * W) for one image.
template <typename T>
void deform_columns(const T* image, const T* off, const T* mod, int channels, int height, int width,
                    int kernel, T* cols, const std::int64_t* cells = nullptr) {
    const int taps = kernel * kernel;
    const int half = kernel / 2;
    const std::size_t plane = static_cast<std::size_t>(height) * width;
    for (int t = 0; t < taps; ++t) {
        const int ty = t / kernel - half;
        const int tx = t % kernel - half;
        const T* dy = off + static_cast<std::size_t>(2 * t) * plane;
        const T* dx = off + static_cast<std::size_t>(2 * t + 1) * plane;
        const T* m = mod + static_cast<std::size_t>(t) * plane;
        for (int y = 0; y < height; ++y) {
            for (int x = 0; x < width; ++x) {
                const std::size_t p = static_cast<std::size_t>(y) * width + x;
                const T sy = T(y + ty) + dy[p], sx = T(x + tx) + dx[p];
                const std::int64_t* cell = cells ? cells + 2 * (static_cast<std::size_t>(t) * plane + p) : nullptr;
                const Bilinear<T> b = cell ? Bilinear<T>(cell[0], cell[1], sy, sx) : Bilinear<T>(height, width, sy, sx);
                for (int c = 0; c < channels; ++c) {
                    T* dst = cols + (static_cast<std::size_t>(c) * taps + t) * plane + p;
                    if (!b.inside) {
                        *dst = T(0);
                        continue;
                    }
                    const T* src = image + static_cast<std::size_t>(c) * plane;
                    const T v00 = pixel(src, height, width, b.y0, b.x0);
                    const T v01 = pixel(src, height, width, b.y0, b.x0 + 1);
                    const T v10 = pixel(src, height, width, b.y0 + 1, b.x0);
                    const T v11 = pixel(src, height, width, b.y0 + 1, b.x0 + 1);
                    const T val = (T(1) - b.ly) * ((T(1) - b.lx) * v00 + b.lx * v01) +
                                  b.ly * ((T(1) - b.lx) * v10 + b.lx * v11);
                    *dst = val * m[p];
                }
            }
        }
    }
}

constexpr std::int64_t kOutside = std::numeric_limits<std::int64_t>::min();

// Bilinear cell (y0, x0) of every sample, kOutside when no corner is inside.
template <typename T>
std::vector<std::int64_t> sample_cells(const T* off, int batch, int height, int width, int kernel) {
    const int taps = kernel * kernel;
    const int half = kernel / 2;
    const std::size_t plane = static_cast<std::size_t>(height) * width;
    std::vector<std::int64_t> cells(static_cast<std::size_t>(batch) * taps * plane * 2);
    std::size_t i = 0;
    for (int n = 0; n < batch; ++n)
        for (int t = 0; t < taps; ++t) {
            const T* dy = off + (static_cast<std::size_t>(n) * 2 * taps + 2 * t) * plane;
            const T* dx = dy + plane;
            for (int y = 0; y < height; ++y)
                for (int x = 0; x < width; ++x, i += 2) {
                    const std::size_t p = static_cast<std::size_t>(y) * width + x;
                    const Bilinear<T> b(height, width, T(y + t / kernel - half) + dy[p],
                                        T(x + t % kernel - half) + dx[p]);
                    cells[i] = b.inside ? b.y0 : kOutside;
                    cells[i + 1] = b.x0;
                }
        }
    return cells;
}

}  // namespace

std::vector<std::pair<int, int>> tap_grid(int kernel) {
    std::vector<std::pair<int, int>> grid;
    const int half = kernel / 2;
    for (int ky = 0; ky < kernel; ++ky)
        for (int kx = 0; kx < kernel; ++kx) grid.emplace_back(ky - half, kx - half);
    return grid;
}

template <typename T>
T sample_bilinear(const T* plane, int height, int width, T y, T x) {
    const Bilinear<T> b(height, width, y, x);
    if (!b.inside) return T(0);
    return (T(1) - b.ly) * ((T(1) - b.lx) * pixel(plane, height, width, b.y0, b.x0) +
                            b.lx * pixel(plane, height, width, b.y0, b.x0 + 1)) +
           b.ly * ((T(1) - b.lx) * pixel(plane, height, width, b.y0 + 1, b.x0) +
                   b.lx * pixel(plane, height, width, b.y0 + 1, b.x0 + 1));
}

template <typename T>
Tensor<T> cost_volume(const Tensor<T>& left, const Tensor<T>& right, int radius) {
    if (left.shape() != right.shape())
        throw DimensionError("cost_volume: left " + left.shape().str() + " and right " +
                             right.shape().str() + " differ");
    if (radius < 1) throw DimensionError("cost_volume: radius must be >= 1");
    const Shape in = left.shape();
    const int span = 2 * radius + 1;
    const Shape os{in.n, span * span, in.h, in.w};
    const T inv_c = T(1) / static_cast<T>(in.c);
    std::vector<T> out(os.numel(), T(0));
    const T* lv = left.data();
    const T* rv = right.data();
    kernels::parallel_for(in.n, [&](int n) {
        const T* l = lv + static_cast<std::size_t>(n) * in.c * in.plane();
        const T* r = rv + static_cast<std::size_t>(n) * in.c * in.plane();
        for (int dy = -radius; dy <= radius; ++dy) {
            const int y_lo = std::max(0, -dy), y_hi = std::min(in.h, in.h - dy);
            for (int dx = -radius; dx <= radius; ++dx) {
                const int x_lo = std::max(0, -dx), x_hi = std::min(in.w, in.w - dx);
                T* dst = out.data() + (static_cast<std::size_t>(n) * os.c +
                                       displacement_channel(dy, dx, radius)) * os.plane();
                for (int c = 0; c < in.c; ++c) {
                    const T* lp = l + static_cast<std::size_t>(c) * in.plane();
                    const T* rp = r + static_cast<std::size_t>(c) * in.plane();
                    for (int y = y_lo; y < y_hi; ++y) {
                        const T* lrow = lp + static_cast<std::size_t>(y) * in.w;
                        const T* rrow = rp + static_cast<std::size_t>(y + dy) * in.w + dx;
                        T* orow = dst + static_cast<std::size_t>(y) * in.w;
                        for (int x = x_lo; x < x_hi; ++x) orow[x] += lrow[x] * rrow[x];
                    }
                }
                for (std::size_t i = 0; i < os.plane(); ++i) dst[i] *= inv_c;
            }
        }
    });
    return Tensor<T>::make_result(
        os, std::move(out), "cost_volume", {left, right}, [in, os, radius, inv_c](Node<T>& self) {
            Node<T>& ln = *self.inputs[0];
            Node<T>& rn = *self.inputs[1];
            kernels::parallel_for(in.n, [&](int n) {
                const std::size_t base = static_cast<std::size_t>(n) * in.c * in.plane();
                for (int dy = -radius; dy <= radius; ++dy) {
                    const int y_lo = std::max(0, -dy), y_hi = std::min(in.h, in.h - dy);
                    for (int dx = -radius; dx <= radius; ++dx) {
                        const int x_lo = std::max(0, -dx), x_hi = std::min(in.w, in.w - dx);
                        const T* g = self.grad.data() + (static_cast<std::size_t>(n) * os.c +
                                                         displacement_channel(dy, dx, radius)) * os.plane();
                        for (int c = 0; c < in.c; ++c) {
                            const std::size_t off = base + static_cast<std::size_t>(c) * in.plane();
                            for (int y = y_lo; y < y_hi; ++y) {
                                const std::size_t lrow = off + static_cast<std::size_t>(y) * in.w;
                                const std::size_t rrow = off + static_cast<std::size_t>(y + dy) * in.w + dx;
                                const T* grow = g + static_cast<std::size_t>(y) * in.w;
                                for (int x = x_lo; x < x_hi; ++x) {
                                    const T gv = grow[x] * inv_c;
                                    if (ln.requires_grad) ln.grad[lrow + x] += gv * rn.value[rrow + x];
                                    if (rn.requires_grad) rn.grad[rrow + x] += gv * ln.value[lrow + x];
                                }
                            }
                        }
                    }
                }
            });
        });
}

template <typename T>
Tensor<T> offset_head(const Tensor<T>& context, const ConvParams<T>& params, int taps) {
    if (params.out_channels() != 3 * taps)
        throw ConfigError("offset_head: expected " + std::to_string(3 * taps) +
                          " output channels for " + std::to_string(taps) + " taps, weight has " +
                          std::to_string(params.out_channels()));
    return conv2d(context, params);
}

template <typename T>
OffsetField<T> split_offset_field(const Tensor<T>& raw) {
    const int c = raw.shape().c;
    if (c % 3 != 0 || c == 0)
        throw DimensionError("split_offset_field: channel count " + std::to_string(c) +
                             " is not a positive multiple of 3");
    const int taps = c / 3;
    return {slice_channels(raw, 0, 2 * taps), sigmoid(slice_channels(raw, 2 * taps, taps))};
}

template <typename T>
Tensor<T> deform_conv2d(const Tensor<T>& input, const DeformKernel<T>& kernel,
                        const Tensor<T>& offsets, const Tensor<T>& modulation) {
    using namespace kernels;
    check_deform_shapes(input, kernel, offsets, modulation);
    const Shape in = input.shape();
    const int out_c = kernel.weight.shape().n;
    const int k = kernel.kernel();
    const int taps = k * k;
    const int col_rows = in.c * taps;
    const std::size_t plane = in.plane();
    const Shape os{in.n, out_c, in.h, in.w};

    std::vector<std::int64_t> cells;
    if (auto* tape = BranchTape::active()) {
        cells = sample_cells(offsets.data(), in.n, in.h, in.w, k);
        tape->exchange(cells);
    }

    std::vector<T> out(os.numel());
    parallel_for(in.n, [&](int n) {
        std::vector<T> cols(static_cast<std::size_t>(col_rows) * plane);
        deform_columns(input.data() + n * in.c * plane, offsets.data() + n * 2 * taps * plane,
                       modulation.data() + n * taps * plane, in.c, in.h, in.w, k, cols.data(),
                       cells.empty() ? nullptr : cells.data() + n * static_cast<std::size_t>(taps) * plane * 2);
        MatMap<T> o(out.data() + n * static_cast<std::size_t>(out_c) * plane, out_c,
                    static_cast<Eigen::Index>(plane));
        o.noalias() = ConstMatMap<T>(kernel.weight.data(), out_c, col_rows) *
                      ConstMatMap<T>(cols.data(), col_rows, static_cast<Eigen::Index>(plane));
        const T* b = kernel.bias.data();
        for (int oc = 0; oc < out_c; ++oc) o.row(oc).array() += b[oc];
    });

    return Tensor<T>::make_result(
        os, std::move(out), "deform_conv2d", {input, kernel.weight, kernel.bias, offsets, modulation},
        [in, out_c, k, taps, col_rows, plane](Node<T>& self) {
            Node<T>& xn = *self.inputs[0];
            Node<T>& wn = *self.inputs[1];
            Node<T>& bn = *self.inputs[2];
            Node<T>& on = *self.inputs[3];
            Node<T>& mn = *self.inputs[4];
            const std::size_t wsize = wn.value.size();
            const int half = k / 2;
            std::vector<T> partial(wn.requires_grad ? wsize * in.n : 0);
            parallel_for(in.n, [&](int n) {
                const T* img = xn.value.data() + n * in.c * plane;
                const T* off = on.value.data() + n * 2 * taps * plane;
                const T* mod = mn.value.data() + n * taps * plane;
                ConstMatMap<T> g(self.grad.data() + n * static_cast<std::size_t>(out_c) * plane, out_c,
                                 static_cast<Eigen::Index>(plane));
                if (wn.requires_grad) {
                    std::vector<T> cols(static_cast<std::size_t>(col_rows) * plane);
                    deform_columns(img, off, mod, in.c, in.h, in.w, k, cols.data());
                    MatMap<T>(partial.data() + n * wsize, out_c, col_rows).noalias() =
                        g * ConstMatMap<T>(cols.data(), col_rows, static_cast<Eigen::Index>(plane)).transpose();
                }
                if (!(xn.requires_grad || on.requires_grad || mn.requires_grad)) return;
                RowMat<T> gcol = ConstMatMap<T>(wn.value.data(), out_c, col_rows).transpose() * g;
                T* gimg = xn.requires_grad ? xn.grad.data() + n * in.c * plane : nullptr;
                T* goff = on.requires_grad ? on.grad.data() + n * 2 * taps * plane : nullptr;
                T* gmod = mn.requires_grad ? mn.grad.data() + n * taps * plane : nullptr;
                for (int t = 0; t < taps; ++t) {
                    const int ty = t / k - half;
                    const int tx = t % k - half;
                    const T* dy = off + static_cast<std::size_t>(2 * t) * plane;
                    const T* dx = off + static_cast<std::size_t>(2 * t + 1) * plane;
                    const T* m = mod + static_cast<std::size_t>(t) * plane;
                    for (int y = 0; y < in.h; ++y) {
                        for (int x = 0; x < in.w; ++x) {
                            const std::size_t p = static_cast<std::size_t>(y) * in.w + x;
                            const Bilinear<T> b(in.h, in.w, T(y + ty) + dy[p], T(x + tx) + dx[p]);
                            if (!b.inside) continue;
                            T acc_m = 0, acc_y = 0, acc_x = 0;
                            for (int c = 0; c < in.c; ++c) {
                                const T gc = gcol(static_cast<Eigen::Index>(c) * taps + t,
                                                  static_cast<Eigen::Index>(p));
                                if (gc == T(0)) continue;
                                const T* src = img + static_cast<std::size_t>(c) * plane;
                                const T v00 = pixel(src, in.h, in.w, b.y0, b.x0);
                                const T v01 = pixel(src, in.h, in.w, b.y0, b.x0 + 1);
                                const T v10 = pixel(src, in.h, in.w, b.y0 + 1, b.x0);
                                const T v11 = pixel(src, in.h, in.w, b.y0 + 1, b.x0 + 1);
                                const T val = (T(1) - b.ly) * ((T(1) - b.lx) * v00 + b.lx * v01) +
                                              b.ly * ((T(1) - b.lx) * v10 + b.lx * v11);
                                acc_m += gc * val;
                                acc_y += gc * ((T(1) - b.lx) * (v10 - v00) + b.lx * (v11 - v01));
                                acc_x += gc * ((T(1) - b.ly) * (v01 - v00) + b.ly * (v11 - v10));
                                if (gimg) {
                                    T* dst = gimg + static_cast<std::size_t>(c) * plane;
                                    const T gm = gc * m[p];
                                    scatter(dst, in.h, in.w, b.y0, b.x0, gm * (T(1) - b.ly) * (T(1) - b.lx));
                                    scatter(dst, in.h, in.w, b.y0, b.x0 + 1, gm * (T(1) - b.ly) * b.lx);
                                    scatter(dst, in.h, in.w, b.y0 + 1, b.x0, gm * b.ly * (T(1) - b.lx));
                                    scatter(dst, in.h, in.w, b.y0 + 1, b.x0 + 1, gm * b.ly * b.lx);
                                }
                            }
                            if (gmod) gmod[static_cast<std::size_t>(t) * plane + p] += acc_m;
                            if (goff) {
                                goff[static_cast<std::size_t>(2 * t) * plane + p] += acc_y * m[p];
                                goff[static_cast<std::size_t>(2 * t + 1) * plane + p] += acc_x * m[p];
                            }
                        }
                    }
                }
            });
            if (wn.requires_grad) {
                for (int n = 0; n < in.n; ++n)
                    for (std::size_t i = 0; i < wsize; ++i) wn.grad[i] += partial[n * wsize + i];
            }
            if (bn.requires_grad) {
                for (int n = 0; n < in.n; ++n)
                    for (int oc = 0; oc < out_c; ++oc) {
                        const T* g = self.grad.data() + (static_cast<std::size_t>(n) * out_c + oc) * plane;
                        T acc = 0;
                        for (std::size_t i = 0; i < plane; ++i) acc += g[i];
                        bn.grad[oc] += acc;
                    }
            }
        });
}

#define DPANET_INSTANTIATE_ALIGN(T)                                                                  \
    template T sample_bilinear(const T*, int, int, T, T);                                            \
    template Tensor<T> cost_volume(const Tensor<T>&, const Tensor<T>&, int);                          \
    template Tensor<T> offset_head(const Tensor<T>&, const ConvParams<T>&, int);                      \
    template OffsetField<T> split_offset_field(const Tensor<T>&);                                     \
    template Tensor<T> deform_conv2d(const Tensor<T>&, const DeformKernel<T>&, const Tensor<T>&,      \
                                     const Tensor<T>&);

DPANET_INSTANTIATE_ALIGN(float)
DPANET_INSTANTIATE_ALIGN(double)

}  // namespace dpanet

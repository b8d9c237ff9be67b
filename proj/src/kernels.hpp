// Internal helpers shared by the dense kernels.
#pragma once

#ifndef EIGEN_DONT_PARALLELIZE
#define EIGEN_DONT_PARALLELIZE
#endif
#include <Eigen/Core>

#include "dpanet/ops.hpp"

namespace dpanet::kernels {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

/// Runs body(i) for i in [0, count). Each index must touch disjoint output.
template <typename F>
void parallel_for(int count, F&& body) {
    const int threads = num_threads();
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(threads) if (threads > 1 && count > 1)
#endif
    for (int i = 0; i < count; ++i) body(i);
    (void)threads;
}

/// Unfolds one image (c, h, w) into columns (c*k*k, out_h*out_w).
template <typename T>
void im2col(const T* image, int channels, int height, int width, int kernel, int stride,
            int padding, int out_h, int out_w, T* columns) {
    const std::size_t out_plane = static_cast<std::size_t>(out_h) * out_w;
    for (int c = 0; c < channels; ++c) {
        const T* plane = image + static_cast<std::size_t>(c) * height * width;
        for (int ky = 0; ky < kernel; ++ky) {
            for (int kx = 0; kx < kernel; ++kx) {
                T* row = columns + ((static_cast<std::size_t>(c) * kernel + ky) * kernel + kx) * out_plane;
                for (int oy = 0; oy < out_h; ++oy) {
                    const int iy = oy * stride - padding + ky;
                    T* dst = row + static_cast<std::size_t>(oy) * out_w;
                    if (iy < 0 || iy >= height) {
                        std::fill(dst, dst + out_w, T(0));
                        continue;
                    }
                    const T* src = plane + static_cast<std::size_t>(iy) * width;
                    for (int ox = 0; ox < out_w; ++ox) {
                        const int ix = ox * stride - padding + kx;
                        dst[ox] = (ix >= 0 && ix < width) ? src[ix] : T(0);
                    }
                }
            }
        }
    }
}

/// Adjoint of im2col: accumulates columns back into the image.
template <typename T>
void col2im(const T* columns, int channels, int height, int width, int kernel, int stride,
            int padding, int out_h, int out_w, T* image) {
    const std::size_t out_plane = static_cast<std::size_t>(out_h) * out_w;
    for (int c = 0; c < channels; ++c) {
        T* plane = image + static_cast<std::size_t>(c) * height * width;
        for (int ky = 0; ky < kernel; ++ky) {
            for (int kx = 0; kx < kernel; ++kx) {
                const T* row =
                    columns + ((static_cast<std::size_t>(c) * kernel + ky) * kernel + kx) * out_plane;
                for (int oy = 0; oy < out_h; ++oy) {
                    const int iy = oy * stride - padding + ky;
                    if (iy < 0 || iy >= height) continue;
                    const T* src = row + static_cast<std::size_t>(oy) * out_w;
                    T* dst = plane + static_cast<std::size_t>(iy) * width;
                    for (int ox = 0; ox < out_w; ++ox) {
                        const int ix = ox * stride - padding + kx;
                        if (ix >= 0 && ix < width) dst[ix] += src[ox];
                    }
                }
            }
        }
    }
}

}  // namespace dpanet::kernels

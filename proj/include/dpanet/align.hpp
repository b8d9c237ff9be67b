#pragma once

#include <utility>
#include <vector>

#include "dpanet/ops.hpp"

namespace dpanet {

/// Number of displacement channels for a search radius d: (2d + 1)^2.
constexpr int displacement_count(int radius) { return (2 * radius + 1) * (2 * radius + 1); }

/// Channel holding displacement (dy, dx); dy is the outer index.
constexpr int displacement_channel(int dy, int dx, int radius) {
    return (dy + radius) * (2 * radius + 1) + (dx + radius);
}

/// Correlation cost volume between two feature maps.
///
/// out[n, ch(dy, dx), y, x] = <left[n, :, y, x], right[n, :, y + dy, x + dx]> / C
/// for |dy|, |dx| <= radius. Displacements landing outside the image read a
/// zero feature vector, so those entries are exactly 0.
template <typename T>
Tensor<T> cost_volume(const Tensor<T>& left, const Tensor<T>& right, int radius);

/// One-layer offset/modulation predictor: a plain conv2d whose output has
/// 3 * taps channels. No activation is applied.
template <typename T>
Tensor<T> offset_head(const Tensor<T>& context, const ConvParams<T>& params, int taps);

template <typename T>
struct OffsetField {
    Tensor<T> offsets;     // (n, 2K, h, w): channel 2k is dy of tap k, 2k + 1 is dx
    Tensor<T> modulation;  // (n, K, h, w), in (0, 1)
};

/// Splits a raw 3K-channel head output into tap offsets and sigmoid
/// modulation scalars.
template <typename T>
OffsetField<T> split_offset_field(const Tensor<T>& raw);

template <typename T>
struct DeformKernel {
    Tensor<T> weight;  // (out_c, in_c, k, k)
    Tensor<T> bias;    // (out_c, 1, 1, 1)

    int kernel() const { return weight.shape().h; }
    int taps() const { return kernel() * kernel(); }
};

/// Fixed sampling lattice p^k of a k x k dilation-1 kernel, row-major:
/// (-1,-1), (-1,0), ..., (1,1) for k = 3.
std::vector<std::pair<int, int>> tap_grid(int kernel);

/// Bilinear read of one plane at a continuous position; pixels outside the
/// image are zero.
template <typename T>
T sample_bilinear(const T* plane, int height, int width, T y, T x);

/// Modulated deformable convolution, stride 1, "same" padding:
///
///   out(p0) = sum_k w^k * input(p0 + p^k + dp^k(p0)) * m^k(p0) + bias
///
/// Fractional positions are bilinearly interpolated; out-of-image positions
/// contribute zero. Gradients flow to input, weights, bias, offsets and
/// modulation. At exact integer offsets the offset gradient uses the
/// right-continuous branch of the bilinear kernel.
template <typename T>
Tensor<T> deform_conv2d(const Tensor<T>& input, const DeformKernel<T>& kernel,
                        const Tensor<T>& offsets, const Tensor<T>& modulation);

}  // namespace dpanet

#pragma once

#include <vector>

#include "dpanet/tensor.hpp"

namespace dpanet {

/// Convolution weights (out_c, in_c, k, k), bias (out_c, 1, 1, 1), and
/// geometry. Padding is zero padding.
template <typename T>
struct ConvParams {
    Tensor<T> weight;
    Tensor<T> bias;
    int stride = 1;
    int padding = 0;

    int out_channels() const { return weight.shape().n; }
    int in_channels() const { return weight.shape().c; }
    int kernel() const { return weight.shape().h; }
};

enum class ActivationKind { relu, leaky_relu, sigmoid };

struct Activation {
    ActivationKind kind = ActivationKind::relu;
    double slope = 0.0;  // leaky_relu only

    static Activation relu() { return {ActivationKind::relu, 0.0}; }
    static Activation leaky(double s) { return {ActivationKind::leaky_relu, s}; }
    static Activation sigmoid() { return {ActivationKind::sigmoid, 0.0}; }
};

/// Number of worker threads used inside kernels. Results do not depend on it.
void set_num_threads(int threads);
int num_threads();

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const ConvParams<T>& params);

template <typename T>
Tensor<T> activation(const Tensor<T>& input, Activation mode);

template <typename T>
Tensor<T> relu(const Tensor<T>& x) { return activation(x, Activation::relu()); }
template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, double slope) { return activation(x, Activation::leaky(slope)); }
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) { return activation(x, Activation::sigmoid()); }

/// 2x2 max pooling, stride 2. Ties route the gradient to the first element in
/// row-major window order.
template <typename T>
Tensor<T> maxpool2(const Tensor<T>& input);

/// 2x bilinear upsampling; output (i, j) samples input at
/// ((i + 0.5) / 2 - 0.5, (j + 0.5) / 2 - 0.5), clamped to the valid range.
template <typename T>
Tensor<T> upsample_bilinear2(const Tensor<T>& input);

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& inputs);

template <typename T>
Tensor<T> slice_channels(const Tensor<T>& input, int begin, int count);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);

/// Sum of all elements as a 1x1x1x1 tensor.
template <typename T>
Tensor<T> sum(const Tensor<T>& a);

template <typename T>
Tensor<T> mean(const Tensor<T>& a);

/// sum(a * weights) for a constant weight field of the same shape.
template <typename T>
Tensor<T> weighted_sum(const Tensor<T>& a, const std::vector<T>& weights);

/// Values clamped to [lo, hi]; not differentiable, returns a leaf.
template <typename T>
Tensor<T> clamp_values(const Tensor<T>& a, T lo, T hi);

}  // namespace dpanet

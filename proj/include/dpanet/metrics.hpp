#pragma once

#include "dpanet/tensor.hpp"

namespace dpanet {

/// Reported for identical images instead of +inf.
constexpr double kPsnrCap = 100.0;

/// -10 log10(mse), capped.
double psnr_from_mse(double mse);

/// 10 log10(1 / MSE) over all elements, for values in [0, 1].
template <typename T>
double psnr(const Tensor<T>& a, const Tensor<T>& b);

/// Mean SSIM over every valid 11 x 11 window (Gaussian, sigma 1.5),
/// channel and batch item; K1 = 0.01, K2 = 0.03, dynamic range 1.
template <typename T>
double ssim(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
double mae(const Tensor<T>& a, const Tensor<T>& b);

}  // namespace dpanet

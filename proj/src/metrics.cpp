#include "dpanet/metrics.hpp"

#include <array>
#include <cmath>
#include <string>

#include "dpanet/errors.hpp"

namespace dpanet {

namespace {

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

template <typename T>
void check_pair(const char* metric, const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape())
        throw DimensionError(std::string(metric) + ": shapes differ, " + a.shape().str() + " vs " +
                             b.shape().str());
}

std::array<double, kWindow> gaussian_taps() {
    std::array<double, kWindow> g{};
    double total = 0;
    for (int i = 0; i < kWindow; ++i) {
        const double d = i - kWindow / 2;
        g[i] = std::exp(-d * d / (2 * kSigma * kSigma));
        total += g[i];
    }
    for (double& v : g) v /= total;
    return g;
}

// Valid-mode separable Gaussian filter of one plane.
std::vector<double> filter(const std::vector<double>& src, int h, int w) {
    static const auto g = gaussian_taps();
    const int ow = w - kWindow + 1, oh = h - kWindow + 1;
    std::vector<double> rows(static_cast<std::size_t>(h) * ow, 0.0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < ow; ++x) {
            double acc = 0;
            for (int k = 0; k < kWindow; ++k) acc += g[k] * src[static_cast<std::size_t>(y) * w + x + k];
            rows[static_cast<std::size_t>(y) * ow + x] = acc;
        }
    std::vector<double> out(static_cast<std::size_t>(oh) * ow, 0.0);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            double acc = 0;
            for (int k = 0; k < kWindow; ++k) acc += g[k] * rows[static_cast<std::size_t>(y + k) * ow + x];
            out[static_cast<std::size_t>(y) * ow + x] = acc;
        }
    return out;
}

}  // namespace

double psnr_from_mse(double mse) {
    if (mse <= 0.0) return kPsnrCap;
    return std::min(kPsnrCap, -10.0 * std::log10(mse));
}

template <typename T>
double psnr(const Tensor<T>& a, const Tensor<T>& b) {
    check_pair("psnr", a, b);
    double se = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        const double d = double(a.values()[i]) - double(b.values()[i]);
        se += d * d;
    }
    return psnr_from_mse(se / static_cast<double>(a.numel()));
}

template <typename T>
double ssim(const Tensor<T>& a, const Tensor<T>& b) {
    check_pair("ssim", a, b);
    const Shape s = a.shape();
    if (s.h < kWindow || s.w < kWindow)
        throw DimensionError("ssim: image " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                             " is smaller than the 11x11 window");
    const std::size_t plane = s.plane();
    double total = 0;
    std::size_t windows = 0;
    for (int nc = 0; nc < s.n * s.c; ++nc) {
        std::vector<double> x(plane), y(plane), xx(plane), yy(plane), xy(plane);
        for (std::size_t p = 0; p < plane; ++p) {
            x[p] = a.values()[nc * plane + p];
            y[p] = b.values()[nc * plane + p];
            xx[p] = x[p] * x[p];
            yy[p] = y[p] * y[p];
            xy[p] = x[p] * y[p];
        }
        const auto mx = filter(x, s.h, s.w), my = filter(y, s.h, s.w);
        const auto sxx = filter(xx, s.h, s.w), syy = filter(yy, s.h, s.w), sxy = filter(xy, s.h, s.w);
        for (std::size_t i = 0; i < mx.size(); ++i) {
            const double vx = sxx[i] - mx[i] * mx[i], vy = syy[i] - my[i] * my[i];
            const double cov = sxy[i] - mx[i] * my[i];
            total += ((2 * mx[i] * my[i] + kC1) * (2 * cov + kC2)) /
                     ((mx[i] * mx[i] + my[i] * my[i] + kC1) * (vx + vy + kC2));
        }
        windows += mx.size();
    }
    return total / static_cast<double>(windows);
}

template <typename T>
double mae(const Tensor<T>& a, const Tensor<T>& b) {
    check_pair("mae", a, b);
    double acc = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) acc += std::abs(double(a.values()[i]) - double(b.values()[i]));
    return acc / static_cast<double>(a.numel());
}

template double psnr(const Tensor<float>&, const Tensor<float>&);
template double psnr(const Tensor<double>&, const Tensor<double>&);
template double ssim(const Tensor<float>&, const Tensor<float>&);
template double ssim(const Tensor<double>&, const Tensor<double>&);
template double mae(const Tensor<float>&, const Tensor<float>&);
template double mae(const Tensor<double>&, const Tensor<double>&);

}  // namespace dpanet

#include "dpanet/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include "dpanet/errors.hpp"

namespace dpanet {

namespace {

constexpr int kSubsamples = 16;

using Rng = std::mt19937_64;

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

std::array<double, 3> random_color(Rng& rng) { return {uniform(rng, 0, 1), uniform(rng, 0, 1), uniform(rng, 0, 1)}; }

// Second color at least 0.35 away from the first in some channel, so every
// texture has visible structure.
std::array<double, 3> contrasting(Rng& rng, const std::array<double, 3>& a) {
    for (;;) {
        auto b = random_color(rng);
        double gap = 0;
        for (int c = 0; c < 3; ++c) gap = std::max(gap, std::abs(a[c] - b[c]));
        if (gap >= 0.35) return b;
    }
}

std::vector<float> paint_texture(Rng& rng, TextureKind kind, int h, int w) {
    const auto c1 = random_color(rng);
    const auto c2 = contrasting(rng, c1);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    std::vector<float> out(3 * plane);
    auto put = [&](int y, int x, double t) {
        for (int c = 0; c < 3; ++c)
            out[c * plane + static_cast<std::size_t>(y) * w + x] = static_cast<float>((1 - t) * c1[c] + t * c2[c]);
    };
    switch (kind) {
        case TextureKind::checkerboard: {
            const int period = std::uniform_int_distribution<int>(3, 8)(rng);
            const int oy = std::uniform_int_distribution<int>(0, 2 * period - 1)(rng);
            const int ox = std::uniform_int_distribution<int>(0, 2 * period - 1)(rng);
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) put(y, x, (((y + oy) / period + (x + ox) / period) % 2) ? 1.0 : 0.0);
            break;
        }
        case TextureKind::grating: {
            const double period = uniform(rng, 4.0, 14.0);
            const double theta = uniform(rng, 0.0, std::numbers::pi);
            const double phase = uniform(rng, 0.0, 2 * std::numbers::pi);
            const double ky = std::sin(theta) * 2 * std::numbers::pi / period;
            const double kx = std::cos(theta) * 2 * std::numbers::pi / period;
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) put(y, x, 0.5 + 0.5 * std::sin(ky * y + kx * x + phase));
            break;
        }
        case TextureKind::blocks: {
            const int cell = std::uniform_int_distribution<int>(2, 6)(rng);
            const int rows = h / cell + 1, cols = w / cell + 1;
            std::vector<double> t(static_cast<std::size_t>(rows) * cols);
            for (double& v : t) v = uniform(rng, 0, 1);
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) put(y, x, t[static_cast<std::size_t>(y / cell) * cols + x / cell]);
            break;
        }
    }
    return out;
}

std::vector<float> paint_mask(Rng& rng, RegionShape shape, int h, int w) {
    std::vector<float> mask(static_cast<std::size_t>(h) * w, shape == RegionShape::full ? 1.0f : 0.0f);
    if (shape == RegionShape::full) return mask;
    const double cy = uniform(rng, 0.15, 0.85) * h, cx = uniform(rng, 0.15, 0.85) * w;
    const double ry = uniform(rng, 0.12, 0.35) * h, rx = uniform(rng, 0.12, 0.35) * w;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double dy = (y + 0.5 - cy) / ry, dx = (x + 0.5 - cx) / rx;
            const bool in = shape == RegionShape::rectangle ? std::abs(dy) <= 1 && std::abs(dx) <= 1
                                                            : dy * dy + dx * dx <= 1;
            mask[static_cast<std::size_t>(y) * w + x] = in ? 1.0f : 0.0f;
        }
    return mask;
}

// out(y, x) = sum psf(dy, dx) * src(y - dy, x - dx), borders replicated.
std::vector<double> blur(const std::vector<double>& src, int h, int w, const Psf& psf) {
    if (psf.half == 0) return src;
    std::vector<double> out(src.size(), 0.0);
    const int k = psf.half;
    for (int dy = -k; dy <= k; ++dy)
        for (int dx = -k; dx <= k; ++dx) {
            const double wgt = psf.at(dy, dx);
            if (wgt == 0.0) continue;
            for (int y = 0; y < h; ++y) {
                const int sy = std::clamp(y - dy, 0, h - 1);
                const double* row = src.data() + static_cast<std::size_t>(sy) * w;
                double* dst = out.data() + static_cast<std::size_t>(y) * w;
                for (int x = 0; x < w; ++x) dst[x] += wgt * row[std::clamp(x - dx, 0, w - 1)];
            }
        }
    return out;
}

}  // namespace

Scene generate_scene(std::uint64_t seed, int height, int width, int region_count, double z_max) {
    if (height <= 0 || width <= 0 || height % 8 != 0 || width % 8 != 0)
        throw DimensionError("generate_scene: size " + std::to_string(height) + "x" + std::to_string(width) +
                             " must be positive multiples of 8");
    if (region_count < 1) throw ConfigError("generate_scene: region_count must be >= 1");
    if (!(z_max >= 1.0)) throw ConfigError("generate_scene: z_max must be >= 1");

    Rng rng(seed);
    std::vector<double> depths(region_count);
    for (double& d : depths) d = uniform(rng, 1.0, z_max);
    std::sort(depths.begin(), depths.end(), std::greater<>());

    Scene scene;
    scene.height = height;
    scene.width = width;
    for (int i = 0; i < region_count; ++i) {
        Layer layer;
        layer.shape = i == 0 ? RegionShape::full
                             : (std::uniform_int_distribution<int>(0, 1)(rng) ? RegionShape::ellipse
                                                                              : RegionShape::rectangle);
        layer.texture = static_cast<TextureKind>(std::uniform_int_distribution<int>(0, 2)(rng));
        layer.depth = depths[i];
        layer.mask = paint_mask(rng, layer.shape, height, width);
        layer.color = paint_texture(rng, layer.texture, height, width);
        scene.layers.push_back(std::move(layer));
    }

    const std::size_t plane = static_cast<std::size_t>(height) * width;
    std::vector<float> sharp(3 * plane);
    scene.depth.assign(plane, 0.0f);
    for (const Layer& layer : scene.layers)
        for (std::size_t p = 0; p < plane; ++p) {
            if (layer.mask[p] == 0.0f) continue;
            for (int c = 0; c < 3; ++c) sharp[c * plane + p] = layer.color[c * plane + p];
            scene.depth[p] = static_cast<float>(layer.depth);
        }
    scene.sharp = Tensor<float>({1, 3, height, width}, std::move(sharp));
    return scene;
}

double LensModel::radius(double depth) const {
    return std::clamp(gain * (depth - focal_depth), -max_radius, max_radius);
}

double expected_disparity(double r) { return 8.0 * r / (3.0 * std::numbers::pi); }

Psf half_disc_psf(double r, View view) {
    const double a = std::abs(r);
    Psf psf;
    psf.half = static_cast<int>(std::ceil(a));
    const int side = 2 * psf.half + 1;
    psf.weights.assign(static_cast<std::size_t>(side) * side, 0.0);
    // Keep x < 0 when the left view sees r > 0 (or the right view r < 0).
    const bool negative_half = (view == View::left) == (r > 0);
    double total = 0.0;
    for (int dy = -psf.half; dy <= psf.half; ++dy)
        for (int dx = -psf.half; dx <= psf.half; ++dx) {
            int hits = 0;
            for (int sy = 0; sy < kSubsamples; ++sy)
                for (int sx = 0; sx < kSubsamples; ++sx) {
                    const double py = dy + (sy + 0.5) / kSubsamples - 0.5;
                    const double px = dx + (sx + 0.5) / kSubsamples - 0.5;
                    if (py * py + px * px > a * a) continue;
                    if (negative_half ? px < 0 : px > 0) ++hits;
                }
            psf.weights[(dy + psf.half) * side + dx + psf.half] = hits;
            total += hits;
        }
    if (total == 0.0) {
        psf.half = 0;
        psf.weights = {1.0};
        return psf;
    }
    for (double& v : psf.weights) v /= total;
    return psf;
}

DpRender render_dp_pair(const Scene& scene, const LensModel& lens) {
    const int h = scene.height, w = scene.width;
    if (!(lens.max_radius >= 0.0) || !(lens.gain >= 0.0))
        throw ConfigError("render_dp_pair: gain and max_radius must be non-negative");
    const int reach = static_cast<int>(std::ceil(lens.max_radius));
    if (2 * reach + 1 > std::min(h, w))
        throw ConfigError("render_dp_pair: max_radius " + std::to_string(lens.max_radius) + " is too large for a " +
                          std::to_string(h) + "x" + std::to_string(w) + " image");
    const std::size_t plane = static_cast<std::size_t>(h) * w;

    DpRender out;
    out.radius.assign(plane, 0.0f);
    for (const Layer& layer : scene.layers) {
        const auto r = static_cast<float>(lens.radius(layer.depth));
        for (std::size_t p = 0; p < plane; ++p)
            if (layer.mask[p] != 0.0f) out.radius[p] = r;
    }

    for (View view : {View::left, View::right}) {
        std::vector<double> acc(3 * plane, 0.0);
        for (const Layer& layer : scene.layers) {
            const Psf psf = half_disc_psf(lens.radius(layer.depth), view);
            std::vector<double> mask(layer.mask.begin(), layer.mask.end());
            const std::vector<double> alpha = blur(mask, h, w, psf);
            for (int c = 0; c < 3; ++c) {
                std::vector<double> premul(plane);
                for (std::size_t p = 0; p < plane; ++p) premul[p] = mask[p] * layer.color[c * plane + p];
                const std::vector<double> fill = blur(premul, h, w, psf);
                double* dst = acc.data() + c * plane;
                for (std::size_t p = 0; p < plane; ++p) dst[p] = dst[p] * (1.0 - alpha[p]) + fill[p];
            }
        }
        std::vector<float> img(acc.size());
        for (std::size_t i = 0; i < acc.size(); ++i) img[i] = static_cast<float>(std::clamp(acc[i], 0.0, 1.0));
        (view == View::left ? out.left : out.right) = Tensor<float>({1, 3, h, w}, std::move(img));
    }
    return out;
}

}  // namespace dpanet

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "dpanet/align.hpp"
#include "dpanet/gradcheck.hpp"
#include "oracles.hpp"

using namespace dpanet;

namespace {

// Offsets whose fractional part stays in [0.1, 0.9], away from bilinear kinks.
template <typename T>
Tensor<T> safe_offsets(Shape s, std::uint64_t seed, double magnitude = 1.5, bool rg = false) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> whole(static_cast<int>(-magnitude), static_cast<int>(magnitude));
    std::uniform_real_distribution<double> frac(0.1, 0.9);
    std::vector<T> v(s.numel());
    for (auto& x : v) x = static_cast<T>(whole(rng) + frac(rng));
    return Tensor<T>(s, std::move(v), rg);
}

template <typename T>
DeformKernel<T> random_kernel(int out_c, int in_c, int k, std::uint64_t seed, bool rg = false) {
    return {oracle::random_tensor<T>({out_c, in_c, k, k}, seed, -1, 1, rg),
            oracle::random_tensor<T>({out_c, 1, 1, 1}, seed + 1, -1, 1, rg)};
}

}  // namespace

TEST_CASE("cost_volume unit values") {
    auto ones = Tensor<float>::full({1, 4, 5, 5}, 1.0f);
    auto v = cost_volume(ones, ones, 1);
    CHECK(v.shape() == Shape{1, 9, 5, 5});
    CHECK(v.at(0, displacement_channel(0, 0, 1), 2, 2) == 1.0f);
    CHECK(v.at(0, displacement_channel(-1, -1, 1), 2, 2) == 1.0f);
    // Target outside the image reads a zero vector.
    CHECK(v.at(0, displacement_channel(-1, 0, 1), 0, 3) == 0.0f);
    CHECK(v.at(0, displacement_channel(0, 1, 1), 2, 4) == 0.0f);

    auto l = Tensor<float>::zeros({1, 4, 5, 5});
    auto r = Tensor<float>::zeros({1, 4, 5, 5});
    for (int y = 0; y < 5; ++y)
        for (int x = 0; x < 5; ++x) {
            l.at(0, 0, y, x) = 1.0f;
            r.at(0, 1, y, x) = 1.0f;
        }
    auto orth = cost_volume(l, r, 2);
    for (float e : orth.values()) CHECK(e == 0.0f);

    CHECK(cost_volume(Tensor<float>::zeros({1, 2, 20, 20}), Tensor<float>::zeros({1, 2, 20, 20}), 9)
              .shape()
              .c == 361);
    CHECK_THROWS_AS(cost_volume(ones, Tensor<float>::zeros({1, 4, 5, 6}), 1), DimensionError);
}

TEST_CASE("cost_volume matches the quadruple-loop oracle") {
    auto l = oracle::random_tensor<float>({1, 8, 10, 10}, 1);
    auto r = oracle::random_tensor<float>({1, 8, 10, 10}, 2);
    CHECK(oracle::max_rel_diff(cost_volume(l, r, 2).values(), oracle::cost_volume(l, r, 2)) < 1e-6);
    for (int seed = 0; seed < 20; ++seed) {
        const Shape s{1 + seed % 2, 1 + seed % 6, 4 + seed % 5, 5 + seed % 4};
        auto a = oracle::random_tensor<float>(s, 300 + seed);
        auto b = oracle::random_tensor<float>(s, 400 + seed);
        const int d = 1 + seed % 3;
        CHECK(oracle::max_rel_diff(cost_volume(a, b, d).values(), oracle::cost_volume(a, b, d)) < 1e-6);
    }
}

TEST_CASE("cost_volume swap symmetry") {
    auto l = oracle::random_tensor<double>({1, 3, 7, 6}, 5);
    auto r = oracle::random_tensor<double>({1, 3, 7, 6}, 6);
    const int d = 2;
    auto lr = cost_volume(l, r, d);
    auto rl = cost_volume(r, l, d);
    for (int dy = -d; dy <= d; ++dy)
        for (int dx = -d; dx <= d; ++dx)
            for (int y = 0; y < 7; ++y)
                for (int x = 0; x < 6; ++x) {
                    const int y2 = y + dy, x2 = x + dx;
                    if (y2 < 0 || y2 >= 7 || x2 < 0 || x2 >= 6) continue;
                    CHECK(lr.at(0, displacement_channel(dy, dx, d), y, x) ==
                          doctest::Approx(rl.at(0, displacement_channel(-dy, -dx, d), y2, x2)).epsilon(1e-12));
                }
}

TEST_CASE("offset_head is a conv2d with 3K outputs") {
    auto ctx = oracle::random_tensor<float>({1, 6, 8, 8}, 10);
    ConvParams<float> zero{Tensor<float>::zeros({27, 6, 3, 3}), Tensor<float>::zeros({27, 1, 1, 1}), 1, 1};
    auto raw = offset_head(ctx, zero, 9);
    CHECK(raw.shape() == Shape{1, 27, 8, 8});
    for (float v : raw.values()) CHECK(v == 0.0f);

    ConvParams<float> rnd{oracle::random_tensor<float>({27, 6, 3, 3}, 11),
                          oracle::random_tensor<float>({27, 1, 1, 1}, 12), 1, 1};
    auto a = offset_head(ctx, rnd, 9);
    auto b = conv2d(ctx, rnd);
    for (std::size_t i = 0; i < a.numel(); ++i) CHECK(a.values()[i] == b.values()[i]);

    ConvParams<float> wrong{Tensor<float>::zeros({26, 6, 3, 3}), Tensor<float>::zeros({26, 1, 1, 1}), 1, 1};
    CHECK_THROWS_AS(offset_head(ctx, wrong, 9), ConfigError);
}

TEST_CASE("split_offset_field") {
    auto f = split_offset_field(Tensor<double>::zeros({1, 27, 4, 4}));
    CHECK(f.offsets.shape() == Shape{1, 18, 4, 4});
    CHECK(f.modulation.shape() == Shape{1, 9, 4, 4});
    for (double v : f.offsets.values()) CHECK(v == 0.0);
    for (double v : f.modulation.values()) CHECK(v == 0.5);

    auto sat = split_offset_field(Tensor<double>::full({1, 3, 1, 1}, 20.0));
    CHECK(std::abs(sat.modulation.item() - 1.0) < 1e-8);

    CHECK_THROWS_AS(split_offset_field(Tensor<double>::zeros({1, 26, 2, 2})), DimensionError);
}

TEST_CASE("deform_conv2d reduces to conv2d with zero offsets and unit modulation") {
    for (int seed = 0; seed < 20; ++seed) {
        const int n = 1 + seed % 2, ic = 1 + seed % 4, oc = 1 + seed % 3, k = (seed % 4 == 0) ? 1 : 3;
        const Shape s{n, ic, 5 + seed % 4, 6 + seed % 3};
        auto x = oracle::random_tensor<float>(s, 500 + seed);
        auto kern = random_kernel<float>(oc, ic, k, 600 + seed);
        const int taps = k * k;
        auto off = Tensor<float>::zeros({n, 2 * taps, s.h, s.w});
        auto mod = Tensor<float>::full({n, taps, s.h, s.w}, 1.0f);
        auto got = deform_conv2d(x, kern, off, mod);
        auto want = conv2d(x, ConvParams<float>{kern.weight, kern.bias, 1, k / 2});
        CHECK(oracle::max_rel_diff(got.values(), want.values()) < 1e-6);
    }
}

TEST_CASE("deform_conv2d bilinear and boundary rules") {
    auto img = oracle::random_tensor<double>({1, 1, 4, 5}, 70);
    DeformKernel<double> unit{Tensor<double>::full({1, 1, 1, 1}, 1.0), Tensor<double>::zeros({1, 1, 1, 1})};
    auto off = Tensor<double>::zeros({1, 2, 4, 5});
    auto mod = Tensor<double>::full({1, 1, 4, 5}, 1.0);
    off.at(0, 1, 2, 1) = 0.5;  // dx at (2, 1)
    off.at(0, 1, 0, 0) = -7.0;  // pushes the tap fully outside
    auto y = deform_conv2d(img, unit, off, mod);
    CHECK(y.at(0, 0, 2, 1) == doctest::Approx(0.5 * (img.at(0, 0, 2, 1) + img.at(0, 0, 2, 2))).epsilon(1e-14));
    CHECK(y.at(0, 0, 0, 0) == 0.0);
    CHECK(y.at(0, 0, 3, 4) == img.at(0, 0, 3, 4));

    CHECK_THROWS_AS(deform_conv2d(img, unit, Tensor<double>::zeros({1, 2, 4, 4}), mod), DimensionError);
}

TEST_CASE("deform_conv2d matches the interpolation oracle") {
    for (int seed = 0; seed < 20; ++seed) {
        const Shape s{1 + seed % 2, 1 + seed % 3, 5 + seed % 3, 5 + seed % 4};
        auto x = oracle::random_tensor<float>(s, 700 + seed);
        auto kern = random_kernel<float>(1 + seed % 4, s.c, 3, 800 + seed);
        auto off = oracle::random_tensor<float>({s.n, 18, s.h, s.w}, 900 + seed, -2.5, 2.5);
        auto mod = oracle::random_tensor<float>({s.n, 9, s.h, s.w}, 1000 + seed, 0.0, 1.0);
        auto got = deform_conv2d(x, kern, off, mod);
        CHECK(oracle::max_rel_diff(got.values(), oracle::deform_conv2d(x, kern.weight, kern.bias, off, mod)) < 1e-5);
    }
}

TEST_CASE("gradients of the alignment operators") {
    const Shape s{2, 3, 6, 7};
    auto l = oracle::random_tensor<double>(s, 20, -1, 1, true);
    auto r = oracle::random_tensor<double>(s, 21, -1, 1, true);
    auto cv = finite_diff_check([](const auto& in) { return cost_volume(in[0], in[1], 2); }, {l, r});
    CHECK(cv.max_relative_error < 1e-4);

    auto x = oracle::random_tensor<double>(s, 22, -1, 1, true);
    auto k = random_kernel<double>(4, 3, 3, 23, true);
    auto off = safe_offsets<double>({2, 18, 6, 7}, 24, 1.5, true);
    auto mod = oracle::random_tensor<double>({2, 9, 6, 7}, 25, 0.1, 1.0, true);
    auto f = [](const std::vector<Tensor<double>>& in) {
        return deform_conv2d(in[0], DeformKernel<double>{in[1], in[2]}, in[3], in[4]);
    };
    auto full = finite_diff_check(f, {x, k.weight, k.bias, off, mod}, {1e-4, 256, 7});
    CHECK(full.max_relative_error < 1e-4);

    auto head = finite_diff_check(
        [](const auto& in) {
            auto field = split_offset_field(in[0]);
            return concat_channels<double>({field.offsets, field.modulation});
        },
        {oracle::random_tensor<double>({1, 27, 3, 3}, 26, -2, 2, true)});
    CHECK(head.max_relative_error < 1e-4);
}

TEST_CASE("cost volume argmax recovers integer horizontal shifts") {
    const int d = 3;
    const Shape s{1, 16, 24, 24};
    // Smooth random features, unit length at every position.
    auto raw = oracle::random_tensor<double>({1, 16, 24 + 2 * d, 24 + 2 * d + 4}, 90);
    for (int shift = -d; shift <= d; ++shift) {
        auto left = Tensor<double>::zeros(s);
        auto right = Tensor<double>::zeros(s);
        auto feat = [&](int c, int y, int x) {
            double acc = 0;
            for (int dy = 0; dy < 2; ++dy)
                for (int dx = 0; dx < 2; ++dx) acc += raw.at(0, c, y + dy + d, x + dx + d + 2);
            return acc;
        };
        for (int y = 0; y < 24; ++y)
            for (int x = 0; x < 24; ++x) {
                double nl = 0, nr = 0;
                for (int c = 0; c < 16; ++c) {
                    left.at(0, c, y, x) = feat(c, y, x);
                    right.at(0, c, y, x) = feat(c, y, x - shift);
                    nl += left.at(0, c, y, x) * left.at(0, c, y, x);
                    nr += right.at(0, c, y, x) * right.at(0, c, y, x);
                }
                for (int c = 0; c < 16; ++c) {
                    left.at(0, c, y, x) /= std::sqrt(nl);
                    right.at(0, c, y, x) /= std::sqrt(nr);
                }
            }
        auto v = cost_volume(left, right, d);
        int hit = 0, total = 0;
        for (int y = d; y < 24 - d; ++y)
            for (int x = d; x < 24 - d; ++x) {
                int best = 0;
                for (int ch = 1; ch < v.shape().c; ++ch)
                    if (v.at(0, ch, y, x) > v.at(0, best, y, x)) best = ch;
                hit += (best == displacement_channel(0, shift, d));
                ++total;
            }
        CHECK(hit >= 0.95 * total);
    }
}

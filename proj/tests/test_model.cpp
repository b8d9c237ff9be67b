#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <set>

#include "dpanet/gradcheck.hpp"
#include "dpanet/model.hpp"
#include "oracles.hpp"

using namespace dpanet;

namespace {

NetConfig tiny() {
    NetConfig c;
    c.base_channels = 4;
    c.blocks = 3;
    c.radius = 2;
    return c;
}

bool bitwise_equal(const Tensor<float>& a, const Tensor<float>& b) {
    if (a.shape() != b.shape()) return false;
    for (std::size_t i = 0; i < a.numel(); ++i)
        if (a.values()[i] != b.values()[i]) return false;
    return true;
}

// Offset heads start at zero, which pins every sample to the integer grid
// where bilinear interpolation has a kink. Gradient checks move them off it.
template <typename T>
void randomize_offset_heads(ParamStore<T>& p, std::uint64_t seed, double scale) {
    for (auto& [name, t] : p) {
        if (name.find(".offset_") == std::string::npos) continue;
        auto r = oracle::random_tensor<T>(t.shape(), seed++, -scale, scale);
        std::copy(r.values().begin(), r.values().end(), t.data());
    }
}

// Rebuilds a store whose tensors are the probed inputs, in store order.
struct ProbeSet {
    std::vector<std::string> names;
    std::vector<Tensor<double>> tensors;

    explicit ProbeSet(const ParamStore<double>& p, std::string_view filter = "") {
        for (const auto& [name, t] : p)
            if (filter.empty() || name.find(filter) != std::string::npos) {
                names.push_back(name);
                tensors.push_back(t);
            }
    }
    ParamStore<double> rebuild(const ParamStore<double>& base, const std::vector<Tensor<double>>& in,
                               std::size_t first) const {
        ParamStore<double> out;
        for (const auto& [name, t] : base) {
            auto it = std::find(names.begin(), names.end(), name);
            out.add(name, it == names.end() ? t : in[first + (it - names.begin())]);
        }
        return out;
    }
};

std::size_t conv_count(std::size_t in, std::size_t out, std::size_t k) { return out * in * k * k + out; }
std::size_t res_pair_count(std::size_t ch) { return 4 * conv_count(ch, ch, 3); }

// Closed-form parameter count, summed level by level.
std::size_t formula_count(const NetConfig& c) {
    const std::size_t c0 = c.base_channels, m = c.blocks, k = c.kernel(), head = 3 * c.taps;
    const std::size_t corr = (2 * c.radius + 1) * (2 * c.radius + 1);
    std::size_t branch = c.use_pfem ? conv_count(3, c0, 3) + 2 * conv_count(c0, c0, 3) + conv_count(3 * c0, c0, 1)
                                    : conv_count(3, c0, 3);
    std::size_t eam = 0;
    for (std::size_t i = 1; i < m; ++i) {
        const std::size_t e = c0 << (i - 1), prev = i == 1 ? c0 : e / 2;
        branch += conv_count(prev, e, 3) + res_pair_count(e);
        std::size_t ctx = 2 * e + corr;
        if (c.eam_context == EamContext::features_only) ctx = 2 * e;
        if (c.eam_context == EamContext::corr_only) ctx = corr;
        eam += 2 * conv_count(ctx, head, 3) + 2 * conv_count(e, e, k);
    }
    const std::size_t top = c0 << (m - 2);
    std::size_t total = (c.share_encoder ? 1 : 2) * branch + (c.use_eam ? eam : 0);
    total += conv_count(2 * top, top, 3) + res_pair_count(top);
    for (std::size_t j = 1; j < m; ++j) {
        const std::size_t skip = c0 << (m - j - 1), out = c0 << (m - 1 - j);
        const std::size_t prev = j == 1 ? top : out * 2;
        const std::size_t in = 2 * skip + prev;
        if (c.use_dam) total += 2 * conv_count(in, head, 3) + 2 * conv_count(skip, skip, k);
        total += conv_count(in, out, 3) + res_pair_count(out);
    }
    return total + conv_count(c0, 3, 3);
}

}  // namespace

TEST_CASE("NetConfig defaults, ablations and validation") {
    NetConfig def;
    CHECK(def.blocks == 5);
    CHECK(def.base_channels == 16);
    CHECK(def.radius == 9);
    CHECK(def.taps == 9);
    CHECK(NetConfig::desk().radius == 4);
    CHECK(def.encoder_channels(1) == 16);
    CHECK(def.encoder_channels(4) == 128);
    CHECK(def.decoder_channels(1) == 128);
    CHECK(def.decoder_channels(4) == 16);
    CHECK(def.size_multiple() == 8);

    CHECK_FALSE(NetConfig::ablation(1).share_encoder);
    CHECK_FALSE(NetConfig::ablation(2).use_pfem);
    CHECK(NetConfig::ablation(3).loss == LossMode::mse);
    CHECK_FALSE(NetConfig::ablation(4).use_eam);
    CHECK(NetConfig::ablation(5).eam_context == EamContext::features_only);
    CHECK(NetConfig::ablation(6).eam_context == EamContext::corr_only);
    CHECK_FALSE(NetConfig::ablation(7).use_dam);
    CHECK_THROWS_AS(NetConfig::ablation(8), ConfigError);

    NetConfig bad = def;
    bad.blocks = 1;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = def;
    bad.taps = 8;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = def;
    bad.radius = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);

    CHECK(parse_eam_context("corr_only") == EamContext::corr_only);
    CHECK(parse_loss_mode(to_string(LossMode::mse)) == LossMode::mse);
    CHECK_THROWS_AS(parse_loss_mode("l1"), ConfigError);
}

TEST_CASE("ParamStore keeps insertion order and rejects duplicates") {
    ParamStore<float> p;
    p.add("b", Tensor<float>::zeros({1, 1, 1, 2}));
    p.add("a", Tensor<float>::zeros({1, 1, 1, 3}));
    CHECK_THROWS_AS(p.add("b", Tensor<float>::zeros({1, 1, 1, 1})), ConfigError);
    std::vector<std::string> order;
    for (const auto& [name, t] : p) order.push_back(name);
    CHECK(order == std::vector<std::string>{"b", "a"});
    CHECK(p.parameter_count() == 5);
    CHECK_THROWS_AS(p.get("c"), ConfigError);

    auto copy = p.clone();
    copy.get("a").data()[0] = 1.0f;
    CHECK(p.get("a").values()[0] == 0.0f);
}

TEST_CASE("initialization") {
    const NetConfig cfg = NetConfig::desk();
    auto p = init_params<float>(cfg, 7);

    const auto& w = p.get("enc.block1.res1.conv1.weight");
    REQUIRE(w.shape() == Shape{16, 16, 3, 3});
    double sum = 0, sq = 0;
    for (float v : w.values()) sum += v, sq += double(v) * v;
    const double mean = sum / w.numel();
    const double sd = std::sqrt(sq / w.numel() - mean * mean);
    CHECK(std::abs(sd - std::sqrt(2.0 / 144.0)) < 0.05 * std::sqrt(2.0 / 144.0));
    CHECK(std::abs(mean) < 0.01);

    for (const auto& [name, t] : p) {
        const bool zero = name.find(".offset_") != std::string::npos || name.ends_with(".bias");
        if (!zero) continue;
        for (float v : t.values()) REQUIRE(v == 0.0f);
    }

    auto again = init_params<float>(cfg, 7);
    auto other = init_params<float>(cfg, 8);
    bool any_diff = false;
    for (const auto& [name, t] : p) {
        CHECK(bitwise_equal(t, again.get(name)));
        if (!bitwise_equal(t, other.get(name))) any_diff = true;
    }
    CHECK(any_diff);

    // Parameters present in an ablated configuration start from the same values.
    auto no_eam = init_params<float>(NetConfig::ablation(4, cfg), 7);
    for (const auto& [name, t] : no_eam) CHECK(bitwise_equal(t, p.get(name)));
}

TEST_CASE("parameter naming and count") {
    NetConfig cfg = NetConfig::desk();
    auto specs = expected_parameters(cfg);
    std::set<std::string> names;
    for (const auto& s : specs) names.insert(s.name);
    CHECK(names.size() == specs.size());
    CHECK(names.count("enc.pfem.fuse.weight"));
    CHECK(names.count("enc.block2.res2.conv1.weight"));
    CHECK(names.count("eam4.offset_right.weight"));
    CHECK(names.count("dam4.deform_left.bias"));
    CHECK(names.count("dec5.conv.weight"));
    CHECK_FALSE(names.count("eam5.offset_left.weight"));

    auto unshared = expected_parameters(NetConfig::ablation(1, cfg));
    bool left = false, right = false;
    for (const auto& s : unshared) {
        left |= s.name.starts_with("enc_left.");
        right |= s.name.starts_with("enc_right.");
        CHECK_FALSE(s.name.starts_with("enc."));
    }
    CHECK((left && right));

    for (NetConfig c : {cfg, tiny(), NetConfig::ablation(1, tiny()), NetConfig::ablation(2, cfg),
                        NetConfig::ablation(6, cfg), NetConfig::ablation(7, tiny())}) {
        CHECK(init_params<float>(c, 1).parameter_count() == formula_count(c));
    }
    // Hand-evaluated anchor for the tiny configuration.
    CHECK(formula_count(tiny()) == 71231);
}

TEST_CASE("stage shapes") {
    const NetConfig cfg = NetConfig::desk();
    auto p = init_params<float>(cfg, 3);
    const int c0 = cfg.base_channels;
    auto img = oracle::random_tensor<float>({1, 3, 64, 64}, 1, 0, 1);

    CHECK(pfem_forward(img, p, cfg).shape() == Shape{1, c0, 64, 64});
    CHECK_THROWS_AS(pfem_forward(oracle::random_tensor<float>({1, 4, 64, 64}, 1), p, cfg), DimensionError);
    auto zero = pfem_forward(Tensor<float>::zeros({1, 3, 16, 16}), p, cfg);
    for (float v : zero.values()) REQUIRE(v == 0.0f);

    auto feat = oracle::random_tensor<float>({1, c0, 64, 64}, 2);
    CHECK(encoder_block_forward(1, feat, p, cfg).shape() == Shape{1, c0, 64, 64});
    CHECK(encoder_block_forward(2, feat, p, cfg).shape() == Shape{1, 2 * c0, 32, 32});
    CHECK_THROWS_AS(encoder_block_forward(0, feat, p, cfg), DimensionError);
    CHECK_THROWS_AS(encoder_block_forward(5, feat, p, cfg), DimensionError);

    auto e2 = oracle::random_tensor<float>({1, 2 * c0, 32, 32}, 3);
    auto e2r = oracle::random_tensor<float>({1, 2 * c0, 32, 32}, 4);
    auto aligned = eam_forward(2, e2, e2r, p, cfg);
    CHECK(aligned.left.shape() == e2.shape());
    CHECK(aligned.right.shape() == e2.shape());

    auto b = oracle::random_tensor<float>({1, 8 * c0, 8, 8}, 5);
    CHECK(encoder_bottleneck(b, b, p, cfg).shape() == Shape{1, 8 * c0, 8, 8});
    for (float v : encoder_bottleneck(Tensor<float>::zeros(b.shape()), Tensor<float>::zeros(b.shape()), p, cfg)
                       .values())
        REQUIRE(v == 0.0f);
    CHECK_THROWS_AS(encoder_bottleneck(b, e2, p, cfg), DimensionError);

    auto d1 = dam_forward(1, b, b, b, p, cfg);
    CHECK(d1.decoder.shape() == Shape{1, 8 * c0, 8, 8});
    CHECK(d1.left.shape() == Shape{1, 8 * c0, 8, 8});
    auto skip = oracle::random_tensor<float>({1, 4 * c0, 16, 16}, 6);
    auto d2 = dam_forward(2, b, skip, skip, p, cfg);
    CHECK(d2.decoder.shape() == Shape{1, 8 * c0, 16, 16});
    CHECK_THROWS_AS(dam_forward(2, b, e2, e2, p, cfg), DimensionError);

    CHECK(decoder_block_forward(1, b, b, b, p, cfg).shape() == Shape{1, 8 * c0, 8, 8});
    CHECK(decoder_block_forward(2, d2.left, d2.decoder, d2.right, p, cfg).shape() == Shape{1, 4 * c0, 16, 16});
    CHECK(decoder_block_forward(5, {}, feat, {}, p, cfg).shape() == Shape{1, 3, 64, 64});
    CHECK_THROWS_AS(decoder_block_forward(6, {}, feat, {}, p, cfg), DimensionError);
}

TEST_CASE("full forward: shape, determinism, divisibility") {
    const NetConfig cfg = NetConfig::desk();
    auto p = init_params<float>(cfg, 11);
    auto l = oracle::random_tensor<float>({1, 3, 64, 64}, 1, 0, 1);
    auto r = oracle::random_tensor<float>({1, 3, 64, 64}, 2, 0, 1);
    auto a = dpanet_forward(l, r, p, cfg);
    CHECK(a.shape() == Shape{1, 3, 64, 64});
    CHECK(bitwise_equal(a, dpanet_forward(l, r, init_params<float>(cfg, 11), cfg)));

    auto out = restore_image(l, r, p, cfg);
    for (float v : out.values()) REQUIRE((v >= 0.0f && v <= 1.0f));

    auto odd = oracle::random_tensor<float>({1, 3, 60, 64}, 3, 0, 1);
    try {
        dpanet_forward(odd, odd, p, cfg);
        FAIL("expected a divisibility error");
    } catch (const DimensionError& e) {
        CHECK(std::string(e.what()).find("multiple of 8") != std::string::npos);
    }
}

TEST_CASE("shared encoder gives identical features for identical views") {
    const NetConfig cfg = NetConfig::desk();
    auto p = init_params<float>(cfg, 5);
    auto img = oracle::random_tensor<float>({1, 3, 32, 32}, 9, 0, 1);
    ForwardTrace<float> trace;
    dpanet_forward(img, img, p, cfg, &trace);
    REQUIRE(trace.pre_align_left.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) CHECK(bitwise_equal(trace.pre_align_left[i], trace.pre_align_right[i]));

    const NetConfig unshared = NetConfig::ablation(1, cfg);
    ForwardTrace<float> t2;
    dpanet_forward(img, img, init_params<float>(unshared, 5), unshared, &t2);
    CHECK_FALSE(bitwise_equal(t2.pre_align_left[0], t2.pre_align_right[0]));
}

TEST_CASE("zero offset heads halve a plain convolution") {
    const NetConfig cfg = NetConfig::desk();
    auto p = init_params<float>(cfg, 21);
    // Non-zero deform bias would not be halved; keep it at its zero init.
    auto el = oracle::random_tensor<float>({1, 32, 16, 16}, 1);
    auto er = oracle::random_tensor<float>({1, 32, 16, 16}, 2);
    auto out = eam_forward(2, el, er, p, cfg);
    auto wl = oracle::conv2d(el, p.get("eam2.deform_left.weight"), p.get("eam2.deform_left.bias"), 1, 1);
    auto wr = oracle::conv2d(er, p.get("eam2.deform_right.weight"), p.get("eam2.deform_right.bias"), 1, 1);
    for (auto& v : wl) v *= 0.5;
    for (auto& v : wr) v *= 0.5;
    CHECK(oracle::max_rel_diff(out.left.values(), wl) < 1e-5);
    CHECK(oracle::max_rel_diff(out.right.values(), wr) < 1e-5);

    auto same = eam_forward(2, el, el, p, cfg);
    CHECK(oracle::max_rel_diff(same.left.values(), wl) < 1e-5);

    auto dec = oracle::random_tensor<float>({1, 64, 8, 8}, 3);
    auto skip_l = oracle::random_tensor<float>({1, 32, 16, 16}, 4);
    auto skip_r = oracle::random_tensor<float>({1, 32, 16, 16}, 5);
    auto dam = dam_forward(3, dec, skip_l, skip_r, p, cfg);
    auto dl = oracle::conv2d(skip_l, p.get("dam3.deform_left.weight"), p.get("dam3.deform_left.bias"), 1, 1);
    auto dr = oracle::conv2d(skip_r, p.get("dam3.deform_right.weight"), p.get("dam3.deform_right.bias"), 1, 1);
    for (auto& v : dl) v *= 0.5;
    for (auto& v : dr) v *= 0.5;
    CHECK(oracle::max_rel_diff(dam.left.values(), dl) < 1e-5);
    CHECK(oracle::max_rel_diff(dam.right.values(), dr) < 1e-5);
}

TEST_CASE("toggles pass features through untouched") {
    NetConfig cfg = NetConfig::desk();
    cfg.use_eam = false;
    cfg.use_dam = false;
    auto p = init_params<float>(cfg, 2);
    auto a = oracle::random_tensor<float>({1, 32, 16, 16}, 1);
    auto b = oracle::random_tensor<float>({1, 32, 16, 16}, 2);
    auto e = eam_forward(2, a, b, p, cfg);
    CHECK(bitwise_equal(e.left, a));
    CHECK(bitwise_equal(e.right, b));
    auto d = dam_forward(1, a, a, b, p, cfg);
    CHECK(bitwise_equal(d.left, a));
    CHECK(bitwise_equal(d.right, b));
    CHECK(bitwise_equal(d.decoder, a));
}

TEST_CASE("all seven ablations run forward and backward") {
    for (int id = 1; id <= 7; ++id) {
        CAPTURE(id);
        const NetConfig cfg = NetConfig::ablation(id);
        auto p = init_params<float>(cfg, 3);
        auto l = oracle::random_tensor<float>({2, 3, 32, 32}, 1, 0, 1);
        auto r = oracle::random_tensor<float>({2, 3, 32, 32}, 2, 0, 1);
        auto out = dpanet_forward(l, r, p, cfg);
        CHECK(out.shape() == Shape{2, 3, 32, 32});
        mean(out).backward();
        bool grad_seen = false;
        for (const auto& [name, t] : p)
            for (float g : t.grad()) {
                REQUIRE(std::isfinite(g));
                grad_seen |= g != 0.0f;
            }
        CHECK(grad_seen);
    }
}

TEST_CASE("module gradients match finite differences") {
    const NetConfig cfg = tiny();
    auto base = init_params<double>(cfg, 4);
    randomize_offset_heads(base, 100, 0.05);
    const GradCheckOptions opts{1e-4, 24, 3};

    SUBCASE("pyramid extractor") {
        ProbeSet probe(base, "pfem");
        auto img = oracle::random_tensor<double>({1, 3, 8, 8}, 1, 0, 1, true);
        std::vector<Tensor<double>> in{img};
        in.insert(in.end(), probe.tensors.begin(), probe.tensors.end());
        auto rep = finite_diff_check(
            [&](const auto& x) { return pfem_forward(x[0], probe.rebuild(base, x, 1), cfg); }, in, opts);
        CHECK(rep.max_relative_error < 1e-4);
    }
    SUBCASE("one EAM") {
        ProbeSet probe(base, "eam1");
        auto l = oracle::random_tensor<double>({1, 4, 6, 6}, 2, -1, 1, true);
        auto r = oracle::random_tensor<double>({1, 4, 6, 6}, 3, -1, 1, true);
        std::vector<Tensor<double>> in{l, r};
        in.insert(in.end(), probe.tensors.begin(), probe.tensors.end());
        auto rep = finite_diff_check(
            [&](const auto& x) {
                auto v = eam_forward(1, x[0], x[1], probe.rebuild(base, x, 2), cfg);
                return concat_channels<double>({v.left, v.right});
            },
            in, opts);
        CHECK(rep.max_relative_error < 1e-4);
    }
    SUBCASE("bottleneck") {
        ProbeSet probe(base, "bottleneck");
        auto l = oracle::random_tensor<double>({1, 8, 4, 4}, 4, -1, 1, true);
        auto r = oracle::random_tensor<double>({1, 8, 4, 4}, 5, -1, 1, true);
        std::vector<Tensor<double>> in{l, r};
        in.insert(in.end(), probe.tensors.begin(), probe.tensors.end());
        auto rep = finite_diff_check(
            [&](const auto& x) { return encoder_bottleneck(x[0], x[1], probe.rebuild(base, x, 2), cfg); }, in,
            opts);
        CHECK(rep.max_relative_error < 1e-4);
    }
    SUBCASE("one DAM and its fusion stage") {
        ProbeSet probe(base, "2.");
        auto dec = oracle::random_tensor<double>({1, 8, 3, 3}, 6, -1, 1, true);
        auto sl = oracle::random_tensor<double>({1, 4, 6, 6}, 7, -1, 1, true);
        auto sr = oracle::random_tensor<double>({1, 4, 6, 6}, 8, -1, 1, true);
        std::vector<Tensor<double>> in{dec, sl, sr};
        in.insert(in.end(), probe.tensors.begin(), probe.tensors.end());
        auto rep = finite_diff_check(
            [&](const auto& x) {
                auto p = probe.rebuild(base, x, 3);
                auto a = dam_forward(2, x[0], x[1], x[2], p, cfg);
                return decoder_block_forward(2, a.left, a.decoder, a.right, p, cfg);
            },
            in, opts);
        CHECK(rep.max_relative_error < 1e-4);
    }
}

TEST_CASE("tiny end-to-end model gradient") {
    const NetConfig cfg = tiny();
    auto base = init_params<double>(cfg, 4);
    randomize_offset_heads(base, 100, 0.05);
    ProbeSet probe(base);
    auto l = oracle::random_tensor<double>({1, 3, 16, 16}, 1, 0, 1, true);
    auto r = oracle::random_tensor<double>({1, 3, 16, 16}, 2, 0, 1, true);
    std::vector<Tensor<double>> in{l, r};
    in.insert(in.end(), probe.tensors.begin(), probe.tensors.end());
    auto rep = finite_diff_check(
        [&](const auto& x) { return dpanet_forward(x[0], x[1], probe.rebuild(base, x, 2), cfg); }, in,
        {1e-4, 6, 9});
    CHECK(rep.max_relative_error < 1e-3);
}

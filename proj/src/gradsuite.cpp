#include "dpanet/gradsuite.hpp"

#include <algorithm>
#include <cstdio>
#include <random>

#include "dpanet/align.hpp"
#include "dpanet/model.hpp"
#include "dpanet/ops.hpp"
#include "dpanet/train.hpp"

namespace dpanet {

namespace {

using Inputs = std::vector<Tensor<double>>;

Tensor<double> random(Shape s, std::uint64_t seed, double lo, double hi, bool grad = true) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(s.numel());
    for (double& x : v) x = u(rng);
    return Tensor<double>(s, std::move(v), grad);
}

// Probes the named parameters of `base` alongside the leading data inputs.
struct Probe {
    std::vector<std::string> names;
    Inputs inputs;
    std::size_t first;

    Probe(const ParamStore<double>& base, std::string_view filter, Inputs data) : inputs(std::move(data)) {
        first = inputs.size();
        for (const auto& [name, t] : base)
            if (filter.empty() || name.find(filter) != std::string::npos) {
                names.push_back(name);
                inputs.push_back(t);
            }
    }

    ParamStore<double> rebuild(const ParamStore<double>& base, const Inputs& in) const {
        ParamStore<double> out;
        for (const auto& [name, t] : base) {
            auto it = std::find(names.begin(), names.end(), name);
            out.add(name, it == names.end() ? t : in[first + (it - names.begin())]);
        }
        return out;
    }
};

NetConfig tiny_config() {
    NetConfig c;
    c.base_channels = 4;
    c.blocks = 3;
    c.radius = 2;
    return c;
}

// Zero-initialized offset heads sample exactly on the pixel grid; a small
// random offset keeps the check representative of a trained model.
ParamStore<double> tiny_params(const NetConfig& cfg) {
    auto p = init_params<double>(cfg, 4);
    std::uint64_t seed = 100;
    for (auto& [name, t] : p) {
        if (name.find(".offset_") == std::string::npos) continue;
        auto r = random(t.shape(), seed++, -0.05, 0.05, false);
        std::copy(r.values().begin(), r.values().end(), t.data());
    }
    p.set_requires_grad(true);
    return p;
}

}  // namespace

std::vector<GradSuiteRow> run_gradient_suite() {
    std::vector<GradSuiteRow> rows;
    auto check = [&rows](std::string name, double tol, const GradClosure& f, const Inputs& in,
                         GradCheckOptions opts = {}) {
        rows.push_back({std::move(name), tol, finite_diff_check(f, in, opts)});
    };
    const double tol = 1e-4;

    {
        auto x = random({2, 3, 7, 6}, 1, -1, 1);
        auto w = random({4, 3, 3, 3}, 2, -1, 1);
        auto b = random({4, 1, 1, 1}, 3, -1, 1);
        check("conv2d 3x3 pad 1", tol,
              [](const Inputs& in) { return conv2d(in[0], ConvParams<double>{in[1], in[2], 1, 1}); }, {x, w, b});
        check("conv2d 3x3 stride 2", tol,
              [](const Inputs& in) { return conv2d(in[0], ConvParams<double>{in[1], in[2], 2, 1}); }, {x, w, b});
    }
    {
        auto x = random({2, 3, 5, 5}, 4, -1, 1);
        check("relu", tol, [](const Inputs& in) { return relu(in[0]); }, {x});
        check("leaky_relu 0.1", tol, [](const Inputs& in) { return leaky_relu(in[0], 0.1); }, {x});
        check("sigmoid", tol, [](const Inputs& in) { return sigmoid(in[0]); }, {x});
        check("maxpool2", tol, [](const Inputs& in) { return maxpool2(in[0]); }, {random({2, 3, 6, 8}, 5, -1, 1)});
        check("upsample_bilinear2", tol, [](const Inputs& in) { return upsample_bilinear2(in[0]); }, {x});
    }
    {
        auto l = random({2, 3, 6, 7}, 6, -1, 1);
        auto r = random({2, 3, 6, 7}, 7, -1, 1);
        check("cost_volume d=2", tol, [](const Inputs& in) { return cost_volume(in[0], in[1], 2); }, {l, r});
    }
    {
        const Shape s{2, 3, 6, 7};
        const std::vector<std::string> parts{"input", "weights", "offsets", "modulation"};
        for (std::size_t part = 0; part < parts.size(); ++part) {
            Inputs in{random(s, 8, -1, 1, part == 0), random({4, 3, 3, 3}, 9, -1, 1, part == 1),
                      random({4, 1, 1, 1}, 10, -1, 1, part == 1), random({2, 18, 6, 7}, 11, -2.5, 2.5, part == 2),
                      random({2, 9, 6, 7}, 12, 0.1, 1.0, part == 3)};
            check("deform_conv2d w.r.t. " + parts[part], tol,
                  [](const Inputs& x) { return deform_conv2d(x[0], DeformKernel<double>{x[1], x[2]}, x[3], x[4]); },
                  in, {1e-4, 128, 7});
        }
    }

    const NetConfig cfg = tiny_config();
    const ParamStore<double> base = tiny_params(cfg);
    const GradCheckOptions module_opts{1e-4, 24, 3};
    {
        Probe p(base, "pfem", {random({1, 3, 8, 8}, 13, 0, 1)});
        check("pfem", tol, [&](const Inputs& x) { return pfem_forward(x[0], p.rebuild(base, x), cfg); }, p.inputs,
              module_opts);
    }
    {
        Probe p(base, "eam1", {random({1, 4, 6, 6}, 14, -1, 1), random({1, 4, 6, 6}, 15, -1, 1)});
        check("EAM level 1", tol,
              [&](const Inputs& x) {
                  auto v = eam_forward(1, x[0], x[1], p.rebuild(base, x), cfg);
                  return concat_channels<double>({v.left, v.right});
              },
              p.inputs, module_opts);
    }
    {
        Probe p(base, "2.",
                {random({1, 8, 3, 3}, 16, -1, 1), random({1, 4, 6, 6}, 17, -1, 1), random({1, 4, 6, 6}, 18, -1, 1)});
        check("DAM 2 + fusion block", tol,
              [&](const Inputs& x) {
                  auto ps = p.rebuild(base, x);
                  auto a = dam_forward(2, x[0], x[1], x[2], ps, cfg);
                  return decoder_block_forward(2, a.left, a.decoder, a.right, ps, cfg);
              },
              p.inputs, module_opts);
    }
    {
        auto pred = random({2, 3, 5, 4}, 19, 0, 1);
        auto target = random({2, 3, 5, 4}, 20, 0, 1);
        for (LossMode mode : {LossMode::charbonnier, LossMode::mse})
            check(std::string("reconstruction_loss ") + to_string(mode), tol,
                  [mode](const Inputs& in) { return reconstruction_loss(in[0], in[1], mode, 1e-3); }, {pred, target});
    }
    {
        Probe p(base, "", {random({1, 3, 16, 16}, 21, 0, 1), random({1, 3, 16, 16}, 22, 0, 1)});
        check("tiny end-to-end model", 1e-3,
              [&](const Inputs& x) { return dpanet_forward(x[0], x[1], p.rebuild(base, x), cfg); }, p.inputs,
              {1e-4, 6, 9});
    }
    return rows;
}

std::string format_gradient_table(const std::vector<GradSuiteRow>& rows) {
    std::string out;
    char line[160];
    std::snprintf(line, sizeof line, "%-34s %12s %10s %7s %7s  %s\n", "check", "max_rel_err", "tolerance", "probes",
                  "kinked", "result");
    out += line;
    int failed = 0;
    for (const auto& r : rows) {
        std::snprintf(line, sizeof line, "%-34s %12.3e %10.0e %7zu %7zu  %s\n", r.name.c_str(),
                      r.report.max_relative_error, r.tolerance, r.report.probes, r.report.kinked,
                      r.passed() ? "PASS" : "FAIL");
        out += line;
        failed += !r.passed();
    }
    std::snprintf(line, sizeof line, "%zu checks, %d failed: %s\n", rows.size(), failed, failed ? "FAIL" : "PASS");
    out += line;
    return out;
}

}  // namespace dpanet

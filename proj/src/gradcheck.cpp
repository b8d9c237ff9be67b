#include "dpanet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "dpanet/ops.hpp"

namespace dpanet {

GradCheckReport finite_diff_check(const GradClosure& f, const std::vector<Tensor<double>>& inputs,
                                  const GradCheckOptions& options) {
    std::vector<Tensor<double>> args = inputs;
    for (auto& t : args) t.zero_grad();

    std::mt19937_64 rng(options.seed);
    std::normal_distribution<double> normal(0.0, 1.0);

    std::vector<double> projection;
    {
        Tensor<double> out = f(args);
        projection.resize(out.numel());
        for (double& p : projection) p = normal(rng);
        Tensor<double> loss = weighted_sum(out, projection);
        if (loss.requires_grad()) loss.backward();
    }

    BranchTape tape;
    auto evaluate = [&]() {
        NoGradGuard guard;
        tape.rewind();
        Tensor<double> out = f(args);
        double acc = 0.0;
        auto v = out.values();
        for (std::size_t i = 0; i < projection.size(); ++i) acc += v[i] * projection[i];
        return acc;
    };
    evaluate();
    tape.set_mode(BranchTape::Mode::replay);

    GradCheckReport report;
    const double h = options.step;
    for (auto& t : args) {
        if (!t.requires_grad()) continue;
        const std::size_t count = t.numel();
        std::vector<std::size_t> coords(count);
        std::iota(coords.begin(), coords.end(), std::size_t{0});
        if (count > options.max_probes) {
            std::shuffle(coords.begin(), coords.end(), rng);
            coords.resize(options.max_probes);
            std::sort(coords.begin(), coords.end());
        }
        auto grad = t.grad();
        std::vector<double> analytic(grad.begin(), grad.end());
        auto values = t.values();
        for (std::size_t idx : coords) {
            const double saved = values[idx];
            tape.set_mode(BranchTape::Mode::replay);
            values[idx] = saved + h;
            const double plus = evaluate();
            values[idx] = saved - h;
            const double minus = evaluate();
            values[idx] = saved;
            const double numeric = (plus - minus) / (2.0 * h);
            if (tape.crossings() > 0) ++report.kinked;
            const double err = std::abs(analytic[idx] - numeric) / std::max(1.0, std::abs(numeric));
            report.max_relative_error = std::max(report.max_relative_error, err);
            ++report.probes;
        }
    }
    return report;
}

}  // namespace dpanet

#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "dpanet/tensor.hpp"

namespace dpanet {

/// Maps the probed inputs to an output of any shape. Must be deterministic
/// and read the inputs' current values on every call.
using GradClosure = std::function<Tensor<double>(const std::vector<Tensor<double>>&)>;

struct GradCheckOptions {
    double step = 1e-4;
    std::size_t max_probes = 64;  // per input; smaller tensors are probed fully
    std::uint64_t seed = 0x5eed;
};

struct GradCheckReport {
    double max_relative_error = 0.0;
    std::size_t probes = 0;
    std::size_t kinked = 0;  // probes whose stencil crossed a kink
};

/// Compares reverse-mode gradients against central differences.
///
/// The closure output is reduced to a scalar with a fixed seeded random
/// projection, so every output element contributes. Only inputs with
/// requires_grad set are probed. The error for one coordinate is
/// |analytic - numeric| / max(1, |numeric|).
///
/// ReLU, max-pool and bilinear sampling are only piecewise smooth, and a
/// central difference whose stencil straddles a kink measures the jump in
/// slope instead of the derivative. The perturbed evaluations therefore
/// replay the branch decisions of the unperturbed one (see BranchTape),
/// differentiating the smooth piece the analytic gradient belongs to.
/// Probes where a decision would have flipped are counted in `kinked`.
GradCheckReport finite_diff_check(const GradClosure& f, const std::vector<Tensor<double>>& inputs,
                                  const GradCheckOptions& options = {});

}  // namespace dpanet

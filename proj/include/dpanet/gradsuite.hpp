#pragma once

#include <string>
#include <vector>

#include "dpanet/gradcheck.hpp"

namespace dpanet {

struct GradSuiteRow {
    std::string name;
    double tolerance = 0;
    GradCheckReport report;

    bool passed() const { return report.max_relative_error < tolerance; }
};

/// Finite-difference checks in double precision (step 1e-4) over every
/// differentiable operator, the model modules and the tiny end-to-end
/// model (C0 = 4, M = 3, d = 2). Rows come back in a fixed order.
std::vector<GradSuiteRow> run_gradient_suite();

/// Fixed-width table, one row per check, ending in a PASS/FAIL summary line.
std::string format_gradient_table(const std::vector<GradSuiteRow>& rows);

}  // namespace dpanet

#pragma once

// ---------------------------------------------------------------------------
// Finite-difference check of every registered loss against its analytic
// gradient: cross_entropy, sce_l_in, joint_mmd, l_out, l_inner, l_out_online.
// Fixtures are small (<= 3 layers, feature dim <= 16, batch <= 8) and the
// mask decoder starts with small weights so the gate is not saturated.
// ---------------------------------------------------------------------------

#include <cstdint>
#include <string>
#include <vector>

#include "pcada/nn.hpp"

namespace pcada {

struct GradSuiteOptions {
    double h = 1e-5;
    double tolerance = 1e-4;
    std::uint64_t seed = 0;
    std::string corrupt;  // loss name whose analytic gradient is deliberately perturbed
};

struct GradSuiteEntry {
    std::string loss;
    GradCheckResult result;
    bool passed = false;
};

const std::vector<std::string>& grad_suite_losses();
std::vector<GradSuiteEntry> run_grad_suite(const GradSuiteOptions& opts = {});

} // namespace pcada

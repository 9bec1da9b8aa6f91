#pragma once

// ---------------------------------------------------------------------------
// Kernel two-sample machinery.
//
// joint_mmd is the biased (V-statistic) squared MMD under a product of
// per-level Gaussian kernels:
//
//   k(u, v) = prod_l exp(-||u_l - v_l||^2 / (2 sigma_l^2))
//   MMD^2   = mean K(A,A) + mean K(B,B) - 2 mean K(A,B)
//
// Each level is one representation of the same samples (e.g. masked features
// and softmax predictions). A level's sigma is either fixed in KernelConfig or
// taken from the median heuristic on the pooled pair of batches; in both
// cases it is a constant under differentiation.
// ---------------------------------------------------------------------------

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "pcada/matrix.hpp"

namespace pcada {

struct KernelConfig {
    // Fixed sigma for every level; empty = median heuristic per level.
    std::optional<double> bandwidth;

    void validate() const;
};

struct DivergenceValue {
    double value = 0.0;
    std::vector<Matrix> grad_a;  // dMMD^2 / d repsA[level]
    std::vector<Matrix> grad_b;
    std::vector<double> sigma_sq;
};

// Returns sigma with sigma^2 = median pairwise squared distance (1.0 when the
// median is zero). An even pair count takes the mean of the two middle values.
double median_heuristic(const Matrix& samples);

// Per-level sigma^2 that joint_mmd would use for this pair.
std::vector<double> resolve_bandwidths(std::span<const Matrix> reps_a, std::span<const Matrix> reps_b,
                                       const KernelConfig& cfg);

DivergenceValue joint_mmd(std::span<const Matrix> reps_a, std::span<const Matrix> reps_b,
                          const KernelConfig& cfg);
DivergenceValue joint_mmd_fixed(std::span<const Matrix> reps_a, std::span<const Matrix> reps_b,
                                std::span<const double> sigma_sq);

struct AlphaHat {
    double value = 0.0;
    std::size_t argmax = 0;  // pair (argmax, argmax + 1)
    std::vector<double> pair_values;
    DivergenceValue pair;
};

// Max over consecutive domain pairs of joint_mmd. `trajectory[i]` holds the
// per-level representations of domain i. Ties go to the earliest pair.
AlphaHat alpha_hat(std::span<const std::vector<Matrix>> trajectory, const KernelConfig& cfg);

} // namespace pcada

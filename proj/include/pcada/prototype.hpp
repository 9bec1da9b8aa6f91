#pragma once

// ---------------------------------------------------------------------------
// Adaptive prototype mechanism.
//
// Class prototypes live in the classifier's input space. Unlabeled samples
// get a pseudo-label only when the gap between the second-nearest and the
// nearest prototype exceeds a margin; accepted samples pull their prototype
// towards them with an annealed step. The classifier replays the prototypes
// through a symmetric cross-entropy:
//
//   L_in = 1/K sum_k [ a * CE(f(c_k), k) + b * RCE(k, f(c_k)) ]
//   RCE  = -sum_j p_j log q_j,  q = onehot(k) with log 0 clamped to log(1e-4)
//        = -log(1e-4) * (1 - p_k)
// ---------------------------------------------------------------------------

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pcada/matrix.hpp"
#include "pcada/nn.hpp"

namespace pcada {

inline constexpr double kReverseCeClamp = 1e-4;

struct PrototypeBank {
    Matrix centers;  // K x D

    std::size_t classes() const { return centers.rows(); }
    std::size_t dim() const { return centers.cols(); }
    std::uint64_t checksum() const { return fnv1a(centers.values()); }
};

struct AnnealSchedule {
    double t1 = 20.0;
    double t2 = 40.0;
    double eta_f = 0.1;

    void validate() const;
};

// Absent = abstain.
using PseudoLabel = std::optional<int>;

PrototypeBank init_prototypes(const Matrix& source_feats, std::span<const int> labels, std::size_t classes);

Vector prototype_distances(std::span<const double> feat, const PrototypeBank& bank);

PseudoLabel assign_pseudo_label(std::span<const double> feat, const PrototypeBank& bank, double delta_d);

double anneal(double t, const AnnealSchedule& s);

void progressive_update(PrototypeBank& bank, std::span<const double> feat, PseudoLabel label, double eta);

// Runs assign + update sequentially over the rows of `feats`; returns the
// number of accepted pseudo-labels.
std::size_t update_prototypes(PrototypeBank& bank, const Matrix& feats, double delta_d, double eta);

// L_in; its gradient w.r.t. the classifier parameters is added into the
// classifier's buffers scaled by `grad_scale` (the annealed weight).
double sce_loss(const PrototypeBank& bank, DenseNet& classifier, double a, double b, double grad_scale = 1.0);

// CSV: header "class,c0,...", one row per class.
void export_prototypes_csv(const PrototypeBank& bank, const std::filesystem::path& path);
PrototypeBank import_prototypes_csv(const std::filesystem::path& path);

} // namespace pcada

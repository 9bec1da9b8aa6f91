#pragma once

// ---------------------------------------------------------------------------
// Synthetic evolving-domain benchmarks and the on-disk dataset layout.
//
// A dataset is one labeled source batch plus time-ordered target domains.
// Each domain carries disjoint unlabeled support and query splits and a
// labeled eval split; eval labels exist only to fill the accuracy matrix.
//
// Directory layout (UTF-8 CSV, header row names the columns):
//   source.csv              label,x0,...,x{D-1}
//   domain_<t>_support.csv  x0,...,x{D-1}
//   domain_<t>_query.csv    x0,...,x{D-1}
//   domain_<t>_eval.csv     label,x0,...,x{D-1}
//   manifest.json           optional: classes, per-domain angle, generator echo
// The integer <t> orders the domains.
//
// Seed policy: the source uses data sub-stream 0, domain i uses sub-stream
// i + 1, so a domain at the source angle is an independent draw from the
// same distribution as the source.
// ---------------------------------------------------------------------------

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pcada/matrix.hpp"
#include "pcada/random.hpp"

namespace pcada {

struct LabeledBatch {
    Matrix x;
    std::vector<int> y;

    std::size_t size() const { return x.rows(); }
};

struct DomainSnapshot {
    int timestamp = 0;
    double angle = 0.0;
    Matrix support;
    Matrix query;
    LabeledBatch eval;

    // Generator bookkeeping, never read by adaptation code.
    std::vector<std::uint64_t> support_ids, query_ids, eval_ids;
    std::vector<int> support_truth, query_truth;
};

struct Dataset {
    int classes = 0;
    LabeledBatch source;
    std::vector<std::uint64_t> source_ids;
    std::vector<DomainSnapshot> domains;

    std::size_t input_dim() const { return source.x.cols(); }
};

enum class GeneratorKind { gaussians, glyphs };

struct GeneratorConfig {
    GeneratorKind kind = GeneratorKind::gaussians;
    int classes = 5;
    std::size_t input_dim = 2;
    std::size_t source_samples = 400;
    std::size_t support_samples = 64;
    std::size_t query_samples = 64;
    std::size_t eval_samples = 200;
    // Source sits at angle_start; training domains at angle_start + i*(end-start)/m, i = 1..m.
    double angle_start = 0.0;
    double angle_end = 60.0;
    std::size_t domain_count = 20;
    // Optional evolving test stream, inclusive linspace; appended after the training domains.
    double test_angle_start = 120.0;
    double test_angle_end = 174.0;
    std::size_t test_domain_count = 10;
    double noise = 0.5;
    double radius = 3.0;
    std::uint64_t seed = 0;

    void validate() const;
    std::vector<double> domain_angles() const;
};

Dataset gen_rotating_gaussians(const GeneratorConfig& cfg);
Dataset gen_rotating_glyphs(const GeneratorConfig& cfg);
Dataset generate(const GeneratorConfig& cfg);

// Class means of the rotating-Gaussians benchmark at angle `degrees` (K x D).
Matrix gaussian_class_means(const GeneratorConfig& cfg, double degrees);

// Binary glyph raster for `cls`, side x side, flattened row-major.
Vector glyph_template(int cls, std::size_t side);
// Nearest-neighbour rotation about the raster center; outside pixels are 0.
Vector rotate_raster(std::span<const double> raster, std::size_t side, double degrees);

// Uniform sample of `count` of `available` domain indices, returned in time order.
std::vector<std::size_t> sample_trajectory(std::size_t available, std::size_t count, Rng& rng);

void export_dataset(const Dataset& data, const std::filesystem::path& dir);
Dataset load_external(const std::filesystem::path& dir);

} // namespace pcada

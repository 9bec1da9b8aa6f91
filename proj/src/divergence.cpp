#include "pcada/divergence.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "pcada/errors.hpp"
#include "pcada/kernels.hpp"

namespace pcada {

void KernelConfig::validate() const {
    if (bandwidth && !(*bandwidth > 0.0)) throw ConfigError("kernel: explicit bandwidth must be > 0");
}

double median_heuristic(const Matrix& samples) {
    if (samples.rows() < 2) throw InputError("median_heuristic: need at least 2 samples");
    const Matrix d = kernels::pairwise_sq_dists(samples, samples);
    std::vector<double> upper;
    upper.reserve(samples.rows() * (samples.rows() - 1) / 2);
    for (std::size_t i = 0; i < d.rows(); ++i)
        for (std::size_t j = i + 1; j < d.cols(); ++j) upper.push_back(d(i, j));
    std::sort(upper.begin(), upper.end());
    const std::size_t n = upper.size();
    const double med = n % 2 ? upper[n / 2] : 0.5 * (upper[n / 2 - 1] + upper[n / 2]);
    return med > 0.0 ? std::sqrt(med) : 1.0;
}

namespace {

void check_levels(std::span<const Matrix> a, std::span<const Matrix> b) {
    if (a.size() != b.size() || a.empty())
        throw ShapeError("joint_mmd: level count mismatch or zero levels");
    for (std::size_t l = 0; l < a.size(); ++l) {
        if (a[l].cols() != b[l].cols())
            throw ShapeError("joint_mmd: level " + std::to_string(l) + " dimensionality mismatch");
        if (a[l].rows() != a[0].rows() || b[l].rows() != b[0].rows())
            throw ShapeError("joint_mmd: level " + std::to_string(l) + " sample count mismatch");
    }
    if (a[0].rows() == 0 || b[0].rows() == 0) throw InputError("joint_mmd: empty batch");
}

// Lexicographic order on the level data; decides which side is summed as rows
// in the cross term so that swapping the arguments gives an identical value.
bool canonical_less(std::span<const Matrix> x, std::span<const Matrix> y) {
    if (x[0].rows() != y[0].rows()) return x[0].rows() < y[0].rows();
    for (std::size_t l = 0; l < x.size(); ++l) {
        auto xv = x[l].values();
        auto yv = y[l].values();
        const auto mm = std::mismatch(xv.begin(), xv.end(), yv.begin());
        if (mm.first != xv.end()) return *mm.first < *mm.second;
    }
    return false;
}

// exp(-sum_l D_l / (2 sigma_l^2)) for one block.
Matrix product_kernel(std::span<const Matrix> x, std::span<const Matrix> y, std::span<const double> sigma_sq) {
    Matrix k(x[0].rows(), y[0].rows());
    for (std::size_t l = 0; l < x.size(); ++l) {
        const Matrix d = kernels::pairwise_sq_dists(x[l], y[l]);
        const double inv = 1.0 / (2.0 * sigma_sq[l]);
        for (std::size_t i = 0; i < k.size(); ++i) k.data()[i] += d.data()[i] * inv;
    }
    for (double& v : k.values()) v = std::exp(-v);
    return k;
}

double sum_all(const Matrix& m) {
    double s = 0.0;
    for (double v : m.values()) s += v;
    return s;
}

// scale * sum_j K_ij (y_j - x_i) / sigma^2, added into g.
void add_pull(Matrix& g, const Matrix& k, const Matrix& x, const Matrix& y, double sigma_sq, double scale) {
    const Matrix ky = kernels::matmul(k, y);
    const double f = scale / sigma_sq;
    for (std::size_t i = 0; i < x.rows(); ++i) {
        double rs = 0.0;
        for (std::size_t j = 0; j < k.cols(); ++j) rs += k(i, j);
        for (std::size_t c = 0; c < x.cols(); ++c) g(i, c) += f * (ky(i, c) - rs * x(i, c));
    }
}

Matrix transpose(const Matrix& m) {
    Matrix t(m.cols(), m.rows());
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j) t(j, i) = m(i, j);
    return t;
}

} // namespace

std::vector<double> resolve_bandwidths(std::span<const Matrix> reps_a, std::span<const Matrix> reps_b,
                                       const KernelConfig& cfg) {
    check_levels(reps_a, reps_b);
    cfg.validate();
    std::vector<double> out;
    for (std::size_t l = 0; l < reps_a.size(); ++l) {
        if (cfg.bandwidth) {
            out.push_back(*cfg.bandwidth * *cfg.bandwidth);
        } else {
            const double s = median_heuristic(concat_rows(reps_a[l], reps_b[l]));
            out.push_back(s * s);
        }
    }
    return out;
}

DivergenceValue joint_mmd(std::span<const Matrix> reps_a, std::span<const Matrix> reps_b,
                          const KernelConfig& cfg) {
    const auto sigma_sq = resolve_bandwidths(reps_a, reps_b, cfg);
    return joint_mmd_fixed(reps_a, reps_b, sigma_sq);
}

DivergenceValue joint_mmd_fixed(std::span<const Matrix> reps_a, std::span<const Matrix> reps_b,
                                std::span<const double> sigma_sq) {
    check_levels(reps_a, reps_b);
    if (sigma_sq.size() != reps_a.size()) throw ShapeError("joint_mmd: one bandwidth per level required");
    for (double s : sigma_sq)
        if (!(s > 0.0)) throw ConfigError("joint_mmd: bandwidth must be > 0");

    const double n = static_cast<double>(reps_a[0].rows());
    const double m = static_cast<double>(reps_b[0].rows());

    const Matrix kaa = product_kernel(reps_a, reps_a, sigma_sq);
    const Matrix kbb = product_kernel(reps_b, reps_b, sigma_sq);
    const bool swapped = canonical_less(reps_b, reps_a);
    const Matrix kab = swapped ? transpose(product_kernel(reps_b, reps_a, sigma_sq))
                               : product_kernel(reps_a, reps_b, sigma_sq);
    const double cross = swapped ? sum_all(transpose(kab)) : sum_all(kab);

    DivergenceValue out;
    out.sigma_sq.assign(sigma_sq.begin(), sigma_sq.end());
    out.value = (sum_all(kaa) / (n * n) + sum_all(kbb) / (m * m)) - 2.0 * cross / (n * m);

    const Matrix kba = transpose(kab);
    for (std::size_t l = 0; l < reps_a.size(); ++l) {
        Matrix ga(reps_a[l].rows(), reps_a[l].cols());
        add_pull(ga, kaa, reps_a[l], reps_a[l], sigma_sq[l], 2.0 / (n * n));
        add_pull(ga, kab, reps_a[l], reps_b[l], sigma_sq[l], -2.0 / (n * m));
        Matrix gb(reps_b[l].rows(), reps_b[l].cols());
        add_pull(gb, kbb, reps_b[l], reps_b[l], sigma_sq[l], 2.0 / (m * m));
        add_pull(gb, kba, reps_b[l], reps_a[l], sigma_sq[l], -2.0 / (n * m));
        out.grad_a.push_back(std::move(ga));
        out.grad_b.push_back(std::move(gb));
    }
    return out;
}

AlphaHat alpha_hat(std::span<const std::vector<Matrix>> trajectory, const KernelConfig& cfg) {
    if (trajectory.size() < 2) throw InputError("alpha_hat: need at least 2 domains");
    AlphaHat out;
    for (std::size_t i = 0; i + 1 < trajectory.size(); ++i) {
        DivergenceValue d = joint_mmd(trajectory[i], trajectory[i + 1], cfg);
        out.pair_values.push_back(d.value);
        if (i == 0 || d.value > out.value) {
            out.value = d.value;
            out.argmax = i;
            out.pair = std::move(d);
        }
    }
    return out;
}

} // namespace pcada

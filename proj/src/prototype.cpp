#include "pcada/prototype.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "pcada/errors.hpp"

namespace pcada {

void AnnealSchedule::validate() const {
    if (!(t1 >= 0.0 && t1 < t2)) throw ConfigError("anneal: need 0 <= T1 < T2");
    if (!(eta_f >= 0.0)) throw ConfigError("anneal: eta_f must be >= 0");
}

PrototypeBank init_prototypes(const Matrix& source_feats, std::span<const int> labels, std::size_t classes) {
    if (labels.size() != source_feats.rows()) throw ShapeError("init_prototypes: label count mismatch");
    PrototypeBank bank{Matrix(classes, source_feats.cols())};
    std::vector<std::size_t> counts(classes, 0);
    for (std::size_t r = 0; r < source_feats.rows(); ++r) {
        const int y = labels[r];
        if (y < 0 || static_cast<std::size_t>(y) >= classes)
            throw InputError("init_prototypes: label " + std::to_string(y) + " out of range");
        auto dst = bank.centers.row(static_cast<std::size_t>(y));
        auto src = source_feats.row(r);
        for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += src[c];
        ++counts[static_cast<std::size_t>(y)];
    }
    for (std::size_t k = 0; k < classes; ++k) {
        if (counts[k] == 0) throw InputError("init_prototypes: class " + std::to_string(k) + " has no samples");
        for (double& v : bank.centers.row(k)) v /= static_cast<double>(counts[k]);
    }
    return bank;
}

Vector prototype_distances(std::span<const double> feat, const PrototypeBank& bank) {
    if (feat.size() != bank.dim())
        throw ShapeError("prototype_distances: feature dim " + std::to_string(feat.size()) +
                         " vs prototype dim " + std::to_string(bank.dim()));
    Vector d(bank.classes());
    for (std::size_t k = 0; k < bank.classes(); ++k) {
        auto c = bank.centers.row(k);
        double s = 0.0;
        for (std::size_t j = 0; j < feat.size(); ++j) {
            const double diff = feat[j] - c[j];
            s += diff * diff;
        }
        d[k] = std::sqrt(s);
    }
    return d;
}

PseudoLabel assign_pseudo_label(std::span<const double> feat, const PrototypeBank& bank, double delta_d) {
    if (bank.classes() < 2) throw ConfigError("assign_pseudo_label: need at least 2 classes");
    const Vector d = prototype_distances(feat, bank);
    std::size_t first = 0;
    for (std::size_t k = 1; k < d.size(); ++k)
        if (d[k] < d[first]) first = k;
    double second = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < d.size(); ++k)
        if (k != first && d[k] < second) second = d[k];
    if (second - d[first] > delta_d) return static_cast<int>(first);
    return std::nullopt;
}

double anneal(double t, const AnnealSchedule& s) {
    if (t < s.t1) return 0.0;
    if (t < s.t2) return s.eta_f * (t - s.t1) / (s.t2 - s.t1);
    return s.eta_f;
}

void progressive_update(PrototypeBank& bank, std::span<const double> feat, PseudoLabel label, double eta) {
    if (!label) return;
    if (feat.size() != bank.dim()) throw ShapeError("progressive_update: dim mismatch");
    if (*label < 0 || static_cast<std::size_t>(*label) >= bank.classes())
        throw InputError("progressive_update: label out of range");
    auto c = bank.centers.row(static_cast<std::size_t>(*label));
    for (std::size_t j = 0; j < c.size(); ++j) c[j] += eta * (feat[j] - c[j]);
}

std::size_t update_prototypes(PrototypeBank& bank, const Matrix& feats, double delta_d, double eta) {
    std::size_t accepted = 0;
    for (std::size_t r = 0; r < feats.rows(); ++r) {
        const PseudoLabel y = assign_pseudo_label(feats.row(r), bank, delta_d);
        if (y) ++accepted;
        if (eta != 0.0) progressive_update(bank, feats.row(r), y, eta);
    }
    return accepted;
}

double sce_loss(const PrototypeBank& bank, DenseNet& classifier, double a, double b, double grad_scale) {
    if (classifier.input_dim() != bank.dim())
        throw ShapeError("sce_loss: classifier input dim does not match prototype dim");
    if (classifier.output_dim() != bank.classes())
        throw ShapeError("sce_loss: classifier output dim does not match class count");
    const std::size_t k_count = bank.classes();
    ForwardTrace trace;
    const Matrix logits = classifier.forward(bank.centers, &trace);
    const Matrix p = softmax_rows(logits);
    const double clamp = -std::log(kReverseCeClamp);
    const double inv_k = 1.0 / static_cast<double>(k_count);

    double loss = 0.0;
    Matrix grad(k_count, k_count);
    for (std::size_t k = 0; k < k_count; ++k) {
        auto z = logits.row(k);
        const double mx = *std::max_element(z.begin(), z.end());
        double sum = 0.0;
        for (double v : z) sum += std::exp(v - mx);
        const double log_pk = z[k] - mx - std::log(sum);
        const double pk = p(k, k);
        loss += a * (-log_pk) + b * clamp * (1.0 - pk);
        for (std::size_t j = 0; j < k_count; ++j) {
            const double onehot = j == k ? 1.0 : 0.0;
            // d/dz_j [-log p_k] = p_j - [j==k];  d/dz_j [1 - p_k] = -p_k ([j==k] - p_j)
            grad(k, j) = inv_k * (a * (p(k, j) - onehot) - b * clamp * pk * (onehot - p(k, j)));
        }
    }
    loss *= inv_k;
    if (grad_scale != 0.0) {
        grad *= grad_scale;
        classifier.backward(trace, grad);
    }
    return loss;
}

void export_prototypes_csv(const PrototypeBank& bank, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << "class";
    for (std::size_t j = 0; j < bank.dim(); ++j) out << ",c" << j;
    out << '\n' << std::setprecision(17);
    for (std::size_t k = 0; k < bank.classes(); ++k) {
        out << k;
        for (double v : bank.centers.row(k)) out << ',' << v;
        out << '\n';
    }
}

PrototypeBank import_prototypes_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw ParseError(path.string() + ": missing header");
    const auto dim = static_cast<std::size_t>(std::count(line.begin(), line.end(), ','));
    std::vector<double> data;
    std::size_t rows = 0;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::getline(ss, cell, ',');
        if (std::stoul(cell) != rows)
            throw ParseError(path.string() + ":" + std::to_string(line_no) + ": classes out of order");
        std::size_t n = 0;
        while (std::getline(ss, cell, ',')) {
            data.push_back(std::stod(cell));
            ++n;
        }
        if (n != dim) throw ParseError(path.string() + ":" + std::to_string(line_no) + ": wrong column count");
        ++rows;
    }
    return PrototypeBank{Matrix(rows, dim, std::move(data))};
}

} // namespace pcada

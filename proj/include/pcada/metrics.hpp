#pragma once

// ---------------------------------------------------------------------------
// Continual-learning evaluation.
//
// R(i, j), j <= i, is the accuracy on domain j's eval set after the model has
// adapted through domain i (0-based here). Entries are stored as exact
// fractions correct/total, and ACC / BWT are evaluated in exact rational
// arithmetic before the final conversion to double:
//
//   ACC = 1/T     sum_i R(T-1, i)
//   BWT = 1/(T-1) sum_{i<T-1} R(T-1, i) - R(i, i)
// ---------------------------------------------------------------------------

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace pcada {

struct Fraction {
    std::uint64_t correct = 0;
    std::uint64_t total = 1;

    double value() const { return static_cast<double>(correct) / static_cast<double>(total); }
    friend bool operator==(const Fraction&, const Fraction&) = default;
};

class RMatrix {
public:
    explicit RMatrix(std::size_t domains = 1);

    std::size_t size() const { return n_; }
    void set(std::size_t i, std::size_t j, Fraction acc);
    std::optional<Fraction> at(std::size_t i, std::size_t j) const;
    double value(std::size_t i, std::size_t j) const;  // throws StateError when unset
    bool row_complete(std::size_t i) const;
    std::vector<double> final_row() const;

    nlohmann::json to_json() const;
    static RMatrix from_json(const nlohmann::json& j);

    friend bool operator==(const RMatrix&, const RMatrix&) = default;

private:
    std::size_t n_;
    std::vector<std::optional<Fraction>> cells_;  // row-major lower triangle, n_ x n_
};

double acc(const RMatrix& r);
double bwt(const RMatrix& r);

Fraction accuracy(std::span<const int> predicted, std::span<const int> truth);

struct RunReport {
    std::string method;
    std::uint64_t seed = 0;
    nlohmann::json config;  // fully resolved config echo
    std::vector<int> timestamps;
    std::vector<double> angles;
    RMatrix r{1};
    double acc = 0.0;
    std::optional<double> bwt;
    nlohmann::json counters = nlohmann::json::object();
    nlohmann::json checksums = nlohmann::json::object();
    double wall_clock_s = 0.0;  // kept out of report.json so reports stay bitwise reproducible

    std::vector<double> per_domain() const { return r.final_row(); }
    nlohmann::json to_json() const;
    static RunReport from_json(const nlohmann::json& j);
};

struct MetricSummary {
    double mean = 0.0;
    double std = 0.0;  // sample std, (n-1) denominator; 0 when n == 1
    std::size_t n = 0;
    bool single = false;
};

MetricSummary summarize(std::span<const double> values);

struct Aggregate {
    std::string method;
    std::size_t runs = 0;
    std::vector<std::uint64_t> seeds;
    MetricSummary acc;
    MetricSummary bwt;
    std::vector<MetricSummary> per_domain;

    nlohmann::json to_json() const;
};

// Reports must share method and config (the seed is ignored).
Aggregate aggregate(std::span<const RunReport> reports);

// Table layout: rows = methods, columns = domains, final "Average" column.
void write_per_domain_csv(const std::filesystem::path& path, std::span<const RunReport> reports);
void write_aggregate_csv(const std::filesystem::path& path, std::span<const Aggregate> rows,
                         std::span<const int> timestamps);

} // namespace pcada

#include "pcada/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>

#include "pcada/errors.hpp"

namespace pcada {

namespace {

using i128 = __int128;

i128 gcd128(i128 a, i128 b) {
    if (a < 0) a = -a;
    if (b < 0) b = -b;
    while (b != 0) {
        const i128 t = a % b;
        a = b;
        b = t;
    }
    return a;
}

struct Rational {
    i128 num = 0;
    i128 den = 1;

    void normalize() {
        const i128 g = gcd128(num, den);
        if (g > 1) {
            num /= g;
            den /= g;
        }
        if (den < 0) {
            num = -num;
            den = -den;
        }
    }
    Rational& operator+=(const Rational& o) {
        num = num * o.den + o.num * den;
        den *= o.den;
        normalize();
        return *this;
    }
    Rational operator-() const { return {-num, den}; }
    double to_double() const { return static_cast<double>(num) / static_cast<double>(den); }
};

Rational rational(Fraction f) {
    Rational r{static_cast<i128>(f.correct), static_cast<i128>(f.total)};
    r.normalize();
    return r;
}

} // namespace

RMatrix::RMatrix(std::size_t domains) : n_(domains), cells_(domains * domains) {
    if (domains == 0) throw InputError("RMatrix: need at least one domain");
}

void RMatrix::set(std::size_t i, std::size_t j, Fraction acc) {
    if (i >= n_ || j > i) throw InputError("RMatrix::set: entry outside the lower triangle");
    if (acc.total == 0 || acc.correct > acc.total) throw InputError("RMatrix::set: accuracy outside [0,1]");
    cells_[i * n_ + j] = acc;
}

std::optional<Fraction> RMatrix::at(std::size_t i, std::size_t j) const {
    if (i >= n_ || j > i) return std::nullopt;
    return cells_[i * n_ + j];
}

double RMatrix::value(std::size_t i, std::size_t j) const {
    const auto f = at(i, j);
    if (!f) throw StateError("RMatrix: entry (" + std::to_string(i) + "," + std::to_string(j) + ") not set");
    return f->value();
}

bool RMatrix::row_complete(std::size_t i) const {
    for (std::size_t j = 0; j <= i; ++j)
        if (!cells_[i * n_ + j]) return false;
    return true;
}

std::vector<double> RMatrix::final_row() const {
    std::vector<double> out;
    for (std::size_t j = 0; j < n_; ++j) out.push_back(value(n_ - 1, j));
    return out;
}

nlohmann::json RMatrix::to_json() const {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t i = 0; i < n_; ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (std::size_t j = 0; j <= i; ++j) {
            const auto& c = cells_[i * n_ + j];
            if (c)
                row.push_back({{"correct", c->correct}, {"total", c->total}, {"accuracy", c->value()}});
            else
                row.push_back(nullptr);
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

RMatrix RMatrix::from_json(const nlohmann::json& j) {
    if (!j.is_array() || j.empty()) throw ParseError("r_matrix: expected a nonempty array of rows");
    RMatrix r(j.size());
    for (std::size_t i = 0; i < j.size(); ++i) {
        if (j[i].size() != i + 1) throw ParseError("r_matrix: row " + std::to_string(i) + " has wrong length");
        for (std::size_t c = 0; c <= i; ++c) {
            const auto& cell = j[i][c];
            if (cell.is_null()) continue;
            r.set(i, c, {cell.at("correct").get<std::uint64_t>(), cell.at("total").get<std::uint64_t>()});
        }
    }
    return r;
}

double acc(const RMatrix& r) {
    const std::size_t t = r.size();
    if (!r.row_complete(t - 1)) throw StateError("acc: final row incomplete");
    Rational sum;
    for (std::size_t i = 0; i < t; ++i) sum += rational(*r.at(t - 1, i));
    sum.den *= static_cast<i128>(t);
    sum.normalize();
    return sum.to_double();
}

double bwt(const RMatrix& r) {
    const std::size_t t = r.size();
    if (t < 2) throw InputError("bwt: need at least 2 domains");
    if (!r.row_complete(t - 1)) throw StateError("bwt: final row incomplete");
    Rational sum;
    for (std::size_t i = 0; i + 1 < t; ++i) {
        const auto diag = r.at(i, i);
        if (!diag) throw StateError("bwt: diagonal entry " + std::to_string(i) + " missing");
        sum += rational(*r.at(t - 1, i));
        sum += -rational(*diag);
    }
    sum.den *= static_cast<i128>(t - 1);
    sum.normalize();
    return sum.to_double();
}

Fraction accuracy(std::span<const int> predicted, std::span<const int> truth) {
    if (predicted.size() != truth.size() || truth.empty())
        throw ShapeError("accuracy: prediction/label length mismatch or empty");
    std::uint64_t correct = 0;
    for (std::size_t i = 0; i < truth.size(); ++i)
        if (predicted[i] == truth[i]) ++correct;
    return {correct, truth.size()};
}

nlohmann::json RunReport::to_json() const {
    nlohmann::json j;
    j["format"] = "pcada-run-report";
    j["version"] = 1;
    j["method"] = method;
    j["seed"] = seed;
    j["config"] = config;
    j["domains"] = nlohmann::json::array();
    for (std::size_t i = 0; i < timestamps.size(); ++i)
        j["domains"].push_back({{"timestamp", timestamps[i]}, {"angle", i < angles.size() ? angles[i] : 0.0}});
    j["r_matrix"] = r.to_json();
    j["per_domain_accuracy"] = per_domain();
    j["acc"] = acc;
    j["bwt"] = bwt ? nlohmann::json(*bwt) : nlohmann::json(nullptr);
    j["counters"] = counters;
    j["checksums"] = checksums;
    return j;
}

RunReport RunReport::from_json(const nlohmann::json& j) {
    try {
        if (j.value("format", "") != "pcada-run-report") throw ParseError("not a run report");
        RunReport rep;
        rep.method = j.at("method").get<std::string>();
        rep.seed = j.at("seed").get<std::uint64_t>();
        rep.config = j.at("config");
        for (const auto& d : j.at("domains")) {
            rep.timestamps.push_back(d.at("timestamp").get<int>());
            rep.angles.push_back(d.value("angle", 0.0));
        }
        rep.r = RMatrix::from_json(j.at("r_matrix"));
        rep.acc = j.at("acc").get<double>();
        if (!j.at("bwt").is_null()) rep.bwt = j.at("bwt").get<double>();
        rep.counters = j.value("counters", nlohmann::json::object());
        rep.checksums = j.value("checksums", nlohmann::json::object());
        return rep;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("run report: ") + e.what());
    }
}

MetricSummary summarize(std::span<const double> values) {
    if (values.empty()) throw InputError("summarize: no values");
    std::vector<double> v(values.begin(), values.end());
    std::sort(v.begin(), v.end());  // order-independent sums
    MetricSummary s;
    s.n = v.size();
    s.single = s.n == 1;
    double sum = 0.0;
    for (double x : v) sum += x;
    s.mean = sum / static_cast<double>(s.n);
    if (s.n > 1) {
        std::vector<double> sq;
        for (double x : v) sq.push_back((x - s.mean) * (x - s.mean));
        std::sort(sq.begin(), sq.end());
        double ss = 0.0;
        for (double x : sq) ss += x;
        s.std = std::sqrt(ss / static_cast<double>(s.n - 1));
    }
    return s;
}

namespace {

nlohmann::json without_seed(nlohmann::json cfg) {
    if (cfg.is_object()) cfg.erase("seed");
    return cfg;
}

nlohmann::json summary_json(const MetricSummary& s) {
    return {{"mean", s.mean}, {"std", s.std}, {"n", s.n}, {"single", s.single}};
}

} // namespace

Aggregate aggregate(std::span<const RunReport> reports) {
    if (reports.empty()) throw InputError("aggregate: no reports");
    const auto ref_cfg = without_seed(reports.front().config);
    const std::size_t t = reports.front().r.size();
    Aggregate a;
    a.method = reports.front().method;
    a.runs = reports.size();
    std::vector<double> accs, bwts;
    std::vector<std::vector<double>> cols(t);
    for (const auto& r : reports) {
        if (r.method != a.method || without_seed(r.config) != ref_cfg || r.r.size() != t)
            throw InputError("aggregate: reports have mixed methods or configs");
        a.seeds.push_back(r.seed);
        accs.push_back(r.acc);
        if (r.bwt) bwts.push_back(*r.bwt);
        const auto row = r.per_domain();
        for (std::size_t j = 0; j < t; ++j) cols[j].push_back(row[j]);
    }
    std::sort(a.seeds.begin(), a.seeds.end());
    a.acc = summarize(accs);
    if (!bwts.empty()) a.bwt = summarize(bwts);
    for (const auto& c : cols) a.per_domain.push_back(summarize(c));
    return a;
}

nlohmann::json Aggregate::to_json() const {
    nlohmann::json j;
    j["method"] = method;
    j["runs"] = runs;
    j["seeds"] = seeds;
    j["acc"] = summary_json(acc);
    j["bwt"] = summary_json(bwt);
    j["per_domain"] = nlohmann::json::array();
    for (const auto& s : per_domain) j["per_domain"].push_back(summary_json(s));
    return j;
}

namespace {

std::ofstream open_csv(const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << std::setprecision(10);
    return out;
}

} // namespace

void write_per_domain_csv(const std::filesystem::path& path, std::span<const RunReport> reports) {
    auto out = open_csv(path);
    out << "method,seed";
    if (!reports.empty())
        for (int ts : reports.front().timestamps) out << ",domain_" << ts;
    out << ",Average,BWT\n";
    for (const auto& r : reports) {
        out << r.method << ',' << r.seed;
        for (double v : r.per_domain()) out << ',' << v;
        out << ',' << r.acc << ',';
        if (r.bwt) out << *r.bwt;
        out << '\n';
    }
}

void write_aggregate_csv(const std::filesystem::path& path, std::span<const Aggregate> rows,
                         std::span<const int> timestamps) {
    auto out = open_csv(path);
    out << "method,runs";
    for (int ts : timestamps) out << ",domain_" << ts;
    out << ",Average,ACC_std,BWT_mean,BWT_std\n";
    for (const auto& a : rows) {
        out << a.method << ',' << a.runs;
        for (const auto& s : a.per_domain) out << ',' << s.mean;
        out << ',' << a.acc.mean << ',' << a.acc.std << ',' << a.bwt.mean << ',' << a.bwt.std << '\n';
    }
}

} // namespace pcada

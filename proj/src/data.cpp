#include "pcada/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numbers>
#include <regex>
#include <sstream>

#include "json.hpp"

#include "pcada/errors.hpp"

namespace pcada {

namespace fs = std::filesystem;

void GeneratorConfig::validate() const {
    if (classes < 2) throw ConfigError("data.classes must be >= 2");
    if (input_dim == 0) throw ConfigError("data.input_dim must be >= 1");
    if (!(angle_end > angle_start)) throw ConfigError("data.angle_range: end must exceed start");
    if (domain_count < 2) throw ConfigError("data.domains must be >= 2");
    if (!(noise > 0.0)) throw ConfigError("data.noise must be > 0");
    if (!(radius > 0.0)) throw ConfigError("data.radius must be > 0");
    if (source_samples < static_cast<std::size_t>(classes) || support_samples == 0 || query_samples == 0 ||
        eval_samples == 0)
        throw ConfigError("data: split sizes must be positive (source >= classes)");
    if (test_domain_count > 0) {
        if (test_domain_count > 1 && !(test_angle_end > test_angle_start))
            throw ConfigError("data.test_angle_range: end must exceed start");
        if (!(test_angle_start > angle_end))
            throw ConfigError("data.test_angle_range must start after the training range");
    }
    if (kind == GeneratorKind::gaussians && input_dim < 2)
        throw ConfigError("data.input_dim must be >= 2 for rotating gaussians");
    if (kind == GeneratorKind::glyphs) {
        const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(input_dim))));
        if (side * side != input_dim) throw ConfigError("data.input_dim must be a perfect square for glyphs");
        if (side < 6) throw ConfigError("data.input_dim: glyph raster side must be >= 6");
        if (classes > 8) throw ConfigError("data.classes: at most 8 glyph classes");
    }
}

std::vector<double> GeneratorConfig::domain_angles() const {
    std::vector<double> out;
    const double step = (angle_end - angle_start) / static_cast<double>(domain_count);
    for (std::size_t i = 1; i <= domain_count; ++i) out.push_back(angle_start + step * static_cast<double>(i));
    if (test_domain_count == 1) out.push_back(test_angle_start);
    if (test_domain_count > 1) {
        const double ts = (test_angle_end - test_angle_start) / static_cast<double>(test_domain_count - 1);
        for (std::size_t i = 0; i < test_domain_count; ++i)
            out.push_back(test_angle_start + ts * static_cast<double>(i));
    }
    return out;
}

namespace {

double to_radians(double deg) { return deg * std::numbers::pi / 180.0; }

// Balanced labels (round robin) in shuffled order.
std::vector<int> balanced_labels(std::size_t n, int classes, Rng& rng) {
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) y[i] = static_cast<int>(i % static_cast<std::size_t>(classes));
    std::shuffle(y.begin(), y.end(), rng);
    return y;
}

template <class SampleFn>
void fill_split(Matrix& x, std::vector<int>& y, std::vector<std::uint64_t>& ids, std::size_t n,
                std::size_t dim, int classes, std::uint64_t& next_id, Rng& rng, SampleFn&& sample) {
    y = balanced_labels(n, classes, rng);
    x = Matrix(n, dim);
    ids.clear();
    for (std::size_t i = 0; i < n; ++i) {
        sample(y[i], x.row(i), rng);
        ids.push_back(next_id++);
    }
}

template <class SampleFactory>
Dataset generate_with(const GeneratorConfig& cfg, SampleFactory&& factory) {
    cfg.validate();
    Dataset data;
    data.classes = cfg.classes;
    const std::size_t dim = cfg.input_dim;
    std::uint64_t next_id = 0;
    {
        Rng rng = make_stream(cfg.seed, "data", 0);
        auto sample = factory(cfg.angle_start);
        fill_split(data.source.x, data.source.y, data.source_ids, cfg.source_samples, dim, cfg.classes, next_id,
                   rng, sample);
    }
    const auto angles = cfg.domain_angles();
    for (std::size_t i = 0; i < angles.size(); ++i) {
        Rng rng = make_stream(cfg.seed, "data", i + 1);
        auto sample = factory(angles[i]);
        DomainSnapshot d;
        d.timestamp = static_cast<int>(i + 1);
        d.angle = angles[i];
        fill_split(d.support, d.support_truth, d.support_ids, cfg.support_samples, dim, cfg.classes, next_id, rng,
                   sample);
        fill_split(d.query, d.query_truth, d.query_ids, cfg.query_samples, dim, cfg.classes, next_id, rng, sample);
        fill_split(d.eval.x, d.eval.y, d.eval_ids, cfg.eval_samples, dim, cfg.classes, next_id, rng, sample);
        data.domains.push_back(std::move(d));
    }
    return data;
}

} // namespace

Matrix gaussian_class_means(const GeneratorConfig& cfg, double degrees) {
    Matrix means(static_cast<std::size_t>(cfg.classes), cfg.input_dim);
    for (int k = 0; k < cfg.classes; ++k) {
        const double phi = 2.0 * std::numbers::pi * k / cfg.classes + to_radians(degrees);
        means(static_cast<std::size_t>(k), 0) = cfg.radius * std::cos(phi);
        means(static_cast<std::size_t>(k), 1) = cfg.radius * std::sin(phi);
    }
    return means;
}

Dataset gen_rotating_gaussians(const GeneratorConfig& cfg) {
    auto factory = [&](double angle) {
        Matrix means = gaussian_class_means(cfg, angle);
        return [means = std::move(means), noise = cfg.noise](int k, std::span<double> out, Rng& rng) {
            std::normal_distribution<double> n01(0.0, 1.0);
            auto mu = means.row(static_cast<std::size_t>(k));
            for (std::size_t j = 0; j < out.size(); ++j) out[j] = mu[j] + noise * n01(rng);
        };
    };
    return generate_with(cfg, factory);
}

Vector glyph_template(int cls, std::size_t side) {
    const long q = static_cast<long>(side);
    const long lo = 1, hi = q - 2, mid = q / 2;
    Vector g(side * side, 0.0);
    auto set = [&](long r, long c) {
        if (r >= 0 && r < q && c >= 0 && c < q) g[static_cast<std::size_t>(r * q + c)] = 1.0;
    };
    for (long r = 0; r < q; ++r) {
        for (long c = 0; c < q; ++c) {
            bool on = false;
            switch (cls) {
                case 0: on = (c == lo && r >= lo && r <= hi) || (r == hi && c >= lo && c <= hi); break;  // L
                case 1: on = (r == lo && c >= lo && c <= hi) || (c == mid && r >= lo && r <= hi); break;  // T
                case 2: on = r == c && r >= lo && r <= hi; break;                                        // diagonal
                case 3:                                                                                  // box, top-left
                    on = r >= lo && r <= mid && c >= lo && c <= mid && (r == lo || r == mid || c == lo || c == mid);
                    break;
                case 4: on = (r == lo && c >= lo && c <= mid) || (c == hi && r >= lo && r <= hi); break;  // hook
                case 5: on = (r == mid && c >= lo && c <= hi) || (c == lo && r >= lo && r <= mid); break;  // half-T
                case 6: on = (r + c == q - 1 && r >= lo && r <= mid) || (r == hi && c >= mid && c <= hi); break;
                case 7: on = (r >= mid && r <= hi && c >= mid && c <= hi); break;  // filled block, bottom-right
                default: throw ConfigError("glyph_template: class out of range");
            }
            if (on) set(r, c);
        }
    }
    return g;
}

Vector rotate_raster(std::span<const double> raster, std::size_t side, double degrees) {
    if (raster.size() != side * side) throw ShapeError("rotate_raster: raster is not side x side");
    const double th = to_radians(degrees);
    const double cs = std::cos(th), sn = std::sin(th);
    const double center = (static_cast<double>(side) - 1.0) / 2.0;
    const auto q = static_cast<long>(side);
    Vector out(raster.size(), 0.0);
    for (long r = 0; r < q; ++r) {
        for (long c = 0; c < q; ++c) {
            const double dx = static_cast<double>(c) - center;
            const double dy = static_cast<double>(r) - center;
            const double sx = cs * dx + sn * dy;
            const double sy = -sn * dx + cs * dy;
            const long sr = std::lround(center + sy);
            const long sc = std::lround(center + sx);
            if (sr >= 0 && sr < q && sc >= 0 && sc < q)
                out[static_cast<std::size_t>(r * q + c)] = raster[static_cast<std::size_t>(sr * q + sc)];
        }
    }
    return out;
}

Dataset gen_rotating_glyphs(const GeneratorConfig& cfg) {
    const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(cfg.input_dim))));
    auto factory = [&](double angle) {
        std::vector<Vector> rotated;
        for (int k = 0; k < cfg.classes; ++k) rotated.push_back(rotate_raster(glyph_template(k, side), side, angle));
        return [rotated = std::move(rotated), noise = cfg.noise](int k, std::span<double> out, Rng& rng) {
            std::normal_distribution<double> n01(0.0, 1.0);
            const auto& g = rotated[static_cast<std::size_t>(k)];
            for (std::size_t j = 0; j < out.size(); ++j) out[j] = g[j] + noise * n01(rng);
        };
    };
    GeneratorConfig c = cfg;
    c.kind = GeneratorKind::glyphs;
    return generate_with(c, factory);
}

Dataset generate(const GeneratorConfig& cfg) {
    return cfg.kind == GeneratorKind::glyphs ? gen_rotating_glyphs(cfg) : gen_rotating_gaussians(cfg);
}

std::vector<std::size_t> sample_trajectory(std::size_t available, std::size_t count, Rng& rng) {
    if (count == 0) throw InputError("sample_trajectory: count must be >= 1");
    if (count > available)
        throw InputError("sample_trajectory: requested " + std::to_string(count) + " domains, only " +
                         std::to_string(available) + " available");
    std::vector<std::size_t> all(available);
    for (std::size_t i = 0; i < available; ++i) all[i] = i;
    std::shuffle(all.begin(), all.end(), rng);
    all.resize(count);
    std::sort(all.begin(), all.end());
    return all;
}

// ---------------------------------------------------------------------------
// CSV layout
// ---------------------------------------------------------------------------

namespace {

void write_csv(const fs::path& path, const Matrix& x, const std::vector<int>* labels) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    bool first = true;
    if (labels) {
        out << "label";
        first = false;
    }
    for (std::size_t j = 0; j < x.cols(); ++j) {
        out << (first ? "" : ",") << 'x' << j;
        first = false;
    }
    out << '\n' << std::setprecision(17);
    for (std::size_t r = 0; r < x.rows(); ++r) {
        first = true;
        if (labels) {
            out << (*labels)[r];
            first = false;
        }
        for (double v : x.row(r)) {
            out << (first ? "" : ",") << v;
            first = false;
        }
        out << '\n';
    }
    if (!out) throw IoError("write failed: " + path.string());
}

struct CsvTable {
    Matrix x;
    std::vector<int> y;
};

double parse_double(const std::string& cell, const fs::path& path, std::size_t line) {
    const char* begin = cell.c_str();
    char* end = nullptr;
    const double v = std::strtod(begin, &end);
    if (end == begin || *end != '\0' || !std::isfinite(v))
        throw ParseError(path.string() + ":" + std::to_string(line) + ": malformed number '" + cell + "'");
    return v;
}

CsvTable read_csv(const fs::path& path, bool labeled) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw ParseError(path.string() + ":1: missing header row");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::vector<std::string> header;
    {
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) header.push_back(cell);
    }
    if (labeled && (header.empty() || header.front() != "label"))
        throw ParseError(path.string() + ":1: first column must be 'label'");
    const std::size_t dim = header.size() - (labeled ? 1 : 0);
    if (dim == 0) throw ParseError(path.string() + ":1: no feature columns");

    std::vector<double> data;
    CsvTable t;
    std::size_t line_no = 1;
    std::size_t rows = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::size_t cols = 0;
        while (std::getline(ss, cell, ',')) {
            if (labeled && cols == 0) {
                const double v = parse_double(cell, path, line_no);
                if (v != std::floor(v) || v < 0)
                    throw ParseError(path.string() + ":" + std::to_string(line_no) + ": label must be a nonnegative integer");
                t.y.push_back(static_cast<int>(v));
            } else {
                data.push_back(parse_double(cell, path, line_no));
            }
            ++cols;
        }
        if (cols != header.size())
            throw ParseError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                             std::to_string(header.size()) + " columns, found " + std::to_string(cols));
        ++rows;
    }
    if (rows == 0) throw ParseError(path.string() + ": no data rows");
    t.x = Matrix(rows, dim, std::move(data));
    return t;
}

} // namespace

void export_dataset(const Dataset& data, const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    write_csv(dir / "source.csv", data.source.x, &data.source.y);
    nlohmann::json manifest;
    manifest["classes"] = data.classes;
    manifest["input_dim"] = data.input_dim();
    manifest["domains"] = nlohmann::json::array();
    for (const auto& d : data.domains) {
        const std::string stem = "domain_" + std::to_string(d.timestamp);
        write_csv(dir / (stem + "_support.csv"), d.support, nullptr);
        write_csv(dir / (stem + "_query.csv"), d.query, nullptr);
        write_csv(dir / (stem + "_eval.csv"), d.eval.x, &d.eval.y);
        manifest["domains"].push_back({{"timestamp", d.timestamp}, {"angle", d.angle}});
    }
    std::ofstream m(dir / "manifest.json");
    if (!m) throw IoError("cannot write manifest in " + dir.string());
    m << manifest.dump(2) << '\n';
}

Dataset load_external(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw IoError("dataset directory not found: " + dir.string());
    Dataset data;
    const CsvTable src = read_csv(dir / "source.csv", true);
    data.source = {src.x, src.y};
    const std::size_t dim = src.x.cols();

    static const std::regex pattern(R"(domain_(\d+)_(support|query|eval)\.csv)");
    std::map<int, std::map<std::string, fs::path>> found;
    std::map<int, std::string> seen_stem;
    for (const auto& entry : fs::directory_iterator(dir)) {
        const std::string name = entry.path().filename().string();
        std::smatch m;
        if (!std::regex_match(name, m, pattern)) continue;
        const int t = std::stoi(m[1].str());
        const std::string stem = m[1].str();
        auto [it, inserted] = seen_stem.emplace(t, stem);
        if (!inserted && it->second != stem)
            throw ParseError("domain timestamp " + std::to_string(t) + " appears as both '" + it->second + "' and '" +
                             stem + "'");
        found[t][m[2].str()] = entry.path();
    }
    if (found.empty()) throw ParseError(dir.string() + ": no domain files");

    std::map<int, double> angles;
    int classes = 0;
    if (fs::exists(dir / "manifest.json")) {
        std::ifstream in(dir / "manifest.json");
        try {
            const auto j = nlohmann::json::parse(in);
            classes = j.value("classes", 0);
            for (const auto& d : j.value("domains", nlohmann::json::array()))
                angles[d.at("timestamp").get<int>()] = d.value("angle", 0.0);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError("manifest.json: " + std::string(e.what()));
        }
    }

    for (const auto& [t, files] : found) {
        for (const char* split : {"support", "query", "eval"})
            if (!files.count(split))
                throw ParseError("domain " + std::to_string(t) + ": missing " + split + " file");
        DomainSnapshot d;
        d.timestamp = t;
        d.angle = angles.count(t) ? angles[t] : 0.0;
        d.support = read_csv(files.at("support"), false).x;
        d.query = read_csv(files.at("query"), false).x;
        const CsvTable ev = read_csv(files.at("eval"), true);
        d.eval = {ev.x, ev.y};
        for (const auto* m : {&d.support, &d.query, &d.eval.x})
            if (m->cols() != dim)
                throw ParseError("domain " + std::to_string(t) + ": feature dim " + std::to_string(m->cols()) +
                                 " differs from source dim " + std::to_string(dim));
        data.domains.push_back(std::move(d));
    }

    int max_label = 0;
    for (int y : data.source.y) max_label = std::max(max_label, y);
    for (const auto& d : data.domains)
        for (int y : d.eval.y) max_label = std::max(max_label, y);
    data.classes = classes > 0 ? classes : max_label + 1;
    if (max_label >= data.classes) throw ParseError("label " + std::to_string(max_label) + " exceeds class count");
    return data;
}

} // namespace pcada

#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "pcada/data.hpp"
#include "pcada/errors.hpp"
#include "test_util.hpp"

using namespace pcada;
namespace fs = std::filesystem;

namespace {

GeneratorConfig small_config(std::uint64_t seed = 3) {
    GeneratorConfig g;
    g.classes = 4;
    g.source_samples = 41;
    g.support_samples = 13;
    g.query_samples = 11;
    g.eval_samples = 17;
    g.domain_count = 4;
    g.test_domain_count = 2;
    g.seed = seed;
    return g;
}

fs::path scratch_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("pcada_test_data_" + name);
    fs::remove_all(p);
    return p;
}

bool bitwise_equal(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j)
            if (a(i, j) != b(i, j)) return false;
    return true;
}

// Nearest true class mean; Bayes-optimal for isotropic equal-prior classes.
double nearest_mean_accuracy(const LabeledBatch& b, const Matrix& means) {
    std::size_t ok = 0;
    for (std::size_t i = 0; i < b.size(); ++i) {
        std::size_t best = 0;
        double best_d = 1e300;
        for (std::size_t k = 0; k < means.rows(); ++k) {
            const double d = testutil::sq_dist(b.x, i, means, k);
            if (d < best_d) best_d = d, best = k;
        }
        ok += static_cast<int>(best) == b.y[i];
    }
    return static_cast<double>(ok) / static_cast<double>(b.size());
}

std::vector<int> class_counts(const std::vector<int>& y, int k) {
    std::vector<int> c(static_cast<std::size_t>(k), 0);
    for (int v : y) ++c[static_cast<std::size_t>(v)];
    return c;
}

} // namespace

TEST_CASE("gaussian means rotate with the domain angle") {
    GeneratorConfig g;
    g.classes = 4;
    g.radius = 3.0;
    const Matrix m0 = gaussian_class_means(g, 0.0);
    CHECK(m0(0, 0) == doctest::Approx(3.0));
    CHECK(m0(0, 1) == doctest::Approx(0.0));
    const Matrix m90 = gaussian_class_means(g, 90.0);
    CHECK(m90(0, 0) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(m90(0, 1) == doctest::Approx(3.0));
    // 90 degrees is a quarter turn, so class k lands on class k+1's source mean.
    for (std::size_t k = 0; k < 4; ++k)
        for (std::size_t c = 0; c < 2; ++c) CHECK(m90(k, c) == doctest::Approx(m0((k + 1) % 4, c)).epsilon(1e-12));
}

TEST_CASE("domain angles follow the training and test linspaces") {
    GeneratorConfig g;
    g.angle_start = 0;
    g.angle_end = 60;
    g.domain_count = 3;
    g.test_angle_start = 120;
    g.test_angle_end = 180;
    g.test_domain_count = 4;
    const auto a = g.domain_angles();
    const std::vector<double> expect{20, 40, 60, 120, 140, 160, 180};
    REQUIRE(a.size() == expect.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(expect[i]));
    CHECK(std::is_sorted(a.begin(), a.end()));
}

TEST_CASE("bayes accuracy is roughly constant across angles") {
    GeneratorConfig g;
    g.eval_samples = 4000;
    g.support_samples = 5;
    g.query_samples = 5;
    g.source_samples = 4000;
    g.domain_count = 4;
    g.test_domain_count = 3;
    g.seed = 11;
    const Dataset d = generate(g);
    const double src = nearest_mean_accuracy(d.source, gaussian_class_means(g, g.angle_start));
    CHECK(src > 0.9);
    for (const auto& dom : d.domains) {
        const double a = nearest_mean_accuracy(dom.eval, gaussian_class_means(g, dom.angle));
        CHECK(std::abs(a - src) < 0.03);
    }
}

TEST_CASE("glyph rotations") {
    const std::size_t side = 8;
    for (int k = 0; k < 8; ++k) {
        const Vector g = glyph_template(k, side);
        CHECK(std::count(g.begin(), g.end(), 1.0) > 0);
        CHECK(rotate_raster(g, side, 0.0) == g);
        const Vector r180 = rotate_raster(g, side, 180.0);
        for (std::size_t r = 0; r < side; ++r)
            for (std::size_t c = 0; c < side; ++c)
                CHECK(r180[r * side + c] == g[(side - 1 - r) * side + (side - 1 - c)]);
        Vector q = g;
        for (int i = 0; i < 4; ++i) q = rotate_raster(q, side, 90.0);
        CHECK(q == g);
    }
    // Templates are pairwise distinct.
    for (int a = 0; a < 8; ++a)
        for (int b = a + 1; b < 8; ++b) CHECK(glyph_template(a, side) != glyph_template(b, side));
    CHECK_THROWS_AS(glyph_template(8, side), ConfigError);
    CHECK_THROWS_AS(rotate_raster(Vector(10, 0.0), side, 0.0), ShapeError);
}

TEST_CASE("glyph dataset") {
    GeneratorConfig g = small_config();
    g.kind = GeneratorKind::glyphs;
    g.input_dim = 64;
    g.noise = 0.1;
    const Dataset d = generate(g);
    CHECK(d.input_dim() == 64);
    CHECK(d.domains.size() == 6);
    g.input_dim = 50;
    CHECK_THROWS_AS(generate(g), ConfigError);
}

TEST_CASE("sample_trajectory") {
    Rng rng = make_stream(5, "trajectory");
    const auto all = sample_trajectory(7, 7, rng);
    CHECK(all == std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6});
    const auto one = sample_trajectory(7, 1, rng);
    REQUIRE(one.size() == 1);
    CHECK(one[0] < 7);
    CHECK_THROWS_AS(sample_trajectory(3, 4, rng), InputError);
    CHECK_THROWS_AS(sample_trajectory(3, 0, rng), InputError);

    Rng a = make_stream(9, "trajectory"), b = make_stream(9, "trajectory");
    for (int i = 0; i < 20; ++i) {
        const auto s = sample_trajectory(20, 10, a);
        CHECK(s == sample_trajectory(20, 10, b));
        CHECK(std::is_sorted(s.begin(), s.end()));
        CHECK(std::set<std::size_t>(s.begin(), s.end()).size() == 10);
    }
}

TEST_CASE("splits are disjoint, balanced and seed-determined") {
    const GeneratorConfig g = small_config();
    const Dataset d = generate(g);
    REQUIRE(d.domains.size() == 6);
    std::set<std::uint64_t> ids(d.source_ids.begin(), d.source_ids.end());
    std::size_t total = d.source_ids.size();
    for (const auto& dom : d.domains) {
        for (const auto* v : {&dom.support_ids, &dom.query_ids, &dom.eval_ids}) {
            ids.insert(v->begin(), v->end());
            total += v->size();
        }
        CHECK(dom.support.rows() == 13);
        CHECK(dom.query.rows() == 11);
        CHECK(dom.eval.size() == 17);
        for (const auto* y : {&dom.support_truth, &dom.query_truth, &dom.eval.y}) {
            const auto c = class_counts(*y, g.classes);
            CHECK(*std::max_element(c.begin(), c.end()) - *std::min_element(c.begin(), c.end()) <= 1);
        }
    }
    CHECK(ids.size() == total);
    const auto c = class_counts(d.source.y, g.classes);
    CHECK(*std::max_element(c.begin(), c.end()) - *std::min_element(c.begin(), c.end()) <= 1);

    for (std::size_t i = 1; i < d.domains.size(); ++i) {
        CHECK(d.domains[i].timestamp > d.domains[i - 1].timestamp);
        CHECK(d.domains[i].angle > d.domains[i - 1].angle);
    }

    const Dataset again = generate(g);
    CHECK(bitwise_equal(d.source.x, again.source.x));
    for (std::size_t i = 0; i < d.domains.size(); ++i) CHECK(bitwise_equal(d.domains[i].eval.x, again.domains[i].eval.x));
    const Dataset other = generate(small_config(4));
    CHECK_FALSE(bitwise_equal(d.source.x, other.source.x));
}

TEST_CASE("export and load round trip") {
    const Dataset d = generate(small_config());
    const fs::path dir = scratch_dir("roundtrip");
    export_dataset(d, dir);
    const Dataset back = load_external(dir);
    CHECK(back.classes == d.classes);
    CHECK(bitwise_equal(back.source.x, d.source.x));
    CHECK(back.source.y == d.source.y);
    REQUIRE(back.domains.size() == d.domains.size());
    for (std::size_t i = 0; i < d.domains.size(); ++i) {
        CHECK(back.domains[i].timestamp == d.domains[i].timestamp);
        CHECK(back.domains[i].angle == d.domains[i].angle);
        CHECK(bitwise_equal(back.domains[i].support, d.domains[i].support));
        CHECK(bitwise_equal(back.domains[i].query, d.domains[i].query));
        CHECK(bitwise_equal(back.domains[i].eval.x, d.domains[i].eval.x));
        CHECK(back.domains[i].eval.y == d.domains[i].eval.y);
    }
    fs::remove_all(dir);
}

TEST_CASE("load_external rejects malformed directories") {
    const Dataset d = generate(small_config());

    SUBCASE("missing eval file names the domain") {
        const fs::path dir = scratch_dir("missing");
        export_dataset(d, dir);
        fs::remove(dir / "domain_3_eval.csv");
        try {
            load_external(dir);
            FAIL("expected ParseError");
        } catch (const ParseError& e) {
            CHECK(std::string(e.what()).find("domain 3") != std::string::npos);
            CHECK(std::string(e.what()).find("eval") != std::string::npos);
        }
        fs::remove_all(dir);
    }
    SUBCASE("dimension mismatch") {
        const fs::path dir = scratch_dir("dim");
        export_dataset(d, dir);
        std::ofstream(dir / "domain_2_query.csv") << "x0,x1,x2\n1,2,3\n";
        CHECK_THROWS_AS(load_external(dir), ParseError);
        fs::remove_all(dir);
    }
    SUBCASE("malformed number") {
        const fs::path dir = scratch_dir("number");
        export_dataset(d, dir);
        std::ofstream(dir / "domain_1_support.csv") << "x0,x1\n1,abc\n";
        CHECK_THROWS_AS(load_external(dir), ParseError);
        fs::remove_all(dir);
    }
    SUBCASE("missing directory") { CHECK_THROWS_AS(load_external(scratch_dir("absent")), IoError); }
}

TEST_CASE("generator validation") {
    auto expect_error = [](auto mutate) {
        GeneratorConfig g = small_config();
        mutate(g);
        CHECK_THROWS_AS(g.validate(), ConfigError);
    };
    expect_error([](GeneratorConfig& g) { g.angle_end = g.angle_start; });
    expect_error([](GeneratorConfig& g) { g.classes = 1; });
    expect_error([](GeneratorConfig& g) { g.domain_count = 1; });
    expect_error([](GeneratorConfig& g) { g.noise = 0.0; });
    expect_error([](GeneratorConfig& g) { g.radius = -1.0; });
    expect_error([](GeneratorConfig& g) { g.eval_samples = 0; });
    expect_error([](GeneratorConfig& g) { g.input_dim = 1; });
    expect_error([](GeneratorConfig& g) { g.test_angle_start = 30.0; });
    CHECK_NOTHROW(small_config().validate());
}

#include "doctest.h"

#include <array>
#include <cmath>

#include "pcada/errors.hpp"
#include "pcada/kernels.hpp"
#include "pcada/nn.hpp"
#include "test_util.hpp"

using namespace pcada;
using testutil::random_matrix;

namespace {

DenseNet single_layer(Matrix w, Vector b, Activation act) {
    DenseLayer l;
    l.weight = std::move(w);
    l.bias = std::move(b);
    l.activation = act;
    return DenseNet({l});
}

DenseNet random_net(std::initializer_list<std::size_t> dims, std::initializer_list<Activation> acts, Rng& rng) {
    const std::vector<std::size_t> d(dims);
    const std::vector<Activation> a(acts);
    return DenseNet::make(d, a, rng);
}

} // namespace

// ---------------------------------------------------------------------------
// Matrix and kernels
// ---------------------------------------------------------------------------

TEST_CASE("matrix basics") {
    Matrix m = Matrix::from_rows({{1, 2}, {3, 4}, {5, 6}});
    CHECK(m.rows() == 3);
    CHECK(m.cols() == 2);
    CHECK(m(2, 1) == 6);
    const std::array<std::size_t, 2> idx{2, 0};
    const Matrix s = select_rows(m, idx);
    CHECK(s == Matrix::from_rows({{5, 6}, {1, 2}}));
    CHECK(concat_rows(s, m).rows() == 5);
    CHECK(column_sums(m) == Matrix::from_rows({{9, 12}}));
    CHECK_THROWS_AS(Matrix(2, 2, std::vector<double>{1, 2, 3}), ShapeError);
}

TEST_CASE("kernels: parallel and serial agree bitwise") {
    Rng rng = make_stream(7, "test");
    const std::size_t saved = kernels::parallel_threshold();
    kernels::set_parallel_threshold(0);  // force the parallel branch
    for (int rep = 0; rep < 5; ++rep) {
        const Matrix a = random_matrix(37 + rep, 23, rng);
        const Matrix b = random_matrix(23, 19, rng);
        const Matrix c = random_matrix(37 + rep, 19, rng);
        const Matrix d = random_matrix(11, 23, rng);
        CHECK(kernels::matmul(a, b) == kernels::serial::matmul(a, b));
        CHECK(kernels::matmul_tn(a, c) == kernels::serial::matmul_tn(a, c));
        CHECK(kernels::matmul_nt(a, d) == kernels::serial::matmul_nt(a, d));
        CHECK(kernels::pairwise_sq_dists(a, d) == kernels::serial::pairwise_sq_dists(a, d));
    }
    kernels::set_parallel_threshold(saved);
}

TEST_CASE("kernels: values against naive loops") {
    Rng rng = make_stream(8, "test");
    const Matrix a = random_matrix(5, 4, rng), b = random_matrix(4, 3, rng), c = random_matrix(5, 3, rng);
    const Matrix ab = kernels::matmul(a, b), atc = kernels::matmul_tn(a, c), abt = kernels::matmul_nt(c, c);
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 3; ++j) {
            double s = 0;
            for (std::size_t k = 0; k < 4; ++k) s += a(i, k) * b(k, j);
            CHECK(ab(i, j) == doctest::Approx(s).epsilon(1e-14));
        }
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 3; ++j) {
            double s = 0;
            for (std::size_t k = 0; k < 5; ++k) s += a(k, i) * c(k, j);
            CHECK(atc(i, j) == doctest::Approx(s).epsilon(1e-14));
        }
    const Matrix d = kernels::pairwise_sq_dists(a, a);
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(d(i, i) == 0.0);
        for (std::size_t j = 0; j < 5; ++j) CHECK(d(i, j) == doctest::Approx(testutil::sq_dist(a, i, a, j)));
    }
    CHECK(abt.rows() == 5);
    CHECK_THROWS_AS(kernels::matmul(a, a), ShapeError);
}

// ---------------------------------------------------------------------------
// forward / backward
// ---------------------------------------------------------------------------

TEST_CASE("forward examples") {
    SUBCASE("identity layer with identity weights returns the input") {
        Matrix w(3, 3);
        for (std::size_t i = 0; i < 3; ++i) w(i, i) = 1.0;
        DenseNet net = single_layer(w, Vector(3, 0.0), Activation::identity);
        const Matrix x = Matrix::from_rows({{1.5, -2, 3}, {0, 4, -1}});
        CHECK(net.predict(x) == x);
    }
    SUBCASE("softmax of zero logits is uniform") {
        const Matrix p = softmax_rows(Matrix(1, 4));
        for (double v : p.values()) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));
    }
    SUBCASE("relu") {
        DenseNet net = single_layer(Matrix::from_rows({{1, 0}, {0, 1}}), {0, 0}, Activation::relu);
        CHECK(net.predict(Matrix::from_rows({{-1, 2}})) == Matrix::from_rows({{0, 2}}));
    }
    SUBCASE("dimension mismatch") {
        DenseNet net = single_layer(Matrix(3, 2), {0, 0}, Activation::identity);
        CHECK_THROWS_AS(net.predict(Matrix(2, 4)), ShapeError);
    }
}

TEST_CASE("softmax rows are positive and sum to one") {
    Rng rng = make_stream(1, "test");
    const Matrix p = softmax_rows(random_matrix(20, 7, rng, 30.0));
    for (std::size_t r = 0; r < p.rows(); ++r) {
        double s = 0;
        for (double v : p.row(r)) {
            CHECK(v > 0.0);
            s += v;
        }
        CHECK(std::abs(s - 1.0) <= 1e-12);
    }
}

TEST_CASE("forward is deterministic") {
    Rng rng = make_stream(2, "test");
    DenseNet net = random_net({4, 8, 3}, {Activation::relu, Activation::softmax}, rng);
    const Matrix x = random_matrix(6, 4, rng);
    CHECK(net.predict(x) == net.predict(x));
}

TEST_CASE("backward: quadratic loss through one identity layer") {
    // L = 1/2 ||W^T x - y||^2 with W stored in x out; dW = x (Wx - y)^T
    const Matrix w = Matrix::from_rows({{1, 2}, {-1, 0.5}, {0.3, 0}});
    DenseNet net = single_layer(w, {0, 0}, Activation::identity);
    const Matrix x = Matrix::from_rows({{1, 2, 3}});
    const Matrix y = Matrix::from_rows({{0.5, -1}});
    const Matrix out = net.forward(x);
    Matrix r(1, 2);
    for (std::size_t j = 0; j < 2; ++j) r(0, j) = out(0, j) - y(0, j);
    net.zero_grad();
    net.backward(r);
    const auto& l = net.layer(0);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 2; ++j) CHECK(l.grad_weight(i, j) == doctest::Approx(x(0, i) * r(0, j)));
    CHECK(l.grad_bias[0] == doctest::Approx(r(0, 0)));
}

TEST_CASE("backward: zero upstream gives zero parameter gradients") {
    Rng rng = make_stream(3, "test");
    DenseNet net = random_net({4, 6, 3}, {Activation::relu, Activation::identity}, rng);
    net.forward(random_matrix(5, 4, rng));
    net.zero_grad();
    net.backward(Matrix(5, 3));
    CHECK(net.grad_norm_sq() == 0.0);
}

TEST_CASE("backward without forward is a state error") {
    Rng rng = make_stream(3, "test");
    DenseNet net = random_net({4, 3}, {Activation::identity}, rng);
    CHECK_THROWS_AS(net.backward(Matrix(1, 3)), StateError);
}

TEST_CASE("gradients accumulate until zero_grad") {
    Rng rng = make_stream(4, "test");
    DenseNet net = random_net({3, 2}, {Activation::identity}, rng);
    const Matrix x = random_matrix(2, 3, rng);
    const Matrix g = random_matrix(2, 2, rng);
    net.zero_grad();
    net.forward(x);
    net.backward(g);
    const double once = net.grad_norm_sq();
    net.forward(x);
    net.backward(g);
    CHECK(net.grad_norm_sq() == doctest::Approx(4.0 * once));
    net.zero_grad();
    CHECK(net.grad_norm_sq() == 0.0);
}

// ---------------------------------------------------------------------------
// sgd_step
// ---------------------------------------------------------------------------

TEST_CASE("sgd_step examples") {
    DenseNet net = single_layer(Matrix::from_rows({{1.0}}), {0.0}, Activation::identity);
    SUBCASE("plain step") {
        net.layer(0).grad_weight(0, 0) = 2.0;
        sgd_step(net, {0.1, 0.0, 0.0});
        CHECK(net.layer(0).weight(0, 0) == doctest::Approx(0.8).epsilon(1e-15));
    }
    SUBCASE("momentum accumulates on the second step") {
        const SgdConfig cfg{0.1, 0.9, 0.0};
        net.layer(0).grad_weight(0, 0) = 2.0;
        sgd_step(net, cfg);  // v = 2, w = 1 - 0.2
        CHECK(net.layer(0).weight(0, 0) == doctest::Approx(0.8));
        sgd_step(net, cfg);  // v = 0.9*2 + 2 = 3.8, w = 0.8 - 0.38
        CHECK(net.layer(0).momentum_weight(0, 0) == doctest::Approx(3.8));
        CHECK(net.layer(0).weight(0, 0) == doctest::Approx(0.42));
    }
    SUBCASE("weight decay enters the velocity") {
        sgd_step(net, {0.1, 0.0, 0.5});  // v = 0 + 0.5*1, w = 1 - 0.05
        CHECK(net.layer(0).weight(0, 0) == doctest::Approx(0.95));
    }
    SUBCASE("zero gradient, zero state, zero decay is the identity") {
        Rng rng = make_stream(5, "test");
        DenseNet big = random_net({4, 5, 2}, {Activation::relu, Activation::identity}, rng);
        const auto before = big.checksum();
        big.zero_grad();
        sgd_step(big, {0.5, 0.9, 0.0});
        CHECK(big.checksum() == before);
    }
    SUBCASE("frozen nets never move") {
        net.layer(0).grad_weight(0, 0) = 2.0;
        net.set_frozen(true);
        sgd_step(net, {0.1, 0.0, 0.0});
        CHECK(net.layer(0).weight(0, 0) == 1.0);
    }
}

TEST_CASE("sgd config validation") {
    CHECK_THROWS_AS(SgdConfig({0.0, 0.9, 0.0}).validate(), ConfigError);
    CHECK_THROWS_AS(SgdConfig({0.1, 1.0, 0.0}).validate(), ConfigError);
    CHECK_THROWS_AS(SgdConfig({0.1, 0.5, -1.0}).validate(), ConfigError);
    CHECK_NOTHROW(SgdConfig({0.1, 0.0, 0.0}).validate());
}

// ---------------------------------------------------------------------------
// cross entropy and grad_check
// ---------------------------------------------------------------------------

TEST_CASE("softmax_cross_entropy") {
    SUBCASE("uniform logits, K=2") {
        const std::vector<int> y{0, 1};
        const auto r = softmax_cross_entropy(Matrix(2, 2), y);
        CHECK(r.loss == doctest::Approx(std::log(2.0)).epsilon(1e-15));
        CHECK(r.grad(0, 0) == doctest::Approx(-0.25));
        CHECK(r.grad(0, 1) == doctest::Approx(0.25));
    }
    SUBCASE("confident correct logits -> 0") {
        const std::vector<int> y{1};
        CHECK(softmax_cross_entropy(Matrix::from_rows({{-50, 50}}), y).loss < 1e-40);
    }
    SUBCASE("label out of range") {
        const std::vector<int> y{2};
        CHECK_THROWS_AS(softmax_cross_entropy(Matrix(1, 2), y), InputError);
    }
}

TEST_CASE("grad_check: cross entropy on a random 3-layer net") {
    Rng rng = make_stream(6, "test");
    DenseNet net = random_net({5, 7, 6, 3}, {Activation::sigmoid, Activation::sigmoid, Activation::identity}, rng);
    const Matrix x = random_matrix(8, 5, rng);
    const std::vector<int> y{0, 1, 2, 0, 1, 2, 0, 1};
    const auto res = grad_check(
        [&](bool g) {
            ForwardTrace tr;
            const auto ce = softmax_cross_entropy(net.forward(x, &tr), y);
            if (g) net.backward(tr, ce.grad);
            return ce.loss;
        },
        net);
    CHECK(res.max_rel_error < 1e-4);
    CHECK(res.checked == net.parameter_count());
}

TEST_CASE("grad_check: softmax activation layer") {
    Rng rng = make_stream(9, "test");
    DenseNet net = random_net({4, 5, 3}, {Activation::sigmoid, Activation::softmax}, rng);
    const Matrix x = random_matrix(6, 4, rng);
    const Matrix target = random_matrix(6, 3, rng);
    const auto res = grad_check(
        [&](bool g) {
            ForwardTrace tr;
            const Matrix p = net.forward(x, &tr);
            double loss = 0;
            Matrix up(p.rows(), p.cols());
            for (std::size_t i = 0; i < p.size(); ++i) {
                loss += p.data()[i] * target.data()[i];
                up.data()[i] = target.data()[i];
            }
            if (g) net.backward(tr, up);
            return loss;
        },
        net);
    CHECK(res.max_rel_error < 1e-4);
}

TEST_CASE("grad_check: constant loss has zero error") {
    Rng rng = make_stream(10, "test");
    DenseNet net = random_net({3, 2}, {Activation::identity}, rng);
    const auto res = grad_check([](bool) { return 1.5; }, net);
    CHECK(res.max_rel_error == 0.0);
}

TEST_CASE("grad_check: detects a wrong gradient and a non-finite loss") {
    Rng rng = make_stream(11, "test");
    DenseNet net = random_net({3, 2}, {Activation::identity}, rng);
    const Matrix x = random_matrix(4, 3, rng);
    const auto bad = grad_check(
        [&](bool g) {
            ForwardTrace tr;
            const Matrix out = net.forward(x, &tr);
            double loss = 0;
            for (double v : out.values()) loss += v * v;
            if (g) {
                Matrix up = out;
                up *= 1.0;  // missing factor 2
                net.backward(tr, up);
            }
            return loss;
        },
        net);
    CHECK(bad.max_rel_error > 0.3);
    CHECK_THROWS_AS(grad_check([](bool) { return std::nan(""); }, net), NumericError);
}

TEST_CASE("forward rejects non-finite outputs") {
    DenseNet net = single_layer(Matrix::from_rows({{1.0}}), {0.0}, Activation::identity);
    CHECK_THROWS_AS(net.predict(Matrix::from_rows({{std::numeric_limits<double>::infinity()}})), NumericError);
}

TEST_CASE("argmax ties go to the lowest index") {
    const auto a = argmax_rows(Matrix::from_rows({{1, 3, 3}, {2, 2, 2}, {0, -1, 5}}));
    CHECK(a == std::vector<int>{1, 0, 2});
}

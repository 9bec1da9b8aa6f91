#include "pcada/kernels.hpp"

#include <atomic>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "pcada/errors.hpp"

namespace pcada::kernels {

namespace {

std::atomic<std::size_t> g_threshold{1u << 15};

void require(bool ok, const char* what, const Matrix& a, const Matrix& b) {
    if (!ok)
        throw ShapeError(std::string(what) + ": incompatible shapes " +
                         std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + " and " +
                         std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
}

// Row kernels shared by both paths so the arithmetic order is identical.

inline void matmul_row(const Matrix& a, const Matrix& b, Matrix& out, std::size_t i) {
    const std::size_t k = a.cols(), m = b.cols();
    double* o = out.data() + i * m;
    const double* ar = a.data() + i * k;
    for (std::size_t p = 0; p < k; ++p) {
        const double av = ar[p];
        const double* br = b.data() + p * m;
        for (std::size_t j = 0; j < m; ++j) o[j] += av * br[j];
    }
}

inline void matmul_tn_row(const Matrix& a, const Matrix& b, Matrix& out, std::size_t p) {
    const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
    double* o = out.data() + p * m;
    for (std::size_t i = 0; i < n; ++i) {
        const double av = a.data()[i * k + p];
        const double* br = b.data() + i * m;
        for (std::size_t j = 0; j < m; ++j) o[j] += av * br[j];
    }
}

inline void matmul_nt_row(const Matrix& a, const Matrix& b, Matrix& out, std::size_t i) {
    const std::size_t m = a.cols(), k = b.rows();
    const double* ar = a.data() + i * m;
    for (std::size_t q = 0; q < k; ++q) {
        const double* br = b.data() + q * m;
        double s = 0.0;
        for (std::size_t j = 0; j < m; ++j) s += ar[j] * br[j];
        out.data()[i * k + q] = s;
    }
}

inline void sq_dist_row(const Matrix& a, const Matrix& b, Matrix& out, std::size_t i) {
    const std::size_t d = a.cols(), nb = b.rows();
    const double* ar = a.data() + i * d;
    for (std::size_t q = 0; q < nb; ++q) {
        const double* br = b.data() + q * d;
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double diff = ar[j] - br[j];
            s += diff * diff;
        }
        out.data()[i * nb + q] = s;
    }
}

template <class RowFn>
void for_rows(std::size_t rows, std::size_t work, RowFn&& fn) {
#ifdef _OPENMP
    const bool go_parallel = work >= g_threshold.load(std::memory_order_relaxed) && rows > 1;
#pragma omp parallel for schedule(static) if (go_parallel)
    for (long long i = 0; i < static_cast<long long>(rows); ++i) fn(static_cast<std::size_t>(i));
#else
    (void)work;
    for (std::size_t i = 0; i < rows; ++i) fn(i);
#endif
}

} // namespace

std::size_t parallel_threshold() { return g_threshold.load(); }
void set_parallel_threshold(std::size_t work) { g_threshold.store(work); }

int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    require(a.cols() == b.rows(), "matmul", a, b);
    Matrix out(a.rows(), b.cols());
    for_rows(a.rows(), a.rows() * a.cols() * b.cols(),
             [&](std::size_t i) { matmul_row(a, b, out, i); });
    return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    require(a.rows() == b.rows(), "matmul_tn", a, b);
    Matrix out(a.cols(), b.cols());
    for_rows(a.cols(), a.rows() * a.cols() * b.cols(),
             [&](std::size_t p) { matmul_tn_row(a, b, out, p); });
    return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    require(a.cols() == b.cols(), "matmul_nt", a, b);
    Matrix out(a.rows(), b.rows());
    for_rows(a.rows(), a.rows() * a.cols() * b.rows(),
             [&](std::size_t i) { matmul_nt_row(a, b, out, i); });
    return out;
}

Matrix pairwise_sq_dists(const Matrix& a, const Matrix& b) {
    require(a.cols() == b.cols(), "pairwise_sq_dists", a, b);
    Matrix out(a.rows(), b.rows());
    for_rows(a.rows(), a.rows() * b.rows() * a.cols(),
             [&](std::size_t i) { sq_dist_row(a, b, out, i); });
    return out;
}

namespace serial {

Matrix matmul(const Matrix& a, const Matrix& b) {
    require(a.cols() == b.rows(), "matmul", a, b);
    Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) matmul_row(a, b, out, i);
    return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    require(a.rows() == b.rows(), "matmul_tn", a, b);
    Matrix out(a.cols(), b.cols());
    for (std::size_t p = 0; p < a.cols(); ++p) matmul_tn_row(a, b, out, p);
    return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    require(a.cols() == b.cols(), "matmul_nt", a, b);
    Matrix out(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) matmul_nt_row(a, b, out, i);
    return out;
}

Matrix pairwise_sq_dists(const Matrix& a, const Matrix& b) {
    require(a.cols() == b.cols(), "pairwise_sq_dists", a, b);
    Matrix out(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) sq_dist_row(a, b, out, i);
    return out;
}

} // namespace serial

} // namespace pcada::kernels

#pragma once

// ---------------------------------------------------------------------------
// Data-parallel dense kernels.
//
// Every kernel in `pcada::kernels` is an OpenMP parallel-for over output rows;
// each output element is accumulated by exactly one thread in the same order
// as the reference in `pcada::kernels::serial`, so both produce bitwise-equal
// results regardless of thread count. The parallel region is only entered
// when the work estimate exceeds `parallel_threshold()`; below it the loop
// runs on the calling thread.
//
//   matmul(A, B)            A[n,k]  * B[k,m]   -> [n,m]
//   matmul_tn(A, B)         A[n,k]^T * B[n,m]  -> [k,m]   (weight gradients)
//   matmul_nt(A, B)         A[n,m]  * B[k,m]^T -> [n,k]   (input gradients)
//   pairwise_sq_dists(A, B) ||a_i - b_j||^2    -> [n_a,n_b]
// ---------------------------------------------------------------------------

#include <cstddef>

#include "pcada/matrix.hpp"

namespace pcada::kernels {

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix matmul_tn(const Matrix& a, const Matrix& b);
Matrix matmul_nt(const Matrix& a, const Matrix& b);
Matrix pairwise_sq_dists(const Matrix& a, const Matrix& b);

// Multiply-add count above which kernels fork a parallel team.
std::size_t parallel_threshold();
void set_parallel_threshold(std::size_t work);

// Number of threads an entered parallel region would use (1 without OpenMP).
int max_threads();

namespace serial {

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix matmul_tn(const Matrix& a, const Matrix& b);
Matrix matmul_nt(const Matrix& a, const Matrix& b);
Matrix pairwise_sq_dists(const Matrix& a, const Matrix& b);

} // namespace serial

} // namespace pcada::kernels

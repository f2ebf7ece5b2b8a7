#pragma once

#include <cstdint>

namespace stratus::kernels {

// Raw array kernels. Each has a serial reference implementation and an
// OpenMP variant; dispatch follows stratus::parallel_kernels(). The OpenMP
// paths parallelize over independent output rows, so per-element addition
// order is unchanged; only the global reductions (sum) use a fixed tiling
// that can differ from the serial sweep by rounding.

void matmul(const double* a, const double* b, double* c, std::int64_t m,
            std::int64_t k, std::int64_t n);
// c[m,k] = g[m,n] * b[k,n]^T
void matmul_nt(const double* g, const double* b, double* c, std::int64_t m,
               std::int64_t n, std::int64_t k);
// c[k,n] = a[m,k]^T * g[m,n]
void matmul_tn(const double* a, const double* g, double* c, std::int64_t m,
               std::int64_t k, std::int64_t n);

double sum(const double* x, std::int64_t n);

namespace ref {
void matmul(const double* a, const double* b, double* c, std::int64_t m,
            std::int64_t k, std::int64_t n);
double sum(const double* x, std::int64_t n);
}  // namespace ref

namespace omp {
void matmul(const double* a, const double* b, double* c, std::int64_t m,
            std::int64_t k, std::int64_t n);
double sum(const double* x, std::int64_t n);
}  // namespace omp

}  // namespace stratus::kernels

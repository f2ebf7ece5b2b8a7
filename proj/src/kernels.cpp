#include "stratus/kernels.h"

#include "stratus/tensor.h"

namespace stratus::kernels {

namespace ref {

void matmul(const double* a, const double* b, double* c, std::int64_t m,
            std::int64_t k, std::int64_t n) {
  for (std::int64_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    for (std::int64_t j = 0; j < n; ++j) ci[j] = 0.0;
    for (std::int64_t l = 0; l < k; ++l) {
      double ail = a[i * k + l];
      const double* bl = b + l * n;
      for (std::int64_t j = 0; j < n; ++j) ci[j] += ail * bl[j];
    }
  }
}

double sum(const double* x, std::int64_t n) {
  double s = 0.0;
  for (std::int64_t i = 0; i < n; ++i) s += x[i];
  return s;
}

}  // namespace ref

namespace omp {

void matmul(const double* a, const double* b, double* c, std::int64_t m,
            std::int64_t k, std::int64_t n) {
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    for (std::int64_t j = 0; j < n; ++j) ci[j] = 0.0;
    for (std::int64_t l = 0; l < k; ++l) {
      double ail = a[i * k + l];
      const double* bl = b + l * n;
      for (std::int64_t j = 0; j < n; ++j) ci[j] += ail * bl[j];
    }
  }
}

double sum(const double* x, std::int64_t n) {
  // fixed tiling; tile partials are combined in index order so the result
  // does not depend on the thread count
  const std::int64_t tile = 4096;
  std::int64_t ntiles = (n + tile - 1) / tile;
  std::vector<double> partial(static_cast<std::size_t>(ntiles), 0.0);
#pragma omp parallel for schedule(static)
  for (std::int64_t t = 0; t < ntiles; ++t) {
    std::int64_t lo = t * tile;
    std::int64_t hi = lo + tile < n ? lo + tile : n;
    double s = 0.0;
    for (std::int64_t i = lo; i < hi; ++i) s += x[i];
    partial[static_cast<std::size_t>(t)] = s;
  }
  double s = 0.0;
  for (std::int64_t t = 0; t < ntiles; ++t)
    s += partial[static_cast<std::size_t>(t)];
  return s;
}

}  // namespace omp

void matmul(const double* a, const double* b, double* c, std::int64_t m,
            std::int64_t k, std::int64_t n) {
  if (parallel_kernels())
    omp::matmul(a, b, c, m, k, n);
  else
    ref::matmul(a, b, c, m, k, n);
}

void matmul_nt(const double* g, const double* b, double* c, std::int64_t m,
               std::int64_t n, std::int64_t k) {
#pragma omp parallel for schedule(static) if (parallel_kernels())
  for (std::int64_t i = 0; i < m; ++i) {
    double* ci = c + i * k;
    for (std::int64_t l = 0; l < k; ++l) {
      double s = 0.0;
      const double* gi = g + i * n;
      const double* bl = b + l * n;
      for (std::int64_t j = 0; j < n; ++j) s += gi[j] * bl[j];
      ci[l] = s;
    }
  }
}

void matmul_tn(const double* a, const double* g, double* c, std::int64_t m,
               std::int64_t k, std::int64_t n) {
#pragma omp parallel for schedule(static) if (parallel_kernels())
  for (std::int64_t l = 0; l < k; ++l) {
    double* cl = c + l * n;
    for (std::int64_t j = 0; j < n; ++j) cl[j] = 0.0;
    for (std::int64_t i = 0; i < m; ++i) {
      double ail = a[i * k + l];
      const double* gi = g + i * n;
      for (std::int64_t j = 0; j < n; ++j) cl[j] += ail * gi[j];
    }
  }
}

double sum(const double* x, std::int64_t n) {
  return parallel_kernels() ? omp::sum(x, n) : ref::sum(x, n);
}

}  // namespace stratus::kernels

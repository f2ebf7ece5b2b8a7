// Times the OpenMP kernels against the serial reference implementations.
// Emits CSV: kernel,size,threads,ref_ms,omp_ms,speedup

#include <chrono>
#include <iostream>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "CLI11.hpp"
#include "stratus/kernels.h"
#include "stratus/rng.h"

using namespace stratus;

namespace {

double time_ms(int iters, const std::function<void()>& fn) {
  fn();  // warm up
  auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < iters; ++i) fn();
  return std::chrono::duration<double, std::milli>(
             std::chrono::steady_clock::now() - t0)
             .count() /
         iters;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"serial reference vs OpenMP kernel timings"};
  std::vector<int> sizes = {64, 128, 256, 512};
  int iters = 5;
  app.add_option("--sizes", sizes, "square matmul sizes")->delimiter(',');
  app.add_option("--iters", iters, "repetitions per timing");
  CLI11_PARSE(app, argc, argv);

  int threads = 1;
#ifdef _OPENMP
  threads = omp_get_max_threads();
#endif

  Rng rng(3);
  std::cout << "kernel,size,threads,ref_ms,omp_ms,speedup\n";
  for (int n : sizes) {
    std::vector<double> a(static_cast<std::size_t>(n) * n);
    std::vector<double> b(static_cast<std::size_t>(n) * n);
    std::vector<double> c(static_cast<std::size_t>(n) * n);
    for (auto& x : a) x = rng.normal();
    for (auto& x : b) x = rng.normal();

    double ref = time_ms(
        iters, [&] { kernels::ref::matmul(a.data(), b.data(), c.data(), n, n, n); });
    double omp = time_ms(
        iters, [&] { kernels::omp::matmul(a.data(), b.data(), c.data(), n, n, n); });
    std::cout << "matmul," << n << "," << threads << "," << ref << "," << omp
              << "," << ref / omp << "\n";

    auto len = static_cast<std::int64_t>(a.size());
    double ref_s = time_ms(iters, [&] {
      volatile double s = kernels::ref::sum(a.data(), len);
      (void)s;
    });
    double omp_s = time_ms(iters, [&] {
      volatile double s = kernels::omp::sum(a.data(), len);
      (void)s;
    });
    std::cout << "sum," << n << "," << threads << "," << ref_s << "," << omp_s
              << "," << ref_s / omp_s << "\n";
  }
  return 0;
}

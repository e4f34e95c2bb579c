// Timing comparison of the OpenMP kernels against their serial references,
// with a correctness cross-check on every measured case.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <vector>

#include "dualpol/kernels.hpp"
#include "dualpol/rng.hpp"

using namespace dualpol;
using clk = std::chrono::steady_clock;

namespace {

double seconds(clk::time_point a, clk::time_point b) {
  return std::chrono::duration<double>(b - a).count();
}

template <class F>
double time_best(F&& f, int reps) {
  double best = 1e30;
  for (int r = 0; r < reps; ++r) {
    auto t0 = clk::now();
    f();
    best = std::min(best, seconds(t0, clk::now()));
  }
  return best;
}

float max_abs_diff(const std::vector<float>& a, const std::vector<float>& b) {
  float m = 0;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

void bench_case(const char* name, int m, int k, int n, int reps) {
  Rng rng(42);
  std::vector<float> A(size_t(m) * k), B(size_t(k) * n), C1(size_t(m) * n), C2(C1);
  for (auto& x : A) x = float(rng.normal());
  for (auto& x : B) x = float(rng.normal());

  double t_ref = time_best([&] { kern::ref::gemm_nn(A.data(), B.data(), C1.data(), m, k, n); },
                           reps);
  double t_omp = time_best([&] { kern::gemm_nn(A.data(), B.data(), C2.data(), m, k, n); },
                           reps);
  float diff = max_abs_diff(C1, C2);
  std::printf("%-22s %5dx%-5dx%-5d serial %8.3f ms  parallel %8.3f ms  speedup %5.2fx  maxdiff %.2e\n",
              name, m, k, n, t_ref * 1e3, t_omp * 1e3, t_ref / t_omp, double(diff));
}

void bench_rows(const char* name, int m, int n, int reps, bool softmax) {
  Rng rng(7);
  std::vector<float> X(size_t(m) * n), Y1(X.size()), Y2(X.size());
  for (auto& x : X) x = float(rng.normal());
  auto fr = [&] {
    if (softmax)
      kern::ref::softmax_rows(X.data(), Y1.data(), m, n);
    else
      kern::ref::layernorm_rows(X.data(), Y1.data(), m, n, 1e-5f);
  };
  auto fo = [&] {
    if (softmax)
      kern::softmax_rows(X.data(), Y2.data(), m, n);
    else
      kern::layernorm_rows(X.data(), Y2.data(), m, n, 1e-5f);
  };
  double t_ref = time_best(fr, reps), t_omp = time_best(fo, reps);
  std::printf("%-22s %5dx%-11d serial %8.3f ms  parallel %8.3f ms  speedup %5.2fx  maxdiff %.2e\n",
              name, m, n, t_ref * 1e3, t_omp * 1e3, t_ref / t_omp,
              double(max_abs_diff(Y1, Y2)));
}

}  // namespace

int main(int argc, char** argv) {
  int reps = argc > 1 ? std::atoi(argv[1]) : 5;
#ifdef _OPENMP
  std::printf("OpenMP threads: %d, reps per case: %d (best-of)\n", omp_get_max_threads(), reps);
#else
  std::printf("built without OpenMP; both columns run serial code (reps %d)\n", reps);
#endif
  bench_case("gemm_nn small", 64, 64, 64, reps);
  bench_case("gemm_nn attention", 256, 64, 256, reps);
  bench_case("gemm_nn mlp", 256, 256, 1024, reps);
  bench_case("gemm_nn large", 512, 512, 512, reps);
  bench_rows("softmax_rows", 4096, 256, reps, true);
  bench_rows("layernorm_rows", 4096, 256, reps, false);
  return 0;
}

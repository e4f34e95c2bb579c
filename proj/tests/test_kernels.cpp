#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "dualpol/kernels.hpp"
#include "dualpol/rng.hpp"
#include "dualpol/tensor.hpp"

using namespace dualpol;

namespace {

template <class T>
Tensor<T> random_tensor(int r, int c, Rng& rng) {
  return Tensor<T>::randn(r, c, rng);
}

}  // namespace

TEST_CASE("parallel gemm_nn matches serial reference") {
  Rng rng(1);
  for (auto [m, k, n] : {std::tuple{3, 5, 7}, {17, 64, 33}, {1, 1, 1}, {40, 128, 96}}) {
    auto A = random_tensor<double>(m, k, rng);
    auto B = random_tensor<double>(k, n, rng);
    Tensor<double> C(m, n), Cr(m, n);
    kern::gemm_nn(A.data(), B.data(), C.data(), m, k, n);
    kern::ref::gemm_nn(A.data(), B.data(), Cr.data(), m, k, n);
    for (int64_t i = 0; i < C.size(); ++i) CHECK(C.v[i] == doctest::Approx(Cr.v[i]).epsilon(1e-12));
  }
}

TEST_CASE("accumulating transposed gemms match reference") {
  Rng rng(2);
  int m = 13, k = 31, n = 22;
  auto A = random_tensor<double>(m, k, rng);
  auto Bt = random_tensor<double>(n, k, rng);
  Tensor<double> C(m, n), Cr(m, n);
  C.fill(0.5);
  Cr.fill(0.5);
  kern::gemm_nt_acc(A.data(), Bt.data(), C.data(), m, k, n);
  kern::ref::gemm_nt_acc(A.data(), Bt.data(), Cr.data(), m, k, n);
  for (int64_t i = 0; i < C.size(); ++i) CHECK(C.v[i] == doctest::Approx(Cr.v[i]).epsilon(1e-12));

  auto At = random_tensor<double>(k, m, rng);
  auto B = random_tensor<double>(k, n, rng);
  Tensor<double> D(m, n), Dr(m, n);
  kern::gemm_tn_acc(At.data(), B.data(), D.data(), m, k, n);
  kern::ref::gemm_tn_acc(At.data(), B.data(), Dr.data(), m, k, n);
  for (int64_t i = 0; i < D.size(); ++i) CHECK(D.v[i] == doctest::Approx(Dr.v[i]).epsilon(1e-12));
}

TEST_CASE("softmax and layernorm match reference") {
  Rng rng(3);
  auto X = random_tensor<double>(9, 17, rng);
  Tensor<double> Y(9, 17), Yr(9, 17);
  kern::softmax_rows(X.data(), Y.data(), 9, 17);
  kern::ref::softmax_rows(X.data(), Yr.data(), 9, 17);
  for (int64_t i = 0; i < Y.size(); ++i) CHECK(Y.v[i] == doctest::Approx(Yr.v[i]).epsilon(1e-12));
  for (int i = 0; i < 9; ++i) {
    double s = 0;
    for (int j = 0; j < 17; ++j) s += Y.at(i, j);
    CHECK(s == doctest::Approx(1.0));
  }

  kern::layernorm_rows(X.data(), Y.data(), 9, 17, 1e-5);
  kern::ref::layernorm_rows(X.data(), Yr.data(), 9, 17, 1e-5);
  for (int64_t i = 0; i < Y.size(); ++i) CHECK(Y.v[i] == doctest::Approx(Yr.v[i]).epsilon(1e-12));
}

TEST_CASE("activation derivatives match finite differences") {
  for (double x : {-2.0, -0.3, 0.0, 0.7, 3.0}) {
    double h = 1e-6;
    CHECK(kern::gelu_grad(x) ==
          doctest::Approx((kern::gelu(x + h) - kern::gelu(x - h)) / (2 * h)).epsilon(1e-6));
    CHECK(kern::silu_grad(x) ==
          doctest::Approx((kern::silu(x + h) - kern::silu(x - h)) / (2 * h)).epsilon(1e-6));
  }
}

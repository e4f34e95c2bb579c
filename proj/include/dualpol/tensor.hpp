#pragma once

#include <cassert>
#include <cmath>
#include <cstdint>
#include <vector>

#include "dualpol/rng.hpp"

namespace dualpol {

// Row-major 2D tensor. Vectors are 1 x n, scalars 1 x 1.
template <class T>
struct Tensor {
  int rows = 0, cols = 0;
  std::vector<T> v;

  Tensor() = default;
  Tensor(int r, int c) : rows(r), cols(c), v(size_t(r) * c, T(0)) {}

  int64_t size() const { return int64_t(rows) * cols; }
  T& at(int r, int c) { return v[size_t(r) * cols + c]; }
  const T& at(int r, int c) const { return v[size_t(r) * cols + c]; }
  T* data() { return v.data(); }
  const T* data() const { return v.data(); }
  T* row(int r) { return v.data() + size_t(r) * cols; }
  const T* row(int r) const { return v.data() + size_t(r) * cols; }

  void fill(T x) { std::fill(v.begin(), v.end(), x); }

  bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }

  bool all_finite() const {
    for (T x : v)
      if (!std::isfinite(double(x))) return false;
    return true;
  }

  static Tensor randn(int r, int c, Rng& rng, T stddev = T(1)) {
    Tensor t(r, c);
    for (auto& x : t.v) x = T(rng.normal() * double(stddev));
    return t;
  }

  template <class U>
  Tensor<U> cast() const {
    Tensor<U> o(rows, cols);
    for (int64_t i = 0; i < size(); ++i) o.v[i] = U(v[i]);
    return o;
  }
};

}  // namespace dualpol

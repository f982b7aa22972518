#pragma once

#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

namespace abflux::detail {

// Gauss-Legendre rule on [-1, 1] by Newton iteration on P_n.
template <typename T>
void gauss_legendre_unit(int n, std::vector<T>& x, std::vector<T>& w) {
  x.assign(n, T(0));
  w.assign(n, T(0));
  const int m = (n + 1) / 2;
  for (int i = 0; i < m; ++i) {
    T z = std::cos(std::numbers::pi_v<T> * (T(i) + T(0.75)) / (T(n) + T(0.5)));
    T pp = 0;
    for (int it = 0; it < 100; ++it) {
      T p1 = 1, p2 = 0;
      for (int j = 0; j < n; ++j) {
        const T p3 = p2;
        p2 = p1;
        p1 = ((T(2 * j + 1)) * z * p2 - T(j) * p3) / T(j + 1);
      }
      pp = T(n) * (z * p1 - p2) / (z * z - T(1));
      const T z1 = z;
      z = z1 - p1 / pp;
      if (std::fabs(z - z1) <= 4 * std::numeric_limits<T>::epsilon()) break;
    }
    x[i] = -z;
    x[n - 1 - i] = z;
    w[i] = T(2) / ((T(1) - z * z) * pp * pp);
    w[n - 1 - i] = w[i];
  }
}

// Barycentric Lagrange basis values at t for nodes xs with weights bw.
template <typename T>
void lagrange_basis(const T* xs, const T* bw, int n, T t, T* out) {
  for (int j = 0; j < n; ++j) {
    if (t == xs[j]) {
      for (int k = 0; k < n; ++k) out[k] = T(k == j);
      return;
    }
  }
  T den = 0;
  for (int j = 0; j < n; ++j) {
    out[j] = bw[j] / (t - xs[j]);
    den += out[j];
  }
  for (int j = 0; j < n; ++j) out[j] /= den;
}

template <typename T>
std::vector<T> barycentric_weights(const T* xs, int n) {
  std::vector<T> bw(n, T(1));
  for (int j = 0; j < n; ++j)
    for (int k = 0; k < n; ++k)
      if (k != j) bw[j] /= (xs[j] - xs[k]);
  return bw;
}

}  // namespace abflux::detail

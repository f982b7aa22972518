#pragma once

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace abflux {

struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};

// Modified Bessel functions I_nu, K_nu of real order nu >= 0 and real x > 0.
// Internally everything runs in long double; the public scalar only sets the
// return type.
template <typename T>
struct BesselPair {
  T i;
  T k;
};

namespace detail {

using ld = long double;

// Taylor coefficients of 1/Gamma(1+x) about x = 0.
inline constexpr std::array<ld, 31> kRecipGammaTaylor = {
    1.0L,
    0.5772156649015328606065121L,
    -0.6558780715202538810770195L,
    -0.04200263503409523552900393L,
    0.1665386113822914895017008L,
    -0.0421977345555443367482083L,
    -0.009621971527876973562114922L,
    0.00721894324666309954239501L,
    -0.001165167591859065112113971L,
    -0.00021524167411495097281573L,
    0.0001280502823881161861531986L,
    -0.00002013485478078823865568939L,
    -0.000001250493482142670657345359L,
    0.00000113302723198169588237413L,
    -0.0000002056338416977607103450154L,
    6.116095104481415817862499e-9L,
    5.002007644469222930055665e-9L,
    -1.181274570487020144588127e-9L,
    1.04342671169110051049154e-10L,
    7.782263439905071254049937e-12L,
    -3.696805618642205708187816e-12L,
    5.100370287454475979015481e-13L,
    -2.05832605356650678322243e-14L,
    -5.348122539423017982370017e-15L,
    1.226778628238260790158894e-15L,
    -1.181259301697458769513765e-16L,
    1.186692254751600332579777e-18L,
    1.412380655318031781555804e-18L,
    -2.298745684435370206592479e-19L,
    1.714406321927337433383963e-20L,
    1.337351730493693114864781e-22L,
};

// gam1 = (1/G(1-mu) - 1/G(1+mu)) / (2 mu), gam2 = (1/G(1-mu) + 1/G(1+mu)) / 2
// for |mu| <= 1/2.
inline void temme_gammas(ld mu, ld& gam1, ld& gam2, ld& gampl, ld& gammi) {
  const auto& d = kRecipGammaTaylor;
  ld odd = 0.0L, even = 0.0L;
  const ld mu2 = mu * mu;
  for (int k = static_cast<int>(d.size()) - 1; k >= 0; --k) {
    if (k % 2 == 0)
      even = even * mu2 + d[k];
    else
      odd = odd * mu2 + d[k];
  }
  // f(mu) = even(mu^2) + mu * odd(mu^2)
  gam1 = -odd;
  gam2 = even;
  gampl = gam2 - mu * gam1;
  gammi = gam2 + mu * gam1;
}

// CF1 (modified Lentz): I'_nu(x) / I_nu(x).
inline ld cf1_log_derivative(ld nu, ld x) {
  constexpr ld eps = std::numeric_limits<ld>::epsilon();
  constexpr ld tiny = std::numeric_limits<ld>::min() / eps;
  const ld xi = 1.0L / x, xi2 = 2.0L * xi;
  ld h = nu * xi;
  if (h < tiny) h = tiny;
  ld b = xi2 * nu, d = 0.0L, c = h;
  const int maxit = 200000;
  for (int i = 0; i < maxit; ++i) {
    b += xi2;
    d = 1.0L / (b + d);
    c = b + 1.0L / c;
    const ld del = c * d;
    h *= del;
    if (std::fabs(del - 1.0L) < eps) return h;
  }
  throw DomainError("bessel: continued fraction CF1 did not converge");
}

// K_mu and K_{mu+1} for |mu| <= 1/2.
inline void temme_k(ld mu, ld x, ld& kmu, ld& kmu1) {
  constexpr ld eps = std::numeric_limits<ld>::epsilon();
  constexpr ld pi = std::numbers::pi_v<ld>;
  const ld xi = 1.0L / x;
  if (x < 2.0L) {
    const ld x2 = 0.5L * x;
    const ld pimu = pi * mu;
    const ld fact = (std::fabs(pimu) < eps) ? 1.0L : pimu / std::sin(pimu);
    ld d = -std::log(x2);
    ld e = mu * d;
    const ld fact2 = (std::fabs(e) < eps) ? 1.0L : std::sinh(e) / e;
    ld gam1, gam2, gampl, gammi;
    temme_gammas(mu, gam1, gam2, gampl, gammi);
    ld ff = fact * (gam1 * std::cosh(e) + gam2 * fact2 * d);
    ld sum = ff;
    e = std::exp(e);
    ld p = 0.5L * e / gampl;
    ld q = 0.5L / (e * gammi);
    ld c = 1.0L;
    d = x2 * x2;
    ld sum1 = p;
    for (int i = 1; i < 100000; ++i) {
      const ld fi = static_cast<ld>(i);
      ff = (fi * ff + p + q) / (fi * fi - mu * mu);
      c *= d / fi;
      p /= fi - mu;
      q /= fi + mu;
      const ld del = c * ff;
      sum += del;
      sum1 += c * (p - fi * ff);
      if (std::fabs(del) < std::fabs(sum) * eps) break;
    }
    kmu = sum;
    kmu1 = sum1 * xi * 2.0L;
    return;
  }
  // Steed's CF2.
  ld b = 2.0L * (1.0L + x);
  ld d = 1.0L / b;
  ld h = d, delh = d;
  ld q1 = 0.0L, q2 = 1.0L;
  const ld a1 = 0.25L - mu * mu;
  ld q = a1, c = a1;
  ld a = -a1;
  ld s = 1.0L + q * delh;
  for (int i = 1; i < 100000; ++i) {
    const ld fi = static_cast<ld>(i);
    a -= 2.0L * fi;
    c = -a * c / (fi + 1.0L);
    const ld qnew = (q1 - b * q2) / a;
    q1 = q2;
    q2 = qnew;
    q += c * qnew;
    b += 2.0L;
    d = 1.0L / (b + a * d);
    delh = (b * d - 1.0L) * delh;
    h += delh;
    const ld dels = q * delh;
    s += dels;
    if (std::fabs(dels / s) < eps) break;
  }
  kmu = std::sqrt(pi / (2.0L * x)) * std::exp(-x) / s;
  kmu1 = kmu * (mu + x + 0.5L - a1 * h) * xi;
}

inline void check_args(ld nu, ld x) {
  if (!(x > 0.0L) || !std::isfinite(x)) throw DomainError("bessel: argument must be positive");
  if (!(nu >= 0.0L) || !std::isfinite(nu)) throw DomainError("bessel: order must be non-negative");
}

// Fills k[j] = K_{nu0+j}(x), j = 0..count.
inline void k_ladder(ld nu0, int count, ld x, ld* k) {
  const int nl = static_cast<int>(std::floor(nu0 + 0.5L));
  const ld mu = nu0 - static_cast<ld>(nl);
  ld km, km1;
  temme_k(mu, x, km, km1);
  // climb from mu to nu0
  for (int i = 0; i < nl; ++i) {
    const ld next = 2.0L * (mu + static_cast<ld>(i) + 1.0L) / x * km1 + km;
    km = km1;
    km1 = next;
  }
  k[0] = km;
  if (count >= 1) k[1] = km1;
  for (int j = 2; j <= count; ++j) {
    k[j] = 2.0L * (nu0 + static_cast<ld>(j) - 1.0L) / x * k[j - 1] + k[j - 2];
  }
}

}  // namespace detail

template <typename T>
T gamma_real(T x) {
  if (!std::isfinite(static_cast<long double>(x))) throw DomainError("gamma: non-finite argument");
  if (x <= T(0) && std::floor(x) == x) throw DomainError("gamma: pole at non-positive integer");
  return static_cast<T>(std::tgamma(static_cast<long double>(x)));
}

template <typename T>
BesselPair<T> bessel_ik(T nu, T x) {
  using detail::ld;
  const ld n = static_cast<ld>(nu), xx = static_cast<ld>(x);
  detail::check_args(n, xx);
  ld k[2];
  detail::k_ladder(n, 1, xx, k);
  const ld h = detail::cf1_log_derivative(n, xx);
  const ld rho = h - n / xx;
  const ld i = 1.0L / (xx * (k[1] + rho * k[0]));
  BesselPair<T> out{static_cast<T>(i), static_cast<T>(k[0])};
  if (!std::isfinite(static_cast<ld>(out.i)) || !std::isfinite(static_cast<ld>(out.k)))
    throw std::overflow_error("bessel: result not representable");
  return out;
}

// Derivatives with respect to x.
template <typename T>
BesselPair<T> bessel_ik_dx(T nu, T x) {
  using detail::ld;
  const ld n = static_cast<ld>(nu), xx = static_cast<ld>(x);
  detail::check_args(n, xx);
  ld k[2];
  detail::k_ladder(n, 1, xx, k);
  const ld h = detail::cf1_log_derivative(n, xx);
  const ld rho = h - n / xx;
  const ld i = 1.0L / (xx * (k[1] + rho * k[0]));
  BesselPair<T> out{static_cast<T>(h * i), static_cast<T>(-k[1] + n / xx * k[0])};
  if (!std::isfinite(static_cast<ld>(out.i)) || !std::isfinite(static_cast<ld>(out.k)))
    throw std::overflow_error("bessel: result not representable");
  return out;
}

// K_nu and its x-derivative only (skips the I continued fraction).
template <typename T>
struct KPair {
  T k;
  T dk;
};

template <typename T>
KPair<T> bessel_k_dx(T nu, T x) {
  using detail::ld;
  const ld n = static_cast<ld>(nu), xx = static_cast<ld>(x);
  detail::check_args(n, xx);
  ld k[2];
  detail::k_ladder(n, 1, xx, k);
  KPair<T> out{static_cast<T>(k[0]), static_cast<T>(-k[1] + n / xx * k[0])};
  if (!std::isfinite(static_cast<ld>(out.k)) || !std::isfinite(static_cast<ld>(out.dk)))
    throw std::overflow_error("bessel: result not representable");
  return out;
}

// Values and x-derivatives for the ladder of orders nu0, nu0+1, ..., nu0+count-1.
template <typename T>
struct BesselLadder {
  std::vector<T> i, k, di, dk;
};

template <typename T>
void bessel_ik_ladder(T nu0, int count, T x, BesselLadder<T>& out) {
  using detail::ld;
  const ld n0 = static_cast<ld>(nu0), xx = static_cast<ld>(x);
  detail::check_args(n0, xx);
  if (count < 1) throw DomainError("bessel: empty ladder");
  out.i.resize(count);
  out.k.resize(count);
  out.di.resize(count);
  out.dk.resize(count);
  thread_local std::vector<ld> k, rho;
  k.resize(count + 1);
  rho.resize(count);
  detail::k_ladder(n0, count, xx, k.data());
  const ld ntop = n0 + static_cast<ld>(count - 1);
  rho[count - 1] = detail::cf1_log_derivative(ntop, xx) - ntop / xx;
  for (int j = count - 1; j >= 1; --j) {
    const ld nj = n0 + static_cast<ld>(j);
    rho[j - 1] = 1.0L / (2.0L * nj / xx + rho[j]);
  }
  for (int j = 0; j < count; ++j) {
    const ld nj = n0 + static_cast<ld>(j);
    const ld ij = 1.0L / (xx * (k[j + 1] + rho[j] * k[j]));
    out.i[j] = static_cast<T>(ij);
    out.k[j] = static_cast<T>(k[j]);
    out.di[j] = static_cast<T>((rho[j] + nj / xx) * ij);
    out.dk[j] = static_cast<T>(-k[j + 1] + nj / xx * k[j]);
  }
}

// Coefficient-wise evaluation over an Eigen array of arguments.
template <typename Derived>
auto bessel_k(typename Derived::Scalar nu, const Eigen::ArrayBase<Derived>& x) {
  using S = typename Derived::Scalar;
  return x.unaryExpr([nu](S t) { return bessel_ik<S>(nu, t).k; });
}

template <typename Derived>
auto bessel_i(typename Derived::Scalar nu, const Eigen::ArrayBase<Derived>& x) {
  using S = typename Derived::Scalar;
  return x.unaryExpr([nu](S t) { return bessel_ik<S>(nu, t).i; });
}

}  // namespace abflux

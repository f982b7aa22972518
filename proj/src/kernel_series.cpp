#include "abflux/kernel.hpp"
#include "abflux/specfun.hpp"

#include "gauss.hpp"

#include <cmath>
#include <numbers>

namespace abflux {

namespace {

constexpr double kPi = std::numbers::pi;
using ld = long double;
using cld = std::complex<long double>;

struct Polar {
  Vec2 d;
  double r, theta;
};

Polar polar_about(const Vec2& x, const Vec2& c) {
  const Vec2 d = x - c;
  return {d, d.norm(), std::atan2(d.y(), d.x())};
}

struct AngularParts {
  cplx value, dr, dphi;  // dphi: derivative in the angle of x
};

// Integral representation of sum_l I_nu(lambda r<) K_nu(lambda r>) e^{il phi}, nu = |l + alpha|:
// e^{-i alpha phi} K_0(lambda |x - x'|) minus a Laplace-type integral over t in [0, inf).
// phi lies in (-pi, pi]; the integrand peaks at t = 0 with width pi - |phi|.
// rel, when given, holds the components of x - x' along the radial and angular unit vectors at x.
AngularParts integral_series(double alpha, double lambda, double r, double rp, double phi, const Vec2* rel = nullptr) {
  const cplx I(0.0, 1.0);
  const Vec2 dd = rel ? *rel : Vec2(r - rp * std::cos(phi), rp * std::sin(phi));
  const double d = dd.norm();
  const KPair<double> k0 = bessel_k_dx(0.0, lambda * d);
  AngularParts out;
  const cplx e = std::polar(1.0, -alpha * phi);
  out.value = e * k0.k;
  out.dr = e * (lambda * k0.dk * dd.x() / d);
  out.dphi = e * (lambda * k0.dk * r * dd.y() / d) - I * alpha * out.value;

  const double s0 = r + rp;
  const double s_end = s0 + 60.0 / lambda;
  const double tmax = std::acosh(std::max(1.0, (s_end * s_end - r * r - rp * rp) / (2.0 * r * rp)));
  const double width = std::sqrt(2.0 * s0 / (lambda * r * rp));
  const double hmax = std::min(0.5, width);
  const double delta = std::max(kPi - std::fabs(phi), 1e-300);
  std::vector<double> breaks = {0.0};
  double b = std::min(delta / 8.0, hmax);
  while (b < hmax) {
    breaks.push_back(b);
    b *= 2.0;
  }
  for (double t = hmax; t < tmax + hmax; t += hmax) breaks.push_back(t);

  static const auto rule = [] {
    std::pair<std::vector<double>, std::vector<double>> q;
    detail::gauss_legendre_unit<double>(16, q.first, q.second);
    return q;
  }();
  const cplx ep = std::polar(1.0, phi), em = std::conj(ep);
  // 1 + e^{i phi} without cancellation near the cut
  const double sd = std::sin(0.5 * delta);
  const cplx u1(2.0 * sd * sd, (phi >= 0.0 ? 1.0 : -1.0) * std::sin(delta)), u2 = std::conj(u1);
  const double sa = std::sin(alpha * kPi) / kPi;
  cplx val = 0.0, dr = 0.0, dphi = 0.0;
  for (std::size_t p = 0; p + 1 < breaks.size(); ++p) {
    const double m = 0.5 * (breaks[p] + breaks[p + 1]), h = 0.5 * (breaks[p + 1] - breaks[p]);
    for (std::size_t q = 0; q < rule.first.size(); ++q) {
      const double t = m + h * rule.first[q], w = h * rule.second[q];
      const double ch = std::cosh(t), et = std::exp(-t), om = -std::expm1(-t);
      const double s = std::sqrt(r * r + rp * rp + 2.0 * r * rp * ch);
      const KPair<double> k = bessel_k_dx(0.0, lambda * s);
      const cplx a1 = om + et * u1, a2 = om + et * u2;
      const double ea = std::exp(-alpha * t), eb = std::exp((alpha - 1.0) * t);
      const cplx g = ea / a1 + eb * em / a2;
      const cplx dg = -I * et * ep * ea / (a1 * a1) - I * eb * em / (a2 * a2);
      val += w * k.k * g;
      dr += w * (lambda * k.dk * (r + rp * ch) / s) * g;
      dphi += w * k.k * dg;
    }
  }
  out.value -= sa * val;
  out.dr -= sa * dr;
  out.dphi -= sa * dphi;
  return out;
}

AngularParts angular_parts(double alpha, double lambda, double r, double rp, double phi, const Vec2& rel) {
  phi = std::remainder(phi, 2.0 * kPi);
  if (phi == -kPi) phi = kPi;
  if (kPi - std::fabs(phi) > 1e-9) return integral_series(alpha, lambda, r, rp, phi, &rel);
  // On the cut: average of both sides, angular derivative by central differences.
  const double h = 1e-4;
  const AngularParts a = integral_series(alpha, lambda, r, rp, kPi - 1e-9);
  const AngularParts b = integral_series(alpha, lambda, r, rp, -kPi + 1e-9);
  const AngularParts lo = integral_series(alpha, lambda, r, rp, kPi - h);
  const AngularParts hi = integral_series(alpha, lambda, r, rp, -kPi + h);
  return {0.5 * (a.value + b.value), 0.5 * (a.dr + b.dr), (hi.value - lo.value) / (2.0 * h)};
}

}  // namespace

void gauss_legendre(int n, double a, double b, std::vector<double>& x, std::vector<double>& w) {
  detail::gauss_legendre_unit<double>(n, x, w);
  const double h = 0.5 * (b - a), m = 0.5 * (a + b);
  for (int i = 0; i < n; ++i) {
    x[i] = m + h * x[i];
    w[i] *= h;
  }
}

double free_kernel(const SpectralPoint& sp, const Vec2& x, const Vec2& xp) {
  const double d = (x - xp).norm();
  if (!(d > 0.0)) throw SingularityError("free kernel evaluated on the diagonal");
  return bessel_k_dx(0.0, sp.lambda * d).k / (2.0 * kPi);
}

Vec2 free_kernel_grad_x(const SpectralPoint& sp, const Vec2& x, const Vec2& xp) {
  const Vec2 d = x - xp;
  const double r = d.norm();
  if (!(r > 0.0)) throw SingularityError("free kernel evaluated on the diagonal");
  return (sp.lambda * bessel_k_dx(0.0, sp.lambda * r).dk / (2.0 * kPi * r)) * d;
}

FieldSample single_flux_kernel_sample(const FluxConfig& cfg, int n, const SpectralPoint& sp, const Vec2& x,
                                      const Vec2& xp, double tol) {
  if (n < 1 || n > cfg.size()) throw DomainError("flux index out of range");
  const Vec2& c = cfg.positions[n - 1];
  const Polar p = polar_about(x, c), q = polar_about(xp, c);
  if (!(p.r > 0.0) || !(q.r > 0.0)) throw SingularityError("single-flux kernel evaluated at the flux centre");
  if ((x - xp).norm() == 0.0) throw SingularityError("single-flux kernel evaluated on the diagonal");
  const double alpha = cfg.alphas[n - 1];
  const bool x_inner = p.r < q.r;
  const double rl = std::min(p.r, q.r), rg = std::max(p.r, q.r);
  const double rho = rl / rg;
  if (rho > 0.5) {
    const Vec2 rh = p.d / p.r, th(-rh.y(), rh.x());
    const Vec2 rel((x - xp).dot(rh), (x - xp).dot(th));
    const AngularParts a = angular_parts(alpha, sp.lambda, p.r, q.r, p.theta - q.theta, rel);
    const double s = 1.0 / (2.0 * kPi);
    return {a.value * s, (a.dr * s) * rh.cast<cplx>() + (a.dphi * s / p.r) * th.cast<cplx>()};
  }
  constexpr int cap = 1500;
  if (rho > 1.0 - 1e-9) throw TruncationError("single-flux kernel: equal radii, series does not converge");
  int lmax = static_cast<int>(std::ceil(std::log(tol) / std::log(rho))) + 2;
  if (lmax > cap) throw TruncationError("single-flux kernel: series truncation exceeds the cap");
  lmax = std::max(lmax, 2);
  const ld xl = static_cast<ld>(sp.lambda) * rl, xg = static_cast<ld>(sp.lambda) * rg;
  BesselLadder<ld> pl, pg, ml, mg;
  bessel_ik_ladder<ld>(alpha, lmax + 1, xl, pl);
  bessel_ik_ladder<ld>(alpha, lmax + 1, xg, pg);
  bessel_ik_ladder<ld>(1.0L - alpha, lmax, xl, ml);
  bessel_ik_ladder<ld>(1.0L - alpha, lmax, xg, mg);
  const double dth = p.theta - q.theta;
  cld val = 0, dr = 0, dang = 0;
  auto add = [&](int ell, ld i_l, ld k_g, ld di_l, ld dk_g) {
    const cld e = std::polar<ld>(1.0L, static_cast<ld>(ell) * dth);
    const ld t = i_l * k_g;
    val += t * e;
    dr += (x_inner ? di_l * k_g : i_l * dk_g) * e;
    dang += cld(0.0L, static_cast<ld>(ell)) * t * e;
  };
  for (int j = 0; j <= lmax; ++j) add(j, pl.i[j], pg.k[j], pl.di[j], pg.dk[j]);
  for (int j = 0; j < lmax; ++j) add(-(j + 1), ml.i[j], mg.k[j], ml.di[j], mg.dk[j]);
  const ld s = 1.0L / (2.0L * std::numbers::pi_v<ld>);
  FieldSample out;
  out.value = cplx(val * s);
  const cplx radial = cplx(dr * s * static_cast<ld>(sp.lambda));
  const cplx angular = cplx(dang * s / static_cast<ld>(p.r));
  const Vec2 rh = p.d / p.r, th(-rh.y(), rh.x());
  out.grad = radial * rh.cast<cplx>() + angular * th.cast<cplx>();
  return out;
}

cplx single_flux_kernel(const FluxConfig& cfg, int n, const SpectralPoint& sp, const Vec2& x, const Vec2& xp,
                        double tol) {
  return single_flux_kernel_sample(cfg, n, sp, x, xp, tol).value;
}

CVec2 single_flux_kernel_grad_x(const FluxConfig& cfg, int n, const SpectralPoint& sp, const Vec2& x,
                                const Vec2& xp, double tol) {
  return single_flux_kernel_sample(cfg, n, sp, x, xp, tol).grad;
}

PCoefficients p_coefficients(const FluxConfig& cfg, const PartitionOfUnity& pou, int n, const Vec2& x) {
  PCoefficients pc;
  const XiSample xi = pou.eval(n, x);
  if (xi.value == 0.0 && xi.grad.isZero() && xi.lap == 0.0) return pc;
  const cplx I(0.0, 1.0);
  const Vec2 s = n == 0 ? potential_eval(cfg, Potential::S0, 0, x)
                        : (cfg.size() == 1 ? Vec2::Zero() : potential_eval(cfg, Potential::Scheck, n, x));
  pc.c1 = 2.0 * (s.cast<cplx>() * xi.value - I * xi.grad.cast<cplx>());
  pc.c0 = s.squaredNorm() * xi.value - 2.0 * I * s.dot(xi.grad) - xi.lap;
  return pc;
}

cplx tn_kernel(const FluxConfig& cfg, const PartitionOfUnity& pou, const SpectralPoint& sp, const Vec2& x,
               const Vec2& xp) {
  const cplx I(0.0, 1.0);
  cplx total = 0.0;
  for (int n = 1; n <= cfg.size(); ++n) {
    const double xin = pou.value(n, xp);
    if (xin == 0.0) continue;
    const PCoefficients pc = p_coefficients(cfg, pou, n, x);
    if (pc.zero()) continue;
    const FieldSample k = single_flux_kernel_sample(cfg, n, sp, x, xp);
    const Vec2 a = potential_eval(cfg, Potential::A, n, x);
    const CVec2 cov = -I * k.grad + a.cast<cplx>() * k.value;
    total += dressing_phase(cfg, n, x) * (pc.c1.cwiseProduct(cov).sum() + pc.c0 * k.value) * xin *
             std::conj(dressing_phase(cfg, n, xp));
  }
  const double xi0 = pou.value(0, xp);
  if (xi0 != 0.0) {
    const PCoefficients pc = p_coefficients(cfg, pou, 0, x);
    if (!pc.zero()) {
      const double k = free_kernel(sp, x, xp);
      const CVec2 g = free_kernel_grad_x(sp, x, xp).cast<cplx>();
      total += (pc.c1.cwiseProduct(-I * g).sum() + pc.c0 * k) * xi0;
    }
  }
  return total;
}

cplx patched_kernel(const FluxConfig& cfg, const PartitionOfUnity& pou, const SpectralPoint& sp, const Vec2& x,
                    const Vec2& xp) {
  cplx total = 0.0;
  for (int n = 1; n <= cfg.size(); ++n) {
    const double a = pou.value(n, x), b = pou.value(n, xp);
    if (a == 0.0 || b == 0.0) continue;
    total += dressing_phase(cfg, n, x) * a * single_flux_kernel(cfg, n, sp, x, xp) * b *
             std::conj(dressing_phase(cfg, n, xp));
  }
  const double a = pou.value(0, x), b = pou.value(0, xp);
  if (a != 0.0 && b != 0.0) total += a * free_kernel(sp, x, xp) * b;
  return total;
}

}  // namespace abflux

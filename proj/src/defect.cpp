#include "abflux/defect.hpp"

#include "abflux/specfun.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <utility>

namespace abflux {

namespace {

constexpr double kPi = std::numbers::pi;
const double kInvSqrt2Pi = 1.0 / std::sqrt(2.0 * kPi);

}  // namespace

ChannelIndex make_channel(const FluxConfig& cfg, int n, int ell) {
  if (n < 1 || n > cfg.size()) throw DomainError("channel flux index out of range");
  if (ell != 0 && ell != -1) throw DomainError("channel must have ell in {0, -1}");
  return {n, ell, std::fabs(ell + cfg.alphas[n - 1])};
}

std::vector<ChannelIndex> channels(const FluxConfig& cfg) {
  std::vector<ChannelIndex> out;
  for (int n = 1; n <= cfg.size(); ++n) {
    out.push_back(make_channel(cfg, n, 0));
    out.push_back(make_channel(cfg, n, -1));
  }
  return out;
}

FieldSample defect_sample(const FluxConfig& cfg, const ChannelIndex& ch, double lambda, const Vec2& x) {
  const Vec2 d = x - cfg.positions[ch.n - 1];
  const double r = d.norm();
  if (!(r > 0.0)) throw DomainError("defect function evaluated at its flux centre");
  const auto kv = bessel_k_dx(ch.nu, lambda * r);
  const double theta = std::atan2(d.y(), d.x());
  const cplx e = std::polar(kInvSqrt2Pi, ch.ell * theta);
  const double lnu = std::pow(lambda, ch.nu);
  FieldSample s;
  s.value = lnu * kv.k * e;
  const cplx dr = lnu * lambda * kv.dk * e;
  const cplx dt = cplx(0.0, ch.ell / r) * s.value;
  const Vec2 rh = d / r;
  const Vec2 th(-rh.y(), rh.x());
  s.grad = dr * rh.cast<cplx>() + dt * th.cast<cplx>();
  return s;
}

cplx defect_eval(const FluxConfig& cfg, const ChannelIndex& ch, double lambda, const Vec2& x) {
  return defect_sample(cfg, ch, lambda, x).value;
}

CVec2 defect_grad(const FluxConfig& cfg, const ChannelIndex& ch, double lambda, const Vec2& x) {
  return defect_sample(cfg, ch, lambda, x).grad;
}

double defect_norm_sq(double alpha, int ell, double lambda) {
  const double nu = std::fabs(ell + alpha);
  return kPi * nu / (2.0 * std::sin(kPi * alpha)) * std::pow(lambda, 2.0 * nu - 2.0);
}

double defect_norm_sq(const FluxConfig& cfg, const ChannelIndex& ch, double lambda) {
  return defect_norm_sq(cfg.alphas[ch.n - 1], ch.ell, lambda);
}

cplx dressing_phase(const FluxConfig& cfg, int n, const Vec2& x) {
  if (cfg.size() == 1) return 1.0;
  const Vec2& c = cfg.positions[n - 1];
  const Vec2 s = potential_eval(cfg, Potential::S, n, c);
  return std::polar(1.0, -s.dot(x - c));
}

FieldSample dressed_defect_sample(const FluxConfig& cfg, const PartitionOfUnity& pou, const ChannelIndex& ch,
                                  double lambda, const Vec2& x) {
  const XiSample xi = pou.eval(ch.n, x);
  FieldSample out{0.0, CVec2::Zero()};
  if (xi.value == 0.0 && xi.grad.isZero()) return out;
  const FieldSample g = defect_sample(cfg, ch, lambda, x);
  const Vec2 s = cfg.size() == 1 ? Vec2::Zero() : potential_eval(cfg, Potential::S, ch.n, cfg.positions[ch.n - 1]);
  const cplx ph = dressing_phase(cfg, ch.n, x);
  out.value = ph * xi.value * g.value;
  out.grad = ph * (cplx(0.0, -1.0) * xi.value * g.value * s.cast<cplx>() + g.value * xi.grad.cast<cplx>() +
                   xi.value * g.grad);
  return out;
}

cplx dressed_defect_eval(const FluxConfig& cfg, const PartitionOfUnity& pou, const ChannelIndex& ch, double lambda,
                         const Vec2& x) {
  return dressed_defect_sample(cfg, pou, ch, lambda, x).value;
}

cplx dressed_source_eval(const FluxConfig& cfg, const PartitionOfUnity& pou, const ChannelIndex& ch, double lambda,
                         const Vec2& x) {
  const XiSample xi = pou.eval(ch.n, x);
  if (xi.value == 0.0 && xi.grad.isZero()) return 0.0;
  const cplx I(0.0, 1.0);
  const FieldSample g = defect_sample(cfg, ch, lambda, x);
  const Vec2 sc = potential_eval(cfg, Potential::Scheck, ch.n, x);
  const Vec2 a = potential_eval(cfg, Potential::A, ch.n, x);
  const CVec2 cov = -I * g.grad + a.cast<cplx>() * g.value;
  const CVec2 c1 = 2.0 * (sc.cast<cplx>() * xi.value - I * xi.grad.cast<cplx>());
  const cplx c0 = sc.squaredNorm() * xi.value - 2.0 * I * sc.dot(xi.grad) - xi.lap;
  return dressing_phase(cfg, ch.n, x) * (c1.cwiseProduct(cov).sum() + c0 * g.value);
}

namespace {

std::vector<double> richardson_exponents(double nu) {
  std::vector<double> e = {1.0 - nu, 2.0 - 2.0 * nu, 2.0 * nu, 1.0, 2.0 - nu, 2.0, 3.0 - nu, 4.0 - 2.0 * nu, 4.0 - nu, 4.0};
  std::sort(e.begin(), e.end());
  std::vector<double> out;
  for (double v : e) {
    if (v <= 1e-9) continue;
    if (!out.empty() && std::fabs(v - out.back()) < 1e-9) continue;
    out.push_back(v);
  }
  return out;
}

// Richardson tableau over halvings; the entry with the smallest local error
// estimate wins, so roundoff at the smallest radii does not leak into the
// result. scale: size of the terms entering the sequence, so a limit of zero
// is judged against what cancelled to produce it.
TraceResult extrapolate(const std::vector<cplx>& seq, const std::vector<double>& ex, double tol, double scale) {
  for (const auto& v : seq) scale = std::max(scale, std::abs(v));
  const std::size_t K = seq.size(), J = std::min(ex.size(), K - 1);
  std::vector<std::vector<cplx>> T(K, std::vector<cplx>(J + 1));
  cplx best = seq.back();
  double best_err = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < K; ++k) {
    T[k][0] = seq[k];
    for (std::size_t j = 1; j <= std::min(k, J); ++j) {
      const double f = std::pow(2.0, ex[j - 1]);
      T[k][j] = (f * T[k][j - 1] - T[k - 1][j - 1]) / (f - 1.0);
      const double err = std::max({std::abs(T[k][j] - T[k][j - 1]), std::abs(T[k][j] - T[k - 1][j - 1]),
                                   std::abs(T[k][j - 1] - T[k - 1][j - 1])});
      if (err < best_err) {
        best_err = err;
        best = T[k][j];
      }
    }
  }
  if (best_err > tol * scale && best_err > 1e-300) throw TraceDivergence("trace: extrapolation did not converge");
  return {best, best_err};
}

template <typename Sampler>
TraceResult trace_impl(Sampler&& radial_combo, const FluxConfig& cfg, const ChannelIndex& ch,
                       const TraceOptions& opt) {
  const double r0 = opt.r0 > 0.0 ? opt.r0 : cfg.r_star / 8.0;
  const double pref = kPi * std::pow(2.0, ch.nu) * gamma_real(ch.nu) * kInvSqrt2Pi;
  std::vector<cplx> seq;
  double scale = 0.0;
  for (int k = 0; k <= opt.halvings; ++k) {
    const double r = r0 * std::ldexp(1.0, -k);
    cplx acc = 0.0;
    double mag = 0.0;
    for (int j = 0; j < opt.angular; ++j) {
      const double th = 2.0 * kPi * j / opt.angular;
      const auto [v, m] = radial_combo(r, th);
      acc += v * std::polar(1.0, -ch.ell * th);
      mag += m;
    }
    const double norm = pref / static_cast<double>(opt.angular) / std::pow(r, ch.nu);
    seq.push_back(acc * norm);
    scale = std::max(scale, mag * norm);
  }
  return extrapolate(seq, opt.exponents.empty() ? richardson_exponents(ch.nu) : opt.exponents, opt.tol, scale);
}

}  // namespace

TraceResult trace_tau(const std::function<cplx(const Vec2&)>& psi, const FluxConfig& cfg, const ChannelIndex& ch,
                      const TraceOptions& opt) {
  const Vec2 c = cfg.positions[ch.n - 1];
  // Sixth-order radial difference with step proportional to r. The same stencil
  // applied to r^{-nu} gives kappa, so the singular branch cancels exactly.
  const double eta = 0.05;
  auto stencil = [eta](auto&& g) {
    return (45.0 * (g(1.0 + eta) - g(1.0 - eta)) - 9.0 * (g(1.0 + 2 * eta) - g(1.0 - 2 * eta)) +
            (g(1.0 + 3 * eta) - g(1.0 - 3 * eta))) /
           (60.0 * eta);
  };
  const double kappa = stencil([&](double s) { return std::pow(s, -ch.nu); });
  auto combo = [&](double r, double th) {
    const Vec2 u(std::cos(th), std::sin(th));
    const cplx d = stencil([&](double s) { return psi(c + s * r * u); });
    const cplx v = psi(c + r * u);
    return std::pair(d - kappa * v, std::abs(kappa * v) + std::abs(d));
  };
  return trace_impl(combo, cfg, ch, opt);
}

TraceResult trace_tau(const std::function<FieldSample(const Vec2&)>& psi, const FluxConfig& cfg,
                      const ChannelIndex& ch, const TraceOptions& opt) {
  const Vec2 c = cfg.positions[ch.n - 1];
  auto combo = [&](double r, double th) {
    const Vec2 u(std::cos(th), std::sin(th));
    const FieldSample s = psi(c + r * u);
    const cplx d = s.grad(0) * u.x() + s.grad(1) * u.y();
    return std::pair(ch.nu * s.value + r * d, ch.nu * std::abs(s.value) + r * std::abs(d));
  };
  return trace_impl(combo, cfg, ch, opt);
}

}  // namespace abflux

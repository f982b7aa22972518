#include "abflux/config.hpp"

#include "abflux/specfun.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace abflux {

ReducedFlux reduce_flux(double alpha_raw) {
  if (!std::isfinite(alpha_raw)) throw ConfigError("flux must be finite");
  const double w = std::floor(alpha_raw);
  const double q = std::round((alpha_raw - w) * 1e12) / 1e12;
  if (q <= 0.0 || q >= 1.0)
    throw ConfigError("integer flux " + std::to_string(alpha_raw) + " is gauge-trivial and not supported");
  return {static_cast<long>(w), q};
}

double compute_r_star(const std::vector<Vec2>& positions, double factor, double single_default) {
  if (positions.empty()) throw ConfigError("at least one flux is required");
  if (!(factor > 0.0 && factor < 0.5)) throw ConfigError("r_star factor must lie in (0, 0.5)");
  if (positions.size() == 1) return single_default;
  double dmin = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < positions.size(); ++i)
    for (std::size_t j = i + 1; j < positions.size(); ++j) dmin = std::min(dmin, (positions[i] - positions[j]).norm());
  if (!(dmin > 0.0)) throw ConfigError("flux positions must be pairwise distinct");
  return factor * dmin;
}

FluxConfig FluxConfig::make(std::vector<Vec2> positions, std::vector<double> alphas_raw, double r_star_factor,
                            double single_default) {
  if (positions.empty()) throw ConfigError("at least one flux is required");
  if (positions.size() != alphas_raw.size()) throw ConfigError("positions and fluxes differ in length");
  for (const auto& p : positions)
    if (!p.allFinite()) throw ConfigError("flux position must be finite");
  if (!(single_default > 0.0)) throw ConfigError("default r_star must be positive");
  FluxConfig cfg;
  cfg.r_star = compute_r_star(positions, r_star_factor, single_default);
  cfg.r_star_factor = r_star_factor;
  cfg.positions = std::move(positions);
  cfg.alphas_raw = std::move(alphas_raw);
  for (double a : cfg.alphas_raw) {
    const auto red = reduce_flux(a);
    cfg.winding.push_back(red.winding);
    cfg.alphas.push_back(red.alpha);
  }
  return cfg;
}

double FluxConfig::min_distance() const {
  double dmin = std::numeric_limits<double>::infinity();
  for (int i = 0; i < size(); ++i)
    for (int j = i + 1; j < size(); ++j) dmin = std::min(dmin, distance(i, j));
  return dmin;
}

Vec2 FluxConfig::centroid() const {
  Vec2 c = Vec2::Zero();
  for (const auto& p : positions) c += p;
  return c / static_cast<double>(size());
}

double FluxConfig::spread() const {
  const Vec2 c = centroid();
  double s = 0.0;
  for (const auto& p : positions) s = std::max(s, (p - c).norm());
  return s;
}

Smoothstep smoothstep(double t) {
  if (t <= 0.0) return {0.0, 0.0, 0.0};
  if (t >= 1.0) return {1.0, 0.0, 0.0};
  const double t2 = t * t;
  return {t2 * t * (10.0 + t * (-15.0 + 6.0 * t)), 30.0 * t2 * (1.0 - t) * (1.0 - t),
          60.0 * t * (1.0 - t) * (1.0 - 2.0 * t)};
}

PartitionOfUnity::PartitionOfUnity(std::vector<Vec2> centers, double r_star)
    : centers_(std::move(centers)), r_star_(r_star) {
  if (!(r_star > 0.0)) throw ConfigError("r_star must be positive");
}

XiSample PartitionOfUnity::radial(int n, const Vec2& x, bool outer) const {
  XiSample out;
  const Vec2 d = x - centers_[n];
  const double r = d.norm();
  if (r <= 0.5 * r_star_) {
    out.value = outer ? 0.0 : 1.0;
    return out;
  }
  if (r >= r_star_) {
    out.value = outer ? 1.0 : 0.0;
    return out;
  }
  constexpr double h = 0.5 * std::numbers::pi;
  const double t = 2.0 * r / r_star_ - 1.0;
  const auto st = smoothstep(t);
  const double phi = h * st.s;
  const double dphi = h * st.ds * 2.0 / r_star_;
  const double d2phi = h * st.d2s * 4.0 / (r_star_ * r_star_);
  const double c = std::cos(phi), s = std::sin(phi);
  double f, f1, f2;
  if (outer) {
    f = s;
    f1 = c * dphi;
    f2 = -s * dphi * dphi + c * d2phi;
  } else {
    f = c;
    f1 = -s * dphi;
    f2 = -c * dphi * dphi - s * d2phi;
  }
  out.value = f;
  out.grad = (f1 / r) * d;
  out.lap = f2 + f1 / r;
  return out;
}

XiSample PartitionOfUnity::eval(int n, const Vec2& x) const {
  if (n < 0 || n > size()) throw DomainError("partition index out of range");
  if (n > 0) return radial(n - 1, x, false);
  XiSample acc;
  acc.value = 1.0;
  for (int k = 0; k < size(); ++k) {
    const XiSample f = radial(k, x, true);
    if (f.value == 1.0 && f.grad.isZero()) continue;
    XiSample next;
    next.value = acc.value * f.value;
    next.grad = acc.grad * f.value + acc.value * f.grad;
    next.lap = acc.lap * f.value + 2.0 * acc.grad.dot(f.grad) + acc.value * f.lap;
    acc = next;
  }
  return acc;
}

Vec2 potential_eval(const FluxConfig& cfg, Potential kind, int n, const Vec2& x) {
  const int N = cfg.size();
  if (kind != Potential::S0 && (n < 1 || n > N)) throw DomainError("flux index out of range");
  auto a_field = [&](int m, const Vec2& at) -> Vec2 {
    const Vec2 d = at - cfg.positions[m];
    const double rho2 = d.squaredNorm();
    if (!(rho2 > 0.0)) throw DomainError("vector potential evaluated at a flux centre");
    const double c = cfg.alphas[m] / rho2;
    return {-c * d.y(), c * d.x()};
  };
  auto s_field = [&](int skip, const Vec2& at) -> Vec2 {
    Vec2 s = Vec2::Zero();
    for (int m = 0; m < N; ++m)
      if (m != skip) s += a_field(m, at);
    return s;
  };
  switch (kind) {
    case Potential::A:
      return a_field(n - 1, x);
    case Potential::S:
      return s_field(n - 1, x);
    case Potential::S0:
      return s_field(-1, x);
    case Potential::Scheck:
      return s_field(n - 1, x) - s_field(n - 1, cfg.positions[n - 1]);
  }
  return Vec2::Zero();
}

double smooth_transition(double t) {
  if (t <= 0.0) return 0.0;
  if (t >= 1.0) return 1.0;
  const double a = std::exp(-1.0 / t), b = std::exp(-1.0 / (1.0 - t));
  return a / (a + b);
}

}  // namespace abflux

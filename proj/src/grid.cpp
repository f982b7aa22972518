#include "abflux/kernel.hpp"

#include "gauss.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>

namespace abflux {

namespace {

constexpr double kPi = std::numbers::pi;

// Appends breaks up to R with local panel length h(r).
void extend(std::vector<double>& b, double R, const std::function<double(double)>& h) {
  while (b.back() < R) {
    const double last = b.back();
    const double step = h(last);
    if (last + 1.25 * step >= R) {
      b.push_back(R);
      break;
    }
    b.push_back(last + step);
  }
}

// 0, r_min-ish, geometric up to r_star/2, then r_star.
std::vector<double> disc_breaks(double r_star, const GridOptions& opt) {
  const double rmin = opt.r_min_factor * r_star;
  std::vector<double> down;
  double v = 0.5 * r_star;
  while (v > rmin * (1.0 + 1e-12)) {
    down.push_back(v);
    v *= opt.grading_ratio;
  }
  down.push_back(v);
  std::vector<double> b = {0.0};
  b.insert(b.end(), down.rbegin(), down.rend());
  const int nt = std::max(1, opt.transition_panels);
  for (int k = 1; k <= nt; ++k) b.push_back(0.5 * r_star * (1.0 + static_cast<double>(k) / nt));
  return b;
}

}  // namespace

GridOptions GridOptions::refined() const {
  GridOptions g = *this;
  g.panel_order = panel_order + 4;
  g.angular_nodes = 2 * ((3 * angular_nodes / 2 + 1) / 2);
  g.global_angular_nodes = 2 * ((3 * global_angular_nodes / 2 + 1) / 2);
  g.r_min_factor = r_min_factor * 0.1;
  return g;
}

PolarGrid::PolarGrid(Vec2 c, std::vector<double> panel_breaks, int order_, int n_theta_)
    : center(std::move(c)), breaks(std::move(panel_breaks)), order(order_), n_theta(n_theta_) {
  if (order < 2 || n_theta < 4 || n_theta % 2 != 0) throw DomainError("polar grid: invalid resolution");
  std::vector<double> x, w;
  for (int p = 0; p + 1 < static_cast<int>(breaks.size()); ++p) {
    gauss_legendre(order, breaks[p], breaks[p + 1], x, w);
    r.insert(r.end(), x.begin(), x.end());
    wr.insert(wr.end(), w.begin(), w.end());
  }
}

double PolarGrid::theta(int k) const { return kPi * (2.0 * k + 1.0) / n_theta; }

Vec2 PolarGrid::node(int j, int k) const {
  const double t = theta(k);
  return center + r[j] * Vec2(std::cos(t), std::sin(t));
}

double PolarGrid::area_weight(int j) const { return wr[j] * r[j] * 2.0 * kPi / n_theta; }

int QuadratureGrid::grid_of(int i) const {
  const auto it = std::upper_bound(offset.begin(), offset.end(), i);
  return static_cast<int>(it - offset.begin()) - 1;
}

cplx QuadratureGrid::integrate(const Eigen::VectorXcd& f) const {
  cplx s = 0.0;
  for (int i = 0; i < total; ++i)
    if (chi[i] > 0.0) s += chi[i] * w[i] * f[i];
  return s;
}

double QuadratureGrid::integrate(const Eigen::VectorXd& f) const {
  double s = 0.0;
  for (int i = 0; i < total; ++i)
    if (chi[i] > 0.0) s += chi[i] * w[i] * f[i];
  return s;
}

QuadratureGrid build_grid(const FluxConfig& cfg, const PartitionOfUnity& pou, double lambda,
                          const GridOptions& opt) {
  if (!(lambda > 0.0)) throw DomainError("grid: lambda must be positive");
  if (!(opt.grading_ratio > 0.0 && opt.grading_ratio < 1.0)) throw DomainError("grid: grading ratio must lie in (0,1)");
  const int N = cfg.size();
  const double rs = cfg.r_star;
  QuadratureGrid q;
  q.lambda = lambda;
  auto far_h = [&](double r) { return std::min(opt.panel_length / lambda, opt.near_panel_factor * std::max(r, rs)); };
  auto near_h = [&](double) { return std::min(opt.panel_length / lambda, opt.near_panel_factor * rs); };

  if (N == 1) {
    auto b = disc_breaks(rs, opt);
    q.R_max = rs + opt.R_max_factor / lambda;
    extend(b, q.R_max, far_h);
    q.grids.emplace_back(cfg.positions[0], b, opt.panel_order, opt.angular_nodes);
    q.host.push_back(1);
    q.carries_exterior.push_back(true);
    q.r_a = q.r_b = rs;
  } else {
    const double dmin = cfg.min_distance();
    q.r_a = rs + opt.blend_gap * (0.5 * dmin - rs);
    q.r_b = q.r_a + opt.blend_width * rs;
    for (int n = 0; n < N; ++n) {
      auto b = disc_breaks(rs, opt);
      b.push_back(q.r_a);
      const int nb = std::max(1, opt.blend_panels);
      for (int k = 1; k <= nb; ++k) b.push_back(q.r_a + (q.r_b - q.r_a) * k / nb);
      q.grids.emplace_back(cfg.positions[n], b, opt.panel_order, opt.angular_nodes);
      q.host.push_back(n + 1);
      q.carries_exterior.push_back(true);
    }
    const double inner = cfg.spread() + q.r_b;
    q.R_max = inner + opt.R_max_factor / lambda;
    std::vector<double> b = {0.0};
    extend(b, inner, near_h);
    extend(b, q.R_max, far_h);
    q.grids.emplace_back(cfg.centroid(), b, opt.panel_order, opt.global_angular_nodes);
    q.host.push_back(0);
    q.carries_exterior.push_back(true);
  }

  q.total = 0;
  for (const auto& g : q.grids) {
    q.offset.push_back(q.total);
    q.total += g.size();
  }
  q.x.resize(q.total);
  q.w.resize(q.total);
  q.chi.assign(q.total, 0.0);
  q.ext_src.assign(q.total, 0.0);
  q.blend.assign(q.total, 0.0);
  q.active.assign(q.total, false);

  auto blend = [&](const Vec2& x, std::vector<double>& eta) {
    std::vector<double> s(N);
    for (int j = 0; j < N; ++j)
      s[j] = smooth_transition(((x - cfg.positions[j]).norm() - q.r_a) / (q.r_b - q.r_a));
    eta.assign(N + 1, 0.0);
    double b0 = 1.0;
    for (int j = 0; j < N; ++j) b0 *= s[j];
    eta[0] = b0;
    for (int k = 0; k < N; ++k) {
      double bk = 1.0 - s[k];
      for (int j = 0; j < N; ++j)
        if (j != k) bk *= s[j];
      eta[k + 1] = bk;
    }
    double tot = 0.0;
    for (double v : eta) tot += v;
    for (double& v : eta) v /= tot;
  };

  std::vector<double> eta;
  for (std::size_t gi = 0; gi < q.grids.size(); ++gi) {
    const auto& g = q.grids[gi];
    const int host = q.host[gi];
    for (int j = 0; j < g.n_radial(); ++j) {
      for (int k = 0; k < g.n_theta; ++k) {
        const int i = q.offset[gi] + j * g.n_theta + k;
        const Vec2 x = g.node(j, k);
        q.x[i] = x;
        q.w[i] = g.area_weight(j);
        const double xi0 = pou.value(0, x);
        if (N == 1) {
          const double xin = pou.value(1, x);
          q.ext_src[i] = xi0;
          q.blend[i] = 1.0;
          q.chi[i] = 1.0;
          q.active[i] = xi0 > 0.0 || xin > 0.0;
          continue;
        }
        blend(x, eta);
        q.blend[i] = eta[host];
        if (host > 0) {
          const double xin = pou.value(host, x);
          q.ext_src[i] = eta[host] * xi0;
          q.chi[i] = xin * xin + eta[host] * xi0 * xi0;
          q.active[i] = xin > 0.0 || q.ext_src[i] > 0.0;
        } else {
          q.ext_src[i] = eta[0] * xi0;
          q.chi[i] = eta[0] * xi0 * xi0;
          q.active[i] = q.ext_src[i] > 0.0;
        }
      }
    }
  }
  return q;
}

}  // namespace abflux

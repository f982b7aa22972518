#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "gen.hpp"

#include <numbers>

using namespace abflux;
using std::numbers::pi;

namespace {

double rel(cplx a, cplx b) { return std::abs(a - b) / std::abs(b); }

GridOptions coarse() {
  GridOptions g;
  g.panel_order = 5;
  g.angular_nodes = 24;
  g.global_angular_nodes = 48;
  return g;
}

// Smooth real bump of radius rho about c.
double bump(const Vec2& x, const Vec2& c, double rho) {
  const double s = (x - c).squaredNorm() / (rho * rho);
  return s < 1.0 ? std::exp(-1.0 / (1.0 - s)) : 0.0;
}

}  // namespace

TEST_CASE("free kernel") {
  const SpectralPoint sp{1.0};
  CHECK(free_kernel(sp, Vec2(0, 0), Vec2(1, 0)) == doctest::Approx(bessel_ik(0.0, 1.0).k / (2 * pi)).epsilon(1e-14));
  CHECK_THROWS_AS(free_kernel(sp, Vec2(1, 1), Vec2(1, 1)), SingularityError);
  gen::Rng rng(401);
  for (int i = 0; i < 100; ++i) {
    const SpectralPoint s{rng.uniform(0.2, 3.0)};
    const Vec2 x = rng.point(-3, 3), y = rng.point(-3, 3);
    CHECK(free_kernel(s, x, y) == free_kernel(s, y, x));
    CHECK(free_kernel(s, x, y) > 0.0);
    const double h = 1e-6;
    const Vec2 g = free_kernel_grad_x(s, x, y);
    const Vec2 fd((free_kernel(s, x + Vec2(h, 0), y) - free_kernel(s, x - Vec2(h, 0), y)) / (2 * h),
                  (free_kernel(s, x + Vec2(0, h), y) - free_kernel(s, x - Vec2(0, h), y)) / (2 * h));
    CHECK((g - fd).norm() < 1e-5 * g.norm());
    const double d = 60.0 / s.lambda;
    const double asym = std::exp(-s.lambda * d) / (2 * pi) * std::sqrt(pi / (2 * s.lambda * d));
    CHECK(free_kernel(s, x, x + Vec2(d, 0)) / asym == doctest::Approx(1.0).epsilon(0.005));
  }
}

TEST_CASE("single-flux kernel: Hermitian, rotation invariant, singular diagonal") {
  gen::Rng rng(402);
  for (int i = 0; i < 100; ++i) {
    const FluxConfig c = FluxConfig::make({rng.point(-1, 1)}, {rng.flux()});
    const SpectralPoint sp{rng.uniform(0.2, 3.0)};
    const Vec2 x = rng.on_circle(c.positions[0], rng.uniform(0.05, 3.0));
    const Vec2 y = rng.on_circle(c.positions[0], rng.uniform(0.05, 3.0));
    const cplx k = single_flux_kernel(c, 1, sp, x, y);
    CHECK(std::abs(k - std::conj(single_flux_kernel(c, 1, sp, y, x))) < 1e-12 * std::max(1.0, std::abs(k)));
    const double t = rng.uniform(-pi, pi);
    const Eigen::Rotation2Dd R(t);
    const Vec2 xr = c.positions[0] + R * (x - c.positions[0]);
    const Vec2 yr = c.positions[0] + R * (y - c.positions[0]);
    CHECK(std::abs(single_flux_kernel(c, 1, sp, xr, yr) - k) < 1e-12 * std::max(1.0, std::abs(k)));
  }
  const FluxConfig c = FluxConfig::make({Vec2::Zero()}, {0.4});
  CHECK_THROWS_AS(single_flux_kernel(c, 1, SpectralPoint{1.0}, Vec2(0.5, 0.2), Vec2(0.5, 0.2)), SingularityError);
}

TEST_CASE("single-flux kernel tends to the free kernel as alpha -> 0") {
  gen::Rng rng(403);
  for (int i = 0; i < 20; ++i) {
    const SpectralPoint sp{rng.uniform(0.5, 2.0)};
    const Vec2 x = rng.on_circle(Vec2::Zero(), rng.uniform(0.3, 2.0));
    const Vec2 y = rng.on_circle(Vec2::Zero(), rng.uniform(0.3, 2.0));
    const double f = free_kernel(sp, x, y);
    double prev = std::numeric_limits<double>::infinity();
    for (double a : {1e-2, 1e-3, 1e-4}) {
      const FluxConfig c = FluxConfig::make({Vec2::Zero()}, {a});
      const double err = std::abs(single_flux_kernel(c, 1, sp, x, y) - f);
      CHECK(err < 20.0 * a * std::max(f, 1.0));
      CHECK(err < prev);
      prev = err;
    }
  }
}

TEST_CASE("single-flux kernel gradient matches finite differences and decays") {
  gen::Rng rng(404);
  const double h = 1e-5;
  for (int i = 0; i < 20; ++i) {
    const FluxConfig c = FluxConfig::make({Vec2::Zero()}, {rng.flux()});
    const SpectralPoint sp{rng.uniform(0.3, 2.0)};
    const Vec2 x = rng.on_circle(Vec2::Zero(), rng.uniform(0.2, 2.0));
    const Vec2 y = rng.on_circle(Vec2::Zero(), rng.uniform(0.2, 2.0));
    if ((x - y).norm() < 0.1) continue;
    const CVec2 g = single_flux_kernel_grad_x(c, 1, sp, x, y);
    const CVec2 fd((single_flux_kernel(c, 1, sp, x + Vec2(h, 0), y) - single_flux_kernel(c, 1, sp, x - Vec2(h, 0), y)) /
                       (2 * h),
                   (single_flux_kernel(c, 1, sp, x + Vec2(0, h), y) - single_flux_kernel(c, 1, sp, x - Vec2(0, h), y)) /
                       (2 * h));
    CHECK((g - fd).norm() < 1e-4 * g.norm());
    const FieldSample s = single_flux_kernel_sample(c, 1, sp, x, y);
    CHECK(rel(s.value, single_flux_kernel(c, 1, sp, x, y)) < 1e-13);
  }
  // |grad| over two separations along a ray: ratio ~ e^{-lambda dd} sqrt(d1/d2)
  const FluxConfig c = FluxConfig::make({Vec2::Zero()}, {0.3});
  const SpectralPoint sp{1.0};
  const Vec2 y(0.5, 0.0);
  const double g1 = single_flux_kernel_grad_x(c, 1, sp, Vec2(-20, 0), y).norm();
  const double g2 = single_flux_kernel_grad_x(c, 1, sp, Vec2(-30, 0), y).norm();
  CHECK(std::log(g1 / g2) == doctest::Approx(10.0 + 0.5 * std::log(30.5 / 20.5)).epsilon(0.01));
}

TEST_CASE("T_N kernel vanishes where every P coefficient vanishes") {
  const FluxConfig c1 = FluxConfig::make({Vec2::Zero()}, {0.35});
  const PartitionOfUnity p1(c1);
  const SpectralPoint sp{1.0};
  gen::Rng rng(405);
  for (int i = 0; i < 50; ++i) {
    const Vec2 x = rng.on_circle(Vec2::Zero(), c1.r_star * rng.uniform(0.01, 0.49));
    const Vec2 y = rng.on_circle(Vec2::Zero(), c1.r_star * rng.uniform(0.01, 0.99));
    CHECK(p_coefficients(c1, p1, 0, x).zero());
    CHECK(p_coefficients(c1, p1, 1, x).zero());
    CHECK(tn_kernel(c1, p1, sp, x, y) == cplx(0.0));
  }
  // N = 1: the centred potential vanishes, so P_1 carries cutoff derivatives only
  for (int i = 0; i < 50; ++i) {
    const Vec2 x = rng.on_circle(Vec2::Zero(), c1.r_star * rng.uniform(0.5, 1.0));
    const XiSample xs = p1.eval(1, x);
    const PCoefficients pc = p_coefficients(c1, p1, 1, x);
    const CVec2 expect = (-2.0 * cplx(0, 1)) * xs.grad.cast<cplx>();
    CHECK((pc.c1 - expect).norm() < 1e-13 * (1.0 + expect.norm()));
  }
}

TEST_CASE("Nystrom rows outside the coefficient support are the identity") {
  // With several fluxes the n = 0 coefficients see the far field of S_0 wherever
  // xi_0 is nonzero, so quiet rows are only guaranteed for N = 1 inside r_star / 2.
  for (const FluxConfig& c : {FluxConfig::make({Vec2(0.3, -0.2)}, {0.4}),
                              FluxConfig::make({Vec2(-1.2, 0), Vec2(1.2, 0.3)}, {0.3, 0.6})}) {
    const PartitionOfUnity pou(c);
    const SpectralPoint sp{1.0};
    const QuadratureGrid g = build_grid(c, pou, sp.lambda, coarse());
    const NystromSystem sys(c, pou, g, sp);
    gen::Rng rng(406);
    Eigen::VectorXcd v(sys.size());
    for (int i = 0; i < sys.size(); ++i) v[i] = rng.complex_normal();
    const Eigen::VectorXcd Tv = sys.apply(v) - v;
    int quiet = 0;
    for (int i = 0; i < sys.size(); ++i) {
      bool zero = true;
      for (int n = 0; n <= c.size() && zero; ++n) zero = p_coefficients(c, pou, n, g.x[i]).zero();
      if (zero) {
        ++quiet;
        CHECK(Tv[i] == cplx(0.0));
      }
    }
    if (c.size() == 1) CHECK(quiet > 0);
  }
}

TEST_CASE("polar grid weights") {
  const FluxConfig c = FluxConfig::make({Vec2(-1.2, 0), Vec2(1.2, 0.3)}, {0.3, 0.6});
  const PartitionOfUnity pou(c);
  const QuadratureGrid g = build_grid(c, pou, 1.0, coarse());
  // weights positive; each disc's polar weights sum to its area
  for (std::size_t k = 0; k < g.grids.size(); ++k) {
    const PolarGrid& pg = g.grids[k];
    double area = 0.0;
    for (int j = 0; j < pg.n_radial(); ++j) {
      CHECK(pg.area_weight(j) > 0.0);
      area += pg.area_weight(j) * pg.n_theta;
    }
    const double r0 = pg.breaks.front(), r1 = pg.breaks.back();
    CHECK(area == doctest::Approx(pi * (r1 * r1 - r0 * r0)).epsilon(1e-10));
  }
}

TEST_CASE("Nystrom solve residual and Neumann regime") {
  const FluxConfig c = FluxConfig::make({Vec2(-1.0, 0), Vec2(1.0, 0.2)}, {0.45, 0.7});
  const PartitionOfUnity pou(c);
  gen::Rng rng(407);
  for (double lambda : {0.7, 20.0 / c.r_star}) {
    const SpectralPoint sp{lambda};
    const NystromSystem sys = build_nystrom(c, pou, sp, build_grid(c, pou, lambda, coarse()));
    Eigen::VectorXcd f(sys.size());
    for (int i = 0; i < sys.size(); ++i) f[i] = rng.complex_normal();
    SolveReport rep;
    const Eigen::VectorXcd v = sys.solve(f, &rep);
    CHECK((sys.apply(v) - f).norm() / f.norm() < 1e-10);
    if (lambda * c.r_star >= 20.0) {
      CHECK(sys.t_norm_estimate() < 0.5);
      // Neumann partial sums v_{k+1} = f - T v_k
      Eigen::VectorXcd w = f;
      for (int k = 0; k < 60; ++k) w = f - (sys.apply(w) - w);
      CHECK((w - v).norm() / v.norm() < 1e-8);
    }
  }
}

TEST_CASE("Friedrichs resolvent: N = 1 against direct single-flux quadrature") {
  const FluxConfig c = FluxConfig::make({Vec2::Zero()}, {0.35});
  const PartitionOfUnity pou(c);
  const SpectralPoint sp{1.0};
  const QuadratureGrid g = build_grid(c, pou, sp.lambda, {});
  const NystromSystem sys(c, pou, g, sp);
  const Vec2 fc(0.1, 0.05);
  auto f = [&](const Vec2& x) { return cplx(bump(x, fc, 0.2), 0.0); };
  const Eigen::VectorXcd fs = g.sample(f);
  gen::Rng rng(408);
  std::vector<Vec2> pts;
  for (int i = 0; i < 8; ++i) pts.push_back(rng.on_circle(Vec2::Zero(), rng.uniform(0.36, 0.48)));
  const Eigen::VectorXcd Rf = sys.patched_at(sys.solve(fs), pts);
  // direct quadrature of the series kernel over the bump
  const PolarGrid pg(fc, {0.0, 0.05, 0.1, 0.15, 0.2}, 16, 64);
  for (std::size_t p = 0; p < pts.size(); ++p) {
    cplx acc = 0.0;
    for (int j = 0; j < pg.n_radial(); ++j)
      for (int k = 0; k < pg.n_theta; ++k) {
        const Vec2 y = pg.node(j, k);
        acc += pg.area_weight(j) * single_flux_kernel(c, 1, sp, pts[p], y) * f(y);
      }
    CHECK(rel(Rf[p], acc) < 1e-3);
  }
}

TEST_CASE("Friedrichs resolvent is positive and bounded by 1/lambda^2") {
  gen::Rng rng(409);
  const FluxConfig c = FluxConfig::make({Vec2(-1.0, 0), Vec2(1.0, 0.2)}, {0.45, 0.7});
  const PartitionOfUnity pou(c);
  for (double lambda : {0.6, 1.5}) {
    const SpectralPoint sp{lambda};
    const QuadratureGrid g = build_grid(c, pou, lambda, coarse());
    const NystromSystem sys(c, pou, g, sp);
    const Eigen::VectorXd wts = Eigen::Map<const Eigen::VectorXd>(g.w.data(), g.total).cwiseProduct(
        Eigen::Map<const Eigen::VectorXd>(g.chi.data(), g.total));
    for (int trial = 0; trial < 4; ++trial) {
      const Vec2 ctr = rng.point(-1.5, 1.5);
      const double rho = rng.uniform(0.4, 1.2);
      const Eigen::VectorXcd f = g.sample([&](const Vec2& x) { return cplx(bump(x, ctr, rho), 0.0); });
      const Eigen::VectorXcd Rf = friedrichs_apply(sys, f);
      const cplx form = (f.conjugate().cwiseProduct(Rf)).dot(wts.cast<cplx>());
      const double fn = std::sqrt((f.cwiseAbs2()).dot(wts));
      const double rn = std::sqrt((Rf.cwiseAbs2()).dot(wts));
      CHECK(form.real() > 0.0);
      CHECK(form.real() <= fn * fn / (lambda * lambda) * (1 + 1e-3));
      CHECK(rn <= fn / (lambda * lambda) * (1 + 1e-3));
    }
  }
}

TEST_CASE("Friedrichs kernel: N = 1 agreement, symmetry, decay") {
  const FluxConfig c = FluxConfig::make({Vec2::Zero()}, {0.35});
  const PartitionOfUnity pou(c);
  const SpectralPoint sp{1.0};
  const NystromSystem sys(c, pou, build_grid(c, pou, sp.lambda, {}), sp);
  gen::Rng rng(410);
  std::vector<Vec2> xs, ys;
  for (int i = 0; i < 6; ++i) {
    xs.push_back(rng.on_circle(Vec2::Zero(), rng.uniform(0.1, 0.45)));
    ys.push_back(rng.on_circle(Vec2::Zero(), rng.uniform(0.1, 0.45)));
  }
  const Eigen::MatrixXcd K = friedrichs_kernel_matrix(c, pou, sys, xs, ys);
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 6; ++j) CHECK(rel(K(i, j), single_flux_kernel(c, 1, sp, xs[i], ys[j])) < 1e-3);
  CHECK(rel(friedrichs_kernel(c, pou, sys, xs[0], ys[0]), K(0, 0)) < 1e-14);

  const Vec2 y(0.2, 0.1);
  const double k1 = std::abs(friedrichs_kernel(c, pou, sys, Vec2(4, 0), y));
  const double k2 = std::abs(friedrichs_kernel(c, pou, sys, Vec2(6, 0), y));
  CHECK(std::log(k1 / k2) == doctest::Approx(2.0 + 0.5 * std::log(5.8 / 3.8)).epsilon(0.05));
}

TEST_CASE("Friedrichs kernel Hermitian symmetry, two fluxes") {
  const FluxConfig c = FluxConfig::make({Vec2(-1.0, 0), Vec2(1.0, 0.2)}, {0.45, 0.7});
  const PartitionOfUnity pou(c);
  const SpectralPoint sp{1.0};
  const NystromSystem sys(c, pou, build_grid(c, pou, sp.lambda, {}), sp);
  gen::Rng rng(411);
  std::vector<Vec2> pts;
  while (pts.size() < 12) {
    const Vec2 x = rng.point(-2.5, 2.5);
    if ((x - c.positions[0]).norm() > 0.1 && (x - c.positions[1]).norm() > 0.1) pts.push_back(x);
  }
  const std::vector<Vec2> xs(pts.begin(), pts.begin() + 6), ys(pts.begin() + 6, pts.end());
  const Eigen::MatrixXcd Kxy = friedrichs_kernel_matrix(c, pou, sys, xs, ys);
  const Eigen::MatrixXcd Kyx = friedrichs_kernel_matrix(c, pou, sys, ys, xs);
  const double asym = (Kxy - Kyx.adjoint()).norm() / Kxy.norm();
  MESSAGE("relative Hermiticity defect of the sampled kernel: " << asym);
  CHECK(asym < 1e-3);
}

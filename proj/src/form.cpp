#include "abflux/krein.hpp"

#include <cmath>
#include <numbers>

namespace abflux {

namespace {

const cplx kI(0.0, 1.0);

struct DiscTerms {
  double xi = 0.0, lap = 0.0;
  Vec2 grad = Vec2::Zero();
  Vec2 scheck = Vec2::Zero(), s_center = Vec2::Zero(), A = Vec2::Zero();
  cplx phase = 1.0;
};

DiscTerms disc_terms(const FluxConfig& cfg, const PartitionOfUnity& pou, int n, const Vec2& x) {
  DiscTerms t;
  const XiSample xs = pou.eval(n, x);
  t.xi = xs.value;
  t.grad = xs.grad;
  t.lap = xs.lap;
  t.A = potential_eval(cfg, Potential::A, n, x);
  t.scheck = potential_eval(cfg, Potential::Scheck, n, x);
  t.s_center = potential_eval(cfg, Potential::S, n, cfg.positions[n - 1]);
  t.phase = dressing_phase(cfg, n, x);
  return t;
}

bool in_disc(const PartitionOfUnity& pou, int n, const Vec2& x) {
  return (x - pou.centers()[n - 1]).norm() < pou.r_star();
}

double grid_lambda(double lambda, const FormOptions& opt) {
  return opt.grid_lambda > 0.0 ? opt.grid_lambda : std::min(lambda, 1.0);
}

// Rejects phi whose modulus does not decay on shrinking circles about a flux.
void check_vanishing(const FluxConfig& cfg, const PartitionOfUnity& pou, const TestFunction& phi, double tol) {
  for (int n = 0; n < cfg.size(); ++n) {
    auto ring = [&](double r) {
      double m = 0.0;
      for (int k = 0; k < 16; ++k) {
        const double t = 2.0 * std::numbers::pi * (k + 0.5) / 16.0;
        m = std::max(m, std::abs(phi(cfg.positions[n] + r * Vec2(std::cos(t), std::sin(t))).value));
      }
      return m;
    };
    const double outer = ring(1e-4 * pou.r_star());
    const double inner = ring(1e-8 * pou.r_star());
    if (inner > tol && inner >= 0.999 * outer)
      throw DomainError("quadratic form: test function does not vanish at flux " + std::to_string(n + 1));
  }
}

}  // namespace

TestFunction gaussian_test(const FluxConfig& cfg, const GaussianTest& g) {
  const double w = g.w > 0.0 ? g.w : cfg.r_star / 4.0;
  const std::vector<Vec2> centers = cfg.positions;
  return [g, w, centers](const Vec2& x) {
    const Vec2 d = x - g.center;
    const cplx e = g.amplitude * std::exp(cplx(-d.squaredNorm() / (2.0 * g.width * g.width), g.wave.dot(x)));
    const CVec2 de = e * (-d / (g.width * g.width)).cast<cplx>() + e * kI * g.wave.cast<cplx>();
    const int N = static_cast<int>(centers.size());
    std::vector<double> t(N), dt(N);
    std::vector<Vec2> rh(N);
    for (int n = 0; n < N; ++n) {
      const Vec2 dn = x - centers[n];
      const double r = dn.norm();
      t[n] = std::tanh(r / w);
      const double c = std::cosh(r / w);
      dt[n] = 1.0 / (w * c * c);
      rh[n] = r > 0.0 ? Vec2(dn / r) : Vec2::Zero();
    }
    double prod = 1.0;
    for (double v : t) prod *= v;
    Vec2 dprod = Vec2::Zero();
    for (int n = 0; n < N; ++n) {
      double others = 1.0;
      for (int m = 0; m < N; ++m)
        if (m != n) others *= t[m];
      dprod += others * dt[n] * rh[n];
    }
    return FieldSample{e * prod, de * prod + e * dprod.cast<cplx>()};
  };
}

TestFunction shift_regular_part(const FluxConfig& cfg, const TestFunction& phi, const Eigen::VectorXcd& q,
                                const PartitionOfUnity& from, double lambda_from, const PartitionOfUnity& to,
                                double lambda_to) {
  const auto ch = channels(cfg);
  if (q.size() != static_cast<Eigen::Index>(ch.size())) throw DomainError("shift_regular_part: charge size");
  return [=](const Vec2& x) {
    FieldSample s = phi(x);
    for (std::size_t k = 0; k < ch.size(); ++k) {
      if (q[k] == cplx(0.0)) continue;
      const bool a = in_disc(from, ch[k].n, x), b = in_disc(to, ch[k].n, x);
      if (!a && !b) continue;
      FieldSample d{0.0, CVec2::Zero()};
      if (a) {
        const FieldSample u = dressed_defect_sample(cfg, from, ch[k], lambda_from, x);
        d.value += u.value;
        d.grad += u.grad;
      }
      if (b) {
        const FieldSample u = dressed_defect_sample(cfg, to, ch[k], lambda_to, x);
        d.value -= u.value;
        d.grad -= u.grad;
      }
      s.value += q[k] * d.value;
      s.grad += q[k] * d.grad;
    }
    return s;
  };
}

Eigen::MatrixXcd xi_matrix(const FluxConfig& cfg, const PartitionOfUnity& pou, double lambda,
                           const FormOptions& opt) {
  const auto ch = channels(cfg);
  const int K = static_cast<int>(ch.size());
  const QuadratureGrid grid = build_grid(cfg, pou, grid_lambda(lambda, opt), opt.grid);
  Eigen::MatrixXcd X = Eigen::MatrixXcd::Zero(K, K);
  for (int i = 0; i < grid.total; ++i) {
    const double wt = grid.chi[i] * grid.w[i];
    if (!(wt > 0.0)) continue;
    const Vec2& x = grid.x[i];
    for (int n = 1; n <= cfg.size(); ++n) {
      if (!in_disc(pou, n, x)) continue;
      const DiscTerms t = disc_terms(cfg, pou, n, x);
      const double mult = (t.scheck.squaredNorm() + 2.0 * t.scheck.dot(t.A)) * t.xi * t.xi + t.grad.squaredNorm();
      const int k0 = 2 * (n - 1);
      FieldSample G[2];
      for (int a = 0; a < 2; ++a) G[a] = defect_sample(cfg, ch[k0 + a], lambda, x);
      for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b) {
          // -i grad(xi G_b)
          const CVec2 p = -kI * (t.grad.cast<cplx>() * G[b].value + t.xi * G[b].grad);
          const cplx sp = t.scheck.cast<cplx>().dot(p);
          X(k0 + a, k0 + b) += wt * (std::conj(G[a].value) * mult * G[b].value +
                                     2.0 * t.xi * std::conj(G[a].value) * sp);
        }
    }
  }
  return X;
}

FormTerms quad_form_terms(const FluxConfig& cfg, const PartitionOfUnity& pou, const ExtensionParams& ext,
                          double lambda, const TestFunction& phi, const Eigen::VectorXcd& q,
                          const FormOptions& opt) {
  if (!(lambda > 0.0)) throw DomainError("quadratic form: lambda must be positive");
  const auto ch = channels(cfg);
  const int K = static_cast<int>(ch.size());
  if (q.size() != K) throw DomainError("quadratic form: charge must have 2N entries");
  const bool charged = !q.isZero();
  if (charged && ext.is_friedrichs()) throw DomainError("quadratic form: Friedrichs form admits no charges");
  check_vanishing(cfg, pou, phi, opt.vanishing_tol);

  const QuadratureGrid grid = build_grid(cfg, pou, grid_lambda(lambda, opt), opt.grid);
  FormTerms f;
  Eigen::VectorXcd cross = Eigen::VectorXcd::Zero(K);
  for (int i = 0; i < grid.total; ++i) {
    const double wt = grid.chi[i] * grid.w[i];
    if (!(wt > 0.0)) continue;
    const Vec2& x = grid.x[i];
    const FieldSample p = phi(x);
    const Vec2 S0 = potential_eval(cfg, Potential::S0, 0, x);
    const CVec2 pi0 = -kI * p.grad + S0.cast<cplx>() * p.value;
    f.friedrichs += wt * pi0.squaredNorm();
    f.phi_norm_sq += wt * std::norm(p.value);
    cplx psi = p.value;
    for (int n = 1; n <= cfg.size(); ++n) {
      if (!in_disc(pou, n, x)) continue;
      const DiscTerms t = disc_terms(cfg, pou, n, x);
      const CVec2 z1 = t.phase * (t.scheck * t.xi).cast<cplx>() - t.phase * kI * t.grad.cast<cplx>();
      const cplx z2 = t.phase * (t.scheck.squaredNorm() * t.xi +
                                 2.0 * t.s_center.cast<cplx>().dot(((t.scheck * t.xi).cast<cplx>() -
                                                                    kI * t.grad.cast<cplx>())) +
                                 t.lap);
      const CVec2 pin = -kI * p.grad + t.A.cast<cplx>() * p.value;
      for (int a = 0; a < 2; ++a) {
        const int k = 2 * (n - 1) + a;
        const cplx G = defect_eval(cfg, ch[k], lambda, x);
        psi += q[k] * t.phase * t.xi * G;
        // Eigen's dot conjugates its first argument.
        cross[k] += wt * (2.0 * pin.dot(z1) * G + std::conj(p.value) * z2 * G);
      }
    }
    f.psi_norm_sq += wt * std::norm(psi);
  }
  for (int k = 0; k < K; ++k) f.cross += 2.0 * std::real(q[k] * cross[k]);
  if (charged) {
    const Eigen::MatrixXcd M = ext.B + l_matrix(cfg, lambda).cast<cplx>() + xi_matrix(cfg, pou, lambda, opt);
    f.charge = std::real(q.dot(M * q));
  }
  const double l2 = lambda * lambda;
  f.total = f.friedrichs - l2 * f.psi_norm_sq + l2 * f.phi_norm_sq + f.cross + f.charge;
  return f;
}

double quad_form_eval(const FluxConfig& cfg, const PartitionOfUnity& pou, const ExtensionParams& ext, double lambda,
                      const TestFunction& phi, const Eigen::VectorXcd& q, const FormOptions& opt) {
  return quad_form_terms(cfg, pou, ext, lambda, phi, q, opt).total;
}

}  // namespace abflux

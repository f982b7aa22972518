#include "abflux/kernel.hpp"

#include "gauss.hpp"
#include "radial.hpp"

#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <random>

namespace abflux {

namespace {

using detail::RadialOperator;

const cplx kI(0.0, 1.0);

// Modal fields of one grid: u, du on the nodes and the outgoing amplitudes.
struct Modal {
  std::vector<cplx> u, du, ainf;
  bool zero = true;
};

// e^{i l theta} for every mode m of an n_theta grid.
void mode_phases(int nt, double theta, std::vector<cplx>& ph) {
  ph.resize(nt);
  const cplx z = std::polar(1.0, theta);
  cplx p = 1.0;
  for (int l = 0; l < nt / 2; ++l) {
    ph[l] = p;
    if (l > 0) ph[nt - l] = std::conj(p);
    p *= z;
  }
  ph[nt / 2] = 0.0;
}

struct Stencil {
  bool inside = true;
  int j0 = 0;
  double rho = 0.0, theta = 0.0;
  std::vector<double> a, b;  // Lagrange weights, or K ratio and its derivative
};

Stencil make_stencil(const PolarGrid& g, const RadialOperator& op, const Vec2& x) {
  Stencil s;
  const Vec2 d = x - g.center;
  s.rho = d.norm();
  s.theta = std::atan2(d.y(), d.x());
  if (s.rho <= g.radius()) {
    s.inside = true;
    int P = static_cast<int>(std::upper_bound(g.breaks.begin(), g.breaks.end(), s.rho) - g.breaks.begin()) - 1;
    P = std::clamp(P, 0, g.n_panels() - 1);
    s.j0 = P * g.order;
    std::vector<double> nodes(g.r.begin() + s.j0, g.r.begin() + s.j0 + g.order);
    const auto bw = detail::barycentric_weights(nodes.data(), g.order);
    s.a.resize(g.order);
    detail::lagrange_basis(nodes.data(), bw.data(), g.order, s.rho, s.a.data());
  } else {
    s.inside = false;
    s.a.resize(g.n_theta);
    s.b.resize(g.n_theta);
    op.outgoing_table(s.rho, s.a.data(), s.b.data());
  }
  return s;
}

// Value and Cartesian gradient of a modal field with integer modes at a stencil.
FieldSample eval_stencil(const PolarGrid& g, const Stencil& s, const Modal& f, std::vector<cplx>& ph) {
  FieldSample out{0.0, CVec2::Zero()};
  if (f.zero) return out;
  const int nt = g.n_theta, nr = g.n_radial();
  mode_phases(nt, s.theta, ph);
  cplx v = 0.0, dr = 0.0, dt = 0.0;
  for (int m = 0; m < nt; ++m) {
    if (m == nt / 2) continue;
    const int l = m < nt / 2 ? m : m - nt;
    cplx um, dum;
    if (s.inside) {
      um = dum = 0.0;
      const cplx* u = &f.u[static_cast<std::size_t>(m) * nr + s.j0];
      const cplx* du = &f.du[static_cast<std::size_t>(m) * nr + s.j0];
      for (int j = 0; j < g.order; ++j) {
        um += s.a[j] * u[j];
        dum += s.a[j] * du[j];
      }
    } else {
      um = f.ainf[m] * s.a[m];
      dum = f.ainf[m] * s.b[m];
    }
    v += ph[m] * um;
    dr += ph[m] * dum;
    dt += (kI * static_cast<double>(l)) * ph[m] * um;
  }
  out.value = v;
  if (s.rho > 0.0) {
    const double c = std::cos(s.theta), sn = std::sin(s.theta);
    dt /= s.rho;
    out.grad = CVec2(dr * c - dt * sn, dr * sn + dt * c);
  }
  return out;
}

template <typename Op>
Eigen::VectorXcd gmres(const Op& A, const Eigen::VectorXcd& b, const NystromOptions& opt, SolveReport& rep) {
  const int n = static_cast<int>(b.size());
  Eigen::VectorXcd x = Eigen::VectorXcd::Zero(n);
  const double bnorm = b.norm();
  rep = {};
  if (bnorm == 0.0) return x;
  const int m = std::max(1, opt.restart);
  Eigen::MatrixXcd V(n, m + 1);
  Eigen::MatrixXcd H = Eigen::MatrixXcd::Zero(m + 1, m);
  Eigen::VectorXcd cs(m), sn(m), e(m + 1);
  int total = 0;
  Eigen::VectorXcd r = b;
  double rn = r.norm();
  while (total < opt.max_iter) {
    V.col(0) = r / rn;
    e.setZero();
    e[0] = rn;
    H.setZero();
    int k = 0;
    for (; k < m && total < opt.max_iter; ++k, ++total) {
      Eigen::VectorXcd w = A(V.col(k));
      for (int i = 0; i <= k; ++i) {
        H(i, k) = V.col(i).dot(w);
        w -= H(i, k) * V.col(i);
      }
      for (int i = 0; i <= k; ++i) {  // second pass for orthogonality
        const cplx h = V.col(i).dot(w);
        H(i, k) += h;
        w -= h * V.col(i);
      }
      H(k + 1, k) = w.norm();
      if (std::abs(H(k + 1, k)) > 0.0) V.col(k + 1) = w / H(k + 1, k);
      for (int i = 0; i < k; ++i) {
        const cplx t = std::conj(cs[i]) * H(i, k) + std::conj(sn[i]) * H(i + 1, k);
        H(i + 1, k) = -sn[i] * H(i, k) + cs[i] * H(i + 1, k);
        H(i, k) = t;
      }
      const double den = std::hypot(std::abs(H(k, k)), std::abs(H(k + 1, k)));
      cs[k] = H(k, k) / den;
      sn[k] = H(k + 1, k) / den;
      H(k, k) = den;
      H(k + 1, k) = 0.0;
      e[k + 1] = -sn[k] * e[k];
      e[k] = std::conj(cs[k]) * e[k];
      if (std::abs(e[k + 1]) <= opt.tol * bnorm) {
        ++k;
        ++total;
        break;
      }
    }
    Eigen::VectorXcd y = H.topLeftCorner(k, k).triangularView<Eigen::Upper>().solve(e.head(k));
    x += V.leftCols(k) * y;
    r = b - A(x);
    rn = r.norm();
    rep.iterations = total;
    rep.residual = rn / bnorm;
    if (rep.residual <= opt.tol) break;
  }
  return x;
}

}  // namespace

struct NystromSystem::Impl {
  FluxConfig cfg;
  PartitionOfUnity pou;
  QuadratureGrid grid;
  SpectralPoint sp;
  NystromOptions opt;
  std::vector<RadialOperator> free_op;
  std::vector<std::optional<RadialOperator>> ab_op;

  // Per node.
  std::vector<CVec2> p0, pn;
  std::vector<cplx> q0, qn, phase, srcn_w;
  std::vector<double> xi0, xin;
  std::vector<bool> need_w, need_n, w_target;
  std::vector<double> cosv, sinv;

  struct Link {
    int target;
    int src;
    Stencil st;
  };
  std::vector<Link> links;

  // Field of flux n sampled at a node of another grid inside supp xi_n.
  struct CrossLink {
    int target;
    int src;
    Stencil st;
    Vec2 A;
    CVec2 p;
    cplx q, phase;
    double xi;
    bool in_t, in_patch;
  };
  std::vector<CrossLink> cross;

  std::optional<Eigen::PartialPivLU<Eigen::MatrixXcd>> lu;

  // Nodal sources of the free fields and of the host-flux fields.
  struct Sources {
    std::vector<cplx> free, ab;
  };
  struct Fields {
    std::vector<Modal> w, v;
  };
  struct NodeFields {
    std::vector<cplx> W, V;
    std::vector<CVec2> dW, covV;
    std::vector<cplx> xt, xq;  // cross-flux parts of T and of the patched resolvent
  };

  void build();
  Sources sources(const Eigen::VectorXcd& g) const;
  Fields fields(const Sources& src) const;
  NodeFields node_fields(const Fields& F) const;
  Eigen::VectorXcd combine_t(const NodeFields& nf) const;
  Eigen::VectorXcd combine_patched(const NodeFields& nf) const;
  Eigen::VectorXcd patched_at(const Fields& F, const std::vector<Vec2>& pts) const;
  FieldSample w_at(const Fields& F, const Vec2& x) const;
  void add_cross(NodeFields& nf, const CrossLink& L, cplx V, const CVec2& cov) const;
};

void NystromSystem::Impl::build() {
  const int G = static_cast<int>(grid.grids.size());
  for (int gi = 0; gi < G; ++gi) {
    const auto& g = grid.grids[gi];
    free_op.emplace_back(g, sp.lambda, 0.0);
    const int h = grid.host[gi];
    if (h > 0)
      ab_op.emplace_back(std::in_place, g, sp.lambda, cfg.alphas[h - 1]);
    else
      ab_op.emplace_back(std::nullopt);
  }
  const int n = grid.total;
  p0.assign(n, CVec2::Zero());
  pn.assign(n, CVec2::Zero());
  q0.assign(n, 0.0);
  qn.assign(n, 0.0);
  phase.assign(n, 1.0);
  srcn_w.assign(n, 0.0);
  xi0.assign(n, 0.0);
  xin.assign(n, 0.0);
  need_w.assign(n, false);
  need_n.assign(n, false);
  w_target.assign(n, false);
  cosv.resize(n);
  sinv.resize(n);
  for (int gi = 0; gi < G; ++gi) {
    const auto& g = grid.grids[gi];
    const int h = grid.host[gi];
    for (int j = 0; j < g.n_radial(); ++j) {
      for (int k = 0; k < g.n_theta; ++k) {
        const int i = grid.offset[gi] + j * g.n_theta + k;
        const Vec2& x = grid.x[i];
        const double t = g.theta(k);
        cosv[i] = std::cos(t);
        sinv[i] = std::sin(t);
        xi0[i] = pou.value(0, x);
        const bool used = grid.active[i] || grid.chi[i] > 0.0;
        if (!used) continue;
        const PCoefficients c0 = p_coefficients(cfg, pou, 0, x);
        p0[i] = c0.c1;
        q0[i] = c0.c0;
        need_w[i] = grid.active[i] && !c0.zero();
        w_target[i] = need_w[i] || xi0[i] > 0.0;
        if (h > 0) {
          xin[i] = pou.value(h, x);
          phase[i] = dressing_phase(cfg, h, x);
          srcn_w[i] = xin[i] * std::conj(phase[i]);
          const PCoefficients cn = p_coefficients(cfg, pou, h, x);
          pn[i] = cn.c1;
          qn[i] = cn.c0;
          need_n[i] = grid.active[i] && !cn.zero();
        }
      }
    }
  }
  // Cross-grid couplings of the free fields.
  for (int ga = 0; ga < G; ++ga) {
    const auto& g = grid.grids[ga];
    for (int i = grid.offset[ga]; i < grid.offset[ga] + g.size(); ++i) {
      if (!w_target[i]) continue;
      for (int gb = 0; gb < G; ++gb) {
        if (gb == ga) continue;
        Stencil st = make_stencil(grid.grids[gb], free_op[gb], grid.x[i]);
        if (!st.inside) {
          double mx = 0.0;
          for (double v : st.a) mx = std::max(mx, std::fabs(v));
          if (mx < 1e-18) continue;
        }
        links.push_back({i, gb, std::move(st)});
      }
    }
  }
  std::vector<int> grid_of_flux(cfg.size() + 1, -1);
  for (int gi = 0; gi < G; ++gi)
    if (grid.host[gi] > 0) grid_of_flux[grid.host[gi]] = gi;
  for (int ga = 0; ga < G; ++ga) {
    const auto& g = grid.grids[ga];
    for (int i = grid.offset[ga]; i < grid.offset[ga] + g.size(); ++i) {
      if (!(grid.active[i] || grid.chi[i] > 0.0)) continue;
      for (int f = 1; f <= cfg.size(); ++f) {
        const int gb = grid_of_flux[f];
        if (f == grid.host[ga] || gb < 0) continue;
        const Vec2& x = grid.x[i];
        const double xi = pou.value(f, x);
        if (xi == 0.0) continue;
        Stencil st = make_stencil(grid.grids[gb], *ab_op[gb], x);
        if (!st.inside) throw DomainError("nystrom: cutoff support exceeds its disc grid");
        const PCoefficients c = p_coefficients(cfg, pou, f, x);
        CrossLink L{i, gb, std::move(st), potential_eval(cfg, Potential::A, f, x), c.c1, c.c0,
                    dressing_phase(cfg, f, x), xi, grid.active[i] && !c.zero(), grid.chi[i] > 0.0};
        cross.push_back(std::move(L));
      }
    }
  }
}

void NystromSystem::Impl::add_cross(NodeFields& nf, const CrossLink& L, cplx V, const CVec2& cov) const {
  if (L.in_t) nf.xt[L.target] += L.phase * (L.p.cwiseProduct(cov).sum() + L.q * V);
  if (L.in_patch) nf.xq[L.target] += L.phase * L.xi * V;
}

NystromSystem::Impl::Sources NystromSystem::Impl::sources(const Eigen::VectorXcd& g) const {
  Sources s;
  s.free.resize(grid.total);
  s.ab.resize(grid.total);
  for (int i = 0; i < grid.total; ++i) {
    s.free[i] = grid.ext_src[i] * g[i];
    s.ab[i] = srcn_w[i] * g[i];
  }
  return s;
}

NystromSystem::Impl::Fields NystromSystem::Impl::fields(const Sources& src) const {
  const int G = static_cast<int>(grid.grids.size());
  Fields F;
  F.w.resize(G);
  F.v.resize(G);
  std::vector<cplx> modal;
  for (int gi = 0; gi < G; ++gi) {
    const auto& pg = grid.grids[gi];
    const int sz = pg.size(), off = grid.offset[gi];
    modal.resize(sz);
    auto run = [&](const RadialOperator& op, const cplx* s, Modal& out) {
      bool any = false;
      for (int i = 0; i < sz && !any; ++i) any = s[i] != cplx(0.0);
      out.zero = !any;
      if (!any) return;
      out.u.resize(sz);
      out.du.resize(sz);
      out.ainf.resize(pg.n_theta);
      detail::to_modal(pg, s, modal.data());
      op.apply(modal.data(), out.u.data(), out.du.data(), out.ainf.data());
    };
    run(free_op[gi], src.free.data() + off, F.w[gi]);
    if (ab_op[gi]) run(*ab_op[gi], src.ab.data() + off, F.v[gi]);
  }
  return F;
}

NystromSystem::Impl::NodeFields NystromSystem::Impl::node_fields(const Fields& F) const {
  const int G = static_cast<int>(grid.grids.size());
  NodeFields nf;
  nf.W.assign(grid.total, 0.0);
  nf.V.assign(grid.total, 0.0);
  nf.dW.assign(grid.total, CVec2::Zero());
  nf.covV.assign(grid.total, CVec2::Zero());
  nf.xt.assign(grid.total, 0.0);
  nf.xq.assign(grid.total, 0.0);
  std::vector<cplx> a, b, c;
  for (int gi = 0; gi < G; ++gi) {
    const auto& pg = grid.grids[gi];
    const int sz = pg.size(), nr = pg.n_radial(), nt = pg.n_theta, off = grid.offset[gi];
    a.resize(sz);
    b.resize(sz);
    c.resize(sz);
    // u, du and (l + shift)/r u in nodal form.
    auto nodal = [&](const Modal& f, double shift, bool imag_unit) {
      for (int m = 0; m < nt; ++m) {
        const int l = m < nt / 2 ? m : m - nt;
        const cplx fac = imag_unit ? kI : cplx(1.0);
        for (int j = 0; j < nr; ++j)
          c[static_cast<std::size_t>(m) * nr + j] = fac * ((l + shift) / pg.r[j]) * f.u[m * nr + j];
      }
      detail::to_nodal(pg, f.u.data(), a.data());
      detail::to_nodal(pg, f.du.data(), b.data());
      std::vector<cplx> t(sz);
      detail::to_nodal(pg, c.data(), t.data());
      c.swap(t);
    };
    if (!F.w[gi].zero) {
      nodal(F.w[gi], 0.0, true);
      for (int k = 0; k < sz; ++k) {
        const int i = off + k;
        const double cs = cosv[i], sn = sinv[i];
        nf.W[i] = a[k];
        nf.dW[i] = CVec2(b[k] * cs - c[k] * sn, b[k] * sn + c[k] * cs);
      }
    }
    if (ab_op[gi] && !F.v[gi].zero) {
      nodal(F.v[gi], ab_op[gi]->shift(), false);
      for (int k = 0; k < sz; ++k) {
        const int i = off + k;
        const double cs = cosv[i], sn = sinv[i];
        const cplx rr = -kI * b[k];
        nf.V[i] = a[k];
        nf.covV[i] = CVec2(rr * cs - c[k] * sn, rr * sn + c[k] * cs);
      }
    }
  }
  std::vector<cplx> ph;
  for (const auto& L : links) {
    const FieldSample s = eval_stencil(grid.grids[L.src], L.st, F.w[L.src], ph);
    nf.W[L.target] += s.value;
    nf.dW[L.target] += s.grad;
  }
  for (const auto& L : cross) {
    if (F.v[L.src].zero) continue;
    const FieldSample s = eval_stencil(grid.grids[L.src], L.st, F.v[L.src], ph);
    add_cross(nf, L, s.value, -kI * s.grad + L.A.cast<cplx>() * s.value);
  }
  return nf;
}

Eigen::VectorXcd NystromSystem::Impl::combine_t(const NodeFields& nf) const {
  Eigen::VectorXcd y = Eigen::VectorXcd::Zero(grid.total);
  for (int i = 0; i < grid.total; ++i) {
    if (need_w[i]) y[i] += p0[i].cwiseProduct(-kI * nf.dW[i]).sum() + q0[i] * nf.W[i];
    if (need_n[i]) y[i] += phase[i] * (pn[i].cwiseProduct(nf.covV[i]).sum() + qn[i] * nf.V[i]);
    y[i] += nf.xt[i];
  }
  return y;
}

Eigen::VectorXcd NystromSystem::Impl::combine_patched(const NodeFields& nf) const {
  Eigen::VectorXcd out = Eigen::VectorXcd::Zero(grid.total);
  for (int i = 0; i < grid.total; ++i)
    if (grid.chi[i] > 0.0) out[i] = xi0[i] * nf.W[i] + phase[i] * xin[i] * nf.V[i] + nf.xq[i];
  return out;
}

FieldSample NystromSystem::Impl::w_at(const Fields& F, const Vec2& x) const {
  FieldSample out{0.0, CVec2::Zero()};
  std::vector<cplx> ph;
  for (std::size_t gb = 0; gb < grid.grids.size(); ++gb) {
    if (F.w[gb].zero) continue;
    const Stencil st = make_stencil(grid.grids[gb], free_op[gb], x);
    const FieldSample s = eval_stencil(grid.grids[gb], st, F.w[gb], ph);
    out.value += s.value;
    out.grad += s.grad;
  }
  return out;
}

Eigen::VectorXcd NystromSystem::Impl::patched_at(const Fields& F, const std::vector<Vec2>& pts) const {
  Eigen::VectorXcd out(static_cast<Eigen::Index>(pts.size()));
  std::vector<cplx> ph;
  for (std::size_t p = 0; p < pts.size(); ++p) {
    const Vec2& x = pts[p];
    cplx v = 0.0;
    const double x0 = pou.value(0, x);
    if (x0 != 0.0) v += x0 * w_at(F, x).value;
    for (std::size_t gi = 0; gi < grid.grids.size(); ++gi) {
      if (!ab_op[gi] || F.v[gi].zero) continue;
      const int h = grid.host[gi];
      const double xn = pou.value(h, x);
      if (xn == 0.0) continue;
      const Stencil st = make_stencil(grid.grids[gi], *ab_op[gi], x);
      if (!st.inside) continue;
      v += dressing_phase(cfg, h, x) * xn * eval_stencil(grid.grids[gi], st, F.v[gi], ph).value;
    }
    out[static_cast<Eigen::Index>(p)] = v;
  }
  return out;
}

NystromSystem::NystromSystem(const FluxConfig& cfg, const PartitionOfUnity& pou, const QuadratureGrid& grid,
                             const SpectralPoint& sp, const NystromOptions& opt)
    : impl_(std::make_unique<Impl>()) {
  if (!(sp.lambda > 0.0)) throw DomainError("nystrom: lambda must be positive");
  if (std::fabs(grid.lambda - sp.lambda) > 1e-12 * sp.lambda)
    throw DomainError("nystrom: grid was built for a different lambda");
  impl_->cfg = cfg;
  impl_->pou = pou;
  impl_->grid = grid;
  impl_->sp = sp;
  impl_->opt = opt;
  impl_->build();
  if (size() <= opt.dense_limit) factorize();
}

NystromSystem::~NystromSystem() = default;
NystromSystem::NystromSystem(NystromSystem&&) noexcept = default;
NystromSystem& NystromSystem::operator=(NystromSystem&&) noexcept = default;

int NystromSystem::size() const { return impl_->grid.total; }
const QuadratureGrid& NystromSystem::grid() const { return impl_->grid; }
const SpectralPoint& NystromSystem::spectral_point() const { return impl_->sp; }

Eigen::VectorXcd NystromSystem::apply_t(const Eigen::VectorXcd& v) const {
  if (v.size() != size()) throw DomainError("nystrom: vector size mismatch");
  const Impl& m = *impl_;
  return m.combine_t(m.node_fields(m.fields(m.sources(v))));
}

Eigen::VectorXcd NystromSystem::apply(const Eigen::VectorXcd& v) const { return v + apply_t(v); }

Eigen::VectorXcd NystromSystem::solve(const Eigen::VectorXcd& f, SolveReport* report) const {
  if (f.size() != size()) throw DomainError("nystrom: vector size mismatch");
  SolveReport rep;
  Eigen::VectorXcd x;
  if (impl_->lu) {
    x = impl_->lu->solve(f);
    const double fn = f.norm();
    rep.residual = fn > 0.0 ? (f - apply(x)).norm() / fn : 0.0;
  } else {
    x = gmres([this](const Eigen::VectorXcd& v) { return apply(v); }, f, impl_->opt, rep);
    if (!(rep.residual <= std::max(1e3 * impl_->opt.tol, 1e-10)))
      throw SolverError("nystrom: GMRES did not converge (residual " + std::to_string(rep.residual) + ")");
  }
  if (report) *report = rep;
  return x;
}

Eigen::MatrixXcd NystromSystem::solve(const Eigen::MatrixXcd& f, std::vector<SolveReport>* reports) const {
  Eigen::MatrixXcd x(f.rows(), f.cols());
  if (reports) reports->clear();
  for (Eigen::Index c = 0; c < f.cols(); ++c) {
    SolveReport rep;
    x.col(c) = solve(Eigen::VectorXcd(f.col(c)), &rep);
    if (reports) reports->push_back(rep);
  }
  return x;
}

Eigen::VectorXcd NystromSystem::patched(const Eigen::VectorXcd& g) const {
  const Impl& m = *impl_;
  return m.combine_patched(m.node_fields(m.fields(m.sources(g))));
}

Eigen::VectorXcd NystromSystem::patched_at(const Eigen::VectorXcd& g, const std::vector<Vec2>& pts) const {
  const Impl& m = *impl_;
  return m.patched_at(m.fields(m.sources(g)), pts);
}

Eigen::MatrixXcd NystromSystem::dense() const {
  const int n = size();
  Eigen::MatrixXcd A(n, n);
  Eigen::VectorXcd e = Eigen::VectorXcd::Zero(n);
  for (int j = 0; j < n; ++j) {
    e[j] = 1.0;
    A.col(j) = apply(e);
    e[j] = 0.0;
  }
  return A;
}

bool NystromSystem::factorized() const { return impl_->lu.has_value(); }

void NystromSystem::factorize() { impl_->lu.emplace(dense()); }

namespace {

double weighted_norm(const QuadratureGrid& g, const Eigen::VectorXcd& v) {
  double s = 0.0;
  for (int i = 0; i < g.total; ++i) s += g.chi[i] * g.w[i] * std::norm(v[i]);
  return std::sqrt(s);
}

Eigen::VectorXcd random_probe(const QuadratureGrid& g, std::mt19937& rng) {
  std::normal_distribution<double> nd;
  Eigen::VectorXcd v = Eigen::VectorXcd::Zero(g.total);
  for (int i = 0; i < g.total; ++i)
    if (g.chi[i] > 0.0) v[i] = cplx(nd(rng), nd(rng));
  return v;
}

}  // namespace

double NystromSystem::condition_estimate() const {
  if (impl_->lu) {
    const Eigen::MatrixXcd A = dense();
    const Eigen::MatrixXcd Ai = impl_->lu->inverse();
    return A.cwiseAbs().colwise().sum().maxCoeff() * Ai.cwiseAbs().colwise().sum().maxCoeff();
  }
  // Lower bound from random probes of A and A^{-1}.
  std::mt19937 rng(11);
  double up = 0.0, inv = 0.0;
  for (int p = 0; p < 3; ++p) {
    const Eigen::VectorXcd v = random_probe(impl_->grid, rng);
    up = std::max(up, apply(v).norm() / v.norm());
    inv = std::max(inv, solve(v).norm() / v.norm());
  }
  return up * inv;
}

double NystromSystem::t_norm_estimate(int probes, int power_steps, unsigned seed) const {
  const QuadratureGrid& g = impl_->grid;
  std::mt19937 rng(seed);
  double best = 0.0;
  for (int p = 0; p < probes; ++p) {
    Eigen::VectorXcd v = random_probe(g, rng);
    double n = weighted_norm(g, v);
    if (n == 0.0) continue;
    v /= n;
    for (int s = 0; s <= power_steps; ++s) {
      Eigen::VectorXcd t = apply_t(v);
      for (int i = 0; i < g.total; ++i)
        if (g.chi[i] <= 0.0) t[i] = 0.0;
      const double tn = weighted_norm(g, t);
      best = std::max(best, tn);
      if (tn == 0.0) break;
      v = t / tn;
    }
  }
  return best;
}

NystromSystem build_nystrom(const FluxConfig& cfg, const PartitionOfUnity& pou, const SpectralPoint& sp,
                            const QuadratureGrid& grid, const NystromOptions& opt) {
  return NystromSystem(cfg, pou, grid, sp, opt);
}

Eigen::VectorXcd friedrichs_apply(const NystromSystem& sys, const Eigen::VectorXcd& f) {
  return sys.patched(sys.solve(f));
}

namespace {

// C-infinity cutoff equal to 1 for r <= rho/2 and 0 for r >= rho, with two r-derivatives.
Smoothstep bump(double r, double rho) {
  const double u = 2.0 * r / rho - 1.0;
  if (u <= 1e-3) return {1.0, 0.0, 0.0};
  if (u >= 1.0 - 1e-3) return {0.0, 0.0, 0.0};
  const double h = 1.0 / u - 1.0 / (1.0 - u);
  const double h1 = -1.0 / (u * u) - 1.0 / ((1.0 - u) * (1.0 - u));
  const double h2 = 2.0 / (u * u * u) - 2.0 / ((1.0 - u) * (1.0 - u) * (1.0 - u));
  const double t = 1.0 / (1.0 + std::exp(h));
  const double q = t * (1.0 - t);
  const double t1 = -q * h1;
  const double t2 = q * h1 * h1 * (1.0 - 2.0 * t) - q * h2;
  const double du = 2.0 / rho;
  return {1.0 - t, -t1 * du, -t2 * du * du};
}

// Singular profile c.(-i grad G) + a G + sum_jk M_jk d_j (-i d_k G) in d = y - x',
// G the free kernel. Its preimage under -Delta + lambda^2 is known in closed form.
struct Profile {
  CVec2 c = CVec2::Zero();
  cplx a = 0.0;
  Eigen::Matrix2cd M = Eigen::Matrix2cd::Zero();

  Profile& operator+=(const Profile& o) {
    c += o.c;
    a += o.a;
    M += o.M;
    return *this;
  }
  bool zero() const { return c.isZero() && a == cplx(0.0) && M.isZero(); }
};

Profile operator*(cplx s, const Profile& p) {
  Profile out;
  out.c = s * p.c;
  out.a = s * p.a;
  out.M = s * p.M;
  return out;
}

Eigen::Matrix2cd outer(const CVec2& u, const CVec2& v) { return u * v.transpose(); }

cplx bilinear(const CVec2& u, const CVec2& v) { return u.cwiseProduct(v).sum(); }

struct LocalFrame {
  Vec2 d, e;
  double r = 0.0, K0 = 0.0, K1 = 0.0, Phi = 0.0;
  Smoothstep b{0.0, 0.0, 0.0};
};

struct ProfileSample {
  cplx W = 0.0, s = 0.0;
  CVec2 dW = CVec2::Zero();
};

// Cut-off preimages W = bump * w of the profiles around x' and s = (-Delta + lambda^2) W.
struct Localizer {
  Vec2 xp;
  double rho, lambda;

  bool covers(const Vec2& y) const { return (y - xp).norm() < rho; }

  LocalFrame frame(const Vec2& y) const {
    LocalFrame f;
    f.d = y - xp;
    f.r = f.d.norm();
    if (!(f.r > 0.0)) throw SingularityError("friedrichs kernel: node coincides with the source point");
    f.e = f.d / f.r;
    const KPair<double> k0 = bessel_k_dx(0.0, lambda * f.r);
    f.K0 = k0.k;
    f.K1 = -k0.dk;
    f.Phi = f.r * f.K1 / (4.0 * std::numbers::pi * lambda);
    f.b = bump(f.r, rho);
    return f;
  }

  ProfileSample eval(const Profile& p, const LocalFrame& f) const {
    ProfileSample out;
    if (f.b.s == 0.0 && f.b.ds == 0.0) return out;
    constexpr double pi = std::numbers::pi;
    const CVec2 d = f.d.cast<cplx>(), e = f.e.cast<cplx>();
    const cplx cd = bilinear(p.c, d);
    const cplx dMd = d.transpose() * p.M * d;
    const cplx am = p.a + 0.5 * kI * p.M.trace();
    const cplx w = kI / (4.0 * pi) * f.K0 * cd + am * f.Phi + kI / (8.0 * pi) * f.K0 * dMd;
    const CVec2 dw = kI / (4.0 * pi) * (f.K0 * p.c - (lambda * f.K1 * cd) * e) - am * f.K0 / (4.0 * pi) * d +
                     kI / (8.0 * pi) * (f.K0 * ((p.M + p.M.transpose()) * d) - (lambda * f.K1 * dMd) * e);
    const double G = f.K0 / (2.0 * pi);
    const CVec2 gG = (-lambda * f.K1 / (2.0 * pi)) * e;
    const cplx S = -kI * bilinear(p.c, gG) + p.a * G - kI * cplx(d.transpose() * p.M * gG);
    const cplx edw = bilinear(e, dw);
    out.W = f.b.s * w;
    out.dW = f.b.s * dw + (w * f.b.ds) * e;
    out.s = f.b.s * S - 2.0 * f.b.ds * edw - w * (f.b.d2s + f.b.ds / f.r);
    return out;
  }
};

// (H_n + lambda^2) W for the flux-n operator, given (-Delta + lambda^2) W.
cplx ab_image(const ProfileSample& s, const Vec2& A) {
  return s.s - 2.0 * kI * (A.x() * s.dW[0] + A.y() * s.dW[1]) + A.squaredNorm() * s.W;
}

CVec2 covariant(const ProfileSample& s, const Vec2& A) { return -kI * s.dW + A.cast<cplx>() * s.W; }

// Leading terms of the column T(., x') and the matching analytic parts of
// R_0(xi_0 z) and R_n(xi_n conj(D_n) z) for z the bumped leading profile.
struct ColumnProfiles {
  Profile z;
  Profile free;
  std::vector<Profile> ab;  // index 1..N
};

ColumnProfiles column_profiles(const FluxConfig& cfg, const PartitionOfUnity& pou, const Vec2& xp) {
  const int N = cfg.size();
  ColumnProfiles out;
  Profile& z = out.z;
  for (int n = 0; n <= N; ++n) {
    const double xi = pou.value(n, xp);
    if (xi == 0.0) continue;
    z.c += xi * p_coefficients(cfg, pou, n, xp).c1;
  }
  const XiSample x0 = pou.eval(0, xp);
  out.free = x0.value * z;
  out.free.M += outer(x0.grad.cast<cplx>(), z.c);
  out.ab.assign(N + 1, Profile{});
  for (int n = 1; n <= N; ++n) {
    const XiSample xn = pou.eval(n, xp);
    if (xn.value == 0.0 && xn.grad.isZero()) continue;
    const cplx cD = std::conj(dressing_phase(cfg, n, xp));
    const cplx beta = xn.value * cD;
    const Vec2 S = potential_eval(cfg, Potential::S, n, cfg.positions[n - 1]);
    const CVec2 gf = cD * (xn.grad.cast<cplx>() + kI * xn.value * S.cast<cplx>());
    const CVec2 A = potential_eval(cfg, Potential::A, n, xp).cast<cplx>();
    Profile& p = out.ab[n];
    p = beta * z;
    p.M += outer(gf, z.c);
    p.a += -beta * bilinear(A, z.c);
    p.M += -kI * beta * outer(z.c, A);
  }
  return out;
}

}  // namespace

Eigen::MatrixXcd friedrichs_kernel_matrix(const FluxConfig& cfg, const PartitionOfUnity& pou,
                                          const NystromSystem& sys, const std::vector<Vec2>& xs,
                                          const std::vector<Vec2>& xps) {
  const NystromSystem::Impl& m = *sys.impl_;
  const QuadratureGrid& g = m.grid;
  const SpectralPoint& sp = m.sp;
  const int N = cfg.size();
  Eigen::MatrixXcd K(static_cast<Eigen::Index>(xs.size()), static_cast<Eigen::Index>(xps.size()));
  for (std::size_t col = 0; col < xps.size(); ++col) {
    const Vec2& xp = xps[col];
    Eigen::VectorXcd rhs = Eigen::VectorXcd::Zero(g.total);
    for (int i = 0; i < g.total; ++i)
      if (g.active[i]) rhs[i] = tn_kernel(cfg, pou, sp, g.x[i], xp);

    const ColumnProfiles prof = column_profiles(cfg, pou, xp);
    double dmin = 3.0 / sp.lambda;
    for (const Vec2& c : cfg.positions) dmin = std::min(dmin, (xp - c).norm());
    const Localizer loc{xp, 0.9 * dmin, sp.lambda};
    const bool subtract = !prof.z.zero() && loc.rho > 0.0;

    NystromSystem::Impl::Sources extra;
    extra.free.assign(g.total, 0.0);
    extra.ab.assign(g.total, 0.0);
    if (subtract) {
      std::vector<int> near;
      std::vector<LocalFrame> frames(g.total);
      NystromSystem::Impl::NodeFields nf;
      std::vector<cplx> zval(g.total, 0.0);
      for (std::size_t gi = 0; gi < g.grids.size(); ++gi) {
        const int h = g.host[gi];
        for (int i = g.offset[gi]; i < g.offset[gi] + g.grids[gi].size(); ++i) {
          if (!loc.covers(g.x[i])) continue;
          near.push_back(i);
          const LocalFrame& f = frames[i] = loc.frame(g.x[i]);
          const ProfileSample sz = loc.eval(prof.z, f);
          zval[i] = sz.s;
          extra.free[i] = g.blend[i] * (m.xi0[i] * sz.s - loc.eval(prof.free, f).s);
          if (h > 0) {
            const Vec2 A = potential_eval(cfg, Potential::A, h, g.x[i]);
            extra.ab[i] = m.srcn_w[i] * sz.s - ab_image(loc.eval(prof.ab[h], f), A);
          }
        }
      }
      nf = m.node_fields(m.fields(extra));
      std::vector<bool> is_near(g.total, false);
      for (int i : near) {
        is_near[i] = true;
        const ProfileSample s0 = loc.eval(prof.free, frames[i]);
        nf.W[i] += s0.W;
        nf.dW[i] += s0.dW;
        const int h = g.host[g.grid_of(i)];
        if (h > 0 && !prof.ab[h].zero()) {
          const ProfileSample sn = loc.eval(prof.ab[h], frames[i]);
          nf.V[i] += sn.W;
          nf.covV[i] += covariant(sn, potential_eval(cfg, Potential::A, h, g.x[i]));
        }
      }
      for (const auto& L : m.cross) {
        const int f = g.host[L.src];
        if (!is_near[L.target] || prof.ab[f].zero()) continue;
        const ProfileSample sn = loc.eval(prof.ab[f], frames[L.target]);
        m.add_cross(nf, L, sn.W, covariant(sn, L.A));
      }
      const Eigen::VectorXcd tz = m.combine_t(nf);
      for (int i = 0; i < g.total; ++i)
        if (g.active[i]) rhs[i] -= zval[i] + tz[i];
    }

    const Eigen::VectorXcd v = sys.solve(rhs);
    NystromSystem::Impl::Sources src = m.sources(v);
    for (int i = 0; i < g.total; ++i) {
      src.free[i] += extra.free[i];
      src.ab[i] += extra.ab[i];
    }
    const Eigen::VectorXcd qu = m.patched_at(m.fields(src), xs);
    for (std::size_t r = 0; r < xs.size(); ++r) {
      const Vec2& x = xs[r];
      cplx val = patched_kernel(cfg, pou, sp, x, xp) - qu[static_cast<Eigen::Index>(r)];
      if (subtract && loc.covers(x)) {
        const LocalFrame f = loc.frame(x);
        cplx qz = pou.value(0, x) * loc.eval(prof.free, f).W;
        for (int n = 1; n <= N; ++n)
          if (!prof.ab[n].zero()) qz += dressing_phase(cfg, n, x) * pou.value(n, x) * loc.eval(prof.ab[n], f).W;
        val -= qz;
      }
      K(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(col)) = val;
    }
  }
  return K;
}

cplx friedrichs_kernel(const FluxConfig& cfg, const PartitionOfUnity& pou, const NystromSystem& sys, const Vec2& x,
                       const Vec2& xp) {
  return friedrichs_kernel_matrix(cfg, pou, sys, {x}, {xp})(0, 0);
}

}  // namespace abflux

#include "radial.hpp"

#include "abflux/specfun.hpp"
#include "gauss.hpp"

#include <unsupported/Eigen/FFT>

#include <cmath>
#include <numbers>

namespace abflux::detail {

namespace {

struct SubRule {
  std::vector<ld> x, w;
};

const SubRule& unit_rule() {
  static const SubRule rule = [] {
    SubRule r;
    gauss_legendre_unit<ld>(16, r.x, r.w);
    return r;
  }();
  return rule;
}

// Nodes on [lo, hi] packed toward one end: subinterval lengths h0, 2h0, 4h0, ...
void graded_rule(ld lo, ld hi, bool toward_hi, ld h0, std::vector<ld>& s, std::vector<ld>& w) {
  s.clear();
  w.clear();
  if (!(hi > lo)) return;
  const SubRule& u = unit_rule();
  h0 = std::min(h0, hi - lo);
  h0 = std::max(h0, (hi - lo) * 1e-9L);
  ld done = 0.0L, len = h0;
  while (done < hi - lo) {
    const ld seg = std::min(len, (hi - lo) - done);
    ld a, b;
    if (toward_hi) {
      b = hi - done;
      a = b - seg;
    } else {
      a = lo + done;
      b = a + seg;
    }
    const ld m = 0.5L * (a + b), h = 0.5L * (b - a);
    for (std::size_t q = 0; q < u.x.size(); ++q) {
      s.push_back(m + h * u.x[q]);
      w.push_back(h * u.w[q]);
    }
    done += seg;
    len *= 2.0L;
  }
}

struct Ladders {
  BesselLadder<ld> pos, neg;
};

void eval_ladders(ld shift, int npos, int nneg, ld x, Ladders& out) {
  bessel_ik_ladder<ld>(shift, npos, x, out.pos);
  if (nneg > 0) bessel_ik_ladder<ld>(1.0L - shift, nneg, x, out.neg);
}

}  // namespace

RadialOperator::RadialOperator(const PolarGrid& grid, double lambda, double shift)
    : nr_(grid.n_radial()),
      nt_(grid.n_theta),
      p_(grid.order),
      ntab_(grid.n_theta - 1),
      lambda_(lambda),
      shift_(shift),
      radius_(grid.radius()) {
  const int npos = nt_ / 2, nneg = nt_ / 2 - 1;
  const ld lam = lambda;
  const ld sh = shift;
  const double numax = std::max(shift + npos - 1, 1.0 - shift + nneg - 1);
  const std::size_t sz = static_cast<std::size_t>(ntab_) * nr_;
  i_.assign(sz, 0);
  k_.assign(sz, 0);
  di_.assign(sz, 0);
  dk_.assign(sz, 0);
  mi_.assign(sz, 0);
  mk_.assign(sz, 0);
  pi_.assign(sz * p_, 0);
  pk_.assign(sz * p_, 0);
  kr_.assign(ntab_, 0);

  auto I = [&](const Ladders& l, int t) { return t < npos ? l.pos.i[t] : l.neg.i[t - npos]; };
  auto K = [&](const Ladders& l, int t) { return t < npos ? l.pos.k[t] : l.neg.k[t - npos]; };
  auto dI = [&](const Ladders& l, int t) { return t < npos ? l.pos.di[t] : l.neg.di[t - npos]; };
  auto dK = [&](const Ladders& l, int t) { return t < npos ? l.pos.dk[t] : l.neg.dk[t - npos]; };

  Ladders lad;
  for (int j = 0; j < nr_; ++j) {
    eval_ladders(sh, npos, nneg, lam * grid.r[j], lad);
    for (int t = 0; t < ntab_; ++t) {
      i_[t * nr_ + j] = I(lad, t);
      k_[t * nr_ + j] = K(lad, t);
      di_[t * nr_ + j] = lam * dI(lad, t);
      dk_[t * nr_ + j] = lam * dK(lad, t);
    }
  }
  eval_ladders(sh, npos, nneg, lam * static_cast<ld>(radius_), lad);
  for (int t = 0; t < ntab_; ++t) kr_[t] = K(lad, t);

  std::vector<ld> s, w, nodes(p_), bw, basis(p_);
  for (int P = 0; P < grid.n_panels(); ++P) {
    const int j0 = P * p_;
    panel_start_.push_back(j0);
    const ld a = grid.breaks[P], b = grid.breaks[P + 1];
    for (int j = 0; j < p_; ++j) nodes[j] = grid.r[j0 + j];
    bw = barycentric_weights(nodes.data(), p_);
    auto scale = [&](ld e) { return 1.0L / (static_cast<ld>(numax) / e + lam); };

    // Accumulates w s F_t(s) L_j(s) into dst[(t * nr + row) * stride + j].
    auto moments = [&](ld lo, ld hi, bool toward_hi, bool use_i, std::vector<ld>& dst, int row, int stride) {
      graded_rule(lo, hi, toward_hi, scale(toward_hi ? hi : lo), s, w);
      for (std::size_t q = 0; q < s.size(); ++q) {
        eval_ladders(sh, npos, nneg, lam * s[q], lad);
        lagrange_basis(nodes.data(), bw.data(), p_, s[q], basis.data());
        const ld ws = w[q] * s[q];
        for (int t = 0; t < ntab_; ++t) {
          const ld f = ws * (use_i ? I(lad, t) : K(lad, t));
          ld* out = &dst[(static_cast<std::size_t>(t) * nr_ + row) * stride];
          for (int j = 0; j < p_; ++j) out[j] += f * basis[j];
        }
      }
    };
    // Full-panel moments use stride 1 with row j0 so entries land at t * nr + j0 + j.
    moments(a, b, true, true, mi_, j0, 1);
    if (a > 0.0L) moments(a, b, false, false, mk_, j0, 1);
    for (int i = j0; i < j0 + p_; ++i) {
      const ld ri = grid.r[i];
      moments(a, ri, true, true, pi_, i, p_);
      moments(ri, b, false, false, pk_, i, p_);
    }
  }
}

int RadialOperator::table(int m) const {
  const int l = ell(m);
  return l >= 0 ? l : nt_ / 2 + (-l - 1);
}

double RadialOperator::nu(int m) const { return std::fabs(ell(m) + shift_); }

void RadialOperator::apply(const cplx* f, cplx* u, cplx* du, cplx* ainf) const {
  thread_local std::vector<cld> A, B, fl;
  A.resize(nr_);
  B.resize(nr_);
  fl.resize(nr_);
  const int np = static_cast<int>(panel_start_.size());
  for (int m = 0; m < nt_; ++m) {
    cplx* um = u + static_cast<std::size_t>(m) * nr_;
    cplx* dum = du + static_cast<std::size_t>(m) * nr_;
    if (nyquist(m)) {
      std::fill(um, um + nr_, cplx(0.0));
      std::fill(dum, dum + nr_, cplx(0.0));
      if (ainf) ainf[m] = 0.0;
      continue;
    }
    const cplx* fm = f + static_cast<std::size_t>(m) * nr_;
    bool any = false;
    for (int j = 0; j < nr_; ++j) {
      fl[j] = cld(fm[j].real(), fm[j].imag());
      any = any || fm[j] != cplx(0.0);
    }
    if (!any) {
      std::fill(um, um + nr_, cplx(0.0));
      std::fill(dum, dum + nr_, cplx(0.0));
      if (ainf) ainf[m] = 0.0;
      continue;
    }
    const std::size_t t = table(m);
    const ld* MI = &mi_[t * nr_];
    const ld* MK = &mk_[t * nr_];
    cld prefix = 0;
    for (int P = 0; P < np; ++P) {
      const int j0 = panel_start_[P];
      for (int i = j0; i < j0 + p_; ++i) {
        const ld* row = &pi_[(t * nr_ + i) * p_];
        cld acc = prefix;
        for (int j = 0; j < p_; ++j) acc += row[j] * fl[j0 + j];
        A[i] = acc;
      }
      for (int j = 0; j < p_; ++j) prefix += MI[j0 + j] * fl[j0 + j];
    }
    if (ainf) {
      const cld a = prefix * kr_[t];
      ainf[m] = cplx(static_cast<double>(a.real()), static_cast<double>(a.imag()));
    }
    cld suffix = 0;
    for (int P = np - 1; P >= 0; --P) {
      const int j0 = panel_start_[P];
      for (int i = j0; i < j0 + p_; ++i) {
        const ld* row = &pk_[(t * nr_ + i) * p_];
        cld acc = suffix;
        for (int j = 0; j < p_; ++j) acc += row[j] * fl[j0 + j];
        B[i] = acc;
      }
      for (int j = 0; j < p_; ++j) suffix += MK[j0 + j] * fl[j0 + j];
    }
    const ld* Iv = &i_[t * nr_];
    const ld* Kv = &k_[t * nr_];
    const ld* dIv = &di_[t * nr_];
    const ld* dKv = &dk_[t * nr_];
    for (int i = 0; i < nr_; ++i) {
      const cld v = Kv[i] * A[i] + Iv[i] * B[i];
      const cld d = dKv[i] * A[i] + dIv[i] * B[i];
      um[i] = cplx(static_cast<double>(v.real()), static_cast<double>(v.imag()));
      dum[i] = cplx(static_cast<double>(d.real()), static_cast<double>(d.imag()));
    }
  }
}

void RadialOperator::outgoing_table(double rho, double* k, double* dk) const {
  const int npos = nt_ / 2, nneg = nt_ / 2 - 1;
  Ladders lad;
  eval_ladders(shift_, npos, nneg, static_cast<ld>(lambda_) * rho, lad);
  for (int m = 0; m < nt_; ++m) {
    if (nyquist(m)) {
      k[m] = dk[m] = 0.0;
      continue;
    }
    const int t = table(m);
    const ld kv = t < npos ? lad.pos.k[t] : lad.neg.k[t - npos];
    const ld dv = t < npos ? lad.pos.dk[t] : lad.neg.dk[t - npos];
    k[m] = static_cast<double>(kv / kr_[t]);
    dk[m] = static_cast<double>(static_cast<ld>(lambda_) * dv / kr_[t]);
  }
}

void to_modal(const PolarGrid& g, const cplx* phys, cplx* modal) {
  thread_local Eigen::FFT<double> fft;
  thread_local std::vector<cplx> in, out;
  const int nt = g.n_theta, nr = g.n_radial();
  in.resize(nt);
  const double th0 = std::numbers::pi / nt;
  for (int j = 0; j < nr; ++j) {
    std::copy(phys + static_cast<std::size_t>(j) * nt, phys + static_cast<std::size_t>(j + 1) * nt, in.begin());
    fft.fwd(out, in);
    for (int m = 0; m < nt; ++m) {
      const int l = m < nt / 2 ? m : m - nt;
      modal[static_cast<std::size_t>(m) * nr + j] =
          m == nt / 2 ? cplx(0.0) : out[m] * std::polar(1.0 / nt, -l * th0);
    }
  }
}

void to_nodal(const PolarGrid& g, const cplx* modal, cplx* phys) {
  thread_local Eigen::FFT<double> fft;
  thread_local std::vector<cplx> in, out;
  fft.SetFlag(Eigen::FFT<double>::Unscaled);
  const int nt = g.n_theta, nr = g.n_radial();
  in.resize(nt);
  const double th0 = std::numbers::pi / nt;
  for (int j = 0; j < nr; ++j) {
    for (int m = 0; m < nt; ++m) {
      const int l = m < nt / 2 ? m : m - nt;
      in[m] = m == nt / 2 ? cplx(0.0) : modal[static_cast<std::size_t>(m) * nr + j] * std::polar(1.0, l * th0);
    }
    fft.inv(out, in);
    std::copy(out.begin(), out.end(), phys + static_cast<std::size_t>(j) * nt);
  }
}

}  // namespace abflux::detail

#pragma once

#include "abflux/kernel.hpp"

#include <complex>
#include <vector>

namespace abflux::detail {

using ld = long double;
using cld = std::complex<long double>;

// Modal form of the kernel (1/2pi) sum_l I_nu(lambda r<) K_nu(lambda r>) e^{il(theta-theta')}
// with nu = |l + shift| on a polar grid. Sources are represented per panel by
// their Gauss-Legendre interpolants, so the radial integrals are product rules.
class RadialOperator {
 public:
  RadialOperator(const PolarGrid& grid, double lambda, double shift);

  int n_radial() const { return nr_; }
  int n_theta() const { return nt_; }
  int ell(int m) const { return m < nt_ / 2 ? m : m - nt_; }
  bool nyquist(int m) const { return m == nt_ / 2; }
  double nu(int m) const;
  double shift() const { return shift_; }
  double lambda() const { return lambda_; }
  double radius() const { return radius_; }

  // f, u, du: modal arrays laid out as [m * n_radial + j].
  // u = R f on the nodes, du = d/dr of it; ainf[m] is the outgoing amplitude
  // scaled so that u(r) = ainf[m] K_nu(lambda r) / K_nu(lambda R) beyond the grid.
  void apply(const cplx* f, cplx* u, cplx* du, cplx* ainf) const;

  // K_nu(lambda rho) / K_nu(lambda R) and its rho-derivative for every mode.
  void outgoing_table(double rho, double* k, double* dk) const;

 private:
  int table(int m) const;
  int nr_, nt_, p_, ntab_;
  double lambda_, shift_, radius_;
  std::vector<int> panel_start_;
  std::vector<ld> i_, k_, di_, dk_, mi_, mk_, pi_, pk_;
  std::vector<ld> kr_;  // K_nu(lambda R) per table
};

// Conversions between nodal values [j * n_theta + k] and modal arrays [m * n_radial + j].
void to_modal(const PolarGrid& g, const cplx* phys, cplx* modal);
void to_nodal(const PolarGrid& g, const cplx* modal, cplx* phys);

}  // namespace abflux::detail

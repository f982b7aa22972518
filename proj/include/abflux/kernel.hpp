#pragma once

#include "abflux/config.hpp"
#include "abflux/defect.hpp"
#include "abflux/specfun.hpp"

#include <Eigen/Dense>

#include <memory>
#include <stdexcept>
#include <vector>

namespace abflux {

struct SpectralPoint {
  double lambda = 1.0;
  double z() const { return -lambda * lambda; }
};

struct SingularityError : std::domain_error {
  using std::domain_error::domain_error;
};
struct TruncationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct SolverError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Gauss-Legendre nodes and weights on [a, b].
void gauss_legendre(int n, double a, double b, std::vector<double>& x, std::vector<double>& w);

// (1/2pi) K_0(lambda |x - x'|) and its gradient in x.
double free_kernel(const SpectralPoint& sp, const Vec2& x, const Vec2& xp);
Vec2 free_kernel_grad_x(const SpectralPoint& sp, const Vec2& x, const Vec2& xp);

// Friedrichs resolvent kernel of flux n alone (angular series).
cplx single_flux_kernel(const FluxConfig& cfg, int n, const SpectralPoint& sp, const Vec2& x, const Vec2& xp,
                        double tol = 1e-15);
CVec2 single_flux_kernel_grad_x(const FluxConfig& cfg, int n, const SpectralPoint& sp, const Vec2& x,
                                const Vec2& xp, double tol = 1e-15);
FieldSample single_flux_kernel_sample(const FluxConfig& cfg, int n, const SpectralPoint& sp, const Vec2& x,
                                      const Vec2& xp, double tol = 1e-15);

// Coefficients of P_n = c1 . (-i grad + A_n) + c0 (n = 0 uses S_0 and no A).
struct PCoefficients {
  CVec2 c1 = CVec2::Zero();
  cplx c0 = 0.0;
  bool zero() const { return c1.isZero() && c0 == cplx(0.0); }
};
PCoefficients p_coefficients(const FluxConfig& cfg, const PartitionOfUnity& pou, int n, const Vec2& x);

cplx tn_kernel(const FluxConfig& cfg, const PartitionOfUnity& pou, const SpectralPoint& sp, const Vec2& x,
               const Vec2& xp);

// Patched single-flux resolvents sum_n D_n xi_n R_n xi_n D_n^{-1} (no correction).
cplx patched_kernel(const FluxConfig& cfg, const PartitionOfUnity& pou, const SpectralPoint& sp, const Vec2& x,
                    const Vec2& xp);

struct GridOptions {
  int panel_order = 8;
  int angular_nodes = 64;
  int global_angular_nodes = 128;
  double grading_ratio = 0.5;
  int transition_panels = 4;      // panels across the cutoff annulus [r_star/2, r_star]
  double r_min_factor = 1e-6;
  double panel_length = 1.0;      // far-field cap, units of 1/lambda
  double near_panel_factor = 0.5; // near-field cap, units of r_star (or radius)
  double R_max_factor = 12.0;
  double blend_gap = 0.5;         // r_a = r_star + blend_gap (d_min/2 - r_star)
  double blend_width = 1.0;       // r_b = r_a + blend_width r_star
  int blend_panels = 12;          // disc panels across [r_a, r_b]

  GridOptions refined() const;
};

// Polar grid: Gauss-Legendre panels in r, uniform angles offset by half a step.
struct PolarGrid {
  Vec2 center = Vec2::Zero();
  std::vector<double> breaks;
  int order = 8;
  int n_theta = 64;
  std::vector<double> r;
  std::vector<double> wr;

  PolarGrid() = default;
  PolarGrid(Vec2 c, std::vector<double> panel_breaks, int order, int n_theta);

  int n_panels() const { return static_cast<int>(breaks.size()) - 1; }
  int n_radial() const { return static_cast<int>(r.size()); }
  int size() const { return n_radial() * n_theta; }
  double radius() const { return breaks.back(); }
  double theta(int k) const;
  Vec2 node(int j, int k) const;
  double area_weight(int j) const;
};

// Composite of polar grids with the partition weights that split sources and integrals.
struct QuadratureGrid {
  std::vector<PolarGrid> grids;
  std::vector<int> host;    // flux carried by grid g (1..N), 0 for the exterior grid
  std::vector<bool> carries_exterior;
  std::vector<int> offset;
  int total = 0;
  double lambda = 1.0;
  double r_a = 0.0, r_b = 0.0, R_max = 0.0;

  std::vector<Vec2> x;
  std::vector<double> w;       // area weight
  std::vector<double> chi;     // integration partition weight
  std::vector<double> ext_src; // share of xi_0 carried here
  std::vector<double> blend;   // share of a free-space source carried here; sums to 1 over grids
  std::vector<bool> active;

  int grid_of(int i) const;
  // sum chi w f
  cplx integrate(const Eigen::VectorXcd& f) const;
  double integrate(const Eigen::VectorXd& f) const;
  template <typename F>
  Eigen::VectorXcd sample(F&& f) const {
    Eigen::VectorXcd out = Eigen::VectorXcd::Zero(total);
    for (int i = 0; i < total; ++i)
      if (chi[i] > 0.0) out[i] = f(x[i]);
    return out;
  }
};

QuadratureGrid build_grid(const FluxConfig& cfg, const PartitionOfUnity& pou, double lambda,
                          const GridOptions& opt = {});

struct SolveReport {
  int iterations = 0;
  double residual = 0.0;
};

struct NystromOptions {
  double tol = 1e-12;
  int restart = 80;
  int max_iter = 800;
  int dense_limit = 0;  // assemble and factorize when size() <= dense_limit
};

// Discretization of 1 + T_N(-lambda^2) on a QuadratureGrid.
class NystromSystem {
 public:
  NystromSystem(const FluxConfig& cfg, const PartitionOfUnity& pou, const QuadratureGrid& grid,
                const SpectralPoint& sp, const NystromOptions& opt = {});
  ~NystromSystem();
  NystromSystem(NystromSystem&&) noexcept;
  NystromSystem& operator=(NystromSystem&&) noexcept;

  int size() const;
  const QuadratureGrid& grid() const;
  const SpectralPoint& spectral_point() const;

  // y = (1 + T) v; rows outside the active set are the identity.
  Eigen::VectorXcd apply(const Eigen::VectorXcd& v) const;
  Eigen::VectorXcd apply_t(const Eigen::VectorXcd& v) const;
  Eigen::VectorXcd solve(const Eigen::VectorXcd& f, SolveReport* report = nullptr) const;
  Eigen::MatrixXcd solve(const Eigen::MatrixXcd& f, std::vector<SolveReport>* reports = nullptr) const;

  // Patched resolvent Q g at the nodes and at arbitrary points.
  Eigen::VectorXcd patched(const Eigen::VectorXcd& g) const;
  Eigen::VectorXcd patched_at(const Eigen::VectorXcd& g, const std::vector<Vec2>& pts) const;

  Eigen::MatrixXcd dense() const;
  bool factorized() const;
  void factorize();
  double condition_estimate() const;
  double t_norm_estimate(int probes = 4, int power_steps = 6, unsigned seed = 7) const;

  friend Eigen::MatrixXcd friedrichs_kernel_matrix(const FluxConfig& cfg, const PartitionOfUnity& pou,
                                                   const NystromSystem& sys, const std::vector<Vec2>& xs,
                                                   const std::vector<Vec2>& xps);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

NystromSystem build_nystrom(const FluxConfig& cfg, const PartitionOfUnity& pou, const SpectralPoint& sp,
                            const QuadratureGrid& grid, const NystromOptions& opt = {});

// R^F f at the grid nodes for a sampled f.
Eigen::VectorXcd friedrichs_apply(const NystromSystem& sys, const Eigen::VectorXcd& f);

// Kernel of R^F with the Nystrom solve in the second slot.
cplx friedrichs_kernel(const FluxConfig& cfg, const PartitionOfUnity& pou, const NystromSystem& sys, const Vec2& x,
                       const Vec2& xp);
Eigen::MatrixXcd friedrichs_kernel_matrix(const FluxConfig& cfg, const PartitionOfUnity& pou,
                                          const NystromSystem& sys, const std::vector<Vec2>& xs,
                                          const std::vector<Vec2>& xps);

}  // namespace abflux

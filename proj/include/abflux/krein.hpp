#pragma once

#include "abflux/kernel.hpp"

#include <Eigen/Dense>

#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

namespace abflux {

// Hermitian 2N x 2N matrix B, or the Friedrichs token (B = infinity).
struct ExtensionParams {
  enum class Mode { Hermitian, Friedrichs };
  Mode mode = Mode::Friedrichs;
  Eigen::MatrixXcd B;

  static ExtensionParams friedrichs() { return {}; }
  // Throws ConfigError unless B is square and Hermitian within tol.
  static ExtensionParams hermitian(Eigen::MatrixXcd B, double tol = 1e-14);
  bool is_friedrichs() const { return mode == Mode::Friedrichs; }
};

double hermiticity_defect(const Eigen::MatrixXcd& M);

struct KreinOptions {
  GridOptions grid;
  NystromOptions nystrom;
  double lambda0 = 0.0;  // 0 selects lambda0_factor / r_star
  double lambda0_factor = 20.0;
};

double default_lambda0(const FluxConfig& cfg, const KreinOptions& opt = {});

// pi lambda^{2 nu} / (2 sin pi alpha) per channel.
Eigen::VectorXd l_diagonal(const FluxConfig& cfg, double lambda);
Eigen::MatrixXd l_matrix(const FluxConfig& cfg, double lambda);

// Everything at one spectral point: grid, Nystrom system, dressed defects u,
// their sources h = (H + lambda^2) u and the solved sources (1 + T)^{-1} h at the nodes.
class DefectSystem {
 public:
  DefectSystem(const FluxConfig& cfg, const PartitionOfUnity& pou, double lambda, const KreinOptions& opt = {});

  double lambda() const { return sys_.spectral_point().lambda; }
  const FluxConfig& config() const { return cfg_; }
  const PartitionOfUnity& partition() const { return pou_; }
  const QuadratureGrid& grid() const { return sys_.grid(); }
  const NystromSystem& nystrom() const { return sys_; }
  const std::vector<ChannelIndex>& chans() const { return chans_; }
  const Eigen::MatrixXcd& u() const { return u_; }
  const Eigen::MatrixXcd& h() const { return h_; }
  const Eigen::MatrixXcd& v() const { return v_; }
  const std::vector<SolveReport>& reports() const { return reports_; }

  // C[m, n] = <u_m | (1 + T)^{-1} h_n>.
  Eigen::MatrixXcd correction() const;
  // Columns g_k = u_k - R^F h_k (the multi-flux defects) at the nodes and at points.
  const Eigen::MatrixXcd& single_layer_nodes() const { return g_; }
  Eigen::MatrixXcd single_layer(const std::vector<Vec2>& pts) const;
  // Quadrature weights chi * w.
  Eigen::VectorXd weights() const;

 private:
  FluxConfig cfg_;
  PartitionOfUnity pou_;
  std::vector<ChannelIndex> chans_;
  NystromSystem sys_;
  Eigen::MatrixXcd u_, h_, v_, g_;
  std::vector<SolveReport> reports_;
};

Eigen::MatrixXcd correction_matrix(const DefectSystem& ds);
Eigen::MatrixXcd correction_matrix(const FluxConfig& cfg, const PartitionOfUnity& pou, const SpectralPoint& sp,
                                   const KreinOptions& opt = {});

// <g_m(w) | g_n(z)> for z = -lambda_z^2, w = -lambda_w^2, integrated on the z grid.
Eigen::MatrixXcd gram_matrix(const DefectSystem& w, const DefectSystem& z);

struct Eigencondition {
  double mu_min = 0.0;
  Eigen::VectorXd mu;          // ascending
  Eigen::MatrixXcd vectors;    // columns match mu
  double asymmetry = 0.0;      // ||M - M^dagger|| before hermitization
};

struct SpectralRoot {
  double E = 0.0;
  double lambda = 0.0;
  int multiplicity = 1;
  double residual = 0.0;       // max |mu| over the merged branches at the root
  Eigen::MatrixXcd charges;    // 2N x multiplicity
  bool at_boundary = false;
};

struct SpectralResult {
  std::vector<SpectralRoot> roots;  // E ascending
  std::vector<std::string> warnings;
  int count() const {
    int c = 0;
    for (const auto& r : roots) c += r.multiplicity;
    return c;
  }
};

struct ScanOptions {
  double lambda_min = 0.05;
  double lambda_max = 5.0;
  int scan_points = 24;
  double tol_root = 1e-10;
  int max_root_iter = 60;
  int workers = 1;  // scan points evaluated concurrently
};

// Lambda-dependent matrices for one configuration. Defect systems are built on demand
// and cached per lambda; the cache is guarded, so concurrent callers are safe.
class KreinModel {
 public:
  KreinModel(FluxConfig cfg, KreinOptions opt = {});

  const FluxConfig& config() const { return cfg_; }
  const PartitionOfUnity& partition() const { return pou_; }
  const KreinOptions& options() const { return opt_; }
  double lambda0() const { return lambda0_; }

  std::shared_ptr<const DefectSystem> system(double lambda) const;
  Eigen::MatrixXcd correction(double lambda) const;
  // Lambda(-lambda^2) = L(lambda) - L(lambda0) + C(lambda) - C(lambda0).
  Eigen::MatrixXcd lambda_matrix(double lambda) const;
  // Theta(B) = B + L(lambda0) + C(lambda0).
  Eigen::MatrixXcd theta(const ExtensionParams& ext) const;
  // B + L(lambda) + C(lambda), equal to Theta + Lambda.
  Eigen::MatrixXcd boundary_matrix(const ExtensionParams& ext, double lambda) const;
  Eigencondition eigencondition(const ExtensionParams& ext, double lambda) const;
  SpectralResult find_eigenvalues(const ExtensionParams& ext, const ScanOptions& scan) const;

  // Unit-norm psi = sum_k q_k g_k at the given points.
  Eigen::VectorXcd eigenvector(double lambda, const Eigen::VectorXcd& q, const std::vector<Vec2>& pts) const;
  double single_layer_norm(double lambda, const Eigen::VectorXcd& q) const;

  // R^(B)(x, x') - R^(F)(x, x') = g(x) [Theta + Lambda]^{-1} g(x')^dagger.
  Eigen::MatrixXcd krein_correction(const ExtensionParams& ext, double lambda, const std::vector<Vec2>& xs,
                                    const std::vector<Vec2>& xps) const;
  Eigen::MatrixXcd resolvent_kernel(const ExtensionParams& ext, double lambda, const std::vector<Vec2>& xs,
                                    const std::vector<Vec2>& xps) const;

 private:
  FluxConfig cfg_;
  PartitionOfUnity pou_;
  KreinOptions opt_;
  double lambda0_;
  mutable std::mutex mu_;
  mutable std::map<double, std::shared_ptr<const DefectSystem>> cache_;
  mutable std::map<double, Eigen::MatrixXcd> corrections_;
};

struct AtEigenvalueError : std::runtime_error {
  double lambda;
  AtEigenvalueError(const std::string& what, double lam) : std::runtime_error(what), lambda(lam) {}
};

// Free-function forms over a model.
Eigen::MatrixXcd lambda_matrix(const KreinModel& model, double lambda);
Eigen::MatrixXcd theta_of_b(const KreinModel& model, const ExtensionParams& ext);
Eigencondition eigencondition(const KreinModel& model, const ExtensionParams& ext, double lambda);
SpectralResult find_eigenvalues(const KreinModel& model, const ExtensionParams& ext, const ScanOptions& scan);
cplx eigenvector_eval(const KreinModel& model, double lambda, const Eigen::VectorXcd& q, const Vec2& x);
cplx krein_resolvent_kernel(const KreinModel& model, const ExtensionParams& ext, double lambda, const Vec2& x,
                            const Vec2& xp);

// ---- quadratic form ----

using TestFunction = std::function<FieldSample(const Vec2&)>;

// a exp(-|x - c|^2 / (2 s^2) + i k.x) prod_n tanh(|x - x_n| / w).
struct GaussianTest {
  Vec2 center = Vec2::Zero();
  double width = 1.0;
  cplx amplitude = 1.0;
  Vec2 wave = Vec2::Zero();
  double w = 0.0;  // 0 selects r_star / 4
};
TestFunction gaussian_test(const FluxConfig& cfg, const GaussianTest& g);

// Regular part of the same psi = phi + sum q u for another lambda or partition.
TestFunction shift_regular_part(const FluxConfig& cfg, const TestFunction& phi, const Eigen::VectorXcd& q,
                                const PartitionOfUnity& from, double lambda_from, const PartitionOfUnity& to,
                                double lambda_to);

struct FormOptions {
  GridOptions grid;
  double grid_lambda = 0.0;  // 0 selects min(lambda, 1)
  double vanishing_tol = 1e-6;
};

struct FormTerms {
  double friedrichs = 0.0;   // Q^F[phi]
  double psi_norm_sq = 0.0;
  double phi_norm_sq = 0.0;
  double cross = 0.0;        // 2 Re sum q (2<Pi phi|zeta1 G> + <phi|zeta2 G>)
  double charge = 0.0;       // q^dagger (B + L + Xi) q
  double total = 0.0;
};

// Xi_n block, 2N x 2N block diagonal.
Eigen::MatrixXcd xi_matrix(const FluxConfig& cfg, const PartitionOfUnity& pou, double lambda,
                           const FormOptions& opt = {});

FormTerms quad_form_terms(const FluxConfig& cfg, const PartitionOfUnity& pou, const ExtensionParams& ext,
                          double lambda, const TestFunction& phi, const Eigen::VectorXcd& q,
                          const FormOptions& opt = {});
double quad_form_eval(const FluxConfig& cfg, const PartitionOfUnity& pou, const ExtensionParams& ext, double lambda,
                      const TestFunction& phi, const Eigen::VectorXcd& q, const FormOptions& opt = {});

}  // namespace abflux

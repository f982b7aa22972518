#include "abflux/krein.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <future>
#include <map>
#include <numbers>

namespace abflux {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr std::size_t kSystemCache = 4;

NystromSystem make_system(const FluxConfig& cfg, const PartitionOfUnity& pou, double lambda,
                          const KreinOptions& opt) {
  if (!(lambda > 0.0)) throw DomainError("krein: lambda must be positive");
  return NystromSystem(cfg, pou, build_grid(cfg, pou, lambda, opt.grid), SpectralPoint{lambda}, opt.nystrom);
}

bool sampled(const QuadratureGrid& g, int i) { return g.chi[i] > 0.0 || g.active[i]; }

}  // namespace

ExtensionParams ExtensionParams::hermitian(Eigen::MatrixXcd B, double tol) {
  if (B.rows() != B.cols()) throw ConfigError("extension matrix B must be square");
  if (!B.allFinite()) throw ConfigError("extension matrix B has non-finite entries");
  for (Eigen::Index i = 0; i < B.rows(); ++i)
    for (Eigen::Index j = 0; j < B.cols(); ++j)
      if (std::abs(B(i, j) - std::conj(B(j, i))) > tol)
        throw ConfigError("extension matrix B is not Hermitian at (" + std::to_string(i) + "," + std::to_string(j) +
                          ")");
  ExtensionParams e;
  e.mode = Mode::Hermitian;
  e.B = std::move(B);
  return e;
}

double hermiticity_defect(const Eigen::MatrixXcd& M) { return (M - M.adjoint()).norm(); }

double default_lambda0(const FluxConfig& cfg, const KreinOptions& opt) {
  return opt.lambda0 > 0.0 ? opt.lambda0 : opt.lambda0_factor / cfg.r_star;
}

Eigen::VectorXd l_diagonal(const FluxConfig& cfg, double lambda) {
  if (!(lambda > 0.0)) throw DomainError("l_matrix: lambda must be positive");
  const auto ch = channels(cfg);
  Eigen::VectorXd d(ch.size());
  for (std::size_t k = 0; k < ch.size(); ++k)
    d[k] = kPi * std::pow(lambda, 2.0 * ch[k].nu) / (2.0 * std::sin(kPi * cfg.alphas[ch[k].n - 1]));
  return d;
}

Eigen::MatrixXd l_matrix(const FluxConfig& cfg, double lambda) { return l_diagonal(cfg, lambda).asDiagonal(); }

DefectSystem::DefectSystem(const FluxConfig& cfg, const PartitionOfUnity& pou, double lambda, const KreinOptions& opt)
    : cfg_(cfg), pou_(pou), chans_(channels(cfg)), sys_(make_system(cfg, pou, lambda, opt)) {
  const QuadratureGrid& g = sys_.grid();
  const int K = static_cast<int>(chans_.size());
  u_ = Eigen::MatrixXcd::Zero(g.total, K);
  h_ = Eigen::MatrixXcd::Zero(g.total, K);
  for (int i = 0; i < g.total; ++i) {
    if (!sampled(g, i)) continue;
    for (int k = 0; k < K; ++k) {
      if (pou_.value(chans_[k].n, g.x[i]) == 0.0 && pou_.eval(chans_[k].n, g.x[i]).grad.isZero()) continue;
      u_(i, k) = dressed_defect_eval(cfg_, pou_, chans_[k], lambda, g.x[i]);
      h_(i, k) = dressed_source_eval(cfg_, pou_, chans_[k], lambda, g.x[i]);
    }
  }
  v_ = sys_.solve(h_, &reports_);
  g_ = u_;
  for (int k = 0; k < K; ++k) g_.col(k) -= sys_.patched(v_.col(k));
}

Eigen::VectorXd DefectSystem::weights() const {
  const QuadratureGrid& g = grid();
  Eigen::VectorXd w(g.total);
  for (int i = 0; i < g.total; ++i) w[i] = g.chi[i] > 0.0 ? g.chi[i] * g.w[i] : 0.0;
  return w;
}

Eigen::MatrixXcd DefectSystem::correction() const { return u_.adjoint() * weights().asDiagonal() * v_; }

Eigen::MatrixXcd DefectSystem::single_layer(const std::vector<Vec2>& pts) const {
  const int K = static_cast<int>(chans_.size());
  Eigen::MatrixXcd g(pts.size(), K);
  for (std::size_t p = 0; p < pts.size(); ++p)
    for (int k = 0; k < K; ++k) g(p, k) = dressed_defect_eval(cfg_, pou_, chans_[k], lambda(), pts[p]);
  for (int k = 0; k < K; ++k) g.col(k) -= sys_.patched_at(v_.col(k), pts);
  return g;
}

Eigen::MatrixXcd correction_matrix(const DefectSystem& ds) { return ds.correction(); }

Eigen::MatrixXcd correction_matrix(const FluxConfig& cfg, const PartitionOfUnity& pou, const SpectralPoint& sp,
                                   const KreinOptions& opt) {
  return DefectSystem(cfg, pou, sp.lambda, opt).correction();
}

Eigen::MatrixXcd gram_matrix(const DefectSystem& w, const DefectSystem& z) {
  const QuadratureGrid& g = z.grid();
  std::vector<int> idx;
  std::vector<Vec2> pts;
  for (int i = 0; i < g.total; ++i)
    if (g.chi[i] > 0.0) {
      idx.push_back(i);
      pts.push_back(g.x[i]);
    }
  const Eigen::MatrixXcd& gz_all = z.single_layer_nodes();
  const Eigen::MatrixXcd gw = w.single_layer(pts);
  Eigen::MatrixXcd gz(idx.size(), gz_all.cols());
  Eigen::VectorXd wt(idx.size());
  for (std::size_t p = 0; p < idx.size(); ++p) {
    gz.row(p) = gz_all.row(idx[p]);
    wt[p] = g.chi[idx[p]] * g.w[idx[p]];
  }
  return gw.adjoint() * wt.asDiagonal() * gz;
}

KreinModel::KreinModel(FluxConfig cfg, KreinOptions opt)
    : cfg_(std::move(cfg)), pou_(cfg_), opt_(std::move(opt)), lambda0_(default_lambda0(cfg_, opt_)) {}

std::shared_ptr<const DefectSystem> KreinModel::system(double lambda) const {
  {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = cache_.find(lambda);
    if (it != cache_.end()) return it->second;
  }
  auto ds = std::make_shared<const DefectSystem>(cfg_, pou_, lambda, opt_);
  std::lock_guard<std::mutex> lock(mu_);
  if (cache_.size() >= kSystemCache) {
    // Keep lambda0 resident; drop the entry farthest from the new lambda.
    auto victim = cache_.end();
    double far = -1.0;
    for (auto it = cache_.begin(); it != cache_.end(); ++it) {
      if (it->first == lambda0_) continue;
      const double d = std::fabs(std::log(it->first / lambda));
      if (d > far) {
        far = d;
        victim = it;
      }
    }
    if (victim != cache_.end()) cache_.erase(victim);
  }
  cache_.emplace(lambda, ds);
  return ds;
}

Eigen::MatrixXcd KreinModel::correction(double lambda) const {
  {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = corrections_.find(lambda);
    if (it != corrections_.end()) return it->second;
  }
  const Eigen::MatrixXcd c = system(lambda)->correction();
  std::lock_guard<std::mutex> lock(mu_);
  corrections_.emplace(lambda, c);
  return c;
}

Eigen::MatrixXcd KreinModel::lambda_matrix(double lambda) const {
  const Eigen::MatrixXcd dl = (l_diagonal(cfg_, lambda) - l_diagonal(cfg_, lambda0_)).cast<cplx>().asDiagonal();
  return dl + correction(lambda) - correction(lambda0_);
}

Eigen::MatrixXcd KreinModel::theta(const ExtensionParams& ext) const {
  if (ext.is_friedrichs()) throw DomainError("theta: the Friedrichs extension has no finite matrix");
  if (ext.B.rows() != 2 * cfg_.size()) throw ConfigError("theta: B must be 2N x 2N");
  return ext.B + l_matrix(cfg_, lambda0_).cast<cplx>() + correction(lambda0_);
}

Eigen::MatrixXcd KreinModel::boundary_matrix(const ExtensionParams& ext, double lambda) const {
  if (ext.is_friedrichs()) throw DomainError("eigencondition: the Friedrichs extension has no finite matrix");
  if (ext.B.rows() != 2 * cfg_.size()) throw ConfigError("eigencondition: B must be 2N x 2N");
  return ext.B + l_matrix(cfg_, lambda).cast<cplx>() + correction(lambda);
}

Eigencondition KreinModel::eigencondition(const ExtensionParams& ext, double lambda) const {
  const Eigen::MatrixXcd M = boundary_matrix(ext, lambda);
  Eigencondition out;
  out.asymmetry = hermiticity_defect(M);
  const Eigen::MatrixXcd H = 0.5 * (M + M.adjoint());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(H);
  out.mu = es.eigenvalues();
  out.vectors = es.eigenvectors();
  out.mu_min = out.mu[0];
  return out;
}

SpectralResult KreinModel::find_eigenvalues(const ExtensionParams& ext, const ScanOptions& scan) const {
  SpectralResult res;
  if (ext.is_friedrichs()) return res;
  if (!(scan.lambda_min > 0.0 && scan.lambda_max > scan.lambda_min))
    throw ConfigError("spectrum: need 0 < lambda_min < lambda_max");
  if (scan.scan_points < 2) throw ConfigError("spectrum: need at least two scan points");
  const int K = 2 * cfg_.size();
  const int S = scan.scan_points;
  const double ratio = std::pow(scan.lambda_max / scan.lambda_min, 1.0 / (S - 1));
  std::vector<double> lam(S);
  std::vector<Eigen::VectorXd> mu(S);
  for (int j = 0; j < S; ++j) lam[j] = j == S - 1 ? scan.lambda_max : scan.lambda_min * std::pow(ratio, j);
  const int W = std::max(1, scan.workers);
  for (int j0 = 0; j0 < S; j0 += W) {
    std::vector<std::future<Eigen::VectorXd>> batch;
    for (int j = j0; j < std::min(S, j0 + W); ++j)
      batch.push_back(std::async(W > 1 ? std::launch::async : std::launch::deferred,
                                 [&, j] { return eigencondition(ext, lam[j]).mu; }));
    for (int j = j0; j < std::min(S, j0 + W); ++j) mu[j] = batch[j - j0].get();
  }

  std::map<double, Eigen::VectorXd> seen;
  for (int j = 0; j < S; ++j) seen.emplace(lam[j], mu[j]);
  auto mu_at = [&](double l) -> const Eigen::VectorXd& {
    auto it = seen.find(l);
    if (it == seen.end()) it = seen.emplace(l, eigencondition(ext, l).mu).first;
    return it->second;
  };

  struct Found {
    double lambda, mu;
    int branch;
    bool boundary;
    double at;  // where the charges are read
  };
  std::vector<Found> found;
  for (int k = 0; k < K; ++k) {
    for (int j = 0; j + 1 < S; ++j) {
      double a = lam[j], b = lam[j + 1];
      double fa = mu[j][k], fb = mu[j + 1][k];
      if (fa == 0.0) {
        found.push_back({a, 0.0, k, j == 0, a});
        continue;
      }
      if (!(fa < 0.0 && fb > 0.0) && !(fa > 0.0 && fb < 0.0)) continue;
      if (scan.max_root_iter == 0) {
        // Unrefined: interpolate the bracket, take charges at its nearer end.
        const double x = (std::log(a) * fb - std::log(b) * fa) / (fb - fa);
        const bool near_a = std::fabs(fa) < std::fabs(fb);
        found.push_back({std::exp(x), std::min(std::fabs(fa), std::fabs(fb)), k, false, near_a ? a : b});
        continue;
      }
      // Tighten the bracket with evaluations already made for other branches.
      bool done = false;
      double x = std::log(a), fx = fa;
      for (const auto& [l, m] : seen) {
        if (!(l > a && l < b)) continue;
        const double f = m[k];
        if (std::fabs(f) < scan.tol_root && (!done || std::fabs(f) < std::fabs(fx))) {
          done = true;
          x = std::log(l);
          fx = f;
        }
        if ((f < 0.0) == (fa < 0.0)) {
          if (l > a) a = l, fa = f;
        } else if (l < b) {
          b = l, fb = f;
        }
      }
      if (done) {
        found.push_back({std::exp(x), fx, k, false, std::exp(x)});
        continue;
      }
      // Illinois regula falsi in log lambda.
      double la = std::log(a), lb = std::log(b);
      int side = 0;
      for (int it = 0; it < scan.max_root_iter; ++it) {
        x = (la * fb - lb * fa) / (fb - fa);
        fx = mu_at(std::exp(x))[k];
        if (std::fabs(fx) < scan.tol_root || (lb - la) < 1e-14) break;
        if ((fx < 0.0) == (fa < 0.0)) {
          la = x;
          fa = fx;
          if (side == -1) fb *= 0.5;
          side = -1;
        } else {
          lb = x;
          fb = fx;
          if (side == 1) fa *= 0.5;
          side = 1;
        }
      }
      if (std::fabs(fx) >= scan.tol_root)
        res.warnings.push_back("branch " + std::to_string(k) + ": root tolerance not reached (|mu| = " +
                               std::to_string(std::fabs(fx)) + ")");
      found.push_back({std::exp(x), fx, k, false, std::exp(x)});
    }
    if (std::fabs(mu[S - 1][k]) < scan.tol_root) found.push_back({lam[S - 1], mu[S - 1][k], k, true, lam[S - 1]});
  }

  // Merge roots closer than one scan step.
  std::sort(found.begin(), found.end(), [](const Found& p, const Found& q) { return p.lambda > q.lambda; });
  std::vector<std::vector<Found>> groups;
  for (const auto& f : found) {
    if (!groups.empty() && groups.back().front().lambda / f.lambda < ratio) {
      groups.back().push_back(f);
      continue;
    }
    groups.push_back({f});
  }
  for (const auto& grp : groups) {
    SpectralRoot r;
    r.lambda = grp.front().lambda;
    r.E = -r.lambda * r.lambda;
    r.multiplicity = static_cast<int>(grp.size());
    for (const auto& f : grp) {
      r.residual = std::max(r.residual, std::fabs(f.mu));
      r.at_boundary = r.at_boundary || f.boundary;
    }
    const Eigencondition ec = eigencondition(ext, grp.front().at);
    std::vector<int> order(K);
    for (int k = 0; k < K; ++k) order[k] = k;
    std::sort(order.begin(), order.end(),
              [&](int p, int q) { return std::fabs(ec.mu[p]) < std::fabs(ec.mu[q]); });
    r.charges.resize(K, r.multiplicity);
    for (int m = 0; m < r.multiplicity; ++m) r.charges.col(m) = ec.vectors.col(order[m]);
    if (r.at_boundary) res.warnings.push_back("root at the scan boundary, lambda = " + std::to_string(r.lambda));
    res.roots.push_back(std::move(r));
  }
  if (res.count() > K) res.warnings.push_back("more roots than channels; scan resolution too coarse");
  return res;
}

double KreinModel::single_layer_norm(double lambda, const Eigen::VectorXcd& q) const {
  const auto ds = system(lambda);
  const Eigen::VectorXcd g = ds->single_layer_nodes() * q;
  const Eigen::VectorXd w = ds->weights();
  double s = 0.0;
  for (Eigen::Index i = 0; i < g.size(); ++i) s += w[i] * std::norm(g[i]);
  return std::sqrt(s);
}

Eigen::VectorXcd KreinModel::eigenvector(double lambda, const Eigen::VectorXcd& q,
                                         const std::vector<Vec2>& pts) const {
  const double n = single_layer_norm(lambda, q);
  if (!(n > 0.0)) throw DomainError("eigenvector: zero charge");
  return system(lambda)->single_layer(pts) * q / n;
}

Eigen::MatrixXcd KreinModel::krein_correction(const ExtensionParams& ext, double lambda,
                                              const std::vector<Vec2>& xs, const std::vector<Vec2>& xps) const {
  if (ext.is_friedrichs()) return Eigen::MatrixXcd::Zero(xs.size(), xps.size());
  const Eigen::MatrixXcd B = boundary_matrix(ext, lambda);
  const Eigen::MatrixXcd M = 0.5 * (B + B.adjoint());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(M, Eigen::EigenvaluesOnly);
  const double scale = std::max(ext.B.norm(), l_diagonal(cfg_, lambda).norm());
  if (es.eigenvalues().cwiseAbs().minCoeff() <= 1e-8 * scale)
    throw AtEigenvalueError("resolvent: -lambda^2 is an eigenvalue (lambda = " + std::to_string(lambda) + ")",
                            lambda);
  const auto ds = system(lambda);
  const Eigen::MatrixXcd gx = ds->single_layer(xs);
  const Eigen::MatrixXcd gxp = ds->single_layer(xps);
  return gx * M.partialPivLu().solve(gxp.adjoint());
}

Eigen::MatrixXcd KreinModel::resolvent_kernel(const ExtensionParams& ext, double lambda,
                                              const std::vector<Vec2>& xs, const std::vector<Vec2>& xps) const {
  const auto ds = system(lambda);
  Eigen::MatrixXcd K = friedrichs_kernel_matrix(cfg_, pou_, ds->nystrom(), xs, xps);
  if (!ext.is_friedrichs()) K += krein_correction(ext, lambda, xs, xps);
  return K;
}

Eigen::MatrixXcd lambda_matrix(const KreinModel& model, double lambda) { return model.lambda_matrix(lambda); }

Eigen::MatrixXcd theta_of_b(const KreinModel& model, const ExtensionParams& ext) { return model.theta(ext); }

Eigencondition eigencondition(const KreinModel& model, const ExtensionParams& ext, double lambda) {
  return model.eigencondition(ext, lambda);
}

SpectralResult find_eigenvalues(const KreinModel& model, const ExtensionParams& ext, const ScanOptions& scan) {
  return model.find_eigenvalues(ext, scan);
}

cplx eigenvector_eval(const KreinModel& model, double lambda, const Eigen::VectorXcd& q, const Vec2& x) {
  return model.eigenvector(lambda, q, {x})[0];
}

cplx krein_resolvent_kernel(const KreinModel& model, const ExtensionParams& ext, double lambda, const Vec2& x,
                            const Vec2& xp) {
  return model.resolvent_kernel(ext, lambda, {x}, {xp})(0, 0);
}

}  // namespace abflux

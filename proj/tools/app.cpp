#include "app.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <ostream>
#include <random>
#include <set>
#include <sstream>

namespace abflux::app {

using nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& msg) { throw ConfigError(path + ": " + msg); }

void allow_keys(const json& obj, const std::string& path, std::initializer_list<const char*> keys) {
  if (!obj.is_object()) fail(path, "expected an object");
  const std::set<std::string> ok(keys.begin(), keys.end());
  for (auto it = obj.begin(); it != obj.end(); ++it)
    if (!ok.count(it.key())) fail(path.empty() ? it.key() : path + "." + it.key(), "unknown field");
}

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

double get_number(const json& v, const std::string& path) {
  if (!v.is_number()) fail(path, "expected a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) fail(path, "not finite");
  return d;
}

int get_int(const json& v, const std::string& path, int lo) {
  if (!v.is_number_integer()) fail(path, "expected an integer");
  const long long i = v.get<long long>();
  if (i < lo || i > 1000000) fail(path, "out of range");
  return static_cast<int>(i);
}

double get_positive(const json& v, const std::string& path) {
  const double d = get_number(v, path);
  if (!(d > 0.0)) fail(path, "must be positive");
  return d;
}

template <typename F>
void opt_field(const json& obj, const std::string& path, const char* key, F&& f) {
  if (obj.contains(key)) f(obj.at(key), join(path, key));
}

Vec2 get_point(const json& v, const std::string& path) {
  if (!v.is_array() || v.size() != 2) fail(path, "expected [x, y]");
  return Vec2(get_number(v[0], path + "[0]"), get_number(v[1], path + "[1]"));
}

cplx get_complex(const json& v, const std::string& path) {
  if (v.is_number()) return get_number(v, path);
  if (!v.is_array() || v.size() != 2) fail(path, "expected [re, im]");
  return cplx(get_number(v[0], path + "[0]"), get_number(v[1], path + "[1]"));
}

void parse_fluxes(const json& root, RunConfig& rc, double r_star_factor) {
  if (!root.contains("fluxes")) fail("fluxes", "missing");
  const json& fl = root.at("fluxes");
  if (!fl.is_array() || fl.empty()) fail("fluxes", "expected a non-empty array");
  std::vector<Vec2> pos;
  std::vector<double> alpha;
  for (std::size_t i = 0; i < fl.size(); ++i) {
    const std::string p = "fluxes[" + std::to_string(i) + "]";
    allow_keys(fl[i], p, {"position", "alpha"});
    if (!fl[i].contains("position")) fail(p + ".position", "missing");
    if (!fl[i].contains("alpha")) fail(p + ".alpha", "missing");
    pos.push_back(get_point(fl[i].at("position"), p + ".position"));
    const double a = get_number(fl[i].at("alpha"), p + ".alpha");
    try {
      reduce_flux(a);
    } catch (const ConfigError& e) {
      fail(p + ".alpha", e.what());
    }
    alpha.push_back(a);
  }
  for (std::size_t i = 0; i < pos.size(); ++i)
    for (std::size_t j = 0; j < i; ++j)
      if ((pos[i] - pos[j]).norm() == 0.0)
        fail("fluxes[" + std::to_string(i) + "].position", "coincides with fluxes[" + std::to_string(j) + "]");
  try {
    rc.flux = FluxConfig::make(std::move(pos), std::move(alpha), r_star_factor);
  } catch (const ConfigError& e) {
    fail("fluxes", e.what());
  }
}

void parse_extension(const json& root, RunConfig& rc) {
  if (!root.contains("extension")) fail("extension", "missing");
  const json& ex = root.at("extension");
  if (!ex.is_object() || !ex.contains("type") || !ex.at("type").is_string()) fail("extension.type", "missing");
  const std::string type = ex.at("type").get<std::string>();
  if (type == "friedrichs") {
    allow_keys(ex, "extension", {"type"});
    rc.ext = ExtensionParams::friedrichs();
    return;
  }
  if (type != "hermitian") fail("extension.type", "expected \"hermitian\" or \"friedrichs\"");
  allow_keys(ex, "extension", {"type", "B"});
  if (!ex.contains("B")) fail("extension.B", "missing");
  const json& b = ex.at("B");
  const int K = 2 * rc.flux.size();
  if (!b.is_array() || static_cast<int>(b.size()) != K) fail("extension.B", "expected " + std::to_string(K) + " rows");
  Eigen::MatrixXcd B(K, K);
  for (int i = 0; i < K; ++i) {
    const std::string pi = "extension.B[" + std::to_string(i) + "]";
    if (!b[i].is_array() || static_cast<int>(b[i].size()) != K) fail(pi, "expected " + std::to_string(K) + " entries");
    for (int j = 0; j < K; ++j) B(i, j) = get_complex(b[i][j], pi + "[" + std::to_string(j) + "]");
  }
  const double scale = std::max(1.0, B.cwiseAbs().maxCoeff());
  for (int i = 0; i < K; ++i)
    for (int j = 0; j <= i; ++j)
      if (std::abs(B(i, j) - std::conj(B(j, i))) > 1e-14 * scale)
        fail("extension.B[" + std::to_string(j) + "][" + std::to_string(i) + "]",
             "not the conjugate of B[" + std::to_string(i) + "][" + std::to_string(j) + "]");
  rc.ext = ExtensionParams::hermitian(B, 1e-14 * scale);
}

void parse_solver(const json& root, RunConfig& rc) {
  if (!root.contains("solver")) return;
  const json& s = root.at("solver");
  allow_keys(s, "solver",
             {"lambda_min", "lambda_max", "scan_points", "tol_root", "max_root_iter", "lambda0", "lambda0_factor"});
  opt_field(s, "solver", "lambda_min", [&](const json& v, const std::string& p) { rc.scan.lambda_min = get_positive(v, p); });
  opt_field(s, "solver", "lambda_max", [&](const json& v, const std::string& p) { rc.scan.lambda_max = get_positive(v, p); });
  opt_field(s, "solver", "scan_points", [&](const json& v, const std::string& p) { rc.scan.scan_points = get_int(v, p, 2); });
  opt_field(s, "solver", "tol_root", [&](const json& v, const std::string& p) { rc.scan.tol_root = get_positive(v, p); });
  opt_field(s, "solver", "max_root_iter", [&](const json& v, const std::string& p) { rc.scan.max_root_iter = get_int(v, p, 0); });
  opt_field(s, "solver", "lambda0", [&](const json& v, const std::string& p) { rc.krein.lambda0 = get_positive(v, p); });
  opt_field(s, "solver", "lambda0_factor",
            [&](const json& v, const std::string& p) { rc.krein.lambda0_factor = get_positive(v, p); });
  if (!(rc.scan.lambda_min < rc.scan.lambda_max)) fail("solver.lambda_max", "must exceed solver.lambda_min");
}

double parse_grid(const json& root, RunConfig& rc) {
  double r_star_factor = 0.45;
  if (!root.contains("grid")) return r_star_factor;
  const json& g = root.at("grid");
  allow_keys(g, "grid", {"radial_nodes", "angular_nodes", "grading_ratio", "r_star_factor", "R_max_factor"});
  GridOptions& go = rc.krein.grid;
  opt_field(g, "grid", "radial_nodes", [&](const json& v, const std::string& p) { go.panel_order = get_int(v, p, 2); });
  opt_field(g, "grid", "angular_nodes", [&](const json& v, const std::string& p) {
    go.angular_nodes = get_int(v, p, 4);
    go.global_angular_nodes = 2 * go.angular_nodes;
  });
  opt_field(g, "grid", "grading_ratio", [&](const json& v, const std::string& p) {
    go.grading_ratio = get_positive(v, p);
    if (go.grading_ratio >= 1.0) fail(p, "must lie in (0, 1)");
  });
  opt_field(g, "grid", "r_star_factor", [&](const json& v, const std::string& p) {
    r_star_factor = get_positive(v, p);
    if (r_star_factor >= 0.5) fail(p, "must lie in (0, 0.5)");
  });
  opt_field(g, "grid", "R_max_factor", [&](const json& v, const std::string& p) { go.R_max_factor = get_positive(v, p); });
  return r_star_factor;
}

void parse_output(const json& root, RunConfig& rc) {
  if (!root.contains("output")) return;
  const json& o = root.at("output");
  allow_keys(o, "output", {"format", "path"});
  opt_field(o, "output", "format", [&](const json& v, const std::string& p) {
    if (!v.is_string()) fail(p, "expected a string");
    rc.format = v.get<std::string>();
    if (rc.format != "csv" && rc.format != "json") fail(p, "expected \"csv\" or \"json\"");
  });
  opt_field(o, "output", "path", [&](const json& v, const std::string& p) {
    if (!v.is_string()) fail(p, "expected a string");
    rc.out_path = v.get<std::string>();
  });
}

void parse_field(const json& root, RunConfig& rc) {
  if (!root.contains("field")) return;
  const json& f = root.at("field");
  allow_keys(f, "field", {"what", "index", "lambda", "source", "flux", "ell", "window", "exclusion"});
  FieldRequest& fr = rc.field;
  opt_field(f, "field", "what", [&](const json& v, const std::string& p) {
    if (!v.is_string()) fail(p, "expected a string");
    fr.what = v.get<std::string>();
    if (fr.what != "eigenvector" && fr.what != "resolvent" && fr.what != "defect")
      fail(p, "expected eigenvector, resolvent or defect");
  });
  opt_field(f, "field", "index", [&](const json& v, const std::string& p) { fr.index = get_int(v, p, 0); });
  opt_field(f, "field", "lambda", [&](const json& v, const std::string& p) { fr.lambda = get_positive(v, p); });
  opt_field(f, "field", "source", [&](const json& v, const std::string& p) { fr.source = get_point(v, p); });
  opt_field(f, "field", "flux", [&](const json& v, const std::string& p) {
    fr.flux = get_int(v, p, 1);
    if (fr.flux > rc.flux.size()) fail(p, "no such flux");
  });
  opt_field(f, "field", "ell", [&](const json& v, const std::string& p) {
    if (!v.is_number_integer() || (v.get<int>() != 0 && v.get<int>() != -1)) fail(p, "expected 0 or -1");
    fr.ell = v.get<int>();
  });
  opt_field(f, "field", "exclusion", [&](const json& v, const std::string& p) { fr.exclusion = get_positive(v, p); });
  opt_field(f, "field", "window", [&](const json& w, const std::string& p) {
    allow_keys(w, p, {"xmin", "xmax", "ymin", "ymax", "nx", "ny"});
    opt_field(w, p, "xmin", [&](const json& v, const std::string& q) { fr.xmin = get_number(v, q); });
    opt_field(w, p, "xmax", [&](const json& v, const std::string& q) { fr.xmax = get_number(v, q); });
    opt_field(w, p, "ymin", [&](const json& v, const std::string& q) { fr.ymin = get_number(v, q); });
    opt_field(w, p, "ymax", [&](const json& v, const std::string& q) { fr.ymax = get_number(v, q); });
    opt_field(w, p, "nx", [&](const json& v, const std::string& q) { fr.nx = get_int(v, q, 2); });
    opt_field(w, p, "ny", [&](const json& v, const std::string& q) { fr.ny = get_int(v, q, 2); });
    if (!(fr.xmin < fr.xmax)) fail(p + ".xmax", "must exceed xmin");
    if (!(fr.ymin < fr.ymax)) fail(p + ".ymax", "must exceed ymin");
  });
}

// Largest component made real and positive.
Eigen::VectorXcd fix_phase(const Eigen::VectorXcd& q) {
  Eigen::Index k = 0;
  double best = -1.0;
  for (Eigen::Index i = 0; i < q.size(); ++i)
    if (std::abs(q[i]) > best * (1.0 + 1e-12)) {
      best = std::abs(q[i]);
      k = i;
    }
  if (!(best > 0.0)) return q;
  return q * (std::abs(q[k]) / q[k]);
}

struct SamplePoints {
  std::vector<Vec2> pts;
  double cell = 0.0;
};

SamplePoints window_points(const FieldRequest& fr, const std::vector<Vec2>& avoid) {
  SamplePoints sp;
  const double dx = (fr.xmax - fr.xmin) / (fr.nx - 1), dy = (fr.ymax - fr.ymin) / (fr.ny - 1);
  sp.cell = dx * dy;
  for (int j = 0; j < fr.ny; ++j)
    for (int i = 0; i < fr.nx; ++i) {
      const Vec2 x(fr.xmin + i * dx, fr.ymin + j * dy);
      bool keep = true;
      for (const Vec2& c : avoid)
        if ((x - c).norm() < fr.exclusion) keep = false;
      if (keep) sp.pts.push_back(x);
    }
  return sp;
}

void write_field(const RunConfig& rc, const std::vector<Vec2>& pts, const Eigen::VectorXcd& v, std::ostream& out) {
  if (rc.format == "json") {
    out << "{\"what\": \"" << rc.field.what << "\", \"points\": [";
    for (std::size_t i = 0; i < pts.size(); ++i)
      out << (i ? ", " : "") << "[" << num(pts[i].x()) << ", " << num(pts[i].y()) << ", " << num(v[i].real()) << ", "
          << num(v[i].imag()) << "]";
    out << "]}\n";
    return;
  }
  out << "x,y,re,im\n";
  for (std::size_t i = 0; i < pts.size(); ++i)
    out << num(pts[i].x()) << "," << num(pts[i].y()) << "," << num(v[i].real()) << "," << num(v[i].imag()) << "\n";
}

struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace

std::string num(double v) {
  if (v == 0.0) v = 0.0;  // drop the sign of zero
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

RunConfig parse_config(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("<root>: invalid JSON: ") + e.what());
  }
  allow_keys(root, "", {"fluxes", "extension", "solver", "grid", "output", "field"});
  RunConfig rc;
  const double factor = parse_grid(root, rc);
  parse_fluxes(root, rc, factor);
  parse_extension(root, rc);
  parse_solver(root, rc);
  parse_output(root, rc);
  parse_field(root, rc);
  return rc;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("--config: cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

int cmd_validate(const RunConfig& rc, std::ostream& out) {
  const FluxConfig& c = rc.flux;
  out << "fluxes " << c.size() << "\n";
  for (int n = 0; n < c.size(); ++n)
    out << "flux " << n + 1 << " position " << num(c.positions[n].x()) << " " << num(c.positions[n].y())
        << " alpha_raw " << num(c.alphas_raw[n]) << " winding " << c.winding[n] << " alpha " << num(c.alphas[n])
        << "\n";
  out << "r_star " << num(c.r_star) << "\n";
  const PartitionOfUnity pou(c);
  const QuadratureGrid g = build_grid(c, pou, 1.0, rc.krein.grid);
  out << "grid lambda 1 patches " << g.grids.size() << " nodes " << g.total << " R_max " << num(g.R_max) << "\n";
  out << "lambda0 " << num(default_lambda0(c, rc.krein)) << "\n";
  if (rc.ext.is_friedrichs()) {
    out << "extension friedrichs\n";
  } else {
    out << "extension hermitian\n";
    out << "hermiticity_residual " << num(hermiticity_defect(rc.ext.B)) << "\n";
  }
  return kOk;
}

int cmd_spectrum(const RunConfig& rc, std::ostream& out) {
  SpectralResult res;
  if (!rc.ext.is_friedrichs()) {
    KreinModel model(rc.flux, rc.krein);
    res = model.find_eigenvalues(rc.ext, rc.scan);
  }
  const int K = 2 * rc.flux.size();
  if (rc.format == "json") {
    out << "{\"roots\": [";
    for (std::size_t r = 0; r < res.roots.size(); ++r) {
      const SpectralRoot& s = res.roots[r];
      out << (r ? ", " : "") << "{\"E\": " << num(s.E) << ", \"lambda\": " << num(s.lambda)
          << ", \"multiplicity\": " << s.multiplicity << ", \"residual\": " << num(s.residual) << ", \"q\": [";
      for (int m = 0; m < s.charges.cols(); ++m) {
        const Eigen::VectorXcd q = fix_phase(s.charges.col(m));
        out << (m ? ", " : "") << "[";
        for (int k = 0; k < K; ++k) out << (k ? ", " : "") << "[" << num(q[k].real()) << ", " << num(q[k].imag()) << "]";
        out << "]";
      }
      out << "]}";
    }
    out << "], \"warnings\": [";
    for (std::size_t w = 0; w < res.warnings.size(); ++w) out << (w ? ", " : "") << json(res.warnings[w]).dump();
    out << "]}\n";
    return kOk;
  }
  out << "E,lambda,multiplicity,residual";
  for (int k = 0; k < K; ++k) out << ",q" << k << "_re,q" << k << "_im";
  out << "\n";
  for (const SpectralRoot& s : res.roots) {
    out << num(s.E) << "," << num(s.lambda) << "," << s.multiplicity << "," << num(s.residual);
    const Eigen::VectorXcd q = fix_phase(s.charges.col(0));
    for (int k = 0; k < K; ++k) out << "," << num(q[k].real()) << "," << num(q[k].imag());
    out << "\n";
  }
  for (const std::string& w : res.warnings) out << "# warning: " << w << "\n";
  return kOk;
}

int cmd_field(const RunConfig& rc, std::ostream& out) {
  const FieldRequest& fr = rc.field;
  const FluxConfig& c = rc.flux;
  std::vector<Vec2> avoid = c.positions;
  if (fr.what == "resolvent") avoid.push_back(fr.source);
  const SamplePoints sp = window_points(fr, avoid);
  Eigen::VectorXcd v(sp.pts.size());
  if (fr.what == "defect") {
    const ChannelIndex ch = make_channel(c, fr.flux, fr.ell);
    for (std::size_t i = 0; i < sp.pts.size(); ++i) v[i] = defect_eval(c, ch, fr.lambda, sp.pts[i]);
  } else if (fr.what == "resolvent") {
    KreinModel model(c, rc.krein);
    v = model.resolvent_kernel(rc.ext, fr.lambda, sp.pts, {fr.source}).col(0);
  } else {
    if (rc.ext.is_friedrichs()) throw std::out_of_range("field.index: the Friedrichs extension has no eigenvectors");
    KreinModel model(c, rc.krein);
    const SpectralResult res = model.find_eigenvalues(rc.ext, rc.scan);
    int left = fr.index;
    const SpectralRoot* root = nullptr;
    for (const SpectralRoot& r : res.roots) {
      if (left < r.multiplicity) {
        root = &r;
        break;
      }
      left -= r.multiplicity;
    }
    if (!root)
      throw std::out_of_range("field.index: " + std::to_string(fr.index) + " out of range, spectrum has " +
                              std::to_string(res.count()) + " eigenvectors");
    const Eigen::VectorXcd q = fix_phase(root->charges.col(left));
    v = model.eigenvector(root->lambda, q, sp.pts);
    const double nrm = std::sqrt(v.squaredNorm() * sp.cell);
    if (!(nrm > 0.0)) throw NumericalError("field: eigenvector vanishes on the window");
    v /= nrm;
  }
  write_field(rc, sp.pts, v, out);
  return kOk;
}

namespace {

struct SuiteResult {
  std::string name;
  bool pass = false;
  double measured = 0.0;
  double limit = 0.0;
};

SuiteResult suite_wronskian(const SelftestHooks& hooks) {
  auto bes = hooks.bessel ? hooks.bessel : [](double nu, double x) { return bessel_ik<double>(nu, x); };
  std::mt19937_64 rng(20240611);
  std::uniform_real_distribution<double> unu(0.0, 1.0), ux(0.01, 50.0);
  double worst = 0.0;
  for (int i = 0; i < 200; ++i) {
    const double nu = unu(rng), x = ux(rng);
    const auto a = bes(nu, x), b = bes(nu + 1.0, x);
    worst = std::max(worst, std::fabs(x * (a.i * b.k + b.i * a.k) - 1.0));
  }
  return {"wronskian", worst < 1e-10, worst, 1e-10};
}

SuiteResult suite_reflection() {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.001, 0.999);
  double worst = 0.0;
  for (int i = 0; i < 200; ++i) {
    const double x = u(rng);
    const double lhs = gamma_real(x) * gamma_real(1.0 - x) * std::sin(std::numbers::pi * x);
    worst = std::max(worst, std::fabs(lhs - std::numbers::pi));
  }
  const double lim = 1e-10 * std::numbers::pi;
  return {"reflection", worst < lim, worst, lim};
}

SuiteResult suite_partition() {
  const FluxConfig c = FluxConfig::make({Vec2(0, 0), Vec2(2, 0.5), Vec2(-1, 2)}, {0.3, 0.5, 1.7});
  const PartitionOfUnity pou(c);
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-3.0, 4.0);
  double worst = 0.0;
  for (int i = 0; i < 2000; ++i) {
    const Vec2 x(u(rng), u(rng));
    double s = 0.0;
    for (int n = 0; n <= c.size(); ++n) s += std::pow(pou.value(n, x), 2);
    worst = std::max(worst, std::fabs(s - 1.0));
  }
  return {"partition_identity", worst < 1e-12, worst, 1e-12};
}

// |G|^2 is radial, so the norm is a one-dimensional integral in log r.
double defect_norm_quadrature(double alpha, int ell, double lambda) {
  const FluxConfig c = FluxConfig::make({Vec2::Zero()}, {alpha});
  const ChannelIndex ch = make_channel(c, 1, ell);
  const double s0 = std::log(1e-60 / lambda), s1 = std::log(80.0 / lambda);
  const int panels = 400;
  std::vector<double> t, w;
  double sum = 0.0;
  for (int p = 0; p < panels; ++p) {
    gauss_legendre(12, s0 + (s1 - s0) * p / panels, s0 + (s1 - s0) * (p + 1) / panels, t, w);
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double r = std::exp(t[i]);
      sum += w[i] * r * r * std::norm(defect_eval(c, ch, lambda, Vec2(r, 0.0)));
    }
  }
  return 2.0 * std::numbers::pi * sum;
}

SuiteResult suite_defect_norm() {
  const double cases[][3] = {{0.3, 0, 1.0}, {0.3, -1, 0.7}, {0.5, 0, 2.0}, {0.7, -1, 1.5}, {0.6, 0, 0.5}};
  double worst = 0.0;
  for (const auto& cs : cases) {
    const double q = defect_norm_quadrature(cs[0], static_cast<int>(cs[1]), cs[2]);
    const double ref = defect_norm_sq(cs[0], static_cast<int>(cs[1]), cs[2]);
    worst = std::max(worst, std::fabs(q - ref) / ref);
  }
  return {"defect_norm", worst < 1e-6, worst, 1e-6};
}

KreinOptions selftest_options() {
  KreinOptions o;
  o.grid.panel_order = 6;
  o.grid.angular_nodes = 32;
  o.grid.global_angular_nodes = 64;
  return o;
}

std::vector<SuiteResult> suite_two_flux() {
  const FluxConfig c = FluxConfig::make({Vec2(-2, 0), Vec2(2, 0)}, {0.3, 0.6});
  const KreinModel model(c, selftest_options());
  const double lz = 1.0, lw = 2.0;
  const auto z = model.system(lz), w = model.system(lw);
  const Eigen::MatrixXcd dl = model.lambda_matrix(lz) - model.lambda_matrix(lw);
  // -(z - w) with z = -lz^2, w = -lw^2.
  const Eigen::MatrixXcd rhs = (lz * lz - lw * lw) * gram_matrix(*w, *z);
  const double ident = (dl - rhs).norm() / dl.norm();
  const Eigen::MatrixXcd L = model.lambda_matrix(lz);
  const double herm = hermiticity_defect(L) / L.norm();
  const double t0 = model.system(model.lambda0())->nystrom().t_norm_estimate();
  return {{"lambda_identity", ident < 1e-2, ident, 1e-2},
          {"lambda_hermiticity", herm < 1e-3, herm, 1e-3},
          {"lambda0_contractivity", t0 < 0.5, t0, 0.5}};
}

SuiteResult suite_closed_form() {
  const FluxConfig c = FluxConfig::make({Vec2::Zero()}, {0.5});
  const KreinModel model(c, selftest_options());
  const double b = -std::numbers::pi / 2.0;
  const ExtensionParams ext = ExtensionParams::hermitian(Eigen::MatrixXcd::Identity(2, 2) * b);
  ScanOptions scan;
  scan.lambda_min = 0.2;
  scan.lambda_max = 5.0;
  scan.scan_points = 8;
  scan.tol_root = 1e-9;
  const SpectralResult res = model.find_eigenvalues(ext, scan);
  double err = 1.0;
  if (res.roots.size() == 1 && res.roots[0].multiplicity == 2) err = std::fabs(res.roots[0].E + 1.0);
  return {"n1_closed_form", err < 1e-3, err, 1e-3};
}

}  // namespace

int cmd_selftest(std::ostream& out, const SelftestHooks& hooks) {
  std::vector<SuiteResult> all;
  auto guarded = [&](const std::string& name, auto&& f) {
    try {
      f();
    } catch (const std::exception& e) {
      out << "# " << name << " raised: " << e.what() << "\n";
      all.push_back({name, false, std::numeric_limits<double>::infinity(), 0.0});
    }
  };
  guarded("wronskian", [&] { all.push_back(suite_wronskian(hooks)); });
  guarded("reflection", [&] { all.push_back(suite_reflection()); });
  guarded("partition_identity", [&] { all.push_back(suite_partition()); });
  guarded("defect_norm", [&] { all.push_back(suite_defect_norm()); });
  guarded("lambda_identity", [&] {
    for (auto& r : suite_two_flux()) all.push_back(r);
  });
  guarded("n1_closed_form", [&] { all.push_back(suite_closed_form()); });
  bool ok = true;
  for (const auto& r : all) {
    out << (r.pass ? "PASS " : "FAIL ") << r.name << " measured " << num(r.measured) << " limit " << num(r.limit)
        << "\n";
    ok = ok && r.pass;
  }
  return ok ? kOk : kNumerical;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App cli("Self-adjoint Aharonov-Bohm multi-flux Hamiltonians", "abflux");
  cli.require_subcommand(1, 1);
  std::string config_path, out_path;
  int workers = 1;
  auto add_common = [&](CLI::App* sub, bool needs_config) {
    auto* opt = sub->add_option("--config", config_path, "JSON run configuration");
    if (needs_config) opt->required();
    sub->add_option("--out", out_path, "output file (default: output.path or stdout)");
    sub->add_option("--workers", workers, "concurrent scan points")->check(CLI::Range(1, 256));
  };
  auto* validate = cli.add_subcommand("validate", "check a configuration and summarize it");
  auto* spectrum = cli.add_subcommand("spectrum", "discrete eigenvalues and charge vectors");
  auto* field = cli.add_subcommand("field", "eigenvector, resolvent or defect samples on a window");
  auto* selftest = cli.add_subcommand("selftest", "run the invariant suites");
  add_common(validate, true);
  add_common(spectrum, true);
  add_common(field, true);
  add_common(selftest, false);

  try {
    std::vector<std::string> args;
    for (int i = argc - 1; i >= 1; --i) args.emplace_back(argv[i]);
    cli.parse(args);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << cli.help();
      return kOk;
    }
    err << "abflux: " << e.what() << "\n";
    return kConfig;
  }

  std::ostringstream buf;
  int code = kOk;
  try {
    if (selftest->parsed()) {
      code = cmd_selftest(buf);
    } else {
      RunConfig rc = load_config(config_path);
      rc.scan.workers = workers;
      if (!out_path.empty()) rc.out_path = out_path;
      if (validate->parsed()) {
        rc.out_path = out_path;
        code = cmd_validate(rc, buf);
      } else if (spectrum->parsed()) {
        code = cmd_spectrum(rc, buf);
      } else {
        code = cmd_field(rc, buf);
      }
      if (!rc.out_path.empty()) {
        std::ofstream f(rc.out_path, std::ios::binary);
        if (!f) {
          err << "abflux: cannot write " << rc.out_path << "\n";
          return kNumerical;
        }
        f << buf.str();
        return code;
      }
    }
  } catch (const ConfigError& e) {
    err << "abflux: configuration error: " << e.what() << "\n";
    return kConfig;
  } catch (const std::out_of_range& e) {
    err << "abflux: " << e.what() << "\n";
    return kConfig;
  } catch (const std::exception& e) {
    out << buf.str() << "# error: " << e.what() << "\n";
    err << "abflux: numerical failure: " << e.what() << "\n";
    return kNumerical;
  }
  out << buf.str();
  return code;
}

}  // namespace abflux::app

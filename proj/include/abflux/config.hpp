#pragma once

#include <Eigen/Core>

#include <stdexcept>
#include <vector>

namespace abflux {

using Vec2 = Eigen::Vector2d;
using CVec2 = Eigen::Vector2cd;

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ReducedFlux {
  long winding;
  double alpha;
};

// Splits a raw flux into integer winding plus fractional part in (0,1).
// The fractional part is rounded to 12 decimals so integer shifts of the
// same raw value reduce to the same double.
ReducedFlux reduce_flux(double alpha_raw);

double compute_r_star(const std::vector<Vec2>& positions, double factor = 0.45,
                      double single_default = 1.0);

struct FluxConfig {
  std::vector<Vec2> positions;
  std::vector<double> alphas_raw;
  std::vector<double> alphas;
  std::vector<long> winding;
  double r_star = 1.0;
  double r_star_factor = 0.45;

  static FluxConfig make(std::vector<Vec2> positions, std::vector<double> alphas_raw,
                         double r_star_factor = 0.45, double single_default = 1.0);

  int size() const { return static_cast<int>(positions.size()); }
  double distance(int m, int n) const { return (positions[m] - positions[n]).norm(); }
  double min_distance() const;
  Vec2 centroid() const;
  // Largest distance from the centroid to a flux.
  double spread() const;
};

struct XiSample {
  double value = 0.0;
  Vec2 grad = Vec2::Zero();
  double lap = 0.0;
};

// Quintic smoothstep sigma(t) = 10t^3 - 15t^4 + 6t^5 and derivatives.
struct Smoothstep {
  double s, ds, d2s;
};
Smoothstep smoothstep(double t);

// C^2 cutoffs xi_0..xi_N with sum xi_n^2 = 1. Index 0 is the exterior cutoff,
// index n >= 1 the disc around positions[n-1].
class PartitionOfUnity {
 public:
  PartitionOfUnity() = default;
  PartitionOfUnity(std::vector<Vec2> centers, double r_star);
  explicit PartitionOfUnity(const FluxConfig& cfg) : PartitionOfUnity(cfg.positions, cfg.r_star) {}

  XiSample eval(int n, const Vec2& x) const;
  double value(int n, const Vec2& x) const { return eval(n, x).value; }
  int size() const { return static_cast<int>(centers_.size()); }
  double r_star() const { return r_star_; }
  const std::vector<Vec2>& centers() const { return centers_; }

 private:
  // Radial profile: cos (inner, xi_n) or sin (outer factor of xi_0).
  XiSample radial(int n, const Vec2& x, bool outer) const;
  std::vector<Vec2> centers_;
  double r_star_ = 1.0;
};

inline XiSample xi_eval(const PartitionOfUnity& pou, int n, const Vec2& x) { return pou.eval(n, x); }

enum class Potential { A, S, S0, Scheck };

// A_n, S_n, S_0 and the centred S_n. Flux indices run 1..N; n is ignored for S0.
Vec2 potential_eval(const FluxConfig& cfg, Potential kind, int n, const Vec2& x);

// C-infinity step: 0 for t <= 0, 1 for t >= 1.
double smooth_transition(double t);

}  // namespace abflux

#pragma once

#include "abflux/config.hpp"

#include <complex>
#include <functional>
#include <vector>

namespace abflux {

using cplx = std::complex<double>;

// Singular channel (n, ell): flux n in 1..N, ell in {0, -1}, nu = |ell + alpha_n|.
struct ChannelIndex {
  int n = 1;
  int ell = 0;
  double nu = 0.5;
};

ChannelIndex make_channel(const FluxConfig& cfg, int n, int ell);

// Ordering used for every 2N-vector: (1,0), (1,-1), (2,0), (2,-1), ...
std::vector<ChannelIndex> channels(const FluxConfig& cfg);

struct FieldSample {
  cplx value;
  CVec2 grad;
};

// G = lambda^nu K_nu(lambda r) e^{i ell theta} / sqrt(2 pi) about x_n.
cplx defect_eval(const FluxConfig& cfg, const ChannelIndex& ch, double lambda, const Vec2& x);
CVec2 defect_grad(const FluxConfig& cfg, const ChannelIndex& ch, double lambda, const Vec2& x);
FieldSample defect_sample(const FluxConfig& cfg, const ChannelIndex& ch, double lambda, const Vec2& x);

double defect_norm_sq(double alpha, int ell, double lambda);
double defect_norm_sq(const FluxConfig& cfg, const ChannelIndex& ch, double lambda);

// Phase e^{-i S_n(x_n).(x - x_n)}.
cplx dressing_phase(const FluxConfig& cfg, int n, const Vec2& x);

// e^{-i S_n(x_n).(x - x_n)} xi_n(x) G(x), with gradient.
cplx dressed_defect_eval(const FluxConfig& cfg, const PartitionOfUnity& pou, const ChannelIndex& ch,
                         double lambda, const Vec2& x);
FieldSample dressed_defect_sample(const FluxConfig& cfg, const PartitionOfUnity& pou, const ChannelIndex& ch,
                                  double lambda, const Vec2& x);

// e^{-i S_n(x_n).(x - x_n)} P_n G(x): the image of the dressed defect under H + lambda^2.
cplx dressed_source_eval(const FluxConfig& cfg, const PartitionOfUnity& pou, const ChannelIndex& ch,
                         double lambda, const Vec2& x);

struct TraceOptions {
  double r0 = 0.0;  // 0 selects r_star / 8
  int halvings = 14;
  int angular = 128;
  double tol = 1e-6;
  // Correction exponents of r, ascending. Empty selects the generic set
  // {1-nu, 2-2nu, 2nu, 1, 2-nu, 2, 3-nu, 4-2nu, 4-nu, 4}.
  std::vector<double> exponents;
};

struct TraceResult {
  cplx value;
  double spread;  // local error estimate at the chosen tableau entry
};

struct TraceDivergence : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Boundary coefficient of psi in channel ch. The value-only form differentiates
// radially by finite differences.
TraceResult trace_tau(const std::function<cplx(const Vec2&)>& psi, const FluxConfig& cfg, const ChannelIndex& ch,
                      const TraceOptions& opt = {});
TraceResult trace_tau(const std::function<FieldSample(const Vec2&)>& psi, const FluxConfig& cfg,
                      const ChannelIndex& ch, const TraceOptions& opt = {});

}  // namespace abflux

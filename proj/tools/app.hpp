#pragma once

#include "abflux/krein.hpp"
#include "abflux/specfun.hpp"

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

namespace abflux::app {

enum Exit { kOk = 0, kNumerical = 1, kConfig = 2 };

struct FieldRequest {
  std::string what = "defect";  // eigenvector | resolvent | defect
  int index = 0;                // eigenvector: kernel vector, counted over roots by E
  double lambda = 1.0;          // resolvent and defect
  Vec2 source = Vec2(0.5, 0.5); // resolvent second argument
  int flux = 1;
  int ell = 0;
  double xmin = -3.0, xmax = 3.0, ymin = -3.0, ymax = 3.0;
  int nx = 41, ny = 41;
  double exclusion = 1e-3;
};

struct RunConfig {
  FluxConfig flux;
  ExtensionParams ext;
  ScanOptions scan;
  KreinOptions krein;
  FieldRequest field;
  std::string format = "csv";
  std::string out_path;
};

// Throws ConfigError with the offending field path in the message.
RunConfig parse_config(const std::string& json_text);
RunConfig load_config(const std::string& path);

// 17 significant digits.
std::string num(double v);

int cmd_validate(const RunConfig& rc, std::ostream& out);
int cmd_spectrum(const RunConfig& rc, std::ostream& out);
int cmd_field(const RunConfig& rc, std::ostream& out);

struct SelftestHooks {
  // Replaces bessel_ik in the special-function suites.
  std::function<BesselPair<double>(double, double)> bessel;
};
int cmd_selftest(std::ostream& out, const SelftestHooks& hooks = {});

// Full command line; diagnostics go to err.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace abflux::app

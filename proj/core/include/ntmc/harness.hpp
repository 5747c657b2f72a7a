#pragma once

#include <limits>
#include <ostream>
#include <span>
#include <vector>

#include "ntmc/config.hpp"
#include "ntmc/spine.hpp"

namespace ntmc {

/// Grid triple for the config, refined along characteristics when the config asks for it.
/// Throws ConfigError when the config has no grid.
SpectralTriple build_triple(const ExperimentConfig& cfg, int threads = 1);

struct CriticalityRow {
  double m = 0.0;
  double lambda_grid = std::numeric_limits<double>::quiet_NaN();  // NaN without a grid
  EstimateWithError lambda_mc;
  EstimateWithError survival;  // fraction of trials alive at the horizon
};

struct CriticalityScan {
  std::vector<CriticalityRow> rows;  // sorted by m
  double m_star_grid = std::numeric_limits<double>::quiet_NaN();
  double m_star_mc = std::numeric_limits<double>::quiet_NaN();
};

struct ScanOptions {
  double t1 = 2.0;
  double t2 = 4.0;
  double horizon = 20.0;
  std::int64_t walk_trials = 100'000;
  std::int64_t nbp_trials = 2'000;
  std::uint64_t seed = 0;
  int threads = 1;
  NbpCaps caps;
};

/**
 * For each fission mean m: the grid eigenvalue (right power iteration only),
 * the Monte Carlo growth rate between t1 and t2 and the survival fraction at
 * the horizon, all from the config's start particle. The critical m is located
 * by linear interpolation between the first pair of rows whose lambda changes sign.
 */
CriticalityScan criticality_scan(const ExperimentConfig& base, std::span<const double> ms, const ScanOptions& opt);

/// Linear interpolation of the first zero crossing of y(x); NaN when y never changes sign.
double interpolate_root(std::span<const double> x, std::span<const double> y);

struct MartingaleRow {
  std::int64_t trial_id = 0;
  double t = 0.0;
  std::int64_t n = 0;
  double w = 0.0;  // NaN when truncated
  bool truncated = false;
};

/// W_t on the time grid, one row per (trial, time).
std::vector<MartingaleRow> martingale_rows(const MaterialModel& mm, const SpectralTriple& triple, const Vec3& r,
                                           const Vec3& v, std::span<const double> times, const TrialPlan& plan,
                                           const NbpCaps& caps = {});

void write_csv(std::ostream& os, std::span<const NbpTrialRow> rows);
void write_csv(std::ostream& os, std::span<const WalkTrialRow> rows);
void write_csv(std::ostream& os, std::span<const SpineTrialRow> rows);
void write_csv(std::ostream& os, std::span<const MartingaleRow> rows);
void write_csv(std::ostream& os, const CriticalityScan& scan);

/// Shortest decimal text that reads back to the same double ("nan" for NaN).
std::string format_double(double x);

}  // namespace ntmc

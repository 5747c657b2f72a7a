#pragma once

#include <array>
#include <functional>
#include <vector>

#include "ntmc/branching.hpp"
#include "ntmc/spectral.hpp"

namespace ntmc {

/// Functional of the particle configuration at a fixed time.
using PopulationFunctional = std::function<double(const Population&)>;

/// Spine walk plus the immigrants it has shed so far (each at its birth state).
struct SpineState {
  WalkState spine;
  std::vector<ParticleState> immigrants;
  std::vector<std::size_t> immigrant_fission;  // index into spine_fission_times
  std::vector<double> spine_fission_times;
};

/// One step of the spine: the straight piece flown and what ended it.
struct SpineStep {
  enum class Kind { scatter, fission, horizon };
  Kind kind = Kind::horizon;
  Vec3 r0;  // position at t0
  Vec3 v;   // velocity during the flight
  double t0 = 0.0;
  double t1 = 0.0;
};

/// Spine jump rates at (r, v): (scatter, fission) = (S_s(r), S_f(r)) / phi(r, v).
std::pair<double, double> spine_rates(const SpectralTriple& triple, const Vec3& r, const Vec3& v);

/**
 * Advance the spine to its next scatter or fission, or to `horizon`. The flight
 * law has density exp(-int (sigma + lambda)) S along the ray, normalized by
 * phi(r, v), so the spine never reaches the boundary. At a scatter the new
 * velocity has density proportional to phi(r, v') pi_s(v'); at a fission the
 * offspring are size-biased by <phi, Z>, one of them is re-marked as the spine
 * and the others are appended to state.immigrants.
 */
SpineStep spine_step(const MaterialModel& mm, const SpectralTriple& triple, SpineState& state, double horizon,
                     Rng& rng);

/// Spine system at time `horizon`: spine first, then the surviving immigrant descendants.
struct SpineRun {
  SpineState state;
  Population population;
  bool truncated = false;
};

/// Immigrant k of spine fission i evolves on rng.split(i, k).
SpineRun spine_run(const MaterialModel& mm, const SpectralTriple& triple, const Vec3& r, const Vec3& v, double horizon,
                   Rng& rng, const NbpCaps& caps = {}, bool with_immigrants = true);

/// Phase bins: nx x ny x nz boxes over the bounding box of D times the 8 velocity octants.
struct OccupationBins {
  std::array<int, 3> n{4, 4, 4};
  AxisBox box;

  std::size_t size() const { return static_cast<std::size_t>(n[0]) * n[1] * n[2] * 8; }
  std::size_t index(const Vec3& r, const Vec3& v) const;
};

struct Occupation {
  OccupationBins bins;
  std::vector<double> mass;  // sums to 1
};

/// Time-average of the spine over [burn_in, horizon], started at (r, v).
Occupation spine_marginal_occupation(const MaterialModel& mm, const SpectralTriple& triple, const Vec3& r,
                                     const Vec3& v, double burn_in, double horizon, Rng& rng,
                                     std::array<int, 3> spatial_bins = {4, 4, 4});

/// Normalized phi * phi_tilde bin masses on the same bins.
Occupation stationary_reference(const SpectralTriple& triple, std::array<int, 3> spatial_bins = {4, 4, 4});

double total_variation(const Occupation& a, const Occupation& b);

struct IdentityCheck {
  EstimateWithError lhs;
  EstimateWithError rhs;

  /// |lhs - rhs| / combined SE (infinite when both SEs vanish and the means differ).
  double z() const;
};

/// E[W_t F(X_t)] by the ordinary process against E^phi[F(X^phi_t)] by the spine system.
IdentityCheck measure_change_check(const MaterialModel& mm, const SpectralTriple& triple, const PopulationFunctional& f,
                                   const Vec3& r, const Vec3& v, double t, const TrialPlan& plan,
                                   const NbpCaps& caps = {});

/// E[exp(-lambda t + int beta) phi(R_t, Y_t) / phi(r, v) h(R_t, Y_t)] under the (alpha, pi) walk
/// against E^phi[h(R_t, Y_t)] under the spine walk.
IdentityCheck spine_com_weight_check(const MaterialModel& mm, const SpectralTriple& triple, const Vec3& r,
                                     const Vec3& v, double t, const PhaseFunction& h, const TrialPlan& plan);

struct SpineTrialRow {
  std::int64_t trial_id = 0;
  double t = 0.0;
  Vec3 spine_r;
  Vec3 spine_v;
  std::int64_t immigrant_count = 0;  // immigrant descendants alive at t
  double f_value = 0.0;
};

std::vector<SpineTrialRow> spine_rows(const MaterialModel& mm, const SpectralTriple& triple,
                                      const PopulationFunctional& f, const Vec3& r, const Vec3& v, double t,
                                      const TrialPlan& plan, const NbpCaps& caps = {});

}  // namespace ntmc

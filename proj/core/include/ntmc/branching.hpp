#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "ntmc/estimate.hpp"
#include "ntmc/materials.hpp"
#include "ntmc/parallel.hpp"
#include "ntmc/walk.hpp"

namespace ntmc {

class SpectralTriple;

/// One neutron: position, velocity and the time it was born.
struct ParticleState {
  Vec3 r;
  Vec3 v;
  double birth_time = 0.0;
};

/// Atomic configuration X_t. An empty list means extinction at or before `time`.
struct Population {
  double time = 0.0;
  std::vector<ParticleState> particles;

  std::size_t count() const { return particles.size(); }
  bool empty() const { return particles.empty(); }

  static Population single(const Vec3& r, const Vec3& v) { return {0.0, {{r, v, 0.0}}}; }
};

enum class EventKind { scatter, fission, boundary_kill };

const char* to_string(EventKind k);

struct Event {
  double time = 0.0;
  EventKind kind = EventKind::scatter;
  ParticleState parent;                 // state at the event, pre-event velocity
  std::vector<ParticleState> offspring; // new velocity for scatter; offspring for fission
};

/// Events of one trial, sorted by time (stable in simulation order).
struct EventLog {
  std::vector<Event> events;
};

struct NbpCaps {
  std::int64_t max_particles = 1'000'000;
  std::int64_t max_events = 100'000'000;
};

/// Next thing that happens to a particle flying from `now`.
struct Advance {
  enum class Kind { scatter, fission, boundary_kill, survived };
  Kind kind = Kind::survived;
  double time = 0.0;  // event time, or the horizon
  Vec3 r;             // position at that time
  std::size_t region = 0;
};

/**
 * Fly p (located at p.r at time `now`) until its next scatter, fission, boundary
 * exit or the horizon, with exact per-region exponential clocks.
 */
Advance advance_particle(const MaterialModel& mm, const ParticleState& p, double now, double horizon, Rng& rng);

struct NbpResult {
  Population final;
  EventLog log;
  bool truncated = false;
  double extinction_time = -1.0;  // zeta when the population died out before the horizon
  std::int64_t events = 0;

  bool extinct() const { return extinction_time >= 0.0; }
};

/// Event-driven simulation of the branching process from `initial` (all at time initial.time).
NbpResult simulate_nbp(const MaterialModel& mm, const Population& initial, double horizon, const NbpCaps& caps,
                       Rng& rng, bool record_log = false);

/// <g_k, X_t> at several times from one simulation.
struct NbpTally {
  std::vector<double> values;  // index j * gs.size() + k
  std::vector<std::int64_t> counts;  // N_t per time
  bool truncated = false;
  double extinction_time = -1.0;
};

NbpTally tally_nbp(const MaterialModel& mm, const Population& initial, std::span<const double> times,
                   std::span<const PhaseFunction> gs, const NbpCaps& caps, Rng& rng);

/// Per-trial moments of <g_k, X_{t_j}> (component j * gs.size() + k); truncated trials are skipped.
struct BranchingMoments {
  Moments moments;
  std::int64_t truncated = 0;
};

BranchingMoments branching_moments(const MaterialModel& mm, std::span<const PhaseFunction> gs, const Vec3& r,
                                   const Vec3& v, std::span<const double> times, const TrialPlan& plan,
                                   const NbpCaps& caps = {});

/// psi_t[g](r, v) = E[<g, X_t>] from a single particle at (r, v). Throws EstimationError when every trial truncates.
EstimateWithError estimate_psi_branching(const MaterialModel& mm, const Vec3& r, const Vec3& v, const PhaseFunction& g,
                                         double t, const TrialPlan& plan, const NbpCaps& caps = {});

/// One trajectory of W_t = exp(-lambda t) <phi, X_t> / phi(r, v) on the time grid.
std::vector<std::pair<double, double>> martingale_trace(const MaterialModel& mm, const SpectralTriple& triple,
                                                        const Vec3& r, const Vec3& v, std::span<const double> times,
                                                        Rng& rng, const NbpCaps& caps = {});

/// Moments of W_t (one component per time) over trials.
BranchingMoments martingale_moments(const MaterialModel& mm, const SpectralTriple& triple, const Vec3& r,
                                    const Vec3& v, std::span<const double> times, const TrialPlan& plan,
                                    const NbpCaps& caps = {});

/// Fraction of trials with N_horizon = 0.
EstimateWithError extinction_probability(const MaterialModel& mm, const Vec3& r, const Vec3& v, double horizon,
                                         const TrialPlan& plan, const NbpCaps& caps = {});

/// Fractions surviving to each horizon, from one simulation per trial (component per horizon).
BranchingMoments survival_moments(const MaterialModel& mm, const Vec3& r, const Vec3& v,
                                  std::span<const double> horizons, const TrialPlan& plan, const NbpCaps& caps = {});

/// Per-trial record for CSV output; W uses <phi, initial> as the normalizer.
struct NbpTrialRow {
  std::int64_t trial_id = 0;
  double horizon = 0.0;
  std::int64_t n_final = 0;
  bool extinct = false;
  bool truncated = false;
  double functional_value = 0.0;
  double w_final = 0.0;  // NaN without a spectral triple
};

std::vector<NbpTrialRow> nbp_rows(const MaterialModel& mm, const PhaseFunction& g, const SpectralTriple* triple,
                                  const Population& initial, double horizon, const TrialPlan& plan,
                                  const NbpCaps& caps = {});

}  // namespace ntmc

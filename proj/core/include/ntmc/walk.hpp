#pragma once

#include <functional>
#include <vector>

#include "ntmc/estimate.hpp"
#include "ntmc/materials.hpp"
#include "ntmc/parallel.hpp"

namespace ntmc {

/// Bounded test function on D x V; evaluates to 0 at the cemetery by convention.
using PhaseFunction = std::function<double(const Vec3& r, const Vec3& v)>;

/// Position-velocity of a neutron random walk with its accumulated log weight.
struct WalkState {
  Vec3 r;
  Vec3 v;
  double time = 0.0;
  double log_weight = 0.0;
  bool alive = true;
};

/// Outgoing-velocity law of a walk jump: mixture of kernels.
struct MixtureKernel {
  struct Component {
    double weight = 0.0;
    KernelSpec kernel;
  };
  std::vector<Component> components;

  Vec3 sample(const VelocitySpace& vs, Rng& rng) const;
};

/**
 * Region-constant neutron random walk: jump rate and jump kernel per region,
 * an optional potential integrated into log_weight, and an optional extra
 * exponential killing rate.
 */
struct WalkSpec {
  std::vector<double> rate;
  std::vector<MixtureKernel> kernel;
  std::vector<double> potential;  // empty: zero
  std::vector<double> kill_rate;  // empty: no killing beyond the boundary

  /// The (alpha, pi) walk with potential beta used by the many-to-one formula.
  static WalkSpec many_to_one(const MaterialModel& mm);
  /// The (alpha, pi) walk killed at rate beta_bar - beta, without potential.
  static WalkSpec killed(const MaterialModel& mm);
};

/// Piecewise-linear path: states at t = 0, after each jump, and at death or the horizon.
struct WalkPath {
  std::vector<WalkState> states;
  double death_time = -1.0;  // < 0 when alive at the horizon

  /// State at time t (0 <= t <= horizon); alive == false after death.
  WalkState at(double t) const;
};

/// Simulate the walk from (r, v) up to `horizon`, recording the state exactly at each
/// checkpoint time. Throws DomainError for an invalid start.
WalkPath simulate_nrw(const MaterialModel& mm, const WalkSpec& spec, const Vec3& r, const Vec3& v, double horizon,
                      Rng& rng, std::span<const double> checkpoints = {});

/**
 * Moments of exp(int beta) g_k(R_t, Y_t) 1{t < tau} for every functional g_k and
 * time t_j, from one walk per trial. Component index is j * gs.size() + k.
 */
Moments many_to_one_moments(const MaterialModel& mm, std::span<const PhaseFunction> gs, const Vec3& r,
                            const Vec3& v, std::span<const double> times, const TrialPlan& plan);

/// Many-to-one estimate of psi_t[g](r, v).
EstimateWithError many_to_one_estimate(const MaterialModel& mm, const PhaseFunction& g, const Vec3& r, const Vec3& v,
                                       double t, const TrialPlan& plan);

/// Estimate of P(t < k) for the (alpha, pi) walk killed at rate beta_bar - beta and at the boundary.
EstimateWithError killed_walk_survival(const MaterialModel& mm, const Vec3& r, const Vec3& v, double t,
                                       const TrialPlan& plan);

/// Per-trial record for CSV output of many-to-one runs.
struct WalkTrialRow {
  std::int64_t trial_id = 0;
  double t = 0.0;
  bool alive = false;
  double log_weight = 0.0;
  double g_value = 0.0;
  double contribution = 0.0;
};

std::vector<WalkTrialRow> many_to_one_rows(const MaterialModel& mm, const PhaseFunction& g, const Vec3& r,
                                           const Vec3& v, double t, const TrialPlan& plan);

}  // namespace ntmc

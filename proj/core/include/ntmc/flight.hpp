#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>

#include "ntmc/geometry.hpp"
#include "ntmc/materials.hpp"
#include "ntmc/rng.hpp"

namespace ntmc {

/// Outcome of one straight-line flight.
struct Flight {
  enum class End { collision, boundary, horizon };
  End end = End::horizon;
  double duration = 0.0;  // time flown
  std::size_t region = 0; // region of the collision (meaningful for End::collision)
  double accumulated = 0.0;  // integral of the secondary per-region rate along the flight
};

/**
 * Fly from r with velocity v for at most t_max, against a clock whose rate is
 * region-constant (rate(region_index)). Region changes along the ray are
 * resolved exactly, so the collision time is drawn from the exact
 * inhomogeneous exponential law with a single Exp(1) variate.
 *
 * `secondary(region_index)` is integrated along the flown portion (used for
 * the Feynman-Kac potential).
 */
template <class RateFn, class SecondaryFn>
Flight fly(const MaterialModel& mm, const Vec3& r, const Vec3& v, double t_max, RateFn&& rate,
           SecondaryFn&& secondary, Rng& rng) {
  const double kappa = exit_time(mm.domain(), r, v);
  const bool hits_boundary = kappa <= t_max;
  const double limit = hits_boundary ? kappa : t_max;
  double budget = rng.exponential();

  Flight out;
  const auto breaks = mm.region_breaks(r, v, limit);
  double t0 = 0.0;
  for (std::size_t k = 0; k <= breaks.size(); ++k) {
    const double t1 = k < breaks.size() ? breaks[k] : limit;
    if (t1 <= t0) continue;
    const std::size_t reg = mm.regions().size() == 1 ? 0 : mm.region_index(r + v * (0.5 * (t0 + t1)));
    const double lam = rate(reg);
    const double len = t1 - t0;
    if (lam * len > budget) {
      const double dt = budget / lam;
      out.end = Flight::End::collision;
      out.duration = std::min(t0 + dt, std::nextafter(t1, t0));
      out.region = reg;
      out.accumulated += secondary(reg) * (out.duration - t0);
      return out;
    }
    budget -= lam * len;
    out.accumulated += secondary(reg) * len;
    t0 = t1;
  }
  out.end = hits_boundary ? Flight::End::boundary : Flight::End::horizon;
  out.duration = limit;
  out.region = mm.regions().size() == 1 ? 0 : mm.region_index(r + v * (0.5 * limit));
  return out;
}

template <class RateFn>
Flight fly(const MaterialModel& mm, const Vec3& r, const Vec3& v, double t_max, RateFn&& rate, Rng& rng) {
  return fly(mm, r, v, t_max, std::forward<RateFn>(rate), [](std::size_t) { return 0.0; }, rng);
}

}  // namespace ntmc

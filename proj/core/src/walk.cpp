#include "ntmc/walk.hpp"

#include <algorithm>
#include <cmath>

#include "ntmc/errors.hpp"
#include "ntmc/flight.hpp"

namespace ntmc {

Vec3 MixtureKernel::sample(const VelocitySpace& vs, Rng& rng) const {
  double u = rng.uniform();
  for (const auto& c : components) {
    if (u < c.weight) return c.kernel.sample(vs, rng);
    u -= c.weight;
  }
  return components.back().kernel.sample(vs, rng);
}

namespace {

MixtureKernel pi_kernel(const MaterialRegion& reg) {
  MixtureKernel k;
  const double a = reg.alpha();
  if (a == 0.0) {
    k.components.push_back({1.0, reg.scatter_kernel});
    return k;
  }
  k.components.push_back({reg.sigma_s / a, reg.scatter_kernel});
  k.components.push_back({reg.sigma_f * reg.fission_mean / a, reg.fission_kernel});
  return k;
}

}  // namespace

WalkSpec WalkSpec::many_to_one(const MaterialModel& mm) {
  WalkSpec s;
  for (const auto& reg : mm.regions()) {
    s.rate.push_back(reg.alpha());
    s.kernel.push_back(pi_kernel(reg));
    s.potential.push_back(reg.beta());
  }
  return s;
}

WalkSpec WalkSpec::killed(const MaterialModel& mm) {
  WalkSpec s;
  const double bb = beta_bar(mm);
  for (const auto& reg : mm.regions()) {
    s.rate.push_back(reg.alpha());
    s.kernel.push_back(pi_kernel(reg));
    s.kill_rate.push_back(bb - reg.beta());
  }
  return s;
}

WalkState WalkPath::at(double t) const {
  if (death_time >= 0.0 && t >= death_time) {
    WalkState dead = states.back();
    dead.alive = false;
    return dead;
  }
  // Last state with time <= t.
  auto it = std::upper_bound(states.begin(), states.end(), t,
                             [](double x, const WalkState& s) { return x < s.time; });
  const WalkState& s = *std::prev(it);
  WalkState out = s;
  const double dt = t - s.time;
  out.r = s.r + s.v * dt;
  out.time = t;
  if (it != states.end()) {
    // Linear in time; exact when the segment stays in one region. Checkpoint
    // times passed to simulate_nrw are always recorded exactly.
    const WalkState& e = *it;
    const double span = e.time - s.time;
    if (span > 0.0) out.log_weight = s.log_weight + (e.log_weight - s.log_weight) * (dt / span);
  }
  return out;
}

WalkPath simulate_nrw(const MaterialModel& mm, const WalkSpec& spec, const Vec3& r, const Vec3& v, double horizon,
                      Rng& rng, std::span<const double> checkpoints) {
  if (!contains(mm.domain(), r)) throw DomainError("simulate_nrw: start point outside domain");
  WalkPath path;
  WalkState s{r, v, 0.0, 0.0, true};
  path.states.push_back(s);
  const bool killing = !spec.kill_rate.empty();
  const bool weighted = !spec.potential.empty();

  std::vector<double> stops(checkpoints.begin(), checkpoints.end());
  std::sort(stops.begin(), stops.end());
  auto next_stop = stops.begin();
  auto total_rate = [&](std::size_t reg) { return spec.rate[reg] + (killing ? spec.kill_rate[reg] : 0.0); };
  auto pot = [&](std::size_t reg) { return weighted ? spec.potential[reg] : 0.0; };

  for (;;) {
    while (next_stop != stops.end() && *next_stop <= s.time) ++next_stop;
    const double target = (next_stop != stops.end() && *next_stop < horizon) ? *next_stop : horizon;
    const double remaining = target - s.time;
    if (remaining <= 0.0) break;
    // Splitting a flight at a checkpoint is exact: the collision clock is memoryless.
    const Flight f = fly(mm, s.r, s.v, remaining, total_rate, pot, rng);
    s.r = s.r + s.v * f.duration;
    s.time += f.duration;
    s.log_weight += f.accumulated;
    if (f.end == Flight::End::horizon) {
      s.time = target;
      path.states.push_back(s);
      if (target >= horizon) return path;
      continue;
    }
    if (f.end == Flight::End::boundary) {
      s.alive = false;
      path.states.push_back(s);
      path.death_time = s.time;
      return path;
    }
    if (killing && rng.uniform() * total_rate(f.region) >= spec.rate[f.region]) {
      s.alive = false;
      path.states.push_back(s);
      path.death_time = s.time;
      return path;
    }
    s.v = spec.kernel[f.region].sample(mm.vspace(), rng);
    path.states.push_back(s);
  }
  path.states.push_back(s);
  return path;
}

Moments many_to_one_moments(const MaterialModel& mm, std::span<const PhaseFunction> gs, const Vec3& r,
                            const Vec3& v, std::span<const double> times, const TrialPlan& plan) {
  if (!contains(mm.domain(), r)) throw DomainError("many_to_one: start point outside domain");
  const WalkSpec spec = WalkSpec::many_to_one(mm);
  const double horizon = times.empty() ? 0.0 : *std::max_element(times.begin(), times.end());
  const std::size_t k = gs.size() * times.size();
  auto rows = run_trials(plan, [&](Rng& rng, std::int64_t) {
    std::vector<double> out(k, 0.0);
    const WalkPath path = simulate_nrw(mm, spec, r, v, horizon, rng, times);
    for (std::size_t j = 0; j < times.size(); ++j) {
      const WalkState s = path.at(times[j]);
      if (!s.alive) continue;
      const double w = std::exp(s.log_weight);
      for (std::size_t i = 0; i < gs.size(); ++i) out[j * gs.size() + i] = w * gs[i](s.r, s.v);
    }
    return out;
  });
  return summarize(rows, plan.first_trial);
}

EstimateWithError many_to_one_estimate(const MaterialModel& mm, const PhaseFunction& g, const Vec3& r, const Vec3& v,
                                       double t, const TrialPlan& plan) {
  const PhaseFunction gs[] = {g};
  const double ts[] = {t};
  return many_to_one_moments(mm, gs, r, v, ts, plan).estimate(0);
}

EstimateWithError killed_walk_survival(const MaterialModel& mm, const Vec3& r, const Vec3& v, double t,
                                       const TrialPlan& plan) {
  if (!contains(mm.domain(), r)) throw DomainError("killed_walk_survival: start point outside domain");
  const WalkSpec spec = WalkSpec::killed(mm);
  auto rows = run_trials(plan, [&](Rng& rng, std::int64_t) {
    const WalkPath path = simulate_nrw(mm, spec, r, v, t, rng);
    return std::vector<double>{path.death_time < 0.0 ? 1.0 : 0.0};
  });
  return summarize(rows, plan.first_trial).estimate(0);
}

std::vector<WalkTrialRow> many_to_one_rows(const MaterialModel& mm, const PhaseFunction& g, const Vec3& r,
                                           const Vec3& v, double t, const TrialPlan& plan) {
  const WalkSpec spec = WalkSpec::many_to_one(mm);
  return run_trials(plan, [&](Rng& rng, std::int64_t index) {
    const WalkPath path = simulate_nrw(mm, spec, r, v, t, rng);
    const WalkState s = path.at(t);
    WalkTrialRow row;
    row.trial_id = index;
    row.t = t;
    row.alive = s.alive;
    row.log_weight = s.log_weight;
    row.g_value = s.alive ? g(s.r, s.v) : 0.0;
    row.contribution = s.alive ? std::exp(s.log_weight) * row.g_value : 0.0;
    return row;
  });
}

}  // namespace ntmc

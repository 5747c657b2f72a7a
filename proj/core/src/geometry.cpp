#include "ntmc/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "ntmc/errors.hpp"

namespace ntmc {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Roots of |r + v t - c|^2 = R^2, stable against cancellation; nullopt-like empty when no real roots.
bool ball_roots(const Ball& b, const Vec3& r, const Vec3& v, double& t_lo, double& t_hi) {
  const Vec3 d = r - b.center;
  const double a = dot(v, v);
  const double half_b = dot(d, v);
  const double c = dot(d, d) - b.radius * b.radius;
  const double disc = half_b * half_b - a * c;
  if (a <= 0.0 || disc < 0.0) return false;
  const double s = std::sqrt(disc);
  const double q = half_b >= 0.0 ? -(half_b + s) : -(half_b - s);
  double t1 = q / a;
  double t2 = q != 0.0 ? c / q : 0.0;
  if (t1 > t2) std::swap(t1, t2);
  t_lo = t1;
  t_hi = t2;
  return true;
}

bool slab_interval(const AxisBox& box, const Vec3& r, const Vec3& v, double& t_enter, double& t_exit) {
  t_enter = -kInf;
  t_exit = kInf;
  for (int i = 0; i < 3; ++i) {
    if (v[i] == 0.0) {
      if (r[i] <= box.lo[i] || r[i] >= box.hi[i]) return false;
      continue;
    }
    double t1 = (box.lo[i] - r[i]) / v[i];
    double t2 = (box.hi[i] - r[i]) / v[i];
    if (t1 > t2) std::swap(t1, t2);
    t_enter = std::max(t_enter, t1);
    t_exit = std::min(t_exit, t2);
  }
  return t_enter < t_exit;
}

}  // namespace

Domain Domain::ball(Vec3 center, double radius) {
  if (!(radius > 0.0) || !std::isfinite(radius)) throw std::invalid_argument("ball radius must be positive and finite");
  return Domain(Ball{center, radius});
}

Domain Domain::box(Vec3 lo, Vec3 hi) {
  for (int i = 0; i < 3; ++i) {
    if (!(lo[i] < hi[i])) throw std::invalid_argument("box requires lo < hi componentwise");
  }
  return Domain(AxisBox{lo, hi});
}

AxisBox Domain::bounds() const {
  if (const auto* b = std::get_if<Ball>(&shape_)) {
    const Vec3 h{b->radius, b->radius, b->radius};
    return {b->center - h, b->center + h};
  }
  return std::get<AxisBox>(shape_);
}

Vec3 Domain::centroid() const {
  if (const auto* b = std::get_if<Ball>(&shape_)) return b->center;
  const auto& box = std::get<AxisBox>(shape_);
  return 0.5 * (box.lo + box.hi);
}

double Domain::diameter() const {
  if (const auto* b = std::get_if<Ball>(&shape_)) return 2.0 * b->radius;
  const auto& box = std::get<AxisBox>(shape_);
  return norm(box.hi - box.lo);
}

bool contains(const Domain& d, const Vec3& r) {
  if (const auto* b = std::get_if<Ball>(&d.shape())) {
    const Vec3 x = r - b->center;
    return dot(x, x) < b->radius * b->radius;
  }
  const auto& box = std::get<AxisBox>(d.shape());
  for (int i = 0; i < 3; ++i) {
    if (!(r[i] > box.lo[i] && r[i] < box.hi[i])) return false;
  }
  return true;
}

double exit_time(const Domain& d, const Vec3& r, const Vec3& v) {
  if (!contains(d, r)) throw DomainError("exit_time: start point is not inside the domain");
  if (dot(v, v) == 0.0) throw DomainError("exit_time: zero velocity");
  if (const auto* b = std::get_if<Ball>(&d.shape())) {
    double t_lo = 0.0;
    double t_hi = 0.0;
    ball_roots(*b, r, v, t_lo, t_hi);
    return std::max(t_hi, 0.0);
  }
  const auto& box = std::get<AxisBox>(d.shape());
  double t = kInf;
  for (int i = 0; i < 3; ++i) {
    if (v[i] > 0.0) t = std::min(t, (box.hi[i] - r[i]) / v[i]);
    if (v[i] < 0.0) t = std::min(t, (box.lo[i] - r[i]) / v[i]);
  }
  return t;
}

std::vector<double> boundary_crossings(const Domain& d, const Vec3& r, const Vec3& v) {
  std::vector<double> out;
  double t1 = 0.0;
  double t2 = 0.0;
  bool hit = false;
  if (const auto* b = std::get_if<Ball>(&d.shape())) {
    hit = ball_roots(*b, r, v, t1, t2) && t1 < t2;
  } else {
    hit = slab_interval(std::get<AxisBox>(d.shape()), r, v, t1, t2);
  }
  if (!hit) return out;
  if (t1 > 0.0) out.push_back(t1);
  if (t2 > 0.0) out.push_back(t2);
  return out;
}

VelocitySpace::VelocitySpace(double v_min, double v_max) : v_min_(v_min), v_max_(v_max) {
  if (!(v_min > 0.0) || !(v_min < v_max) || !std::isfinite(v_max)) {
    throw std::invalid_argument("velocity space requires 0 < v_min < v_max < inf");
  }
}

bool VelocitySpace::contains(const Vec3& v) const {
  const double s = norm(v);
  // Relative slack absorbs rounding from the cube-root radius transform.
  return s >= v_min_ * (1.0 - 1e-12) && s <= v_max_ * (1.0 + 1e-12);
}

double volume(double v_min, double v_max) {
  return 4.0 * std::numbers::pi / 3.0 * (v_max * v_max * v_max - v_min * v_min * v_min);
}

double volume(const VelocitySpace& vs) { return volume(vs.v_min(), vs.v_max()); }

Vec3 sample_direction(Rng& rng) {
  const double mu = 2.0 * rng.uniform() - 1.0;
  const double phi = 2.0 * std::numbers::pi * rng.uniform();
  const double s = std::sqrt(std::max(0.0, 1.0 - mu * mu));
  return {s * std::cos(phi), s * std::sin(phi), mu};
}

Vec3 sample_velocity_uniform(const VelocitySpace& vs, Rng& rng) {
  const double a = vs.v_min() * vs.v_min() * vs.v_min();
  const double b = vs.v_max() * vs.v_max() * vs.v_max();
  const double rho = std::cbrt(a + rng.uniform() * (b - a));
  return rho * sample_direction(rng);
}

Vec3 sample_point_uniform(const Domain& d, Rng& rng) {
  const AxisBox bb = d.bounds();
  for (;;) {
    Vec3 p;
    for (int i = 0; i < 3; ++i) p[i] = bb.lo[i] + rng.uniform() * (bb.hi[i] - bb.lo[i]);
    if (contains(d, p)) return p;
  }
}

}  // namespace ntmc

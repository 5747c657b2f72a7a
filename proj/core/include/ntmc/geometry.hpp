#pragma once

#include <variant>
#include <vector>

#include "ntmc/rng.hpp"
#include "ntmc/vec3.hpp"

namespace ntmc {

struct Ball {
  Vec3 center;
  double radius = 1.0;
};

struct AxisBox {
  Vec3 lo;
  Vec3 hi;
};

/**
 * Bounded convex spatial region: a ball or an axis-aligned box.
 *
 * Membership is strict: points on the boundary are outside.
 */
class Domain {
 public:
  using Shape = std::variant<Ball, AxisBox>;

  /// Throws std::invalid_argument when radius <= 0 or lo >= hi on some axis.
  static Domain ball(Vec3 center, double radius);
  static Domain box(Vec3 lo, Vec3 hi);

  const Shape& shape() const { return shape_; }
  bool is_ball() const { return std::holds_alternative<Ball>(shape_); }

  /// Axis-aligned bounding box of the closure.
  AxisBox bounds() const;

  /// Center of the ball or midpoint of the box.
  Vec3 centroid() const;

  double diameter() const;

 private:
  explicit Domain(Shape s) : shape_(s) {}
  Shape shape_;
};

bool contains(const Domain& d, const Vec3& r);

/// First t > 0 with r + v t outside d. Throws DomainError if r is not inside d or v == 0.
double exit_time(const Domain& d, const Vec3& r, const Vec3& v);

/**
 * Parameters t > 0 at which the line r + v t crosses the boundary of d,
 * in increasing order. The start point may lie anywhere.
 */
std::vector<double> boundary_crossings(const Domain& d, const Vec3& r, const Vec3& v);

/// Annulus {v : v_min <= |v| <= v_max} of admissible velocities.
class VelocitySpace {
 public:
  /// Throws std::invalid_argument unless 0 < v_min < v_max < inf.
  VelocitySpace(double v_min, double v_max);

  double v_min() const { return v_min_; }
  double v_max() const { return v_max_; }

  bool contains(const Vec3& v) const;

 private:
  double v_min_;
  double v_max_;
};

/// Lebesgue volume (4 pi / 3)(v_max^3 - v_min^3).
double volume(const VelocitySpace& vs);
double volume(double v_min, double v_max);

/// Uniform draw on the unit sphere.
Vec3 sample_direction(Rng& rng);

/// Draw from the normalized Lebesgue measure on the velocity annulus.
Vec3 sample_velocity_uniform(const VelocitySpace& vs, Rng& rng);

/// Uniform draw inside the domain (rejection from the bounding box).
Vec3 sample_point_uniform(const Domain& d, Rng& rng);

}  // namespace ntmc

#pragma once

#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "ntmc/geometry.hpp"
#include "ntmc/rng.hpp"

namespace ntmc {

/// Outgoing-velocity law shared by scatter and (normalized) fission kernels.
/// The law does not depend on the incoming velocity.
struct KernelSpec {
  struct Atom {
    Vec3 velocity;
    double weight = 0.0;
  };

  enum class Kind { isotropic_uniform, finite_atoms };

  Kind kind = Kind::isotropic_uniform;
  std::vector<Atom> atoms;  // only for finite_atoms; weights sum to 1

  static KernelSpec isotropic() { return {}; }
  static KernelSpec finite(std::vector<Atom> atoms) { return {Kind::finite_atoms, std::move(atoms)}; }

  bool is_isotropic() const { return kind == Kind::isotropic_uniform; }

  /// Lebesgue density for the isotropic kind; atom mass at v (exact match) for finite atoms.
  double density(const VelocitySpace& vs, const Vec3& v) const;

  Vec3 sample(const VelocitySpace& vs, Rng& rng) const;
};

/// Piecewise-constant material data on a sub-region (or the rest of D).
struct MaterialRegion {
  std::optional<Domain> region;  // nullopt means "rest of D"
  double sigma_s = 0.0;
  double sigma_f = 0.0;
  double fission_mean = 0.0;  // m = integral of pi_f over V
  KernelSpec scatter_kernel;
  KernelSpec fission_kernel;

  double alpha() const { return sigma_s + sigma_f * fission_mean; }
  double beta() const { return sigma_f * (fission_mean - 1.0); }
  double sigma() const { return sigma_s + sigma_f; }
};

/// Shared-velocity mechanism: N in {0, n_max}, all offspring share one velocity.
struct SharedVelocityOffspring {};

/// N drawn from a fixed pmf; velocities iid from the fission kernel.
struct IidOffspring {
  std::vector<double> pmf;  // pmf[k] = P(N = k)
  double mean() const;
};

using OffspringMode = std::variant<SharedVelocityOffspring, IidOffspring>;

struct OffspringDraw {
  std::vector<Vec3> velocities;
  int count() const { return static_cast<int>(velocities.size()); }
};

/**
 * Complete physical model: domain, velocity annulus, ordered material regions
 * (first match wins; the last region must cover every point of D) and the
 * offspring mechanism.
 */
class MaterialModel {
 public:
  /// Validates every invariant; throws ModelError with a readable message.
  MaterialModel(Domain domain, VelocitySpace vspace, std::vector<MaterialRegion> regions,
                OffspringMode offspring = SharedVelocityOffspring{});

  const Domain& domain() const { return domain_; }
  const VelocitySpace& vspace() const { return vspace_; }
  const std::vector<MaterialRegion>& regions() const { return regions_; }
  const OffspringMode& offspring_mode() const { return offspring_; }
  bool shared_velocity_mode() const { return std::holds_alternative<SharedVelocityOffspring>(offspring_); }

  /// Largest possible offspring count.
  int n_max() const { return n_max_; }

  /// Index of the first region containing r. Does not check membership in D.
  std::size_t region_index(const Vec3& r) const;
  const MaterialRegion& region_at(const Vec3& r) const { return regions_[region_index(r)]; }

  /// Times in (0, t_max) at which the ray r + v t may change region.
  std::vector<double> region_breaks(const Vec3& r, const Vec3& v, double t_max) const;

  bool has_fission() const;
  bool all_isotropic() const;

  /// Warnings collected during validation (e.g. regions with alpha == 0).
  const std::vector<std::string>& warnings() const { return warnings_; }

 private:
  Domain domain_;
  VelocitySpace vspace_;
  std::vector<MaterialRegion> regions_;
  OffspringMode offspring_;
  int n_max_ = 1;
  std::vector<std::string> warnings_;
};

/// sigma_s + sigma_f * m. Throws DomainError when r is outside D.
double alpha(const MaterialModel& mm, const Vec3& r, const Vec3& v);

/// (sigma_s pi_s + sigma_f pi_f) / alpha at (r, v, v'). Throws ModelError when alpha == 0.
double pi_density(const MaterialModel& mm, const Vec3& r, const Vec3& v, const Vec3& v_out);

/// sigma_f (m - 1). Throws DomainError when r is outside D.
double beta(const MaterialModel& mm, const Vec3& r, const Vec3& v);

/// Supremum of beta over D x V (exact for piecewise-constant regions).
double beta_bar(const MaterialModel& mm);

/// Draw the new velocity of an (alpha, pi)-walk jump in region `reg`.
Vec3 sample_pi(const MaterialModel& mm, const MaterialRegion& reg, Rng& rng);

/// Offspring point process at a fission event. Requires sigma_f(r) > 0.
OffspringDraw draw_offspring(const MaterialModel& mm, const Vec3& r, const Vec3& v, Rng& rng);

}  // namespace ntmc

#include "ntmc/materials.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "ntmc/errors.hpp"

namespace ntmc {

double KernelSpec::density(const VelocitySpace& vs, const Vec3& v) const {
  if (is_isotropic()) return vs.contains(v) ? 1.0 / volume(vs) : 0.0;
  double mass = 0.0;
  for (const auto& a : atoms) {
    if (a.velocity == v) mass += a.weight;
  }
  return mass;
}

Vec3 KernelSpec::sample(const VelocitySpace& vs, Rng& rng) const {
  if (is_isotropic()) return sample_velocity_uniform(vs, rng);
  double u = rng.uniform();
  for (const auto& a : atoms) {
    if (u < a.weight) return a.velocity;
    u -= a.weight;
  }
  return atoms.back().velocity;
}

double IidOffspring::mean() const {
  double m = 0.0;
  for (std::size_t k = 0; k < pmf.size(); ++k) m += static_cast<double>(k) * pmf[k];
  return m;
}

namespace {

void check_kernel(const KernelSpec& k, const VelocitySpace& vs, const std::string& what) {
  if (k.is_isotropic()) return;
  if (k.atoms.empty()) throw ModelError(what + ": finite-atom kernel has no atoms");
  double total = 0.0;
  for (const auto& a : k.atoms) {
    if (!(a.weight >= 0.0)) throw ModelError(what + ": atom weights must be nonnegative");
    if (!vs.contains(a.velocity)) throw ModelError(what + ": atom velocity outside V");
    total += a.weight;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ModelError(what + ": atom weights must sum to 1");
}

}  // namespace

MaterialModel::MaterialModel(Domain domain, VelocitySpace vspace, std::vector<MaterialRegion> regions,
                             OffspringMode offspring)
    : domain_(std::move(domain)),
      vspace_(vspace),
      regions_(std::move(regions)),
      offspring_(std::move(offspring)) {
  if (regions_.empty()) throw ModelError("regions must cover domain");
  if (regions_.back().region.has_value()) {
    // A trailing explicit shape covers D only when D is inside it; test via the bounding corners and centroid.
    const Domain& last = *regions_.back().region;
    const AxisBox bb = domain_.bounds();
    bool covers = true;
    if (domain_.is_ball()) {
      const auto& b = std::get<Ball>(domain_.shape());
      for (int i = 0; i < 3 && covers; ++i) {
        for (double s : {-1.0, 1.0}) {
          Vec3 p = b.center;
          p[i] += s * b.radius * (1.0 - 1e-12);
          covers = covers && contains(last, p);
        }
      }
    } else {
      for (int c = 0; c < 8 && covers; ++c) {
        Vec3 p;
        for (int i = 0; i < 3; ++i) {
          const double t = ((c >> i) & 1) ? 1.0 - 1e-12 : 1e-12;
          p[i] = bb.lo[i] + t * (bb.hi[i] - bb.lo[i]);
        }
        covers = covers && contains(last, p);
      }
    }
    if (!covers) throw ModelError("regions must cover domain");
  }

  double sup_m = 0.0;
  bool fission = false;
  for (std::size_t i = 0; i < regions_.size(); ++i) {
    const auto& reg = regions_[i];
    const std::string where = "regions[" + std::to_string(i) + "]";
    for (double x : {reg.sigma_s, reg.sigma_f, reg.fission_mean}) {
      if (!(x >= 0.0) || !std::isfinite(x)) throw ModelError(where + ": rates and fission_mean must be finite and >= 0");
    }
    check_kernel(reg.scatter_kernel, vspace_, where + ".scatter_kernel");
    check_kernel(reg.fission_kernel, vspace_, where + ".fission_kernel");
    if (reg.sigma_f > 0.0 && reg.fission_mean > 0.0) {
      fission = true;
      sup_m = std::max(sup_m, reg.fission_mean);
    }
    if (reg.alpha() == 0.0) warnings_.push_back(where + ": alpha == 0, walk kernel positivity fails in this region");
  }

  if (const auto* iid = std::get_if<IidOffspring>(&offspring_)) {
    double total = 0.0;
    for (double p : iid->pmf) {
      if (!(p >= 0.0)) throw ModelError("offspring.pmf entries must be nonnegative");
      total += p;
    }
    if (iid->pmf.empty() || std::abs(total - 1.0) > 1e-9) throw ModelError("offspring.pmf must sum to 1");
    for (std::size_t i = 0; i < regions_.size(); ++i) {
      const auto& reg = regions_[i];
      if (reg.sigma_f > 0.0 && std::abs(reg.fission_mean - iid->mean()) > 1e-9) {
        throw ModelError("regions[" + std::to_string(i) + "].fission_mean must equal the offspring pmf mean");
      }
    }
    n_max_ = std::max(1, static_cast<int>(iid->pmf.size()) - 1);
  } else {
    const int k = std::max(1, static_cast<int>(std::ceil(sup_m - 1e-12)));
    n_max_ = fission ? std::max(2, k) : 1;
  }
}

std::size_t MaterialModel::region_index(const Vec3& r) const {
  for (std::size_t i = 0; i + 1 < regions_.size(); ++i) {
    if (!regions_[i].region || contains(*regions_[i].region, r)) return i;
  }
  return regions_.size() - 1;
}

std::vector<double> MaterialModel::region_breaks(const Vec3& r, const Vec3& v, double t_max) const {
  std::vector<double> out;
  for (std::size_t i = 0; i + 1 < regions_.size(); ++i) {
    if (!regions_[i].region) break;
    for (double t : boundary_crossings(*regions_[i].region, r, v)) {
      if (t < t_max) out.push_back(t);
    }
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

bool MaterialModel::has_fission() const {
  return std::any_of(regions_.begin(), regions_.end(),
                     [](const MaterialRegion& r) { return r.sigma_f > 0.0 && r.fission_mean > 0.0; });
}

bool MaterialModel::all_isotropic() const {
  return std::all_of(regions_.begin(), regions_.end(), [](const MaterialRegion& r) {
    return r.scatter_kernel.is_isotropic() && r.fission_kernel.is_isotropic();
  });
}

double alpha(const MaterialModel& mm, const Vec3& r, const Vec3&) {
  if (!contains(mm.domain(), r)) throw DomainError("alpha: point outside domain");
  return mm.region_at(r).alpha();
}

double pi_density(const MaterialModel& mm, const Vec3& r, const Vec3& v, const Vec3& v_out) {
  const double a = alpha(mm, r, v);
  if (a == 0.0) throw ModelError("pi_density: alpha == 0, walk kernel undefined");
  const auto& reg = mm.region_at(r);
  const double s = reg.sigma_s * reg.scatter_kernel.density(mm.vspace(), v_out);
  const double f = reg.sigma_f * reg.fission_mean * reg.fission_kernel.density(mm.vspace(), v_out);
  return (s + f) / a;
}

double beta(const MaterialModel& mm, const Vec3& r, const Vec3&) {
  if (!contains(mm.domain(), r)) throw DomainError("beta: point outside domain");
  return mm.region_at(r).beta();
}

double beta_bar(const MaterialModel& mm) {
  // Only the last region is guaranteed to be visited; earlier ones may lie
  // partly outside D, which still contributes to the supremum.
  double b = -std::numeric_limits<double>::infinity();
  for (const auto& reg : mm.regions()) b = std::max(b, reg.beta());
  return b;
}

Vec3 sample_pi(const MaterialModel& mm, const MaterialRegion& reg, Rng& rng) {
  const double a = reg.alpha();
  if (a == 0.0) throw ModelError("sample_pi: alpha == 0");
  if (rng.uniform() * a < reg.sigma_s) return reg.scatter_kernel.sample(mm.vspace(), rng);
  return reg.fission_kernel.sample(mm.vspace(), rng);
}

OffspringDraw draw_offspring(const MaterialModel& mm, const Vec3& r, const Vec3&, Rng& rng) {
  const auto& reg = mm.region_at(r);
  if (!(reg.sigma_f > 0.0)) throw ModelError("draw_offspring: no fission at this point");
  OffspringDraw out;
  if (const auto* iid = std::get_if<IidOffspring>(&mm.offspring_mode())) {
    double u = rng.uniform();
    std::size_t n = iid->pmf.size() - 1;
    for (std::size_t k = 0; k < iid->pmf.size(); ++k) {
      if (u < iid->pmf[k]) {
        n = k;
        break;
      }
      u -= iid->pmf[k];
    }
    out.velocities.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.velocities.push_back(reg.fission_kernel.sample(mm.vspace(), rng));
    return out;
  }
  const int n_max = mm.n_max();
  const double p = reg.fission_mean / n_max;
  if (p > 1.0 + 1e-12) throw InvariantError("draw_offspring: fission_mean exceeds n_max");
  if (rng.uniform() < p) {
    const Vec3 v = reg.fission_kernel.sample(mm.vspace(), rng);
    out.velocities.assign(static_cast<std::size_t>(n_max), v);
  }
  return out;
}

}  // namespace ntmc

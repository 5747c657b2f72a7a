#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <vector>

#include "ntmc/materials.hpp"

namespace ntmc::test {

inline MaterialRegion region(double sigma_s, double sigma_f, double m) {
  MaterialRegion r;
  r.sigma_s = sigma_s;
  r.sigma_f = sigma_f;
  r.fission_mean = m;
  return r;
}

inline std::shared_ptr<const MaterialModel> ball_model(double radius, double sigma_s, double sigma_f, double m) {
  return std::make_shared<const MaterialModel>(Domain::ball({0, 0, 0}, radius), VelocitySpace(0.5, 1.0),
                                               std::vector<MaterialRegion>{region(sigma_s, sigma_f, m)});
}

inline std::shared_ptr<const MaterialModel> benchmark_a() { return ball_model(1.0, 1.0, 0.5, 1.2); }
inline std::shared_ptr<const MaterialModel> free_space() { return ball_model(100.0, 1.0, 0.5, 1.2); }

inline const Vec3 kOrigin{0, 0, 0};
inline const Vec3 kStartV{0.75, 0, 0};

/// |a - b| in units of the combined standard error.
inline double z_score(double a, double se_a, double b, double se_b) {
  const double se = std::hypot(se_a, se_b);
  return se > 0.0 ? std::abs(a - b) / se : (a == b ? 0.0 : INFINITY);
}

/// Asymptotic Kolmogorov-Smirnov p-value of a sample against a CDF.
template <class Cdf>
double ks_pvalue(std::vector<double> x, Cdf cdf) {
  std::sort(x.begin(), x.end());
  const double n = static_cast<double>(x.size());
  double d = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double f = cdf(x[i]);
    d = std::max({d, f - static_cast<double>(i) / n, static_cast<double>(i + 1) / n - f});
  }
  const double lam = (std::sqrt(n) + 0.12 + 0.11 / std::sqrt(n)) * d;
  double p = 0.0;
  for (int k = 1; k <= 100; ++k) p += 2.0 * ((k % 2) ? 1.0 : -1.0) * std::exp(-2.0 * k * k * lam * lam);
  return std::clamp(p, 0.0, 1.0);
}

}  // namespace ntmc::test

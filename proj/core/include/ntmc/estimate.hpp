#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace ntmc {

/// Monte Carlo point estimate with its standard error.
struct EstimateWithError {
  double mean = 0.0;
  double std_error = 0.0;
  std::int64_t trials_used = 0;
  std::int64_t trials_truncated = 0;
  double sum_sq_dev = 0.0;        // sum of squared deviations, kept for exact pooling
  std::uint64_t config_hash = 0;  // identifies the experiment a shard belongs to

  bool valid() const { return trials_used >= 1; }
};

/// Pool shards of one experiment (same config_hash) in the order given.
/// Throws std::invalid_argument on an empty list or mismatched configs.
EstimateWithError combine_estimates(std::span<const EstimateWithError> shards);

/**
 * Streaming first and second moments of a K-vector of per-trial values.
 *
 * Values are folded in with Welford updates and partial sums are merged with
 * the pairwise (Chan) rule, so the result depends only on the order of merges.
 */
class Moments {
 public:
  explicit Moments(std::size_t k = 1) : k_(k), mean_(k, 0.0), co_(k * k, 0.0) {}

  void add(std::span<const double> x);
  void add(double x) { add(std::span<const double>(&x, 1)); }
  void merge(const Moments& other);

  std::size_t dim() const { return k_; }
  std::int64_t count() const { return n_; }
  double mean(std::size_t i = 0) const { return mean_[i]; }
  /// Sample covariance of components i and j.
  double covariance(std::size_t i, std::size_t j) const;
  /// Covariance of the sample means of components i and j.
  double mean_covariance(std::size_t i, std::size_t j) const;

  EstimateWithError estimate(std::size_t i = 0, std::int64_t truncated = 0) const;

 private:
  std::size_t k_;
  std::int64_t n_ = 0;
  std::vector<double> mean_;
  std::vector<double> co_;
};

/// Number of trials folded into one partial sum before block merging.
inline constexpr std::int64_t kMomentBlock = 4096;

/// Blocked reduction of per-trial vectors given in trial order. Block boundaries are
/// aligned to absolute trial indices starting at `first_trial`. Empty rows
/// (truncated trials) are skipped.
Moments summarize(std::span<const std::vector<double>> rows, std::int64_t first_trial = 0);

/// Delta-method estimate of log(mean_j) - log(mean_i) divided by `scale`, with its SE.
EstimateWithError log_ratio(const Moments& m, std::size_t i, std::size_t j, double scale);

}  // namespace ntmc

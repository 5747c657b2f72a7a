#include "ntmc/estimate.hpp"

#include <cmath>
#include <stdexcept>

#include "ntmc/errors.hpp"

namespace ntmc {

namespace {

double standard_error(double m2, std::int64_t n) {
  if (n < 2) return 0.0;
  const double var = m2 / static_cast<double>(n - 1);
  return std::sqrt(var / static_cast<double>(n));
}

// Pairwise tree reduction in fixed order.
template <class T, class Merge>
T tree_reduce(std::vector<T> items, Merge merge) {
  while (items.size() > 1) {
    std::vector<T> next;
    next.reserve((items.size() + 1) / 2);
    for (std::size_t i = 0; i + 1 < items.size(); i += 2) {
      T a = items[i];
      merge(a, items[i + 1]);
      next.push_back(std::move(a));
    }
    if (items.size() % 2 == 1) next.push_back(items.back());
    items = std::move(next);
  }
  return items.front();
}

}  // namespace

void Moments::add(std::span<const double> x) {
  if (x.size() != k_) throw std::invalid_argument("Moments::add: dimension mismatch");
  ++n_;
  const double inv = 1.0 / static_cast<double>(n_);
  std::vector<double> delta(k_);
  for (std::size_t i = 0; i < k_; ++i) {
    delta[i] = x[i] - mean_[i];
    mean_[i] += delta[i] * inv;
  }
  for (std::size_t i = 0; i < k_; ++i) {
    const double after = x[i] - mean_[i];
    for (std::size_t j = 0; j < k_; ++j) co_[i * k_ + j] += delta[j] * after;
  }
}

void Moments::merge(const Moments& other) {
  if (other.k_ != k_) throw std::invalid_argument("Moments::merge: dimension mismatch");
  if (other.n_ == 0) return;
  if (n_ == 0) {
    *this = other;
    return;
  }
  const double na = static_cast<double>(n_);
  const double nb = static_cast<double>(other.n_);
  const double n = na + nb;
  std::vector<double> delta(k_);
  for (std::size_t i = 0; i < k_; ++i) delta[i] = other.mean_[i] - mean_[i];
  for (std::size_t i = 0; i < k_; ++i) {
    for (std::size_t j = 0; j < k_; ++j) {
      co_[i * k_ + j] = co_[i * k_ + j] + other.co_[i * k_ + j] + delta[i] * delta[j] * (na * nb / n);
    }
  }
  for (std::size_t i = 0; i < k_; ++i) mean_[i] = mean_[i] + delta[i] * (nb / n);
  n_ += other.n_;
}

double Moments::covariance(std::size_t i, std::size_t j) const {
  if (n_ < 2) return 0.0;
  return co_[i * k_ + j] / static_cast<double>(n_ - 1);
}

double Moments::mean_covariance(std::size_t i, std::size_t j) const {
  if (n_ < 2) return 0.0;
  return covariance(i, j) / static_cast<double>(n_);
}

EstimateWithError Moments::estimate(std::size_t i, std::int64_t truncated) const {
  EstimateWithError e;
  e.mean = mean_[i];
  e.sum_sq_dev = co_[i * k_ + i];
  e.trials_used = n_;
  e.trials_truncated = truncated;
  e.std_error = standard_error(e.sum_sq_dev, n_);
  return e;
}

Moments summarize(std::span<const std::vector<double>> rows, std::int64_t first_trial) {
  std::size_t k = 1;
  for (const auto& row : rows) {
    if (!row.empty()) {
      k = row.size();
      break;
    }
  }
  std::vector<Moments> blocks;
  Moments current(k);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const std::int64_t index = first_trial + static_cast<std::int64_t>(r);
    if (r > 0 && index % kMomentBlock == 0) {
      blocks.push_back(current);
      current = Moments(k);
    }
    if (!rows[r].empty()) current.add(rows[r]);
  }
  blocks.push_back(current);
  return tree_reduce(std::move(blocks), [](Moments& a, const Moments& b) { a.merge(b); });
}

EstimateWithError combine_estimates(std::span<const EstimateWithError> shards) {
  if (shards.empty()) throw std::invalid_argument("combine_estimates: no shards");
  for (const auto& s : shards) {
    if (s.config_hash != shards.front().config_hash) {
      throw std::invalid_argument("combine_estimates: shards come from different configs");
    }
  }
  std::vector<EstimateWithError> items(shards.begin(), shards.end());
  EstimateWithError out = tree_reduce(std::move(items), [](EstimateWithError& a, const EstimateWithError& b) {
    if (b.trials_used == 0) {
      a.trials_truncated += b.trials_truncated;
      return;
    }
    if (a.trials_used == 0) {
      const auto trunc = a.trials_truncated;
      a = b;
      a.trials_truncated += trunc;
      return;
    }
    const double na = static_cast<double>(a.trials_used);
    const double nb = static_cast<double>(b.trials_used);
    const double n = na + nb;
    const double delta = b.mean - a.mean;
    a.sum_sq_dev = a.sum_sq_dev + b.sum_sq_dev + delta * delta * (na * nb / n);
    a.mean = a.mean + delta * (nb / n);
    a.trials_used += b.trials_used;
    a.trials_truncated += b.trials_truncated;
  });
  out.std_error = standard_error(out.sum_sq_dev, out.trials_used);
  return out;
}

EstimateWithError log_ratio(const Moments& m, std::size_t i, std::size_t j, double scale) {
  const double a = m.mean(i);
  const double b = m.mean(j);
  if (!(a > 0.0) || !(b > 0.0)) throw EstimationError("log_ratio: nonpositive semigroup estimate");
  EstimateWithError e;
  e.mean = (std::log(b) - std::log(a)) / scale;
  const double var = m.mean_covariance(i, i) / (a * a) + m.mean_covariance(j, j) / (b * b) -
                     2.0 * m.mean_covariance(i, j) / (a * b);
  e.std_error = std::sqrt(std::max(var, 0.0)) / std::abs(scale);
  e.trials_used = m.count();
  return e;
}

}  // namespace ntmc

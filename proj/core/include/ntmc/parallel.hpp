#pragma once

#include <algorithm>
#include <cstdint>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

#include "ntmc/rng.hpp"

namespace ntmc {

/// Which trials to run and on how many threads.
struct TrialPlan {
  std::uint64_t master_seed = 0;
  std::int64_t first_trial = 0;
  std::int64_t trials = 0;
  int threads = 1;
};

/**
 * Run fn(rng, trial_index) for every trial in the plan and return the results
 * in trial order. Each trial draws from Rng::for_trial(master_seed, index), so
 * the output does not depend on the thread count.
 */
template <class Fn>
auto run_trials(const TrialPlan& plan, Fn&& fn) {
  using Result = decltype(fn(std::declval<Rng&>(), std::int64_t{}));
  std::vector<Result> out(static_cast<std::size_t>(std::max<std::int64_t>(plan.trials, 0)));
  const int nt = std::max(1, std::min<int>(plan.threads, static_cast<int>(std::max<std::int64_t>(plan.trials, 1))));

  auto work = [&](int tid) {
    for (std::int64_t i = tid; i < plan.trials; i += nt) {
      const std::int64_t index = plan.first_trial + i;
      Rng rng = Rng::for_trial(plan.master_seed, static_cast<std::uint64_t>(index));
      out[static_cast<std::size_t>(i)] = fn(rng, index);
    }
  };

  if (nt == 1) {
    work(0);
    return out;
  }
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(nt));
  for (int t = 0; t < nt; ++t) {
    pool.emplace_back([&, t] {
      try {
        work(t);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
  return out;
}

}  // namespace ntmc

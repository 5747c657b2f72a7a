#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>

namespace ntmc {

/// SplitMix64 finalizer; used to expand seeds and hash stream keys.
constexpr std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Mix a sequence of keys into a 64-bit stream identifier.
constexpr std::uint64_t hash_keys(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) {
  std::uint64_t state = seed;
  std::uint64_t h = splitmix64(state);
  for (auto k : keys) {
    state = h ^ (k + 0x632be59bd9b4e019ULL);
    h = splitmix64(state);
  }
  return h;
}

/**
 * xoshiro256++ engine with deterministic stream splitting.
 *
 * Every trial owns a stream derived from (master_seed, trial_index), and
 * sub-streams are derived from a parent stream's identity plus integer keys.
 * Nothing here touches the clock or any global state.
 */
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed = 0) : id_(seed) {
    std::uint64_t sm = seed;
    for (auto& w : s_) w = splitmix64(sm);
  }

  /// Stream for trial `index` of a run seeded with `master_seed`.
  static Rng for_trial(std::uint64_t master_seed, std::uint64_t index) {
    return Rng(hash_keys(master_seed, {index}));
  }

  /// Independent child stream keyed by (a, b); does not advance this stream.
  Rng split(std::uint64_t a, std::uint64_t b = 0) const { return Rng(hash_keys(id_, {a, b})); }

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  /// Uniform on the open interval (0, 1).
  double uniform() {
    for (;;) {
      const double u = static_cast<double>((*this)() >> 11) * 0x1.0p-53;
      if (u > 0.0) return u;
    }
  }

  /// Exp(1) variate.
  double exponential() { return -std::log(uniform()); }

  /// Index in [0, n).
  std::uint64_t below(std::uint64_t n) { return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)) % n; }

 private:
  static constexpr std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  std::uint64_t id_;
  std::uint64_t s_[4]{};
};

}  // namespace ntmc

#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace ntmc {

/// A point or direction that violates a geometric precondition.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Kernel or model data that cannot be evaluated (e.g. alpha == 0 where pi is needed).
class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Internal invariant violation; indicates a bug rather than bad input.
class InvariantError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Monte Carlo estimation could not produce a usable result.
class EstimationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Grid operator or spectral data is unusable (instability, non-convergence, bad phi).
class SpectralError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Configuration failed validation; carries one message per offending field path.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(std::vector<std::string> errors)
      : std::runtime_error(join(errors)), errors_(std::move(errors)) {}

  const std::vector<std::string>& errors() const { return errors_; }

 private:
  static std::string join(const std::vector<std::string>& errors) {
    std::string out;
    for (const auto& e : errors) {
      if (!out.empty()) out += "; ";
      out += e;
    }
    return out;
  }

  std::vector<std::string> errors_;
};

}  // namespace ntmc

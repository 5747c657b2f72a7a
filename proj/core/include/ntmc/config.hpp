#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ntmc/branching.hpp"
#include "ntmc/spectral.hpp"

namespace ntmc {

/// Everything one experiment needs; all randomness derives from master_seed.
struct ExperimentConfig {
  std::string name;
  std::shared_ptr<const MaterialModel> model;
  Population initial;               // at least one particle
  std::vector<double> horizons;     // increasing, > 0
  std::int64_t trials = 0;
  std::uint64_t master_seed = 0;
  std::optional<GridSpec> grid;
  std::optional<RefineOptions> refine;  // only with a grid
  std::vector<double> scan;             // fission_mean values for criticality scans
  std::string output;                   // default CSV path, may be empty

  const ParticleState& start() const { return initial.particles.front(); }
  double horizon() const { return horizons.back(); }
};

/// Parse and validate a JSON config. Throws ConfigError listing every problem with its field path.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Canonical JSON (fixed key order, shortest round-trip numbers).
std::string serialize_config(const ExperimentConfig& cfg);

/// FNV-1a of the canonical serialization.
std::uint64_t config_hash(const ExperimentConfig& cfg);

/// Copy of cfg with fission_mean set to m in every region with sigma_f > 0 (shared-velocity offspring only).
ExperimentConfig with_fission_mean(const ExperimentConfig& cfg, double m);

}  // namespace ntmc

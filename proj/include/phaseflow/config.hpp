#pragma once
// Experiment configuration: a flat INI file with one section per concern.
//
//   [experiment] recipe, output_dir, workers
//   [grid]       n, alpha (comma lists), seeds, base_seed, label_mode
//   [flow]       learning_rate, max_steps, horizon_multiplier, loss_stop,
//                record_every, spectrum_every, spectrum_at_threshold,
//                test_samples, backtracking, trap_tolerance
//   [spectrum]   k, mode, histogram
//   [analysis]   plateau_window, save_labels
//   [replica]    alpha_min, alpha_max, alpha_step, outer_order, inner_order,
//                truncation
//   [bbp]        density, alpha_lo, alpha_hi
//
// Unknown sections or keys are rejected.

#include "phaseflow/dynamics.hpp"
#include "phaseflow/replica.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace phaseflow {

enum class Recipe {
  trajectories,
  spectrum_evolution,
  bbp_crossing,
  threshold_energy,
  success_fraction,
  replica_branch,
  bbp_solve,
};

std::string to_string(Recipe r);
Recipe recipe_from_string(const std::string& s);
/// Ensemble recipes run a (n, alpha, replicate) grid of flows.
bool is_ensemble(Recipe r);

struct ExperimentConfig {
  Recipe recipe = Recipe::trajectories;
  std::filesystem::path output_dir;
  int workers = 1;

  std::vector<int> n_list;
  std::vector<double> alpha_list;
  int seeds = 1;
  std::uint64_t base_seed = 1;
  LabelMode label_mode = LabelMode::teacher;

  FlowConfig flow{};
  /// Spectrum every this many steps (0: none besides the threshold trigger).
  long spectrum_every = 0;
  /// Emit a spectrum when L/N first reaches the replica threshold energy.
  bool spectrum_at_threshold = false;

  int plateau_window = 20;
  bool save_labels = false;

  double replica_alpha_min = 4.0;
  double replica_alpha_max = 16.0;
  double replica_alpha_step = 0.25;
  QuadratureSpec quadrature{};

  std::string density = "analytic";
  double bbp_alpha_lo = 8.0;
  double bbp_alpha_hi = 20.0;
};

/// Defaults that depend on the recipe (label mode, spectrum triggers).
ExperimentConfig default_config(Recipe recipe);

/// Parses an INI file; throws ConfigError naming the offending key. A given
/// recipe fills in a missing experiment.recipe and must match a present one.
ExperimentConfig load_config(const std::filesystem::path& path, std::optional<Recipe> recipe = std::nullopt);
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig parse_config(const std::string& text, std::optional<Recipe> recipe);

/// Throws ConfigError on violated invariants (empty grids, seeds < 1, ...).
void validate(const ExperimentConfig& config);

/// Canonical INI text: every field, fixed order, shortest round-trip numbers.
/// parse_config(canonical(c)) reproduces c.
std::string canonical(const ExperimentConfig& config);

/// FNV-1a of the canonical text minus output_dir and workers, which do not
/// affect results.
std::uint64_t config_hash(const ExperimentConfig& config);

/// config.workers unless PHASEFLOW_WORKERS is set to a positive integer.
int resolve_workers(const ExperimentConfig& config);

}  // namespace phaseflow

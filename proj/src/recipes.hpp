#pragma once
// Recipe-specific pieces of the experiment driver.

#include "phaseflow/experiment.hpp"

#include <filesystem>
#include <map>
#include <vector>

namespace phaseflow::detail {

/// Whether the recipe compares against or triggers on the replica prediction.
bool uses_theory(Recipe recipe);

/// Reads output_dir/theory.csv when present, otherwise solves every alpha of
/// the grid and writes it. Empty for recipes that do not use theory.
std::map<double, TheoryPoint> load_or_solve_theory(const ExperimentConfig& config);
std::map<double, TheoryPoint> read_theory(const std::filesystem::path& dir);

/// runs.csv plus the recipe aggregate; records are in grid order.
std::vector<std::filesystem::path> write_summaries(const ExperimentConfig& config,
                                                   const std::vector<RunRecord>& records,
                                                   const std::map<double, TheoryPoint>& theory);

/// replica_branch and bbp_solve; returns the written file.
std::filesystem::path run_analytic(const ExperimentConfig& config);

}  // namespace phaseflow::detail

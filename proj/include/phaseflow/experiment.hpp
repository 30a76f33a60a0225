#pragma once
// Seeded ensembles over (n, alpha, replicate) cells, run by a worker pool.
//
// Result directory layout:
//   config.ini      canonical configuration
//   manifest.txt    config hash, version, cell count
//   theory.csv      replica predictions per alpha (recipes that use them)
//   log.csv         append-only event log: event, cell, status, wall_time
//   cells/<id>/     record.txt, meta.txt, trajectory.csv, spectra.csv,
//                   hist_<step>.csv, labels.csv
//   <recipe>.csv    aggregate summary
//
// A cell is complete when record.txt parses, carries complete=1 and the
// directory's config hash. Per-cell files never contain wall time, so serial
// and parallel runs write identical cell directories.

#include "phaseflow/bbp.hpp"
#include "phaseflow/config.hpp"
#include "phaseflow/crossing.hpp"
#include "phaseflow/label_density.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace phaseflow {

inline constexpr const char* kVersion = "0.1.0";

std::uint64_t splitmix64(std::uint64_t x);

/// Deterministic cell seed from (base_seed, n, alpha, replicate).
std::uint64_t cell_seed(std::uint64_t base_seed, int n, double alpha, int replicate);

struct Cell {
  std::string id;
  int n = 0;
  double alpha = 0.0;
  int replicate = 0;
  std::uint64_t seed = 0;
};

/// Cells in grid order: n outermost, then alpha, then replicate.
std::vector<Cell> cells(const ExperimentConfig& config);

struct RunRecord {
  std::string cell_id;
  int n = 0;
  double alpha = 0.0;
  int replicate = 0;
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;
  bool ok = false;
  std::string error;  // failed cells only
  Outcome outcome = Outcome::horizon_reached;
  long steps = 0;
  double final_loss_per_n = NAN;
  double final_overlap = NAN;  // |m| at the last step; NaN without teacher
  double final_mu = NAN;
  double plateau_energy = NAN;
  LabelMoments moments{NAN, NAN, NAN, NAN};  // final-state empirical moments
  BBPDiagnostics crossing{};
  std::optional<long> detachment_step;
  /// Set when the cell was re-run because its files were corrupt.
  bool rerun_corrupt = false;
  double wall_time = 0.0;  // seconds; kept out of record.txt
};

void write_record(const std::filesystem::path& path, const RunRecord& record);
/// Throws Error when the file is missing, truncated or malformed.
RunRecord read_record(const std::filesystem::path& path);

/// Replica prediction used to trigger spectra and to compare plateaus.
struct TheoryPoint {
  double alpha = 0.0;
  bool ok = false;
  double chi = NAN;
  double z = NAN;
  double threshold_energy = NAN;
  LabelMoments moments{NAN, NAN, NAN, NAN};
};

TheoryPoint theory_point(double alpha, const QuadratureSpec& spec = {});

/// Runs one cell end to end and writes its directory. Flow failures are
/// returned as a record with ok = false rather than thrown.
RunRecord run_cell(const ExperimentConfig& config, const Cell& cell, const std::optional<TheoryPoint>& theory,
                   const std::filesystem::path& cell_dir);

struct RunOptions {
  /// 0: resolve from config and PHASEFLOW_WORKERS.
  int workers = 0;
  /// Re-run cells even when complete.
  bool force = false;
  std::function<void(const RunRecord&)> on_cell;
};

struct RunSummary {
  std::filesystem::path dir;
  std::size_t total = 0;
  std::size_t executed = 0;
  std::size_t skipped = 0;
  std::size_t failed = 0;
  std::vector<std::string> rerun_corrupt;
  std::vector<std::filesystem::path> outputs;

  /// Ensemble exit code: 0, or 3 when more than 10% of cells failed.
  int exit_code() const;
};

/// Executes the recipe into config.output_dir. Ensemble recipes fill the cell
/// grid; replica_branch writes branch.csv; bbp_solve writes bbp_report.json.
RunSummary run_recipe(const ExperimentConfig& config, const RunOptions& options = {});

/// Completes missing or corrupt cells of an existing result directory.
RunSummary resume(const std::filesystem::path& dir, const RunOptions& options = {});

/// Rebuilds the aggregate CSVs from the per-cell records; idempotent.
/// Throws NotFoundError on a directory without cells.
std::vector<std::filesystem::path> summarize(const std::filesystem::path& dir);

/// Empirical BBP solve over a result directory whose cells saved labels:
/// trapped cells are pooled per alpha.
bbp::Solution solve_empirical(const std::filesystem::path& dir);

/// Maps an exception thrown by run_recipe/resume/summarize to an exit code:
/// 2 for configuration errors, 4 for numerical failures, 1 otherwise.
int exit_code_for(const std::exception& e);

}  // namespace phaseflow

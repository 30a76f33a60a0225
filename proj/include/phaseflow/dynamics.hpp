#pragma once
// Discretised spherical gradient flow: explicit Euler on the loss followed by
// projection back onto the sphere of radius sqrt(N).

#include "phaseflow/errors.hpp"
#include "phaseflow/model.hpp"
#include "phaseflow/spectral.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace phaseflow {

struct FlowConfig {
  double learning_rate = 0.006;
  /// Fixed step budget; when empty the horizon is ceil(horizon_multiplier * log2 N).
  std::optional<long> max_steps;
  double horizon_multiplier = 1500.0;
  /// Recovery threshold on the raw loss L.
  double loss_stop = 1e-8;
  int record_every = 10;
  /// Steps at which a spectrum report is emitted.
  std::vector<long> spectrum_schedule;
  /// Also emit one report at the first step with L/N <= this value.
  std::optional<double> spectrum_trigger_energy;
  SpectrumOptions spectrum{};
  /// Fresh samples for the generalisation loss at record steps (0: off).
  int test_samples = 0;
  std::uint64_t test_seed = 7;
  /// Seed for the random initial condition.
  std::uint64_t seed = 0;
  /// Halve the step when it would increase the loss (off for plain GD).
  bool backtracking = false;
  /// Horizon-reached runs whose tangent gradient norm / sqrt(N) is below this
  /// are reported as trapped.
  double trap_tolerance = 1e-5;
};

/// Validates the invariants of a flow configuration.
void validate(const FlowConfig& config);

long horizon(const FlowConfig& config, int n);

enum class Outcome { recovered, trapped, horizon_reached };

std::string to_string(Outcome outcome);
Outcome outcome_from_string(const std::string& s);

struct FlowRecord {
  long step = 0;
  double train_loss_per_n = 0.0;
  double train_loss = 0.0;
  double test_loss = NAN;  // NaN when not computed
  double mu = 0.0;
  double overlap = NAN;  // NaN without a teacher
  double grad_norm = 0.0;  // tangent gradient norm
};

struct Trajectory {
  std::vector<FlowRecord> records;
  std::vector<SpectrumReport> spectra;
  Outcome outcome = Outcome::horizon_reached;
  Vector final_w;
  long steps_taken = 0;

  Estimator final_estimator() const { return Estimator(final_w); }
};

/// Thrown by run() when the state stops being finite; carries the records
/// collected up to that point.
class FlowBlowup : public NumericalBlowup {
 public:
  FlowBlowup(const std::string& what, long step, Trajectory prefix)
      : NumericalBlowup(what, step), prefix_(std::move(prefix)) {}
  const Trajectory& prefix() const { return prefix_; }

 private:
  Trajectory prefix_;
};

Estimator init_random(int n, std::uint64_t seed);

/// One Euler step W - eta grad L followed by renormalisation.
Estimator step(const Instance& instance, const Estimator& est, double learning_rate, long step_index = -1);

Trajectory run(const Instance& instance, const FlowConfig& config);

/// Starts the flow from a given estimator instead of a random one.
Trajectory run_from(const Instance& instance, const Estimator& start, const FlowConfig& config);

/// Median train loss per N over the last `window` records for runs that did not
/// recover; for recovered runs the median over the longest quasi-stationary
/// stretch before the final descent.
double plateau_energy(const Trajectory& trajectory, std::size_t window);

// CSV: step, train_loss_per_n, test_loss, mu, overlap, grad_norm
void write_trajectory(const std::filesystem::path& path, const Trajectory& trajectory);
std::vector<FlowRecord> read_trajectory(const std::filesystem::path& path);
void write_metadata(const std::filesystem::path& path, const std::map<std::string, std::string>& meta);
std::map<std::string, std::string> read_metadata(const std::filesystem::path& path);

}  // namespace phaseflow

#pragma once
// BBP diagnostics along a trajectory: spectrum gaps and eigenvector-teacher
// overlaps at the instant the train loss crosses the threshold energy.

#include "phaseflow/dynamics.hpp"
#include "phaseflow/spectral.hpp"

#include <optional>
#include <vector>

namespace phaseflow {

struct BBPDiagnostics {
  /// Interpolated crossing time, or the chosen report's step when not crossed.
  double crossing_step = NAN;
  long report_step = 0;
  double gap21 = NAN;
  double gap32 = NAN;
  double overlap1 = NAN;
  double overlap2 = NAN;
  double overlap1_fluctuation = NAN;  // filled by ensemble_fluctuation
  bool crossed = false;
};

BBPDiagnostics diagnostics_at(const SpectrumReport& report);

/// First downward crossing of threshold_energy by train_loss_per_n, located
/// by linear interpolation between records; diagnostics come from the
/// spectrum report nearest to it. Without a crossing the last report is used
/// and crossed is false. Throws ParameterError when there are no reports.
BBPDiagnostics threshold_crossing_report(const Trajectory& trajectory, double threshold_energy);

/// Population variance of overlap1 across the runs; stored into each entry.
double ensemble_fluctuation(std::vector<BBPDiagnostics>& runs);

struct DetachmentRule {
  double ratio = 3.0;
  int persistence = 2;
};

/// Step of the first report from which gap21 > ratio * gap32 holds for
/// `persistence` consecutive reports. Needs at least three reports.
std::optional<long> detachment_detector(const std::vector<SpectrumReport>& series, DetachmentRule rule = {});

}  // namespace phaseflow

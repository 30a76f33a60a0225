#include "phaseflow/crossing.hpp"

#include "phaseflow/errors.hpp"

#include <algorithm>
#include <cmath>

namespace phaseflow {

BBPDiagnostics diagnostics_at(const SpectrumReport& r) {
  BBPDiagnostics d;
  d.report_step = r.step;
  d.crossing_step = static_cast<double>(r.step);
  const auto& ev = r.eigenvalues;
  // Ascending order makes both gaps non-negative up to eigensolver noise.
  if (ev.size() >= 2) d.gap21 = std::max(0.0, ev[1] - ev[0]);
  if (ev.size() >= 3) d.gap32 = std::max(0.0, ev[2] - ev[1]);
  if (!r.overlaps.empty()) d.overlap1 = r.overlaps[0];
  if (r.overlaps.size() >= 2) d.overlap2 = r.overlaps[1];
  return d;
}

BBPDiagnostics threshold_crossing_report(const Trajectory& traj, double threshold_energy) {
  if (traj.spectra.empty()) throw ParameterError("trajectory carries no spectrum reports");
  const auto& rec = traj.records;
  std::optional<double> when;
  for (std::size_t i = 1; i < rec.size(); ++i) {
    const double a = rec[i - 1].train_loss_per_n;
    const double b = rec[i].train_loss_per_n;
    if (a > threshold_energy && b <= threshold_energy) {
      const double frac = (a - threshold_energy) / (a - b);
      when = static_cast<double>(rec[i - 1].step) + frac * static_cast<double>(rec[i].step - rec[i - 1].step);
      break;
    }
  }
  if (!when) {
    BBPDiagnostics d = diagnostics_at(traj.spectra.back());
    d.crossed = false;
    return d;
  }
  const SpectrumReport* best = &traj.spectra.front();
  for (const SpectrumReport& r : traj.spectra) {
    if (std::abs(static_cast<double>(r.step) - *when) < std::abs(static_cast<double>(best->step) - *when)) best = &r;
  }
  BBPDiagnostics d = diagnostics_at(*best);
  d.crossing_step = *when;
  d.crossed = true;
  return d;
}

double ensemble_fluctuation(std::vector<BBPDiagnostics>& runs) {
  double mean = 0.0;
  int count = 0;
  for (const auto& r : runs) {
    if (std::isfinite(r.overlap1)) {
      mean += r.overlap1;
      ++count;
    }
  }
  if (count == 0) return NAN;
  mean /= count;
  double var = 0.0;
  for (const auto& r : runs) {
    if (std::isfinite(r.overlap1)) var += (r.overlap1 - mean) * (r.overlap1 - mean);
  }
  var /= count;
  for (auto& r : runs) r.overlap1_fluctuation = var;
  return var;
}

std::optional<long> detachment_detector(const std::vector<SpectrumReport>& series, DetachmentRule rule) {
  if (series.size() < 3) throw ParameterError("detachment detection needs at least three reports");
  if (rule.persistence < 1) throw ParameterError("persistence must be positive");
  int run = 0;
  for (std::size_t i = 0; i < series.size(); ++i) {
    const BBPDiagnostics d = diagnostics_at(series[i]);
    const bool detached = std::isfinite(d.gap21) && std::isfinite(d.gap32) && d.gap21 > rule.ratio * d.gap32;
    run = detached ? run + 1 : 0;
    if (run == rule.persistence) return series[i + 1 - static_cast<std::size_t>(rule.persistence)].step;
  }
  return std::nullopt;
}

}  // namespace phaseflow

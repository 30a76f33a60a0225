#include "phaseflow/dynamics.hpp"

#include "phaseflow/csv.hpp"
#include "phaseflow/errors.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

namespace phaseflow {

void validate(const FlowConfig& c) {
  if (!(c.learning_rate > 0.0)) throw ParameterError("learning_rate must be positive");
  if (!(c.loss_stop >= 0.0)) throw ParameterError("loss_stop must be non-negative");
  if (c.record_every < 1) throw ParameterError("record_every must be positive");
  if (c.max_steps && *c.max_steps < 0) throw ParameterError("max_steps must be non-negative");
  if (!c.max_steps && !(c.horizon_multiplier > 0.0)) throw ParameterError("horizon_multiplier must be positive");
  if (c.test_samples < 0) throw ParameterError("test_samples must be non-negative");
}

long horizon(const FlowConfig& config, int n) {
  if (config.max_steps) return *config.max_steps;
  return static_cast<long>(std::ceil(config.horizon_multiplier * std::log2(static_cast<double>(n))));
}

std::string to_string(Outcome outcome) {
  switch (outcome) {
    case Outcome::recovered: return "recovered";
    case Outcome::trapped: return "trapped";
    case Outcome::horizon_reached: return "horizon_reached";
  }
  return "unknown";
}

Outcome outcome_from_string(const std::string& s) {
  if (s == "recovered") return Outcome::recovered;
  if (s == "trapped") return Outcome::trapped;
  if (s == "horizon_reached") return Outcome::horizon_reached;
  throw ParameterError("unknown outcome '" + s + "'");
}

Estimator init_random(int n, std::uint64_t seed) {
  if (n < 2) throw ParameterError("n must be at least 2");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Vector w(n);
  for (int i = 0; i < n; ++i) w[i] = normal(rng);
  return Estimator::normalized(w);
}

namespace {

double sphere_radius(Eigen::Index n) { return std::sqrt(static_cast<double>(n)); }

Vector retract(const Vector& w, const Vector& grad, double eta, long step_index) {
  Vector next = w - eta * grad;
  const double norm = next.norm();
  if (!std::isfinite(norm) || !(norm > 0.0)) {
    throw NumericalBlowup("non-finite state after step " + std::to_string(step_index), step_index);
  }
  next *= sphere_radius(w.size()) / norm;
  return next;
}

}  // namespace

Estimator step(const Instance& instance, const Estimator& est, double learning_rate, long step_index) {
  const LocalGeometry g = local_geometry(instance, est.w());
  if (!std::isfinite(g.loss)) {
    throw NumericalBlowup("non-finite loss at step " + std::to_string(step_index), step_index);
  }
  return Estimator(retract(est.w(), g.gradient, learning_rate, step_index));
}

Trajectory run(const Instance& instance, const FlowConfig& config) {
  return run_from(instance, init_random(instance.n, config.seed), config);
}

Trajectory run_from(const Instance& instance, const Estimator& start, const FlowConfig& config) {
  validate(config);
  if (start.n() != instance.n) throw DimensionError("initial estimator dimension mismatch");
  const long last = horizon(config, instance.n);
  const double n = static_cast<double>(instance.n);

  std::vector<long> schedule = config.spectrum_schedule;
  std::sort(schedule.begin(), schedule.end());
  auto next_spectrum = schedule.begin();
  bool trigger_armed = config.spectrum_trigger_energy.has_value();

  Trajectory traj;
  Vector w = start.w();
  LocalGeometry geom = local_geometry(instance, w);

  const auto record = [&](long t) {
    FlowRecord r;
    r.step = t;
    r.train_loss = geom.loss;
    r.train_loss_per_n = geom.loss / n;
    r.mu = geom.mu;
    r.grad_norm = geom.tangent_gradient_norm;
    if (instance.teacher) r.overlap = w.dot(*instance.teacher) / n;
    if (config.test_samples > 0 && instance.teacher) {
      r.test_loss = test_loss(instance, Estimator(w), config.test_samples, config.test_seed);
    }
    traj.records.push_back(r);
  };

  long t = 0;
  for (;; ++t) {
    if (!std::isfinite(geom.loss) || !geom.gradient.allFinite()) {
      traj.final_w = w;
      traj.steps_taken = t;
      throw FlowBlowup("numerical blowup at step " + std::to_string(t), t, std::move(traj));
    }
    const bool recovered = geom.loss < config.loss_stop;
    const bool at_horizon = t >= last;
    const bool stopping = recovered || at_horizon;
    if (t % config.record_every == 0 || stopping) record(t);

    bool want_spectrum = false;
    while (next_spectrum != schedule.end() && *next_spectrum <= t) {
      if (*next_spectrum == t) want_spectrum = true;
      ++next_spectrum;
    }
    if (trigger_armed && geom.loss / n <= *config.spectrum_trigger_energy) {
      want_spectrum = true;
      trigger_armed = false;
    }
    if (want_spectrum) {
      traj.spectra.push_back(low_spectrum(instance, Estimator(w), config.spectrum, t));
    }

    if (recovered) {
      traj.outcome = Outcome::recovered;
      break;
    }
    if (at_horizon) {
      const bool stationary = t > 0 && geom.tangent_gradient_norm / std::sqrt(n) < config.trap_tolerance;
      traj.outcome = stationary ? Outcome::trapped : Outcome::horizon_reached;
      break;
    }

    double eta = config.learning_rate;
    Vector next;
    LocalGeometry next_geom;
    for (int attempt = 0;; ++attempt) {
      try {
        next = retract(w, geom.gradient, eta, t);
      } catch (const NumericalBlowup&) {
        traj.final_w = w;
        traj.steps_taken = t;
        throw FlowBlowup("numerical blowup at step " + std::to_string(t), t, std::move(traj));
      }
      next_geom = local_geometry(instance, next);
      if (!config.backtracking || next_geom.loss <= geom.loss || attempt >= 30) break;
      eta *= 0.5;
    }
    w = std::move(next);
    geom = std::move(next_geom);
  }
  traj.final_w = w;
  traj.steps_taken = t;
  return traj;
}

double plateau_energy(const Trajectory& trajectory, std::size_t window) {
  const auto& recs = trajectory.records;
  if (window == 0) throw ParameterError("window must be positive");
  if (recs.size() < window) {
    throw ParameterError("window of " + std::to_string(window) + " exceeds the " +
                         std::to_string(recs.size()) + " recorded points");
  }
  const auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t h = v.size() / 2;
    return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
  };
  if (trajectory.outcome != Outcome::recovered) {
    std::vector<double> tail;
    for (std::size_t i = recs.size() - window; i < recs.size(); ++i) tail.push_back(recs[i].train_loss_per_n);
    return median(std::move(tail));
  }
  // Longest stretch of consecutive records whose relative change stays below
  // 1e-3, ignoring the converged tail near zero loss.
  constexpr double rel_tol = 1e-3;
  constexpr double floor = 1e-6;
  std::size_t best_begin = 0;
  std::size_t best_len = 0;
  std::size_t begin = 0;
  for (std::size_t i = 1; i <= recs.size(); ++i) {
    const bool continues = i < recs.size() && recs[i].train_loss_per_n > floor &&
                           recs[i - 1].train_loss_per_n > floor &&
                           std::abs(recs[i].train_loss_per_n - recs[i - 1].train_loss_per_n) <=
                               rel_tol * recs[i - 1].train_loss_per_n;
    if (!continues) {
      const std::size_t len = i - begin;
      if (len > best_len && recs[begin].train_loss_per_n > floor) {
        best_len = len;
        best_begin = begin;
      }
      begin = i;
    }
  }
  if (best_len < 2) throw ParameterError("recovered trajectory shows no plateau");
  std::vector<double> seg;
  for (std::size_t i = best_begin; i < best_begin + best_len; ++i) seg.push_back(recs[i].train_loss_per_n);
  return median(std::move(seg));
}

void write_trajectory(const std::filesystem::path& path, const Trajectory& trajectory) {
  csv::Table t;
  t.header = {"step", "train_loss_per_n", "test_loss", "mu", "overlap", "grad_norm"};
  for (const auto& r : trajectory.records) {
    t.rows.push_back({csv::format(static_cast<long long>(r.step)), csv::format(r.train_loss_per_n),
                      csv::format(r.test_loss), csv::format(r.mu), csv::format(r.overlap),
                      csv::format(r.grad_norm)});
  }
  csv::write(path, t);
}

std::vector<FlowRecord> read_trajectory(const std::filesystem::path& path) {
  const csv::Table t = csv::read(path);
  const std::size_t c_step = t.column("step"), c_loss = t.column("train_loss_per_n"),
                    c_test = t.column("test_loss"), c_mu = t.column("mu"), c_ov = t.column("overlap"),
                    c_g = t.column("grad_norm");
  std::vector<FlowRecord> out;
  for (const auto& row : t.rows) {
    FlowRecord r;
    r.step = csv::parse_int(row[c_step]);
    r.train_loss_per_n = csv::parse_double(row[c_loss]);
    r.test_loss = csv::parse_double(row[c_test]);
    r.mu = csv::parse_double(row[c_mu]);
    r.overlap = csv::parse_double(row[c_ov]);
    r.grad_norm = csv::parse_double(row[c_g]);
    out.push_back(r);
  }
  return out;
}

void write_metadata(const std::filesystem::path& path, const std::map<std::string, std::string>& meta) {
  std::ostringstream out;
  for (const auto& [k, v] : meta) out << k << '=' << v << '\n';
  csv::write_text(path, out.str());
}

std::map<std::string, std::string> read_metadata(const std::filesystem::path& path) {
  std::istringstream in(csv::read_text(path));
  std::map<std::string, std::string> meta;
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    meta[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return meta;
}

}  // namespace phaseflow

#include "recipes.hpp"

#include "phaseflow/bbp.hpp"
#include "phaseflow/csv.hpp"
#include "phaseflow/errors.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <chrono>
#include <cmath>

namespace phaseflow {

namespace fs = std::filesystem;

TheoryPoint theory_point(double alpha, const QuadratureSpec& spec) {
  TheoryPoint p;
  p.alpha = alpha;
  SaddleOptions opts;
  opts.spec = spec;
  try {
    const SaddleSolution s = solve_threshold(alpha, opts);
    p.ok = true;
    p.chi = s.chi;
    p.z = s.z;
    p.threshold_energy = s.threshold_energy;
    p.moments = LabelDensity::analytic(s).moments();
  } catch (const Error&) {
    p.ok = false;
  }
  return p;
}

namespace {

std::string hex(std::uint64_t v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void write_labels(const fs::path& path, const Instance& inst, const Vector& w) {
  const Vector yh = inst.sensing * w;
  csv::Table t;
  t.header = {"yhat", "y"};
  for (Eigen::Index m = 0; m < yh.size(); ++m) {
    t.rows.push_back({csv::format(yh[m]), csv::format(std::sqrt(inst.labels[m]))});
  }
  csv::write(path, t);
}

LabelDensity read_labels(const fs::path& path) {
  const csv::Table t = csv::read(path);
  const std::size_t a = t.column("yhat");
  const std::size_t b = t.column("y");
  std::vector<double> yh, y;
  for (const auto& row : t.rows) {
    yh.push_back(csv::parse_double(row[a]));
    y.push_back(csv::parse_double(row[b]));
  }
  return LabelDensity::empirical(yh, y);
}

}  // namespace

RunRecord run_cell(const ExperimentConfig& config, const Cell& cell, const std::optional<TheoryPoint>& theory,
                   const fs::path& dir) {
  const auto start = std::chrono::steady_clock::now();
  fs::create_directories(dir);
  RunRecord rec;
  rec.cell_id = cell.id;
  rec.n = cell.n;
  rec.alpha = cell.alpha;
  rec.replicate = cell.replicate;
  rec.seed = cell.seed;
  rec.config_hash = config_hash(config);

  write_metadata(dir / "meta.txt", {
                                       {"config_hash", hex(rec.config_hash)},
                                       {"seed", std::to_string(cell.seed)},
                                       {"version", kVersion},
                                       {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." +
                                                     std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                                     std::to_string(EIGEN_MINOR_VERSION)},
                                       {"recipe", to_string(config.recipe)},
                                       {"n", std::to_string(cell.n)},
                                       {"alpha", csv::format(cell.alpha)},
                                       {"replicate", std::to_string(cell.replicate)},
                                       {"label_mode", to_string(config.label_mode)},
                                   });

  const Instance inst = generate_instance(cell.n, cell.alpha, config.label_mode, cell.seed);
  FlowConfig flow = config.flow;
  flow.seed = splitmix64(cell.seed ^ 0x1);
  flow.test_seed = splitmix64(cell.seed ^ 0x2);
  const long last = horizon(flow, cell.n);
  if (config.spectrum_every > 0) {
    for (long s = 0; s <= last; s += config.spectrum_every) flow.spectrum_schedule.push_back(s);
  }
  const bool have_theory = theory && theory->ok;
  if (config.spectrum_at_threshold && have_theory) flow.spectrum_trigger_energy = theory->threshold_energy;

  Trajectory traj;
  try {
    traj = run(inst, flow);
    rec.ok = true;
  } catch (const FlowBlowup& e) {
    traj = e.prefix();
    rec.error = e.what();
  } catch (const Error& e) {
    rec.error = e.what();
  }

  if (rec.ok && (config.recipe == Recipe::bbp_crossing || config.recipe == Recipe::spectrum_evolution)) {
    // Runs that never reach the threshold still report their final spectrum.
    const bool have_final = !traj.spectra.empty() && traj.spectra.back().step == traj.steps_taken;
    const bool crossed_trigger = flow.spectrum_trigger_energy && !traj.spectra.empty();
    if (!have_final && (config.recipe == Recipe::spectrum_evolution || !crossed_trigger)) {
      try {
        traj.spectra.push_back(low_spectrum(inst, Estimator(traj.final_w), flow.spectrum, traj.steps_taken));
      } catch (const Error& e) {
        rec.ok = false;
        rec.error = e.what();
      }
    }
  }

  rec.outcome = traj.outcome;
  rec.steps = traj.steps_taken;
  if (!traj.records.empty()) {
    const FlowRecord& f = traj.records.back();
    rec.final_loss_per_n = f.train_loss_per_n;
    rec.final_mu = f.mu;
    rec.final_overlap = std::abs(f.overlap);
  }
  if (rec.ok) {
    try {
      rec.plateau_energy = plateau_energy(traj, static_cast<std::size_t>(config.plateau_window));
    } catch (const ParameterError&) {
    }
    rec.moments = LabelDensity::from_state(inst, traj.final_w).moments();
    if (!traj.spectra.empty()) {
      if (have_theory) {
        rec.crossing = threshold_crossing_report(traj, theory->threshold_energy);
      } else {
        rec.crossing = diagnostics_at(traj.spectra.back());
        rec.crossing.crossed = false;
      }
      if (traj.spectra.size() >= 3) rec.detachment_step = detachment_detector(traj.spectra);
    }
    if (config.save_labels) write_labels(dir / "labels.csv", inst, traj.final_w);
  }

  write_trajectory(dir / "trajectory.csv", traj);
  if (!traj.spectra.empty()) {
    write_spectra(dir / "spectra.csv", traj.spectra);
    for (const SpectrumReport& r : traj.spectra) {
      if (r.bulk) write_histogram(dir / ("hist_" + std::to_string(r.step) + ".csv"), *r.bulk);
    }
  }
  write_record(dir / "record.txt", rec);
  rec.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rec;
}

bbp::Solution solve_empirical(const fs::path& dir) {
  const ExperimentConfig config = load_config(dir / "config.ini");
  std::map<double, std::vector<LabelDensity>> parts;
  for (const Cell& c : cells(config)) {
    const fs::path cell_dir = dir / "cells" / c.id;
    RunRecord r;
    try {
      r = read_record(cell_dir / "record.txt");
    } catch (const Error&) {
      continue;
    }
    if (!r.ok || r.outcome == Outcome::recovered || !fs::exists(cell_dir / "labels.csv")) continue;
    parts[c.alpha].push_back(read_labels(cell_dir / "labels.csv"));
  }
  if (parts.empty()) throw NotFoundError("no trapped cells with saved labels in " + dir.string(), {});

  bbp::Solution sol;
  std::vector<bbp::Evaluation> evals;
  for (const auto& [alpha, list] : parts) {
    try {
      const bbp::Evaluation e = bbp::evaluate(LabelDensity::pooled(list), alpha);
      sol.curve.emplace_back(alpha, e.compatibility);
      evals.push_back(e);
    } catch (const DomainError&) {
    } catch (const ConvergenceError&) {
    }
  }
  const std::optional<double> root = bbp::last_sign_change(sol.curve);
  if (!root) throw NotFoundError("empirical compatibility residual keeps its sign", sol.curve);
  const auto nearest = std::min_element(evals.begin(), evals.end(), [&](const auto& a, const auto& b) {
    return std::abs(a.alpha - *root) < std::abs(b.alpha - *root);
  });
  sol.alpha_bbp = *root;
  sol.lambda_bar = nearest->lambda_bar;
  sol.mu = nearest->mu;
  sol.psi_at_bar = nearest->psi_at_bar;
  sol.residuals = nearest->residuals;
  sol.extras.emplace_back("alpha_nearest", nearest->alpha);
  sol.extras.emplace_back("alphas_evaluated", static_cast<double>(evals.size()));
  return sol;
}

namespace detail {

bool uses_theory(Recipe r) {
  return r == Recipe::trajectories || r == Recipe::spectrum_evolution || r == Recipe::bbp_crossing ||
         r == Recipe::threshold_energy;
}

std::map<double, TheoryPoint> read_theory(const fs::path& dir) {
  std::map<double, TheoryPoint> out;
  const fs::path path = dir / "theory.csv";
  if (!fs::exists(path)) return out;
  const csv::Table t = csv::read(path);
  for (const auto& row : t.rows) {
    const auto get = [&](const char* name) { return csv::parse_double(row[t.column(name)]); };
    TheoryPoint p;
    p.alpha = get("alpha");
    p.ok = csv::parse_int(row[t.column("ok")]) == 1;
    p.chi = get("chi");
    p.z = get("z");
    p.threshold_energy = get("threshold_energy");
    p.moments = {get("m_yhat2"), get("m_yhat4"), get("m_yhat2_y2"), get("m_loss")};
    out[p.alpha] = p;
  }
  return out;
}

std::map<double, TheoryPoint> load_or_solve_theory(const ExperimentConfig& config) {
  if (!uses_theory(config.recipe)) return {};
  std::map<double, TheoryPoint> out = read_theory(config.output_dir);
  bool changed = false;
  for (double a : config.alpha_list) {
    if (out.count(a)) continue;
    out[a] = theory_point(a, config.quadrature);
    changed = true;
  }
  if (changed) {
    csv::Table t;
    t.header = {"alpha", "ok", "chi", "z", "threshold_energy", "m_yhat2", "m_yhat4", "m_yhat2_y2", "m_loss"};
    for (const auto& [a, p] : out) {
      t.rows.push_back({csv::format(a), p.ok ? "1" : "0", csv::format(p.chi), csv::format(p.z),
                        csv::format(p.threshold_energy), csv::format(p.moments.yhat2), csv::format(p.moments.yhat4),
                        csv::format(p.moments.yhat2_y2), csv::format(p.moments.loss)});
    }
    csv::write(config.output_dir / "theory.csv", t);
  }
  return out;
}

namespace {

double median(std::vector<double> v) {
  v.erase(std::remove_if(v.begin(), v.end(), [](double x) { return !std::isfinite(x); }), v.end());
  if (v.empty()) return NAN;
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  int c = 0;
  for (double x : v) {
    if (std::isfinite(x)) {
      s += x;
      ++c;
    }
  }
  return c ? s / c : NAN;
}

double standard_error(const std::vector<double>& v) {
  const double m = mean(v);
  double s = 0.0;
  int c = 0;
  for (double x : v) {
    if (std::isfinite(x)) {
      s += (x - m) * (x - m);
      ++c;
    }
  }
  return c > 1 ? std::sqrt(s / (c - 1) / c) : NAN;
}

std::string fmt(double v) { return csv::format(v); }
std::string fmt(std::size_t v) { return std::to_string(v); }

struct Group {
  int n;
  double alpha;
  std::vector<const RunRecord*> all;
  std::vector<const RunRecord*> ok;
};

// Groups in grid order: n as listed, then alpha as listed.
std::vector<Group> group(const ExperimentConfig& config, const std::vector<RunRecord>& records) {
  std::vector<Group> out;
  for (int n : config.n_list) {
    for (double a : config.alpha_list) {
      Group g{n, a, {}, {}};
      for (const RunRecord& r : records) {
        if (r.n != n || r.alpha != a) continue;
        g.all.push_back(&r);
        if (r.ok) g.ok.push_back(&r);
      }
      if (!g.all.empty()) out.push_back(std::move(g));
    }
  }
  return out;
}

template <class F>
std::vector<double> collect(const std::vector<const RunRecord*>& runs, F&& f) {
  std::vector<double> v;
  for (const RunRecord* r : runs) v.push_back(f(*r));
  return v;
}

std::size_t count(const std::vector<const RunRecord*>& runs, Outcome o) {
  return static_cast<std::size_t>(
      std::count_if(runs.begin(), runs.end(), [&](const RunRecord* r) { return r->outcome == o; }));
}

double theory_energy(const std::map<double, TheoryPoint>& theory, double alpha) {
  const auto it = theory.find(alpha);
  return it != theory.end() && it->second.ok ? it->second.threshold_energy : NAN;
}

}  // namespace

std::vector<fs::path> write_summaries(const ExperimentConfig& config, const std::vector<RunRecord>& records,
                                      const std::map<double, TheoryPoint>& theory) {
  const fs::path dir = config.output_dir;
  const std::vector<Group> groups = group(config, records);

  // Ensemble fluctuation of the eigenvector overlap per (n, alpha).
  std::map<std::string, double> fluctuation;
  for (const Group& g : groups) {
    std::vector<BBPDiagnostics> d;
    for (const RunRecord* r : g.ok) d.push_back(r->crossing);
    const double var = ensemble_fluctuation(d);
    for (const RunRecord* r : g.all) fluctuation[r->cell_id] = var;
  }

  csv::Table runs;
  runs.header = {"cell", "n", "alpha", "replicate", "seed", "ok", "outcome", "steps", "final_loss_per_n",
                 "final_overlap", "final_mu", "plateau_energy", "m_yhat2", "m_yhat4", "m_yhat2_y2", "m_loss",
                 "crossed", "crossing_step", "report_step", "gap21", "gap32", "overlap1", "overlap2",
                 "overlap1_fluctuation", "detachment_step", "rerun_corrupt"};
  for (const Group& g : groups) {
    for (const RunRecord* r : g.all) {
      runs.rows.push_back({r->cell_id, std::to_string(r->n), fmt(r->alpha), std::to_string(r->replicate),
                           std::to_string(r->seed), r->ok ? "1" : "0", to_string(r->outcome),
                           std::to_string(r->steps), fmt(r->final_loss_per_n), fmt(r->final_overlap),
                           fmt(r->final_mu), fmt(r->plateau_energy), fmt(r->moments.yhat2), fmt(r->moments.yhat4),
                           fmt(r->moments.yhat2_y2), fmt(r->moments.loss), r->crossing.crossed ? "1" : "0",
                           fmt(r->crossing.crossing_step), std::to_string(r->crossing.report_step),
                           fmt(r->crossing.gap21), fmt(r->crossing.gap32), fmt(r->crossing.overlap1),
                           fmt(r->crossing.overlap2), fmt(fluctuation[r->cell_id]),
                           r->detachment_step ? std::to_string(*r->detachment_step) : "nan",
                           r->rerun_corrupt ? "1" : "0"});
    }
  }
  std::vector<fs::path> written{dir / "runs.csv"};
  csv::write(written.back(), runs);

  csv::Table agg;
  const auto key = [](const Group& g) {
    return std::vector<std::string>{std::to_string(g.n), fmt(g.alpha)};
  };
  switch (config.recipe) {
    case Recipe::success_fraction: {
      agg.header = {"n", "alpha", "n_runs", "n_success", "fraction", "n_overlap_099", "overlap_fraction", "n_failed"};
      for (const Group& g : groups) {
        const std::size_t ok = g.ok.size();
        const std::size_t success = count(g.ok, Outcome::recovered);
        const std::size_t aligned = static_cast<std::size_t>(std::count_if(
            g.ok.begin(), g.ok.end(), [](const RunRecord* r) { return r->final_overlap > 0.99; }));
        auto row = key(g);
        for (const std::string& s :
             {fmt(ok), fmt(success), fmt(ok ? static_cast<double>(success) / ok : NAN), fmt(aligned),
              fmt(ok ? static_cast<double>(aligned) / ok : NAN), fmt(g.all.size() - ok)}) {
          row.push_back(s);
        }
        agg.rows.push_back(std::move(row));
      }
      break;
    }
    case Recipe::trajectories: {
      agg.header = {"n", "alpha", "n_runs", "n_recovered", "n_trapped", "n_horizon", "median_final_loss",
                    "median_plateau", "theory_energy", "n_failed"};
      for (const Group& g : groups) {
        auto row = key(g);
        for (const std::string& s :
             {fmt(g.ok.size()), fmt(count(g.ok, Outcome::recovered)), fmt(count(g.ok, Outcome::trapped)),
              fmt(count(g.ok, Outcome::horizon_reached)),
              fmt(median(collect(g.ok, [](const RunRecord& r) { return r.final_loss_per_n; }))),
              fmt(median(collect(g.ok, [](const RunRecord& r) { return r.plateau_energy; }))),
              fmt(theory_energy(theory, g.alpha)), fmt(g.all.size() - g.ok.size())}) {
          row.push_back(s);
        }
        agg.rows.push_back(std::move(row));
      }
      break;
    }
    case Recipe::threshold_energy: {
      agg.header = {"n", "alpha", "n_runs", "n_plateau", "median_plateau", "mean_plateau", "se_plateau",
                    "theory_energy", "rel_dev", "m_yhat2", "m_yhat4", "m_yhat2_y2", "m_loss",
                    "theory_m_yhat2", "theory_m_yhat4", "theory_m_yhat2_y2", "theory_m_loss", "n_failed"};
      for (const Group& g : groups) {
        std::vector<const RunRecord*> stuck;
        for (const RunRecord* r : g.ok) {
          if (r->outcome != Outcome::recovered) stuck.push_back(r);
        }
        const auto plateaus = collect(stuck, [](const RunRecord& r) { return r.plateau_energy; });
        const double th = theory_energy(theory, g.alpha);
        const double med = median(plateaus);
        const auto it = theory.find(g.alpha);
        const LabelMoments tm = it != theory.end() && it->second.ok ? it->second.moments
                                                                    : LabelMoments{NAN, NAN, NAN, NAN};
        auto row = key(g);
        for (const std::string& s :
             {fmt(g.ok.size()), fmt(stuck.size()), fmt(med), fmt(mean(plateaus)), fmt(standard_error(plateaus)),
              fmt(th), fmt((med - th) / th),
              fmt(mean(collect(stuck, [](const RunRecord& r) { return r.moments.yhat2; }))),
              fmt(mean(collect(stuck, [](const RunRecord& r) { return r.moments.yhat4; }))),
              fmt(mean(collect(stuck, [](const RunRecord& r) { return r.moments.yhat2_y2; }))),
              fmt(mean(collect(stuck, [](const RunRecord& r) { return r.moments.loss; }))), fmt(tm.yhat2),
              fmt(tm.yhat4), fmt(tm.yhat2_y2), fmt(tm.loss), fmt(g.all.size() - g.ok.size())}) {
          row.push_back(s);
        }
        agg.rows.push_back(std::move(row));
      }
      break;
    }
    case Recipe::bbp_crossing: {
      agg.header = {"n", "alpha", "n_runs", "n_recovered", "n_crossed", "median_overlap1_recovered",
                    "median_overlap1_trapped", "overlap1_fluctuation", "null_overlap", "median_gap21",
                    "median_gap32", "theory_energy", "n_failed"};
      for (const Group& g : groups) {
        std::vector<const RunRecord*> rec, stuck;
        for (const RunRecord* r : g.ok) (r->outcome == Outcome::recovered ? rec : stuck).push_back(r);
        const auto ov = [](const RunRecord& r) { return r.crossing.overlap1; };
        auto row = key(g);
        for (const std::string& s :
             {fmt(g.ok.size()), fmt(rec.size()),
              fmt(static_cast<std::size_t>(
                  std::count_if(g.ok.begin(), g.ok.end(), [](const RunRecord* r) { return r->crossing.crossed; }))),
              fmt(median(collect(rec, ov))), fmt(median(collect(stuck, ov))),
              fmt(g.all.empty() ? NAN : fluctuation[g.all.front()->cell_id]), fmt(1.0 / std::sqrt(double(g.n))),
              fmt(median(collect(g.ok, [](const RunRecord& r) { return r.crossing.gap21; }))),
              fmt(median(collect(g.ok, [](const RunRecord& r) { return r.crossing.gap32; }))),
              fmt(theory_energy(theory, g.alpha)), fmt(g.all.size() - g.ok.size())}) {
          row.push_back(s);
        }
        agg.rows.push_back(std::move(row));
      }
      break;
    }
    case Recipe::spectrum_evolution: {
      agg.header = {"n", "alpha", "n_runs", "n_detached", "median_detachment_step", "theory_energy", "n_failed"};
      for (const Group& g : groups) {
        const auto steps = collect(g.ok, [](const RunRecord& r) {
          return r.detachment_step ? static_cast<double>(*r.detachment_step) : NAN;
        });
        const std::size_t detached = static_cast<std::size_t>(
            std::count_if(steps.begin(), steps.end(), [](double s) { return std::isfinite(s); }));
        auto row = key(g);
        for (const std::string& s : {fmt(g.ok.size()), fmt(detached), fmt(median(steps)),
                                     fmt(theory_energy(theory, g.alpha)), fmt(g.all.size() - g.ok.size())}) {
          row.push_back(s);
        }
        agg.rows.push_back(std::move(row));
      }
      break;
    }
    default:
      throw ParameterError("recipe " + to_string(config.recipe) + " has no ensemble summary");
  }
  written.push_back(dir / (to_string(config.recipe) + ".csv"));
  csv::write(written.back(), agg);
  return written;
}

fs::path run_analytic(const ExperimentConfig& config) {
  SaddleOptions saddle;
  saddle.spec = config.quadrature;
  if (config.recipe == Recipe::replica_branch) {
    saddle.alpha_min = std::min(saddle.alpha_min, config.replica_alpha_min);
    const auto branch =
        solve_branch(config.replica_alpha_min, config.replica_alpha_max, config.replica_alpha_step, saddle);
    const fs::path out = config.output_dir / "branch.csv";
    write_branch(out, branch);
    return out;
  }
  bbp::Solution sol;
  if (config.density == "analytic") {
    bbp::SolveOptions opts;
    opts.alpha_lo = config.bbp_alpha_lo;
    opts.alpha_hi = config.bbp_alpha_hi;
    sol = bbp::solve_analytic(opts, saddle);
  } else {
    sol = solve_empirical(config.density.substr(std::string("empirical:").size()));
  }
  const fs::path out = config.output_dir / "bbp_report.json";
  bbp::write_report(out, sol);
  return out;
}

}  // namespace detail

}  // namespace phaseflow

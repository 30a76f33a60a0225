#include "phaseflow/experiment.hpp"

#include "phaseflow/csv.hpp"
#include "phaseflow/errors.hpp"
#include "recipes.hpp"

#include <atomic>
#include <bit>
#include <chrono>
#include <exception>
#include <fstream>
#include <mutex>
#include <thread>

namespace phaseflow {

namespace fs = std::filesystem;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

std::uint64_t cell_seed(std::uint64_t base_seed, int n, double alpha, int replicate) {
  std::uint64_t h = splitmix64(base_seed);
  h = splitmix64(h ^ static_cast<std::uint64_t>(n));
  h = splitmix64(h ^ std::bit_cast<std::uint64_t>(alpha));
  return splitmix64(h ^ static_cast<std::uint64_t>(replicate));
}

std::vector<Cell> cells(const ExperimentConfig& config) {
  std::vector<Cell> out;
  for (int n : config.n_list) {
    for (double a : config.alpha_list) {
      for (int r = 0; r < config.seeds; ++r) {
        char rep[16];
        std::snprintf(rep, sizeof(rep), "%04d", r);
        out.push_back({"n" + std::to_string(n) + "_a" + csv::format(a) + "_r" + rep, n, a, r,
                       cell_seed(config.base_seed, n, a, r)});
      }
    }
  }
  return out;
}

namespace {

std::string hex(std::uint64_t v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t parse_hex(const std::string& s) {
  if (s.size() != 16) throw ParameterError("bad hash '" + s + "'");
  std::size_t used = 0;
  const unsigned long long v = std::stoull(s, &used, 16);
  if (used != s.size()) throw ParameterError("bad hash '" + s + "'");
  return v;
}

std::string one_line(std::string s) {
  for (char& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

}  // namespace

void write_record(const fs::path& path, const RunRecord& r) {
  const auto f = [](double v) { return csv::format(v); };
  const std::map<std::string, std::string> meta{
      {"cell", r.cell_id},
      {"n", std::to_string(r.n)},
      {"alpha", f(r.alpha)},
      {"replicate", std::to_string(r.replicate)},
      {"seed", std::to_string(r.seed)},
      {"config_hash", hex(r.config_hash)},
      {"ok", r.ok ? "1" : "0"},
      {"error", one_line(r.error)},
      {"outcome", to_string(r.outcome)},
      {"steps", std::to_string(r.steps)},
      {"final_loss_per_n", f(r.final_loss_per_n)},
      {"final_overlap", f(r.final_overlap)},
      {"final_mu", f(r.final_mu)},
      {"plateau_energy", f(r.plateau_energy)},
      {"m_yhat2", f(r.moments.yhat2)},
      {"m_yhat4", f(r.moments.yhat4)},
      {"m_yhat2_y2", f(r.moments.yhat2_y2)},
      {"m_loss", f(r.moments.loss)},
      {"crossed", r.crossing.crossed ? "1" : "0"},
      {"crossing_step", f(r.crossing.crossing_step)},
      {"report_step", std::to_string(r.crossing.report_step)},
      {"gap21", f(r.crossing.gap21)},
      {"gap32", f(r.crossing.gap32)},
      {"overlap1", f(r.crossing.overlap1)},
      {"overlap2", f(r.crossing.overlap2)},
      {"detachment_step", r.detachment_step ? std::to_string(*r.detachment_step) : "none"},
      {"rerun_corrupt", r.rerun_corrupt ? "1" : "0"},
      {"complete", "1"},
  };
  write_metadata(path, meta);
}

RunRecord read_record(const fs::path& path) {
  if (!fs::exists(path)) throw ParameterError("missing record " + path.string());
  const auto meta = read_metadata(path);
  const auto get = [&](const std::string& key) -> const std::string& {
    const auto it = meta.find(key);
    if (it == meta.end()) throw ParameterError("record " + path.string() + " lacks '" + key + "'");
    return it->second;
  };
  if (get("complete") != "1") throw ParameterError("record " + path.string() + " is incomplete");
  const auto flag = [&](const std::string& key) {
    const std::string& v = get(key);
    if (v != "0" && v != "1") throw ParameterError("record flag '" + key + "' is malformed");
    return v == "1";
  };
  RunRecord r;
  r.cell_id = get("cell");
  r.n = static_cast<int>(csv::parse_int(get("n")));
  r.alpha = csv::parse_double(get("alpha"));
  r.replicate = static_cast<int>(csv::parse_int(get("replicate")));
  r.seed = std::stoull(get("seed"));
  r.config_hash = parse_hex(get("config_hash"));
  r.ok = flag("ok");
  r.error = get("error");
  r.outcome = outcome_from_string(get("outcome"));
  r.steps = static_cast<long>(csv::parse_int(get("steps")));
  r.final_loss_per_n = csv::parse_double(get("final_loss_per_n"));
  r.final_overlap = csv::parse_double(get("final_overlap"));
  r.final_mu = csv::parse_double(get("final_mu"));
  r.plateau_energy = csv::parse_double(get("plateau_energy"));
  r.moments.yhat2 = csv::parse_double(get("m_yhat2"));
  r.moments.yhat4 = csv::parse_double(get("m_yhat4"));
  r.moments.yhat2_y2 = csv::parse_double(get("m_yhat2_y2"));
  r.moments.loss = csv::parse_double(get("m_loss"));
  r.crossing.crossed = flag("crossed");
  r.crossing.crossing_step = csv::parse_double(get("crossing_step"));
  r.crossing.report_step = static_cast<long>(csv::parse_int(get("report_step")));
  r.crossing.gap21 = csv::parse_double(get("gap21"));
  r.crossing.gap32 = csv::parse_double(get("gap32"));
  r.crossing.overlap1 = csv::parse_double(get("overlap1"));
  r.crossing.overlap2 = csv::parse_double(get("overlap2"));
  const std::string& det = get("detachment_step");
  if (det != "none") r.detachment_step = static_cast<long>(csv::parse_int(det));
  r.rerun_corrupt = flag("rerun_corrupt");
  return r;
}

int RunSummary::exit_code() const { return failed * 10 > total ? 3 : 0; }

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const ParameterError*>(&e)) return 2;
  if (dynamic_cast<const NumericalBlowup*>(&e) || dynamic_cast<const ConvergenceError*>(&e) ||
      dynamic_cast<const DomainError*>(&e) || dynamic_cast<const NotFoundError*>(&e)) {
    return 4;
  }
  return 1;
}

namespace {

enum class CellState { missing, complete, corrupt };

// A complete cell has a readable record with this configuration's hash and,
// when it succeeded, a trajectory that ends at the recorded step.
CellState inspect(const fs::path& dir, std::uint64_t hash) {
  const fs::path rec_path = dir / "record.txt";
  if (!fs::exists(dir) || !fs::exists(rec_path)) return fs::exists(dir) ? CellState::corrupt : CellState::missing;
  try {
    const RunRecord r = read_record(rec_path);
    if (r.config_hash != hash) return CellState::corrupt;
    if (r.ok) {
      const auto recs = read_trajectory(dir / "trajectory.csv");
      if (recs.empty() || recs.back().step != r.steps) return CellState::corrupt;
    }
    return CellState::complete;
  } catch (const std::exception&) {
    return CellState::corrupt;
  }
}

class EventLog {
 public:
  explicit EventLog(fs::path path) : path_(std::move(path)) {
    if (!fs::exists(path_)) {
      std::ofstream out(path_);
      out << "event,cell,status,wall_time\n";
    }
  }
  void append(const std::string& event, const std::string& cell, const std::string& status, double wall) {
    std::lock_guard lock(mutex_);
    std::ofstream out(path_, std::ios::app);
    out << event << ',' << cell << ',' << status << ',' << csv::format(wall) << '\n';
  }

 private:
  fs::path path_;
  std::mutex mutex_;
};

void write_manifest(const fs::path& dir, const ExperimentConfig& config) {
  std::map<std::string, std::string> meta{
      {"config_hash", hex(config_hash(config))},
      {"version", kVersion},
      {"recipe", to_string(config.recipe)},
      {"cells", std::to_string(is_ensemble(config.recipe) ? cells(config).size() : 0)},
  };
  write_metadata(dir / "manifest.txt", meta);
}

RunSummary execute(const ExperimentConfig& config, const RunOptions& options) {
  const fs::path dir = config.output_dir;
  RunSummary summary;
  summary.dir = dir;
  const std::uint64_t hash = config_hash(config);

  const std::vector<Cell> grid = cells(config);
  summary.total = grid.size();
  std::map<double, TheoryPoint> theory = detail::load_or_solve_theory(config);

  EventLog log(dir / "log.csv");
  std::vector<std::pair<Cell, bool>> pending;  // (cell, was corrupt)
  for (const Cell& c : grid) {
    const CellState s = inspect(dir / "cells" / c.id, hash);
    if (s == CellState::complete && !options.force) {
      ++summary.skipped;
      continue;
    }
    if (s == CellState::corrupt) {
      summary.rerun_corrupt.push_back(c.id);
      log.append("corrupt", c.id, "rerun", 0.0);
    }
    pending.emplace_back(c, s == CellState::corrupt);
  }

  const int workers = std::max(1, options.workers > 0 ? options.workers : resolve_workers(config));
  std::atomic<std::size_t> next{0};
  std::mutex mutex;
  std::exception_ptr failure;
  const auto worker = [&] {
    for (std::size_t i = next++; i < pending.size(); i = next++) {
      {
        std::lock_guard lock(mutex);
        if (failure) return;
      }
      const auto& [cell, corrupt] = pending[i];
      try {
        const fs::path cell_dir = dir / "cells" / cell.id;
        if (corrupt || options.force) fs::remove_all(cell_dir);
        const auto th = theory.find(cell.alpha);
        const std::optional<TheoryPoint> tp =
            th == theory.end() ? std::nullopt : std::optional<TheoryPoint>(th->second);
        RunRecord rec = run_cell(config, cell, tp, cell_dir);
        if (corrupt) {
          rec.rerun_corrupt = true;
          write_record(cell_dir / "record.txt", rec);
        }
        log.append("run", cell.id, rec.ok ? "ok" : "failed", rec.wall_time);
        std::lock_guard lock(mutex);
        if (options.on_cell) options.on_cell(rec);
      } catch (...) {
        std::lock_guard lock(mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  const int spawn = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(workers), pending.size()));
  for (int i = 1; i < spawn; ++i) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);

  summary.executed = pending.size();
  // Count failures over the whole grid so a resumed directory reports them too.
  for (const Cell& c : grid) {
    try {
      if (!read_record(dir / "cells" / c.id / "record.txt").ok) ++summary.failed;
    } catch (const Error&) {
      ++summary.failed;
    }
  }
  summary.outputs = summarize(dir);
  return summary;
}

ExperimentConfig config_in(const fs::path& dir) {
  const fs::path path = dir / "config.ini";
  if (!fs::exists(path)) throw NotFoundError("no config.ini in " + dir.string(), {});
  ExperimentConfig c = load_config(path);
  c.output_dir = dir;
  return c;
}

}  // namespace

RunSummary run_recipe(const ExperimentConfig& config, const RunOptions& options) {
  validate(config);
  if (config.output_dir.empty()) throw ConfigError("experiment.output_dir is required");
  const fs::path dir = config.output_dir;
  fs::create_directories(dir);
  const fs::path ini = dir / "config.ini";
  if (fs::exists(ini) && !options.force) {
    const ExperimentConfig existing = load_config(ini);
    if (config_hash(existing) != config_hash(config)) {
      throw ConfigError("output directory " + dir.string() + " holds results of a different configuration");
    }
  }
  csv::write_text(ini, canonical(config));
  write_manifest(dir, config);

  if (!is_ensemble(config.recipe)) {
    RunSummary s;
    s.dir = dir;
    s.outputs.push_back(detail::run_analytic(config));
    return s;
  }
  return execute(config, options);
}

RunSummary resume(const fs::path& dir, const RunOptions& options) {
  const ExperimentConfig config = config_in(dir);
  if (!is_ensemble(config.recipe)) return run_recipe(config, options);
  return execute(config, options);
}

std::vector<fs::path> summarize(const fs::path& dir) {
  const ExperimentConfig config = config_in(dir);
  if (!is_ensemble(config.recipe)) throw ParameterError("recipe " + to_string(config.recipe) + " has no cells");
  std::vector<RunRecord> records;
  for (const Cell& c : cells(config)) {
    try {
      records.push_back(read_record(dir / "cells" / c.id / "record.txt"));
    } catch (const Error&) {
    }
  }
  if (records.empty()) throw NotFoundError("no complete cells in " + dir.string(), {});
  return detail::write_summaries(config, records, detail::read_theory(dir));
}

}  // namespace phaseflow

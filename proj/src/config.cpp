#include "phaseflow/config.hpp"

#include "phaseflow/csv.hpp"
#include "phaseflow/errors.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <cctype>
#include <cstdlib>
#include <functional>
#include <map>
#include <sstream>

namespace phaseflow {

namespace pt = boost::property_tree;

std::string to_string(Recipe r) {
  switch (r) {
    case Recipe::trajectories: return "trajectories";
    case Recipe::spectrum_evolution: return "spectrum_evolution";
    case Recipe::bbp_crossing: return "bbp_crossing";
    case Recipe::threshold_energy: return "threshold_energy";
    case Recipe::success_fraction: return "success_fraction";
    case Recipe::replica_branch: return "replica_branch";
    case Recipe::bbp_solve: return "bbp_solve";
  }
  return "unknown";
}

Recipe recipe_from_string(const std::string& s) {
  for (Recipe r : {Recipe::trajectories, Recipe::spectrum_evolution, Recipe::bbp_crossing, Recipe::threshold_energy,
                   Recipe::success_fraction, Recipe::replica_branch, Recipe::bbp_solve}) {
    if (to_string(r) == s) return r;
  }
  throw ConfigError("unknown recipe '" + s + "'");
}

bool is_ensemble(Recipe r) { return r != Recipe::replica_branch && r != Recipe::bbp_solve; }

ExperimentConfig default_config(Recipe recipe) {
  ExperimentConfig c;
  c.recipe = recipe;
  switch (recipe) {
    case Recipe::threshold_energy:
      c.label_mode = LabelMode::gaussian_shuffled;
      c.flow.record_every = 50;
      break;
    case Recipe::trajectories:
      c.flow.test_samples = 1000;
      break;
    case Recipe::bbp_crossing:
      c.spectrum_at_threshold = true;
      break;
    case Recipe::spectrum_evolution:
      c.spectrum_at_threshold = true;
      c.spectrum_every = 500;
      c.flow.spectrum.histogram = true;
      break;
    default:
      break;
  }
  return c;
}

namespace {

template <class T>
std::vector<T> parse_list(const std::string& key, const std::string& text) {
  std::vector<T> out;
  for (std::string f : csv::split(text, ',')) {
    while (!f.empty() && std::isspace(static_cast<unsigned char>(f.front()))) f.erase(f.begin());
    while (!f.empty() && std::isspace(static_cast<unsigned char>(f.back()))) f.pop_back();
    if (f.empty()) {
      if (text.find_first_not_of(" \t") == std::string::npos) break;
      throw ConfigError("empty entry in " + key);
    }
    try {
      if constexpr (std::is_same_v<T, int>) {
        out.push_back(static_cast<int>(csv::parse_int(f)));
      } else {
        out.push_back(csv::parse_double(f));
      }
    } catch (const Error&) {
      throw ConfigError("bad value '" + f + "' in " + key);
    }
  }
  return out;
}

double as_double(const std::string& key, const std::string& v) {
  try {
    return csv::parse_double(v);
  } catch (const Error&) {
    throw ConfigError("bad number '" + v + "' for " + key);
  }
}

long long as_int(const std::string& key, const std::string& v) {
  try {
    return csv::parse_int(v);
  } catch (const Error&) {
    throw ConfigError("bad integer '" + v + "' for " + key);
  }
}

bool as_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("bad boolean '" + v + "' for " + key);
}

std::string join_list(const std::vector<int>& v) {
  std::vector<std::string> s;
  for (int x : v) s.push_back(std::to_string(x));
  return csv::join(s, ',');
}

std::string join_list(const std::vector<double>& v) {
  std::vector<std::string> s;
  for (double x : v) s.push_back(csv::format(x));
  return csv::join(s, ',');
}

}  // namespace

ExperimentConfig parse_config(const std::string& text) { return parse_config(text, std::nullopt); }

ExperimentConfig parse_config(const std::string& text, std::optional<Recipe> recipe) {
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  const auto recipe_text = tree.get_optional<std::string>("experiment.recipe");
  if (recipe_text) {
    const Recipe named = recipe_from_string(*recipe_text);
    if (recipe && *recipe != named) {
      throw ConfigError("config names recipe '" + *recipe_text + "' but '" + to_string(*recipe) + "' was requested");
    }
    recipe = named;
  }
  if (!recipe) throw ConfigError("experiment.recipe is required");
  ExperimentConfig c = default_config(*recipe);

  using Setter = std::function<void(const std::string&, const std::string&)>;
  const std::map<std::string, Setter> setters{
      {"experiment.recipe", [](const auto&, const auto&) {}},
      {"experiment.output_dir", [&](const auto&, const auto& v) { c.output_dir = v; }},
      {"experiment.workers", [&](const auto& k, const auto& v) { c.workers = static_cast<int>(as_int(k, v)); }},
      {"grid.n", [&](const auto& k, const auto& v) { c.n_list = parse_list<int>(k, v); }},
      {"grid.alpha", [&](const auto& k, const auto& v) { c.alpha_list = parse_list<double>(k, v); }},
      {"grid.seeds", [&](const auto& k, const auto& v) { c.seeds = static_cast<int>(as_int(k, v)); }},
      {"grid.base_seed", [&](const auto& k, const auto& v) { c.base_seed = static_cast<std::uint64_t>(as_int(k, v)); }},
      {"grid.label_mode",
       [&](const auto& k, const auto& v) {
         try {
           c.label_mode = label_mode_from_string(v);
         } catch (const Error&) {
           throw ConfigError("bad label mode '" + v + "' for " + k);
         }
       }},
      {"flow.learning_rate", [&](const auto& k, const auto& v) { c.flow.learning_rate = as_double(k, v); }},
      {"flow.max_steps", [&](const auto& k, const auto& v) {
         if (v == "formula" || v.empty()) {
           c.flow.max_steps.reset();
         } else {
           c.flow.max_steps = static_cast<long>(as_int(k, v));
         }
       }},
      {"flow.horizon_multiplier", [&](const auto& k, const auto& v) { c.flow.horizon_multiplier = as_double(k, v); }},
      {"flow.loss_stop", [&](const auto& k, const auto& v) { c.flow.loss_stop = as_double(k, v); }},
      {"flow.record_every", [&](const auto& k, const auto& v) { c.flow.record_every = static_cast<int>(as_int(k, v)); }},
      {"flow.spectrum_every", [&](const auto& k, const auto& v) { c.spectrum_every = static_cast<long>(as_int(k, v)); }},
      {"flow.spectrum_at_threshold", [&](const auto& k, const auto& v) { c.spectrum_at_threshold = as_bool(k, v); }},
      {"flow.test_samples", [&](const auto& k, const auto& v) { c.flow.test_samples = static_cast<int>(as_int(k, v)); }},
      {"flow.backtracking", [&](const auto& k, const auto& v) { c.flow.backtracking = as_bool(k, v); }},
      {"flow.trap_tolerance", [&](const auto& k, const auto& v) { c.flow.trap_tolerance = as_double(k, v); }},
      {"spectrum.k", [&](const auto& k, const auto& v) { c.flow.spectrum.k = static_cast<int>(as_int(k, v)); }},
      {"spectrum.mode",
       [&](const auto& k, const auto& v) {
         try {
           c.flow.spectrum.mode = spectrum_mode_from_string(v);
         } catch (const Error&) {
           throw ConfigError("bad spectrum mode '" + v + "' for " + k);
         }
       }},
      {"spectrum.histogram", [&](const auto& k, const auto& v) { c.flow.spectrum.histogram = as_bool(k, v); }},
      {"analysis.plateau_window", [&](const auto& k, const auto& v) { c.plateau_window = static_cast<int>(as_int(k, v)); }},
      {"analysis.save_labels", [&](const auto& k, const auto& v) { c.save_labels = as_bool(k, v); }},
      {"replica.alpha_min", [&](const auto& k, const auto& v) { c.replica_alpha_min = as_double(k, v); }},
      {"replica.alpha_max", [&](const auto& k, const auto& v) { c.replica_alpha_max = as_double(k, v); }},
      {"replica.alpha_step", [&](const auto& k, const auto& v) { c.replica_alpha_step = as_double(k, v); }},
      {"replica.outer_order", [&](const auto& k, const auto& v) { c.quadrature.outer_order = static_cast<int>(as_int(k, v)); }},
      {"replica.inner_order", [&](const auto& k, const auto& v) { c.quadrature.inner_order = static_cast<int>(as_int(k, v)); }},
      {"replica.truncation", [&](const auto& k, const auto& v) { c.quadrature.truncation = as_double(k, v); }},
      {"bbp.density", [&](const auto&, const auto& v) { c.density = v; }},
      {"bbp.alpha_lo", [&](const auto& k, const auto& v) { c.bbp_alpha_lo = as_double(k, v); }},
      {"bbp.alpha_hi", [&](const auto& k, const auto& v) { c.bbp_alpha_hi = as_double(k, v); }},
  };
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) throw ConfigError("key '" + section + "' outside any section");
    for (const auto& [key, value] : body) {
      const std::string full = section + "." + key;
      const auto it = setters.find(full);
      if (it == setters.end()) throw ConfigError("unknown config key '" + full + "'");
      it->second(full, value.data());
    }
  }
  validate(c);
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path, std::optional<Recipe> recipe) {
  std::string text;
  try {
    text = csv::read_text(path);
  } catch (const Error&) {
    throw ConfigError("cannot read config " + path.string());
  }
  return parse_config(text, recipe);
}

void validate(const ExperimentConfig& c) {
  if (c.workers < 1) throw ConfigError("workers must be positive");
  if (is_ensemble(c.recipe)) {
    if (c.n_list.empty()) throw ConfigError("grid.n must list at least one dimension");
    if (c.alpha_list.empty()) throw ConfigError("grid.alpha must list at least one ratio");
    if (c.seeds < 1) throw ConfigError("grid.seeds must be at least 1");
    for (int n : c.n_list) {
      if (n < 2) throw ConfigError("grid.n entries must be at least 2");
    }
    for (double a : c.alpha_list) {
      if (!(a > 0.0)) throw ConfigError("grid.alpha entries must be positive");
    }
    if (c.plateau_window < 1) throw ConfigError("analysis.plateau_window must be positive");
    if (c.spectrum_every < 0) throw ConfigError("flow.spectrum_every must be non-negative");
    try {
      validate(c.flow);
    } catch (const ParameterError& e) {
      throw ConfigError(std::string("flow: ") + e.what());
    }
  }
  if (c.recipe == Recipe::replica_branch) {
    if (!(c.replica_alpha_step > 0.0) || !(c.replica_alpha_max >= c.replica_alpha_min) || !(c.replica_alpha_min > 0.0)) {
      throw ConfigError("replica alpha range is invalid");
    }
  }
  if (c.recipe == Recipe::bbp_solve) {
    if (!(c.bbp_alpha_hi > c.bbp_alpha_lo)) throw ConfigError("bbp alpha bracket is invalid");
    if (c.density != "analytic" && c.density.rfind("empirical:", 0) != 0) {
      throw ConfigError("bbp.density must be 'analytic' or 'empirical:<dir>'");
    }
  }
}

std::string canonical(const ExperimentConfig& c) {
  std::ostringstream o;
  o << "[experiment]\n"
    << "recipe=" << to_string(c.recipe) << '\n'
    << "output_dir=" << c.output_dir.string() << '\n'
    << "workers=" << c.workers << '\n'
    << "[grid]\n"
    << "n=" << join_list(c.n_list) << '\n'
    << "alpha=" << join_list(c.alpha_list) << '\n'
    << "seeds=" << c.seeds << '\n'
    << "base_seed=" << c.base_seed << '\n'
    << "label_mode=" << to_string(c.label_mode) << '\n'
    << "[flow]\n"
    << "learning_rate=" << csv::format(c.flow.learning_rate) << '\n'
    << "max_steps=" << (c.flow.max_steps ? std::to_string(*c.flow.max_steps) : std::string("formula")) << '\n'
    << "horizon_multiplier=" << csv::format(c.flow.horizon_multiplier) << '\n'
    << "loss_stop=" << csv::format(c.flow.loss_stop) << '\n'
    << "record_every=" << c.flow.record_every << '\n'
    << "spectrum_every=" << c.spectrum_every << '\n'
    << "spectrum_at_threshold=" << (c.spectrum_at_threshold ? "true" : "false") << '\n'
    << "test_samples=" << c.flow.test_samples << '\n'
    << "backtracking=" << (c.flow.backtracking ? "true" : "false") << '\n'
    << "trap_tolerance=" << csv::format(c.flow.trap_tolerance) << '\n'
    << "[spectrum]\n"
    << "k=" << c.flow.spectrum.k << '\n'
    << "mode=" << (c.flow.spectrum.mode == SpectrumMode::dense ? "dense" : "iterative") << '\n'
    << "histogram=" << (c.flow.spectrum.histogram ? "true" : "false") << '\n'
    << "[analysis]\n"
    << "plateau_window=" << c.plateau_window << '\n'
    << "save_labels=" << (c.save_labels ? "true" : "false") << '\n'
    << "[replica]\n"
    << "alpha_min=" << csv::format(c.replica_alpha_min) << '\n'
    << "alpha_max=" << csv::format(c.replica_alpha_max) << '\n'
    << "alpha_step=" << csv::format(c.replica_alpha_step) << '\n'
    << "outer_order=" << c.quadrature.outer_order << '\n'
    << "inner_order=" << c.quadrature.inner_order << '\n'
    << "truncation=" << csv::format(c.quadrature.truncation) << '\n'
    << "[bbp]\n"
    << "density=" << c.density << '\n'
    << "alpha_lo=" << csv::format(c.bbp_alpha_lo) << '\n'
    << "alpha_hi=" << csv::format(c.bbp_alpha_hi) << '\n';
  return o.str();
}

std::uint64_t config_hash(const ExperimentConfig& config) {
  ExperimentConfig c = config;
  c.output_dir.clear();
  c.workers = 1;
  const std::string text = canonical(c);
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

int resolve_workers(const ExperimentConfig& config) {
  if (const char* env = std::getenv("PHASEFLOW_WORKERS")) {
    try {
      const long long w = csv::parse_int(env);
      if (w >= 1) return static_cast<int>(w);
    } catch (const Error&) {
    }
    throw ConfigError(std::string("PHASEFLOW_WORKERS must be a positive integer, got '") + env + "'");
  }
  return config.workers;
}

}  // namespace phaseflow

// phaseflow command line: instance generation, recipe runs over seeded
// ensembles, and the analytic solvers.
//
// Exit codes: 0 success, 2 configuration error, 3 more than 10% of cells
// failed, 4 numerical failure.

#include "phaseflow/config.hpp"
#include "phaseflow/errors.hpp"
#include "phaseflow/experiment.hpp"
#include "phaseflow/model.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

using namespace phaseflow;

void report(const RunSummary& s) {
  if (s.total == 0) {
    for (const auto& p : s.outputs) std::cout << p.string() << '\n';
    return;
  }
  std::cerr << "cells: " << s.total << " total, " << s.executed << " run, " << s.skipped << " skipped, " << s.failed
            << " failed";
  if (!s.rerun_corrupt.empty()) std::cerr << ", " << s.rerun_corrupt.size() << " corrupt re-run";
  std::cerr << '\n';
  for (const auto& p : s.outputs) std::cout << p.string() << '\n';
}

RunOptions run_options(int workers, bool force, bool quiet) {
  RunOptions o;
  o.workers = workers;
  o.force = force;
  if (!quiet) {
    o.on_cell = [](const RunRecord& r) {
      std::cerr << r.cell_id << ' ' << (r.ok ? to_string(r.outcome) : "failed: " + r.error) << " steps=" << r.steps
                << " L/N=" << r.final_loss_per_n << " t=" << r.wall_time << "s\n";
    };
  }
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gradient-flow phase retrieval lab and threshold solvers"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("generate", "Write one random instance to a CSV file");
  int gen_n = 0;
  double gen_alpha = 0.0;
  std::string gen_mode = "teacher";
  std::uint64_t gen_seed = 1;
  std::string gen_out;
  gen->add_option("--n", gen_n, "Input dimension")->required();
  gen->add_option("--alpha", gen_alpha, "Samples per dimension")->required();
  gen->add_option("--label-mode", gen_mode, "teacher, gaussian_shuffled or permuted_teacher");
  gen->add_option("--seed", gen_seed, "PRNG seed");
  gen->add_option("--out", gen_out, "Output file")->required();

  auto* run = app.add_subcommand("run", "Run a recipe from a config file");
  std::string run_recipe_name, run_config, run_output;
  int workers = 0;
  bool force = false, quiet = false;
  run->add_option("recipe", run_recipe_name, "Recipe name")->required();
  run->add_option("--config", run_config, "INI config file")->required();
  run->add_option("--output-dir", run_output, "Overrides experiment.output_dir");
  run->add_option("--workers", workers, "Worker threads (overrides config and PHASEFLOW_WORKERS)");
  run->add_flag("--force", force, "Re-run complete cells");
  run->add_flag("--quiet", quiet, "No per-cell progress lines");

  auto* res = app.add_subcommand("resume", "Complete missing or corrupt cells");
  std::string res_dir;
  res->add_option("dir", res_dir, "Result directory")->required();
  res->add_option("--workers", workers, "Worker threads");
  res->add_flag("--quiet", quiet, "No per-cell progress lines");

  auto* sum = app.add_subcommand("summarize", "Rebuild aggregate CSVs from cell records");
  std::string sum_dir;
  sum->add_option("dir", sum_dir, "Result directory")->required();

  auto* replica = app.add_subcommand("replica", "Replica threshold solver");
  replica->require_subcommand(1);
  auto* branch = replica->add_subcommand("branch", "Threshold-energy branch over an alpha range");
  double a_min = 4.0, a_max = 16.0, a_step = 0.25;
  std::string branch_out = ".";
  int outer_order = 40, inner_order = 32;
  double truncation = 8.0;
  branch->add_option("--alpha-min", a_min, "First alpha");
  branch->add_option("--alpha-max", a_max, "Last alpha");
  branch->add_option("--step", a_step, "Continuation step");
  branch->add_option("--out", branch_out, "Output directory (branch.csv)");
  branch->add_option("--outer-order", outer_order, "Outer quadrature points per side");
  branch->add_option("--inner-order", inner_order, "Inner points per panel");
  branch->add_option("--truncation", truncation, "Label truncation");

  auto* bbp_cmd = app.add_subcommand("bbp", "Spectral threshold solver");
  bbp_cmd->require_subcommand(1);
  auto* solve = bbp_cmd->add_subcommand("solve", "Solve for alpha_BBP");
  std::string density = "analytic";
  std::string solve_out = ".";
  double lo = 8.0, hi = 20.0;
  solve->add_option("--density", density, "analytic or empirical:<result dir>");
  solve->add_option("--out", solve_out, "Output directory (bbp_report.json)");
  solve->add_option("--alpha-lo", lo, "Bracket lower end");
  solve->add_option("--alpha-hi", hi, "Bracket upper end");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*gen) {
      const Instance inst = generate_instance(gen_n, gen_alpha, label_mode_from_string(gen_mode), gen_seed);
      write_instance(gen_out, inst);
      std::cout << gen_out << '\n';
      return 0;
    }
    if (*run) {
      ExperimentConfig c = load_config(run_config, recipe_from_string(run_recipe_name));
      if (!run_output.empty()) c.output_dir = run_output;
      const RunSummary s = run_recipe(c, run_options(workers, force, quiet));
      report(s);
      return s.exit_code();
    }
    if (*res) {
      const RunSummary s = resume(res_dir, run_options(workers, false, quiet));
      report(s);
      return s.exit_code();
    }
    if (*sum) {
      for (const auto& p : summarize(sum_dir)) std::cout << p.string() << '\n';
      return 0;
    }
    if (*branch) {
      ExperimentConfig c = default_config(Recipe::replica_branch);
      c.output_dir = branch_out;
      c.replica_alpha_min = a_min;
      c.replica_alpha_max = a_max;
      c.replica_alpha_step = a_step;
      c.quadrature.outer_order = outer_order;
      c.quadrature.inner_order = inner_order;
      c.quadrature.truncation = truncation;
      report(run_recipe(c, {}));
      return 0;
    }
    if (*solve) {
      ExperimentConfig c = default_config(Recipe::bbp_solve);
      c.output_dir = solve_out;
      c.density = density;
      c.bbp_alpha_lo = lo;
      c.bbp_alpha_hi = hi;
      report(run_recipe(c, {}));
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
  return 0;
}

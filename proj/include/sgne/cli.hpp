#pragma once

// Command-line front end: generate | solve | oracle | experiment | verify.
// Exit codes: 0 success, 1 validation or usage error, 2 non-convergence.

#include <sgne/bench.hpp>
#include <sgne/common.hpp>
#include <sgne/diagnostics.hpp>
#include <sgne/io.hpp>
#include <sgne/solver.hpp>

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace sgne {

namespace cli_detail {

struct Options {
  std::string config;
  std::string solution;
  std::optional<std::uint64_t> seed;
  std::optional<double> delta;
  std::optional<long> iters;
  std::optional<double> tol;
  std::optional<double> batch_c, batch_k0, batch_a;
  std::optional<std::size_t> batch_cap;
  bool deterministic = false;
  std::string out = ".";
};

/// What --config pointed at: an instance file, a bench config, or a run
/// manifest (bench config echo plus one delta).
struct Loaded {
  BenchConfig cfg;
  std::optional<Instance> instance;
  bool manifest = false;
};

inline Loaded load(const Options& o) {
  Loaded l;
  if (!o.config.empty()) {
    std::ifstream in(o.config);
    if (!in) throw ValidationError("cannot open " + o.config);
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw ValidationError(o.config + ": " + e.what());
    }
    if (j.contains("agents")) {
      l.instance = instance_from_json(j);
    } else if (j.contains("config") && j.contains("delta")) {
      l.cfg = config_from_json(j.at("config"));
      l.cfg.deltas = {j.at("delta").get<double>()};
      l.manifest = true;
    } else {
      l.cfg = config_from_json(j);
    }
  }
  BenchConfig& c = l.cfg;
  if (o.seed) c.seed = *o.seed;
  if (o.delta) c.deltas = {*o.delta};
  if (o.iters) c.iters = *o.iters;
  if (o.tol) c.tol = *o.tol;
  if (o.batch_c) c.batch.c = *o.batch_c;
  if (o.batch_k0) c.batch.k0 = *o.batch_k0;
  if (o.batch_a) c.batch.a = *o.batch_a;
  if (o.batch_cap) c.batch.cap = *o.batch_cap;
  if (o.deterministic) c.deterministic = true;
  if (l.instance && c.deterministic) l.instance->game.price.slope_std.setZero();
  return l;
}

inline void print_kkt(std::ostream& out, const KktResidual& r) {
  out << "stationarity:     " << format_double(r.max_stationarity()) << '\n'
      << "primal_violation: " << format_double(r.primal_violation) << '\n'
      << "complementarity:  " << format_double(r.complementarity) << '\n'
      << "consensus:        " << format_double(r.consensus) << '\n';
}

inline int cmd_generate(const Options& o, std::ostream& out) {
  const Loaded l = load(o);
  const Instance inst = l.instance ? *l.instance : generate_instance(l.cfg);
  const auto path = std::filesystem::path(o.out) / "instance.json";
  save_json(path, instance_to_json(inst));
  out << "wrote " << path.string() << " (hash " << instance_hash(inst) << ")\n";
  return 0;
}

inline int cmd_solve(const Options& o, std::ostream& out) {
  const Loaded l = load(o);
  // --delta or a manifest pins one value; a full bench config runs undamped.
  const double delta = l.cfg.deltas.size() == 1 ? l.cfg.deltas.front() : 1.0;
  Instance inst = l.instance ? *l.instance : generate_instance(l.cfg);
  if (l.cfg.deterministic) inst.game.price.slope_std.setZero();
  const auto issues = validate_spec(inst.game);
  if (!issues.empty()) throw ValidationError("instance: " + issues.front());

  SolverParams params;
  std::vector<std::string> violations;
  if (l.instance) {
    params = SolverParams::at_bounds(inst.game, inst.graph);
    params.delta = delta;
    params.batch = l.cfg.batch;
    params.seed = l.cfg.seed;
    params.max_iters = o.iters.value_or(20000);
    params.tol = o.tol.value_or(params.tol);
  } else {
    BenchConfig cfg = l.cfg;
    if (!o.iters && !l.manifest) cfg.iters = 20000;
    BenchParams bp = bench_params(cfg, inst, delta);
    params = bp.params;
    violations = bp.violations;
  }
  const std::filesystem::path dir(o.out);
  const ReferenceSolution ref = cached_reference(inst, dir);
  const RunReport report = run(inst.game, inst.graph, params, ref.x_star);
  write_trajectory_csv(dir / "trajectory.csv", report);

  const RunRecord& last = report.records.back();
  out << "termination:   " << to_string(report.reason) << '\n'
      << "iterations:    " << last.iter << '\n'
      << "nat_residual:  " << format_double(last.nat_residual) << '\n'
      << "norm_dist:     " << format_double(last.norm_dist) << '\n'
      << "consensus:     " << format_double(last.consensus) << '\n';
  if (!violations.empty())
    out << "note: " << violations.size() << " step sizes exceed the diagonal-dominance ceilings\n";
  return report.reason == Termination::kConverged ? 0 : 2;
}

inline int cmd_oracle(const Options& o, std::ostream& out) {
  const Loaded l = load(o);
  Instance inst = l.instance ? *l.instance : generate_instance(l.cfg);
  if (l.cfg.deterministic) inst.game.price.slope_std.setZero();
  const auto issues = validate_spec(inst.game);
  if (!issues.empty()) throw ValidationError("instance: " + issues.front());
  const ReferenceSolution ref = solve_reference(inst.game);
  const auto path = std::filesystem::path(o.out) / "reference.json";
  save_json(path, reference_to_json(ref, instance_hash(inst)));
  out << "wrote " << path.string() << " after " << ref.iterations << " iterations\n";
  print_kkt(out, ref.residual);
  return 0;
}

inline int cmd_experiment(const Options& o, std::ostream& out) {
  const Loaded l = load(o);
  const ExperimentResult res = run_experiment(l.cfg, o.out, l.instance);
  for (const auto& r : res.runs) {
    const RunRecord& last = r.report.records.back();
    out << "delta " << delta_tag(r.delta) << ": " << to_string(r.report.reason)
        << " after " << last.iter << " iterations, norm_dist "
        << format_double(last.norm_dist) << " -> " << r.csv.string() << '\n';
  }
  return 0;
}

inline int cmd_verify(const Options& o, std::ostream& out) {
  if (o.config.empty() || o.solution.empty())
    throw ValidationError("verify needs --config and --solution");
  const Loaded l = load(o);
  if (!l.instance) throw ValidationError("verify: --config must be an instance file");
  std::ifstream in(o.solution);
  if (!in) throw ValidationError("cannot open " + o.solution);
  json j;
  in >> j;
  const ReferenceSolution sol = reference_from_json(j);
  const GameSpec& game = l.instance->game;
  if (sol.x_star.size() != game.dim() || sol.lam_star.size() != game.num_markets())
    throw ValidationError("verify: solution dimensions do not match the instance");
  print_kkt(out, kkt_residual(game, sol.x_star, sol.lam_star));
  out << "natural_residual: " << format_double(natural_residual(game, sol.x_star)) << '\n';
  return 0;
}

}  // namespace cli_detail

inline int cli_main(int argc, const char* const* argv, std::ostream& out = std::cout,
                    std::ostream& err = std::cerr) {
  CLI::App app{"Distributed stochastic GNE seeking: solver and benchmark harness", "sgne"};
  app.require_subcommand(1);
  cli_detail::Options o;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "instance, bench config or manifest (JSON)");
    sub->add_option("--seed", o.seed, "random seed");
    sub->add_option("--delta", o.delta, "damping in (0, 1]");
    sub->add_option("--iters", o.iters, "iteration budget");
    sub->add_option("--tol", o.tol, "stopping tolerance on the natural residual");
    sub->add_option("--batch-c", o.batch_c);
    sub->add_option("--batch-k0", o.batch_k0);
    sub->add_option("--batch-a", o.batch_a);
    sub->add_option("--batch-cap", o.batch_cap);
    sub->add_flag("--deterministic", o.deterministic, "zero slope variance");
    sub->add_option("--out", o.out, "output directory");
  };
  auto* gen = app.add_subcommand("generate", "write a benchmark instance");
  auto* solve = app.add_subcommand("solve", "run the distributed iteration once");
  auto* oracle = app.add_subcommand("oracle", "solve the centralized reference");
  auto* exp = app.add_subcommand("experiment", "one run per damping value");
  auto* verify = app.add_subcommand("verify", "print KKT residuals of a solution");
  for (auto* s : {gen, solve, oracle, exp, verify}) add_common(s);
  verify->add_option("--solution", o.solution, "solution JSON (x_star, lam_star)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    if (*gen) return cli_detail::cmd_generate(o, out);
    if (*solve) return cli_detail::cmd_solve(o, out);
    if (*oracle) return cli_detail::cmd_oracle(o, out);
    if (*exp) return cli_detail::cmd_experiment(o, out);
    if (*verify) return cli_detail::cmd_verify(o, out);
  } catch (const ConvergenceError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const json::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}

}  // namespace sgne

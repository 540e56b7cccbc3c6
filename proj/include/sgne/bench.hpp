#pragma once

// Electricity-market benchmark: N generators selling into m capacity-limited
// markets, with seeded random parameters and a ring-plus-chords dual graph.

#include <sgne/comm_graph.hpp>
#include <sgne/common.hpp>
#include <sgne/diagnostics.hpp>
#include <sgne/fb_operators.hpp>
#include <sgne/game_model.hpp>
#include <sgne/io.hpp>
#include <sgne/solver.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace sgne {

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

struct BenchConfig {
  int n_agents = 20;
  int n_markets = 7;
  Range gamma{1.0, 1.5};       // local capacity per served market
  Range cap{0.5, 1.0};         // market capacity b_j
  Range pi{1.0, 8.0};          // quadratic cost coefficient
  Range g{0.1, 0.6};           // linear cost coefficient
  Range base_price{2.0, 4.0};  // Pbar_j
  double slope_mean = 0.8;
  double slope_std = 0.1;
  int min_markets_per_agent = 1;
  int max_markets_per_agent = 3;
  /// Extra dual-graph edges on top of the ring, as 1-based node labels.
  std::vector<std::pair<int, int>> chords{{2, 15}, {6, 13}};
  double alpha = 0.03;
  double nu = 0.2;
  double sigma = 0.03;
  std::vector<double> deltas{0.4, 0.7, 1.0};
  std::uint64_t seed = 42;
  long iters = 2000;
  std::optional<double> tol;  // defaults by mode
  SamplingSchedule batch;
  bool deterministic = false;
  bool shared_batch = false;

  double effective_tol() const {
    if (tol) return *tol;
    return deterministic ? SolverParams::kDeterministicTol
                         : SolverParams::kStochasticTol;
  }
};

inline std::vector<std::string> validate_config(const BenchConfig& c) {
  std::vector<std::string> out;
  auto range = [&](const char* name, const Range& r) {
    if (!(r.lo <= r.hi)) out.push_back(std::string(name) + ": empty range");
  };
  range("gamma", c.gamma);
  range("cap", c.cap);
  range("pi", c.pi);
  range("g", c.g);
  range("base_price", c.base_price);
  if (c.n_agents < 1) out.emplace_back("n_agents must be positive");
  if (c.n_markets < 1) out.emplace_back("n_markets must be positive");
  if (c.gamma.lo < 0.0) out.emplace_back("gamma must be nonnegative");
  if (c.cap.lo <= 0.0) out.emplace_back("cap must be positive");
  if (c.pi.lo <= 0.0) out.emplace_back("pi must be positive");
  if (!(c.slope_mean > 0.0)) out.emplace_back("slope_mean must be positive");
  if (c.slope_std < 0.0) out.emplace_back("slope_std must be nonnegative");
  if (c.min_markets_per_agent < 1 || c.min_markets_per_agent > c.max_markets_per_agent)
    out.emplace_back("markets per agent: invalid range");
  for (const auto& [a, b] : c.chords)
    if (a < 1 || b < 1 || a > c.n_agents || b > c.n_agents || a == b)
      out.push_back("chord (" + std::to_string(a) + "," + std::to_string(b) +
                    ") outside 1.." + std::to_string(c.n_agents));
  if (c.deltas.empty()) out.emplace_back("deltas: empty list");
  for (double d : c.deltas)
    if (!(d > 0.0 && d <= 1.0)) out.emplace_back("deltas must lie in (0, 1]");
  if (!(c.alpha > 0.0 && c.nu > 0.0 && c.sigma > 0.0))
    out.emplace_back("step sizes must be positive");
  if (c.iters < 0) out.emplace_back("iters must be nonnegative");
  return out;
}

inline json config_to_json(const BenchConfig& c) {
  auto r = [](const Range& x) { return json::array({x.lo, x.hi}); };
  json chords = json::array();
  for (const auto& [a, b] : c.chords) chords.push_back({a, b});
  json batch = {{"c", c.batch.c}, {"k0", c.batch.k0}, {"a", c.batch.a}};
  batch["cap"] = c.batch.cap ? json(*c.batch.cap) : json(nullptr);
  return {{"n_agents", c.n_agents},
          {"n_markets", c.n_markets},
          {"gamma_range", r(c.gamma)},
          {"cap_range", r(c.cap)},
          {"pi_range", r(c.pi)},
          {"g_range", r(c.g)},
          {"base_price_range", r(c.base_price)},
          {"slope_mean", c.slope_mean},
          {"slope_std", c.slope_std},
          {"markets_per_agent", {c.min_markets_per_agent, c.max_markets_per_agent}},
          {"chords", chords},
          {"alpha", c.alpha},
          {"nu", c.nu},
          {"sigma", c.sigma},
          {"deltas", c.deltas},
          {"seed", c.seed},
          {"iters", c.iters},
          {"tol", c.tol ? json(*c.tol) : json(nullptr)},
          {"batch", batch},
          {"deterministic", c.deterministic},
          {"shared_batch", c.shared_batch},
          {"edge_weights", "unit"}};
}

/// Missing keys keep their defaults.
inline BenchConfig config_from_json(const json& j) {
  BenchConfig c;
  auto range = [&](const char* key, Range& r) {
    if (j.contains(key)) {
      const auto v = j.at(key).get<std::vector<double>>();
      if (v.size() != 2) throw ValidationError(std::string(key) + ": expected [lo, hi]");
      r = {v[0], v[1]};
    }
  };
  try {
    c.n_agents = j.value("n_agents", c.n_agents);
    c.n_markets = j.value("n_markets", c.n_markets);
    range("gamma_range", c.gamma);
    range("cap_range", c.cap);
    range("pi_range", c.pi);
    range("g_range", c.g);
    range("base_price_range", c.base_price);
    c.slope_mean = j.value("slope_mean", c.slope_mean);
    c.slope_std = j.value("slope_std", c.slope_std);
    if (j.contains("markets_per_agent")) {
      const auto v = j.at("markets_per_agent").get<std::vector<int>>();
      if (v.size() != 2) throw ValidationError("markets_per_agent: expected [lo, hi]");
      c.min_markets_per_agent = v[0];
      c.max_markets_per_agent = v[1];
    }
    if (j.contains("chords")) {
      c.chords.clear();
      for (const auto& e : j.at("chords")) c.chords.emplace_back(e.at(0).get<int>(), e.at(1).get<int>());
    }
    c.alpha = j.value("alpha", c.alpha);
    c.nu = j.value("nu", c.nu);
    c.sigma = j.value("sigma", c.sigma);
    if (j.contains("deltas")) c.deltas = j.at("deltas").get<std::vector<double>>();
    c.seed = j.value("seed", c.seed);
    c.iters = j.value("iters", c.iters);
    if (j.contains("tol") && !j.at("tol").is_null()) c.tol = j.at("tol").get<double>();
    if (j.contains("batch")) {
      const json& b = j.at("batch");
      c.batch.c = b.value("c", c.batch.c);
      c.batch.k0 = b.value("k0", c.batch.k0);
      c.batch.a = b.value("a", c.batch.a);
      if (b.contains("cap"))
        c.batch.cap = b.at("cap").is_null() ? std::nullopt
                                            : std::optional<std::size_t>(b.at("cap").get<std::size_t>());
    }
    c.deterministic = j.value("deterministic", c.deterministic);
    c.shared_batch = j.value("shared_batch", c.shared_batch);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("bench config: ") + e.what());
  }
  return c;
}

/// Draws one benchmark instance. Every agent serves a random subset of
/// markets (size within markets_per_agent); uncovered markets are handed to
/// agents with spare room so that every capacity constraint is active.
inline Instance generate_instance(const BenchConfig& cfg, std::mt19937_64& rng) {
  const auto problems = validate_config(cfg);
  if (!problems.empty()) throw ValidationError("bench config: " + problems.front());
  const int n = cfg.n_agents;
  const int m = cfg.n_markets;
  auto uniform = [&](const Range& r) {
    return std::uniform_real_distribution<double>(r.lo, r.hi)(rng);
  };

  std::vector<std::vector<int>> serves(static_cast<std::size_t>(n));
  const int hi = std::min(cfg.max_markets_per_agent, m);
  const int lo = std::min(cfg.min_markets_per_agent, hi);
  std::vector<int> order(static_cast<std::size_t>(m));
  for (auto& s : serves) {
    const int k = std::uniform_int_distribution<int>(lo, hi)(rng);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    s.assign(order.begin(), order.begin() + k);
  }
  for (int j = 0; j < m; ++j) {
    const bool covered = std::any_of(serves.begin(), serves.end(), [&](const auto& s) {
      return std::find(s.begin(), s.end(), j) != s.end();
    });
    if (covered) continue;
    std::vector<int> room;
    for (int i = 0; i < n; ++i)
      if (static_cast<int>(serves[static_cast<std::size_t>(i)].size()) < hi) room.push_back(i);
    if (room.empty())
      for (int i = 0; i < n; ++i) room.push_back(i);
    const int pick = room[std::uniform_int_distribution<std::size_t>(0, room.size() - 1)(rng)];
    serves[static_cast<std::size_t>(pick)].push_back(j);
  }

  Instance inst;
  GameSpec& game = inst.game;
  for (int i = 0; i < n; ++i) {
    auto& s = serves[static_cast<std::size_t>(i)];
    std::sort(s.begin(), s.end());
    const Index ni = static_cast<Index>(s.size());
    AgentSpec ag;
    ag.id = i;
    ag.omega.lower = Vector::Zero(ni);
    ag.omega.upper.resize(ni);
    for (Index c = 0; c < ni; ++c) ag.omega.upper[c] = uniform(cfg.gamma);
    ag.quad_coeff = uniform(cfg.pi);
    ag.lin_coeff.resize(ni);
    for (Index c = 0; c < ni; ++c) ag.lin_coeff[c] = uniform(cfg.g);
    ag.market_map = selector_matrix(m, s);
    game.agents.push_back(std::move(ag));
  }
  Vector cap(m), base(m);
  for (int j = 0; j < m; ++j) cap[j] = uniform(cfg.cap);
  for (int j = 0; j < m; ++j) base[j] = uniform(cfg.base_price);
  game.coupling = CouplingConstraints::equal_split(cap, n);
  game.price.base_price = base;
  game.price.slope_mean = Vector::Constant(m, cfg.slope_mean);
  game.price.slope_std = Vector::Constant(m, cfg.deterministic ? 0.0 : cfg.slope_std);

  std::vector<std::pair<Index, Index>> chords;
  for (const auto& [a, b] : cfg.chords) chords.emplace_back(a - 1, b - 1);
  inst.graph = DualGraph::cycle_plus_chords(n, chords);
  return inst;
}

inline Instance generate_instance(const BenchConfig& cfg) {
  std::mt19937_64 rng(cfg.seed);
  return generate_instance(cfg, rng);
}

/// Solver parameters for a benchmark run: the configured literal step sizes
/// (not clipped to the ceilings), with violations reported separately.
struct BenchParams {
  SolverParams params;
  StepSizeBounds bounds;
  std::vector<std::string> violations;
};

inline BenchParams bench_params(const BenchConfig& cfg, const Instance& inst,
                                double delta) {
  BenchParams bp;
  SolverParams& p = bp.params;
  const MonotonicityConstants mc = monotonicity_constants(inst.game);
  p.eta = mc.eta;
  p.ell = mc.ell;
  bp.bounds = step_size_bounds(inst.graph, inst.game, p.eta, p.ell);
  p.beta = bp.bounds.beta;
  p.tau = bp.bounds.tau;
  p.steps = StepSizes::uniform(inst.game.num_agents(), cfg.alpha, cfg.nu, cfg.sigma);
  bp.violations = step_size_violations(bp.bounds, p.steps);
  p.enforce_bounds = false;
  p.delta = delta;
  p.batch = cfg.batch;
  p.max_iters = cfg.iters;
  p.tol = inst.game.is_stochastic() ? cfg.tol.value_or(SolverParams::kStochasticTol)
                                    : cfg.tol.value_or(SolverParams::kDeterministicTol);
  p.seed = cfg.seed;
  p.shared_batch = cfg.shared_batch;
  return bp;
}

/// Loads reference_<hash>.json from dir when present, else solves and caches.
inline ReferenceSolution cached_reference(const Instance& inst,
                                          const std::filesystem::path& dir,
                                          std::filesystem::path* where = nullptr) {
  const std::string hash = instance_hash(inst);
  const auto path = dir / ("reference_" + hash + ".json");
  if (where) *where = path;
  if (std::filesystem::exists(path)) {
    std::ifstream in(path);
    json j;
    in >> j;
    if (j.value("instance_hash", std::string()) == hash) {
      ReferenceSolution ref = reference_from_json(j);
      ref.residual = kkt_residual(inst.game, ref.x_star, ref.lam_star);
      return ref;
    }
  }
  ReferenceSolution ref = solve_reference(inst.game);
  save_json(path, reference_to_json(ref, hash));
  return ref;
}

inline std::string delta_tag(double delta) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", delta);
  return buf;
}

struct ExperimentRun {
  double delta = 1.0;
  std::filesystem::path csv;
  std::filesystem::path manifest;
  RunReport report;
};

struct ExperimentResult {
  Instance instance;
  ReferenceSolution reference;
  std::vector<ExperimentRun> runs;

  bool all_converged() const {
    return std::all_of(runs.begin(), runs.end(), [](const ExperimentRun& r) {
      return r.report.reason == Termination::kConverged;
    });
  }
};

inline json manifest_json(const BenchConfig& cfg, const Instance& inst,
                          const BenchParams& bp, const ExperimentRun& run,
                          const std::filesystem::path& reference_file) {
  json markets = json::array();
  for (const auto& ag : inst.game.agents) markets.push_back(selector_indices(ag.market_map));
  json m = {{"library_version", kLibraryVersion},
            {"seed", cfg.seed},
            {"delta", run.delta},
            {"config", config_to_json(cfg)},
            {"instance_hash", instance_hash(inst)},
            {"instance_file", "instance.json"},
            {"reference_file", reference_file.filename().string()},
            {"csv", run.csv.filename().string()},
            {"termination", to_string(run.report.reason)},
            {"records", run.report.records.size()},
            {"market_assignment", markets},
            {"eta", bp.params.eta},
            {"ell", bp.params.ell},
            {"beta", bp.bounds.beta},
            {"tau", bp.bounds.tau},
            {"alpha_max", detail::to_json_vec(bp.bounds.alpha_max)},
            {"nu_max", detail::to_json_vec(bp.bounds.nu_max)},
            {"sigma_max", detail::to_json_vec(bp.bounds.sigma_max)},
            {"step_size_violations", bp.violations}};
  m["batch_cap_binds_from"] =
      run.report.cap_binds_from ? json(*run.report.cap_binds_from) : json(nullptr);
  return m;
}

/// Generates (or takes) an instance, solves the reference once, then runs the
/// damped iteration for every delta in the config. Writes instance.json,
/// reference_<hash>.json, delta_<d>.csv and delta_<d>.manifest.json.
inline ExperimentResult run_experiment(const BenchConfig& cfg,
                                       const std::filesystem::path& out_dir,
                                       std::optional<Instance> given = std::nullopt) {
  const auto problems = validate_config(cfg);
  if (!problems.empty()) throw ValidationError("bench config: " + problems.front());
  ExperimentResult result;
  result.instance = given ? std::move(*given) : generate_instance(cfg);
  if (cfg.deterministic) result.instance.game.price.slope_std.setZero();
  const Instance& inst = result.instance;
  const auto issues = validate_spec(inst.game);
  if (!issues.empty()) throw ValidationError("instance: " + issues.front());

  std::filesystem::create_directories(out_dir);
  save_json(out_dir / "instance.json", instance_to_json(inst));
  std::filesystem::path ref_file;
  result.reference = cached_reference(inst, out_dir, &ref_file);

  for (double delta : cfg.deltas) {
    const BenchParams bp = bench_params(cfg, inst, delta);
    ExperimentRun r;
    r.delta = delta;
    r.csv = out_dir / ("delta_" + delta_tag(delta) + ".csv");
    r.manifest = out_dir / ("delta_" + delta_tag(delta) + ".manifest.json");
    r.report = run(inst.game, inst.graph, bp.params, result.reference.x_star);
    write_trajectory_csv(r.csv, r.report);
    save_json(r.manifest, manifest_json(cfg, inst, bp, r, ref_file));
    result.runs.push_back(std::move(r));
  }
  return result;
}

}  // namespace sgne

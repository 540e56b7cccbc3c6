#pragma once

// Damped stochastic forward-backward iteration
//
//   omega~_k    = J_{Phi^-1 Bbar}(omega_k - Phi^-1 Ahat(omega_k))
//   omega_{k+1} = (1 - delta) omega_k + delta omega~_k
//
// where Ahat uses a sample-average estimate of F over a growing batch.

#include <sgne/comm_graph.hpp>
#include <sgne/common.hpp>
#include <sgne/diagnostics.hpp>
#include <sgne/fb_operators.hpp>
#include <sgne/game_model.hpp>

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace sgne {

struct SamplingSchedule {
  double c = 1.0;
  double k0 = 5.0;
  double a = 0.5;
  std::optional<std::size_t> cap = 5000;
};

/// ceil(c (k + k0)^(a + 1)), clipped to the cap when one is set.
inline std::size_t batch_size(const SamplingSchedule& sched, long k) {
  require(k >= 0, "batch_size: negative iteration");
  const double raw = std::ceil(sched.c * std::pow(static_cast<double>(k) + sched.k0,
                                                  sched.a + 1.0));
  std::size_t n = raw < 1.0 ? 1 : static_cast<std::size_t>(raw);
  if (sched.cap && n > *sched.cap) n = *sched.cap;
  return n;
}

inline bool batch_capped(const SamplingSchedule& sched, long k) {
  if (!sched.cap) return false;
  return std::ceil(sched.c * std::pow(static_cast<double>(k) + sched.k0, sched.a + 1.0)) >
         static_cast<double>(*sched.cap);
}

struct SolverParams {
  StepSizes steps;
  double delta = 1.0;
  double eta = 0.0;
  double ell = 0.0;
  double beta = 0.0;
  double tau = 0.0;
  SamplingSchedule batch;
  long max_iters = 20000;
  double tol = 1e-6;
  std::uint64_t seed = 0;
  bool shared_batch = false;
  /// Reject step sizes above the diagonal-dominance ceilings.
  bool enforce_bounds = true;
  /// Stop once the normalized distance to the reference drops to this value
  /// (needs a reference solution).
  std::optional<double> stop_distance;

  static constexpr double kDeterministicTol = 1e-6;
  static constexpr double kStochasticTol = 1e-3;

  /// Step sizes at the computed ceilings, with (eta, ell) from the exact F.
  static SolverParams at_bounds(const GameSpec& spec, const DualGraph& g) {
    SolverParams p;
    const MonotonicityConstants mc = monotonicity_constants(spec);
    p.eta = mc.eta;
    p.ell = mc.ell;
    const StepSizeBounds b = step_size_bounds(g, spec, p.eta, p.ell);
    p.beta = b.beta;
    p.tau = b.tau;
    p.steps = StepSizes::at_bounds(b);
    p.tol = spec.is_stochastic() ? kStochasticTol : kDeterministicTol;
    return p;
  }
};

/// Human-readable list of step sizes that exceed their ceilings.
inline std::vector<std::string> step_size_violations(const StepSizeBounds& b,
                                                     const StepSizes& s) {
  std::vector<std::string> out;
  auto check = [&](const char* name, const Vector& v, const Vector& hi) {
    for (Index i = 0; i < v.size(); ++i)
      if (!(v[i] > 0.0) || v[i] > hi[i])
        out.push_back(std::string(name) + "[" + std::to_string(i) + "]=" +
                      std::to_string(v[i]) + " exceeds " + std::to_string(hi[i]));
  };
  check("alpha", s.alpha, b.alpha_max);
  check("nu", s.nu, b.nu_max);
  check("sigma", s.sigma, b.sigma_max);
  return out;
}

inline void validate_params(const GameSpec& spec, const DualGraph& g,
                            const SolverParams& p) {
  if (!(p.delta > 0.0 && p.delta <= 1.0))
    throw ConfigError("damping delta must lie in (0, 1]");
  if (p.steps.alpha.size() != spec.num_agents() ||
      p.steps.nu.size() != spec.num_agents() ||
      p.steps.sigma.size() != spec.num_agents())
    throw ConfigError("step sizes must have one entry per agent");
  if (!((p.steps.alpha.array() > 0.0).all() && (p.steps.nu.array() > 0.0).all() &&
        (p.steps.sigma.array() > 0.0).all()))
    throw ConfigError("step sizes must be positive");
  if (!(p.batch.c > 0.0 && p.batch.k0 > 0.0 && p.batch.a > 0.0))
    throw ConfigError("batch schedule needs c, k0, a > 0");
  if (p.max_iters < 0) throw ConfigError("max_iters must be nonnegative");
  if (p.enforce_bounds) {
    const auto bad =
        step_size_violations(step_size_bounds(g, spec, p.eta, p.ell), p.steps);
    if (!bad.empty()) throw ConfigError("step size bound violated: " + bad.front());
  }
}

struct RunRecord {
  long iter = 0;
  std::size_t batch = 0;  // 0 in deterministic mode (exact expectation)
  double nat_residual = 0.0;
  double consensus = 0.0;
  double constraint_violation = 0.0;
  double norm_dist = std::numeric_limits<double>::quiet_NaN();
  double sq_error = 0.0;  // |Fhat - F|^2 at the iterate
  bool capped = false;
};

enum class Termination { kConverged, kMaxIters, kTargetDistance };

inline const char* to_string(Termination t) {
  switch (t) {
    case Termination::kConverged: return "converged";
    case Termination::kTargetDistance: return "target_distance";
    default: return "max_iters";
  }
}

struct RunReport {
  std::vector<RunRecord> records;
  IterateState terminal;
  Termination reason = Termination::kMaxIters;
  std::optional<long> cap_binds_from;  // first iteration whose batch was capped
};

/// Per-agent RNG streams derived from (seed, agent id); stream N seeds the
/// initial point.
class SamplerBank {
 public:
  SamplerBank(std::uint64_t seed, Index n_agents) {
    streams_.reserve(static_cast<std::size_t>(n_agents));
    for (Index i = 0; i < n_agents; ++i) streams_.push_back(make(seed, static_cast<std::uint32_t>(i)));
    init_ = make(seed, 0xffffffffu);
  }

  SlopeSampler& agent(Index i) { return streams_[static_cast<std::size_t>(i)]; }
  SlopeSampler& init() { return init_; }

 private:
  static SlopeSampler make(std::uint64_t seed, std::uint32_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed),
                      static_cast<std::uint32_t>(seed >> 32), stream, 0x5ca1ab1eu};
    return SlopeSampler(seq);
  }

  std::vector<SlopeSampler> streams_;
  SlopeSampler init_;
};

/// x_0 uniform in each local box.
inline Vector random_initial_point(const GameSpec& spec, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Vector x(spec.dim());
  Index k = 0;
  for (const auto& ag : spec.agents)
    for (Index c = 0; c < ag.dim(); ++c, ++k)
      x[k] = ag.omega.lower[c] + (ag.omega.upper[c] - ag.omega.lower[c]) * unit(rng);
  return x;
}

/// Sample-average estimate of F at x with batch size n_samples. Each agent
/// draws from its own stream unless `shared` is set.
inline Vector sampled_pseudo_gradient(const GameSpec& spec, const Vector& x,
                                      std::size_t n_samples, SamplerBank& bank,
                                      bool shared) {
  const Vector supply = detail::market_supply(spec, x);
  Vector fhat(x.size());
  const auto off = spec.offsets();
  Vector shared_mean;
  if (shared) {
    std::vector<Index> all(static_cast<std::size_t>(spec.num_markets()));
    for (Index j = 0; j < spec.num_markets(); ++j) all[static_cast<std::size_t>(j)] = j;
    shared_mean = bank.agent(0).draw_mean(spec.price, all, n_samples);
  }
  for (Index i = 0; i < spec.num_agents(); ++i) {
    const AgentSpec& ag = spec.agents[i];
    const Vector d = shared ? shared_mean
                            : bank.agent(i).draw_mean(spec.price, served_markets(ag),
                                                      n_samples);
    fhat.segment(off[i], ag.dim()) = detail::gradient_with_supply(
        ag, x.segment(off[i], ag.dim()), spec.price.base_price, supply, d);
  }
  return fhat;
}

namespace detail {

inline double stacked_norm(const IterateState& s) {
  return std::sqrt(s.x.squaredNorm() + s.z.squaredNorm() + s.lam.squaredNorm());
}

inline double stacked_distance(const IterateState& a, const IterateState& b) {
  return std::sqrt((a.x - b.x).squaredNorm() + (a.z - b.z).squaredNorm() +
                   (a.lam - b.lam).squaredNorm());
}

inline void fill_state_metrics(const GameSpec& spec, const DualGraph& g,
                               const IterateState& s, RunRecord& rec) {
  rec.consensus = edge_consensus(g, s.lam, spec.num_markets());
  rec.constraint_violation =
      std::max(0.0, (market_supply(spec, s.x) - spec.coupling.cap).maxCoeff());
}

}  // namespace detail

/// One damped step. The record describes the input state: its natural
/// residual (exact gradient), the batch drawn, and the SAA error.
inline std::pair<IterateState, RunRecord> iterate_once(
    const GameSpec& spec, const DualGraph& g, const SolverParams& params,
    const IterateState& s, long k, SamplerBank& bank) {
  RunRecord rec;
  rec.iter = k;
  const Vector f = pseudo_gradient(spec, s.x);
  IterateState exact_tilde;
  IterateState tilde;
  if (spec.is_stochastic()) {
    rec.batch = batch_size(params.batch, k);
    rec.capped = batch_capped(params.batch, k);
    const Vector fhat =
        sampled_pseudo_gradient(spec, s.x, rec.batch, bank, params.shared_batch);
    rec.sq_error = (fhat - f).squaredNorm();
    tilde = backward_step(spec, g, params.steps, s, fhat);
    exact_tilde = backward_step(spec, g, params.steps, s, f);
  } else {
    tilde = backward_step(spec, g, params.steps, s, f);
    exact_tilde = tilde;
  }
  rec.nat_residual = detail::stacked_distance(s, exact_tilde) /
                     std::max(1.0, detail::stacked_norm(s));
  detail::fill_state_metrics(spec, g, s, rec);
  return {s.blend(tilde, params.delta), rec};
}

inline RunReport run(const GameSpec& spec, const DualGraph& g,
                     const SolverParams& params,
                     const std::optional<Vector>& x_ref = std::nullopt) {
  const auto problems = validate_spec(spec);
  if (!problems.empty()) throw ValidationError("invalid instance: " + problems.front());
  if (g.size() != spec.num_agents())
    throw ConfigError("dual graph and game disagree on the number of agents");
  if (!is_connected(g)) throw ConfigError("dual graph is disconnected");
  validate_params(spec, g, params);
  if (x_ref) require(x_ref->size() == spec.dim(), "reference solution length mismatch");
  if (params.stop_distance && !x_ref)
    throw ConfigError("stop_distance needs a reference solution");

  SamplerBank bank(params.seed, spec.num_agents());
  IterateState s = IterateState::zeros(spec);
  s.x = random_initial_point(spec, bank.init().engine());

  RunReport report;
  report.records.reserve(static_cast<std::size_t>(std::min<long>(params.max_iters, 100000) + 1));
  for (long k = 0;; ++k) {
    if (k == params.max_iters) {
      RunRecord rec;
      rec.iter = k;
      rec.nat_residual = fixed_point_residual(spec, g, params.steps, s);
      detail::fill_state_metrics(spec, g, s, rec);
      if (x_ref) rec.norm_dist = normalized_distance(s.x, *x_ref);
      report.reason = rec.nat_residual <= params.tol ? Termination::kConverged
                                                     : Termination::kMaxIters;
      report.records.push_back(rec);
      break;
    }
    auto [next, rec] = iterate_once(spec, g, params, s, k, bank);
    if (x_ref) rec.norm_dist = normalized_distance(s.x, *x_ref);
    if (rec.capped && !report.cap_binds_from) report.cap_binds_from = k;
    report.records.push_back(rec);
    if (rec.nat_residual <= params.tol) {
      report.reason = Termination::kConverged;
      break;
    }
    if (params.stop_distance && rec.norm_dist <= *params.stop_distance) {
      report.reason = Termination::kTargetDistance;
      break;
    }
    s = std::move(next);
  }
  report.terminal = std::move(s);
  return report;
}

}  // namespace sgne

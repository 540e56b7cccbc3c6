#pragma once

// Independent checks of equilibrium quality: KKT residuals of the
// variational problem, the natural residual of the VI over the collective
// feasible set, and a centralized extragradient reference solver.

#include <sgne/comm_graph.hpp>
#include <sgne/common.hpp>
#include <sgne/fb_operators.hpp>
#include <sgne/game_model.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

namespace sgne {

struct KktResidual {
  Vector stationarity;  // per agent
  double primal_violation = 0.0;
  double complementarity = 0.0;
  double consensus = 0.0;

  double max_stationarity() const {
    return stationarity.size() ? stationarity.maxCoeff() : 0.0;
  }
  double max_field() const {
    return std::max({max_stationarity(), primal_violation, complementarity,
                     consensus});
  }
};

namespace detail {

inline KktResidual kkt_core(const GameSpec& spec, const Vector& x,
                            const Vector& lam_per_agent,
                            const Vector& lam_common) {
  const Index m = spec.num_markets();
  const Vector f = pseudo_gradient(spec, x);
  KktResidual r;
  r.stationarity.resize(spec.num_agents());
  const auto off = spec.offsets();
  for (Index i = 0; i < spec.num_agents(); ++i) {
    const AgentSpec& ag = spec.agents[i];
    const Vector xi = x.segment(off[i], ag.dim());
    const Vector grad = f.segment(off[i], ag.dim()) +
                        ag.market_map.transpose() * lam_per_agent.segment(i * m, m);
    r.stationarity[i] = (xi - project_local(ag.omega, xi - grad)).norm();
  }
  const Vector gap = market_supply(spec, x) - spec.coupling.cap;
  r.primal_violation = std::max(0.0, gap.maxCoeff());
  r.complementarity = std::abs(lam_common.dot(gap));
  return r;
}

}  // namespace detail

/// KKT residual of the variational problem with one shared multiplier.
inline KktResidual kkt_residual(const GameSpec& spec, const Vector& x,
                                const Vector& lam_common) {
  detail::check_stacked(spec, x);
  require(lam_common.size() == spec.num_markets(),
          "kkt_residual: multiplier length mismatch");
  const Vector stacked = lam_common.replicate(spec.num_agents(), 1);
  return detail::kkt_core(spec, x, stacked, lam_common);
}

/// Largest spread max_i lambda_i - min_i lambda_i over all multiplier
/// components.
inline double dual_spread(const Vector& lam_per_agent, Index n_agents, Index m) {
  double spread = 0.0;
  for (Index j = 0; j < m; ++j) {
    double lo = lam_per_agent[j], hi = lam_per_agent[j];
    for (Index i = 1; i < n_agents; ++i) {
      lo = std::min(lo, lam_per_agent[i * m + j]);
      hi = std::max(hi, lam_per_agent[i * m + j]);
    }
    spread = std::max(spread, hi - lo);
  }
  return spread;
}

/// Mean of the per-agent multipliers.
inline Vector average_dual(const Vector& lam_per_agent, Index n_agents, Index m) {
  Vector avg = Vector::Zero(m);
  for (Index i = 0; i < n_agents; ++i) avg += lam_per_agent.segment(i * m, m);
  return avg / static_cast<double>(n_agents);
}

/// KKT residual of the game with agent-specific multipliers. Stationarity
/// uses each agent's own lambda_i; complementarity uses their mean.
inline KktResidual per_agent_kkt_residual(const GameSpec& spec, const Vector& x,
                                          const Vector& lam_per_agent) {
  detail::check_stacked(spec, x);
  const Index m = spec.num_markets();
  const Index nag = spec.num_agents();
  require(lam_per_agent.size() == nag * m,
          "per_agent_kkt_residual: multiplier length mismatch");
  KktResidual r = detail::kkt_core(spec, x, lam_per_agent,
                                   average_dual(lam_per_agent, nag, m));
  r.consensus = dual_spread(lam_per_agent, nag, m);
  return r;
}

/// max over edges of |lambda_i - lambda_j|_inf.
inline double edge_consensus(const DualGraph& g, const Vector& lam, Index m) {
  double worst = 0.0;
  for (const Edge& e : g.edges())
    worst = std::max(worst, (lam.segment(e.i * m, m) - lam.segment(e.j * m, m))
                                .cwiseAbs()
                                .maxCoeff());
  return worst;
}

/// Euclidean projection onto X = Omega cap {A y <= b} via projected gradient
/// on the dual of min 1/2 |y - v|^2.
inline Vector project_collective(const GameSpec& spec, const Vector& v,
                                 double tol = 1e-15, long max_iters = 2'000'000) {
  detail::check_stacked(spec, v);
  const Matrix a = spec.coupling_matrix();
  const Vector& b = spec.coupling.cap;
  Vector lo(spec.dim()), hi(spec.dim());
  const auto off = spec.offsets();
  for (Index i = 0; i < spec.num_agents(); ++i) {
    lo.segment(off[i], spec.agents[i].dim()) = spec.agents[i].omega.lower;
    hi.segment(off[i], spec.agents[i].dim()) = spec.agents[i].omega.upper;
  }
  auto primal = [&](const Vector& mu) {
    return (v - a.transpose() * mu).cwiseMax(lo).cwiseMin(hi).eval();
  };
  if ((a * v.cwiseMax(lo).cwiseMin(hi) - b).maxCoeff() <= 0.0)
    return v.cwiseMax(lo).cwiseMin(hi);
  if ((a * lo - b).maxCoeff() > 0.0)
    throw ValidationError("project_collective: feasible set is empty");

  const double norm2 = a.rows() && a.cols()
                           ? Eigen::JacobiSVD<Matrix>(a).singularValues()(0)
                           : 0.0;
  const double step = 1.0 / std::max(norm2 * norm2, 1e-300);
  Vector mu = Vector::Zero(a.rows());
  for (long it = 0; it < max_iters; ++it) {
    const Vector y = primal(mu);
    const Vector next = (mu + step * (a * y - b)).cwiseMax(0.0);
    const double change = (next - mu).cwiseAbs().maxCoeff();
    mu = next;
    if (change <= tol * std::max(1.0, mu.cwiseAbs().maxCoeff())) break;
  }
  return primal(mu);
}

/// |x - proj_X(x - step F(x))|; zero exactly at solutions of the VI.
inline double natural_residual(const GameSpec& spec, const Vector& x,
                               double step = 1.0) {
  require(step > 0.0, "natural_residual: step must be positive");
  return (x - project_collective(spec, x - step * pseudo_gradient(spec, x)))
      .norm();
}

inline double normalized_distance(const Vector& x, const Vector& x_star) {
  require(x.size() == x_star.size(), "normalized_distance: length mismatch");
  const double denom = x_star.norm();
  require(denom > 0.0, "normalized_distance: reference solution is zero");
  return (x - x_star).norm() / denom;
}

struct ReferenceSolution {
  Vector x_star;
  Vector lam_star;
  KktResidual residual;
  std::string method = "projected-extragradient";
  long iterations = 0;
};

struct ReferenceOptions {
  double tol = 1e-10;
  long max_iters = 5'000'000;
  int starts = 2;            // independent random starts that must agree
  double agreement = 1e-7;   // max relative disagreement between starts
  std::uint64_t seed = 7;
};

namespace detail {

struct ExtragradientResult {
  Vector x;
  Vector lam;
  KktResidual residual;
  long iterations = 0;
};

/// Projected extragradient on the monotone KKT map
///   T(x, lambda) = (F(x) + A' lambda, b - A x) over Omega x R+^m.
inline ExtragradientResult extragradient(const GameSpec& spec, const AffineMap& f,
                                         const Matrix& a, Vector x, Vector lam,
                                         const ReferenceOptions& opt) {
  const Index n = spec.dim();
  const Index m = spec.num_markets();
  const Vector& b = spec.coupling.cap;
  Vector lo(n), hi(n);
  const auto off = spec.offsets();
  for (Index i = 0; i < spec.num_agents(); ++i) {
    lo.segment(off[i], spec.agents[i].dim()) = spec.agents[i].omega.lower;
    hi.segment(off[i], spec.agents[i].dim()) = spec.agents[i].omega.upper;
  }
  Matrix t = Matrix::Zero(n + m, n + m);
  t.topLeftCorner(n, n) = f.matrix;
  t.topRightCorner(n, m) = a.transpose();
  t.bottomLeftCorner(m, n) = -a;
  const double lip = Eigen::JacobiSVD<Matrix>(t).singularValues()(0);
  const double gamma = 0.9 / lip;

  ExtragradientResult out;
  for (long it = 0; it < opt.max_iters; ++it) {
    if (it % 25 == 0) {
      out.residual = kkt_residual(spec, x, lam);
      if (out.residual.max_field() <= opt.tol) {
        out.iterations = it;
        break;
      }
    }
    const Vector gx = f.matrix * x + f.offset + a.transpose() * lam;
    const Vector gl = b - a * x;
    const Vector yx = (x - gamma * gx).cwiseMax(lo).cwiseMin(hi);
    const Vector yl = (lam - gamma * gl).cwiseMax(0.0);
    const Vector hx = f.matrix * yx + f.offset + a.transpose() * yl;
    const Vector hl = b - a * yx;
    x = (x - gamma * hx).cwiseMax(lo).cwiseMin(hi);
    lam = (lam - gamma * hl).cwiseMax(0.0);
    out.iterations = it + 1;
  }
  out.x = std::move(x);
  out.lam = std::move(lam);
  out.residual = kkt_residual(spec, out.x, out.lam);
  return out;
}

}  // namespace detail

/// Centralized deterministic solve of the variational equilibrium. Shares
/// only the game model with the distributed solver.
inline ReferenceSolution solve_reference(const GameSpec& spec,
                                         const ReferenceOptions& opt = {}) {
  const AffineMap f = pseudo_gradient_affine(spec);
  const Matrix a = spec.coupling_matrix();
  const Index n = spec.dim();
  std::mt19937_64 rng(opt.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  ReferenceSolution best;
  for (int s = 0; s < std::max(1, opt.starts); ++s) {
    Vector x0(n);
    Index k = 0;
    for (const auto& ag : spec.agents)
      for (Index c = 0; c < ag.dim(); ++c, ++k)
        x0[k] = s == 0 ? 0.0
                       : ag.omega.lower[c] +
                             (ag.omega.upper[c] - ag.omega.lower[c]) * unit(rng);
    const Vector lam0 = s == 0 ? Vector::Zero(spec.num_markets())
                               : Vector::Constant(spec.num_markets(), unit(rng));
    const auto run = detail::extragradient(spec, f, a, x0, lam0, opt);
    if (run.residual.max_field() > opt.tol)
      throw ConvergenceError("solve_reference: KKT residual " +
                             std::to_string(run.residual.max_field()) +
                             " after " + std::to_string(run.iterations) +
                             " iterations");
    if (s == 0) {
      best.x_star = run.x;
      best.lam_star = run.lam;
      best.residual = run.residual;
      best.iterations = run.iterations;
    } else {
      const double gap = (run.x - best.x_star).norm() /
                         std::max(1.0, best.x_star.norm());
      if (gap > opt.agreement)
        throw ConvergenceError("solve_reference: random starts disagree by " +
                               std::to_string(gap));
      best.iterations += run.iterations;
    }
  }
  return best;
}

}  // namespace sgne

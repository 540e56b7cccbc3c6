#pragma once

// Extended operators of the preconditioned forward-backward splitting over
// omega = col(x, z, lambda):
//
//   Abar(omega) = col(F(x), 0, L lambda + bbar)
//   Bbar(omega) = col(N_Omega(x), 0, N_{R+}(lambda)) + S omega,
//   S = [[0, 0, A'], [0, 0, L], [-A, -L, 0]]
//   Phi = [[alpha^-1, 0, -A'], [0, nu^-1, -L], [-A, -L, sigma^-1]]
//
// with A = blkdiag(A_1..A_N) and L = Laplacian kron I_m. Phi + S is block
// lower triangular, so the resolvent step (Id + Phi^-1 Bbar)^-1 is a
// sequence of local projections: first x and z, then lambda.

#include <sgne/comm_graph.hpp>
#include <sgne/common.hpp>
#include <sgne/game_model.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>
#include <thread>
#include <vector>

namespace sgne {

struct IterateState {
  Vector x;
  Vector z;
  Vector lam;

  static IterateState zeros(const GameSpec& spec) {
    const Index nm = spec.num_agents() * spec.num_markets();
    return {Vector::Zero(spec.dim()), Vector::Zero(nm), Vector::Zero(nm)};
  }

  Vector stacked() const {
    Vector w(x.size() + z.size() + lam.size());
    w << x, z, lam;
    return w;
  }

  static IterateState from_stacked(const GameSpec& spec, const Vector& w) {
    const Index n = spec.dim();
    const Index nm = spec.num_agents() * spec.num_markets();
    require(w.size() == n + 2 * nm, "IterateState: stacked length mismatch");
    return {w.head(n), w.segment(n, nm), w.tail(nm)};
  }

  /// Convex combination (1 - delta) * this + delta * other.
  IterateState blend(const IterateState& other, double delta) const {
    return {(1.0 - delta) * x + delta * other.x,
            (1.0 - delta) * z + delta * other.z,
            (1.0 - delta) * lam + delta * other.lam};
  }
};

struct StepSizes {
  Vector alpha;
  Vector nu;
  Vector sigma;

  static StepSizes uniform(Index n_agents, double alpha, double nu,
                           double sigma) {
    return {Vector::Constant(n_agents, alpha), Vector::Constant(n_agents, nu),
            Vector::Constant(n_agents, sigma)};
  }
  static StepSizes at_bounds(const StepSizeBounds& b) {
    return {b.alpha_max, b.nu_max, b.sigma_max};
  }
};

/// Stacked expected pseudo-gradient F(x) = col(E[grad_i J_i]).
inline Vector pseudo_gradient(const GameSpec& spec, const Vector& x) {
  detail::check_stacked(spec, x);
  const Vector supply = detail::market_supply(spec, x);
  Vector f(x.size());
  Index off = 0;
  for (const auto& ag : spec.agents) {
    f.segment(off, ag.dim()) = detail::gradient_with_supply(
        ag, x.segment(off, ag.dim()), spec.price.base_price, supply,
        spec.price.slope_mean);
    off += ag.dim();
  }
  return f;
}

/// F(x) = matrix * x + offset for the quadratic-cost / linear-price family.
struct AffineMap {
  Matrix matrix;
  Vector offset;

  Vector operator()(const Vector& x) const { return matrix * x + offset; }
};

/// Exact affine form of F, built column by column from pseudo_gradient.
inline AffineMap pseudo_gradient_affine(const GameSpec& spec) {
  const Index n = spec.dim();
  AffineMap f;
  f.offset = pseudo_gradient(spec, Vector::Zero(n));
  f.matrix.resize(n, n);
  for (Index c = 0; c < n; ++c)
    f.matrix.col(c) = pseudo_gradient(spec, Vector::Unit(n, c)) - f.offset;
  return f;
}

struct MonotonicityConstants {
  double eta = 0.0;  // strong monotonicity
  double ell = 0.0;  // Lipschitz
};

/// eta = min eigenvalue of the symmetric part of F's matrix, ell = its
/// spectral norm.
inline MonotonicityConstants monotonicity_constants(const GameSpec& spec) {
  const AffineMap f = pseudo_gradient_affine(spec);
  const Matrix sym = 0.5 * (f.matrix + f.matrix.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(sym, Eigen::EigenvaluesOnly);
  Eigen::JacobiSVD<Matrix> svd(f.matrix);
  return {eig.eigenvalues().minCoeff(), svd.singularValues()(0)};
}

/// Empirical (eta, ell) of a general map from random pairs in a box; for
/// maps without a closed-form Jacobian.
template <class Map>
MonotonicityConstants estimate_monotonicity(Map&& map, const Vector& lower,
                                            const Vector& upper, int trials,
                                            std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto draw = [&] {
    Vector v(lower.size());
    for (Index k = 0; k < v.size(); ++k)
      v[k] = lower[k] + (upper[k] - lower[k]) * unit(rng);
    return v;
  };
  MonotonicityConstants c{std::numeric_limits<double>::infinity(), 0.0};
  for (int t = 0; t < trials; ++t) {
    const Vector u = draw();
    const Vector v = draw();
    const double d2 = (u - v).squaredNorm();
    if (d2 == 0.0) continue;
    const Vector df = map(u) - map(v);
    c.eta = std::min(c.eta, df.dot(u - v) / d2);
    c.ell = std::max(c.ell, std::sqrt(df.squaredNorm() / d2));
  }
  return c;
}

/// Abar(omega) with the pseudo-gradient block replaced by fhat.
inline Vector forward_apply(const GameSpec& spec, const DualGraph& g,
                            const IterateState& s, const Vector& fhat) {
  const Index n = spec.dim();
  const Index m = spec.num_markets();
  const Index nm = spec.num_agents() * m;
  require(fhat.size() == n, "forward_apply: fhat length mismatch");
  require(s.lam.size() == nm && s.z.size() == nm && s.x.size() == n,
          "forward_apply: state dimension mismatch");
  Vector out(n + 2 * nm);
  out.head(n) = fhat;
  out.segment(n, nm).setZero();
  Vector dual = laplacian_apply(g, s.lam, m);
  for (Index i = 0; i < spec.num_agents(); ++i)
    dual.segment(i * m, m) += spec.coupling.slice(i);
  out.tail(nm) = dual;
  return out;
}

/// Runs f(i) for every agent in index order.
struct SequentialExecutor {
  template <class Fn>
  void operator()(Index n_agents, Fn&& f) const {
    for (Index i = 0; i < n_agents; ++i) f(i);
  }
};

/// Splits agents over worker threads; each f(i) writes only agent i's
/// slices, so results match SequentialExecutor bit for bit.
struct ThreadedExecutor {
  unsigned threads = std::max(1u, std::thread::hardware_concurrency());

  template <class Fn>
  void operator()(Index n_agents, Fn&& f) const {
    const Index workers = std::min<Index>(threads, n_agents);
    if (workers <= 1) {
      SequentialExecutor{}(n_agents, f);
      return;
    }
    std::vector<std::jthread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (Index w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        for (Index i = w; i < n_agents; i += workers) f(i);
      });
  }
};

struct PrimalPhase {
  Vector x_tilde;
  Vector z_tilde;
};

namespace detail {

inline void check_steps(const GameSpec& spec, const StepSizes& steps) {
  const Index n = spec.num_agents();
  require(steps.alpha.size() == n && steps.nu.size() == n &&
              steps.sigma.size() == n,
          "step sizes must have one entry per agent");
}

}  // namespace detail

/// x~_i = proj_Omega_i[x_i - alpha_i (fhat_i + A_i' lambda_i)]
/// z~_i = z_i - nu_i sum_j w_ij (lambda_i - lambda_j)
template <class Executor = SequentialExecutor>
PrimalPhase primal_phase(const GameSpec& spec, const DualGraph& g,
                         const StepSizes& steps, const IterateState& s,
                         const Vector& fhat, const Executor& exec = {}) {
  detail::check_steps(spec, steps);
  require(fhat.size() == spec.dim(), "primal_phase: fhat length mismatch");
  const Index m = spec.num_markets();
  const auto off = spec.offsets();
  PrimalPhase out{Vector(s.x.size()), Vector(s.z.size())};
  exec(spec.num_agents(), [&](Index i) {
    const AgentSpec& ag = spec.agents[i];
    const Index ni = ag.dim();
    const auto lam_i = s.lam.segment(i * m, m);
    const Vector step =
        s.x.segment(off[i], ni) -
        steps.alpha[i] * (fhat.segment(off[i], ni) + ag.market_map.transpose() * lam_i);
    out.x_tilde.segment(off[i], ni) = project_local(ag.omega, step);

    Vector lap = Vector::Zero(m);
    for (Index j = 0; j < g.size(); ++j) {
      const double w = g.weight(i, j);
      if (w != 0.0) lap += w * (lam_i - s.lam.segment(j * m, m));
    }
    out.z_tilde.segment(i * m, m) = s.z.segment(i * m, m) - steps.nu[i] * lap;
  });
  return out;
}

/// lambda~_i = proj_R+[lambda_i + sigma_i (A_i (2 x~_i - x_i) - b_i
///   + sum_j w_ij (2 (z~_i - z~_j) - (z_i - z_j)) - sum_j w_ij (lambda_i - lambda_j))]
template <class Executor = SequentialExecutor>
Vector dual_phase(const GameSpec& spec, const DualGraph& g,
                  const StepSizes& steps, const IterateState& s,
                  const PrimalPhase& primal, const Executor& exec = {}) {
  detail::check_steps(spec, steps);
  const Index m = spec.num_markets();
  const auto off = spec.offsets();
  Vector lam_tilde(s.lam.size());
  exec(spec.num_agents(), [&](Index i) {
    const AgentSpec& ag = spec.agents[i];
    const Index ni = ag.dim();
    const auto lam_i = s.lam.segment(i * m, m);
    Vector v = ag.market_map * (2.0 * primal.x_tilde.segment(off[i], ni) -
                                s.x.segment(off[i], ni)) -
               spec.coupling.slice(i);
    for (Index j = 0; j < g.size(); ++j) {
      const double w = g.weight(i, j);
      if (w == 0.0) continue;
      v += w * (2.0 * (primal.z_tilde.segment(i * m, m) -
                       primal.z_tilde.segment(j * m, m)) -
                (s.z.segment(i * m, m) - s.z.segment(j * m, m)));
      v -= w * (lam_i - s.lam.segment(j * m, m));
    }
    lam_tilde.segment(i * m, m) = (lam_i + steps.sigma[i] * v).cwiseMax(0.0);
  });
  return lam_tilde;
}

/// One resolvent evaluation J_{Phi^-1 Bbar}(omega - Phi^-1 Abar(omega)) with
/// F replaced by fhat.
template <class Executor = SequentialExecutor>
IterateState backward_step(const GameSpec& spec, const DualGraph& g,
                           const StepSizes& steps, const IterateState& s,
                           const Vector& fhat, const Executor& exec = {}) {
  PrimalPhase primal = primal_phase(spec, g, steps, s, fhat, exec);
  Vector lam = dual_phase(spec, g, steps, s, primal, exec);
  return {std::move(primal.x_tilde), std::move(primal.z_tilde), std::move(lam)};
}

/// |omega - omega~| / max(1, |omega|) with the exact expected gradient.
inline double fixed_point_residual(const GameSpec& spec, const DualGraph& g,
                                   const StepSizes& steps,
                                   const IterateState& s) {
  const IterateState t =
      backward_step(spec, g, steps, s, pseudo_gradient(spec, s.x));
  const double diff = std::sqrt((s.x - t.x).squaredNorm() +
                                (s.z - t.z).squaredNorm() +
                                (s.lam - t.lam).squaredNorm());
  const double scale = std::sqrt(s.x.squaredNorm() + s.z.squaredNorm() +
                                 s.lam.squaredNorm());
  return diff / std::max(1.0, scale);
}

/// blkdiag(A_1, ..., A_N), Nm x n.
inline Matrix stacked_market_map(const GameSpec& spec) {
  const Index m = spec.num_markets();
  Matrix a = Matrix::Zero(spec.num_agents() * m, spec.dim());
  Index off = 0;
  for (Index i = 0; i < spec.num_agents(); ++i) {
    const Index ni = spec.agents[i].dim();
    a.block(i * m, off, m, ni) = spec.agents[i].market_map;
    off += ni;
  }
  return a;
}

/// Skew-symmetric part S of Bbar.
inline Matrix skew_matrix(const GameSpec& spec, const DualGraph& g) {
  const Index n = spec.dim();
  const Index nm = spec.num_agents() * spec.num_markets();
  const Matrix a = stacked_market_map(spec);
  const Matrix l = kron_identity(laplacian(g), spec.num_markets());
  Matrix s = Matrix::Zero(n + 2 * nm, n + 2 * nm);
  s.block(0, n + nm, n, nm) = a.transpose();
  s.block(n, n + nm, nm, nm) = l;
  s.block(n + nm, 0, nm, n) = -a;
  s.block(n + nm, n, nm, nm) = -l;
  return s;
}

/// Abar as an affine map on the stacked omega (exact expected F).
inline AffineMap extended_forward_affine(const GameSpec& spec,
                                         const DualGraph& g) {
  const Index n = spec.dim();
  const Index m = spec.num_markets();
  const Index nm = spec.num_agents() * m;
  const AffineMap f = pseudo_gradient_affine(spec);
  AffineMap a;
  a.matrix = Matrix::Zero(n + 2 * nm, n + 2 * nm);
  a.matrix.topLeftCorner(n, n) = f.matrix;
  a.matrix.bottomRightCorner(nm, nm) = kron_identity(laplacian(g), m);
  a.offset = Vector::Zero(n + 2 * nm);
  a.offset.head(n) = f.offset;
  for (Index i = 0; i < spec.num_agents(); ++i)
    a.offset.segment(n + nm + i * m, m) = spec.coupling.slice(i);
  return a;
}

struct Preconditioner {
  Vector alpha_inv;  // per primal coordinate
  Vector nu_inv;     // per z coordinate
  Vector sigma_inv;  // per lambda coordinate
  Matrix dense;
  Vector row_margin;  // |Phi_rr| - sum_{c != r} |Phi_rc|

  bool symmetric() const {
    return (dense - dense.transpose()).cwiseAbs().maxCoeff() == 0.0;
  }
  double min_eigenvalue() const {
    Eigen::SelfAdjointEigenSolver<Matrix> eig(dense, Eigen::EigenvaluesOnly);
    return eig.eigenvalues().minCoeff();
  }
  std::vector<Index> dominance_violations() const {
    std::vector<Index> rows;
    for (Index r = 0; r < row_margin.size(); ++r)
      if (!(row_margin[r] > 0.0)) rows.push_back(r);
    return rows;
  }
};

/// Dense Phi for diagnostics. With `strict`, rows that are not strictly
/// diagonally dominant raise ConfigError.
inline Preconditioner preconditioner_assemble(const GameSpec& spec,
                                              const DualGraph& g,
                                              const StepSizes& steps,
                                              bool strict = true) {
  detail::check_steps(spec, steps);
  require((steps.alpha.array() > 0.0).all() && (steps.nu.array() > 0.0).all() &&
              (steps.sigma.array() > 0.0).all(),
          "preconditioner_assemble: step sizes must be positive");
  const Index n = spec.dim();
  const Index m = spec.num_markets();
  const Index nm = spec.num_agents() * m;
  Preconditioner p;
  p.alpha_inv.resize(n);
  p.nu_inv.resize(nm);
  p.sigma_inv.resize(nm);
  const auto off = spec.offsets();
  for (Index i = 0; i < spec.num_agents(); ++i) {
    p.alpha_inv.segment(off[i], spec.agents[i].dim()).setConstant(1.0 / steps.alpha[i]);
    p.nu_inv.segment(i * m, m).setConstant(1.0 / steps.nu[i]);
    p.sigma_inv.segment(i * m, m).setConstant(1.0 / steps.sigma[i]);
  }
  const Matrix a = stacked_market_map(spec);
  const Matrix l = kron_identity(laplacian(g), m);
  p.dense = Matrix::Zero(n + 2 * nm, n + 2 * nm);
  p.dense.topLeftCorner(n, n).diagonal() = p.alpha_inv;
  p.dense.block(n, n, nm, nm).diagonal() = p.nu_inv;
  p.dense.bottomRightCorner(nm, nm).diagonal() = p.sigma_inv;
  p.dense.block(0, n + nm, n, nm) = -a.transpose();
  p.dense.block(n + nm, 0, nm, n) = -a;
  p.dense.block(n, n + nm, nm, nm) = -l;
  p.dense.block(n + nm, n, nm, nm) = -l;

  const Matrix abs = p.dense.cwiseAbs();
  p.row_margin = 2.0 * abs.diagonal() - abs.rowwise().sum();

  if (strict) {
    const auto bad = p.dominance_violations();
    if (!bad.empty()) {
      std::string msg = "preconditioner not diagonally dominant on rows";
      for (Index r : bad) msg += " " + std::to_string(r);
      throw ConfigError(msg);
    }
  }
  return p;
}

/// Minimum over random pairs of
///   <Phi^-1 Abar(u) - Phi^-1 Abar(v), u - v>_Phi / |Phi^-1 Abar(u) - Phi^-1 Abar(v)|^2_Phi
/// = <dA, u - v> / (dA' Phi^-1 dA), with dA = Abar(u) - Abar(v).
inline double cocoercivity_probe(const GameSpec& spec, const DualGraph& g,
                                 const StepSizes& steps, int trials,
                                 std::uint64_t seed) {
  require(trials >= 1, "cocoercivity_probe: trials must be positive");
  const Preconditioner phi = preconditioner_assemble(spec, g, steps, false);
  const Eigen::LLT<Matrix> chol(phi.dense);
  if (chol.info() != Eigen::Success)
    throw ConfigError("cocoercivity_probe: preconditioner is not positive definite");
  const AffineMap abar = extended_forward_affine(spec, g);

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const Index dim = abar.offset.size();
  double ratio = std::numeric_limits<double>::infinity();
  for (int t = 0; t < trials; ++t) {
    Vector u(dim), v(dim);
    for (Index k = 0; k < dim; ++k) u[k] = normal(rng);
    for (Index k = 0; k < dim; ++k) v[k] = normal(rng);
    const Vector d = abar.matrix * (u - v);
    const double denom = d.dot(chol.solve(d));
    if (!(denom > 0.0)) continue;  // u - v in the kernel of Abar
    ratio = std::min(ratio, d.dot(u - v) / denom);
  }
  return ratio;
}

/// Completes (x*, lambda*) to a zero of Abar + Bbar: lambda_i = lambda*,
/// and z solves L z = (A x* - b)/N 1 - (A_i x*_i - b_i).
inline IterateState equilibrium_state(const GameSpec& spec, const DualGraph& g,
                                      const Vector& x_star,
                                      const Vector& lam_star) {
  const Index nag = spec.num_agents();
  const Index m = spec.num_markets();
  require(lam_star.size() == m, "equilibrium_state: lambda length mismatch");
  IterateState s = IterateState::zeros(spec);
  s.x = x_star;
  for (Index i = 0; i < nag; ++i) s.lam.segment(i * m, m) = lam_star;

  const Vector slack = (detail::market_supply(spec, x_star) - spec.coupling.cap) /
                       static_cast<double>(nag);
  Vector rhs(nag * m);
  const auto off = spec.offsets();
  for (Index i = 0; i < nag; ++i)
    rhs.segment(i * m, m) =
        slack - (spec.agents[i].market_map * x_star.segment(off[i], spec.agents[i].dim()) -
                 spec.coupling.slice(i));
  if (nag > 1) {
    const Matrix l = kron_identity(laplacian(g), m);
    s.z = l.completeOrthogonalDecomposition().solve(rhs);
  }
  return s;
}

}  // namespace sgne

#pragma once

#include <sgne/common.hpp>
#include <sgne/game_model.hpp>

#include <algorithm>
#include <limits>
#include <queue>
#include <utility>
#include <vector>

namespace sgne {

struct Edge {
  Index i = 0;
  Index j = 0;
  double w = 1.0;
};

/// Undirected weighted graph over which agents exchange (lambda, z).
class DualGraph {
 public:
  DualGraph() = default;

  explicit DualGraph(Index n_agents) : w_(Matrix::Zero(n_agents, n_agents)) {}

  explicit DualGraph(Matrix weights) : w_(std::move(weights)) {
    require(w_.rows() == w_.cols(), "DualGraph: weight matrix must be square");
    require((w_ - w_.transpose()).cwiseAbs().maxCoeff() == 0.0 || w_.size() == 0,
            "DualGraph: weight matrix must be symmetric");
    require((w_.array() >= 0.0).all(), "DualGraph: weights must be nonnegative");
    require(w_.size() == 0 || w_.diagonal().cwiseAbs().maxCoeff() == 0.0,
            "DualGraph: self loops are not allowed");
  }

  static DualGraph from_edges(Index n_agents, const std::vector<Edge>& edges) {
    DualGraph g(n_agents);
    for (const Edge& e : edges) g.add_edge(e.i, e.j, e.w);
    return g;
  }

  /// Ring 0-1-...-(N-1)-0 plus extra chords (0-based endpoints).
  static DualGraph cycle_plus_chords(
      Index n_agents, const std::vector<std::pair<Index, Index>>& chords,
      double weight = 1.0) {
    DualGraph g(n_agents);
    if (n_agents == 2) {
      g.add_edge(0, 1, weight);
    } else if (n_agents > 2) {
      for (Index i = 0; i < n_agents; ++i)
        g.add_edge(i, (i + 1) % n_agents, weight);
    }
    for (const auto& [a, b] : chords) g.add_edge(a, b, weight);
    return g;
  }

  void add_edge(Index i, Index j, double w = 1.0) {
    require(i >= 0 && j >= 0 && i < size() && j < size(),
            "DualGraph: edge endpoint out of range");
    require(i != j, "DualGraph: self loops are not allowed");
    require(w >= 0.0, "DualGraph: weights must be nonnegative");
    w_(i, j) = w;
    w_(j, i) = w;
  }

  Index size() const { return w_.rows(); }
  const Matrix& weights() const { return w_; }
  double weight(Index i, Index j) const { return w_(i, j); }

  std::vector<Edge> edges() const {
    std::vector<Edge> out;
    for (Index i = 0; i < size(); ++i)
      for (Index j = i + 1; j < size(); ++j)
        if (w_(i, j) > 0.0) out.push_back({i, j, w_(i, j)});
    return out;
  }

  /// Neighbors with positive weight, in increasing index order.
  std::vector<Index> neighbors(Index i) const {
    std::vector<Index> out;
    for (Index j = 0; j < size(); ++j)
      if (w_(i, j) > 0.0) out.push_back(j);
    return out;
  }

 private:
  Matrix w_;
};

/// L = diag(W 1) - W.
inline Matrix laplacian(const DualGraph& g) {
  const Matrix& w = g.weights();
  Matrix l = -w;
  l.diagonal() = w.rowwise().sum();
  return l;
}

struct Degrees {
  Vector per_agent;
  double max = 0.0;
};

inline Degrees degrees(const DualGraph& g) {
  Degrees d;
  d.per_agent = g.weights().rowwise().sum();
  d.max = d.per_agent.size() ? d.per_agent.maxCoeff() : 0.0;
  return d;
}

inline bool is_connected(const DualGraph& g) {
  const Index n = g.size();
  if (n <= 1) return true;
  std::vector<char> seen(static_cast<std::size_t>(n), 0);
  std::queue<Index> q;
  q.push(0);
  seen[0] = 1;
  Index count = 1;
  while (!q.empty()) {
    const Index u = q.front();
    q.pop();
    for (Index v = 0; v < n; ++v) {
      if (g.weight(u, v) > 0.0 && !seen[static_cast<std::size_t>(v)]) {
        seen[static_cast<std::size_t>(v)] = 1;
        ++count;
        q.push(v);
      }
    }
  }
  return count == n;
}

/// (L kron I_m) lambda for lambda stacked agent by agent.
inline Vector laplacian_apply(const DualGraph& g, const Vector& lam, Index m) {
  require(lam.size() == g.size() * m, "laplacian_apply: dimension mismatch");
  Vector out = Vector::Zero(lam.size());
  for (Index i = 0; i < g.size(); ++i) {
    for (Index j = 0; j < g.size(); ++j) {
      const double w = g.weight(i, j);
      if (w == 0.0) continue;
      out.segment(i * m, m) += w * (lam.segment(i * m, m) - lam.segment(j * m, m));
    }
  }
  return out;
}

inline Matrix kron_identity(const Matrix& a, Index m) {
  Matrix out = Matrix::Zero(a.rows() * m, a.cols() * m);
  for (Index r = 0; r < a.rows(); ++r)
    for (Index c = 0; c < a.cols(); ++c)
      if (a(r, c) != 0.0)
        out.block(r * m, c * m, m, m).diagonal().setConstant(a(r, c));
  return out;
}

struct StepSizeBounds {
  Vector alpha_max;
  Vector nu_max;
  Vector sigma_max;
  double tau = 0.0;
  double beta = 0.0;
};

/// Fraction of 1/(2 beta) used for tau; strictly below one.
inline constexpr double kTauFraction = 0.9;

/// Largest entries of |A_i'| row sums (x rows) and |A_i| row sums (lambda rows).
inline double max_abs_col_sum(const Matrix& a) {
  return a.cols() ? a.cwiseAbs().colwise().sum().maxCoeff() : 0.0;
}
inline double max_abs_row_sum(const Matrix& a) {
  return a.rows() && a.cols() ? a.cwiseAbs().rowwise().sum().maxCoeff() : 0.0;
}

/// Per-agent step-size ceilings that make the preconditioner diagonally
/// dominant with margin tau. beta = min(1/(2 d*), eta/ell^2), where the
/// degree term is dropped when d* = 0.
inline StepSizeBounds step_size_bounds(const DualGraph& g, const GameSpec& spec,
                                       double eta, double ell) {
  if (!(eta > 0.0)) throw ConfigError("step_size_bounds: eta must be positive");
  if (!(ell >= eta)) throw ConfigError("step_size_bounds: ell must be >= eta");
  if (g.size() != spec.num_agents())
    throw ConfigError("step_size_bounds: graph and game disagree on N");
  if (!is_connected(g))
    throw ConfigError("step_size_bounds: dual graph is disconnected");

  const Degrees deg = degrees(g);
  double beta = eta / (ell * ell);
  if (deg.max > 0.0) beta = std::min(beta, 1.0 / (2.0 * deg.max));

  StepSizeBounds b;
  b.beta = beta;
  b.tau = kTauFraction / (2.0 * beta);
  const Index n = spec.num_agents();
  b.alpha_max.resize(n);
  b.nu_max.resize(n);
  b.sigma_max.resize(n);
  for (Index i = 0; i < n; ++i) {
    const Matrix& a = spec.agents[i].market_map;
    const double di = deg.per_agent[i];
    b.alpha_max[i] = 1.0 / (max_abs_col_sum(a) + b.tau);
    b.nu_max[i] = 1.0 / (2.0 * di + b.tau);
    b.sigma_max[i] = 1.0 / (max_abs_row_sum(a) + 2.0 * di + b.tau);
  }
  return b;
}

}  // namespace sgne

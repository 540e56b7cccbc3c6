#pragma once

// Networked Cournot game with stochastic linear prices and affine market
// capacity constraints. Each agent i picks quantities x_i in a box and pays
//
//   J_i(x, xi) = pi_i |x_i|^2 + g_i' x_i - (Pbar - D(xi) A x)' A_i x_i
//
// where D(xi) = diag(d_1, ..., d_m) collects random price slopes.

#include <sgne/common.hpp>

#include <algorithm>
#include <cmath>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace sgne {

struct BoxSet {
  Vector lower;
  Vector upper;

  Index dim() const { return lower.size(); }
  bool contains(const Vector& v, double slack = 0.0) const {
    return v.size() == dim() && (v.array() >= lower.array() - slack).all() &&
           (v.array() <= upper.array() + slack).all();
  }
};

struct AgentSpec {
  int id = 0;
  BoxSet omega;
  double quad_coeff = 1.0;  // pi_i
  Vector lin_coeff;         // g_i
  Matrix market_map;        // A_i, m x n_i, 0/1 entries

  Index dim() const { return omega.dim(); }
};

struct CouplingConstraints {
  Vector cap;     // b
  Matrix slices;  // row i holds b_i'

  /// Equal split b_i = b / N.
  static CouplingConstraints equal_split(const Vector& cap, Index n_agents) {
    CouplingConstraints c;
    c.cap = cap;
    c.slices = Matrix(n_agents, cap.size());
    for (Index i = 0; i < n_agents; ++i)
      c.slices.row(i) = cap.transpose() / static_cast<double>(n_agents);
    return c;
  }
  Vector slice(Index i) const { return slices.row(i).transpose(); }
};

struct PriceModel {
  Vector base_price;  // Pbar
  Vector slope_mean;  // E[d_j]
  Vector slope_std;
};

struct GameSpec {
  std::vector<AgentSpec> agents;
  CouplingConstraints coupling;
  PriceModel price;

  Index num_agents() const { return static_cast<Index>(agents.size()); }
  Index num_markets() const { return coupling.cap.size(); }
  Index dim() const {
    Index n = 0;
    for (const auto& a : agents) n += a.dim();
    return n;
  }
  /// Start of agent i's block in the stacked decision vector.
  Index offset(Index i) const {
    Index off = 0;
    for (Index j = 0; j < i; ++j) off += agents[j].dim();
    return off;
  }
  std::vector<Index> offsets() const {
    std::vector<Index> out(agents.size() + 1, 0);
    for (std::size_t i = 0; i < agents.size(); ++i)
      out[i + 1] = out[i] + agents[i].dim();
    return out;
  }
  /// A = [A_1, ..., A_N].
  Matrix coupling_matrix() const {
    Matrix a = Matrix::Zero(num_markets(), dim());
    Index off = 0;
    for (const auto& ag : agents) {
      a.middleCols(off, ag.dim()) = ag.market_map;
      off += ag.dim();
    }
    return a;
  }
  Vector block(const Vector& x, Index i) const {
    return x.segment(offset(i), agents[i].dim());
  }
  bool is_stochastic() const {
    return price.slope_std.size() > 0 && (price.slope_std.array() > 0.0).any();
  }
};

namespace detail {

inline void check_stacked(const GameSpec& spec, const Vector& x) {
  require(x.size() == spec.dim(),
          "stacked decision has length " + std::to_string(x.size()) +
              ", expected " + std::to_string(spec.dim()));
}

inline void check_agent(const GameSpec& spec, Index i) {
  require(i >= 0 && i < spec.num_agents(),
          "agent index " + std::to_string(i) + " out of range");
}

inline void check_slopes(const GameSpec& spec, const Vector& d) {
  require(d.size() == spec.num_markets(),
          "slope realization has length " + std::to_string(d.size()) +
              ", expected " + std::to_string(spec.num_markets()));
}

/// Gradient of J_i for a given slope vector d. Linear in d, so the SAA
/// average over samples equals this evaluated at the sample mean.
inline Vector gradient_with_supply(const AgentSpec& ag,
                                   const Eigen::Ref<const Vector>& xi,
                                   const Vector& base_price,
                                   const Vector& supply, const Vector& d) {
  const Vector price = base_price - d.cwiseProduct(supply);
  const Vector own = ag.market_map * xi;
  return 2.0 * ag.quad_coeff * xi + ag.lin_coeff -
         ag.market_map.transpose() * (price - d.cwiseProduct(own));
}

/// Total quantity Ax delivered to each market.
inline Vector market_supply(const GameSpec& spec, const Vector& x) {
  Vector s = Vector::Zero(spec.num_markets());
  Index off = 0;
  for (const auto& ag : spec.agents) {
    s.noalias() += ag.market_map * x.segment(off, ag.dim());
    off += ag.dim();
  }
  return s;
}

inline Vector gradient_at_slopes(const GameSpec& spec, Index i,
                                 const Vector& x, const Vector& d) {
  return gradient_with_supply(spec.agents[i], spec.block(x, i),
                              spec.price.base_price, market_supply(spec, x), d);
}

}  // namespace detail

inline double eval_cost(const GameSpec& spec, Index i, const Vector& x,
                        const Vector& d_sample) {
  detail::check_agent(spec, i);
  detail::check_stacked(spec, x);
  detail::check_slopes(spec, d_sample);
  const AgentSpec& ag = spec.agents[i];
  const Vector xi = spec.block(x, i);
  const Vector price = spec.price.base_price -
                       d_sample.cwiseProduct(detail::market_supply(spec, x));
  return ag.quad_coeff * xi.squaredNorm() + ag.lin_coeff.dot(xi) -
         price.dot(ag.market_map * xi);
}

/// Expected partial gradient E[grad_{x_i} J_i(x, xi)] in closed form.
inline Vector local_gradient_exact(const GameSpec& spec, Index i,
                                   const Vector& x) {
  detail::check_agent(spec, i);
  detail::check_stacked(spec, x);
  return detail::gradient_at_slopes(spec, i, x, spec.price.slope_mean);
}

/// Sample-average estimate of the partial gradient over the given slope
/// realizations, one per sample.
inline Vector local_gradient_sampled(const GameSpec& spec, Index i,
                                     const Vector& x,
                                     std::span<const Vector> samples) {
  detail::check_agent(spec, i);
  detail::check_stacked(spec, x);
  require(!samples.empty(), "local_gradient_sampled: empty sample list");
  Vector acc = Vector::Zero(spec.agents[i].dim());
  for (const Vector& d : samples) {
    detail::check_slopes(spec, d);
    acc += detail::gradient_at_slopes(spec, i, x, d);
  }
  return acc / static_cast<double>(samples.size());
}

inline Vector project_local(const BoxSet& omega, const Vector& v) {
  require(v.size() == omega.dim(), "project_local: dimension mismatch");
  return v.cwiseMax(omega.lower).cwiseMin(omega.upper);
}

/// Draws slope realizations d ~ N(mean, std^2) truncated to d >= 0.
class SlopeSampler {
 public:
  SlopeSampler() = default;
  explicit SlopeSampler(std::seed_seq& seq) : engine_(seq) {}
  explicit SlopeSampler(std::uint64_t seed) : engine_(seed) {}

  double draw(double mean, double std) {
    if (std <= 0.0) return mean;
    for (;;) {
      const double v = mean + std * normal_(engine_);
      if (v >= 0.0) return v;
    }
  }

  Vector draw(const PriceModel& price) {
    Vector d(price.slope_mean.size());
    for (Index j = 0; j < d.size(); ++j)
      d[j] = draw(price.slope_mean[j], price.slope_std[j]);
    return d;
  }

  /// Mean of `count` draws on the listed markets; other entries hold the
  /// distribution mean (they do not enter the gradient of an agent that
  /// does not serve them).
  Vector draw_mean(const PriceModel& price, std::span<const Index> markets,
                   std::size_t count) {
    Vector d = price.slope_mean;
    for (Index j : markets) {
      double acc = 0.0;
      for (std::size_t s = 0; s < count; ++s)
        acc += draw(price.slope_mean[j], price.slope_std[j]);
      d[j] = acc / static_cast<double>(count);
    }
    return d;
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_{0};
  std::normal_distribution<double> normal_{0.0, 1.0};
};

/// Markets touched by agent i (rows of A_i with a nonzero entry).
inline std::vector<Index> served_markets(const AgentSpec& ag) {
  std::vector<Index> out;
  for (Index j = 0; j < ag.market_map.rows(); ++j)
    if ((ag.market_map.row(j).array() != 0.0).any()) out.push_back(j);
  return out;
}

/// Lists every broken invariant; empty means the instance is usable.
inline std::vector<std::string> validate_spec(const GameSpec& spec) {
  std::vector<std::string> out;
  const Index m = spec.num_markets();
  const Index n_agents = spec.num_agents();
  if (n_agents == 0) out.emplace_back("game: no agents");
  if (m == 0) out.emplace_back("coupling: empty capacity vector");

  for (Index i = 0; i < n_agents; ++i) {
    const AgentSpec& ag = spec.agents[i];
    const std::string who = "agent " + std::to_string(i);
    const Index ni = ag.omega.lower.size();
    if (ni == 0) out.push_back(who + ": zero-dimensional decision");
    if (ag.omega.upper.size() != ni) {
      out.push_back(who + ": box bounds have different lengths");
      continue;
    }
    if ((ag.omega.lower.array() > ag.omega.upper.array()).any())
      out.push_back(who + ": lower bound exceeds upper bound");
    if (!ag.omega.lower.allFinite() || !ag.omega.upper.allFinite())
      out.push_back(who + ": box is not compact");
    if (!(ag.quad_coeff > 0.0))
      out.push_back(who + ": quad_coeff must be positive");
    if (ag.lin_coeff.size() != ni)
      out.push_back(who + ": lin_coeff length mismatch");
    if (ag.market_map.rows() != m || ag.market_map.cols() != ni) {
      out.push_back(who + ": market_map has wrong shape");
    } else {
      for (Index c = 0; c < ni; ++c) {
        const auto col = ag.market_map.col(c).array();
        const bool binary = ((col == 0.0) || (col == 1.0)).all();
        if (!binary || col.sum() > 1.0)
          out.push_back(who + ": market_map column " + std::to_string(c) +
                        " must select at most one market");
      }
    }
    if (ni > 0 && ag.omega.upper.size() == ni &&
        ((ag.omega.lower.array() > 0.0) || (ag.omega.upper.array() < 0.0))
            .any())
      out.push_back(who + ": x = 0 is outside the local box");
  }

  const CouplingConstraints& c = spec.coupling;
  if (c.slices.rows() != n_agents || c.slices.cols() != m) {
    out.emplace_back("coupling: slices have wrong shape");
  } else if (m > 0 && n_agents > 0) {
    const Vector total = c.slices.colwise().sum().transpose();
    const double tol = 1e-12 * std::max(1.0, c.cap.cwiseAbs().maxCoeff());
    if ((total - c.cap).cwiseAbs().maxCoeff() > tol)
      out.emplace_back("coupling: slices do not sum to cap");
  }
  if (m > 0 && (c.cap.array() < 0.0).any())
    out.emplace_back("coupling: x = 0 infeasible (negative cap)");

  const PriceModel& p = spec.price;
  if (p.base_price.size() != m || p.slope_mean.size() != m ||
      p.slope_std.size() != m) {
    out.emplace_back("price: vectors must have one entry per market");
  } else {
    if ((p.slope_mean.array() <= 0.0).any())
      out.emplace_back("price: slope_mean must be positive");
    if ((p.slope_std.array() < 0.0).any())
      out.emplace_back("price: slope_std must be nonnegative");
  }
  return out;
}

/// Builds a 0/1 selector A_i from per-column market indices; -1 leaves the
/// column empty.
inline Matrix selector_matrix(Index n_markets, std::span<const int> markets) {
  Matrix a = Matrix::Zero(n_markets, static_cast<Index>(markets.size()));
  for (std::size_t c = 0; c < markets.size(); ++c) {
    if (markets[c] < 0) continue;
    require(markets[c] < n_markets, "selector_matrix: market index out of range");
    a(markets[c], static_cast<Index>(c)) = 1.0;
  }
  return a;
}

/// Inverse of selector_matrix.
inline std::vector<int> selector_indices(const Matrix& a) {
  std::vector<int> out(static_cast<std::size_t>(a.cols()), -1);
  for (Index c = 0; c < a.cols(); ++c)
    for (Index j = 0; j < a.rows(); ++j)
      if (a(j, c) != 0.0) out[static_cast<std::size_t>(c)] = static_cast<int>(j);
  return out;
}

}  // namespace sgne

#pragma once

// Instance builders shared by the unit suites and the acceptance binary.

#include <sgne/sgne.hpp>

#include <algorithm>
#include <cstdint>
#include <random>
#include <utility>
#include <vector>

namespace sgne::testing {

/// Bench-family instance of the given size on a plain ring (N = 2: one edge).
inline Instance small_instance(std::uint64_t seed, int n_agents, int n_markets,
                               bool deterministic = true) {
  BenchConfig cfg;
  cfg.n_agents = n_agents;
  cfg.n_markets = n_markets;
  cfg.chords.clear();
  cfg.max_markets_per_agent = std::min(3, n_markets);
  cfg.deterministic = deterministic;
  cfg.seed = seed;
  return generate_instance(cfg);
}

/// Random valid instance: 2..8 agents, 1..3 markets, ring plus a few random
/// chords with weights in [0.5, 2].
inline Instance random_instance(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> agents(2, 8), markets(1, 3);
  BenchConfig cfg;
  cfg.n_agents = agents(rng);
  cfg.n_markets = markets(rng);
  cfg.chords.clear();
  cfg.max_markets_per_agent = std::min(3, cfg.n_markets);
  Instance inst = generate_instance(cfg, rng);

  std::uniform_real_distribution<double> weight(0.5, 2.0);
  std::uniform_int_distribution<Index> node(0, cfg.n_agents - 1);
  const Index n = cfg.n_agents;
  for (Index i = 0; i < n; ++i)
    for (Index j = i + 1; j < n; ++j)
      if (inst.graph.weight(i, j) != 0.0) inst.graph.add_edge(i, j, weight(rng));
  for (int extra = 0; extra < 2 && n > 3; ++extra) {
    const Index a = node(rng), b = node(rng);
    if (a != b) inst.graph.add_edge(a, b, weight(rng));
  }
  return inst;
}

/// Two-agent, one-market game with a binding coupling constraint.
inline GameSpec two_agent_game(double cap = 0.5) {
  GameSpec g;
  for (int i = 0; i < 2; ++i) {
    AgentSpec a;
    a.id = i;
    a.omega.lower = Vector::Zero(1);
    a.omega.upper = Vector::Ones(1);
    a.quad_coeff = 1.0;
    a.lin_coeff = Vector::Constant(1, 0.1);
    a.market_map = Matrix::Ones(1, 1);
    g.agents.push_back(a);
  }
  g.coupling = CouplingConstraints::equal_split(Vector::Constant(1, cap), 2);
  g.price.base_price = Vector::Constant(1, 3.0);
  g.price.slope_mean = Vector::Constant(1, 0.8);
  g.price.slope_std = Vector::Zero(1);
  return g;
}

}  // namespace sgne::testing

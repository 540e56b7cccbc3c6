#include "support.hpp"

#include <sgne/sgne.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

using namespace sgne;
using sgne::testing::two_agent_game;

namespace {

SolverParams params_for(const Instance& inst, double delta = 1.0) {
  SolverParams p = SolverParams::at_bounds(inst.game, inst.graph);
  p.delta = delta;
  p.seed = 3;
  return p;
}

Instance two_agent_instance() {
  return {two_agent_game(), DualGraph::cycle_plus_chords(2, {})};
}

}  // namespace

TEST(BatchSize, Examples) {
  EXPECT_EQ(batch_size({1.0, 1.0, 1.0, std::nullopt}, 0), 1u);
  EXPECT_EQ(batch_size({1.0, 5.0, 0.5, std::nullopt}, 0), 12u);
  EXPECT_EQ(batch_size({1.0, 5.0, 0.5, 100}, 100000), 100u);
  EXPECT_TRUE(batch_capped({1.0, 5.0, 0.5, 100}, 100000));
  EXPECT_FALSE(batch_capped({1.0, 5.0, 0.5, 100}, 0));
  EXPECT_THROW(batch_size({}, -1), ValidationError);
}

TEST(BatchSize, NondecreasingInK) {
  const SamplingSchedule s;
  for (long k = 1; k < 1000; ++k) EXPECT_GE(batch_size(s, k), batch_size(s, k - 1));
}

TEST(IterateOnce, FixedPointUnchanged) {
  const Instance inst = sgne::testing::small_instance(8, 3, 2);
  const ReferenceSolution ref = solve_reference(inst.game);
  const IterateState star = equilibrium_state(inst.game, inst.graph, ref.x_star, ref.lam_star);
  SamplerBank bank(1, 3);
  const auto [next, rec] = iterate_once(inst.game, inst.graph, params_for(inst), star, 0, bank);
  EXPECT_LT((next.stacked() - star.stacked()).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_EQ(rec.batch, 0u);
  EXPECT_LT(rec.nat_residual, 1e-9);
}

TEST(IterateOnce, DampingBlendsWithBackwardStep) {
  const Instance inst = sgne::testing::small_instance(10, 5, 2);
  SolverParams p = params_for(inst, 0.3);
  std::mt19937_64 rng(2);
  IterateState s = IterateState::zeros(inst.game);
  s.x = random_initial_point(inst.game, rng);
  SamplerBank bank(1, 5);
  const auto [next, rec] = iterate_once(inst.game, inst.graph, p, s, 0, bank);
  const IterateState tilde =
      backward_step(inst.game, inst.graph, p.steps, s, pseudo_gradient(inst.game, s.x));
  EXPECT_LT((next.stacked() - (0.7 * s.stacked() + 0.3 * tilde.stacked())).norm(), 1e-14);
}

TEST(IterateOnce, StochasticRecordsBatchAndError) {
  Instance inst = sgne::testing::small_instance(4, 3, 2, false);
  const SolverParams p = params_for(inst);
  IterateState s = IterateState::zeros(inst.game);
  s.x.setConstant(0.5);  // at x = 0 the gradient does not depend on the slopes
  SamplerBank bank(1, 3);
  const auto [next, rec] = iterate_once(inst.game, inst.graph, p, s, 4, bank);
  EXPECT_EQ(rec.batch, batch_size(p.batch, 4));
  EXPECT_GT(rec.sq_error, 0.0);
}

TEST(Run, SingleAgentReachesClippedMinimizer) {
  GameSpec s = two_agent_game(10.0);
  s.agents.resize(1);
  s.agents[0].market_map.setZero();
  s.agents[0].lin_coeff.setConstant(-0.4);
  s.coupling = CouplingConstraints::equal_split(Vector::Constant(1, 10.0), 1);
  const Instance inst{s, DualGraph(1)};
  // At the ceilings alpha * 2 pi = 1 / (beta tau) > 2, so the undamped
  // iteration oscillates on this decoupled agent; damping restores averaging.
  SolverParams p = params_for(inst, 0.5);
  p.tol = 1e-12;
  const RunReport r = run(inst.game, inst.graph, p);
  EXPECT_EQ(r.reason, Termination::kConverged);
  EXPECT_NEAR(r.terminal.x[0], 0.2, 1e-10);

  s.agents[0].lin_coeff.setConstant(-4.0);  // minimizer 2 clipped to 1
  const RunReport clipped = run(s, DualGraph(1), p);
  EXPECT_NEAR(clipped.terminal.x[0], 1.0, 1e-10);
}

TEST(Run, TwoAgentMatchesOracle) {
  const Instance inst = two_agent_instance();
  SolverParams p = params_for(inst);
  p.tol = 1e-12;
  const ReferenceSolution ref = solve_reference(inst.game);
  const RunReport r = run(inst.game, inst.graph, p, ref.x_star);
  ASSERT_EQ(r.reason, Termination::kConverged);
  EXPECT_LE(normalized_distance(r.terminal.x, ref.x_star), 1e-6);
  EXPECT_LE(r.records.back().consensus, 1e-8);
}

TEST(Run, IteratesStayInLocalSets) {
  const Instance inst = sgne::testing::small_instance(14, 5, 2, false);
  const SolverParams p = params_for(inst, 0.6);
  SamplerBank bank(p.seed, 5);
  IterateState s = IterateState::zeros(inst.game);
  s.x = random_initial_point(inst.game, bank.init().engine());
  for (long k = 0; k < 300; ++k) {
    s = iterate_once(inst.game, inst.graph, p, s, k, bank).first;
    for (Index i = 0; i < 5; ++i)
      ASSERT_TRUE(inst.game.agents[i].omega.contains(inst.game.block(s.x, i)));
    ASSERT_GE(s.lam.minCoeff(), 0.0);
  }
}

TEST(Run, PhiDistanceNonincreasing) {
  const Instance inst = sgne::testing::small_instance(21, 3, 2);
  const SolverParams p = params_for(inst);
  const ReferenceSolution ref = solve_reference(inst.game, {1e-13, 5'000'000, 2, 1e-7, 7});
  const IterateState star = equilibrium_state(inst.game, inst.graph, ref.x_star, ref.lam_star);
  const Matrix phi = preconditioner_assemble(inst.game, inst.graph, p.steps).dense;
  SamplerBank bank(p.seed, 3);
  IterateState s = IterateState::zeros(inst.game);
  s.x = random_initial_point(inst.game, bank.init().engine());
  auto dist = [&](const IterateState& w) {
    const Vector d = w.stacked() - star.stacked();
    return std::sqrt(d.dot(phi * d));
  };
  double prev = dist(s);
  for (long k = 0; k < 2000 && prev > 1e-8; ++k) {
    s = iterate_once(inst.game, inst.graph, p, s, k, bank).first;
    const double now = dist(s);
    ASSERT_LE(now, prev + 1e-10) << "iteration " << k;
    prev = now;
  }
}

TEST(Run, ReproducibleBitForBit) {
  const Instance inst = sgne::testing::small_instance(30, 5, 2, false);
  SolverParams p = params_for(inst, 0.7);
  p.max_iters = 200;
  p.tol = 0.0;
  const RunReport a = run(inst.game, inst.graph, p);
  const RunReport b = run(inst.game, inst.graph, p);
  ASSERT_EQ(a.records.size(), b.records.size());
  for (std::size_t k = 0; k < a.records.size(); ++k) {
    EXPECT_EQ(a.records[k].nat_residual, b.records[k].nat_residual);
    EXPECT_EQ(a.records[k].sq_error, b.records[k].sq_error);
  }
  EXPECT_EQ(a.terminal.stacked(), b.terminal.stacked());

  p.seed = 4;
  const RunReport c = run(inst.game, inst.graph, p);
  EXPECT_NE(a.terminal.stacked(), c.terminal.stacked());
}

TEST(Run, CapBindsFromFirstCappedIteration) {
  const Instance inst = sgne::testing::small_instance(30, 2, 1, false);
  SolverParams p = params_for(inst);
  p.batch.cap = 50;
  p.max_iters = 30;
  p.tol = 0.0;
  const RunReport r = run(inst.game, inst.graph, p);
  ASSERT_TRUE(r.cap_binds_from.has_value());
  EXPECT_EQ(*r.cap_binds_from, 9);  // ceil(14^1.5) = 53 > 50
  EXPECT_EQ(r.records[9].batch, 50u);
}

TEST(Run, RejectsBadParameters) {
  const Instance inst = two_agent_instance();
  SolverParams p = params_for(inst);
  p.delta = 0.0;
  EXPECT_THROW(run(inst.game, inst.graph, p), ConfigError);
  p.delta = 1.5;
  EXPECT_THROW(run(inst.game, inst.graph, p), ConfigError);
  p = params_for(inst);
  p.steps.alpha[0] *= 2.0;
  EXPECT_THROW(run(inst.game, inst.graph, p), ConfigError);
  p.enforce_bounds = false;
  p.max_iters = 5;
  EXPECT_NO_THROW(run(inst.game, inst.graph, p));
  p.stop_distance = 1e-3;
  EXPECT_THROW(run(inst.game, inst.graph, p), ConfigError);
  EXPECT_THROW(run(inst.game, DualGraph(2), params_for(inst)), ConfigError);
}

TEST(Run, SaaErrorShrinksLikeOneOverBatch) {
  Instance inst = sgne::testing::small_instance(2, 5, 2, false);
  SamplerBank bank(9, 5);
  std::mt19937_64 rng(1);
  const Vector x = random_initial_point(inst.game, rng);
  const Vector f = pseudo_gradient(inst.game, x);
  std::vector<double> lx, ly;
  for (std::size_t n : {10u, 40u, 160u, 640u}) {
    double acc = 0.0;
    for (int r = 0; r < 200; ++r)
      acc += (sampled_pseudo_gradient(inst.game, x, n, bank, false) - f).squaredNorm();
    lx.push_back(std::log(double(n)));
    ly.push_back(std::log(acc / 200));
  }
  const double slope = (ly.back() - ly.front()) / (lx.back() - lx.front());
  EXPECT_NEAR(slope, -1.0, 0.2);
}

TEST(Trajectory, CsvContractAndReadBack) {
  const Instance inst = sgne::testing::small_instance(5, 3, 1, false);
  SolverParams p = params_for(inst);
  p.max_iters = 20;
  p.tol = 0.0;
  const RunReport r = run(inst.game, inst.graph, p);
  std::stringstream ss;
  write_trajectory_csv(ss, r);
  std::string header;
  std::getline(ss, header);
  EXPECT_EQ(header, "iter,batch,nat_residual,consensus,constraint_violation,norm_dist");
  ss.seekg(0);
  const auto back = read_trajectory_csv(ss);
  ASSERT_EQ(back.size(), r.records.size());
  for (std::size_t k = 0; k < back.size(); ++k) {
    EXPECT_EQ(back[k].iter, r.records[k].iter);
    EXPECT_EQ(back[k].batch, r.records[k].batch);
    EXPECT_EQ(back[k].nat_residual, r.records[k].nat_residual);
    EXPECT_TRUE(std::isnan(back[k].norm_dist));
  }
}

TEST(Trajectory, ErrorsNameRowAndColumn) {
  std::stringstream bad_header("iter,batch\n");
  EXPECT_THROW(read_trajectory_csv(bad_header), ValidationError);
  std::stringstream bad_cell(
      "iter,batch,nat_residual,consensus,constraint_violation,norm_dist\n"
      "0,12,0.5,0,0,nan\n"
      "1,13,oops,0,0,nan\n");
  try {
    read_trajectory_csv(bad_cell);
    FAIL() << "expected a parse error";
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("row 3"), std::string::npos) << msg;
    EXPECT_NE(msg.find("nat_residual"), std::string::npos) << msg;
  }
}

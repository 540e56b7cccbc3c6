#include "support.hpp"

#include <sgne/sgne.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

using namespace sgne;
using sgne::testing::two_agent_game;

namespace {

GameSpec single_agent(double pi, double g, double base, double slope, Matrix a) {
  GameSpec s;
  AgentSpec ag;
  ag.omega.lower = Vector::Constant(a.cols(), -10.0);
  ag.omega.upper = Vector::Constant(a.cols(), 10.0);
  ag.quad_coeff = pi;
  ag.lin_coeff = Vector::Constant(a.cols(), g);
  ag.market_map = a;
  s.agents.push_back(ag);
  s.coupling = CouplingConstraints::equal_split(Vector::Constant(a.rows(), 100.0), 1);
  s.price.base_price = Vector::Constant(a.rows(), base);
  s.price.slope_mean = Vector::Constant(a.rows(), slope);
  s.price.slope_std = Vector::Zero(a.rows());
  return s;
}

double expected_cost(const GameSpec& s, Index i, const Vector& x) {
  return eval_cost(s, i, x, s.price.slope_mean);
}

}  // namespace

TEST(EvalCost, PureQuadraticWithZeroPrice) {
  const GameSpec s = single_agent(1.0, 0.0, 0.0, 1.0, Matrix::Ones(1, 1));
  EXPECT_DOUBLE_EQ(eval_cost(s, 0, Vector::Constant(1, 2.0), Vector::Zero(1)), 4.0);
}

TEST(EvalCost, ZeroDecisionCostsNothing) {
  const Instance inst = sgne::testing::small_instance(3, 4, 2);
  const Vector x = Vector::Zero(inst.game.dim());
  for (Index i = 0; i < inst.game.num_agents(); ++i)
    EXPECT_DOUBLE_EQ(eval_cost(inst.game, i, x, inst.game.price.slope_mean), 0.0);
}

TEST(EvalCost, TwoAgentHandValue) {
  GameSpec s = two_agent_game(10.0);
  s.price.base_price.setConstant(2.0);
  for (auto& ag : s.agents) ag.lin_coeff.setZero();
  const Vector x = Vector::Ones(2);
  const Vector d = Vector::Constant(1, 0.8);
  EXPECT_NEAR(eval_cost(s, 0, x, d), 0.6, 1e-14);
  EXPECT_NEAR(eval_cost(s, 1, x, d), 0.6, 1e-14);
}

TEST(LocalGradient, DecoupledAgent) {
  const GameSpec s = single_agent(3.0, 0.5, 2.0, 0.8, Matrix::Zero(1, 2));
  const Vector x = (Vector(2) << 0.3, -0.7).finished();
  const Vector expect = 6.0 * x + Vector::Constant(2, 0.5);
  EXPECT_LT((local_gradient_exact(s, 0, x) - expect).norm(), 1e-15);
}

TEST(LocalGradient, AtZeroOnlyLinearTerms) {
  const Instance inst = sgne::testing::small_instance(5, 3, 2);
  const Vector x = Vector::Zero(inst.game.dim());
  for (Index i = 0; i < inst.game.num_agents(); ++i) {
    const AgentSpec& ag = inst.game.agents[i];
    const Vector expect = ag.lin_coeff - ag.market_map.transpose() * inst.game.price.base_price;
    EXPECT_LT((local_gradient_exact(inst.game, i, x) - expect).norm(), 1e-14);
  }
}

TEST(LocalGradient, TwoAgentValue) {
  GameSpec s = two_agent_game(10.0);
  s.price.base_price.setConstant(2.0);
  for (auto& ag : s.agents) ag.lin_coeff.setZero();
  const Vector x = Vector::Ones(2);
  EXPECT_NEAR(local_gradient_exact(s, 0, x)[0], 2.4, 1e-14);
  EXPECT_NEAR(local_gradient_exact(s, 1, x)[0], 2.4, 1e-14);
}

TEST(LocalGradient, MatchesCentralDifferences) {
  std::mt19937_64 rng(11);
  for (int t = 0; t < 20; ++t) {
    const Instance inst = sgne::testing::random_instance(rng);
    const GameSpec& s = inst.game;
    std::mt19937_64 xr(t);
    const Vector x = random_initial_point(s, xr);
    const double h = 1e-5;
    for (Index i = 0; i < s.num_agents(); ++i) {
      const Vector grad = local_gradient_exact(s, i, x);
      Vector fd(grad.size());
      for (Index c = 0; c < grad.size(); ++c) {
        Vector xp = x, xm = x;
        xp[s.offset(i) + c] += h;
        xm[s.offset(i) + c] -= h;
        fd[c] = (expected_cost(s, i, xp) - expected_cost(s, i, xm)) / (2 * h);
      }
      EXPECT_LE((grad - fd).norm(), 1e-6 * std::max(1.0, grad.norm()));
    }
  }
}

TEST(SampledGradient, DegenerateSamplesMatchExact) {
  const GameSpec s = two_agent_game();
  const Vector x = (Vector(2) << 0.2, 0.9).finished();
  const std::vector<Vector> same(5, s.price.slope_mean);
  const std::vector<Vector> one{s.price.slope_mean};
  for (Index i = 0; i < 2; ++i) {
    EXPECT_LT((local_gradient_sampled(s, i, x, same) - local_gradient_exact(s, i, x)).norm(),
              1e-15);
    EXPECT_LT((local_gradient_sampled(s, i, x, one) - local_gradient_exact(s, i, x)).norm(),
              1e-15);
  }
}

TEST(SampledGradient, EmptySampleListRejected) {
  const GameSpec s = two_agent_game();
  EXPECT_THROW(local_gradient_sampled(s, 0, Vector::Zero(2), {}), ValidationError);
}

TEST(SampledGradient, UnbiasedWithinThreeStandardErrors) {
  GameSpec s = two_agent_game(10.0);
  s.price.slope_std.setConstant(0.1);
  const Vector x = (Vector(2) << 0.7, 0.4).finished();
  SlopeSampler sampler(std::uint64_t{99});
  const int n = 20000;
  for (Index i = 0; i < 2; ++i) {
    double sum = 0.0, sumsq = 0.0;
    for (int k = 0; k < n; ++k) {
      const std::vector<Vector> one{sampler.draw(s.price)};
      const double v = local_gradient_sampled(s, i, x, one)[0];
      sum += v;
      sumsq += v * v;
    }
    const double mean = sum / n;
    const double se = std::sqrt((sumsq / n - mean * mean) / n);
    EXPECT_LE(std::abs(mean - local_gradient_exact(s, i, x)[0]), 3.0 * se);
  }
}

TEST(SampledGradient, MillionSamplesConcentrate) {
  GameSpec s = two_agent_game(10.0);
  s.price.base_price.setConstant(2.0);
  for (auto& ag : s.agents) ag.lin_coeff.setZero();
  s.price.slope_std.setConstant(0.1);
  const Vector x = Vector::Ones(2);
  SlopeSampler sampler(std::uint64_t{5});
  std::vector<Vector> samples;
  samples.reserve(1'000'000);
  for (int k = 0; k < 1'000'000; ++k) samples.push_back(sampler.draw(s.price));
  for (Index i = 0; i < 2; ++i)
    EXPECT_LT((local_gradient_sampled(s, i, x, samples) - local_gradient_exact(s, i, x)).norm(),
              1e-2);
}

TEST(SlopeSampler, NeverNegative) {
  SlopeSampler sampler(std::uint64_t{1});
  for (int k = 0; k < 10000; ++k) EXPECT_GE(sampler.draw(0.1, 1.0), 0.0);
  EXPECT_EQ(sampler.draw(0.8, 0.0), 0.8);
}

TEST(ProjectLocal, Examples) {
  BoxSet box{Vector::Zero(2), Vector::Ones(2)};
  const Vector inside = (Vector(2) << 0.25, 0.5).finished();
  EXPECT_EQ(project_local(box, inside), inside);
  const Vector out = project_local(box, (Vector(2) << -1.0, 5.0).finished());
  EXPECT_EQ(out, (Vector(2) << 0.0, 1.0).finished());
}

TEST(ProjectLocal, MatchesGridSearch) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-2.0, 3.0);
  BoxSet box{(Vector(2) << -0.5, 0.0).finished(), (Vector(2) << 1.0, 2.0).finished()};
  const int steps = 300;
  for (int t = 0; t < 20; ++t) {
    const Vector v = (Vector(2) << u(rng), u(rng)).finished();
    Vector best(2);
    double best_d = 1e300;
    for (int a = 0; a <= steps; ++a)
      for (int b = 0; b <= steps; ++b) {
        const Vector y = box.lower + (box.upper - box.lower).cwiseProduct(
                                         (Vector(2) << a, b).finished() / steps);
        const double d = (y - v).squaredNorm();
        if (d < best_d) best_d = d, best = y;
      }
    const double cell = (box.upper - box.lower).norm() / steps;
    EXPECT_LE((project_local(box, v) - best).norm(), cell);
  }
}

TEST(ProjectLocal, IdempotentAndNonexpansive) {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n(0.0, 2.0);
  BoxSet box{Vector::Constant(3, -1.0), Vector::Constant(3, 0.5)};
  for (int t = 0; t < 1000; ++t) {
    Vector a(3), b(3);
    for (Index k = 0; k < 3; ++k) a[k] = n(rng), b[k] = n(rng);
    const Vector pa = project_local(box, a);
    EXPECT_EQ(project_local(box, pa), pa);
    EXPECT_LE((pa - project_local(box, b)).norm(), (a - b).norm() + 1e-15);
  }
}

TEST(ValidateSpec, GeneratedInstanceIsClean) {
  EXPECT_TRUE(validate_spec(generate_instance(BenchConfig{}).game).empty());
}

TEST(ValidateSpec, SlicesNotSummingToCap) {
  GameSpec s = two_agent_game();
  s.coupling.slices(0, 0) += 0.1;
  const auto v = validate_spec(s);
  ASSERT_EQ(v.size(), 1u);
  EXPECT_NE(v[0].find("coupling"), std::string::npos);
}

TEST(ValidateSpec, ZeroQuadCoeffNamesAgent) {
  GameSpec s = two_agent_game();
  s.agents[1].quad_coeff = 0.0;
  const auto v = validate_spec(s);
  ASSERT_EQ(v.size(), 1u);
  EXPECT_NE(v[0].find("agent 1"), std::string::npos);
}

TEST(ValidateSpec, OtherDefects) {
  GameSpec s = two_agent_game();
  s.agents[0].omega.lower[0] = 0.5;  // excludes x = 0
  s.agents[1].market_map(0, 0) = 2.0;
  s.price.slope_mean[0] = -1.0;
  EXPECT_EQ(validate_spec(s).size(), 3u);
}

TEST(Selector, RoundTrip) {
  const std::vector<int> cols{2, -1, 0};
  const Matrix a = selector_matrix(3, cols);
  EXPECT_EQ(a.sum(), 2.0);
  EXPECT_EQ(selector_indices(a), cols);
  const std::vector<int> bad{3};
  EXPECT_THROW(selector_matrix(3, bad), ValidationError);
}

TEST(PseudoGradient, AffineWithPositiveDefiniteSymmetricPart) {
  std::mt19937_64 rng(21);
  for (int t = 0; t < 10; ++t) {
    const Instance inst = sgne::testing::random_instance(rng);
    const GameSpec& s = inst.game;
    std::mt19937_64 xr(t);
    const Vector u = random_initial_point(s, xr), v = random_initial_point(s, xr);
    const Vector zero = Vector::Zero(s.dim());
    const Vector lhs = pseudo_gradient(s, u + v) - pseudo_gradient(s, u);
    const Vector rhs = pseudo_gradient(s, v) - pseudo_gradient(s, zero);
    EXPECT_LT((lhs - rhs).norm(), 1e-12);
    EXPECT_GT(monotonicity_constants(s).eta, 0.0);
  }
}

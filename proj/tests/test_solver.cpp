#include <gtest/gtest.h>

#include <cmath>

#include "nett/solver.hpp"

using namespace nett;

namespace {

struct Instance {
  DenseOperator op;
  Sinogram y;
};

Instance random_instance(std::size_t n, std::uint64_t seed) {
  SeededRng rng(seed);
  auto op = DenseOperator::random_gaussian(n, n, rng, 1.0 / std::sqrt(static_cast<double>(n)));
  Sinogram y(n, 1);
  for (double& v : y.values()) v = rng.normal();
  return {std::move(op), std::move(y)};
}

double rel(std::span<const double> a, std::span<const double> b) {
  double d = 0, n = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d += (a[i] - b[i]) * (a[i] - b[i]);
    n += b[i] * b[i];
  }
  return std::sqrt(d / n);
}

}  // namespace

TEST(NettMinimize, HandComputedFirstIteration) {
  const auto F = DenseOperator::identity(1);
  const WeightedLq r(Frame::pixel, 2.0);
  SolveConfig cfg;
  cfg.steps = {0.1};
  cfg.max_iter = 1;
  const auto res = nett_minimize(NettProblem{F, Sinogram(1, 1, 1.0), r, 1.0}, cfg);
  EXPECT_NEAR(res.final[0], 0.08, 1e-15);
  ASSERT_EQ(res.trace.size(), 1u);
  EXPECT_NEAR(res.trace[0].data_term, 0.5 * 0.92 * 0.92, 1e-15);
  EXPECT_NEAR(res.trace[0].reg_term, 0.0064, 1e-15);
}

TEST(NettMinimize, AlphaZeroIsPlainGradientDescent) {
  const auto inst = random_instance(12, 1);
  const WeightedLq r(Frame::pixel, 2.0);
  SolveConfig cfg;
  cfg.steps = {0.3};
  cfg.max_iter = 40;
  const auto res = nett_minimize(NettProblem{inst.op, inst.y, r, 0.0}, cfg);
  Image x = inst.op.domain_zero();
  for (int i = 0; i < 40; ++i) {
    Sinogram resid = inst.op.apply(x);
    resid -= inst.y;
    x.axpy(-0.3, inst.op.adjoint(resid));
  }
  EXPECT_EQ(res.final, x);
}

TEST(NettMinimize, AlphaZeroConvergesToLeastSquares) {
  SeededRng rng(2);
  const auto A = DenseOperator::random_gaussian(15, 8, rng, 0.3);
  Sinogram y(15, 1);
  for (double& v : y.values()) v = rng.normal();
  const double lam = estimate_normal_norm(A, 1, 500);
  const WeightedLq r(Frame::pixel, 2.0);
  SolveConfig cfg;
  cfg.steps = {1.0 / lam};
  cfg.max_iter = 20000;
  cfg.trace = false;
  const auto res = nett_minimize(NettProblem{A, y, r, 0.0}, cfg);
  Sinogram resid = A.apply(res.final);
  resid -= y;
  EXPECT_LE(norm2(A.adjoint(resid)), 1e-8);
}

// With a constant step the iteration settles at the Tikhonov solution for
// alpha / (1 - 2 s alpha); the gap to the alpha solution scales with s.
TEST(NettMinimize, ConstantStepFixedPoint) {
  const auto inst = random_instance(20, 3);
  const WeightedLq r(Frame::pixel, 2.0);
  const double alpha = 0.3;
  const double lam = estimate_normal_norm(inst.op, 1, 500);
  std::vector<double> gaps;
  for (double factor : {0.5, 0.05}) {
    const double s = factor / (lam + 2 * alpha);
    SolveConfig cfg;
    cfg.steps = {s};
    cfg.max_iter = factor > 0.1 ? 5000 : 50000;
    cfg.trace = false;
    const auto res = nett_minimize(NettProblem{inst.op, inst.y, r, alpha}, cfg);
    const auto shifted = tikhonov_dense_oracle(inst.op, inst.y.values(), alpha / (1 - 2 * s * alpha));
    EXPECT_LE(rel(res.final.values(), shifted), 1e-10);
    gaps.push_back(rel(res.final.values(), tikhonov_dense_oracle(inst.op, inst.y.values(), alpha)));
  }
  EXPECT_NEAR(gaps[0] / gaps[1], 10.0, 0.5);
}

TEST(NettMinimize, ObjectiveNonincreasingForSmallSteps) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto inst = random_instance(20, 10 + seed);
    const WeightedLq r(Frame::pixel, 2.0);
    const double alpha = 0.3;
    const double lam = estimate_normal_norm(inst.op, 1, 500);
    SolveConfig cfg;
    cfg.steps = {0.9 / (lam * 1.01 + 2 * alpha)};
    cfg.max_iter = 200;
    const auto res = nett_minimize(NettProblem{inst.op, inst.y, r, alpha}, cfg);
    for (std::size_t i = 10; i < res.trace.size(); ++i)
      EXPECT_LE(res.trace[i].objective, res.trace[i - 10].objective * (1.0 + 1e-13)) << "seed " << seed << " iter " << i;
  }
}

TEST(NettMinimize, DeterministicAndSnapshots) {
  const auto inst = random_instance(10, 4);
  const WeightedLq r(Frame::haar2d, 1.5);
  SolveConfig cfg;
  cfg.steps = {0.2};
  cfg.max_iter = 50;
  cfg.snapshots = {10, 15, 50};
  const NettProblem p{inst.op, inst.y, r, 0.1};
  const auto a = nett_minimize(p, cfg);
  const auto b = nett_minimize(p, cfg);
  EXPECT_EQ(a.final, b.final);
  ASSERT_EQ(a.iterates.size(), 3u);
  EXPECT_EQ(a.iterates[0].first, 10);
  ASSERT_NE(a.iterate(50), nullptr);
  EXPECT_EQ(*a.iterate(50), a.final);
  EXPECT_EQ(a.iterate(11), nullptr);
  EXPECT_EQ(a.trace.size(), 50u);
  EXPECT_EQ(a.trace.back().iter, 50);
  for (std::size_t i = 0; i < a.trace.size(); ++i) EXPECT_EQ(a.trace[i].objective, b.trace[i].objective);
}

TEST(NettMinimize, StepSequence) {
  const auto F = DenseOperator::identity(1);
  const WeightedLq r(Frame::pixel, 2.0);
  SolveConfig cfg;
  cfg.steps = {0.1, 0.2};
  cfg.max_iter = 2;
  const auto res = nett_minimize(NettProblem{F, Sinogram(1, 1, 1.0), r, 1.0}, cfg);
  // Second iteration from 0.08 with s = 0.2: xbar = 0.08 + 0.2 * 0.92 = 0.264; x = 0.264 * (1 - 0.4).
  EXPECT_NEAR(res.final[0], 0.264 * 0.6, 1e-15);
  cfg.max_iter = 3;
  EXPECT_THROW(nett_minimize(NettProblem{F, Sinogram(1, 1, 1.0), r, 1.0}, cfg), InvalidArgument);
}

TEST(NettMinimize, NonFiniteIterateNamesIteration) {
  const auto F = DenseOperator::identity(1);
  const WeightedLq r(Frame::pixel, 2.0);
  SolveConfig cfg;
  cfg.steps = {1e300};
  cfg.max_iter = 5;
  try {
    nett_minimize(NettProblem{F, Sinogram(1, 1, 1.0), r, 1.0}, cfg);
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("iteration 1"), std::string::npos) << e.what();
  }
}

TEST(NettMinimize, Validation) {
  const auto F = DenseOperator::identity(2);
  const WeightedLq r(Frame::pixel, 2.0);
  SolveConfig cfg;
  EXPECT_THROW(nett_minimize(NettProblem{F, Sinogram(3, 1), r, 1.0}, cfg), ShapeError);
  EXPECT_THROW(nett_minimize(NettProblem{F, Sinogram(2, 1), r, -1.0}, cfg), InvalidArgument);
  cfg.steps = {-0.1};
  EXPECT_THROW(nett_minimize(NettProblem{F, Sinogram(2, 1), r, 1.0}, cfg), InvalidArgument);
  cfg.steps = {0.1};
  cfg.initial = Image(3, 3);
  EXPECT_THROW(nett_minimize(NettProblem{F, Sinogram(2, 1), r, 1.0}, cfg), ShapeError);
}

TEST(TikhonovOracle, Examples) {
  const auto I = DenseOperator::identity(2);
  const auto x = tikhonov_dense_oracle(I, std::vector<double>{1.0, 0.0}, 0.5);
  EXPECT_NEAR(x[0], 0.5, 1e-15);
  EXPECT_NEAR(x[1], 0.0, 1e-15);

  const auto inst = random_instance(5, 6);
  const double alpha = 0.2;
  const auto xs = tikhonov_dense_oracle(inst.op, inst.y.values(), alpha);
  const auto ax = inst.op.apply(xs);
  auto lhs = inst.op.adjoint(ax);
  const auto rhs = inst.op.adjoint(inst.y.values());
  for (std::size_t i = 0; i < 5; ++i) EXPECT_LE(std::abs(lhs[i] + 2 * alpha * xs[i] - rhs[i]), 1e-10);

  double prev = std::numeric_limits<double>::infinity();
  for (double a : {0.01, 0.1, 1.0, 10.0, 100.0}) {
    const auto xa = tikhonov_dense_oracle(inst.op, inst.y.values(), a);
    const double n = norm2(std::span<const double>(xa));
    EXPECT_LT(n, prev);
    prev = n;
  }
}

TEST(TikhonovOracle, SingularSystemFails) {
  const DenseOperator A(2, 2, {1, 1, 1, 1});
  EXPECT_THROW(tikhonov_dense_oracle(A, std::vector<double>{1, 1}, 0.0), NumericError);
  EXPECT_NO_THROW(tikhonov_dense_oracle(A, std::vector<double>{1, 1}, 1e-3));
}

TEST(ChooseAlpha, Examples) {
  EXPECT_DOUBLE_EQ(choose_alpha(AlphaRule::proportional(1.0), 1e-3), 1e-3);
  EXPECT_NEAR(choose_alpha(AlphaRule::matched(1.0, RateFunction::sqrt_rate()), 1e-4), 1e-2, 1e-15);
  EXPECT_THROW(choose_alpha(AlphaRule::proportional(1.0), 0.0), InvalidArgument);
  EXPECT_THROW(choose_alpha(AlphaRule::proportional(-1.0), 0.1), InvalidArgument);
  EXPECT_THROW(choose_alpha(AlphaRule::matched(1.0, RateFunction::sqrt_rate(), 0.5), 0.1), InvalidArgument);
}

TEST(ChooseAlpha, ParameterChoiceLimits) {
  // rate_matched with a sqrt index function: alpha = sqrt(delta) -> 0 and delta/alpha = sqrt(delta) -> 0.
  // proportional: alpha -> 0 but delta/alpha stays at 1/c, so only the first limit holds.
  const auto matched = AlphaRule::matched(1.0, RateFunction::sqrt_rate());
  const auto prop = AlphaRule::proportional(2.0);
  double prev_a = 1e300, prev_r = 1e300, prev_p = 1e300;
  for (int k = 1; k <= 8; ++k) {
    const double delta = std::pow(10.0, -k);
    const double a = choose_alpha(matched, delta);
    EXPECT_LT(a, prev_a);
    EXPECT_LT(delta / a, prev_r);
    prev_a = a;
    prev_r = delta / a;
    const double p = choose_alpha(prop, delta);
    EXPECT_LT(p, prev_p);
    prev_p = p;
    EXPECT_NEAR(delta / p, 0.5, 1e-15);
  }
  EXPECT_LT(prev_a, 1e-3);
  EXPECT_LT(prev_r, 1e-3);
}

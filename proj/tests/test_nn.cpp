#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "damstf/nn.hpp"
#include "test_util.hpp"

using namespace damstf;

namespace {

// Fixed two-layer tanh net used by the hand-computed oracles below.
Architecture fixed_arch() {
  Architecture a;
  a.layer_dims = {2, 2, 2};
  return a;
}

ParamVector fixed_params() {
  // W0 rows {0.1,-0.2},{0.3,0.4}; b0 {0.05,-0.05}; W1 rows {0.7,-0.6},{-0.1,0.2}; b1 {0,0.1}
  return testutil::make_params(fixed_arch(), {0.1, -0.2, 0.3, 0.4, 0.05, -0.05, 0.7, -0.6, -0.1,
                                              0.2, 0.0, 0.1});
}

const std::vector<double> kFixedInput{0.5, -1.0};

}  // namespace

TEST(InitParams, BiasesAreExactlyZero) {
  Architecture arch;
  arch.layer_dims = {2, 1};
  const ParamVector p = init_params(arch, 7);
  EXPECT_EQ(p.values[2], 0.0);  // single bias after the 2 weights
}

TEST(InitParams, DeterministicForFixedSeed) {
  Architecture arch;
  arch.layer_dims = {3, 5, 2};
  const ParamVector a = init_params(arch, 42);
  const ParamVector b = init_params(arch, 42);
  EXPECT_EQ(a.values, b.values);
  const ParamVector c = init_params(arch, 43);
  EXPECT_NE(a.values, c.values);
}

TEST(InitParams, LayoutArithmetic) {
  Architecture arch;
  arch.layer_dims = {2, 3, 2};
  EXPECT_EQ(init_params(arch, 1).size(), 17);  // (2*3+3)+(3*2+2)
}

TEST(InitParams, GlorotBoundsHold) {
  Architecture arch;
  arch.layer_dims = {4, 6, 3};
  const ParamVector p = init_params(arch, 11);
  for (std::size_t l = 0; l < p.layout.size(); ++l) {
    const auto& s = p.layout[l];
    const double bound = std::sqrt(6.0 / (s.fan_in + s.fan_out));
    for (int i = 0; i < s.fan_in * s.fan_out; ++i) {
      EXPECT_LT(std::abs(p.weights(static_cast<int>(l))[i]), bound);
    }
  }
}

TEST(Forward, ZeroParamsGiveUniformProbabilities) {
  Architecture arch;
  arch.layer_dims = {3, 2};
  const ForwardResult r = forward(zeros_like(arch), arch, {1.0, -2.0, 0.5});
  EXPECT_DOUBLE_EQ(r.probabilities[0], 0.5);
  EXPECT_DOUBLE_EQ(r.probabilities[1], 0.5);
}

TEST(Forward, ProbabilitiesSumToOne) {
  std::mt19937_64 rng(123);
  for (int trial = 0; trial < 50; ++trial) {
    const testutil::RandomCase c = testutil::random_case(rng);
    const ForwardResult r = forward(c.params, c.arch, c.x);
    double sum = 0.0;
    for (double p : r.probabilities) {
      EXPECT_GE(p, kProbEps);
      EXPECT_LE(p, 1.0 - kProbEps);
      sum += p;
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(Forward, MatchesHandComputedTwoLayerEvaluation) {
  const ForwardResult r = forward(fixed_params(), fixed_arch(), kFixedInput);
  EXPECT_NEAR(r.features[0], 0.2913126124515909, 1e-15);
  EXPECT_NEAR(r.features[1], -0.2913126124515909, 1e-15);
  EXPECT_NEAR(r.probabilities[0], 0.59051630938247657, 1e-14);
  EXPECT_NEAR(r.probabilities[1], 0.40948369061752338, 1e-14);
}

TEST(Forward, InputShapeMismatchThrows) {
  EXPECT_THROW(forward(fixed_params(), fixed_arch(), {1.0}), ConfigError);
}

TEST(Forward, PureFunction) {
  const ParamVector p = fixed_params();
  const ForwardResult a = forward(p, fixed_arch(), kFixedInput);
  const ForwardResult b = forward(p, fixed_arch(), kFixedInput);
  EXPECT_EQ(a.probabilities, b.probabilities);
  EXPECT_EQ(a.logits, b.logits);
}

TEST(CrossEntropy, PerfectPredictionNearZero) {
  EXPECT_NEAR(cross_entropy({1.0, 0.0}, {1.0, 0.0}), 0.0, 1e-11);
}

TEST(CrossEntropy, UniformPredictionIsLnTwo) {
  EXPECT_NEAR(cross_entropy({0.5, 0.5}, {1.0, 0.0}), std::log(2.0), 1e-15);
  EXPECT_NEAR(cross_entropy({0.5, 0.5}, {0.0, 1.0}), std::log(2.0), 1e-15);
}

TEST(CrossEntropy, DirectEvaluation) {
  EXPECT_NEAR(cross_entropy({0.9, 0.1}, {0.0, 1.0}), 2.3025850929940455, 1e-14);
}

TEST(PerExampleGradient, MatchesHandComputedGradient) {
  const ParamVector g =
      per_example_gradient(fixed_params(), fixed_arch(), kFixedInput, {1.0, 0.0});
  const std::vector<double> expected{-0.14989346421971031, 0.29978692843942062,
                                     0.14989346421971031,  -0.29978692843942062,
                                     -0.29978692843942062, 0.29978692843942062,
                                     -0.11928776367010975, 0.11928776367010975,
                                     0.11928776367010974,  -0.11928776367010974,
                                     -0.40948369061752343, 0.40948369061752338};
  ASSERT_EQ(g.values.size(), expected.size());
  for (std::size_t i = 0; i < expected.size(); ++i) {
    EXPECT_NEAR(g.values[i], expected[i], 1e-13) << "coordinate " << i;
  }
}

TEST(PerExampleGradient, AgreesWithFiniteDifferences) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 25; ++trial) {
    const testutil::RandomCase c = testutil::random_case(rng);
    const ParamVector analytic = per_example_gradient(c.params, c.arch, c.x, c.y);
    const ParamVector fd = finite_difference_gradient(c.params, c.arch, c.x, c.y, 1e-5);
    EXPECT_LE(testutil::max_rel_error(analytic.values, fd.values), 1e-6)
        << "trial " << trial;
  }
}

TEST(PerExampleGradient, CertainCorrectPredictionHasZeroGradient) {
  // Saturated single-layer model; its own clamped one-hot prediction as the
  // label makes the loss locally constant.
  Architecture arch;
  arch.layer_dims = {1, 2};
  const ParamVector p = testutil::make_params(arch, {40.0, -40.0, 0.0, 0.0});
  const ForwardResult r = forward(p, arch, {1.0});
  ASSERT_GT(r.probabilities[0], 0.999);
  const ParamVector g = per_example_gradient(p, arch, {1.0}, {1.0, 0.0});
  EXPECT_NEAR(l2_norm(g), 0.0, 1e-12);
}

TEST(PerExampleGradient, DeterministicForDuplicateInputs) {
  const ParamVector a =
      per_example_gradient(fixed_params(), fixed_arch(), kFixedInput, {0.0, 1.0});
  const ParamVector b =
      per_example_gradient(fixed_params(), fixed_arch(), kFixedInput, {0.0, 1.0});
  EXPECT_EQ(a.values, b.values);
}

TEST(PerExampleGradient, ReluNetworkAgreesWithFiniteDifferences) {
  Architecture arch;
  arch.layer_dims = {3, 6, 2};
  arch.activation = Activation::Relu;
  const ParamVector p = init_params(arch, 5);
  const std::vector<double> x{0.4, -0.7, 1.1};
  const std::vector<double> y{0.0, 1.0};
  const ParamVector analytic = per_example_gradient(p, arch, x, y);
  const ParamVector fd = finite_difference_gradient(p, arch, x, y, 1e-6);
  EXPECT_LE(testutil::max_rel_error(analytic.values, fd.values, 1e-8), 1e-5);
}

TEST(FiniteDifference, QuadraticToyLoss) {
  const auto f = [](const std::vector<double>& v) { return v[0] * v[0]; };
  const std::vector<double> g = central_difference(f, {3.0}, 1e-5);
  EXPECT_NEAR(g[0], 6.0, 1e-8);
}

TEST(FiniteDifference, StepHalvingShrinksErrorQuadratically) {
  const ParamVector analytic =
      per_example_gradient(fixed_params(), fixed_arch(), kFixedInput, {1.0, 0.0});
  auto max_err = [&](double step) {
    const ParamVector fd =
        finite_difference_gradient(fixed_params(), fixed_arch(), kFixedInput, {1.0, 0.0}, step);
    double worst = 0.0;
    for (std::size_t i = 0; i < fd.values.size(); ++i) {
      worst = std::max(worst, std::abs(fd.values[i] - analytic.values[i]));
    }
    return worst;
  };
  const double coarse = max_err(1e-3);
  const double fine = max_err(5e-4);
  EXPECT_GT(coarse / fine, 3.0);
  EXPECT_LT(coarse / fine, 5.5);
}

TEST(FiniteDifference, RejectsNonPositiveStep) {
  EXPECT_THROW(finite_difference_gradient(fixed_params(), fixed_arch(), kFixedInput, {1.0, 0.0}, 0.0),
               ConfigError);
}

TEST(Axpy, ScaleZeroLeavesDstUnchanged) {
  const ParamVector a = fixed_params();
  const ParamVector b = init_params(fixed_arch(), 9);
  EXPECT_EQ(axpy(a, 0.0, b).values, a.values);
}

TEST(Axpy, AddingNegatedSelfGivesZero) {
  const ParamVector a = init_params(fixed_arch(), 3);
  ParamVector neg = a;
  for (double& v : neg.values) v = -v;
  for (double v : axpy(a, 1.0, neg).values) EXPECT_EQ(v, 0.0);
}

TEST(Axpy, Arithmetic) {
  Architecture arch;
  arch.layer_dims = {1, 1};  // two parameters: one weight, one bias
  const ParamVector dst = testutil::make_params(arch, {1.0, 2.0});
  const ParamVector src = testutil::make_params(arch, {3.0, 4.0});
  const ParamVector out = axpy(dst, 2.0, src);
  EXPECT_EQ(out.values[0], 7.0);
  EXPECT_EQ(out.values[1], 10.0);
}

TEST(Axpy, LayoutMismatchThrows) {
  Architecture a1, a2;
  a1.layer_dims = {2, 2};
  a2.layer_dims = {3, 2};
  EXPECT_THROW(axpy(zeros_like(a1), 1.0, zeros_like(a2)), InvariantError);
}

TEST(GradientOracle, MaxRelativeErrorWithinSpecOverManyCases) {
  std::mt19937_64 rng(777);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const testutil::RandomCase c = testutil::random_case(rng);
    ASSERT_LE(c.params.size(), 200);
    const ParamVector analytic = per_example_gradient(c.params, c.arch, c.x, c.y);
    const ParamVector fd = finite_difference_gradient(c.params, c.arch, c.x, c.y, 1e-5);
    worst = std::max(worst, testutil::max_rel_error(analytic.values, fd.values));
  }
  EXPECT_LE(worst, 1e-5);
}

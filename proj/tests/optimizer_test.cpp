#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "distillkit/error.hpp"
#include "distillkit/ops.hpp"
#include "distillkit/optimizer.hpp"
#include "test_util.hpp"

using namespace dk;
using dk::testing::leaf;
using dk::testing::values;

namespace {

// Reference Adam for one scalar, written straight from the update rule.
struct ScalarAdam {
  double m = 0, v = 0;
  int t = 0;
  double step(double x, double g, const AdamConfig& c) {
    ++t;
    m = c.beta1 * m + (1 - c.beta1) * g;
    v = c.beta2 * v + (1 - c.beta2) * g * g;
    const double mhat = m / (1 - std::pow(c.beta1, t)), vhat = v / (1 - std::pow(c.beta2, t));
    return x - c.learning_rate * (mhat / (std::sqrt(vhat) + c.eps) + c.weight_decay * x);
  }
};

void square_loss_backward(const Tensor& x) { sum(mul(x, x)).backward(); }

}  // namespace

TEST(Adam, FirstStepOnSquareMovesByLearningRate) {
  auto x = leaf({1}, {1.0});
  Adam opt({x}, {.learning_rate = 0.1});
  square_loss_backward(x);
  opt.step();
  // Bias correction makes the first step lr * g / (|g| + eps).
  EXPECT_NEAR(x.data()[0], 1.0 - 0.1 * 2.0 / (2.0 + 1e-8), 1e-15);
  EXPECT_EQ(opt.step_count(0), 1u);
}

TEST(Adam, MatchesScalarReferenceOverManySteps) {
  AdamConfig cfg{.learning_rate = 0.05, .beta1 = 0.8, .beta2 = 0.95, .eps = 1e-6, .weight_decay = 0.01};
  auto x = leaf({3}, {1.0, -2.0, 0.5});
  Adam opt({x}, cfg);
  std::vector<ScalarAdam> ref(3);
  std::vector<double> expect = values(x);
  for (int s = 0; s < 25; ++s) {
    x.zero_grad();
    // loss = sum(x^3) / 3, gradient x^2
    scale(sum(mul(mul(x, x), x)), 1.0 / 3.0).backward();
    for (std::size_t i = 0; i < 3; ++i) expect[i] = ref[i].step(expect[i], expect[i] * expect[i], cfg);
    opt.step();
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(x.data()[i], expect[i], 1e-14);
  }
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  auto x = leaf({2}, {0.3, -0.7});
  Adam opt({x});
  scale(sum(x), 0.0).backward();
  opt.step();
  EXPECT_EQ(values(x), std::vector<double>({0.3, -0.7}));
}

TEST(Adam, ParameterGroupsAreIndependent) {
  auto a = leaf({2}, {1.0, 2.0});
  auto b = leaf({1}, {-3.0});
  Adam both({a, b}, {.learning_rate = 0.01});
  auto a1 = leaf({2}, {1.0, 2.0});
  auto b1 = leaf({1}, {-3.0});
  Adam only_a({a1}, {.learning_rate = 0.01});
  Adam only_b({b1}, {.learning_rate = 0.01});
  for (int s = 0; s < 5; ++s) {
    a.zero_grad(), b.zero_grad(), a1.zero_grad(), b1.zero_grad();
    add(sum(mul(a, a)), sum(mul(mul(b, b), b))).backward();
    both.step();
    sum(mul(a1, a1)).backward();
    only_a.step();
    sum(mul(mul(b1, b1), b1)).backward();
    only_b.step();
  }
  EXPECT_EQ(values(a), values(a1));
  EXPECT_EQ(values(b), values(b1));
}

TEST(Adam, MissingGradientIsContractErrorUnlessAllowed) {
  auto a = leaf({1}, {1.0});
  auto b = leaf({1}, {1.0});
  Adam opt({a, b});
  sum(a).backward();
  EXPECT_THROW(opt.step(), ContractError);
  a.zero_grad();
  sum(a).backward();
  Adam lenient({a, b});
  lenient.step(1.0, true);
  EXPECT_EQ(lenient.step_count(0), 1u);
  EXPECT_EQ(lenient.step_count(1), 0u);
  EXPECT_EQ(b.data()[0], 1.0);
}

TEST(Adam, RejectsBadConfigAndNonLeaves) {
  auto a = leaf({1}, {1.0});
  EXPECT_THROW(Adam({a}, {.learning_rate = 0.0}), ConfigError);
  EXPECT_THROW(Adam({a}, {.beta1 = 1.0}), ConfigError);
  EXPECT_THROW(Adam({a}, {.eps = 0.0}), ConfigError);
  EXPECT_THROW(Adam({scale(a, 2.0)}), ContractError);
}

TEST(Adam, MomentsShapedLikeParameters) {
  auto a = leaf({2, 3}, std::vector<double>(6, 1.0));
  Adam opt({a});
  sum(a).backward();
  opt.step();
  EXPECT_EQ(opt.first_moment(0).size(), 6u);
  EXPECT_EQ(opt.second_moment(0).size(), 6u);
  EXPECT_NEAR(opt.first_moment(0)[0], 0.1, 1e-15);
}

TEST(Clipping, GlobalNormAndFactor) {
  auto a = leaf({2}, {3.0, 0.0});
  auto b = leaf({1}, {0.0});
  auto c = leaf({1}, {5.0});  // never receives a gradient
  add(scale(sum(a), 1.0), scale(sum(b), 0.0)).backward();
  // grads: a = [1, 1], b = [0]
  EXPECT_NEAR(global_grad_norm({a, b, c}), std::sqrt(2.0), 1e-15);
  EXPECT_DOUBLE_EQ(clip_factor(4.0, 1.0), 0.25);
  EXPECT_DOUBLE_EQ(clip_factor(0.5, 1.0), 1.0);
  EXPECT_THROW(clip_factor(1.0, 0.0), ConfigError);
}

TEST(Clipping, ScaledStepEqualsStepOnScaledGradient) {
  auto x = leaf({2}, {1.0, -1.0});
  auto y = leaf({2}, {1.0, -1.0});
  Adam ox({x}, {.learning_rate = 0.1});
  Adam oy({y}, {.learning_rate = 0.1});
  for (int s = 0; s < 3; ++s) {
    x.zero_grad();
    y.zero_grad();
    sum(mul(x, x)).backward();
    ox.step(0.25);
    scale(sum(mul(y, y)), 0.25).backward();
    oy.step();
    EXPECT_EQ(values(x), values(y));
  }
}

#include <gtest/gtest.h>

#include "distillkit/error.hpp"
#include "distillkit/ops.hpp"
#include "distillkit/tensor.hpp"
#include "test_util.hpp"

using namespace dk;
using dk::testing::leaf;

TEST(Tensor, CreateValidatesShapeAndInit) {
  EXPECT_THROW(Tensor::create({}), ConfigError);
  EXPECT_THROW(Tensor::create({2, 0}), ConfigError);
  EXPECT_THROW(Tensor::create({2}, Uniform{1.0, 1.0, 0}), ConfigError);
  EXPECT_THROW(Tensor::create({2}, Normal{0.0, -1.0, 0}), ConfigError);
  auto z = Tensor::create({2, 3});
  EXPECT_EQ(z.numel(), 6u);
  for (double v : z.data()) EXPECT_EQ(v, 0.0);
  auto c = Tensor::create({4}, Constant{2.5});
  for (double v : c.data()) EXPECT_EQ(v, 2.5);
}

TEST(Tensor, SeededInitIsReproducible) {
  auto a = Tensor::create({3, 5}, Normal{0.0, 1.0, 17});
  auto b = Tensor::create({3, 5}, Normal{0.0, 1.0, 17});
  auto c = Tensor::create({3, 5}, Normal{0.0, 1.0, 18});
  EXPECT_EQ(dk::testing::values(a), dk::testing::values(b));
  EXPECT_NE(dk::testing::values(a), dk::testing::values(c));
  auto u = Tensor::create({1000}, Uniform{-2.0, 3.0, 4});
  for (double v : u.data()) {
    EXPECT_GE(v, -2.0);
    EXPECT_LT(v, 3.0);
  }
}

TEST(Tensor, FromVectorChecksSize) {
  EXPECT_THROW(Tensor::from_vector({2, 2}, {1, 2, 3}), ShapeError);
  auto t = Tensor::from_vector({2, 2}, {1, 2, 3, 4});
  EXPECT_EQ(t.at({1, 0}), 3.0);
  EXPECT_EQ(t.size(-1), 2u);
}

TEST(Tensor, BackwardSimpleProduct) {
  auto x = leaf({2}, {3.0, -1.0});
  auto y = leaf({2}, {2.0, 5.0});
  auto loss = sum(mul(x, y));
  backward(loss);
  ASSERT_TRUE(x.has_grad());
  EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), std::vector<double>({2.0, 5.0}));
  ASSERT_TRUE(y.has_grad());
  EXPECT_EQ(y.grad()[0], 3.0);
  EXPECT_EQ(y.grad()[1], -1.0);
}

TEST(Tensor, GradientOfSharedSubexpressionAccumulates) {
  auto x = leaf({1}, {1.5});
  auto y = mul(x, x);
  auto loss = sum(add(y, y));  // 2 x^2
  backward(loss);
  EXPECT_DOUBLE_EQ(x.grad()[0], 4.0 * 1.5);
}

TEST(Tensor, SecondBackwardThrows) {
  auto x = leaf({2}, {1.0, 2.0});
  auto loss = sum(mul(x, x));
  backward(loss);
  x.zero_grad();
  EXPECT_THROW(backward(loss), ContractError);
}

TEST(Tensor, BackwardRefusesUnclearedLeafGrad) {
  auto x = leaf({2}, {1.0, 2.0});
  backward(sum(mul(x, x)));
  EXPECT_THROW(backward(sum(mul(x, x))), ContractError);
  x.zero_grad();
  EXPECT_NO_THROW(backward(sum(mul(x, x))));
}

TEST(Tensor, BackwardNeedsScalar) {
  auto x = leaf({2}, {1.0, 2.0});
  EXPECT_THROW(backward(mul(x, x)), ContractError);
}

TEST(Tensor, NoGradGuardStopsRecording) {
  auto x = leaf({2}, {1.0, 2.0});
  Tensor y;
  {
    NoGradGuard guard;
    EXPECT_FALSE(grad_enabled());
    y = sum(mul(x, x));
  }
  EXPECT_TRUE(grad_enabled());
  EXPECT_FALSE(y.requires_grad());
  EXPECT_THROW(backward(y), ContractError);
}

TEST(Tensor, DetachCopiesValuesWithoutGraph) {
  auto x = leaf({2}, {1.0, 2.0});
  auto y = mul(x, x);
  auto d = y.detach();
  EXPECT_TRUE(d.is_leaf());
  EXPECT_FALSE(d.requires_grad());
  EXPECT_EQ(dk::testing::values(d), std::vector<double>({1.0, 4.0}));
}

TEST(Tensor, MutableDataOnlyOnLeaves) {
  auto x = leaf({2}, {1.0, 2.0});
  auto y = mul(x, x);
  EXPECT_THROW(y.mutable_data(), ContractError);
  x.mutable_data()[0] = 7.0;
  EXPECT_EQ(x.data()[0], 7.0);
}

TEST(Tensor, ItemRequiresOneElement) {
  EXPECT_EQ(Tensor::scalar(3.0).item(), 3.0);
  EXPECT_THROW(Tensor::create({2}).item(), ShapeError);
}

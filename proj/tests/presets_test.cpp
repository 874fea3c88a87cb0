#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "distillkit/config.hpp"
#include "distillkit/error.hpp"
#include "distillkit/losses.hpp"
#include "distillkit/ops.hpp"
#include "distillkit/presets.hpp"
#include "test_util.hpp"

using namespace dk;
using dk::testing::random_tensor;
using dk::testing::values;

TEST(Temperature, SoftmaxExamples) {
  std::vector<double> eight = {8.0}, one = {1.0};
  auto p = softmax_with_temperature(Tensor::from_vector({2}, {0, 0}), eight);
  EXPECT_DOUBLE_EQ(p.data()[0], 0.5);
  auto q = softmax_with_temperature(Tensor::from_vector({2}, {std::log(2.0), 0}), one);
  EXPECT_NEAR(q.data()[0], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(q.data()[1], 1.0 / 3.0, 1e-15);

  auto r = softmax_with_temperature(Tensor::from_vector({3}, {3, 1, -2}), eight);
  const double e0 = std::exp(3.0 / 8), e1 = std::exp(1.0 / 8), e2 = std::exp(-2.0 / 8);
  EXPECT_NEAR(r.data()[0], e0 / (e0 + e1 + e2), 1e-15);
  EXPECT_NEAR(r.data()[2], e2 / (e0 + e1 + e2), 1e-15);

  std::vector<double> zero = {0.0}, negative = {-1.0};
  EXPECT_THROW(softmax_with_temperature(Tensor::from_vector({2}, {0, 0}), zero), ConfigError);
  EXPECT_THROW(softmax_with_temperature(Tensor::from_vector({2}, {0, 0}), negative), ConfigError);
}

TEST(Temperature, PerRowTemperatureBroadcasts) {
  std::vector<double> temps = {1.0, 2.0};
  auto p = softmax_with_temperature(Tensor::from_vector({2, 2}, {1, 0, 1, 0}), temps);
  EXPECT_NEAR(p.at({0, 0}), 1.0 / (1.0 + std::exp(-1.0)), 1e-15);
  EXPECT_NEAR(p.at({1, 0}), 1.0 / (1.0 + std::exp(-0.5)), 1e-15);
}

TEST(KdMse, ConstantOffsetGivesOne) {
  std::mt19937_64 rng(1);
  SoftLabelInputs in;
  in.teacher_logits = random_tensor({4, 3}, rng);
  in.student_logits = add_scalar(in.teacher_logits, 1.0);
  EXPECT_NEAR(kd_mse_loss(in).item(), 1.0, 1e-12);
}

TEST(HardLabel, AnalyticExamples) {
  std::vector<int> one = {1};
  EXPECT_NEAR(hard_label_loss(Tensor::from_vector({1, 3}, {0, 0, 0}), one).item(), std::log(3.0), 1e-15);
  EXPECT_LE(hard_label_loss(Tensor::from_vector({1, 3}, {0, 40, 0}), one).item(), 1e-6);
}

TEST(ProbabilityShift, SpecExamples) {
  std::vector<int> two = {2}, zero = {0};
  std::vector<double> p = {0.7, 0.2, 0.1};
  EXPECT_EQ(probability_shift(p, 3, two), std::vector<double>({0.1, 0.2, 0.7}));
  EXPECT_EQ(probability_shift(p, 3, zero), p);
  std::vector<double> tie = {0.4, 0.4, 0.2};
  EXPECT_EQ(probability_shift(tie, 3, two), std::vector<double>({0.2, 0.4, 0.4}));
}

TEST(HiddenMse, UnitOffsetAndOrthogonalCos) {
  std::mt19937_64 rng(2);
  auto f = random_tensor({2, 3, 4}, rng);
  EXPECT_NEAR(hidden_mse_loss({f, add_scalar(f, 1.0), {}}).item(), 1.0, 1e-12);
  auto a = Tensor::from_vector({1, 2, 2}, {1, 0, 0, 3});
  auto b = Tensor::from_vector({1, 2, 2}, {0, 2, -1, 0});
  EXPECT_NEAR(cos_loss({a, b, {}}).item(), 1.0, 1e-12);
  EXPECT_NEAR(cos_loss({f, scale(f, 2.0), {}}).item(), 0.0, 1e-12);
  // A zero vector counts as similarity 0.
  auto z = Tensor::from_vector({1, 1, 2}, {0, 0});
  EXPECT_NEAR(cos_loss({Tensor::from_vector({1, 1, 2}, {1, 1}), z, {}}).item(), 1.0, 1e-12);
}

TEST(Attention, UniformRowsAgreeAndLengthMismatchThrows) {
  auto uniform = Tensor::create({1, 2, 3, 3}, Constant{1.0 / 3.0});
  auto uniform4 = Tensor::create({1, 4, 3, 3}, Constant{1.0 / 3.0});
  auto m = Tensor::from_vector({1, 3}, {1, 1, 1});
  EXPECT_NEAR(attention_loss(uniform, uniform4, m, AttentionMode::ce).item(), 0.0, 1e-15);
  EXPECT_NEAR(attention_loss(uniform, uniform4, m, AttentionMode::mse).item(), 0.0, 1e-15);
  auto longer = Tensor::create({1, 2, 4, 4}, Constant{0.25});
  EXPECT_THROW(attention_loss(uniform, longer, m, AttentionMode::mse), ShapeError);
}

TEST(Fsp, IdentityFeaturesGiveHalfIdentity) {
  auto eye = Tensor::from_vector({1, 2, 2}, {1, 0, 0, 1});
  FeaturePair p{eye, eye, {}};
  EXPECT_NEAR(fsp_loss(p, p).item(), 0.0, 1e-15);
  // One model with I2 features against one with zeros: G_t = I/2, so ||G||^2 / 4 = 0.5 / 4.
  auto zeros = Tensor::create({1, 2, 2}, Constant{0.0});
  FeaturePair q{eye, zeros, {}};
  EXPECT_NEAR(fsp_loss(q, q).item(), 0.125, 1e-15);
  FeaturePair narrow{eye, Tensor::create({1, 2, 1}, Constant{1.0}), {}};
  EXPECT_THROW(fsp_loss(narrow, p), ConfigError);
}

TEST(WeightScheduler, BuiltIns) {
  EXPECT_DOUBLE_EQ(evaluate_weight_scheduler("linear_decay", 1.0, 0.5), 0.5);
  EXPECT_DOUBLE_EQ(evaluate_weight_scheduler("linear_growth", 1.0, 0.0), 0.0);
  EXPECT_DOUBLE_EQ(evaluate_weight_scheduler("linear_growth", 2.0, 0.25), 0.5);
  for (double p : {0.0, 0.3, 1.0}) EXPECT_DOUBLE_EQ(evaluate_weight_scheduler("constant", 0.7, p), 0.7);
  try {
    evaluate_weight_scheduler("cosine", 1.0, 0.5);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("linear_decay"), std::string::npos);
  }
  EXPECT_THROW(evaluate_weight_scheduler("constant", 1.0, 1.5), ContractError);
}

TEST(TemperatureScheduler, ConstantAndFlsw) {
  std::mt19937_64 rng(3);
  auto zt = random_tensor({4, 3}, rng, -2, 2);
  EXPECT_EQ(evaluate_temperature_scheduler("constant_temperature", 8.0, zt, zt), std::vector<double>(4, 8.0));
  for (double t : evaluate_temperature_scheduler("flsw_temperature", 8.0, zt, zt)) EXPECT_NEAR(t, 8.0, 1e-12);
  for (double t : evaluate_temperature_scheduler("flsw_temperature", 8.0, zt, neg(zt))) EXPECT_NEAR(t, 16.0, 1e-12);

  auto zs = random_tensor({4, 3}, rng, -2, 2);
  const auto temps = evaluate_temperature_scheduler("flsw_temperature", 2.0, zt, zs, 0.5);
  for (std::size_t r = 0; r < 4; ++r) {
    double dot = 0, a = 0, b = 0;
    for (std::size_t c = 0; c < 3; ++c) {
      dot += zt.at({r, c}) * zs.at({r, c});
      a += zt.at({r, c}) * zt.at({r, c});
      b += zs.at({r, c}) * zs.at({r, c});
    }
    const double raw = 2.0 * (1.0 + 0.5 * (1.0 - dot / std::sqrt(a * b)));
    EXPECT_NEAR(temps[r], std::min(std::max(raw, 2.0), 4.0), 1e-12);
  }
  EXPECT_THROW(evaluate_temperature_scheduler("warmup", 8.0, zt, zt), ConfigError);
  EXPECT_THROW(evaluate_temperature_scheduler("constant_temperature", 0.0, zt, zt), ConfigError);
}

TEST(Registry, BuiltInNames) {
  Presets p;
  EXPECT_EQ(p.final_loss_names(), std::vector<std::string>({"hard_label", "kd_ce", "kd_mse"}));
  EXPECT_EQ(p.intermediate_loss_names(),
            std::vector<std::string>({"attention_ce", "attention_mse", "cos", "fsp", "hidden_mse", "nst"}));
  EXPECT_EQ(p.intermediate_loss("fsp").arity, 2u);
  EXPECT_TRUE(p.intermediate_loss("nst").width_agnostic);
  EXPECT_EQ(p.intermediate_loss("attention_ce").feature, FeatureKind::attention);
}

TEST(Registry, DuplicateNamesAreRejected) {
  Presets p;
  IntermediateLossInfo info{[](const std::vector<FeaturePair>& v) { return hidden_mse_loss(v.at(0)); }};
  EXPECT_THROW(p.register_loss("hidden_mse", info), RegistrationError);
  EXPECT_THROW(p.register_loss("kd_ce", FinalLossFn(kd_mse_loss)), RegistrationError);
  // Losses share one name space across kinds.
  EXPECT_THROW(p.register_loss("kd_ce", info), RegistrationError);
  EXPECT_THROW(p.register_scheduler("constant", WeightSchedulerFn([](double b, double) { return b; })),
               RegistrationError);
  EXPECT_THROW(p.register_loss("", info), RegistrationError);
  info.arity = 3;
  EXPECT_THROW(p.register_loss("triple", info), RegistrationError);
}

TEST(Registry, CustomLossIsSelectableFromConfig) {
  IntermediateLossInfo l1;
  l1.feature = FeatureKind::hidden;
  l1.fn = [](const std::vector<FeaturePair>& pairs) {
    Tensor d = sub(pairs.at(0).student, pairs.at(0).teacher);
    return mean(sqrt(add_scalar(mul(d, d), 1e-12)));
  };
  EXPECT_THROW(parse_distillation_config(R"({"intermediate_matches": [{"layer_T": 1, "layer_S": 1, "loss": "my_l1"}]})"),
               ValidationError);
  Presets::global().register_loss("my_l1", l1);
  auto cfg =
      parse_distillation_config(R"({"intermediate_matches": [{"layer_T": 1, "layer_S": 1, "loss": "my_l1"}]})");
  EXPECT_EQ(cfg.intermediate_matches.at(0).loss, "my_l1");
  EXPECT_THROW(Presets::global().register_loss("my_l1", l1), RegistrationError);

  Presets::global().register_scheduler("half", WeightSchedulerFn([](double b, double) { return b / 2; }));
  EXPECT_DOUBLE_EQ(evaluate_weight_scheduler("half", 3.0, 0.1), 1.5);
  EXPECT_EQ(parse_distillation_config(R"({"kd_loss_weight_scheduler": "half"})").kd_loss_weight_scheduler, "half");
}

TEST(Registry, UnregisteredNameListsAvailable) {
  try {
    parse_distillation_config(R"({"intermediate_matches": [{"layer_T": 1, "layer_S": 1, "loss": "nope"}]})");
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_EQ(e.code(), ValidationCode::unregistered_name);
    EXPECT_NE(std::string(e.what()).find("hidden_mse"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("nope"), std::string::npos);
  }
}

#include <gtest/gtest.h>

#include <string>

#include "distillkit/config.hpp"
#include "distillkit/error.hpp"
#include "distillkit/model.hpp"

using namespace dk;

namespace {

ValidationCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const ValidationError& e) {
    return e.code();
  }
  ADD_FAILURE() << "no ValidationError thrown";
  return ValidationCode::incompatible;
}

std::string message_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.what();
  }
  ADD_FAILURE() << "nothing thrown";
  return {};
}

ModelSpec transformer(std::size_t layers, std::size_t hidden) {
  ModelSpec s;
  s.name = "t" + std::to_string(layers);
  s.num_layers = layers;
  s.hidden_size = hidden;
  s.feed_forward_size = 4 * hidden;
  s.num_heads = 1;
  return s;
}

std::string match(const std::string& body) { return R"({"intermediate_matches": [)" + body + "]}"; }

}  // namespace

TEST(TrainingConfig, DefaultsAndOverrides) {
  auto c = parse_training_config("{}");
  EXPECT_EQ(c, TrainingConfig{});
  EXPECT_EQ(c.ckpt_frequency, 1u);
  EXPECT_EQ(c.seed, 42);
  EXPECT_FALSE(c.max_grad_norm.has_value());

  auto d = parse_training_config(R"({"ckpt_frequency": 2})");
  EXPECT_EQ(d.ckpt_frequency, 2u);
  d.ckpt_frequency = 1;
  EXPECT_EQ(d, TrainingConfig{});

  auto e = parse_training_config(R"({"max_grad_norm": 1.5, "seed": -3, "log_dir": "runs"})");
  EXPECT_EQ(*e.max_grad_norm, 1.5);
  EXPECT_EQ(e.seed, -3);
  EXPECT_EQ(e.log_dir, "runs");
}

TEST(TrainingConfig, MisspelledKeySuggestsCanonicalName) {
  try {
    parse_training_config(R"({"ckpt_frequencey": 2})");
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_EQ(e.code(), ValidationCode::unknown_key);
    EXPECT_NE(std::string(e.what()).find("ckpt_frequencey"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("did you mean 'ckpt_frequency'"), std::string::npos);
  }
}

TEST(TrainingConfig, BadValuesNameTheField) {
  EXPECT_EQ(code_of([] { parse_training_config(R"({"ckpt_frequency": 0})"); }), ValidationCode::out_of_range);
  EXPECT_EQ(code_of([] { parse_training_config(R"({"ckpt_frequency": "2"})"); }), ValidationCode::bad_type);
  EXPECT_EQ(code_of([] { parse_training_config(R"({"max_grad_norm": 0})"); }), ValidationCode::out_of_range);
  EXPECT_EQ(code_of([] { parse_training_config(R"({"log_dir": ""})"); }), ValidationCode::out_of_range);
  EXPECT_EQ(code_of([] { parse_training_config("[]"); }), ValidationCode::bad_type);
  EXPECT_NE(message_of([] { parse_training_config(R"({"seed": 1.5})"); }).find("training.seed"), std::string::npos);
}

TEST(TrainingConfig, MalformedJsonReportsLocation) {
  const auto msg = message_of([] { parse_training_config(R"({"seed": )"); });
  EXPECT_NE(msg.find("byte"), std::string::npos);
  EXPECT_THROW(parse_training_config("{,}"), ParseError);
  EXPECT_THROW(parse_training_config(R"({"seed": 1 // comment
})"),
               ParseError);
}

TEST(DistillationConfig, DefaultsAndTemperature) {
  auto c = parse_distillation_config(R"({"temperature": 8})");
  EXPECT_EQ(c, DistillationConfig{});
  EXPECT_EQ(c.temperature, 8.0);
  EXPECT_EQ(c.kd_loss_type, "ce");
  EXPECT_EQ(kd_loss_name(c), "kd_ce");
  EXPECT_EQ(c.hard_label_weight, 0.0);
  EXPECT_EQ(c.temperature_scheduler, "constant_temperature");
  EXPECT_EQ(code_of([] { parse_distillation_config(R"({"temperature": -1})"); }), ValidationCode::out_of_range);
  EXPECT_EQ(code_of([] { parse_distillation_config(R"({"temperature": 0})"); }), ValidationCode::out_of_range);
}

TEST(DistillationConfig, WeightsAndNames) {
  EXPECT_EQ(code_of([] { parse_distillation_config(R"({"kd_loss_weight": 0})"); }), ValidationCode::out_of_range);
  EXPECT_NO_THROW(parse_distillation_config(R"({"kd_loss_weight": 0, "hard_label_weight": 1})"));
  EXPECT_EQ(code_of([] { parse_distillation_config(R"({"hard_label_weight": -0.5})"); }),
            ValidationCode::out_of_range);
  EXPECT_EQ(code_of([] { parse_distillation_config(R"({"kd_loss_type": "kl"})"); }),
            ValidationCode::unregistered_name);
  EXPECT_EQ(parse_distillation_config(R"({"kd_loss_type": "mse"})").kd_loss_type, "mse");
  EXPECT_EQ(code_of([] { parse_distillation_config(R"({"temperature_scheduler": "dynamic"})"); }),
            ValidationCode::unregistered_name);
  const auto msg = message_of([] { parse_distillation_config(R"({"kd_loss_weight_scheduler": "step"})"); });
  EXPECT_NE(msg.find("linear_growth"), std::string::npos);
  EXPECT_EQ(code_of([] { parse_distillation_config(R"({"probability_shift": 1})"); }), ValidationCode::bad_type);
}

TEST(DistillationConfig, MatchParsing) {
  auto c = parse_distillation_config(match(R"({"feature": "hidden", "loss": "nst", "layer_T": 8, "layer_S": 2, "weight": 1})"));
  ASSERT_EQ(c.intermediate_matches.size(), 1u);
  const auto& m = c.intermediate_matches[0];
  EXPECT_EQ(m.layer_T, std::vector<std::size_t>({8}));
  EXPECT_EQ(m.layer_S, std::vector<std::size_t>({2}));
  EXPECT_EQ(m.loss, "nst");
  EXPECT_EQ(m.proj_side, "student");
  EXPECT_FALSE(m.proj.has_value());

  auto p = parse_distillation_config(
      match(R"({"loss": "hidden_mse", "layer_T": 4, "layer_S": 1, "proj": ["linear", 312, 768], "weight": 0.5})"));
  EXPECT_EQ(*p.intermediate_matches[0].proj, (ProjectionSpec{"linear", 312, 768}));

  auto f = parse_distillation_config(match(R"({"loss": "fsp", "layer_T": [0, 4], "layer_S": [0, 1]})"));
  EXPECT_EQ(f.intermediate_matches[0].layer_T, std::vector<std::size_t>({0, 4}));
}

TEST(DistillationConfig, MatchErrors) {
  EXPECT_EQ(code_of([] { parse_distillation_config(match(R"({"loss": "fsp", "layer_T": 1, "layer_S": 1})")); }),
            ValidationCode::incompatible);
  EXPECT_EQ(code_of([] {
              parse_distillation_config(match(R"({"loss": "nst", "feature": "attention", "layer_T": 1, "layer_S": 1})"));
            }),
            ValidationCode::incompatible);
  EXPECT_EQ(code_of([] { parse_distillation_config(match(R"({"loss": "attention_ce", "layer_T": 1, "layer_S": 1})")); }),
            ValidationCode::incompatible);
  EXPECT_EQ(code_of([] {
              parse_distillation_config(
                  match(R"({"loss": "attention_mse", "feature": "attention", "layer_T": 1, "layer_S": 1, "proj": ["linear", 2, 3]})"));
            }),
            ValidationCode::incompatible);
  EXPECT_EQ(code_of([] { parse_distillation_config(match(R"({"loss": "cos", "layer_T": -1, "layer_S": 1})")); }),
            ValidationCode::bad_type);
  EXPECT_EQ(code_of([] { parse_distillation_config(match(R"({"layer_T": 1, "layer_S": 1})")); }),
            ValidationCode::bad_type);
  EXPECT_EQ(code_of([] {
              parse_distillation_config(match(R"({"loss": "cos", "layer_T": 1, "layer_S": 1, "proj": ["conv", 2, 3]})"));
            }),
            ValidationCode::out_of_range);
  EXPECT_EQ(code_of([] {
              parse_distillation_config(match(R"({"loss": "cos", "layer_T": 1, "layer_S": 1, "proj": ["linear", 0, 3]})"));
            }),
            ValidationCode::bad_type);
  const auto msg = message_of(
      [] { parse_distillation_config(match(R"({"loss": "cos", "layer_T": 1, "layer_S": 1, "wieght": 2})")); });
  EXPECT_NE(msg.find("intermediate_matches[0]"), std::string::npos);
  EXPECT_NE(msg.find("did you mean 'weight'"), std::string::npos);
}

TEST(ValidateAgainstSpecs, HiddenIndexIncludesEmbeddingLayer) {
  const auto teacher = transformer(12, 24), student = transformer(4, 24);
  EXPECT_NO_THROW(validate_against_specs(
      parse_distillation_config(match(R"({"loss": "hidden_mse", "layer_T": 12, "layer_S": 4})")), teacher, student));
  EXPECT_NO_THROW(validate_against_specs(
      parse_distillation_config(match(R"({"loss": "hidden_mse", "layer_T": 0, "layer_S": 0})")), teacher, student));
  EXPECT_EQ(code_of([&] {
              validate_against_specs(
                  parse_distillation_config(match(R"({"loss": "hidden_mse", "layer_T": 13, "layer_S": 4})")), teacher,
                  student);
            }),
            ValidationCode::layer_range);
  // Attention maps exist only for real layers, 0..num_layers-1.
  EXPECT_EQ(code_of([&] {
              validate_against_specs(parse_distillation_config(match(
                                         R"({"loss": "attention_mse", "feature": "attention", "layer_T": 11, "layer_S": 4})")),
                                     teacher, student);
            }),
            ValidationCode::layer_range);
}

TEST(ValidateAgainstSpecs, WidthChecksAndProjections) {
  const auto teacher = transformer(12, 768), student = transformer(4, 312);
  const auto msg = message_of([&] {
    validate_against_specs(parse_distillation_config(match(R"({"loss": "hidden_mse", "layer_T": 8, "layer_S": 2})")),
                           teacher, student);
  });
  EXPECT_NE(msg.find(R"(set proj: ["linear", 312, 768])"), std::string::npos);
  EXPECT_NE(msg.find("intermediate_matches[0]"), std::string::npos);

  EXPECT_NO_THROW(validate_against_specs(
      parse_distillation_config(match(R"({"loss": "nst", "layer_T": 8, "layer_S": 2})")), teacher, student));
  EXPECT_NO_THROW(validate_against_specs(
      parse_distillation_config(
          match(R"({"loss": "hidden_mse", "layer_T": 8, "layer_S": 2, "proj": ["linear", 312, 768]})")),
      teacher, student));
  EXPECT_NO_THROW(validate_against_specs(
      parse_distillation_config(match(
          R"({"loss": "cos", "layer_T": 8, "layer_S": 2, "proj": ["linear", 768, 312], "proj_side": "teacher"})")),
      teacher, student));
  EXPECT_EQ(code_of([&] {
              validate_against_specs(parse_distillation_config(match(
                                         R"({"loss": "cos", "layer_T": 8, "layer_S": 2, "proj": ["linear", 768, 312]})")),
                                     teacher, student);
            }),
            ValidationCode::dim_mismatch);
}

TEST(ValidateAgainstSpecs, ReportsEveryViolationWithItsIndex) {
  const auto teacher = transformer(2, 8), student = transformer(1, 4);
  const auto cfg = parse_distillation_config(
      match(R"({"loss": "hidden_mse", "layer_T": 5, "layer_S": 1}, {"loss": "cos", "layer_T": 1, "layer_S": 1},
              {"loss": "nst", "layer_T": 1, "layer_S": 3})"));
  const auto msg = message_of([&] { validate_against_specs(cfg, teacher, student); });
  EXPECT_NE(msg.find("intermediate_matches[0]: layer_T 5"), std::string::npos);
  EXPECT_NE(msg.find("intermediate_matches[1]"), std::string::npos);
  EXPECT_NE(msg.find("intermediate_matches[2]: layer_S 3"), std::string::npos);
}

TEST(ValidateAgainstSpecs, BiGruTopWidthIsDoubled) {
  auto gru = transformer(1, 6);
  gru.kind = ModelKind::bigru;
  const auto teacher = transformer(2, 12);
  EXPECT_NO_THROW(validate_against_specs(
      parse_distillation_config(match(R"({"loss": "hidden_mse", "layer_T": 2, "layer_S": 1})")), teacher, gru));
}

TEST(Serialize, RoundTripIsStableAndSorted) {
  DistillationConfig d;
  EXPECT_EQ(parse_distillation_config(serialize_config(d)), d);

  auto rich = parse_distillation_config(R"({
    "kd_loss_type": "mse", "temperature": 4, "hard_label_weight": 0.5, "probability_shift": true,
    "kd_loss_weight_scheduler": "linear_decay", "temperature_scheduler": "flsw_temperature",
    "intermediate_matches": [
      {"loss": "hidden_mse", "layer_T": 4, "layer_S": 1, "proj": ["linear", 16, 32], "weight": 2},
      {"loss": "fsp", "layer_T": [0, 4], "layer_S": [0, 1], "proj_side": "teacher"},
      {"loss": "attention_ce", "feature": "attention", "layer_T": 3, "layer_S": 0, "weight": 0.25}]})");
  const auto text = serialize_config(rich);
  const auto again = parse_distillation_config(text);
  EXPECT_EQ(again, rich);
  EXPECT_EQ(serialize_config(again), text);
  EXPECT_LT(text.find("\"hard_label_weight\""), text.find("\"intermediate_matches\""));
  EXPECT_LT(text.find("\"kd_loss_type\""), text.find("\"temperature\""));

  TrainingConfig t;
  t.max_grad_norm = 1.0;
  t.ckpt_frequency = 3;
  EXPECT_EQ(parse_training_config(serialize_config(t)), t);
  EXPECT_EQ(serialize_config(parse_training_config(serialize_config(t))), serialize_config(t));
}

TEST(EditDistance, Basics) {
  EXPECT_EQ(edit_distance("", "abc"), 3u);
  EXPECT_EQ(edit_distance("ckpt_frequencey", "ckpt_frequency"), 1u);
  EXPECT_EQ(edit_distance("kitten", "sitting"), 3u);
}

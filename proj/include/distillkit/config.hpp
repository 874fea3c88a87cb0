#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "distillkit/model.hpp"
#include "json.hpp"

namespace dk {

// Defaults live in the member initializers below and nowhere else.

struct TrainingConfig {
  std::string log_dir = "logs";
  std::string output_dir = "output";
  std::string device = "cpu";
  std::size_t ckpt_frequency = 1;        // checkpoints per epoch
  std::size_t ckpt_epoch_frequency = 1;  // checkpoint every n-th epoch
  std::optional<double> max_grad_norm;
  std::int64_t seed = 42;
  bool freeze_embeddings = false;  // keep the student's word embeddings fixed

  bool operator==(const TrainingConfig&) const = default;
};

struct ProjectionSpec {
  std::string kind = "linear";
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;

  bool operator==(const ProjectionSpec&) const = default;
};

/// One teacher-layer/student-layer pairing. Hidden indices run 0..num_layers
/// (0 = embedding output); attention indices run 0..num_layers-1. Losses with
/// arity 2 (fsp) take two indices per side.
struct IntermediateMatch {
  std::vector<std::size_t> layer_T;
  std::vector<std::size_t> layer_S;
  std::string feature = "hidden";
  std::string loss;
  double weight = 1.0;
  std::optional<ProjectionSpec> proj;
  std::string proj_side = "student";  // or "teacher"

  bool operator==(const IntermediateMatch&) const = default;
};

struct DistillationConfig {
  std::string kd_loss_type = "ce";  // ce, mse, or any registered final loss
  double temperature = 8.0;
  std::string temperature_scheduler = "constant_temperature";
  double temperature_beta = 1.0;  // flsw_temperature strength
  double kd_loss_weight = 1.0;
  double hard_label_weight = 0.0;
  std::string kd_loss_weight_scheduler = "constant";
  std::string hard_label_weight_scheduler = "constant";
  bool probability_shift = false;
  std::vector<IntermediateMatch> intermediate_matches;

  bool operator==(const DistillationConfig&) const = default;
};

/// Registry name behind kd_loss_type ("ce" -> "kd_ce", "mse" -> "kd_mse").
std::string kd_loss_name(const DistillationConfig& cfg);

// Parsing throws ParseError for malformed JSON and ValidationError (with a
// ValidationCode) for unknown keys, wrong types, bad ranges and unregistered
// names. Unknown keys come with a nearest-name suggestion.
TrainingConfig parse_training_config(const std::string& json_text);
TrainingConfig training_config_from_json(const nlohmann::json& j);
DistillationConfig parse_distillation_config(const std::string& json_text);
DistillationConfig distillation_config_from_json(const nlohmann::json& j);

/// Checks layer indices and feature widths against the two architectures.
/// Every violation is reported, prefixed by its match index.
void validate_against_specs(const DistillationConfig& cfg, const ModelSpec& teacher, const ModelSpec& student);

nlohmann::json to_json(const TrainingConfig& cfg);
nlohmann::json to_json(const DistillationConfig& cfg);
/// Pretty-printed JSON with sorted keys.
std::string serialize_config(const TrainingConfig& cfg);
std::string serialize_config(const DistillationConfig& cfg);

/// Edit distance, used for "did you mean" suggestions.
std::size_t edit_distance(const std::string& a, const std::string& b);

}  // namespace dk

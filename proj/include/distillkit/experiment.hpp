#pragma once

#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "distillkit/config.hpp"
#include "distillkit/data.hpp"
#include "distillkit/model.hpp"
#include "json.hpp"

namespace dk {

/// Generator parameters for one synthetic task.
struct TaskParams {
  TaskKind kind = TaskKind::classification;
  std::size_t n_train = 1000;
  std::size_t n_dev = 500;
  std::size_t num_labels = 3;  // classes or tags; ignored for span
  std::size_t vocab = 64;
  std::size_t length = 16;
  double noise_rate = 0.0;  // classification only
  std::uint64_t seed = 1;

  Dataset generate(Split split, std::size_t n) const;
  Dataset train() const { return generate(Split::train, n_train); }
  Dataset dev() const { return generate(Split::dev, n_dev); }
};

struct Schedule {
  std::size_t num_epochs = 3;
  std::size_t batch_size = 32;
  double learning_rate = 1e-4;
  std::size_t teacher_epochs = 3;
  double teacher_learning_rate = 1e-4;
  std::size_t num_teachers = 1;
};

/// Unlabeled auxiliary examples from the same generator family, mixed into
/// the distillation set.
struct Augmentation {
  std::size_t n = 0;
  double mix_ratio = 1.0;
  std::uint64_t seed = 1;
};

/// Validated experiment. Nothing here has touched the output directory.
struct Experiment {
  ModelSpec teacher_spec;
  ModelSpec student_spec;
  std::optional<std::string> teacher_weights;  // resolved path
  std::vector<TaskParams> tasks;               // one entry unless multi_task
  TrainingConfig training;
  DistillationConfig distillation;
  std::string distiller = "general";
  Schedule schedule;
  std::optional<Augmentation> augmentation;
};

inline const std::vector<std::string>& distiller_names() {
  static const std::vector<std::string> names{"basic_trainer", "basic", "general", "multi_teacher", "multi_task"};
  return names;
}

/// Parses and validates a manifest. Spec and weight paths are relative to
/// base_dir. Malformed JSON throws ParseError; everything else that is wrong
/// throws ValidationError or ConfigError before any compute happens.
Experiment parse_experiment(const nlohmann::json& manifest, const std::string& base_dir);
Experiment load_experiment(const std::string& manifest_path);

/// Runs the pipeline: teachers are trained unless weights are given, the
/// student is distilled with a dev-set evaluation at every checkpoint, and
/// report.json plus train.log are written to out_dir. Returns the report.
nlohmann::json run_experiment(const Experiment& experiment, const std::string& out_dir);

/// Table of layers, hidden, feed-forward, parameters and size relative to
/// the first spec.
void print_size_table(const std::vector<ModelSpec>& specs, std::ostream& out);

}  // namespace dk

#include "distillkit/checkpoint.hpp"

#include <filesystem>

#include "distillkit/error.hpp"
#include "distillkit/weights_io.hpp"

namespace dk {

std::vector<std::size_t> compute_checkpoint_steps(std::size_t S, std::size_t E, std::size_t f,
                                                  std::size_t epoch_frequency) {
  if (S == 0 || E == 0 || f == 0 || epoch_frequency == 0) {
    throw ValidationError(ValidationCode::out_of_range,
                          "steps_per_epoch, num_epochs, ckpt_frequency and ckpt_epoch_frequency must be >= 1");
  }
  if (f > S) {
    throw ValidationError(ValidationCode::out_of_range, "ckpt_frequency " + std::to_string(f) +
                                                            " exceeds steps_per_epoch " + std::to_string(S));
  }
  std::vector<std::size_t> steps;
  for (std::size_t e = 1; e <= E; ++e) {
    if (e % epoch_frequency != 0) continue;
    for (std::size_t j = 1; j <= f; ++j) {
      const std::size_t s = (e - 1) * S + S * j / f;
      if (steps.empty() || steps.back() != s) steps.push_back(s);
    }
  }
  if (steps.empty() || steps.back() != S * E) steps.push_back(S * E);
  return steps;
}

std::string checkpoint_path(const std::string& output_dir, std::size_t step) {
  return (std::filesystem::path(output_dir) / ("gs" + std::to_string(step))).string();
}

std::string save_checkpoint(const Model& model, const std::string& output_dir, std::size_t step) {
  std::filesystem::create_directories(output_dir);
  const auto path = checkpoint_path(output_dir, step);
  save_weights(model, path);
  return path;
}

}  // namespace dk

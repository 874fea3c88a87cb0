#pragma once

#include <string>
#include <vector>

#include "distillkit/model.hpp"

namespace dk {

/// Global steps (1-based) at which the student is saved and the callback runs.
/// Within each kept epoch e: (e-1)*S + floor(S*j/f) for j = 1..f. Only every
/// epoch_frequency-th epoch is kept; the final step is always included.
/// f > S, or any count of zero, throws ValidationError (out_of_range).
std::vector<std::size_t> compute_checkpoint_steps(std::size_t steps_per_epoch, std::size_t num_epochs,
                                                  std::size_t ckpt_frequency, std::size_t epoch_frequency = 1);

/// output_dir/gs{step}
std::string checkpoint_path(const std::string& output_dir, std::size_t step);

/// Writes the model to checkpoint_path, creating output_dir when needed.
std::string save_checkpoint(const Model& model, const std::string& output_dir, std::size_t step);

}  // namespace dk

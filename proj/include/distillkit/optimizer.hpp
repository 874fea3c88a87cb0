#pragma once

#include <cstdint>
#include <vector>

#include "distillkit/tensor.hpp"

namespace dk {

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled, AdamW style
};

/// Bias-corrected Adam over a fixed parameter list. Each parameter keeps its
/// own step count so parameters that skip a step (a task head idle for a
/// batch) are corrected by their own history.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamConfig config = {});

  /// Updates every parameter from its gradient times grad_scale. A parameter
  /// without a gradient throws ContractError unless allow_missing is set, in
  /// which case it is left untouched.
  void step(double grad_scale = 1.0, bool allow_missing = false);

  const AdamConfig& config() const { return config_; }
  const std::vector<Tensor>& params() const { return params_; }
  std::uint64_t step_count(std::size_t param) const { return steps_.at(param); }
  const std::vector<double>& first_moment(std::size_t param) const { return m_.at(param); }
  const std::vector<double>& second_moment(std::size_t param) const { return v_.at(param); }

 private:
  std::vector<Tensor> params_;
  AdamConfig config_;
  std::vector<std::vector<double>> m_, v_;
  std::vector<std::uint64_t> steps_;
};

/// Euclidean norm of all present gradients taken together.
double global_grad_norm(const std::vector<Tensor>& params);

/// Factor that brings the global norm down to max_norm (1 when already below).
double clip_factor(double norm, double max_norm);

}  // namespace dk

#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "distillkit/losses.hpp"
#include "distillkit/tensor.hpp"

namespace dk {

/// Final-output loss: teacher vs student logits.
using FinalLossFn = std::function<Tensor(const SoftLabelInputs&)>;

/// Intermediate loss over one feature pair, or two for FSP-style losses.
using IntermediateLossFn = std::function<Tensor(const std::vector<FeaturePair>&)>;

using WeightSchedulerFn = std::function<double(double base_weight, double progress)>;

/// Returns one temperature per logit row.
using TemperatureSchedulerFn =
    std::function<std::vector<double>(double base_temperature, const Tensor& teacher_logits,
                                      const Tensor& student_logits, double beta)>;

enum class FeatureKind { hidden, attention, any };

struct IntermediateLossInfo {
  IntermediateLossFn fn;
  FeatureKind feature = FeatureKind::any;
  /// Number of (teacher layer, student layer) pairs the loss consumes: 1, or 2 for fsp.
  std::size_t arity = 1;
  /// True when teacher and student widths may differ without a projection.
  bool width_agnostic = false;
};

/// Name-indexed registries of losses and schedulers. Losses share one name
/// space, schedulers another. Built-ins:
///   final:        kd_ce, kd_mse, hard_label
///   intermediate: hidden_mse, cos, attention_mse, attention_ce, fsp, nst
///   weight:       constant, linear_decay, linear_growth
///   temperature:  constant_temperature, flsw_temperature
/// Registration happens during setup; lookups are read-only afterwards.
class Presets {
 public:
  Presets();

  /// Process-wide registry consulted by config validation and distillers.
  static Presets& global();

  void register_loss(const std::string& name, FinalLossFn fn);
  void register_loss(const std::string& name, IntermediateLossInfo info);
  void register_scheduler(const std::string& name, WeightSchedulerFn fn);
  void register_scheduler(const std::string& name, TemperatureSchedulerFn fn);

  bool has_final_loss(const std::string& name) const { return final_.count(name) > 0; }
  bool has_intermediate_loss(const std::string& name) const { return intermediate_.count(name) > 0; }
  bool has_weight_scheduler(const std::string& name) const { return weight_.count(name) > 0; }
  bool has_temperature_scheduler(const std::string& name) const { return temperature_.count(name) > 0; }

  /// Lookups throw ConfigError listing the registered names.
  const FinalLossFn& final_loss(const std::string& name) const;
  const IntermediateLossInfo& intermediate_loss(const std::string& name) const;
  const WeightSchedulerFn& weight_scheduler(const std::string& name) const;
  const TemperatureSchedulerFn& temperature_scheduler(const std::string& name) const;

  std::vector<std::string> final_loss_names() const;
  std::vector<std::string> intermediate_loss_names() const;
  std::vector<std::string> weight_scheduler_names() const;
  std::vector<std::string> temperature_scheduler_names() const;

 private:
  void claim_loss_name(const std::string& name) const;
  void claim_scheduler_name(const std::string& name) const;

  std::map<std::string, FinalLossFn> final_;
  std::map<std::string, IntermediateLossInfo> intermediate_;
  std::map<std::string, WeightSchedulerFn> weight_;
  std::map<std::string, TemperatureSchedulerFn> temperature_;
};

std::string join_names(const std::vector<std::string>& names);

/// constant -> base; linear_decay -> base * (1 - progress); linear_growth -> base * progress.
double evaluate_weight_scheduler(const std::string& name, double base_weight, double progress);

/// constant_temperature -> base for every row. flsw_temperature ->
///   T_i = base * (1 + beta * (1 - cos(z_t,i, z_s,i))), clamped to [base, 2 * base].
/// Logits are read as values only; nothing here is differentiated.
std::vector<double> evaluate_temperature_scheduler(const std::string& name, double base_temperature,
                                                   const Tensor& teacher_logits, const Tensor& student_logits,
                                                   double beta = 1.0);

}  // namespace dk

#include "distillkit/presets.hpp"

#include <algorithm>
#include <cmath>

#include "distillkit/error.hpp"

namespace dk {

namespace {

template <class Map>
std::vector<std::string> keys(const Map& m) {
  std::vector<std::string> out;
  for (const auto& [k, v] : m) out.push_back(k);
  return out;
}

template <class Map>
const typename Map::mapped_type& lookup(const Map& m, const std::string& name, const char* what) {
  auto it = m.find(name);
  if (it == m.end()) {
    throw ConfigError(std::string("unknown ") + what + " '" + name + "'; registered: " + join_names(keys(m)));
  }
  return it->second;
}

std::vector<double> flsw(double base, const Tensor& teacher, const Tensor& student, double beta) {
  if (teacher.shape() != student.shape() || teacher.rank() < 1) {
    throw ShapeError("flsw_temperature: logits shapes " + shape_str(teacher.shape()) + " and " +
                     shape_str(student.shape()));
  }
  const std::size_t C = teacher.shape().back();
  const std::size_t rows = teacher.numel() / C;
  const auto zt = teacher.data();
  const auto zs = student.data();
  std::vector<double> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double dot = 0.0, nt = 0.0, ns = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
      dot += zt[r * C + c] * zs[r * C + c];
      nt += zt[r * C + c] * zt[r * C + c];
      ns += zs[r * C + c] * zs[r * C + c];
    }
    const double cosine = dot / std::sqrt(nt * ns + kCosEps * kCosEps);
    const double t = base * (1.0 + beta * (1.0 - cosine));
    out[r] = std::clamp(t, base, 2.0 * base);
  }
  return out;
}

}  // namespace

std::string join_names(const std::vector<std::string>& names) {
  std::string out;
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (i) out += ", ";
    out += names[i];
  }
  return out;
}

Presets::Presets() {
  final_["kd_ce"] = kd_ce_loss;
  final_["kd_mse"] = kd_mse_loss;
  final_["hard_label"] = [](const SoftLabelInputs& in) {
    return hard_label_loss(in.student_logits, in.labels, in.logits_mask);
  };

  auto single = [](Tensor (*fn)(const FeaturePair&), const char* name) {
    return [fn, name](const std::vector<FeaturePair>& pairs) {
      if (pairs.size() != 1) throw ContractError(std::string(name) + " takes exactly one feature pair");
      return fn(pairs[0]);
    };
  };
  intermediate_["hidden_mse"] = {single(hidden_mse_loss, "hidden_mse"), FeatureKind::hidden, 1, false};
  intermediate_["cos"] = {single(cos_loss, "cos"), FeatureKind::hidden, 1, false};
  intermediate_["nst"] = {single(nst_loss, "nst"), FeatureKind::hidden, 1, true};
  intermediate_["fsp"] = {[](const std::vector<FeaturePair>& pairs) {
                            if (pairs.size() != 2) throw ContractError("fsp takes exactly two feature pairs");
                            return fsp_loss(pairs[0], pairs[1]);
                          },
                          FeatureKind::hidden, 2, false};
  auto attention = [](AttentionMode mode, const char* name) {
    return [mode, name](const std::vector<FeaturePair>& pairs) {
      if (pairs.size() != 1) throw ContractError(std::string(name) + " takes exactly one feature pair");
      return attention_loss(pairs[0].teacher, pairs[0].student, pairs[0].inputs_mask, mode);
    };
  };
  intermediate_["attention_mse"] = {attention(AttentionMode::mse, "attention_mse"), FeatureKind::attention, 1, true};
  intermediate_["attention_ce"] = {attention(AttentionMode::ce, "attention_ce"), FeatureKind::attention, 1, true};

  weight_["constant"] = [](double base, double) { return base; };
  weight_["linear_decay"] = [](double base, double progress) { return base * (1.0 - progress); };
  weight_["linear_growth"] = [](double base, double progress) { return base * progress; };

  temperature_["constant_temperature"] = [](double base, const Tensor& teacher, const Tensor&, double) {
    const std::size_t rows = teacher.rank() == 0 ? 1 : teacher.numel() / teacher.shape().back();
    return std::vector<double>(rows, base);
  };
  temperature_["flsw_temperature"] = flsw;
}

Presets& Presets::global() {
  static Presets instance;
  return instance;
}

void Presets::claim_loss_name(const std::string& name) const {
  if (name.empty()) throw RegistrationError("loss name must be nonempty");
  if (final_.count(name) || intermediate_.count(name)) {
    throw RegistrationError("loss '" + name + "' is already registered");
  }
}

void Presets::claim_scheduler_name(const std::string& name) const {
  if (name.empty()) throw RegistrationError("scheduler name must be nonempty");
  if (weight_.count(name) || temperature_.count(name)) {
    throw RegistrationError("scheduler '" + name + "' is already registered");
  }
}

void Presets::register_loss(const std::string& name, FinalLossFn fn) {
  claim_loss_name(name);
  if (!fn) throw RegistrationError("loss '" + name + "' has no function");
  final_[name] = std::move(fn);
}

void Presets::register_loss(const std::string& name, IntermediateLossInfo info) {
  claim_loss_name(name);
  if (!info.fn) throw RegistrationError("loss '" + name + "' has no function");
  if (info.arity != 1 && info.arity != 2) throw RegistrationError("loss '" + name + "' must take 1 or 2 pairs");
  intermediate_[name] = std::move(info);
}

void Presets::register_scheduler(const std::string& name, WeightSchedulerFn fn) {
  claim_scheduler_name(name);
  if (!fn) throw RegistrationError("scheduler '" + name + "' has no function");
  weight_[name] = std::move(fn);
}

void Presets::register_scheduler(const std::string& name, TemperatureSchedulerFn fn) {
  claim_scheduler_name(name);
  if (!fn) throw RegistrationError("scheduler '" + name + "' has no function");
  temperature_[name] = std::move(fn);
}

const FinalLossFn& Presets::final_loss(const std::string& name) const { return lookup(final_, name, "final loss"); }

const IntermediateLossInfo& Presets::intermediate_loss(const std::string& name) const {
  return lookup(intermediate_, name, "intermediate loss");
}

const WeightSchedulerFn& Presets::weight_scheduler(const std::string& name) const {
  return lookup(weight_, name, "weight scheduler");
}

const TemperatureSchedulerFn& Presets::temperature_scheduler(const std::string& name) const {
  return lookup(temperature_, name, "temperature scheduler");
}

std::vector<std::string> Presets::final_loss_names() const { return keys(final_); }
std::vector<std::string> Presets::intermediate_loss_names() const { return keys(intermediate_); }
std::vector<std::string> Presets::weight_scheduler_names() const { return keys(weight_); }
std::vector<std::string> Presets::temperature_scheduler_names() const { return keys(temperature_); }

double evaluate_weight_scheduler(const std::string& name, double base_weight, double progress) {
  if (!(progress >= 0.0 && progress <= 1.0)) {
    throw ContractError("scheduler progress must lie in [0, 1], got " + std::to_string(progress));
  }
  return Presets::global().weight_scheduler(name)(base_weight, progress);
}

std::vector<double> evaluate_temperature_scheduler(const std::string& name, double base_temperature,
                                                   const Tensor& teacher_logits, const Tensor& student_logits,
                                                   double beta) {
  if (!(base_temperature > 0.0)) throw ConfigError("base temperature must be > 0");
  auto out = Presets::global().temperature_scheduler(name)(base_temperature, teacher_logits, student_logits, beta);
  for (double t : out) {
    if (!(t > 0.0)) throw ContractError("temperature scheduler '" + name + "' produced a non-positive value");
  }
  return out;
}

}  // namespace dk

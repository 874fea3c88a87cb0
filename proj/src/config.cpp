#include "distillkit/config.hpp"

#include <algorithm>
#include <sstream>

#include "distillkit/error.hpp"
#include "distillkit/presets.hpp"

namespace dk {

using nlohmann::json;

std::size_t edit_distance(const std::string& a, const std::string& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

namespace {

json parse_json(const std::string& text, const char* what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string(what) + ": malformed JSON at byte " + std::to_string(e.byte) + ": " + e.what());
  }
}

[[noreturn]] void fail(ValidationCode code, const std::string& message) { throw ValidationError(code, message); }

class Fields {
 public:
  Fields(const json& j, std::string context) : j_(j), ctx_(std::move(context)) {
    if (!j_.is_object()) fail(ValidationCode::bad_type, ctx_ + " must be a JSON object");
  }

  void only(std::initializer_list<const char*> known) const {
    for (const auto& [key, value] : j_.items()) {
      if (std::none_of(known.begin(), known.end(), [&](const char* k) { return key == k; })) {
        std::string best;
        std::size_t best_d = 4;
        for (const char* k : known) {
          const auto d = edit_distance(key, k);
          if (d < best_d) {
            best_d = d;
            best = k;
          }
        }
        std::string msg = ctx_ + ": unknown key '" + key + "'";
        if (!best.empty()) msg += "; did you mean '" + best + "'?";
        fail(ValidationCode::unknown_key, msg);
      }
    }
  }

  bool has(const char* key) const { return j_.contains(key); }
  const json& at(const char* key) const { return j_.at(key); }

  void string(const char* key, std::string& out) const {
    if (!has(key)) return;
    if (!j_.at(key).is_string()) fail(ValidationCode::bad_type, name(key) + " must be a string");
    out = j_.at(key).get<std::string>();
  }

  void boolean(const char* key, bool& out) const {
    if (!has(key)) return;
    if (!j_.at(key).is_boolean()) fail(ValidationCode::bad_type, name(key) + " must be a boolean");
    out = j_.at(key).get<bool>();
  }

  void integer(const char* key, std::int64_t& out) const {
    if (!has(key)) return;
    if (!j_.at(key).is_number_integer()) fail(ValidationCode::bad_type, name(key) + " must be an integer");
    out = j_.at(key).get<std::int64_t>();
  }

  void count(const char* key, std::size_t& out, std::size_t min) const {
    if (!has(key)) return;
    if (!j_.at(key).is_number_integer()) fail(ValidationCode::bad_type, name(key) + " must be an integer");
    const auto v = j_.at(key).get<std::int64_t>();
    if (v < static_cast<std::int64_t>(min)) {
      fail(ValidationCode::out_of_range, name(key) + " must be >= " + std::to_string(min) + ", got " + std::to_string(v));
    }
    out = static_cast<std::size_t>(v);
  }

  // Real value with a lower bound; `strict` makes the bound exclusive.
  void real(const char* key, double& out, double min, bool strict) const {
    if (!has(key)) return;
    if (!j_.at(key).is_number()) fail(ValidationCode::bad_type, name(key) + " must be a number");
    const double v = j_.at(key).get<double>();
    if (strict ? !(v > min) : !(v >= min)) {
      std::ostringstream os;
      os << name(key) << " must be " << (strict ? "> " : ">= ") << min << ", got " << v;
      fail(ValidationCode::out_of_range, os.str());
    }
    out = v;
  }

  std::string name(const char* key) const { return ctx_ + "." + key; }

 private:
  const json& j_;
  std::string ctx_;
};

void require_registered(bool ok, const std::string& field, const std::string& value,
                        const std::vector<std::string>& names) {
  if (!ok) {
    fail(ValidationCode::unregistered_name,
         field + ": '" + value + "' is not registered; available: " + join_names(names));
  }
}

std::vector<std::size_t> layer_indices(const Fields& f, const char* key) {
  if (!f.has(key)) fail(ValidationCode::bad_type, f.name(key) + " is required");
  const json& v = f.at(key);
  auto index = [&](const json& x) {
    if (!x.is_number_integer() || x.get<std::int64_t>() < 0) {
      fail(ValidationCode::bad_type, f.name(key) + " must hold non-negative integers");
    }
    return x.get<std::size_t>();
  };
  if (v.is_number_integer()) return {index(v)};
  if (v.is_array() && v.size() == 2) return {index(v[0]), index(v[1])};
  fail(ValidationCode::bad_type, f.name(key) + " must be an integer or a pair of integers");
}

IntermediateMatch match_from_json(const json& j, std::size_t i) {
  Fields f(j, "intermediate_matches[" + std::to_string(i) + "]");
  f.only({"layer_T", "layer_S", "feature", "loss", "weight", "proj", "proj_side"});
  IntermediateMatch m;
  m.layer_T = layer_indices(f, "layer_T");
  m.layer_S = layer_indices(f, "layer_S");
  f.string("feature", m.feature);
  if (!f.has("loss")) fail(ValidationCode::bad_type, f.name("loss") + " is required");
  f.string("loss", m.loss);
  f.real("weight", m.weight, 0.0, false);
  f.string("proj_side", m.proj_side);
  if (f.has("proj")) {
    const json& p = f.at("proj");
    if (!p.is_array() || p.size() != 3 || !p[0].is_string() || !p[1].is_number_integer() ||
        !p[2].is_number_integer() || p[1].get<std::int64_t>() < 1 || p[2].get<std::int64_t>() < 1) {
      fail(ValidationCode::bad_type, f.name("proj") + " must be [\"linear\", in_dim, out_dim] with positive dims");
    }
    m.proj = ProjectionSpec{p[0].get<std::string>(), p[1].get<std::size_t>(), p[2].get<std::size_t>()};
    if (m.proj->kind != "linear") {
      fail(ValidationCode::out_of_range, f.name("proj") + ": unsupported projection kind '" + m.proj->kind + "'");
    }
  }

  if (m.feature != "hidden" && m.feature != "attention") {
    fail(ValidationCode::out_of_range, f.name("feature") + " must be 'hidden' or 'attention', got '" + m.feature + "'");
  }
  if (m.proj_side != "student" && m.proj_side != "teacher") {
    fail(ValidationCode::out_of_range, f.name("proj_side") + " must be 'student' or 'teacher'");
  }
  const auto& presets = Presets::global();
  require_registered(presets.has_intermediate_loss(m.loss), f.name("loss"), m.loss,
                     presets.intermediate_loss_names());
  const auto& info = presets.intermediate_loss(m.loss);
  if (m.layer_T.size() != info.arity || m.layer_S.size() != info.arity) {
    fail(ValidationCode::incompatible, f.name("layer_T") + "/layer_S: loss '" + m.loss + "' needs " +
                                           (info.arity == 2 ? "index pairs" : "single indices"));
  }
  const bool attention = m.feature == "attention";
  if ((info.feature == FeatureKind::hidden && attention) || (info.feature == FeatureKind::attention && !attention)) {
    fail(ValidationCode::incompatible, f.name("loss") + ": '" + m.loss + "' cannot be applied to " + m.feature +
                                           " features");
  }
  if (attention && m.proj) fail(ValidationCode::incompatible, f.name("proj") + ": attention matches take no projection");
  return m;
}

}  // namespace

std::string kd_loss_name(const DistillationConfig& cfg) {
  if (cfg.kd_loss_type == "ce") return "kd_ce";
  if (cfg.kd_loss_type == "mse") return "kd_mse";
  return cfg.kd_loss_type;
}

TrainingConfig training_config_from_json(const json& j) {
  Fields f(j, "training");
  f.only({"log_dir", "output_dir", "device", "ckpt_frequency", "ckpt_epoch_frequency", "max_grad_norm", "seed",
          "freeze_embeddings"});
  TrainingConfig c;
  f.string("log_dir", c.log_dir);
  f.string("output_dir", c.output_dir);
  f.string("device", c.device);
  f.count("ckpt_frequency", c.ckpt_frequency, 1);
  f.count("ckpt_epoch_frequency", c.ckpt_epoch_frequency, 1);
  if (f.has("max_grad_norm") && !f.at("max_grad_norm").is_null()) {
    double v = 0.0;
    f.real("max_grad_norm", v, 0.0, true);
    c.max_grad_norm = v;
  }
  f.integer("seed", c.seed);
  f.boolean("freeze_embeddings", c.freeze_embeddings);
  if (c.log_dir.empty()) fail(ValidationCode::out_of_range, "training.log_dir must be nonempty");
  if (c.output_dir.empty()) fail(ValidationCode::out_of_range, "training.output_dir must be nonempty");
  return c;
}

TrainingConfig parse_training_config(const std::string& text) {
  return training_config_from_json(parse_json(text, "training config"));
}

DistillationConfig distillation_config_from_json(const json& j) {
  Fields f(j, "distillation");
  f.only({"kd_loss_type", "temperature", "temperature_scheduler", "temperature_beta", "kd_loss_weight",
          "hard_label_weight", "kd_loss_weight_scheduler", "hard_label_weight_scheduler", "probability_shift",
          "intermediate_matches"});
  DistillationConfig c;
  f.string("kd_loss_type", c.kd_loss_type);
  f.real("temperature", c.temperature, 0.0, true);
  f.string("temperature_scheduler", c.temperature_scheduler);
  f.real("temperature_beta", c.temperature_beta, 0.0, false);
  f.real("kd_loss_weight", c.kd_loss_weight, 0.0, false);
  f.real("hard_label_weight", c.hard_label_weight, 0.0, false);
  f.string("kd_loss_weight_scheduler", c.kd_loss_weight_scheduler);
  f.string("hard_label_weight_scheduler", c.hard_label_weight_scheduler);
  f.boolean("probability_shift", c.probability_shift);
  if (f.has("intermediate_matches")) {
    const json& arr = f.at("intermediate_matches");
    if (!arr.is_array()) fail(ValidationCode::bad_type, "distillation.intermediate_matches must be an array");
    for (std::size_t i = 0; i < arr.size(); ++i) c.intermediate_matches.push_back(match_from_json(arr[i], i));
  }

  if (!(c.kd_loss_weight + c.hard_label_weight > 0.0)) {
    fail(ValidationCode::out_of_range, "distillation: kd_loss_weight + hard_label_weight must be > 0");
  }
  const auto& presets = Presets::global();
  const std::string kd = kd_loss_name(c);
  require_registered(presets.has_final_loss(kd), "distillation.kd_loss_type", c.kd_loss_type,
                     [&] {
                       auto names = presets.final_loss_names();
                       names.insert(names.begin(), {"ce", "mse"});
                       return names;
                     }());
  require_registered(presets.has_temperature_scheduler(c.temperature_scheduler), "distillation.temperature_scheduler",
                     c.temperature_scheduler, presets.temperature_scheduler_names());
  require_registered(presets.has_weight_scheduler(c.kd_loss_weight_scheduler), "distillation.kd_loss_weight_scheduler",
                     c.kd_loss_weight_scheduler, presets.weight_scheduler_names());
  require_registered(presets.has_weight_scheduler(c.hard_label_weight_scheduler),
                     "distillation.hard_label_weight_scheduler", c.hard_label_weight_scheduler,
                     presets.weight_scheduler_names());
  return c;
}

DistillationConfig parse_distillation_config(const std::string& text) {
  return distillation_config_from_json(parse_json(text, "distillation config"));
}

void validate_against_specs(const DistillationConfig& cfg, const ModelSpec& teacher, const ModelSpec& student) {
  std::vector<std::string> errors;
  ValidationCode first_code = ValidationCode::layer_range;
  auto report = [&](ValidationCode code, const std::string& msg) {
    if (errors.empty()) first_code = code;
    errors.push_back(msg);
  };
  const auto& presets = Presets::global();
  for (std::size_t i = 0; i < cfg.intermediate_matches.size(); ++i) {
    const auto& m = cfg.intermediate_matches[i];
    const std::string where = "intermediate_matches[" + std::to_string(i) + "]";
    const bool attention = m.feature == "attention";
    const std::size_t t_limit = attention ? teacher.num_attention_layers() : teacher.num_layers + 1;
    const std::size_t s_limit = attention ? student.num_attention_layers() : student.num_layers + 1;
    bool indices_ok = true;
    for (auto idx : m.layer_T) {
      if (idx >= t_limit) {
        indices_ok = false;
        report(ValidationCode::layer_range, where + ": layer_T " + std::to_string(idx) + " outside teacher " +
                                                m.feature + " range [0, " + std::to_string(t_limit) + ")");
      }
    }
    for (auto idx : m.layer_S) {
      if (idx >= s_limit) {
        indices_ok = false;
        report(ValidationCode::layer_range, where + ": layer_S " + std::to_string(idx) + " outside student " +
                                                m.feature + " range [0, " + std::to_string(s_limit) + ")");
      }
    }
    if (!indices_ok || attention || !presets.has_intermediate_loss(m.loss)) continue;

    const auto& info = presets.intermediate_loss(m.loss);
    for (std::size_t k = 0; k < m.layer_T.size() && k < m.layer_S.size(); ++k) {
      const std::size_t dt = teacher.hidden_width(m.layer_T[k]);
      const std::size_t ds = student.hidden_width(m.layer_S[k]);
      const bool student_side = m.proj_side == "student";
      if (m.proj) {
        const std::size_t want_in = student_side ? ds : dt;
        const std::size_t want_out = student_side ? dt : ds;
        if (m.proj->in_dim != want_in || m.proj->out_dim != want_out) {
          report(ValidationCode::dim_mismatch,
                 where + ": proj [linear, " + std::to_string(m.proj->in_dim) + ", " + std::to_string(m.proj->out_dim) +
                     "] does not map " + m.proj_side + " width " + std::to_string(want_in) + " to " +
                     std::to_string(want_out));
        }
      } else if (dt != ds && !info.width_agnostic) {
        report(ValidationCode::dim_mismatch,
               where + ": loss '" + m.loss + "' compares teacher width " + std::to_string(dt) + " with student width " +
                   std::to_string(ds) + "; set proj: [\"linear\", " + std::to_string(ds) + ", " + std::to_string(dt) +
                   "]");
      }
    }
  }
  if (!errors.empty()) {
    std::string msg;
    for (const auto& e : errors) msg += (msg.empty() ? "" : "\n") + e;
    throw ValidationError(first_code, msg);
  }
}

json to_json(const TrainingConfig& c) {
  json j;
  j["log_dir"] = c.log_dir;
  j["output_dir"] = c.output_dir;
  j["device"] = c.device;
  j["ckpt_frequency"] = c.ckpt_frequency;
  j["ckpt_epoch_frequency"] = c.ckpt_epoch_frequency;
  if (c.max_grad_norm) j["max_grad_norm"] = *c.max_grad_norm;
  j["seed"] = c.seed;
  j["freeze_embeddings"] = c.freeze_embeddings;
  return j;
}

json to_json(const DistillationConfig& c) {
  json j;
  j["kd_loss_type"] = c.kd_loss_type;
  j["temperature"] = c.temperature;
  j["temperature_scheduler"] = c.temperature_scheduler;
  j["temperature_beta"] = c.temperature_beta;
  j["kd_loss_weight"] = c.kd_loss_weight;
  j["hard_label_weight"] = c.hard_label_weight;
  j["kd_loss_weight_scheduler"] = c.kd_loss_weight_scheduler;
  j["hard_label_weight_scheduler"] = c.hard_label_weight_scheduler;
  j["probability_shift"] = c.probability_shift;
  json matches = json::array();
  for (const auto& m : c.intermediate_matches) {
    json mj;
    auto layers = [](const std::vector<std::size_t>& v) { return v.size() == 1 ? json(v[0]) : json(v); };
    mj["layer_T"] = layers(m.layer_T);
    mj["layer_S"] = layers(m.layer_S);
    mj["feature"] = m.feature;
    mj["loss"] = m.loss;
    mj["weight"] = m.weight;
    if (m.proj) mj["proj"] = json::array({m.proj->kind, m.proj->in_dim, m.proj->out_dim});
    mj["proj_side"] = m.proj_side;
    matches.push_back(mj);
  }
  j["intermediate_matches"] = matches;
  return j;
}

std::string serialize_config(const TrainingConfig& cfg) { return to_json(cfg).dump(2); }
std::string serialize_config(const DistillationConfig& cfg) { return to_json(cfg).dump(2); }

}  // namespace dk

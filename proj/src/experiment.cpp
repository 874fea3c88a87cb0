#include "distillkit/experiment.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "distillkit/adaptor.hpp"
#include "distillkit/distillers.hpp"
#include "distillkit/error.hpp"
#include "distillkit/metrics.hpp"
#include "distillkit/presets.hpp"
#include "distillkit/rng.hpp"
#include "distillkit/weights_io.hpp"

namespace dk {

using nlohmann::json;
namespace fs = std::filesystem;

Dataset TaskParams::generate(Split split, std::size_t n) const {
  switch (kind) {
    case TaskKind::classification:
      return generate_classification(seed, n, num_labels, vocab, length, noise_rate, split);
    case TaskKind::tagging: return generate_tagging(seed, n, num_labels, vocab, length, split);
    case TaskKind::span: return generate_span(seed, n, vocab, length, split);
  }
  throw ContractError("unknown task kind");
}

namespace {

[[noreturn]] void invalid(ValidationCode code, const std::string& message) { throw ValidationError(code, message); }

void check_keys(const json& j, const std::string& ctx, std::initializer_list<const char*> known) {
  if (!j.is_object()) invalid(ValidationCode::bad_type, ctx + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    std::string best;
    std::size_t best_d = 4;
    bool found = false;
    for (const char* k : known) {
      if (key == k) found = true;
      const auto d = edit_distance(key, k);
      if (d < best_d) {
        best_d = d;
        best = k;
      }
    }
    if (found) continue;
    std::string msg = ctx + ": unknown key '" + key + "'";
    if (!best.empty()) msg += "; did you mean '" + best + "'?";
    invalid(ValidationCode::unknown_key, msg);
  }
}

template <class T>
T get(const json& j, const std::string& ctx, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    invalid(ValidationCode::bad_type, ctx + "." + key + " has the wrong type");
  }
}

std::size_t get_count(const json& j, const std::string& ctx, const char* key, std::size_t fallback, std::size_t min) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_number_integer()) invalid(ValidationCode::bad_type, ctx + "." + key + " must be an integer");
  const auto v = j.at(key).get<std::int64_t>();
  if (v < static_cast<std::int64_t>(min)) {
    invalid(ValidationCode::out_of_range, ctx + "." + key + " must be >= " + std::to_string(min));
  }
  return static_cast<std::size_t>(v);
}

double get_positive(const json& j, const std::string& ctx, const char* key, double fallback) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_number()) invalid(ValidationCode::bad_type, ctx + "." + key + " must be a number");
  const double v = j.at(key).get<double>();
  if (!(v > 0.0)) invalid(ValidationCode::out_of_range, ctx + "." + key + " must be > 0");
  return v;
}

TaskKind task_kind(const std::string& s) {
  if (s == "classification") return TaskKind::classification;
  if (s == "tagging") return TaskKind::tagging;
  if (s == "span") return TaskKind::span;
  invalid(ValidationCode::out_of_range, "task.kind must be classification, tagging or span, got '" + s + "'");
}

TaskParams task_from_json(const json& j, const std::string& ctx) {
  check_keys(j, ctx, {"kind", "n_train", "n_dev", "num_labels", "vocab", "length", "noise_rate", "seed"});
  TaskParams t;
  t.kind = task_kind(get<std::string>(j, ctx, "kind", "classification"));
  t.n_train = get_count(j, ctx, "n_train", t.n_train, 1);
  t.n_dev = get_count(j, ctx, "n_dev", t.n_dev, 1);
  t.num_labels = get_count(j, ctx, "num_labels", t.num_labels, 2);
  t.vocab = get_count(j, ctx, "vocab", t.vocab, 1);
  t.length = get_count(j, ctx, "length", t.length, 1);
  t.noise_rate = get<double>(j, ctx, "noise_rate", t.noise_rate);
  t.seed = get_count(j, ctx, "seed", t.seed, 0);
  if (t.kind != TaskKind::classification && t.noise_rate != 0.0) {
    invalid(ValidationCode::incompatible, ctx + ".noise_rate applies to classification only");
  }
  try {
    t.generate(Split::train, 1);  // generator parameter checks
  } catch (const ConfigError& e) {
    invalid(ValidationCode::out_of_range, ctx + ": " + e.what());
  }
  return t;
}

json task_to_json(const TaskParams& t) {
  return {{"kind", to_string(t.kind)}, {"n_train", t.n_train}, {"n_dev", t.n_dev},
          {"num_labels", t.num_labels}, {"vocab", t.vocab},    {"length", t.length},
          {"noise_rate", t.noise_rate}, {"seed", t.seed}};
}

ModelSpec spec_field(const json& m, const char* key, const fs::path& base) {
  if (!m.contains(key)) invalid(ValidationCode::bad_type, std::string("manifest.") + key + " is required");
  const json& v = m.at(key);
  if (v.is_string()) return load_model_spec((base / v.get<std::string>()).string());
  if (v.is_object()) return spec_from_json(v);
  invalid(ValidationCode::bad_type, std::string("manifest.") + key + " must be a path or an object");
}

HeadKind head_for(TaskKind kind) {
  switch (kind) {
    case TaskKind::classification: return HeadKind::classification;
    case TaskKind::tagging: return HeadKind::tagging;
    case TaskKind::span: return HeadKind::span_extraction;
  }
  return HeadKind::classification;
}

void check_head(const ModelSpec& spec, std::size_t head, const TaskParams& task, const std::string& who) {
  if (head >= spec.heads.size()) {
    invalid(ValidationCode::incompatible, who + " spec '" + spec.name + "' lacks head " + std::to_string(head));
  }
  const auto& h = spec.heads[head];
  if (h.kind != head_for(task.kind)) {
    invalid(ValidationCode::incompatible, who + " head " + std::to_string(head) + " is " + to_string(h.kind) +
                                              " but the task is " + to_string(task.kind));
  }
  if (task.kind != TaskKind::span && h.num_labels != task.num_labels) {
    invalid(ValidationCode::dim_mismatch, who + " head " + std::to_string(head) + " has " +
                                              std::to_string(h.num_labels) + " labels, the task has " +
                                              std::to_string(task.num_labels));
  }
}

void check_fits(const ModelSpec& spec, const TaskParams& task, const std::string& who) {
  if (task.vocab > spec.vocab_size) {
    invalid(ValidationCode::dim_mismatch, who + " vocab_size " + std::to_string(spec.vocab_size) +
                                              " is smaller than the task vocab " + std::to_string(task.vocab));
  }
  if (task.length > spec.max_positions) {
    invalid(ValidationCode::dim_mismatch, who + " max_positions " + std::to_string(spec.max_positions) +
                                              " is smaller than the task length " + std::to_string(task.length));
  }
}

void check_relative(const std::string& path, const char* key) {
  const fs::path p(path);
  if (p.is_absolute()) invalid(ValidationCode::out_of_range, std::string("training.") + key + " must be relative");
  for (const auto& part : p) {
    if (part == "..") invalid(ValidationCode::out_of_range, std::string("training.") + key + " must stay inside --out");
  }
}

// Teacher spec for task k of a multi-task run: the shared encoder with that task's head.
ModelSpec task_teacher_spec(const ModelSpec& base, const TaskParams& task) {
  ModelSpec s = base;
  s.heads = {HeadSpec{head_for(task.kind), task.kind == TaskKind::span ? 0 : task.num_labels}};
  return s;
}

}  // namespace

Experiment parse_experiment(const json& m, const std::string& base_dir) {
  check_keys(m, "manifest",
             {"teacher_spec", "student_spec", "teacher_weights", "task", "tasks", "training", "distillation",
              "distiller", "schedule", "augmentation"});
  const fs::path base(base_dir);
  Experiment x;
  x.distiller = get<std::string>(m, "manifest", "distiller", x.distiller);
  const auto& names = distiller_names();
  if (std::find(names.begin(), names.end(), x.distiller) == names.end()) {
    invalid(ValidationCode::unregistered_name,
            "manifest.distiller: unknown distiller '" + x.distiller + "'; available: " + join_names(names));
  }
  const bool trainer_only = x.distiller == "basic_trainer";
  const bool multi_task = x.distiller == "multi_task";

  x.student_spec = spec_field(m, "student_spec", base);
  validate_spec(x.student_spec);
  if (!trainer_only || m.contains("teacher_spec")) {
    x.teacher_spec = spec_field(m, "teacher_spec", base);
    validate_spec(x.teacher_spec);
  }
  if (m.contains("teacher_weights")) {
    if (trainer_only) invalid(ValidationCode::incompatible, "manifest.teacher_weights: basic_trainer uses no teacher");
    const auto rel = get<std::string>(m, "manifest", "teacher_weights", "");
    x.teacher_weights = (base / rel).string();
    if (!fs::exists(*x.teacher_weights)) {
      invalid(ValidationCode::out_of_range, "manifest.teacher_weights: file '" + rel + "' does not exist");
    }
  }

  if (multi_task) {
    if (m.contains("task")) invalid(ValidationCode::incompatible, "multi_task takes 'tasks', not 'task'");
    if (!m.contains("tasks") || !m.at("tasks").is_array() || m.at("tasks").size() < 2) {
      invalid(ValidationCode::out_of_range, "manifest.tasks must list at least two tasks for multi_task");
    }
    for (std::size_t k = 0; k < m.at("tasks").size(); ++k) {
      x.tasks.push_back(task_from_json(m.at("tasks")[k], "tasks[" + std::to_string(k) + "]"));
    }
  } else {
    if (m.contains("tasks")) invalid(ValidationCode::incompatible, "'tasks' is only valid for multi_task");
    if (!m.contains("task")) invalid(ValidationCode::bad_type, "manifest.task is required");
    x.tasks.push_back(task_from_json(m.at("task"), "task"));
  }

  x.training = training_config_from_json(m.value("training", json::object()));
  check_relative(x.training.log_dir, "log_dir");
  check_relative(x.training.output_dir, "output_dir");
  if (x.training.device != "cpu") {
    invalid(ValidationCode::out_of_range, "training.device: only 'cpu' is available, got '" + x.training.device + "'");
  }
  x.distillation = distillation_config_from_json(m.value("distillation", json::object()));

  const json sched = m.value("schedule", json::object());
  check_keys(sched, "schedule",
             {"num_epochs", "batch_size", "learning_rate", "teacher_epochs", "teacher_learning_rate", "num_teachers"});
  auto& s = x.schedule;
  s.num_epochs = get_count(sched, "schedule", "num_epochs", s.num_epochs, 1);
  s.batch_size = get_count(sched, "schedule", "batch_size", s.batch_size, 1);
  s.learning_rate = get_positive(sched, "schedule", "learning_rate", s.learning_rate);
  s.teacher_epochs = get_count(sched, "schedule", "teacher_epochs", s.teacher_epochs, 1);
  s.teacher_learning_rate = get_positive(sched, "schedule", "teacher_learning_rate", s.teacher_learning_rate);
  s.num_teachers = get_count(sched, "schedule", "num_teachers", s.num_teachers, 1);
  if (s.num_teachers > 1 && x.distiller != "multi_teacher") {
    invalid(ValidationCode::incompatible, "schedule.num_teachers > 1 needs the multi_teacher distiller");
  }
  if (s.num_teachers > 1 && x.teacher_weights) {
    invalid(ValidationCode::incompatible, "teacher_weights supplies one teacher, num_teachers asks for more");
  }
  if (multi_task && x.teacher_weights) {
    invalid(ValidationCode::incompatible, "multi_task trains its own per-task teachers; drop teacher_weights");
  }

  if (m.contains("augmentation")) {
    const json& a = m.at("augmentation");
    check_keys(a, "augmentation", {"n", "mix_ratio", "seed"});
    if (multi_task || trainer_only) {
      invalid(ValidationCode::incompatible, "augmentation needs a teacher and a single task");
    }
    Augmentation aug;
    aug.n = get_count(a, "augmentation", "n", aug.n, 1);
    aug.mix_ratio = get<double>(a, "augmentation", "mix_ratio", aug.mix_ratio);
    if (!(aug.mix_ratio >= 0.0)) invalid(ValidationCode::out_of_range, "augmentation.mix_ratio must be >= 0");
    aug.seed = get_count(a, "augmentation", "seed", aug.seed, 0);
    x.augmentation = aug;
  }

  // Cross-checks between specs, tasks and the distillation config.
  for (std::size_t k = 0; k < x.tasks.size(); ++k) {
    const auto& t = x.tasks[k];
    check_fits(x.student_spec, t, "student");
    check_head(x.student_spec, multi_task ? k : 0, t, "student");
    if (!trainer_only) {
      check_fits(x.teacher_spec, t, "teacher");
      if (!multi_task) check_head(x.teacher_spec, 0, t, "teacher");
    }
  }
  if (multi_task && x.student_spec.heads.size() != x.tasks.size()) {
    invalid(ValidationCode::incompatible, "multi_task student needs one head per task");
  }
  if (x.teacher_weights) load_weights(x.teacher_spec, *x.teacher_weights);
  const auto& d = x.distillation;
  if (x.distiller == "general") {
    validate_against_specs(d, x.teacher_spec, x.student_spec);
  } else if (!d.intermediate_matches.empty()) {
    invalid(ValidationCode::incompatible,
            "distillation.intermediate_matches need the general distiller, not '" + x.distiller + "'");
  }
  return x;
}

Experiment load_experiment(const std::string& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw ConfigError("cannot open manifest " + manifest_path);
  std::stringstream ss;
  ss << in.rdbuf();
  json j;
  try {
    j = json::parse(ss.str());
  } catch (const json::parse_error& e) {
    throw ParseError("manifest: malformed JSON at byte " + std::to_string(e.byte));
  }
  return parse_experiment(j, fs::path(manifest_path).parent_path().string());
}

namespace {

json experiment_to_json(const Experiment& x) {
  json j;
  j["distiller"] = x.distiller;
  j["student_spec"] = spec_to_json(x.student_spec);
  if (x.distiller != "basic_trainer") j["teacher_spec"] = spec_to_json(x.teacher_spec);
  j["teacher_weights"] = x.teacher_weights ? json(fs::path(*x.teacher_weights).filename().string()) : json(nullptr);
  json tasks = json::array();
  for (const auto& t : x.tasks) tasks.push_back(task_to_json(t));
  j["tasks"] = tasks;
  j["training"] = to_json(x.training);
  j["distillation"] = to_json(x.distillation);
  const auto& s = x.schedule;
  j["schedule"] = {{"num_epochs", s.num_epochs},         {"batch_size", s.batch_size},
                   {"learning_rate", s.learning_rate},   {"teacher_epochs", s.teacher_epochs},
                   {"teacher_learning_rate", s.teacher_learning_rate}, {"num_teachers", s.num_teachers}};
  if (x.augmentation) {
    j["augmentation"] = {{"n", x.augmentation->n}, {"mix_ratio", x.augmentation->mix_ratio},
                         {"seed", x.augmentation->seed}};
  }
  return j;
}

std::uint64_t seed_of(const Experiment& x) { return static_cast<std::uint64_t>(x.training.seed); }

struct TrainedTeacher {
  Model model;
  Metrics dev;
};

TrainedTeacher train_teacher(const Experiment& x, const ModelSpec& spec, const TaskParams& task, std::size_t index,
                             const fs::path& out) {
  const auto seed = seed_of(x);
  Model teacher = build_model(spec, mix_seed(seed, 100 + index));
  TrainingConfig tc = x.training;
  tc.log_dir = (out / ("teacher" + std::to_string(index))).string();
  tc.output_dir = (out / ("teacher" + std::to_string(index)) / "checkpoints").string();
  tc.ckpt_frequency = 1;
  tc.ckpt_epoch_frequency = x.schedule.teacher_epochs;  // only the final weights
  BasicTrainer trainer(tc, teacher, default_adaptor(task.kind));
  DataLoader loader(task.train(), x.schedule.batch_size, true, mix_seed(seed, 200 + index));
  trainer.train({.learning_rate = x.schedule.teacher_learning_rate}, loader, x.schedule.teacher_epochs);
  return {teacher, evaluate(teacher, task.dev())};
}

}  // namespace

json run_experiment(const Experiment& x, const std::string& out_dir) {
  const fs::path out(out_dir);
  fs::create_directories(out);
  const auto seed = seed_of(x);
  TrainingConfig tc = x.training;
  tc.log_dir = (out / x.training.log_dir).lexically_normal().string();
  tc.output_dir = (out / x.training.output_dir).lexically_normal().string();
  // A rerun into the same directory starts a fresh log.
  fs::remove(fs::path(tc.log_dir) / "train.log");

  json report;
  report["config"] = experiment_to_json(x);
  report["seed"] = seed;

  // Teachers.
  std::vector<Model> teachers;
  json teacher_reports = json::array();
  if (x.distiller != "basic_trainer") {
    if (x.distiller == "multi_task") {
      for (std::size_t k = 0; k < x.tasks.size(); ++k) {
        auto t = train_teacher(x, task_teacher_spec(x.teacher_spec, x.tasks[k]), x.tasks[k], k, out);
        teacher_reports.push_back({{"task", k}, {"dev", to_json(t.dev)}});
        teachers.push_back(t.model);
      }
    } else if (x.teacher_weights) {
      Model t = load_weights(x.teacher_spec, *x.teacher_weights);
      teacher_reports.push_back({{"source", "weights"}, {"dev", to_json(evaluate(t, x.tasks[0].dev()))}});
      teachers.push_back(t);
    } else {
      for (std::size_t k = 0; k < x.schedule.num_teachers; ++k) {
        auto t = train_teacher(x, x.teacher_spec, x.tasks[0], k, out);
        teacher_reports.push_back({{"source", "trained"}, {"dev", to_json(t.dev)}});
        teachers.push_back(t.model);
      }
    }
  }
  report["teachers"] = teacher_reports;

  // Student data.
  Model student = build_model(x.student_spec, mix_seed(seed, 2));
  std::vector<Dataset> devs;
  std::unique_ptr<BatchSource> source;
  if (x.distiller == "multi_task") {
    std::vector<DataLoader> loaders;
    for (std::size_t k = 0; k < x.tasks.size(); ++k) {
      loaders.emplace_back(x.tasks[k].train(), x.schedule.batch_size, true, mix_seed(seed, 300 + k));
      devs.push_back(x.tasks[k].dev());
    }
    source = std::make_unique<MultiTaskLoader>(std::move(loaders), mix_seed(seed, 5));
  } else {
    const auto& task = x.tasks[0];
    Dataset train = task.train();
    if (x.augmentation) {
      // Auxiliary examples come from a different generator seed, unlabeled.
      TaskParams aux_params = task;
      aux_params.seed = mix_seed(task.seed, x.augmentation->seed);
      const Dataset aux = strip_labels(aux_params.generate(Split::train, x.augmentation->n));
      train = augment_dataset(train, aux, x.augmentation->mix_ratio, x.augmentation->seed);
    }
    report["train_size"] = train.size();
    source = std::make_unique<DataLoader>(std::move(train), x.schedule.batch_size, true, mix_seed(seed, 3));
    devs.push_back(task.dev());
  }

  // Distiller.
  std::unique_ptr<Distiller> distiller;
  const auto kind = x.tasks[0].kind;
  if (x.distiller == "basic_trainer") {
    distiller = std::make_unique<BasicTrainer>(tc, student, default_adaptor(kind));
  } else if (x.distiller == "basic") {
    distiller = std::make_unique<BasicDistiller>(tc, x.distillation, teachers[0], student, default_adaptor(kind),
                                                 default_adaptor(kind));
  } else if (x.distiller == "general") {
    distiller = std::make_unique<GeneralDistiller>(tc, x.distillation, teachers[0], student, default_adaptor(kind),
                                                   default_adaptor(kind));
  } else if (x.distiller == "multi_teacher") {
    distiller = std::make_unique<MultiTeacherDistiller>(tc, x.distillation, teachers, student,
                                                        std::vector<Adaptor>{default_adaptor(kind)},
                                                        default_adaptor(kind));
  } else {
    std::vector<TaskSpec> specs;
    for (std::size_t k = 0; k < x.tasks.size(); ++k) {
      specs.push_back({teachers[k], default_adaptor(x.tasks[k].kind), default_adaptor(x.tasks[k].kind), k});
    }
    distiller = std::make_unique<MultiTaskDistiller>(tc, x.distillation, std::move(specs), student);
  }

  json checkpoints = json::array();
  json last;
  auto callback = [&](const Model& s, std::size_t step) {
    json metrics = json::array();
    for (std::size_t k = 0; k < devs.size(); ++k) metrics.push_back(to_json(evaluate(s, devs[k], k)));
    last = devs.size() == 1 ? metrics[0] : metrics;
    checkpoints.push_back({{"step", step}, {"checkpoint", "gs" + std::to_string(step)}, {"dev", last}});
  };
  distiller->train({.learning_rate = x.schedule.learning_rate}, *source, x.schedule.num_epochs, callback);

  report["steps_per_epoch"] = source->steps_per_epoch();
  report["checkpoints"] = checkpoints;
  report["final"] = last;
  const auto counts = count_parameters(x.student_spec);
  report["student_parameters"] = counts.total;
  report["student_checksum"] = parameter_checksum(distiller->student());

  std::ofstream f(out / "report.json");
  if (!f) throw ContractError("cannot write " + (out / "report.json").string());
  f << report.dump(2) << '\n';
  return report;
}

void print_size_table(const std::vector<ModelSpec>& specs, std::ostream& out) {
  char line[256];
  std::snprintf(line, sizeof line, "%-16s %6s %6s %8s %14s %9s %9s\n", "model", "layers", "hidden", "ffn",
                "parameters", "millions", "relative");
  out << line;
  double first = 0.0;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto& s = specs[i];
    const auto total = static_cast<double>(count_parameters(s).total);
    if (i == 0) first = total;
    const std::size_t ffn = s.kind == ModelKind::bigru ? 0 : s.feed_forward_size;
    std::snprintf(line, sizeof line, "%-16s %6zu %6zu %8zu %14.0f %9.2f %8.1f%%\n", s.name.c_str(), s.num_layers,
                  s.hidden_size, ffn, total, total / 1e6, first > 0.0 ? 100.0 * total / first : 0.0);
    out << line;
  }
}

}  // namespace dk

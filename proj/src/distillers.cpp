#include "distillkit/distillers.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "distillkit/checkpoint.hpp"
#include "distillkit/error.hpp"
#include "distillkit/ops.hpp"
#include "distillkit/presets.hpp"
#include "distillkit/rng.hpp"

namespace dk {

double StepRecord::value(const std::string& name) const {
  for (const auto& t : terms) {
    if (t.name == name) return t.value;
  }
  throw ContractError("no loss term '" + name + "' at step " + std::to_string(step));
}

Distiller::Distiller(TrainingConfig training) : training_(std::move(training)) {}

void Distiller::freeze_if_asked(Model& student) const {
  if (!training_.freeze_embeddings) return;
  Tensor table = student.param("embeddings.token");
  table.set_requires_grad(false);
}

std::vector<double> Distiller::total_losses() const {
  std::vector<double> out;
  out.reserve(history_.size());
  for (const auto& r : history_) out.push_back(r.value("total"));
  return out;
}

void Distiller::train(const AdamConfig& adam, const BatchSource& data, std::size_t num_epochs,
                      const Callback& callback) {
  const std::size_t S = data.steps_per_epoch();
  checkpoints_ = compute_checkpoint_steps(S, num_epochs, training_.ckpt_frequency, training_.ckpt_epoch_frequency);
  const std::size_t total_steps = S * num_epochs;
  auto params = trainable_parameters();
  Adam optimizer(params, adam);

  std::filesystem::create_directories(training_.log_dir);
  const auto log_path = std::filesystem::path(training_.log_dir) / "train.log";
  std::ofstream log(log_path, std::ios::app);
  if (!log) throw ContractError("cannot open loss log " + log_path.string());

  history_.clear();
  std::size_t step = 0;
  auto next_ckpt = checkpoints_.begin();
  for (std::size_t e = 0; e < num_epochs; ++e) {
    const auto batches = data.epoch(e);
    if (batches.size() != S) throw ContractError("batch source returned a short epoch");
    for (const auto& tb : batches) {
      ++step;
      const double progress = static_cast<double>(step - 1) / static_cast<double>(total_steps);
      for (auto& p : params) p.zero_grad();
      StepLoss loss = compute_loss(tb, progress);
      backward(loss.total);
      double factor = 1.0;
      if (training_.max_grad_norm) factor = clip_factor(global_grad_norm(params), *training_.max_grad_norm);
      optimizer.step(factor, allow_missing_grads());

      char buf[64];
      for (const auto& t : loss.terms) {
        std::snprintf(buf, sizeof buf, "%.17g", t.value);
        log << step << '\t' << t.name << '\t' << buf << '\n';
      }
      history_.push_back({step, std::move(loss.terms)});

      if (next_ckpt != checkpoints_.end() && *next_ckpt == step) {
        log.flush();
        save_checkpoint(student(), training_.output_dir, step);
        if (callback) callback(student(), step);
        ++next_ckpt;
      }
    }
  }
  for (auto& p : params) p.zero_grad();
}

std::vector<Tensor> encoder_and_head(const Model& model, std::size_t head) {
  if (head >= model.spec().heads.size()) throw ConfigError("head " + std::to_string(head) + " does not exist");
  const std::string own = "head" + std::to_string(head) + ".";
  std::vector<Tensor> out;
  for (const auto& p : model.parameters()) {
    if (p.name.rfind("head", 0) == 0 && p.name.rfind(own, 0) != 0) continue;
    if (!p.value.requires_grad()) continue;
    out.push_back(p.value);
  }
  return out;
}

namespace {

ForwardOutput frozen_forward(const Model& model, const Batch& batch, std::size_t head) {
  NoGradGuard guard;
  return forward(model, batch.tokens(), head);
}

Tensor accumulate(const Tensor& acc, const Tensor& term) { return acc.defined() ? add(acc, term) : term; }

// Hard-label loss summed over logits entries.
Tensor hard_label_term(const AdaptorOutput& s) {
  if (s.labels.empty()) throw ContractError("hard-label loss needs labels from the adaptor");
  Tensor acc;
  for (std::size_t i = 0; i < s.logits.size(); ++i) {
    acc = accumulate(acc, hard_label_loss(s.logits[i], s.labels[i], s.logits_mask));
  }
  return acc;
}

// kd and hard-label terms with scheduled weights.
StepLoss output_loss(const DistillationConfig& cfg, const AdaptorOutput& t, const AdaptorOutput& s, double progress) {
  if (t.logits.size() != s.logits.size()) {
    throw ContractError("teacher gives " + std::to_string(t.logits.size()) + " logits tensors, student gives " +
                        std::to_string(s.logits.size()));
  }
  const auto& kd_fn = Presets::global().final_loss(kd_loss_name(cfg));
  Tensor kd;
  for (std::size_t i = 0; i < s.logits.size(); ++i) {
    SoftLabelInputs in;
    in.teacher_logits = t.logits[i];
    in.student_logits = s.logits[i];
    in.temperature = evaluate_temperature_scheduler(cfg.temperature_scheduler, cfg.temperature, t.logits[i],
                                                    s.logits[i], cfg.temperature_beta);
    in.logits_mask = s.logits_mask;
    in.probability_shift = cfg.probability_shift;
    if (cfg.probability_shift) {
      if (s.labels.empty()) throw ContractError("probability_shift needs labels from the adaptor");
      in.labels = s.labels[i];
    }
    kd = accumulate(kd, kd_fn(in));
  }
  const double w_kd = evaluate_weight_scheduler(cfg.kd_loss_weight_scheduler, cfg.kd_loss_weight, progress);
  StepLoss out;
  out.total = scale(kd, w_kd);
  out.terms = {{"kd", kd.item()}, {"kd_weight", w_kd}};
  if (cfg.hard_label_weight > 0.0) {
    const double w_hl =
        evaluate_weight_scheduler(cfg.hard_label_weight_scheduler, cfg.hard_label_weight, progress);
    Tensor hl = hard_label_term(s);
    out.total = add(out.total, scale(hl, w_hl));
    out.terms.push_back({"hard_label", hl.item()});
    out.terms.push_back({"hard_label_weight", w_hl});
  }
  return out;
}

void finish(StepLoss& loss) { loss.terms.insert(loss.terms.begin(), {"total", loss.total.item()}); }

}  // namespace

// BasicTrainer

BasicTrainer::BasicTrainer(TrainingConfig training, Model model, Adaptor adaptor, std::size_t head)
    : Distiller(std::move(training)), model_(std::move(model)), adaptor_(std::move(adaptor)), head_(head) {
  validate_spec(model_.spec());
  if (head_ >= model_.spec().heads.size()) throw ConfigError("head " + std::to_string(head_) + " does not exist");
  model_.set_trainable(true);
  freeze_if_asked(model_);
}

std::vector<Tensor> BasicTrainer::trainable_parameters() const { return encoder_and_head(model_, head_); }

StepLoss BasicTrainer::compute_loss(const TaskBatch& tb, double) {
  const auto out = forward(model_, tb.batch.tokens(), head_);
  const auto view = run_adaptor(adaptor_, tb.batch, out, {}, &model_.spec());
  StepLoss loss;
  if (!view.losses.empty()) {
    Tensor acc;
    for (const auto& l : view.losses) acc = accumulate(acc, l);
    loss.total = scale(acc, 1.0 / static_cast<double>(view.losses.size()));
  } else {
    if (view.labels.empty()) throw ContractError("BasicTrainer: adaptor returned neither 'losses' nor 'labels'");
    loss.total = hard_label_term(view);
  }
  finish(loss);
  return loss;
}

// BasicDistiller

BasicDistiller::BasicDistiller(TrainingConfig training, DistillationConfig distill, Model teacher, Model student,
                               Adaptor adaptor_T, Adaptor adaptor_S, std::size_t head)
    : Distiller(std::move(training)),
      distill_(std::move(distill)),
      teacher_(std::move(teacher)),
      student_(std::move(student)),
      adaptor_T_(std::move(adaptor_T)),
      adaptor_S_(std::move(adaptor_S)),
      head_(head) {
  validate_spec(student_.spec());
  if (teacher_.parameters().size() > 0) validate_spec(teacher_.spec());
  if (head_ >= student_.spec().heads.size()) throw ConfigError("head " + std::to_string(head_) + " does not exist");
  teacher_.set_trainable(false);
  student_.set_trainable(true);
  freeze_if_asked(student_);
}

std::vector<Tensor> BasicDistiller::trainable_parameters() const { return encoder_and_head(student_, head_); }

AdaptorRequirements BasicDistiller::teacher_requirements() const { return {.logits = true}; }

AdaptorRequirements BasicDistiller::student_requirements() const {
  return {.logits = true, .labels = distill_.hard_label_weight > 0.0 || distill_.probability_shift};
}

BasicDistiller::Views BasicDistiller::views(const Batch& batch) {
  const auto t_out = frozen_forward(teacher_, batch, head_);
  const auto s_out = forward(student_, batch.tokens(), head_);
  return {run_adaptor(adaptor_T_, batch, t_out, teacher_requirements(), &teacher_.spec()),
          run_adaptor(adaptor_S_, batch, s_out, student_requirements(), &student_.spec())};
}

StepLoss BasicDistiller::compute_loss(const TaskBatch& tb, double progress) {
  const auto v = views(tb.batch);
  StepLoss loss = output_loss(distill_, v.teacher, v.student, progress);
  finish(loss);
  return loss;
}

// GeneralDistiller

GeneralDistiller::GeneralDistiller(TrainingConfig training, DistillationConfig distill, Model teacher, Model student,
                                   Adaptor adaptor_T, Adaptor adaptor_S, std::size_t head)
    : BasicDistiller(std::move(training), std::move(distill), std::move(teacher), std::move(student),
                     std::move(adaptor_T), std::move(adaptor_S), head) {
  validate_against_specs(distill_, teacher_.spec(), student_.spec());
  const auto seed = static_cast<std::uint64_t>(training_.seed);
  for (std::size_t i = 0; i < distill_.intermediate_matches.size(); ++i) {
    const auto& m = distill_.intermediate_matches[i];
    if (!m.proj) {
      projections_.emplace_back();
      continue;
    }
    Tensor w = Tensor::create({m.proj->in_dim, m.proj->out_dim}, Normal{0.0, 0.02, mix_seed(seed, 0x9000 + i)});
    Tensor b = Tensor::create({m.proj->out_dim});
    w.set_requires_grad(true);
    b.set_requires_grad(true);
    projections_.emplace_back(w, b);
  }
}

std::vector<Tensor> GeneralDistiller::trainable_parameters() const {
  auto out = BasicDistiller::trainable_parameters();
  for (const auto& [w, b] : projections_) {
    if (!w.defined()) continue;
    out.push_back(w);
    out.push_back(b);
  }
  return out;
}

AdaptorRequirements GeneralDistiller::teacher_requirements() const {
  auto r = BasicDistiller::teacher_requirements();
  for (const auto& m : distill_.intermediate_matches) (m.feature == "attention" ? r.attention : r.hidden) = true;
  return r;
}

AdaptorRequirements GeneralDistiller::student_requirements() const {
  auto r = BasicDistiller::student_requirements();
  for (const auto& m : distill_.intermediate_matches) (m.feature == "attention" ? r.attention : r.hidden) = true;
  return r;
}

StepLoss GeneralDistiller::compute_loss(const TaskBatch& tb, double progress) {
  const auto v = views(tb.batch);
  StepLoss loss = output_loss(distill_, v.teacher, v.student, progress);
  const auto& presets = Presets::global();
  for (std::size_t i = 0; i < distill_.intermediate_matches.size(); ++i) {
    const auto& m = distill_.intermediate_matches[i];
    const bool attention = m.feature == "attention";
    const auto& t_feats = attention ? v.teacher.attention : v.teacher.hidden;
    const auto& s_feats = attention ? v.student.attention : v.student.hidden;
    const auto& info = presets.intermediate_loss(m.loss);
    std::vector<FeaturePair> pairs;
    for (std::size_t k = 0; k < m.layer_T.size(); ++k) {
      const std::size_t lt = m.layer_T[k], ls = m.layer_S[k];
      if (lt >= t_feats.size() || ls >= s_feats.size()) {
        throw ContractError("match " + std::to_string(i) + ": adaptor " + m.feature + " lacks layer " +
                            std::to_string(lt >= t_feats.size() ? lt : ls));
      }
      Tensor t = t_feats[lt], s = s_feats[ls];
      if (const auto& [w, b] = projections_[i]; w.defined()) {
        Tensor& side = m.proj_side == "teacher" ? t : s;
        side = add(matmul(side, w), b);
      }
      pairs.push_back({t, s, v.student.inputs_mask});
    }
    Tensor term = info.fn(pairs);
    loss.total = add(loss.total, scale(term, m.weight));
    loss.terms.push_back({"match" + std::to_string(i) + "." + m.loss, term.item()});
  }
  finish(loss);
  return loss;
}

// MultiTeacherDistiller

MultiTeacherDistiller::MultiTeacherDistiller(TrainingConfig training, DistillationConfig distill,
                                             std::vector<Model> teachers, Model student,
                                             std::vector<Adaptor> adaptors_T, Adaptor adaptor_S, std::size_t head)
    : BasicDistiller(std::move(training), std::move(distill), teachers.empty() ? Model{} : teachers.front(),
                     std::move(student), adaptors_T.empty() ? Adaptor{} : adaptors_T.front(), std::move(adaptor_S),
                     head),
      teachers_(std::move(teachers)),
      adaptors_T_(std::move(adaptors_T)) {
  if (teachers_.empty()) throw ConfigError("MultiTeacherDistiller needs at least one teacher");
  if (adaptors_T_.size() == 1) adaptors_T_.assign(teachers_.size(), adaptors_T_.front());
  if (adaptors_T_.size() != teachers_.size()) throw ConfigError("one teacher adaptor per teacher is required");
  if (!distill_.intermediate_matches.empty()) {
    throw ConfigError("MultiTeacherDistiller does not support intermediate matches");
  }
  for (auto& t : teachers_) {
    validate_spec(t.spec());
    t.set_trainable(false);
  }
}

BasicDistiller::Views MultiTeacherDistiller::views(const Batch& batch) {
  AdaptorOutput averaged;
  // Running mean m += (z_k - m) / k, so identical teachers reproduce z exactly.
  std::vector<std::vector<double>> mean;
  std::vector<Shape> shapes;
  for (std::size_t k = 0; k < teachers_.size(); ++k) {
    const auto out = frozen_forward(teachers_[k], batch, head_);
    auto view = run_adaptor(adaptors_T_[k], batch, out, teacher_requirements(), &teachers_[k].spec());
    if (k == 0) {
      averaged = view;
      for (const auto& z : view.logits) {
        mean.emplace_back(z.data().begin(), z.data().end());
        shapes.push_back(z.shape());
      }
      continue;
    }
    if (view.logits.size() != mean.size()) throw ContractError("teachers disagree on the number of logits tensors");
    for (std::size_t i = 0; i < mean.size(); ++i) {
      if (view.logits[i].shape() != shapes[i]) {
        throw ContractError("teacher " + std::to_string(k) + " logits " + shape_str(view.logits[i].shape()) +
                            " do not match teacher 0 logits " + shape_str(shapes[i]));
      }
      const auto z = view.logits[i].data();
      for (std::size_t c = 0; c < z.size(); ++c) mean[i][c] += (z[c] - mean[i][c]) / static_cast<double>(k + 1);
    }
  }
  for (std::size_t i = 0; i < mean.size(); ++i) averaged.logits[i] = Tensor::from_vector(shapes[i], mean[i]);
  const auto s_out = forward(student_, batch.tokens(), head_);
  return {averaged, run_adaptor(adaptor_S_, batch, s_out, student_requirements(), &student_.spec())};
}

// MultiTaskDistiller

MultiTaskDistiller::MultiTaskDistiller(TrainingConfig training, DistillationConfig distill, std::vector<TaskSpec> tasks,
                                       Model student)
    : Distiller(std::move(training)), distill_(std::move(distill)), tasks_(std::move(tasks)), student_(std::move(student)) {
  validate_spec(student_.spec());
  if (tasks_.size() < 2) throw ConfigError("MultiTaskDistiller needs at least two tasks");
  if (!distill_.intermediate_matches.empty()) {
    throw ConfigError("MultiTaskDistiller does not support intermediate matches");
  }
  std::vector<std::size_t> seen;
  for (std::size_t k = 0; k < tasks_.size(); ++k) {
    const auto h = tasks_[k].head_id;
    if (h >= student_.spec().heads.size()) {
      throw ConfigError("task " + std::to_string(k) + " uses head " + std::to_string(h) + ", student has " +
                        std::to_string(student_.spec().heads.size()));
    }
    if (std::find(seen.begin(), seen.end(), h) != seen.end()) {
      throw ConfigError("head_id " + std::to_string(h) + " is used by more than one task");
    }
    seen.push_back(h);
    validate_spec(tasks_[k].teacher.spec());
    tasks_[k].teacher.set_trainable(false);
  }
  student_.set_trainable(true);
  freeze_if_asked(student_);
}

StepLoss MultiTaskDistiller::compute_loss(const TaskBatch& tb, double progress) {
  if (tb.task >= tasks_.size()) throw ContractError("batch for unknown task " + std::to_string(tb.task));
  const auto& task = tasks_[tb.task];
  const bool labels = distill_.hard_label_weight > 0.0 || distill_.probability_shift;
  // Teachers are single-task models; their head 0 serves the task.
  const auto t_out = frozen_forward(task.teacher, tb.batch, 0);
  const auto s_out = forward(student_, tb.batch.tokens(), task.head_id);
  const auto t = run_adaptor(task.adaptor_T, tb.batch, t_out, {.logits = true}, &task.teacher.spec());
  const auto s = run_adaptor(task.adaptor_S, tb.batch, s_out, {.logits = true, .labels = labels}, &student_.spec());
  StepLoss loss = output_loss(distill_, t, s, progress);
  loss.terms.push_back({"task", static_cast<double>(tb.task)});
  finish(loss);
  return loss;
}

}  // namespace dk

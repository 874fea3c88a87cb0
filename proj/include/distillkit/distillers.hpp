#pragma once

#include <functional>
#include <string>
#include <vector>

#include "distillkit/adaptor.hpp"
#include "distillkit/config.hpp"
#include "distillkit/data.hpp"
#include "distillkit/model.hpp"
#include "distillkit/optimizer.hpp"

namespace dk {

/// Invoked at every checkpoint step, after the student has been saved.
using Callback = std::function<void(const Model& student, std::size_t global_step)>;

struct LossTerm {
  std::string name;
  double value = 0.0;
};

/// One optimization step: the differentiable total plus the logged terms.
struct StepLoss {
  Tensor total;
  std::vector<LossTerm> terms;
};

struct StepRecord {
  std::size_t step = 0;
  std::vector<LossTerm> terms;

  double value(const std::string& name) const;
};

/// Shared training loop. Every distiller is driven through train() with the
/// same arguments, so they can be swapped for one another.
///
/// Per step (global steps count from 1): gradients cleared, loss computed with
/// progress = (step - 1) / total_steps, backward, optional global-norm
/// clipping, Adam update, one log line per term appended to
/// log_dir/train.log as "step<TAB>name<TAB>value". At checkpoint steps the
/// student goes to output_dir/gs{step} and then the callback runs.
class Distiller {
 public:
  explicit Distiller(TrainingConfig training);
  virtual ~Distiller() = default;

  void train(const AdamConfig& adam, const BatchSource& data, std::size_t num_epochs, const Callback& callback = {});

  /// The loss train() would use for this batch, without any update.
  StepLoss batch_loss(const TaskBatch& batch, double progress) { return compute_loss(batch, progress); }

  virtual const Model& student() const = 0;
  /// Every tensor the optimizer updates (student parameters and projections).
  virtual std::vector<Tensor> trainable_parameters() const = 0;

  const std::vector<StepRecord>& history() const { return history_; }
  std::vector<double> total_losses() const;
  const std::vector<std::size_t>& checkpoint_steps() const { return checkpoints_; }
  const TrainingConfig& training_config() const { return training_; }

 protected:
  virtual StepLoss compute_loss(const TaskBatch& batch, double progress) = 0;
  /// Multi-task training leaves idle heads without gradients.
  virtual bool allow_missing_grads() const { return false; }

  TrainingConfig training_;

  // Applied after the student is made trainable.
  void freeze_if_asked(Model& student) const;

 private:
  std::vector<StepRecord> history_;
  std::vector<std::size_t> checkpoints_;
};

/// Supervised training of one model (teachers). The loss is the mean of the
/// adaptor's "losses" when present, otherwise the hard-label loss of every
/// logits entry against its labels, summed.
class BasicTrainer : public Distiller {
 public:
  BasicTrainer(TrainingConfig training, Model model, Adaptor adaptor, std::size_t head = 0);

  const Model& student() const override { return model_; }
  std::vector<Tensor> trainable_parameters() const override;

 protected:
  StepLoss compute_loss(const TaskBatch& batch, double progress) override;

 private:
  Model model_;
  Adaptor adaptor_;
  std::size_t head_;
};

/// Single teacher, single task. Per batch:
///   total = w_kd(progress) * kd(z_t, z_s, T) + w_hl(progress) * hard_label(z_s, y)
/// summed over logits entries (span models have two). The teacher runs without
/// gradient tracking and is never updated.
class BasicDistiller : public Distiller {
 public:
  BasicDistiller(TrainingConfig training, DistillationConfig distill, Model teacher, Model student,
                 Adaptor adaptor_T, Adaptor adaptor_S, std::size_t head = 0);

  const Model& student() const override { return student_; }
  std::vector<Tensor> trainable_parameters() const override;
  const DistillationConfig& distillation_config() const { return distill_; }

 protected:
  StepLoss compute_loss(const TaskBatch& batch, double progress) override;

  /// Teacher and student adaptor outputs for one batch.
  struct Views {
    AdaptorOutput teacher;
    AdaptorOutput student;
  };
  virtual Views views(const Batch& batch);
  virtual AdaptorRequirements teacher_requirements() const;
  virtual AdaptorRequirements student_requirements() const;

  DistillationConfig distill_;
  Model teacher_;
  Model student_;
  Adaptor adaptor_T_;
  Adaptor adaptor_S_;
  std::size_t head_;
};

/// BasicDistiller plus intermediate feature matches. A match with proj gets a
/// linear map (weight [in, out], bias [out]) applied to the student feature,
/// or to the teacher feature when proj_side is "teacher"; projections train
/// together with the student.
class GeneralDistiller : public BasicDistiller {
 public:
  GeneralDistiller(TrainingConfig training, DistillationConfig distill, Model teacher, Model student,
                   Adaptor adaptor_T, Adaptor adaptor_S, std::size_t head = 0);

  std::vector<Tensor> trainable_parameters() const override;
  /// Projection weight and bias of match i (undefined tensors when it has none).
  const std::vector<std::pair<Tensor, Tensor>>& projections() const { return projections_; }

 protected:
  StepLoss compute_loss(const TaskBatch& batch, double progress) override;
  AdaptorRequirements teacher_requirements() const override;
  AdaptorRequirements student_requirements() const override;

 private:
  std::vector<std::pair<Tensor, Tensor>> projections_;
};

/// Distills the mean of several teachers' logits into one student. Teachers
/// must agree on logits shapes. Intermediate matches are rejected.
class MultiTeacherDistiller : public BasicDistiller {
 public:
  MultiTeacherDistiller(TrainingConfig training, DistillationConfig distill, std::vector<Model> teachers,
                        Model student, std::vector<Adaptor> adaptors_T, Adaptor adaptor_S, std::size_t head = 0);

 protected:
  Views views(const Batch& batch) override;

 private:
  std::vector<Model> teachers_;
  std::vector<Adaptor> adaptors_T_;
};

struct TaskSpec {
  Model teacher;
  Adaptor adaptor_T;
  Adaptor adaptor_S;
  std::size_t head_id = 0;
};

/// One shared student with a head per task. Batch task k goes through
/// tasks[k]: its teacher, adaptors and student head. kd and optional
/// hard-label terms follow BasicDistiller.
class MultiTaskDistiller : public Distiller {
 public:
  MultiTaskDistiller(TrainingConfig training, DistillationConfig distill, std::vector<TaskSpec> tasks, Model student);

  const Model& student() const override { return student_; }
  std::vector<Tensor> trainable_parameters() const override { return student_.tensors(); }

 protected:
  StepLoss compute_loss(const TaskBatch& batch, double progress) override;
  bool allow_missing_grads() const override { return true; }

 private:
  DistillationConfig distill_;
  std::vector<TaskSpec> tasks_;
  Model student_;
};

/// Student parameters excluding the heads other than `head`.
std::vector<Tensor> encoder_and_head(const Model& model, std::size_t head);

}  // namespace dk

#pragma once

#include <span>
#include <vector>

#include "distillkit/tensor.hpp"

namespace dk {

// Logit tensors are [..., C]; every leading index is one "row" (a sample for
// sentence classification, a position for tagging). Row masks are tensors
// over the leading axes; an undefined mask means every row counts.

struct SoftLabelInputs {
  Tensor teacher_logits;
  Tensor student_logits;
  /// One temperature for all rows, or one per row. All must be > 0.
  std::vector<double> temperature{1.0};
  /// Gold class per row, -1 for unlabeled. Only read when probability_shift is set.
  std::vector<int> labels;
  Tensor logits_mask;
  bool probability_shift = false;
};

/// softmax(z / T) along the last axis. T is a single value or one per row.
Tensor softmax_with_temperature(const Tensor& logits, std::span<const double> temperature);

/// Cross-entropy of softmax(z_s / T) against the constant target
/// softmax(z_t / T), averaged over unmasked rows. There is deliberately no
/// T^2 factor: the balance against other terms is set by kd_loss_weight.
Tensor kd_ce_loss(const SoftLabelInputs& in);

/// Mean squared difference of z_t / T and z_s / T over unmasked entries.
Tensor kd_mse_loss(const SoftLabelInputs& in);

/// Mean cross-entropy with gold labels over unmasked rows. Label -1 marks a
/// row without a gold label; it is skipped. Any other out-of-range label
/// throws InputError.
Tensor hard_label_loss(const Tensor& logits, std::span<const int> labels, const Tensor& mask = {});

/// Row-wise swap of the arg-max entry (lowest index on ties) with the gold
/// entry. Rows whose label is -1 are left as they are.
std::vector<double> probability_shift(std::span<const double> probs, std::size_t num_classes,
                                      std::span<const int> gold);

/// Teacher and student features for one match. Hidden features are [B, L, d];
/// attention features are [B, H, L, L]. inputs_mask is [B, L] of 0/1.
struct FeaturePair {
  Tensor teacher;
  Tensor student;
  Tensor inputs_mask;
};

/// MSE over unmasked positions and all feature dims.
Tensor hidden_mse_loss(const FeaturePair& pair);

/// Mean over unmasked positions of 1 - cos(teacher, student). Norms carry an
/// epsilon so a zero vector has similarity 0.
Tensor cos_loss(const FeaturePair& pair);

enum class AttentionMode { mse, ce };

/// Compares head-averaged attention maps. mse averages squared differences
/// over unmasked (query, key) cells; ce is KL(teacher || student) per
/// unmasked query row, with both rows renormalized over unmasked keys,
/// averaged over those rows.
Tensor attention_loss(const Tensor& teacher_attention, const Tensor& student_attention, const Tensor& inputs_mask,
                      AttentionMode mode);

/// FSP matrices G = F_a^T F_b / L' (L' = unmasked length) per sample for each
/// model; returns the batch mean of ||G_t - G_s||_F^2 / (d_a * d_b).
Tensor fsp_loss(const FeaturePair& first, const FeaturePair& second);

/// Gram matrix of L2-normalized neuron activation patterns,
///   G = (1/d) * sum_j f_j f_j^T,  f_j = F[:, j] / sqrt(||F[:, j]||^2 + 1e-12),
/// over unmasked positions; returns the batch mean of ||G_t - G_s||_F^2 / L'^2.
/// This is the linear-kernel MMD^2 between neuron patterns, so teacher and
/// student widths may differ.
Tensor nst_loss(const FeaturePair& pair);

inline constexpr double kNstEps = 1e-12;
inline constexpr double kCosEps = 1e-12;

}  // namespace dk

#include "distillkit/losses.hpp"

#include <algorithm>
#include <cmath>

#include "distillkit/error.hpp"
#include "distillkit/ops.hpp"

namespace dk {

namespace {

struct RowLayout {
  Shape lead;
  std::size_t rows = 0;
  std::size_t classes = 0;
};

RowLayout row_layout(const Tensor& logits) {
  if (logits.rank() < 1) throw ShapeError("logits must have rank >= 1");
  RowLayout r;
  r.lead.assign(logits.shape().begin(), logits.shape().end() - 1);
  r.classes = logits.shape().back();
  r.rows = logits.numel() / r.classes;
  return r;
}

std::vector<double> row_mask(const Tensor& mask, const RowLayout& layout) {
  if (!mask.defined()) return std::vector<double>(layout.rows, 1.0);
  if (mask.shape() != layout.lead && !(layout.lead.empty() && mask.numel() == 1)) {
    throw ShapeError("logits mask shape " + shape_str(mask.shape()) + " does not match logits rows " +
                     shape_str(layout.lead));
  }
  return {mask.data().begin(), mask.data().end()};
}

std::vector<double> row_temperatures(std::span<const double> t, std::size_t rows) {
  if (t.size() != 1 && t.size() != rows) {
    throw ShapeError("temperature needs 1 or " + std::to_string(rows) + " values, got " + std::to_string(t.size()));
  }
  for (double v : t) {
    if (!(v > 0.0)) throw ConfigError("temperature must be > 0, got " + std::to_string(v));
  }
  if (t.size() == 1) return std::vector<double>(rows, t[0]);
  return {t.begin(), t.end()};
}

double total(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s;
}

// Zero-valued loss that stays connected to `anchor` so backward still works.
Tensor zero_loss(const Tensor& anchor) { return scale(sum(anchor), 0.0); }

// [B, L] mask values; an undefined mask means all ones.
std::vector<double> position_mask(const Tensor& mask, std::size_t B, std::size_t L) {
  if (!mask.defined()) return std::vector<double>(B * L, 1.0);
  if (mask.shape() != Shape{B, L}) {
    throw ShapeError("inputs_mask shape " + shape_str(mask.shape()) + " does not match features [" +
                     std::to_string(B) + "," + std::to_string(L) + "]");
  }
  return {mask.data().begin(), mask.data().end()};
}

// Position mask repeated over a trailing feature axis of width d.
Tensor expanded_mask(const std::vector<double>& m, std::size_t B, std::size_t L, std::size_t d, double factor = 1.0) {
  std::vector<double> out(B * L * d);
  for (std::size_t i = 0; i < B * L; ++i) std::fill_n(out.begin() + static_cast<std::ptrdiff_t>(i * d), d, m[i] * factor);
  return Tensor::from_vector({B, L, d}, std::move(out));
}

std::vector<double> unmasked_lengths(const std::vector<double>& m, std::size_t B, std::size_t L, const char* op) {
  std::vector<double> lengths(B, 0.0);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t t = 0; t < L; ++t) lengths[b] += m[b * L + t];
    if (lengths[b] <= 0.0) {
      throw InputError(std::string(op) + ": batch item " + std::to_string(b) + " has every position masked");
    }
  }
  return lengths;
}

void check_feature_pair(const FeaturePair& p, const char* op) {
  if (p.teacher.rank() != 3 || p.student.rank() != 3) {
    throw ShapeError(std::string(op) + ": features must be [B, L, d], got " + shape_str(p.teacher.shape()) + " and " +
                     shape_str(p.student.shape()));
  }
  if (p.teacher.size(0) != p.student.size(0) || p.teacher.size(1) != p.student.size(1)) {
    throw ShapeError(std::string(op) + ": batch/position extents differ: " + shape_str(p.teacher.shape()) + " vs " +
                     shape_str(p.student.shape()));
  }
}

void require_equal_dims(const FeaturePair& p, const char* op) {
  const std::size_t dt = p.teacher.size(2), ds = p.student.size(2);
  if (dt != ds) {
    throw ConfigError(std::string(op) + ": teacher width " + std::to_string(dt) + " != student width " +
                      std::to_string(ds) + "; set proj: [\"linear\", " + std::to_string(ds) + ", " +
                      std::to_string(dt) + "]");
  }
}

std::size_t argmax_lowest(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < row.size(); ++c) {
    if (row[c] > row[best]) best = c;
  }
  return best;
}

// Swaps entries so every labeled row's maximum sits at its gold index.
void shift_rows(std::vector<double>& values, std::size_t classes, std::span<const int> gold) {
  const std::size_t rows = values.size() / classes;
  if (gold.size() != rows) {
    throw ShapeError("probability shift needs " + std::to_string(rows) + " labels, got " + std::to_string(gold.size()));
  }
  for (std::size_t r = 0; r < rows; ++r) {
    if (gold[r] < 0) continue;
    if (static_cast<std::size_t>(gold[r]) >= classes) {
      throw InputError("gold label " + std::to_string(gold[r]) + " out of range for " + std::to_string(classes) +
                       " classes");
    }
    std::span<double> row(values.data() + r * classes, classes);
    const std::size_t top = argmax_lowest(row);
    std::swap(row[top], row[static_cast<std::size_t>(gold[r])]);
  }
}

struct SoftLabelPrep {
  RowLayout layout;
  std::vector<double> temps;
  std::vector<double> mask;
  std::vector<double> teacher;  // possibly shifted teacher logits
  Tensor inv_t;                 // 1/T per entry, same shape as logits
};

SoftLabelPrep prepare(const SoftLabelInputs& in, const char* op) {
  if (!in.teacher_logits.defined() || !in.student_logits.defined()) {
    throw ContractError(std::string(op) + ": teacher and student logits are required");
  }
  if (in.teacher_logits.shape() != in.student_logits.shape()) {
    throw ShapeError(std::string(op) + ": teacher logits " + shape_str(in.teacher_logits.shape()) +
                     " vs student logits " + shape_str(in.student_logits.shape()));
  }
  SoftLabelPrep p;
  p.layout = row_layout(in.student_logits);
  p.temps = row_temperatures(in.temperature, p.layout.rows);
  p.mask = row_mask(in.logits_mask, p.layout);
  p.teacher.assign(in.teacher_logits.data().begin(), in.teacher_logits.data().end());
  if (in.probability_shift) shift_rows(p.teacher, p.layout.classes, in.labels);
  std::vector<double> inv(in.student_logits.numel());
  for (std::size_t r = 0; r < p.layout.rows; ++r) {
    std::fill_n(inv.begin() + static_cast<std::ptrdiff_t>(r * p.layout.classes), p.layout.classes, 1.0 / p.temps[r]);
  }
  p.inv_t = Tensor::from_vector(in.student_logits.shape(), std::move(inv));
  return p;
}

}  // namespace

Tensor softmax_with_temperature(const Tensor& logits, std::span<const double> temperature) {
  const auto layout = row_layout(logits);
  const auto temps = row_temperatures(temperature, layout.rows);
  std::vector<double> inv(logits.numel());
  for (std::size_t r = 0; r < layout.rows; ++r) {
    std::fill_n(inv.begin() + static_cast<std::ptrdiff_t>(r * layout.classes), layout.classes, 1.0 / temps[r]);
  }
  return softmax(mul(logits, Tensor::from_vector(logits.shape(), std::move(inv))), -1);
}

Tensor kd_ce_loss(const SoftLabelInputs& in) {
  const auto p = prepare(in, "kd_ce_loss");
  const std::size_t C = p.layout.classes;
  const double count = total(p.mask);
  if (count <= 0.0) return zero_loss(in.student_logits);

  std::vector<double> weights(in.student_logits.numel());
  for (std::size_t r = 0; r < p.layout.rows; ++r) {
    const double* z = p.teacher.data() + r * C;
    double mx = z[0];
    for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, z[c]);
    double norm = 0.0;
    for (std::size_t c = 0; c < C; ++c) norm += std::exp((z[c] - mx) / p.temps[r]);
    for (std::size_t c = 0; c < C; ++c) {
      weights[r * C + c] = std::exp((z[c] - mx) / p.temps[r]) / norm * p.mask[r] / count;
    }
  }
  Tensor log_probs = log_softmax(mul(in.student_logits, p.inv_t), -1);
  return neg(sum(mul(log_probs, Tensor::from_vector(in.student_logits.shape(), std::move(weights)))));
}

Tensor kd_mse_loss(const SoftLabelInputs& in) {
  const auto p = prepare(in, "kd_mse_loss");
  const std::size_t C = p.layout.classes;
  const double count = total(p.mask);
  if (count <= 0.0) return zero_loss(in.student_logits);

  std::vector<double> target(p.teacher.size());
  std::vector<double> weights(p.teacher.size());
  for (std::size_t r = 0; r < p.layout.rows; ++r) {
    for (std::size_t c = 0; c < C; ++c) {
      target[r * C + c] = p.teacher[r * C + c] / p.temps[r];
      weights[r * C + c] = p.mask[r] / (count * static_cast<double>(C));
    }
  }
  const Shape& shape = in.student_logits.shape();
  Tensor diff = sub(mul(in.student_logits, p.inv_t), Tensor::from_vector(shape, std::move(target)));
  return sum(mul(mul(diff, diff), Tensor::from_vector(shape, std::move(weights))));
}

Tensor hard_label_loss(const Tensor& logits, std::span<const int> labels, const Tensor& mask) {
  const auto layout = row_layout(logits);
  if (labels.size() != layout.rows) {
    throw ShapeError("hard_label_loss: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(layout.rows) + " logit rows");
  }
  const auto m = row_mask(mask, layout);
  double count = 0.0;
  for (std::size_t r = 0; r < layout.rows; ++r) {
    if (m[r] == 0.0 || labels[r] == -1) continue;
    if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= layout.classes) {
      throw InputError("hard_label_loss: label " + std::to_string(labels[r]) + " at row " + std::to_string(r) +
                       " outside [0, " + std::to_string(layout.classes) + ")");
    }
    count += m[r];
  }
  if (count <= 0.0) return zero_loss(logits);
  std::vector<double> weights(logits.numel(), 0.0);
  for (std::size_t r = 0; r < layout.rows; ++r) {
    if (m[r] == 0.0 || labels[r] == -1) continue;
    weights[r * layout.classes + static_cast<std::size_t>(labels[r])] = m[r] / count;
  }
  return neg(sum(mul(log_softmax(logits, -1), Tensor::from_vector(logits.shape(), std::move(weights)))));
}

std::vector<double> probability_shift(std::span<const double> probs, std::size_t num_classes,
                                      std::span<const int> gold) {
  if (num_classes == 0 || probs.size() % num_classes != 0) {
    throw ShapeError("probability_shift: " + std::to_string(probs.size()) + " values do not form rows of " +
                     std::to_string(num_classes));
  }
  std::vector<double> out(probs.begin(), probs.end());
  shift_rows(out, num_classes, gold);
  return out;
}

Tensor hidden_mse_loss(const FeaturePair& pair) {
  check_feature_pair(pair, "hidden_mse");
  require_equal_dims(pair, "hidden_mse");
  const std::size_t B = pair.student.size(0), L = pair.student.size(1), d = pair.student.size(2);
  const auto m = position_mask(pair.inputs_mask, B, L);
  const double count = total(m);
  if (count <= 0.0) return zero_loss(pair.student);
  Tensor diff = sub(pair.student, pair.teacher);
  return sum(mul(mul(diff, diff), expanded_mask(m, B, L, d, 1.0 / (count * static_cast<double>(d)))));
}

Tensor cos_loss(const FeaturePair& pair) {
  check_feature_pair(pair, "cos");
  require_equal_dims(pair, "cos");
  const std::size_t B = pair.student.size(0), L = pair.student.size(1);
  const auto m = position_mask(pair.inputs_mask, B, L);
  const double count = total(m);
  if (count <= 0.0) return zero_loss(pair.student);
  Tensor dot = sum(mul(pair.student, pair.teacher), -1);
  Tensor ns = sum(mul(pair.student, pair.student), -1);
  Tensor nt = sum(mul(pair.teacher, pair.teacher), -1);
  Tensor cosine = div(dot, sqrt(add_scalar(mul(ns, nt), kCosEps * kCosEps)));
  std::vector<double> w(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) w[i] = m[i] / count;
  return add_scalar(neg(sum(mul(cosine, Tensor::from_vector({B, L}, std::move(w))))), 1.0);
}

Tensor attention_loss(const Tensor& teacher_attention, const Tensor& student_attention, const Tensor& inputs_mask,
                      AttentionMode mode) {
  if (teacher_attention.rank() != 4 || student_attention.rank() != 4) {
    throw ShapeError("attention_loss: attention must be [B, H, L, L], got " + shape_str(teacher_attention.shape()) +
                     " and " + shape_str(student_attention.shape()));
  }
  const std::size_t B = student_attention.size(0), L = student_attention.size(2);
  if (teacher_attention.size(0) != B || teacher_attention.size(2) != L || teacher_attention.size(3) != L ||
      student_attention.size(3) != L) {
    throw ShapeError("attention_loss: position lengths differ: " + shape_str(teacher_attention.shape()) + " vs " +
                     shape_str(student_attention.shape()));
  }
  const auto m = position_mask(inputs_mask, B, L);
  Tensor at = mean(teacher_attention, 1);
  Tensor as = mean(student_attention, 1);

  if (mode == AttentionMode::mse) {
    double cells = 0.0;
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t q = 0; q < L; ++q)
        for (std::size_t k = 0; k < L; ++k) cells += m[b * L + q] * m[b * L + k];
    if (cells <= 0.0) return zero_loss(student_attention);
    std::vector<double> w(B * L * L);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t q = 0; q < L; ++q)
        for (std::size_t k = 0; k < L; ++k) w[(b * L + q) * L + k] = m[b * L + q] * m[b * L + k] / cells;
    Tensor diff = sub(as, at);
    return sum(mul(mul(diff, diff), Tensor::from_vector({B, L, L}, std::move(w))));
  }

  const double queries = total(m);
  if (queries <= 0.0) return zero_loss(student_attention);
  // Both maps are renormalized over unmasked keys, so each query row is a
  // proper distribution even when some mass sat on padding.
  std::vector<double> cell(B * L * L);
  std::vector<double> offset(B * L * L);
  std::vector<double> pad_rows(B * L);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t q = 0; q < L; ++q) {
      pad_rows[b * L + q] = 1.0 - m[b * L + q];
      for (std::size_t k = 0; k < L; ++k) {
        const std::size_t i = (b * L + q) * L + k;
        cell[i] = m[b * L + q] * m[b * L + k];
        offset[i] = 1.0 - cell[i];
      }
    }
  }
  const auto pt = at.data();
  std::vector<double> w(B * L * L, 0.0);
  double entropy_term = 0.0;
  for (std::size_t r = 0; r < B * L; ++r) {
    double z = 0.0;
    for (std::size_t k = 0; k < L; ++k) z += pt[r * L + k] * cell[r * L + k];
    if (z <= 0.0) continue;
    for (std::size_t k = 0; k < L; ++k) {
      const std::size_t i = r * L + k;
      const double p = pt[i] * cell[i] / z;
      w[i] = p / queries;
      if (p > 0.0) entropy_term += w[i] * std::log(p);
    }
  }
  Tensor cells = Tensor::from_vector({B, L, L}, std::move(cell));
  Tensor kept = mul(as, cells);
  Tensor norm = add(sum(kept, -1, true), Tensor::from_vector({B, L, 1}, std::move(pad_rows)));
  Tensor ps = div(kept, expand(norm, {B, L, L}));
  Tensor log_ps = log(add(ps, Tensor::from_vector({B, L, L}, std::move(offset))));
  return add_scalar(neg(sum(mul(log_ps, Tensor::from_vector({B, L, L}, std::move(w))))), entropy_term);
}

namespace {

// Per-sample F_a^T F_b / L' over unmasked positions: [B, d_a, d_b].
Tensor fsp_matrix(const Tensor& fa, const Tensor& fb, const std::vector<double>& m,
                  const std::vector<double>& lengths) {
  const std::size_t B = fa.size(0), L = fa.size(1), da = fa.size(2), db = fb.size(2);
  Tensor gram = matmul(transpose(mul(fa, expanded_mask(m, B, L, da))), mul(fb, expanded_mask(m, B, L, db)));
  std::vector<double> inv(B * da * db);
  for (std::size_t b = 0; b < B; ++b) {
    std::fill_n(inv.begin() + static_cast<std::ptrdiff_t>(b * da * db), da * db, 1.0 / lengths[b]);
  }
  return mul(gram, Tensor::from_vector({B, da, db}, std::move(inv)));
}

// Normalized neuron-pattern Gram matrix: [B, L, L].
Tensor nst_gram(const Tensor& f, const std::vector<double>& m) {
  const std::size_t B = f.size(0), L = f.size(1), d = f.size(2);
  Tensor fm = mul(f, expanded_mask(m, B, L, d));
  Tensor norms = sqrt(add_scalar(sum(mul(fm, fm), 1, true), kNstEps));
  Tensor unit = div(fm, expand(norms, {B, L, d}));
  return scale(matmul(unit, transpose(unit)), 1.0 / static_cast<double>(d));
}

}  // namespace

Tensor fsp_loss(const FeaturePair& first, const FeaturePair& second) {
  check_feature_pair(first, "fsp");
  check_feature_pair(second, "fsp");
  const std::size_t B = first.student.size(0), L = first.student.size(1);
  if (second.student.size(0) != B || second.student.size(1) != L) {
    throw ShapeError("fsp: both layers must share batch and position extents");
  }
  const std::size_t da = first.teacher.size(2), db = second.teacher.size(2);
  if (first.student.size(2) != da || second.student.size(2) != db) {
    throw ConfigError("fsp: teacher widths (" + std::to_string(da) + ", " + std::to_string(db) +
                      ") differ from student widths (" + std::to_string(first.student.size(2)) + ", " +
                      std::to_string(second.student.size(2)) + ") after projection; set proj");
  }
  const Tensor& mask = first.inputs_mask.defined() ? first.inputs_mask : second.inputs_mask;
  const auto m = position_mask(mask, B, L);
  const auto lengths = unmasked_lengths(m, B, L, "fsp");
  Tensor gt = fsp_matrix(first.teacher, second.teacher, m, lengths);
  Tensor gs = fsp_matrix(first.student, second.student, m, lengths);
  Tensor diff = sub(gs, gt);
  return scale(sum(mul(diff, diff)), 1.0 / static_cast<double>(B * da * db));
}

Tensor nst_loss(const FeaturePair& pair) {
  check_feature_pair(pair, "nst");
  const std::size_t B = pair.student.size(0), L = pair.student.size(1);
  const auto m = position_mask(pair.inputs_mask, B, L);
  const auto lengths = unmasked_lengths(m, B, L, "nst");
  Tensor diff = sub(nst_gram(pair.student, m), nst_gram(pair.teacher, m));
  std::vector<double> w(B * L * L);
  for (std::size_t b = 0; b < B; ++b) {
    std::fill_n(w.begin() + static_cast<std::ptrdiff_t>(b * L * L), L * L,
                1.0 / (static_cast<double>(B) * lengths[b] * lengths[b]));
  }
  return sum(mul(mul(diff, diff), Tensor::from_vector({B, L, L}, std::move(w))));
}

}  // namespace dk

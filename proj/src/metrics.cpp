#include "distillkit/metrics.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

#include "distillkit/error.hpp"
#include "distillkit/ops.hpp"

namespace dk {

double accuracy(std::span<const int> predicted, std::span<const int> gold) {
  if (predicted.size() != gold.size()) throw ContractError("accuracy: prediction and gold sizes differ");
  std::size_t total = 0, correct = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (gold[i] < 0) continue;
    ++total;
    correct += predicted[i] == gold[i];
  }
  return total == 0 ? 0.0 : 100.0 * static_cast<double>(correct) / static_cast<double>(total);
}

double tagging_f1(std::span<const int> predicted, std::span<const int> gold) {
  if (predicted.size() != gold.size()) throw ContractError("tagging_f1: prediction and gold sizes differ");
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const int g = gold[i], p = predicted[i];
    if (g < 0) continue;
    if (p == g) {
      tp += g != 0;
      continue;
    }
    fp += p != 0;
    fn += g != 0;
  }
  if (tp + fp + fn == 0) return 100.0;
  return 100.0 * 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
}

double span_overlap_f1(std::pair<int, int> predicted, std::pair<int, int> gold) {
  const int overlap = std::min(predicted.second, gold.second) - std::max(predicted.first, gold.first) + 1;
  if (overlap <= 0) return 0.0;
  const double precision = overlap / static_cast<double>(predicted.second - predicted.first + 1);
  const double recall = overlap / static_cast<double>(gold.second - gold.first + 1);
  return 2.0 * precision * recall / (precision + recall);
}

SpanScores span_scores(std::span<const std::pair<int, int>> predicted, std::span<const std::pair<int, int>> gold) {
  if (predicted.size() != gold.size()) throw ContractError("span_scores: prediction and gold sizes differ");
  SpanScores s;
  if (gold.empty()) return s;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    s.exact_match += predicted[i] == gold[i] ? 1.0 : 0.0;
    s.f1 += span_overlap_f1(predicted[i], gold[i]);
  }
  s.exact_match *= 100.0 / static_cast<double>(gold.size());
  s.f1 *= 100.0 / static_cast<double>(gold.size());
  return s;
}

std::pair<int, int> best_span(std::span<const double> start, std::span<const double> end,
                              std::span<const double> mask) {
  std::pair<int, int> best{0, 0};
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t s = 0; s < start.size(); ++s) {
    if (mask[s] == 0.0) continue;
    for (std::size_t e = s; e < end.size(); ++e) {
      if (mask[e] == 0.0) continue;
      const double score = start[s] + end[e];
      if (score > best_score) {
        best_score = score;
        best = {static_cast<int>(s), static_cast<int>(e)};
      }
    }
  }
  return best;
}

double Metrics::primary() const { return kind == TaskKind::classification ? accuracy : f1; }

namespace {

std::vector<int> argmax_rows(const Tensor& logits) {
  const std::size_t C = logits.shape().back();
  const auto v = logits.data();
  std::vector<int> out(logits.numel() / C);
  for (std::size_t r = 0; r < out.size(); ++r) {
    const auto row = v.subspan(r * C, C);
    out[r] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

HeadKind head_for(TaskKind kind) {
  switch (kind) {
    case TaskKind::classification: return HeadKind::classification;
    case TaskKind::tagging: return HeadKind::tagging;
    case TaskKind::span: return HeadKind::span_extraction;
  }
  return HeadKind::classification;
}

}  // namespace

Metrics evaluate(const Model& model, const Dataset& data, std::size_t head, std::size_t batch_size) {
  if (head >= model.spec().heads.size()) throw ContractError("evaluate: head " + std::to_string(head) + " missing");
  if (model.spec().heads[head].kind != head_for(data.kind)) {
    throw ContractError(std::string("evaluate: head kind ") + to_string(model.spec().heads[head].kind) +
                        " does not fit task " + to_string(data.kind));
  }
  if (batch_size == 0) throw ContractError("evaluate: batch_size must be >= 1");
  NoGradGuard no_grad;
  std::vector<int> predicted, gold;
  std::vector<std::pair<int, int>> pred_spans, gold_spans;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    std::vector<std::size_t> idx(std::min(batch_size, data.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    const Batch b = make_batch(data, idx);
    const auto out = forward(model, b.tokens(), head);
    if (data.kind == TaskKind::span) {
      const std::size_t L = b.seq_len;
      for (std::size_t i = 0; i < b.batch; ++i) {
        pred_spans.push_back(best_span(out.logits[0].data().subspan(i * L, L), out.logits[1].data().subspan(i * L, L),
                                       std::span(b.mask).subspan(i * L, L)));
        gold_spans.emplace_back(b.span_start[i], b.span_end[i]);
      }
    } else {
      const auto p = argmax_rows(out.logits[0]);
      predicted.insert(predicted.end(), p.begin(), p.end());
      gold.insert(gold.end(), b.labels.begin(), b.labels.end());
    }
  }
  Metrics m;
  m.kind = data.kind;
  switch (data.kind) {
    case TaskKind::classification: m.accuracy = accuracy(predicted, gold); break;
    case TaskKind::tagging: m.f1 = tagging_f1(predicted, gold); break;
    case TaskKind::span: {
      const auto s = span_scores(pred_spans, gold_spans);
      m.exact_match = s.exact_match;
      m.f1 = s.f1;
      break;
    }
  }
  return m;
}

nlohmann::json to_json(const Metrics& m) {
  nlohmann::json j;
  j["task"] = to_string(m.kind);
  switch (m.kind) {
    case TaskKind::classification: j["accuracy"] = m.accuracy; break;
    case TaskKind::tagging: j["f1"] = m.f1; break;
    case TaskKind::span:
      j["exact_match"] = m.exact_match;
      j["f1"] = m.f1;
      break;
  }
  return j;
}

}  // namespace dk

#pragma once

#include <span>
#include <utility>
#include <vector>

#include "distillkit/data.hpp"
#include "distillkit/model.hpp"

namespace dk {

// All metrics are percentages in [0, 100].

double accuracy(std::span<const int> predicted, std::span<const int> gold);

/// Tag-level micro-F1 over non-background tags (tag 0 is background).
/// Positions with gold -1 are skipped. With no entity tags in either gold or
/// prediction the score is 100.
double tagging_f1(std::span<const int> predicted, std::span<const int> gold);

struct SpanScores {
  double exact_match = 0.0;
  double f1 = 0.0;
};

/// Token-overlap F1 of one inclusive predicted span against one gold span, in [0, 1].
double span_overlap_f1(std::pair<int, int> predicted, std::pair<int, int> gold);
SpanScores span_scores(std::span<const std::pair<int, int>> predicted, std::span<const std::pair<int, int>> gold);

/// argmax over start + end scores with start <= end, both on unmasked positions.
std::pair<int, int> best_span(std::span<const double> start, std::span<const double> end, std::span<const double> mask);

struct Metrics {
  TaskKind kind = TaskKind::classification;
  double accuracy = 0.0;     // classification
  double f1 = 0.0;           // tagging and span
  double exact_match = 0.0;  // span

  /// The headline number: accuracy, tagging F1 or span F1.
  double primary() const;
};

/// Scores the model on a labeled dataset through the given head. The head kind
/// must match the task kind, otherwise ContractError.
Metrics evaluate(const Model& model, const Dataset& data, std::size_t head = 0, std::size_t batch_size = 64);

nlohmann::json to_json(const Metrics& m);

}  // namespace dk

#pragma once

#include <cstdint>
#include <memory>
#include <ostream>
#include <span>
#include <utility>
#include <vector>

#include "distillkit/model.hpp"

namespace dk {

enum class TaskKind { classification, tagging, span };
enum class Split { train, dev };

const char* to_string(TaskKind kind);

struct Example {
  std::uint64_t id = 0;
  std::vector<int> tokens;  // padded to the dataset length with token 0
  std::vector<int> mask;    // 1 for real tokens
  int label = -1;           // classification; -1 when unlabeled
  int clean_label = -1;     // label before noise flips
  std::vector<int> tags;    // tagging; 0 is background, padding carries 0
  int span_start = -1;      // inclusive span bounds
  int span_end = -1;
  bool labeled = true;
};

struct Dataset {
  TaskKind kind = TaskKind::classification;
  std::size_t vocab_size = 0;
  std::size_t seq_len = 0;
  std::size_t num_labels = 0;  // classes or tags; 0 for span
  std::uint64_t seed = 0;
  std::vector<Example> examples;

  std::size_t size() const { return examples.size(); }
};

// Generators are pure functions of their arguments. Train and dev splits draw
// example ids from disjoint ranges, so the two never share an example stream.
//
// Classification vocabulary: 0 pad, 1 [CLS], two indicator tokens per class
// starting at 2, neutral filler after that. The planted label is the class
// whose indicators occur most often (the true class always wins strictly);
// with probability noise_rate the stored label is flipped to another class.
Dataset generate_classification(std::uint64_t seed, std::size_t n, std::size_t num_classes, std::size_t vocab,
                                std::size_t length, double noise_rate, Split split = Split::train);

// Tagging: tag 0 is background (marginal 0.5), the rest share the remainder
// uniformly. Each entity tag has two direct tokens and one ambiguous token
// whose tag depends on the parity of the preceding token id.
Dataset generate_tagging(std::uint64_t seed, std::size_t n, std::size_t num_tags, std::size_t vocab,
                         std::size_t length, Split split = Split::train);

// Span: 0 pad, 1 [CLS], 2 open, 3 close delimiter; the answer is the 1..4
// tokens strictly between the delimiters.
Dataset generate_span(std::uint64_t seed, std::size_t n, std::size_t vocab, std::size_t length,
                      Split split = Split::train);

// Rule oracles that recover the planted answer from tokens alone.
int classification_rule(std::span<const int> tokens, std::size_t num_classes);
std::vector<int> tagging_rule(std::span<const int> tokens, std::span<const int> mask, std::size_t num_tags);
std::pair<int, int> span_rule(std::span<const int> tokens);
std::vector<double> tagging_marginals(std::size_t num_tags);

/// Copy with every label removed (examples marked unlabeled).
Dataset strip_labels(Dataset data);

/// main followed by floor(mix_ratio * |main|) auxiliary examples, picked from a
/// seeded permutation of the auxiliary set (cycling when it is too small).
Dataset augment_dataset(const Dataset& main, const Dataset& auxiliary, double mix_ratio, std::uint64_t seed);

/// One line per example: id<TAB>tokens<TAB>label | tags | start,end
/// (tokens cover unmasked positions only; "-" marks a missing label).
void write_dataset(const Dataset& data, std::ostream& out);

struct Batch {
  TaskKind kind = TaskKind::classification;
  std::size_t batch = 0;
  std::size_t seq_len = 0;
  std::vector<int> token_ids;  // [batch, seq_len]
  std::vector<double> mask;    // [batch, seq_len]
  std::vector<int> labels;     // classification: [batch]; tagging: [batch, seq_len]; -1 = none
  std::vector<int> span_start;
  std::vector<int> span_end;
  std::vector<std::uint64_t> ids;

  TokenBatch tokens() const { return {token_ids, mask, batch, seq_len}; }
  Tensor mask_tensor() const;
  bool has_labels() const;
};

Batch make_batch(const Dataset& data, std::span<const std::size_t> indices);

struct TaskBatch {
  std::size_t task = 0;
  Batch batch;
};

/// Deterministic per-epoch batch stream consumed by every distiller.
class BatchSource {
 public:
  virtual ~BatchSource() = default;
  virtual std::size_t steps_per_epoch() const = 0;
  virtual std::vector<TaskBatch> epoch(std::size_t epoch_index) const = 0;
};

class DataLoader : public BatchSource {
 public:
  DataLoader(Dataset data, std::size_t batch_size, bool shuffle, std::uint64_t seed);

  std::size_t steps_per_epoch() const override;
  std::vector<TaskBatch> epoch(std::size_t epoch_index) const override;
  const Dataset& dataset() const { return *data_; }

 private:
  std::shared_ptr<const Dataset> data_;
  std::size_t batch_size_;
  bool shuffle_;
  std::uint64_t seed_;
};

/// Task ids drawn with probability proportional to `sizes`.
std::vector<std::size_t> sample_task_sequence(std::span<const std::size_t> sizes, std::size_t draws,
                                              std::uint64_t seed);

/// Interleaves several loaders; batch i of an epoch comes from the task drawn
/// in proportion to dataset size (or cycles through tasks with round_robin).
/// A task that runs out of batches restarts its own stream.
class MultiTaskLoader : public BatchSource {
 public:
  MultiTaskLoader(std::vector<DataLoader> loaders, std::uint64_t seed, bool round_robin = false);

  std::size_t steps_per_epoch() const override;
  std::vector<TaskBatch> epoch(std::size_t epoch_index) const override;

 private:
  std::vector<DataLoader> loaders_;
  std::uint64_t seed_;
  bool round_robin_;
};

}  // namespace dk

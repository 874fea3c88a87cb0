#include "distillkit/data.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "distillkit/error.hpp"
#include "distillkit/rng.hpp"

namespace dk {

const char* to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::classification: return "classification";
    case TaskKind::tagging: return "tagging";
    case TaskKind::span: return "span";
  }
  return "unknown";
}

namespace {

constexpr int kPad = 0;
constexpr int kCls = 1;
constexpr int kOpen = 2;
constexpr int kClose = 3;
constexpr std::uint64_t kDevIdBase = 1ULL << 40;

std::uint64_t example_id(Split split, std::size_t i) {
  return (split == Split::dev ? kDevIdBase : 0) + static_cast<std::uint64_t>(i);
}

int uniform_int(std::mt19937_64& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

double uniform01(std::mt19937_64& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

// Real length drawn from [max(min_len, ceil(length/2)), length].
std::size_t draw_length(std::mt19937_64& rng, std::size_t length, std::size_t min_len) {
  const std::size_t lo = std::max(min_len, (length + 1) / 2);
  return static_cast<std::size_t>(uniform_int(rng, static_cast<int>(lo), static_cast<int>(length)));
}

Example blank(std::uint64_t id, std::size_t length, std::size_t real) {
  Example e;
  e.id = id;
  e.tokens.assign(length, kPad);
  e.mask.assign(length, 0);
  std::fill_n(e.mask.begin(), real, 1);
  return e;
}

int indicator_token(std::size_t cls, int which) { return 2 + static_cast<int>(2 * cls) + which; }

}  // namespace

int classification_rule(std::span<const int> tokens, std::size_t num_classes) {
  std::vector<int> counts(num_classes, 0);
  for (int t : tokens) {
    if (t >= 2 && t < 2 + static_cast<int>(2 * num_classes)) ++counts[static_cast<std::size_t>((t - 2) / 2)];
  }
  return static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
}

Dataset generate_classification(std::uint64_t seed, std::size_t n, std::size_t num_classes, std::size_t vocab,
                                std::size_t length, double noise_rate, Split split) {
  if (num_classes < 2) throw ConfigError("classification needs num_classes >= 2");
  if (!(noise_rate >= 0.0 && noise_rate < 0.5)) throw ConfigError("noise_rate must lie in [0, 0.5)");
  if (length < 8) throw ConfigError("classification needs length >= 8");
  const std::size_t first_neutral = 2 + 2 * num_classes;
  if (vocab < first_neutral + 2) {
    throw ConfigError("classification with " + std::to_string(num_classes) + " classes needs vocab >= " +
                      std::to_string(first_neutral + 2));
  }
  Dataset d{TaskKind::classification, vocab, length, num_classes, seed, {}};
  d.examples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto id = example_id(split, i);
    std::mt19937_64 rng(mix_seed(seed, id));
    const std::size_t real = draw_length(rng, length, 8);
    Example e = blank(id, length, real);
    e.tokens[0] = kCls;
    for (std::size_t t = 1; t < real; ++t) {
      e.tokens[t] = uniform_int(rng, static_cast<int>(first_neutral), static_cast<int>(vocab) - 1);
    }
    const auto cls = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(num_classes) - 1));
    const int true_count = uniform_int(rng, 2, 3);
    // Slots 1..real-1 in random order; indicators fill them front to back.
    std::vector<std::size_t> slots(real - 1);
    std::iota(slots.begin(), slots.end(), 1);
    std::shuffle(slots.begin(), slots.end(), rng);
    std::size_t next = 0;
    for (int k = 0; k < true_count; ++k) e.tokens[slots[next++]] = indicator_token(cls, uniform_int(rng, 0, 1));
    const std::size_t distractors = std::min<std::size_t>(2, num_classes - 1);
    std::vector<std::size_t> others;
    for (std::size_t c = 0; c < num_classes; ++c) {
      if (c != cls) others.push_back(c);
    }
    std::shuffle(others.begin(), others.end(), rng);
    for (std::size_t k = 0; k < distractors; ++k) {
      const int count = uniform_int(rng, 0, true_count - 1);
      for (int r = 0; r < count; ++r) e.tokens[slots[next++]] = indicator_token(others[k], uniform_int(rng, 0, 1));
    }
    e.clean_label = static_cast<int>(cls);
    e.label = e.clean_label;
    if (uniform01(rng) < noise_rate) {
      const int shift = uniform_int(rng, 1, static_cast<int>(num_classes) - 1);
      e.label = (e.clean_label + shift) % static_cast<int>(num_classes);
    }
    d.examples.push_back(std::move(e));
  }
  return d;
}

std::vector<double> tagging_marginals(std::size_t num_tags) {
  std::vector<double> m(num_tags, 0.5 / static_cast<double>(num_tags - 1));
  m[0] = 0.5;
  return m;
}

namespace {

struct TagVocab {
  std::size_t entity_tags;  // num_tags - 1
  int direct_base = 1;
  int ambiguous_base;
  int neutral_base;

  explicit TagVocab(std::size_t num_tags)
      : entity_tags(num_tags - 1),
        ambiguous_base(1 + 2 * static_cast<int>(num_tags - 1)),
        neutral_base(1 + 3 * static_cast<int>(num_tags - 1)) {}

  int next_tag(int tag) const { return tag % static_cast<int>(entity_tags) + 1; }
  int previous_tag(int tag) const { return tag > 1 ? tag - 1 : static_cast<int>(entity_tags); }
};

}  // namespace

std::vector<int> tagging_rule(std::span<const int> tokens, std::span<const int> mask, std::size_t num_tags) {
  const TagVocab v(num_tags);
  std::vector<int> tags(tokens.size(), 0);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (!mask[i]) continue;
    const int t = tokens[i];
    const int prev = i == 0 ? 0 : tokens[i - 1];
    if (t >= v.direct_base && t < v.ambiguous_base) {
      tags[i] = (t - v.direct_base) / 2 + 1;
    } else if (t >= v.ambiguous_base && t < v.neutral_base) {
      const int own = t - v.ambiguous_base + 1;
      tags[i] = prev % 2 == 0 ? own : v.next_tag(own);
    }
  }
  return tags;
}

Dataset generate_tagging(std::uint64_t seed, std::size_t n, std::size_t num_tags, std::size_t vocab,
                         std::size_t length, Split split) {
  if (num_tags < 2) throw ConfigError("tagging needs num_tags >= 2");
  if (length < 2) throw ConfigError("tagging needs length >= 2");
  const TagVocab v(num_tags);
  if (vocab < static_cast<std::size_t>(v.neutral_base) + 2) {
    throw ConfigError("tagging with " + std::to_string(num_tags) + " tags needs vocab >= " +
                      std::to_string(v.neutral_base + 2));
  }
  const auto marginals = tagging_marginals(num_tags);
  Dataset d{TaskKind::tagging, vocab, length, num_tags, seed, {}};
  d.examples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto id = example_id(split, i);
    std::mt19937_64 rng(mix_seed(seed, id));
    const std::size_t real = draw_length(rng, length, 1);
    Example e = blank(id, length, real);
    e.tags.assign(length, 0);
    std::discrete_distribution<int> tag_dist(marginals.begin(), marginals.end());
    for (std::size_t t = 0; t < real; ++t) {
      const int tag = tag_dist(rng);
      const int prev = t == 0 ? 0 : e.tokens[t - 1];
      int token;
      if (tag == 0) {
        token = uniform_int(rng, v.neutral_base, static_cast<int>(vocab) - 1);
      } else if (uniform01(rng) < 0.3) {
        const int own = prev % 2 == 0 ? tag : v.previous_tag(tag);
        token = v.ambiguous_base + own - 1;
      } else {
        token = v.direct_base + 2 * (tag - 1) + uniform_int(rng, 0, 1);
      }
      e.tokens[t] = token;
      e.tags[t] = tag;
    }
    d.examples.push_back(std::move(e));
  }
  return d;
}

std::pair<int, int> span_rule(std::span<const int> tokens) {
  int open = -1;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] == kOpen && open < 0) open = static_cast<int>(i);
    if (tokens[i] == kClose && open >= 0) return {open + 1, static_cast<int>(i) - 1};
  }
  return {-1, -1};
}

Dataset generate_span(std::uint64_t seed, std::size_t n, std::size_t vocab, std::size_t length, Split split) {
  if (length < 6) throw ConfigError("span needs length >= 6");
  if (vocab < 6) throw ConfigError("span needs vocab >= 6");
  Dataset d{TaskKind::span, vocab, length, 0, seed, {}};
  d.examples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto id = example_id(split, i);
    std::mt19937_64 rng(mix_seed(seed, id));
    const std::size_t real = draw_length(rng, length, 6);
    Example e = blank(id, length, real);
    e.tokens[0] = kCls;
    for (std::size_t t = 1; t < real; ++t) e.tokens[t] = uniform_int(rng, 4, static_cast<int>(vocab) - 1);
    const int answer = uniform_int(rng, 1, std::min(4, static_cast<int>(real) - 3));
    const int open = uniform_int(rng, 1, static_cast<int>(real) - answer - 2);
    e.tokens[static_cast<std::size_t>(open)] = kOpen;
    e.tokens[static_cast<std::size_t>(open + answer + 1)] = kClose;
    e.span_start = open + 1;
    e.span_end = open + answer;
    d.examples.push_back(std::move(e));
  }
  return d;
}

Dataset strip_labels(Dataset data) {
  for (auto& e : data.examples) {
    e.labeled = false;
    e.label = -1;
    std::fill(e.tags.begin(), e.tags.end(), -1);
    e.span_start = e.span_end = -1;
  }
  return data;
}

Dataset augment_dataset(const Dataset& main, const Dataset& aux, double mix_ratio, std::uint64_t seed) {
  if (!(mix_ratio >= 0.0)) throw ConfigError("mix_ratio must be >= 0");
  if (main.kind != aux.kind) throw ConfigError("augmentation task kinds differ");
  if (main.vocab_size != aux.vocab_size) {
    throw ConfigError("augmentation vocab mismatch: " + std::to_string(main.vocab_size) + " vs " +
                      std::to_string(aux.vocab_size));
  }
  if (main.seq_len != aux.seq_len) throw ConfigError("augmentation sequence lengths differ");
  Dataset out = main;
  const auto extra = static_cast<std::size_t>(std::floor(mix_ratio * static_cast<double>(main.size())));
  if (extra == 0) return out;
  if (aux.size() == 0) throw ConfigError("auxiliary dataset is empty");
  std::vector<std::size_t> order(aux.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(mix_seed(seed, 0xa06));
  std::shuffle(order.begin(), order.end(), rng);
  for (std::size_t k = 0; k < extra; ++k) out.examples.push_back(aux.examples[order[k % order.size()]]);
  return out;
}

void write_dataset(const Dataset& data, std::ostream& out) {
  for (const auto& e : data.examples) {
    out << e.id << '\t';
    bool first = true;
    for (std::size_t t = 0; t < e.tokens.size(); ++t) {
      if (!e.mask[t]) continue;
      out << (first ? "" : " ") << e.tokens[t];
      first = false;
    }
    out << '\t';
    switch (data.kind) {
      case TaskKind::classification:
        if (e.labeled) {
          out << e.label;
        } else {
          out << '-';
        }
        break;
      case TaskKind::tagging: {
        first = true;
        for (std::size_t t = 0; t < e.tags.size(); ++t) {
          if (!e.mask[t]) continue;
          out << (first ? "" : " ");
          if (e.labeled) {
            out << e.tags[t];
          } else {
            out << '-';
          }
          first = false;
        }
        break;
      }
      case TaskKind::span:
        if (e.labeled) {
          out << e.span_start << ',' << e.span_end;
        } else {
          out << '-';
        }
        break;
    }
    out << '\n';
  }
}

Tensor Batch::mask_tensor() const { return Tensor::from_vector({batch, seq_len}, mask); }

bool Batch::has_labels() const {
  if (kind == TaskKind::span) {
    return std::any_of(span_start.begin(), span_start.end(), [](int s) { return s >= 0; });
  }
  return std::any_of(labels.begin(), labels.end(), [](int l) { return l >= 0; });
}

Batch make_batch(const Dataset& data, std::span<const std::size_t> indices) {
  Batch b;
  b.kind = data.kind;
  b.batch = indices.size();
  b.seq_len = data.seq_len;
  const std::size_t L = data.seq_len;
  b.token_ids.reserve(b.batch * L);
  b.mask.reserve(b.batch * L);
  for (auto i : indices) {
    const auto& e = data.examples.at(i);
    b.ids.push_back(e.id);
    b.token_ids.insert(b.token_ids.end(), e.tokens.begin(), e.tokens.end());
    for (int m : e.mask) b.mask.push_back(m);
    switch (data.kind) {
      case TaskKind::classification: b.labels.push_back(e.labeled ? e.label : -1); break;
      case TaskKind::tagging:
        for (std::size_t t = 0; t < L; ++t) b.labels.push_back(e.labeled && e.mask[t] ? e.tags[t] : -1);
        break;
      case TaskKind::span:
        b.span_start.push_back(e.labeled ? e.span_start : -1);
        b.span_end.push_back(e.labeled ? e.span_end : -1);
        break;
    }
  }
  return b;
}

DataLoader::DataLoader(Dataset data, std::size_t batch_size, bool shuffle, std::uint64_t seed)
    : data_(std::make_shared<const Dataset>(std::move(data))), batch_size_(batch_size), shuffle_(shuffle), seed_(seed) {
  if (batch_size_ == 0) throw ConfigError("batch_size must be >= 1");
  if (data_->size() == 0) throw ConfigError("dataset is empty");
}

std::size_t DataLoader::steps_per_epoch() const { return (data_->size() + batch_size_ - 1) / batch_size_; }

std::vector<TaskBatch> DataLoader::epoch(std::size_t epoch_index) const {
  std::vector<std::size_t> order(data_->size());
  std::iota(order.begin(), order.end(), 0);
  if (shuffle_) {
    std::mt19937_64 rng(mix_seed(seed_, epoch_index));
    std::shuffle(order.begin(), order.end(), rng);
  }
  std::vector<TaskBatch> out;
  out.reserve(steps_per_epoch());
  for (std::size_t start = 0; start < order.size(); start += batch_size_) {
    const std::size_t end = std::min(order.size(), start + batch_size_);
    out.push_back({0, make_batch(*data_, std::span(order).subspan(start, end - start))});
  }
  return out;
}

std::vector<std::size_t> sample_task_sequence(std::span<const std::size_t> sizes, std::size_t draws,
                                              std::uint64_t seed) {
  if (sizes.empty()) throw ConfigError("no tasks to sample");
  std::vector<double> weights(sizes.begin(), sizes.end());
  std::discrete_distribution<std::size_t> dist(weights.begin(), weights.end());
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> out(draws);
  for (auto& t : out) t = dist(rng);
  return out;
}

MultiTaskLoader::MultiTaskLoader(std::vector<DataLoader> loaders, std::uint64_t seed, bool round_robin)
    : loaders_(std::move(loaders)), seed_(seed), round_robin_(round_robin) {
  if (loaders_.empty()) throw ConfigError("MultiTaskLoader needs at least one task");
}

std::size_t MultiTaskLoader::steps_per_epoch() const {
  std::size_t n = 0;
  for (const auto& l : loaders_) n += l.steps_per_epoch();
  return n;
}

std::vector<TaskBatch> MultiTaskLoader::epoch(std::size_t epoch_index) const {
  const std::size_t steps = steps_per_epoch();
  std::vector<std::size_t> sequence(steps);
  if (round_robin_) {
    for (std::size_t i = 0; i < steps; ++i) sequence[i] = i % loaders_.size();
  } else {
    std::vector<std::size_t> sizes;
    for (const auto& l : loaders_) sizes.push_back(l.dataset().size());
    sequence = sample_task_sequence(sizes, steps, mix_seed(seed_, epoch_index));
  }
  std::vector<std::vector<TaskBatch>> pending(loaders_.size());
  std::vector<std::size_t> cursor(loaders_.size(), 0), refills(loaders_.size(), 0);
  std::vector<TaskBatch> out;
  out.reserve(steps);
  for (std::size_t task : sequence) {
    if (cursor[task] == pending[task].size()) {
      // Later refills use epoch indices far from the regular ones.
      const std::size_t virtual_epoch = epoch_index + refills[task]++ * 1000003;
      pending[task] = loaders_[task].epoch(virtual_epoch);
      cursor[task] = 0;
    }
    TaskBatch tb = pending[task][cursor[task]++];
    tb.task = task;
    out.push_back(std::move(tb));
  }
  return out;
}

}  // namespace dk

#pragma once

#include <functional>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "distillkit/data.hpp"
#include "distillkit/model.hpp"

namespace dk {

/// Raw adaptor return value: a dictionary with the keys logits, logits_mask,
/// losses, hidden, attention, inputs_mask, labels. Single tensors are accepted
/// where lists are expected; labels are one int vector per logits entry.
using AdaptorValue = std::variant<Tensor, std::vector<Tensor>, std::vector<int>, std::vector<std::vector<int>>>;
using AdaptorDict = std::map<std::string, AdaptorValue>;

/// Maps a batch and the model outputs to the named features a distiller reads.
using Adaptor = std::function<AdaptorDict(const Batch&, const ForwardOutput&)>;

/// Normalized adaptor output.
struct AdaptorOutput {
  std::vector<Tensor> logits;
  Tensor logits_mask;
  std::vector<Tensor> losses;
  std::vector<Tensor> hidden;
  std::vector<Tensor> attention;
  Tensor inputs_mask;
  std::vector<std::vector<int>> labels;

  bool has_labels() const;
};

/// What the active configuration will read from the adaptor.
struct AdaptorRequirements {
  bool logits = false;
  bool labels = false;
  bool hidden = false;
  bool attention = false;
};

/// Normalizes the dictionary and checks it. Unknown keys and missing required
/// keys throw ContractError naming the key; an inputs_mask that is not
/// [batch, seq_len] throws ShapeError. When spec is given, hidden and
/// attention list lengths must match it.
AdaptorOutput run_adaptor(const Adaptor& adaptor, const Batch& batch, const ForwardOutput& outputs,
                          const AdaptorRequirements& required = {}, const ModelSpec* spec = nullptr);

/// Adaptor exposing every model output for the given task: logits, hidden,
/// attention, inputs_mask, labels (-1 where absent) and, for tagging, a
/// logits_mask over positions.
Adaptor default_adaptor(TaskKind kind);

}  // namespace dk

#include "distillkit/adaptor.hpp"

#include <algorithm>

#include "distillkit/error.hpp"

namespace dk {

bool AdaptorOutput::has_labels() const {
  return std::any_of(labels.begin(), labels.end(),
                     [](const auto& l) { return std::any_of(l.begin(), l.end(), [](int v) { return v >= 0; }); });
}

namespace {

std::vector<Tensor> as_tensor_list(const AdaptorValue& v, const std::string& key) {
  if (const auto* t = std::get_if<Tensor>(&v)) return {*t};
  if (const auto* l = std::get_if<std::vector<Tensor>>(&v)) return *l;
  throw ContractError("adaptor key '" + key + "' must hold tensors");
}

Tensor as_tensor(const AdaptorValue& v, const std::string& key) {
  if (const auto* t = std::get_if<Tensor>(&v)) return *t;
  throw ContractError("adaptor key '" + key + "' must hold a single tensor");
}

std::vector<std::vector<int>> as_labels(const AdaptorValue& v) {
  if (const auto* l = std::get_if<std::vector<int>>(&v)) return {*l};
  if (const auto* l = std::get_if<std::vector<std::vector<int>>>(&v)) return *l;
  throw ContractError("adaptor key 'labels' must hold integer vectors");
}

}  // namespace

AdaptorOutput run_adaptor(const Adaptor& adaptor, const Batch& batch, const ForwardOutput& outputs,
                          const AdaptorRequirements& required, const ModelSpec* spec) {
  if (!adaptor) throw ContractError("adaptor is empty");
  const AdaptorDict dict = adaptor(batch, outputs);
  AdaptorOutput out;
  for (const auto& [key, value] : dict) {
    if (key == "logits") {
      out.logits = as_tensor_list(value, key);
    } else if (key == "logits_mask") {
      out.logits_mask = as_tensor(value, key);
    } else if (key == "losses") {
      out.losses = as_tensor_list(value, key);
    } else if (key == "hidden") {
      out.hidden = as_tensor_list(value, key);
    } else if (key == "attention") {
      out.attention = as_tensor_list(value, key);
    } else if (key == "inputs_mask") {
      out.inputs_mask = as_tensor(value, key);
    } else if (key == "labels") {
      out.labels = as_labels(value);
    } else {
      throw ContractError("adaptor returned unknown key '" + key +
                          "' (expected logits, logits_mask, losses, hidden, attention, inputs_mask, labels)");
    }
  }
  if (out.logits.empty() && out.losses.empty()) throw ContractError("adaptor must return 'logits' or 'losses'");
  if (required.logits && out.logits.empty()) throw ContractError("adaptor output lacks 'logits'");
  if (required.labels && out.labels.empty()) throw ContractError("adaptor output lacks 'labels'");
  if (required.hidden && out.hidden.empty()) throw ContractError("adaptor output lacks 'hidden'");
  if (required.attention && out.attention.empty()) throw ContractError("adaptor output lacks 'attention'");
  if ((required.hidden || required.attention) && !out.inputs_mask.defined()) {
    throw ContractError("adaptor output lacks 'inputs_mask'");
  }
  if (out.inputs_mask.defined() && out.inputs_mask.shape() != Shape{batch.batch, batch.seq_len}) {
    throw ShapeError("inputs_mask has shape " + shape_str(out.inputs_mask.shape()) + ", expected " +
                     shape_str({batch.batch, batch.seq_len}));
  }
  if (spec) {
    if (!out.hidden.empty() && out.hidden.size() != spec->num_layers + 1) {
      throw ContractError("adaptor 'hidden' has " + std::to_string(out.hidden.size()) + " entries, model '" +
                          spec->name + "' produces " + std::to_string(spec->num_layers + 1));
    }
    if (!out.attention.empty() && out.attention.size() != spec->num_attention_layers()) {
      throw ContractError("adaptor 'attention' has " + std::to_string(out.attention.size()) + " entries, model '" +
                          spec->name + "' produces " + std::to_string(spec->num_attention_layers()));
    }
  }
  if (!out.labels.empty() && !out.logits.empty() && out.labels.size() != out.logits.size()) {
    throw ContractError("adaptor 'labels' must have one entry per logits tensor");
  }
  return out;
}

Adaptor default_adaptor(TaskKind kind) {
  return [kind](const Batch& b, const ForwardOutput& o) {
    AdaptorDict d;
    d["logits"] = o.logits;
    d["hidden"] = o.hidden;
    if (!o.attention.empty()) d["attention"] = o.attention;
    d["inputs_mask"] = b.mask_tensor();
    switch (kind) {
      case TaskKind::classification: d["labels"] = b.labels; break;
      case TaskKind::tagging:
        d["labels"] = b.labels;
        d["logits_mask"] = b.mask_tensor();
        break;
      case TaskKind::span: d["labels"] = std::vector<std::vector<int>>{b.span_start, b.span_end}; break;
    }
    return d;
  };
}

}  // namespace dk

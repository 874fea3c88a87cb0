#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "distillkit/tensor.hpp"
#include "json.hpp"

namespace dk {

enum class ModelKind { transformer_encoder, bigru };
enum class HeadKind { classification, tagging, span_extraction };

struct HeadSpec {
  HeadKind kind = HeadKind::classification;
  std::size_t num_labels = 2;  // unused for span_extraction

  bool operator==(const HeadSpec&) const = default;
};

/// Architecture description. Transformer layers are post-norm BERT-style
/// blocks with learned position embeddings and two segment types. A bigru
/// model is one bidirectional GRU layer whose per-direction width equals
/// hidden_size; its top hidden state has width 2 * hidden_size.
struct ModelSpec {
  std::string name;
  ModelKind kind = ModelKind::transformer_encoder;
  std::size_t num_layers = 1;
  std::size_t hidden_size = 16;
  std::size_t feed_forward_size = 32;
  std::size_t num_heads = 1;
  std::size_t vocab_size = 32;
  std::size_t max_positions = 64;
  std::vector<HeadSpec> heads{HeadSpec{}};

  bool operator==(const ModelSpec&) const = default;

  /// Width of hidden state `index` (0 = embeddings output).
  std::size_t hidden_width(std::size_t index) const;
  /// Number of entries in ForwardOutput::attention.
  std::size_t num_attention_layers() const;
};

inline constexpr std::size_t kSegmentTypes = 2;
inline constexpr double kLayerNormEps = 1e-12;
// Additive score for masked keys / masked span positions.
inline constexpr double kMaskedScore = -1e4;

/// Throws ConfigError naming the violated constraint. `for_training` rejects
/// num_layers = 0, which is only meaningful for parameter counting.
void validate_spec(const ModelSpec& spec, bool for_training = true);

ModelSpec spec_from_json(const nlohmann::json& j);
nlohmann::json spec_to_json(const ModelSpec& spec);
ModelSpec parse_model_spec(const std::string& json_text);
ModelSpec load_model_spec(const std::string& path);

const char* to_string(ModelKind kind);
const char* to_string(HeadKind kind);

struct ParameterCount {
  std::size_t total = 0;  // embedding + non_embedding; task heads excluded
  std::size_t embedding = 0;
  std::size_t non_embedding = 0;
};

/// Closed-form encoder size. Transformer embedding block:
///   (vocab + max_positions + 2) * d + 2d (embedding layer norm);
/// per layer: 4(d^2 + d) attention, 2d norm, 2*d*ff + ff + d feed-forward, 2d norm.
/// BiGRU: vocab * d token embeddings, plus per direction 3(d*h + h*h) + 6h.
ParameterCount count_parameters(const ModelSpec& spec);

/// Parameters of one task head.
std::size_t count_head_parameters(const ModelSpec& spec, std::size_t head);

struct NamedParameter {
  std::string name;
  Tensor value;
};

class Model {
 public:
  Model() = default;
  Model(ModelSpec spec, std::vector<NamedParameter> params);

  const ModelSpec& spec() const { return spec_; }
  const std::vector<NamedParameter>& parameters() const { return params_; }
  const Tensor& param(const std::string& name) const;
  bool has_param(const std::string& name) const { return index_.count(name) > 0; }

  std::vector<Tensor> tensors() const;
  std::vector<Tensor> head_tensors(std::size_t head) const;
  std::size_t num_values() const;

  void set_trainable(bool trainable);
  void zero_grad();
  /// Deep copy with independent storage.
  Model clone() const;

 private:
  ModelSpec spec_;
  std::vector<NamedParameter> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct BuildOptions {
  double init_std = 0.02;
};

/// Weights ~ N(0, init_std), biases 0, layer-norm gains 1. Deterministic per seed.
Model build_model(const ModelSpec& spec, std::uint64_t seed, BuildOptions options = {});

/// Token batch in row-major [batch, seq_len] layout. mask is 1 for real
/// tokens and 0 for padding.
struct TokenBatch {
  std::span<const int> token_ids;
  std::span<const double> mask;
  std::size_t batch = 0;
  std::size_t seq_len = 0;
};

struct ForwardOutput {
  // classification: {[B, C]}; tagging: {[B, L, T]}; span: {start [B, L], end [B, L]}
  std::vector<Tensor> logits;
  std::vector<Tensor> hidden;     // num_layers + 1 entries, [B, L, width]
  std::vector<Tensor> attention;  // num_layers entries of [B, H, L, L]; empty for bigru
};

ForwardOutput forward(const Model& model, const TokenBatch& batch, std::size_t head = 0);

/// SHA-256 over parameter names and raw values, hex encoded.
std::string parameter_checksum(const Model& model);

}  // namespace dk

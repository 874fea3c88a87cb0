#include "distillkit/model.hpp"

#include <openssl/evp.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "distillkit/error.hpp"
#include "distillkit/ops.hpp"
#include "distillkit/rng.hpp"

namespace dk {

using nlohmann::json;

const char* to_string(ModelKind kind) {
  return kind == ModelKind::transformer_encoder ? "transformer_encoder" : "bigru";
}

const char* to_string(HeadKind kind) {
  switch (kind) {
    case HeadKind::classification: return "classification";
    case HeadKind::tagging: return "tagging";
    case HeadKind::span_extraction: return "span_extraction";
  }
  return "unknown";
}

std::size_t ModelSpec::hidden_width(std::size_t index) const {
  if (kind == ModelKind::bigru && index >= 1) return 2 * hidden_size;
  return hidden_size;
}

std::size_t ModelSpec::num_attention_layers() const {
  return kind == ModelKind::transformer_encoder ? num_layers : 0;
}

void validate_spec(const ModelSpec& s, bool for_training) {
  auto fail = [&](const std::string& what) {
    throw ConfigError("model spec" + (s.name.empty() ? std::string() : " '" + s.name + "'") + ": " + what);
  };
  if (s.hidden_size < 1) fail("hidden_size must be >= 1");
  if (s.vocab_size < 2) fail("vocab_size must be >= 2");
  if (s.max_positions < 1) fail("max_positions must be >= 1");
  if (for_training && s.num_layers == 0) fail("num_layers = 0 is only valid for parameter counting");
  if (s.kind == ModelKind::transformer_encoder) {
    if (s.feed_forward_size < 1) fail("feed_forward_size must be >= 1");
    if (s.num_heads < 1) fail("num_heads must be >= 1");
    if (s.hidden_size % s.num_heads != 0) {
      fail("hidden_size " + std::to_string(s.hidden_size) + " is not divisible by num_heads " +
           std::to_string(s.num_heads));
    }
  } else if (s.num_layers > 1) {
    fail("bigru supports a single layer");
  }
  if (s.heads.empty()) fail("at least one head is required");
  for (const auto& h : s.heads) {
    if (h.kind != HeadKind::span_extraction && h.num_labels < 2) fail("head num_labels must be >= 2");
  }
}

namespace {

HeadKind head_kind_from(const std::string& s) {
  if (s == "classification") return HeadKind::classification;
  if (s == "tagging") return HeadKind::tagging;
  if (s == "span_extraction") return HeadKind::span_extraction;
  throw ConfigError("unknown head type '" + s + "' (expected classification, tagging, span_extraction)");
}

HeadSpec head_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("head must be an object");
  HeadSpec h;
  for (const auto& [key, value] : j.items()) {
    if (key != "type" && key != "num_labels") throw ConfigError("unknown head key '" + key + "'");
  }
  if (!j.contains("type")) throw ConfigError("head requires 'type'");
  h.kind = head_kind_from(j.at("type").get<std::string>());
  h.num_labels = h.kind == HeadKind::span_extraction ? 0 : j.value("num_labels", std::size_t{2});
  return h;
}

std::size_t get_size(const json& j, const char* key, std::size_t fallback) {
  if (!j.contains(key)) return fallback;
  const auto& v = j.at(key);
  if (!v.is_number_integer() || v.get<long long>() < 0) {
    throw ConfigError(std::string("model spec field '") + key + "' must be a non-negative integer");
  }
  return v.get<std::size_t>();
}

}  // namespace

ModelSpec spec_from_json(const json& j) {
  static const std::set<std::string> known = {"name",          "kind",      "num_layers",
                                              "hidden_size",   "feed_forward_size", "num_heads",
                                              "vocab_size",    "max_positions",     "head",
                                              "heads"};
  if (!j.is_object()) throw ConfigError("model spec must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw ConfigError("unknown model spec key '" + key + "'");
  }
  ModelSpec s;
  s.name = j.value("name", std::string());
  const std::string kind = j.value("kind", std::string("transformer_encoder"));
  if (kind == "transformer_encoder") {
    s.kind = ModelKind::transformer_encoder;
  } else if (kind == "bigru") {
    s.kind = ModelKind::bigru;
  } else {
    throw ConfigError("unknown model kind '" + kind + "'");
  }
  s.num_layers = get_size(j, "num_layers", 1);
  s.hidden_size = get_size(j, "hidden_size", 0);
  const bool transformer = s.kind == ModelKind::transformer_encoder;
  s.feed_forward_size = get_size(j, "feed_forward_size", transformer ? 4 * s.hidden_size : 0);
  s.num_heads = get_size(j, "num_heads", transformer ? 1 : 0);
  s.vocab_size = get_size(j, "vocab_size", 0);
  s.max_positions = get_size(j, "max_positions", 512);
  if (j.contains("head") && j.contains("heads")) throw ConfigError("give either 'head' or 'heads', not both");
  s.heads.clear();
  if (j.contains("heads")) {
    for (const auto& h : j.at("heads")) s.heads.push_back(head_from_json(h));
  } else if (j.contains("head")) {
    s.heads.push_back(head_from_json(j.at("head")));
  } else {
    s.heads.push_back(HeadSpec{});
  }
  validate_spec(s, false);
  return s;
}

json spec_to_json(const ModelSpec& s) {
  json j;
  j["name"] = s.name;
  j["kind"] = to_string(s.kind);
  j["num_layers"] = s.num_layers;
  j["hidden_size"] = s.hidden_size;
  j["feed_forward_size"] = s.feed_forward_size;
  j["num_heads"] = s.num_heads;
  j["vocab_size"] = s.vocab_size;
  j["max_positions"] = s.max_positions;
  json heads = json::array();
  for (const auto& h : s.heads) heads.push_back({{"type", to_string(h.kind)}, {"num_labels", h.num_labels}});
  j["heads"] = heads;
  return j;
}

ModelSpec parse_model_spec(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("model spec: ") + e.what());
  }
  return spec_from_json(j);
}

ModelSpec load_model_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open model spec '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_model_spec(ss.str());
}

ParameterCount count_parameters(const ModelSpec& s) {
  validate_spec(s, false);
  ParameterCount c;
  const std::size_t d = s.hidden_size;
  if (s.kind == ModelKind::transformer_encoder) {
    const std::size_t ff = s.feed_forward_size;
    c.embedding = (s.vocab_size + s.max_positions + kSegmentTypes) * d + 2 * d;
    const std::size_t per_layer = 4 * (d * d + d) + 2 * d + (d * ff + ff) + (ff * d + d) + 2 * d;
    c.non_embedding = s.num_layers * per_layer;
  } else {
    c.embedding = s.vocab_size * d;
    const std::size_t h = d;
    const std::size_t per_direction = 3 * (d * h + h * h) + 6 * h;
    c.non_embedding = s.num_layers * 2 * per_direction;
  }
  c.total = c.embedding + c.non_embedding;
  return c;
}

std::size_t count_head_parameters(const ModelSpec& s, std::size_t head) {
  const std::size_t w = s.hidden_width(s.num_layers);
  const auto& h = s.heads.at(head);
  switch (h.kind) {
    case HeadKind::classification: return w * w + w + w * h.num_labels + h.num_labels;
    case HeadKind::tagging: return w * h.num_labels + h.num_labels;
    case HeadKind::span_extraction: return w * 2 + 2;
  }
  return 0;
}

Model::Model(ModelSpec spec, std::vector<NamedParameter> params)
    : spec_(std::move(spec)), params_(std::move(params)) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (!index_.emplace(params_[i].name, i).second) {
      throw ContractError("duplicate parameter name '" + params_[i].name + "'");
    }
  }
}

const Tensor& Model::param(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("model has no parameter '" + name + "'");
  return params_[it->second].value;
}

std::vector<Tensor> Model::tensors() const {
  std::vector<Tensor> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.value);
  return out;
}

std::vector<Tensor> Model::head_tensors(std::size_t head) const {
  const std::string prefix = "head" + std::to_string(head) + ".";
  std::vector<Tensor> out;
  for (const auto& p : params_) {
    if (p.name.rfind(prefix, 0) == 0) out.push_back(p.value);
  }
  return out;
}

std::size_t Model::num_values() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.numel();
  return n;
}

void Model::set_trainable(bool trainable) {
  for (auto& p : params_) p.value.set_requires_grad(trainable);
}

void Model::zero_grad() {
  for (auto& p : params_) p.value.zero_grad();
}

Model Model::clone() const {
  std::vector<NamedParameter> copy;
  copy.reserve(params_.size());
  for (const auto& p : params_) {
    Tensor t = p.value.detach();
    t.set_requires_grad(p.value.requires_grad());
    copy.push_back({p.name, t});
  }
  return Model(spec_, std::move(copy));
}

namespace {

enum class InitKind { weight, zero, one };

struct ParamDecl {
  std::string name;
  Shape shape;
  InitKind init;
};

void linear_decl(std::vector<ParamDecl>& out, const std::string& prefix, std::size_t in, std::size_t outd) {
  out.push_back({prefix + ".weight", {in, outd}, InitKind::weight});
  out.push_back({prefix + ".bias", {outd}, InitKind::zero});
}

void norm_decl(std::vector<ParamDecl>& out, const std::string& prefix, std::size_t d) {
  out.push_back({prefix + ".gain", {d}, InitKind::one});
  out.push_back({prefix + ".bias", {d}, InitKind::zero});
}

std::vector<ParamDecl> declare(const ModelSpec& s) {
  std::vector<ParamDecl> out;
  const std::size_t d = s.hidden_size;
  if (s.kind == ModelKind::transformer_encoder) {
    out.push_back({"embeddings.token", {s.vocab_size, d}, InitKind::weight});
    out.push_back({"embeddings.position", {s.max_positions, d}, InitKind::weight});
    out.push_back({"embeddings.segment", {kSegmentTypes, d}, InitKind::weight});
    norm_decl(out, "embeddings.ln", d);
    for (std::size_t l = 0; l < s.num_layers; ++l) {
      const std::string p = "layer" + std::to_string(l);
      linear_decl(out, p + ".attention.query", d, d);
      linear_decl(out, p + ".attention.key", d, d);
      linear_decl(out, p + ".attention.value", d, d);
      linear_decl(out, p + ".attention.output", d, d);
      norm_decl(out, p + ".attention.ln", d);
      linear_decl(out, p + ".ffn.intermediate", d, s.feed_forward_size);
      linear_decl(out, p + ".ffn.output", s.feed_forward_size, d);
      norm_decl(out, p + ".ffn.ln", d);
    }
  } else {
    out.push_back({"embeddings.token", {s.vocab_size, d}, InitKind::weight});
    for (std::size_t l = 0; l < s.num_layers; ++l) {
      for (const char* dir : {"forward", "backward"}) {
        const std::string p = "gru." + std::string(dir);
        linear_decl(out, p + ".input", d, 3 * d);
        linear_decl(out, p + ".hidden", d, 3 * d);
      }
    }
  }
  const std::size_t w = s.hidden_width(s.num_layers);
  for (std::size_t h = 0; h < s.heads.size(); ++h) {
    const std::string p = "head" + std::to_string(h);
    switch (s.heads[h].kind) {
      case HeadKind::classification:
        linear_decl(out, p + ".pooler", w, w);
        linear_decl(out, p + ".classifier", w, s.heads[h].num_labels);
        break;
      case HeadKind::tagging: linear_decl(out, p + ".classifier", w, s.heads[h].num_labels); break;
      case HeadKind::span_extraction: linear_decl(out, p + ".span", w, 2); break;
    }
  }
  return out;
}

}  // namespace

Model build_model(const ModelSpec& spec, std::uint64_t seed, BuildOptions options) {
  validate_spec(spec, true);
  const auto decls = declare(spec);
  std::vector<NamedParameter> params;
  params.reserve(decls.size());
  for (std::size_t i = 0; i < decls.size(); ++i) {
    const auto& dcl = decls[i];
    Tensor t;
    switch (dcl.init) {
      case InitKind::weight:
        t = Tensor::create(dcl.shape, Normal{0.0, options.init_std, mix_seed(seed, i)});
        break;
      case InitKind::zero: t = Tensor::create(dcl.shape, Zeros{}); break;
      case InitKind::one: t = Tensor::create(dcl.shape, Constant{1.0}); break;
    }
    t.set_requires_grad(true);
    params.push_back({dcl.name, t});
  }
  return Model(spec, std::move(params));
}

namespace {

Tensor linear(const Model& m, const std::string& prefix, const Tensor& x) {
  return add(matmul(x, m.param(prefix + ".weight")), m.param(prefix + ".bias"));
}

Tensor transformer_layer(const Model& m, std::size_t l, const Tensor& x, const Tensor& mask_bias, std::size_t B,
                         std::size_t L, std::vector<Tensor>& attention) {
  const auto& s = m.spec();
  const std::size_t d = s.hidden_size;
  const std::size_t H = s.num_heads;
  const std::size_t dh = d / H;
  const std::string p = "layer" + std::to_string(l);
  auto heads = [&](const Tensor& t) { return permute(reshape(t, {B, L, H, dh}), {0, 2, 1, 3}); };
  Tensor q = heads(linear(m, p + ".attention.query", x));
  Tensor k = heads(linear(m, p + ".attention.key", x));
  Tensor v = heads(linear(m, p + ".attention.value", x));
  Tensor scores = add(scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(dh))), mask_bias);
  Tensor probs = softmax(scores, -1);
  attention.push_back(probs);
  Tensor ctx = reshape(permute(matmul(probs, v), {0, 2, 1, 3}), {B, L, d});
  Tensor attn_out = linear(m, p + ".attention.output", ctx);
  Tensor x1 = layer_norm(add(x, attn_out), m.param(p + ".attention.ln.gain"), m.param(p + ".attention.ln.bias"),
                         kLayerNormEps);
  Tensor ff = linear(m, p + ".ffn.output", gelu(linear(m, p + ".ffn.intermediate", x1)));
  return layer_norm(add(x1, ff), m.param(p + ".ffn.ln.gain"), m.param(p + ".ffn.ln.bias"), kLayerNormEps);
}

// One GRU direction over [B, L, d] inputs; returns [B, L, h]. Padding
// positions carry the previous state through unchanged.
Tensor gru_direction(const Model& m, const std::string& prefix, const Tensor& x, const TokenBatch& batch,
                     bool reverse) {
  const std::size_t B = batch.batch, L = batch.seq_len;
  const std::size_t h = m.spec().hidden_size;
  Tensor gi = linear(m, prefix + ".input", x);  // [B, L, 3h]
  Tensor state = Tensor::create({B, h}, Zeros{});
  std::vector<Tensor> outputs(L);
  for (std::size_t step = 0; step < L; ++step) {
    const std::size_t t = reverse ? L - 1 - step : step;
    Tensor xt = reshape(slice(gi, 1, t, t + 1), {B, 3 * h});
    Tensor gh = linear(m, prefix + ".hidden", state);
    Tensor r = sigmoid(add(slice(xt, -1, 0, h), slice(gh, -1, 0, h)));
    Tensor z = sigmoid(add(slice(xt, -1, h, 2 * h), slice(gh, -1, h, 2 * h)));
    Tensor n = tanh(add(slice(xt, -1, 2 * h, 3 * h), mul(r, slice(gh, -1, 2 * h, 3 * h))));
    Tensor next = add(n, mul(z, sub(state, n)));
    bool all_on = true;
    std::vector<double> keep(B * h);
    for (std::size_t b = 0; b < B; ++b) {
      const double mv = batch.mask[b * L + t];
      all_on = all_on && mv == 1.0;
      std::fill_n(keep.begin() + static_cast<std::ptrdiff_t>(b * h), h, mv);
    }
    if (all_on) {
      state = next;
    } else {
      state = add(state, mul(Tensor::from_vector({B, h}, std::move(keep)), sub(next, state)));
    }
    outputs[t] = reshape(state, {B, 1, h});
  }
  return concat(outputs, 1);
}

std::vector<Tensor> head_forward(const Model& m, std::size_t head, const Tensor& top, const TokenBatch& batch) {
  const auto& hs = m.spec().heads.at(head);
  const std::size_t B = batch.batch, L = batch.seq_len;
  const std::size_t w = top.shape().back();
  const std::string p = "head" + std::to_string(head);
  switch (hs.kind) {
    case HeadKind::classification: {
      std::vector<double> weights(B * L * w);
      for (std::size_t b = 0; b < B; ++b) {
        double count = 0.0;
        for (std::size_t t = 0; t < L; ++t) count += batch.mask[b * L + t];
        if (count <= 0.0) throw InputError("batch item " + std::to_string(b) + " has no unmasked positions");
        for (std::size_t t = 0; t < L; ++t) {
          std::fill_n(weights.begin() + static_cast<std::ptrdiff_t>((b * L + t) * w), w,
                      batch.mask[b * L + t] / count);
        }
      }
      Tensor pooled = sum(mul(top, Tensor::from_vector({B, L, w}, std::move(weights))), 1);
      Tensor pooler = tanh(linear(m, p + ".pooler", pooled));
      return {linear(m, p + ".classifier", pooler)};
    }
    case HeadKind::tagging: return {linear(m, p + ".classifier", top)};
    case HeadKind::span_extraction: {
      Tensor both = linear(m, p + ".span", top);
      std::vector<double> bias(B * L);
      for (std::size_t i = 0; i < B * L; ++i) bias[i] = batch.mask[i] > 0.0 ? 0.0 : kMaskedScore;
      Tensor mask_bias = Tensor::from_vector({B, L}, std::move(bias));
      Tensor start = add(reshape(slice(both, -1, 0, 1), {B, L}), mask_bias);
      Tensor end = add(reshape(slice(both, -1, 1, 2), {B, L}), mask_bias);
      return {start, end};
    }
  }
  return {};
}

}  // namespace

ForwardOutput forward(const Model& model, const TokenBatch& batch, std::size_t head) {
  const auto& s = model.spec();
  const std::size_t B = batch.batch, L = batch.seq_len;
  if (B == 0 || L == 0) throw InputError("forward: empty batch");
  if (batch.token_ids.size() != B * L || batch.mask.size() != B * L) {
    throw ShapeError("forward: token ids / mask must both hold batch*seq_len = " + std::to_string(B * L) +
                     " entries");
  }
  if (head >= s.heads.size()) throw ContractError("forward: model has no head " + std::to_string(head));
  for (std::size_t i = 0; i < B * L; ++i) {
    const int id = batch.token_ids[i];
    if (id < 0 || static_cast<std::size_t>(id) >= s.vocab_size) {
      throw InputError("token id " + std::to_string(id) + " at batch " + std::to_string(i / L) + ", position " +
                       std::to_string(i % L) + " is outside vocabulary of size " + std::to_string(s.vocab_size));
    }
    if (batch.mask[i] != 0.0 && batch.mask[i] != 1.0) throw InputError("forward: mask values must be 0 or 1");
  }

  ForwardOutput out;
  if (s.kind == ModelKind::transformer_encoder) {
    if (L > s.max_positions) {
      throw InputError("sequence length " + std::to_string(L) + " exceeds max_positions " +
                       std::to_string(s.max_positions));
    }
    std::vector<int> positions(B * L);
    for (std::size_t i = 0; i < B * L; ++i) positions[i] = static_cast<int>(i % L);
    const std::vector<int> segments(B * L, 0);
    Tensor x = add(add(embedding(model.param("embeddings.token"), batch.token_ids, {B, L}),
                       embedding(model.param("embeddings.position"), positions, {B, L})),
                   embedding(model.param("embeddings.segment"), segments, {B, L}));
    x = layer_norm(x, model.param("embeddings.ln.gain"), model.param("embeddings.ln.bias"), kLayerNormEps);
    out.hidden.push_back(x);

    const std::size_t H = s.num_heads;
    std::vector<double> bias(B * H * L * L);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t hh = 0; hh < H; ++hh)
        for (std::size_t q = 0; q < L; ++q)
          for (std::size_t k = 0; k < L; ++k)
            bias[((b * H + hh) * L + q) * L + k] = batch.mask[b * L + k] > 0.0 ? 0.0 : kMaskedScore;
    const Tensor mask_bias = Tensor::from_vector({B, H, L, L}, std::move(bias));
    for (std::size_t l = 0; l < s.num_layers; ++l) {
      x = transformer_layer(model, l, x, mask_bias, B, L, out.attention);
      out.hidden.push_back(x);
    }
  } else {
    Tensor x = embedding(model.param("embeddings.token"), batch.token_ids, {B, L});
    out.hidden.push_back(x);
    for (std::size_t l = 0; l < s.num_layers; ++l) {
      Tensor fwd = gru_direction(model, "gru.forward", x, batch, false);
      Tensor bwd = gru_direction(model, "gru.backward", x, batch, true);
      x = concat({fwd, bwd}, -1);
      out.hidden.push_back(x);
    }
  }
  out.logits = head_forward(model, head, out.hidden.back(), batch);
  return out;
}

std::string parameter_checksum(const Model& model) {
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  for (const auto& p : model.parameters()) {
    EVP_DigestUpdate(ctx, p.name.data(), p.name.size());
    const auto values = p.value.data();
    EVP_DigestUpdate(ctx, values.data(), values.size() * sizeof(double));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, digest, &len);
  EVP_MD_CTX_free(ctx);
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 15]);
  }
  return out;
}

}  // namespace dk

#include "distillkit/weights_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "distillkit/error.hpp"

namespace dk {

namespace {

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  Reader(const std::string& bytes, const std::string& path) : bytes_(bytes), path_(path) {}

  const char* take(std::size_t n) {
    if (pos_ + n > bytes_.size()) throw FormatError("weight file '" + path_ + "' is truncated");
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::uint64_t u64() {
    const auto* p = reinterpret_cast<const unsigned char*>(take(8));
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
    return v;
  }
  std::uint32_t u32() {
    const auto* p = reinterpret_cast<const unsigned char*>(take(4));
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | p[i];
    return v;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::string& bytes_;
  const std::string& path_;
  std::size_t pos_ = 0;
};

std::string first_difference(const ModelSpec& a, const ModelSpec& b) {
  if (a.kind != b.kind) return "kind";
  if (a.num_layers != b.num_layers) return "num_layers";
  if (a.hidden_size != b.hidden_size) return "hidden_size";
  if (a.feed_forward_size != b.feed_forward_size) return "feed_forward_size";
  if (a.num_heads != b.num_heads) return "num_heads";
  if (a.vocab_size != b.vocab_size) return "vocab_size";
  if (a.max_positions != b.max_positions) return "max_positions";
  if (a.heads != b.heads) return "heads";
  return {};
}

}  // namespace

void save_weights(const Model& model, const std::string& path) {
  std::string out(kWeightMagic, sizeof(kWeightMagic));
  out.push_back(static_cast<char>(kWeightVersion));
  const std::string spec = spec_to_json(model.spec()).dump();
  put_u64(out, spec.size());
  out += spec;
  put_u64(out, model.parameters().size());
  for (const auto& p : model.parameters()) {
    put_u32(out, static_cast<std::uint32_t>(p.name.size()));
    out += p.name;
    put_u64(out, p.value.numel());
    for (double v : p.value.data()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ContractError("cannot open '" + path + "' for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw ContractError("failed writing weights to '" + path + "'");
}

Model load_weights(const ModelSpec& spec, const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open weight file '" + path + "'");
  const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  Reader r(bytes, path);
  if (std::memcmp(r.take(sizeof(kWeightMagic)), kWeightMagic, sizeof(kWeightMagic)) != 0) {
    throw FormatError("'" + path + "' is not a weight file (bad magic)");
  }
  const auto version = static_cast<unsigned char>(*r.take(1));
  if (version != kWeightVersion) {
    throw FormatError("unsupported weight file version " + std::to_string(version));
  }
  const std::uint64_t spec_len = r.u64();
  if (spec_len > bytes.size()) throw FormatError("weight file '" + path + "' is truncated");
  const std::string spec_text(r.take(spec_len), spec_len);
  ModelSpec stored;
  try {
    stored = spec_from_json(nlohmann::json::parse(spec_text));
  } catch (const std::exception& e) {
    throw FormatError("weight file '" + path + "' has an unreadable spec header: " + e.what());
  }
  const std::string diff = first_difference(stored, spec);
  if (!diff.empty()) {
    throw FormatError("weight file '" + path + "' spec mismatch in field '" + diff + "'");
  }

  Model model = build_model(spec, 0);
  const std::uint64_t count = r.u64();
  if (count != model.parameters().size()) {
    throw FormatError("weight file '" + path + "' holds " + std::to_string(count) + " parameters, expected " +
                      std::to_string(model.parameters().size()));
  }
  for (const auto& p : model.parameters()) {
    const std::uint32_t name_len = r.u32();
    const std::string name(r.take(name_len), name_len);
    if (name != p.name) throw FormatError("weight file parameter '" + name + "' where '" + p.name + "' expected");
    const std::uint64_t n = r.u64();
    if (n != p.value.numel()) throw FormatError("weight file parameter '" + name + "' has wrong size");
    Tensor t = p.value;
    auto dst = t.mutable_data();
    for (std::uint64_t i = 0; i < n; ++i) dst[i] = std::bit_cast<double>(r.u64());
  }
  if (!r.done()) throw FormatError("weight file '" + path + "' has trailing bytes");
  return model;
}

}  // namespace dk

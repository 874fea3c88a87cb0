#pragma once

#include <string>

#include "distillkit/model.hpp"

namespace dk {

// Weight file layout (all integers little-endian):
//   8 bytes   magic "DKWEIGHT"
//   1 byte    format version (1)
//   u64       length of spec JSON, then the canonical spec JSON (sorted keys)
//   u64       parameter count
//   per parameter, in model declaration order:
//     u32 name length, name bytes, u64 value count, values as IEEE-754 f64
inline constexpr char kWeightMagic[8] = {'D', 'K', 'W', 'E', 'I', 'G', 'H', 'T'};
inline constexpr unsigned char kWeightVersion = 1;

void save_weights(const Model& model, const std::string& path);

/// Throws FormatError for bad magic, truncation, or a stored spec that
/// differs from `spec` (the message names the first differing field).
Model load_weights(const ModelSpec& spec, const std::string& path);

}  // namespace dk

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "panda/model.hpp"
#include "panda/sha256.hpp"

namespace panda {

// Difference between two checkpoints of identical schema, stored as the
// two's-complement difference of the raw 32-bit float patterns. Integer
// arithmetic makes apply(make(b, t), b) == t hold bit-for-bit even through
// infinities and NaN payloads, which floating subtraction cannot promise.
struct WeightDiff {
  ModelConfig config;
  uint64_t trained_step = 0;
  Digest base_fingerprint{};
  Digest trained_fingerprint{};
  std::map<std::string, std::vector<uint32_t>> deltas;  // trained bits - base bits, mod 2^32
};

// Requires identical schema; a mismatch is an error listing the offending
// tensors.
WeightDiff make_diff(const Checkpoint& base, const Checkpoint& trained);

// Refuses a base whose fingerprint differs from the recorded one (quoting
// both hashes) and verifies the reconstruction against the recorded trained
// fingerprint.
Checkpoint apply_diff(const Checkpoint& base, const WeightDiff& diff);

// Same container discipline as checkpoints: magic "PNDD", config header,
// both fingerprints, per-tensor u32 delta words, SHA-256 footer over every
// preceding byte of the file.
void save_diff(const WeightDiff& diff, const std::string& path);
WeightDiff load_diff(const std::string& path);

}  // namespace panda

#pragma once

#include <string>

#include "panda/model.hpp"
#include "panda/sha256.hpp"

namespace panda {

// Binary checkpoint format. Layout, all integers little-endian:
//   magic "PNDA", version u32
//   header: dim, n_heads, n_layers, vocab_size, max_seq_len, ffn_hidden as
//           u64, norm_eps and rope_base as f32, step u64
//   per tensor, in schema order: name length u32, UTF-8 name, rank u32,
//           extents u64 each, then the f32 payload
//   footer: SHA-256 over all tensor payload bytes in file order
constexpr uint32_t kCheckpointVersion = 1;

// SHA-256 over the tensor payload bytes in schema order; identical to the
// footer a save of this checkpoint would write.
Digest checkpoint_fingerprint(const Checkpoint& ckpt);

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);

// Verifies magic, version, schema and the payload fingerprint; throws
// std::runtime_error describing the first problem found.
Checkpoint load_checkpoint(const std::string& path);

}  // namespace panda

#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "panda/mcqa.hpp"

namespace panda {

// Byte-level BPE vocabulary. Ids are dense: 0..2 are the specials, 3..258
// cover every byte value (the fallback), 259 and up are learned merges in
// rank order. Specials carry empty byte strings and are never produced by
// encoding text.
struct Vocab {
  static constexpr int32_t kPad = 0;
  static constexpr int32_t kBos = 1;
  static constexpr int32_t kEos = 2;
  static constexpr int32_t kByteOffset = 3;
  static constexpr int32_t kBaseSize = 259;  // specials + 256 bytes

  std::vector<std::string> pieces;                 // id -> raw bytes
  std::unordered_map<std::string, int32_t> ids;    // bytes -> id, injective

  int32_t size() const { return static_cast<int32_t>(pieces.size()); }

  // Specials plus the 256 single-byte tokens, no merges.
  static Vocab byte_fallback();
};

// Learns merges greedily: the most frequent adjacent pair wins, ties broken
// by lexicographic (left bytes, right bytes). Pairs whose concatenation is
// already a token are skipped so the bytes->id map stays injective. Stops
// early when no pair repeats.
Vocab train_bpe(const std::string& corpus, int32_t vocab_size);

// Byte fallback makes this total on arbitrary input.
std::vector<int32_t> encode(const Vocab& vocab, std::string_view text, bool add_bos);

// Inverse of encode; special ids contribute nothing. Unknown ids throw.
std::string decode(const Vocab& vocab, const std::vector<int32_t>& ids);

// Vocabulary file: a header line declaring the specials, then one record
// "id<TAB>hex-bytes<TAB>rank" per token (rank -1 for non-merged tokens).
void save_vocab(const Vocab& vocab, const std::string& path);
Vocab load_vocab(const std::string& path);

// Token count of context, question and all options concatenated; no BOS.
int64_t sample_token_length(const Vocab& vocab, const MCQAItem& item);

}  // namespace panda

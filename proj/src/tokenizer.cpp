#include "panda/tokenizer.hpp"

#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace panda {

namespace {

std::string to_hex(const std::string& bytes) {
  static const char digits[] = "0123456789abcdef";
  std::string out;
  out.reserve(bytes.size() * 2);
  for (unsigned char c : bytes) {
    out.push_back(digits[c >> 4]);
    out.push_back(digits[c & 0xf]);
  }
  return out;
}

std::string from_hex(const std::string& hex, const std::string& where) {
  if (hex.size() % 2 != 0) throw std::runtime_error(where + ": odd-length hex field");
  auto nibble = [&](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    throw std::runtime_error(where + ": bad hex digit '" + std::string(1, c) + "'");
  };
  std::string out;
  out.reserve(hex.size() / 2);
  for (size_t i = 0; i < hex.size(); i += 2) {
    out.push_back(static_cast<char>(nibble(hex[i]) * 16 + nibble(hex[i + 1])));
  }
  return out;
}

// Replaces every adjacent symbol pair whose concatenated bytes equal piece
// (left-to-right, non-overlapping) with the token new_id.
void merge_in_place(std::vector<int32_t>& symbols, const Vocab& vocab, const std::string& piece,
                    int32_t new_id) {
  size_t write = 0;
  size_t read = 0;
  while (read < symbols.size()) {
    if (read + 1 < symbols.size() &&
        vocab.pieces[static_cast<size_t>(symbols[read])].size() +
                vocab.pieces[static_cast<size_t>(symbols[read + 1])].size() ==
            piece.size() &&
        vocab.pieces[static_cast<size_t>(symbols[read])] +
                vocab.pieces[static_cast<size_t>(symbols[read + 1])] ==
            piece) {
      symbols[write++] = new_id;
      read += 2;
    } else {
      symbols[write++] = symbols[read++];
    }
  }
  symbols.resize(write);
}

}  // namespace

Vocab Vocab::byte_fallback() {
  Vocab v;
  v.pieces.assign(kByteOffset, std::string());
  for (int b = 0; b < 256; ++b) {
    std::string piece(1, static_cast<char>(b));
    v.ids.emplace(piece, v.size());
    v.pieces.push_back(std::move(piece));
  }
  return v;
}

Vocab train_bpe(const std::string& corpus, int32_t vocab_size) {
  if (corpus.empty()) throw std::invalid_argument("train_bpe: corpus is empty");
  if (vocab_size < Vocab::kBaseSize) {
    throw std::invalid_argument("train_bpe: vocab_size " + std::to_string(vocab_size) +
                                " is below the byte-fallback floor of " +
                                std::to_string(Vocab::kBaseSize));
  }

  Vocab vocab = Vocab::byte_fallback();
  std::vector<int32_t> symbols;
  symbols.reserve(corpus.size());
  for (unsigned char c : corpus) symbols.push_back(Vocab::kByteOffset + c);

  while (vocab.size() < vocab_size) {
    // count adjacent pairs, skipping any whose concatenation already exists
    std::unordered_map<uint64_t, int64_t> counts;
    for (size_t i = 0; i + 1 < symbols.size(); ++i) {
      counts[(static_cast<uint64_t>(static_cast<uint32_t>(symbols[i])) << 32) |
             static_cast<uint32_t>(symbols[i + 1])]++;
    }

    int64_t best_count = 1;  // a merge must save at least one occurrence
    int32_t best_a = -1, best_b = -1;
    for (const auto& [key, count] : counts) {
      const int32_t a = static_cast<int32_t>(key >> 32);
      const int32_t b = static_cast<int32_t>(key & 0xffffffffu);
      if (vocab.ids.count(vocab.pieces[static_cast<size_t>(a)] + vocab.pieces[static_cast<size_t>(b)])) {
        continue;
      }
      if (count < best_count) continue;
      if (count > best_count || best_a < 0 ||
          std::pair(vocab.pieces[static_cast<size_t>(a)], vocab.pieces[static_cast<size_t>(b)]) <
              std::pair(vocab.pieces[static_cast<size_t>(best_a)], vocab.pieces[static_cast<size_t>(best_b)])) {
        best_count = count;
        best_a = a;
        best_b = b;
      }
    }
    if (best_a < 0 || best_count < 2) break;

    std::string piece = vocab.pieces[static_cast<size_t>(best_a)] + vocab.pieces[static_cast<size_t>(best_b)];
    const int32_t new_id = vocab.size();
    vocab.ids.emplace(piece, new_id);
    vocab.pieces.push_back(piece);
    merge_in_place(symbols, vocab, vocab.pieces.back(), new_id);
  }
  return vocab;
}

std::vector<int32_t> encode(const Vocab& vocab, std::string_view text, bool add_bos) {
  std::vector<int32_t> symbols;
  symbols.reserve(text.size() + 1);
  for (unsigned char c : text) symbols.push_back(Vocab::kByteOffset + c);

  // repeatedly apply the lowest-ranked (earliest-learned) applicable merge
  while (true) {
    int32_t best_id = std::numeric_limits<int32_t>::max();
    for (size_t i = 0; i + 1 < symbols.size(); ++i) {
      auto it = vocab.ids.find(vocab.pieces[static_cast<size_t>(symbols[i])] +
                               vocab.pieces[static_cast<size_t>(symbols[i + 1])]);
      if (it != vocab.ids.end() && it->second >= Vocab::kBaseSize && it->second < best_id) {
        best_id = it->second;
      }
    }
    if (best_id == std::numeric_limits<int32_t>::max()) break;
    merge_in_place(symbols, vocab, vocab.pieces[static_cast<size_t>(best_id)], best_id);
  }

  if (add_bos) symbols.insert(symbols.begin(), Vocab::kBos);
  return symbols;
}

std::string decode(const Vocab& vocab, const std::vector<int32_t>& ids) {
  std::string out;
  for (int32_t id : ids) {
    if (id < 0 || id >= vocab.size()) {
      throw std::out_of_range("decode: unknown id " + std::to_string(id) + " for vocab of " +
                              std::to_string(vocab.size()));
    }
    out += vocab.pieces[static_cast<size_t>(id)];
  }
  return out;
}

void save_vocab(const Vocab& vocab, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error(path + ": cannot open for writing");
  os << "panda-vocab v1 pad=" << Vocab::kPad << " bos=" << Vocab::kBos << " eos=" << Vocab::kEos
     << "\n";
  for (int32_t id = 0; id < vocab.size(); ++id) {
    const int32_t rank = id >= Vocab::kBaseSize ? id - Vocab::kBaseSize : -1;
    os << id << "\t" << to_hex(vocab.pieces[static_cast<size_t>(id)]) << "\t" << rank << "\n";
  }
  if (!os) throw std::runtime_error(path + ": write failed");
}

Vocab load_vocab(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error(path + ": cannot open");

  std::string header;
  std::getline(is, header);
  if (header != "panda-vocab v1 pad=0 bos=1 eos=2") {
    throw std::runtime_error(path + ": unrecognized vocab header '" + header + "'");
  }

  Vocab vocab;
  std::string line;
  int32_t expected_id = 0;
  int lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string id_str, hex, rank_str;
    if (!std::getline(fields, id_str, '\t') || !std::getline(fields, hex, '\t') ||
        !std::getline(fields, rank_str)) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected id\\thex\\trank");
    }
    const std::string where = path + ":" + std::to_string(lineno);
    const int32_t id = std::stoi(id_str);
    if (id != expected_id) {
      throw std::runtime_error(where + ": ids must be dense, expected " +
                               std::to_string(expected_id) + " got " + std::to_string(id));
    }
    std::string piece = from_hex(hex, where);
    if (!piece.empty()) {
      if (!vocab.ids.emplace(piece, id).second) {
        throw std::runtime_error(where + ": duplicate token bytes 0x" + hex);
      }
    }
    vocab.pieces.push_back(std::move(piece));
    ++expected_id;
  }

  if (vocab.size() < Vocab::kBaseSize) {
    throw std::runtime_error(path + ": vocab smaller than the byte-fallback floor");
  }
  for (int b = 0; b < 256; ++b) {
    const std::string& piece = vocab.pieces[static_cast<size_t>(Vocab::kByteOffset + b)];
    if (piece.size() != 1 || static_cast<unsigned char>(piece[0]) != b) {
      throw std::runtime_error(path + ": id " + std::to_string(Vocab::kByteOffset + b) +
                               " must be the single byte " + std::to_string(b));
    }
  }
  return vocab;
}

int64_t sample_token_length(const Vocab& vocab, const MCQAItem& item) {
  std::string text = item.context + item.question;
  for (const std::string& option : item.options) text += option;
  return static_cast<int64_t>(encode(vocab, text, false).size());
}

}  // namespace panda

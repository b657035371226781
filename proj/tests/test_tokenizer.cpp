#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <string>
#include <vector>

#include "panda/rng.hpp"
#include "panda/tokenizer.hpp"

using namespace panda;

namespace {

// Random well-formed UTF-8: mixes ASCII with 2-, 3- and 4-byte sequences,
// avoiding the surrogate range.
std::string random_utf8(Rng& rng, size_t max_codepoints) {
  const size_t n = rng.uniform_index(max_codepoints + 1);
  std::string out;
  for (size_t i = 0; i < n; ++i) {
    uint32_t cp = 0;
    switch (rng.uniform_index(4)) {
      case 0: cp = 0x20 + static_cast<uint32_t>(rng.uniform_index(0x5f)); break;
      case 1: cp = 0x80 + static_cast<uint32_t>(rng.uniform_index(0x7ff - 0x80 + 1)); break;
      case 2:
        do {
          cp = 0x800 + static_cast<uint32_t>(rng.uniform_index(0xffff - 0x800 + 1));
        } while (cp >= 0xd800 && cp <= 0xdfff);
        break;
      default: cp = 0x10000 + static_cast<uint32_t>(rng.uniform_index(0x10ffff - 0x10000 + 1)); break;
    }
    if (cp < 0x80) {
      out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
      out.push_back(static_cast<char>(0xc0 | (cp >> 6)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
    } else if (cp < 0x10000) {
      out.push_back(static_cast<char>(0xe0 | (cp >> 12)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3f)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
    } else {
      out.push_back(static_cast<char>(0xf0 | (cp >> 18)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3f)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3f)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
    }
  }
  return out;
}

const std::string kCorpus =
    "the quick brown fox jumps over the lazy dog. "
    "熊猫吃竹子,熊猫住在中国。the panda eats bamboo. "
    "instruction tuning teaches the model to follow directions. "
    "the the the and and and of of of to to to";

}  // namespace

TEST_CASE("training learns merges on repetitive text") {
  const std::string corpus(64, 'a');
  Vocab vocab = train_bpe(corpus, 300);

  bool has_multi_a = false;
  for (const std::string& piece : vocab.pieces) {
    if (piece.size() > 1 && piece.find_first_not_of('a') == std::string::npos) has_multi_a = true;
  }
  CHECK(has_multi_a);
  CHECK(encode(vocab, corpus, false).size() < corpus.size());

  CHECK_THROWS_AS(train_bpe("", 300), std::invalid_argument);
  CHECK_THROWS_AS(train_bpe(corpus, 258), std::invalid_argument);
}

TEST_CASE("floor vocab size yields the pure byte vocabulary") {
  Vocab vocab = train_bpe("any text at all", 259);
  CHECK(vocab.size() == 259);
  std::vector<int32_t> ids = encode(vocab, "abc", false);
  CHECK(ids == std::vector<int32_t>{Vocab::kByteOffset + 'a', Vocab::kByteOffset + 'b',
                                    Vocab::kByteOffset + 'c'});
}

TEST_CASE("training is deterministic") {
  Vocab a = train_bpe(kCorpus, 320);
  Vocab b = train_bpe(kCorpus, 320);
  REQUIRE(a.pieces.size() == b.pieces.size());
  for (size_t i = 0; i < a.pieces.size(); ++i) REQUIRE(a.pieces[i] == b.pieces[i]);
}

TEST_CASE("encode and decode are total inverses") {
  Vocab vocab = train_bpe(kCorpus, 320);

  CHECK(encode(vocab, "", true) == std::vector<int32_t>{Vocab::kBos});
  CHECK(encode(vocab, "", false).empty());

  Rng rng(2024);
  for (int i = 0; i < 1000; ++i) {
    const std::string text = random_utf8(rng, 40);
    std::vector<int32_t> ids = encode(vocab, text, false);
    for (int32_t id : ids) {
      REQUIRE(id >= Vocab::kByteOffset);  // never PAD, BOS or EOS
      REQUIRE(id < vocab.size());
    }
    REQUIRE(decode(vocab, ids) == text);
    REQUIRE(ids.size() <= text.size());
  }

  // with BOS the round-trip still reproduces the text (BOS decodes to "")
  std::vector<int32_t> with_bos = encode(vocab, "hello 熊猫", true);
  CHECK(with_bos[0] == Vocab::kBos);
  CHECK(decode(vocab, with_bos) == "hello 熊猫");

  CHECK_THROWS_AS(decode(vocab, {vocab.size()}), std::out_of_range);
  CHECK_THROWS_AS(decode(vocab, {-1}), std::out_of_range);
}

TEST_CASE("merges compress the training corpus") {
  Vocab vocab = train_bpe(kCorpus, 320);
  CHECK(encode(vocab, kCorpus, false).size() < kCorpus.size());
}

TEST_CASE("vocab files round-trip") {
  Vocab vocab = train_bpe(kCorpus, 300);
  const std::string path = "test_vocab.tsv";
  save_vocab(vocab, path);
  Vocab loaded = load_vocab(path);

  REQUIRE(loaded.pieces.size() == vocab.pieces.size());
  for (size_t i = 0; i < vocab.pieces.size(); ++i) REQUIRE(loaded.pieces[i] == vocab.pieces[i]);
  CHECK(loaded.ids == vocab.ids);

  // same encoding behavior after the round-trip
  CHECK(encode(loaded, kCorpus, false) == encode(vocab, kCorpus, false));
  std::remove(path.c_str());
}

TEST_CASE("vocab loading validates the byte fallback") {
  const std::string path = "test_vocab_bad.tsv";

  {
    std::FILE* f = std::fopen(path.c_str(), "w");
    std::fputs("panda-vocab v2 pad=0 bos=1 eos=2\n", f);
    std::fclose(f);
  }
  CHECK_THROWS_WITH_AS(load_vocab(path), doctest::Contains("header"), std::runtime_error);

  {
    std::FILE* f = std::fopen(path.c_str(), "w");
    std::fputs("panda-vocab v1 pad=0 bos=1 eos=2\n", f);
    std::fputs("0\t\t-1\n1\t\t-1\n2\t\t-1\n", f);
    std::fclose(f);
  }
  CHECK_THROWS_WITH_AS(load_vocab(path), doctest::Contains("floor"), std::runtime_error);

  CHECK_THROWS_AS(load_vocab("no_such_vocab.tsv"), std::runtime_error);
  std::remove(path.c_str());
}

TEST_CASE("sample_token_length counts context, question and options") {
  Vocab bytes = Vocab::byte_fallback();

  MCQAItem empty;
  CHECK(sample_token_length(bytes, empty) == 0);

  MCQAItem ten;
  ten.context = "12345";
  ten.question = "678";
  ten.options = {"9", "0"};
  MCQAItem twenty;
  twenty.question = std::string(14, 'x');
  twenty.options = {"abc", "def"};
  CHECK(sample_token_length(bytes, ten) == 10);
  CHECK(sample_token_length(bytes, twenty) == 20);
  CHECK((sample_token_length(bytes, ten) + sample_token_length(bytes, twenty)) / 2 == 15);
}

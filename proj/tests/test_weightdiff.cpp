#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <bit>
#include <cstdio>
#include <cstdint>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "panda/checkpoint_io.hpp"
#include "panda/data.hpp"
#include "panda/rng.hpp"
#include "panda/tokenizer.hpp"
#include "panda/trainer.hpp"
#include "panda/weightdiff.hpp"

using namespace panda;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.dim = 8;
  cfg.n_heads = 2;
  cfg.n_layers = 1;
  cfg.vocab_size = 16;
  cfg.max_seq_len = 16;
  cfg.ffn_hidden = 12;
  return cfg;
}

// replaces one stored value of the named tensor, keeping everything else
Checkpoint with_value(const Checkpoint& ckpt, const std::string& name, size_t index, float value) {
  Checkpoint out = ckpt;
  std::vector<float> v = ckpt.tensor(name).data();
  v.at(index) = value;
  out.tensors.at(name) = Tensor::from_data(ckpt.tensor(name).shape(), std::move(v));
  return out;
}

bool bit_equal(const Checkpoint& a, const Checkpoint& b) {
  for (const auto& [name, t] : a.tensors) {
    const auto& va = t.data();
    const auto& vb = b.tensor(name).data();
    if (va.size() != vb.size()) return false;
    for (size_t i = 0; i < va.size(); ++i) {
      if (std::bit_cast<uint32_t>(va[i]) != std::bit_cast<uint32_t>(vb[i])) return false;
    }
  }
  return a.tensors.size() == b.tensors.size();
}

}  // namespace

TEST_CASE("the diff of a checkpoint with itself is zero") {
  Checkpoint base = init_checkpoint(tiny_config(), 3);
  WeightDiff diff = make_diff(base, base);
  for (const auto& [name, words] : diff.deltas) {
    for (uint32_t w : words) REQUIRE(w == 0);
  }
  CHECK(diff.base_fingerprint == diff.trained_fingerprint);

  Checkpoint back = apply_diff(base, diff);
  CHECK(checkpoint_fingerprint(back) == checkpoint_fingerprint(base));
  CHECK(bit_equal(back, base));
}

TEST_CASE("a single flipped weight yields exactly one nonzero delta") {
  Checkpoint base = init_checkpoint(tiny_config(), 5);
  Checkpoint base_with_one = with_value(base, "head", 7, 1.0f);
  Checkpoint trained = with_value(base, "head", 7, -1.0f);

  WeightDiff diff = make_diff(base_with_one, trained);
  int64_t nonzero = 0;
  for (const auto& [name, words] : diff.deltas) {
    for (uint32_t w : words) nonzero += (w != 0);
  }
  CHECK(nonzero == 1);
  // 1.0f and -1.0f differ exactly in the sign bit
  CHECK(diff.deltas.at("head")[7] == 0x80000000u);
}

TEST_CASE("round-trip is bit-exact even through non-finite patterns") {
  Checkpoint base = init_checkpoint(tiny_config(), 11);
  Rng rng(13);

  Checkpoint trained = base;
  for (auto& [name, t] : trained.tensors) {
    std::vector<float> v = t.data();
    for (float& x : v) {
      x += static_cast<float>(rng.normal(0.0, 0.05));
    }
    t = Tensor::from_data(t.shape(), std::move(v));
  }
  trained = with_value(trained, "tok_embed", 0, std::numeric_limits<float>::infinity());
  trained = with_value(trained, "tok_embed", 1, -std::numeric_limits<float>::infinity());
  trained = with_value(trained, "tok_embed", 2, std::bit_cast<float>(0x7FC00001u));  // NaN payload
  trained = with_value(trained, "tok_embed", 3, std::bit_cast<float>(0x00000001u));  // denormal
  trained = with_value(trained, "tok_embed", 4, -0.0f);
  trained.step = 42;

  WeightDiff diff = make_diff(base, trained);
  CHECK(diff.trained_step == 42);
  Checkpoint back = apply_diff(base, diff);
  CHECK(bit_equal(back, trained));
  CHECK(back.step == 42);
  CHECK(checkpoint_fingerprint(back) == diff.trained_fingerprint);
}

TEST_CASE("applying to the wrong base is refused with both hashes") {
  Checkpoint base = init_checkpoint(tiny_config(), 17);
  Checkpoint trained = with_value(base, "final_norm", 2, 3.0f);
  WeightDiff diff = make_diff(base, trained);

  // a single flipped mantissa bit is enough to change the fingerprint
  const float original = base.tensor("tok_embed").data()[5];
  const float tweaked = std::bit_cast<float>(std::bit_cast<uint32_t>(original) ^ 1u);
  Checkpoint other = with_value(base, "tok_embed", 5, tweaked);

  try {
    apply_diff(other, diff);
    FAIL("expected a fingerprint refusal");
  } catch (const std::runtime_error& e) {
    const std::string msg = e.what();
    CHECK(msg.find(hex_digest(checkpoint_fingerprint(other))) != std::string::npos);
    CHECK(msg.find(hex_digest(diff.base_fingerprint)) != std::string::npos);
  }

  Checkpoint config_mismatch = init_checkpoint([] {
    ModelConfig c = tiny_config();
    c.dim = 16;
    c.ffn_hidden = 24;
    return c;
  }(), 17);
  CHECK_THROWS_AS(apply_diff(config_mismatch, diff), std::invalid_argument);
}

TEST_CASE("schema mismatches are reported with tensor names") {
  Checkpoint base = init_checkpoint(tiny_config(), 19);
  Checkpoint other_config = init_checkpoint([] {
    ModelConfig c = tiny_config();
    c.n_layers = 2;
    return c;
  }(), 19);
  CHECK_THROWS_WITH_AS(make_diff(base, other_config), doctest::Contains("configs differ"),
                       std::invalid_argument);

  Checkpoint missing = base;
  missing.tensors.erase("head");
  CHECK_THROWS_WITH_AS(make_diff(base, missing), doctest::Contains("'head' missing from trained"),
                       std::invalid_argument);
}

TEST_CASE("diff files round-trip and reject corruption") {
  Checkpoint base = init_checkpoint(tiny_config(), 23);
  Checkpoint trained = with_value(base, "head", 0, 2.5f);
  trained.step = 7;
  WeightDiff diff = make_diff(base, trained);

  const std::string path = "weightdiff_test.pndd";
  save_diff(diff, path);
  WeightDiff loaded = load_diff(path);
  CHECK(loaded.config == diff.config);
  CHECK(loaded.trained_step == 7);
  CHECK(loaded.base_fingerprint == diff.base_fingerprint);
  CHECK(loaded.trained_fingerprint == diff.trained_fingerprint);
  REQUIRE(loaded.deltas.size() == diff.deltas.size());
  for (const auto& [name, words] : diff.deltas) {
    REQUIRE(loaded.deltas.at(name) == words);
  }
  CHECK(bit_equal(apply_diff(base, loaded), trained));

  // flip one byte inside the first tensor's delta payload
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    REQUIRE(f.good());
    // header: magic+version 8, six u64 + two f32 + step u64 = 64, digests 64
    // first record: name "tok_embed" 4+9, rank 4, two extents 16
    const std::streamoff offset = 8 + 64 + 64 + 4 + 9 + 4 + 16 + 10;
    f.seekg(offset);
    char byte = 0;
    f.read(&byte, 1);
    byte = static_cast<char>(byte ^ 0x10);
    f.seekp(offset);
    f.write(&byte, 1);
  }
  CHECK_THROWS_WITH_AS(load_diff(path), doctest::Contains("corrupted"), std::runtime_error);
  std::remove(path.c_str());
}

TEST_CASE("a real training run's diff reconstructs the trained weights") {
  const std::string corpus_path = "weightdiff_corpus.txt";
  {
    std::ofstream os(corpus_path, std::ios::trunc);
    os << "round trips must be exact\nbit patterns never lie\n";
  }

  Checkpoint base = init_checkpoint(
      [] {
        ModelConfig c = tiny_config();
        c.vocab_size = 259;
        return c;
      }(),
      29);
  Vocab vocab = Vocab::byte_fallback();
  DatasetSpec spec;
  spec.name = "corpus";
  spec.path = corpus_path;
  MixturePlan plan;
  plan.specs = {spec};
  plan.seed = 31;
  SampleStream stream(plan, vocab, 16);

  TrainConfig cfg;
  cfg.base_lr = 0.05;
  cfg.effective_batch = 2;
  cfg.micro_batch = 1;
  cfg.max_steps = 3;
  TrainResult result = train(base, stream, cfg);

  WeightDiff diff = make_diff(base, result.checkpoint);
  Checkpoint back = apply_diff(base, diff);
  CHECK(bit_equal(back, result.checkpoint));
  CHECK(checkpoint_fingerprint(back) == checkpoint_fingerprint(result.checkpoint));
  std::remove(corpus_path.c_str());
}

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "panda/data.hpp"
#include "panda/mcqa.hpp"
#include "panda/model.hpp"
#include "panda/trainer.hpp"

namespace panda {

// Twenty lines of exactly 32 ASCII characters each, every line opening with
// a different four-character prefix. Small enough to memorize quickly, long
// enough that a regenerated line proves real sequence modeling.
std::string tiny_corpus_text();

// Model and trainer settings that memorize the tiny corpus: a wide-FFN
// single-layer decoder trained full-batch at kOverfitWindow, which aligns
// every sample with one line plus its EOS. Plain SGD reaches the memorizing
// basin only for particular learning-rate and seed pairs, so the values here
// are pinned empirically; retune before changing any of them.
ModelConfig overfit_config();
TrainConfig overfit_train_config();
inline constexpr int64_t kOverfitWindow = 33;  // one 32-char line + EOS

// Zero-layer model that gives the single-byte token `boosted` an enormous
// logit from every position: one-hot embeddings and one all-`gain` head row.
Checkpoint planted_checkpoint(unsigned char boosted, float gain = 5.0f);

// Four-option items whose gold answer is always the single character
// `gold_char`, placed at a varying index; `foil` appears among the wrong
// options of every item. A model that always picks `gold_char` scores 1.0,
// one that always picks `foil` scores 0.0.
std::vector<MCQAItem> planted_eval_items(int n, unsigned char gold_char, unsigned char foil,
                                         uint64_t seed);

// Four-option items with distinct random two-character options and a
// uniformly random gold index, for chance-level checks.
std::vector<MCQAItem> random_eval_items(int n, uint64_t seed);

void write_mcqa_jsonl(const std::vector<MCQAItem>& items, const std::string& path);

// Writes five plain-text corpora and one instruction dataset under dir with
// byte sizes proportional to the published training mixture; the instruction
// set is marked for stage 2 with two epochs. Every file lands on its byte
// target exactly, so recomputed proportions match the published table.
std::vector<DatasetSpec> write_mixture_corpora(const std::string& dir, int64_t total_bytes,
                                               uint64_t seed);

}  // namespace panda

#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "panda/mcqa.hpp"
#include "panda/model.hpp"
#include "panda/tokenizer.hpp"

namespace panda {

enum class ScoreMode { Sum, Mean };

const char* score_mode_name(ScoreMode mode);

struct ItemScore {
  std::vector<double> option_scores;
  int predicted = -1;
  int gold = -1;
  bool correct = false;
  bool skipped = false;
  std::string skip_reason;
};

struct EvalReport {
  std::string dataset_name;
  int64_t n_samples = 0;  // input item count, including skipped ones
  int64_t skipped = 0;
  double accuracy = 0.0;  // correct / (n_samples - skipped)
  double avg_token_length = 0.0;
  ScoreMode mode = ScoreMode::Mean;
  std::vector<ItemScore> items;
};

// First index of the maximum, so ties go to the lowest index.
int argmax_lowest(const std::vector<double>& scores);

// Log-likelihood of one option under the model. The scored sequence is
// BOS + context + "\n" + question + "\n" followed by the option tokens; the
// option is encoded separately so its score covers exactly its own tokens.
// Sum mode adds the option tokens' log-probabilities, mean mode divides by
// the token count. An overlong prefix is truncated from the left, keeping
// BOS. An option that encodes to zero tokens is an error.
double score_option(const Checkpoint& ckpt, const Vocab& vocab, const MCQAItem& item,
                    size_t option_index, ScoreMode mode);

// Scores every option of every item; the prediction is the argmax with ties
// to the lowest index. Items that cannot be scored (fewer than two options,
// gold index out of range, an option with zero tokens) are skipped and
// counted. An empty dataset is an error.
EvalReport evaluate(const Checkpoint& ckpt, const Vocab& vocab, const std::string& dataset_name,
                    const std::vector<MCQAItem>& items, ScoreMode mode);

// (item count, mean token length over context + question + options).
// An empty dataset yields (0, 0) and a warning on stderr.
std::pair<int64_t, double> dataset_stats(const std::vector<MCQAItem>& items, const Vocab& vocab);

// JSON Lines with keys "question", "options", "gold", optional "context"
// and "format". Structural problems are errors naming the line.
std::vector<MCQAItem> load_mcqa_jsonl(const std::string& path);

// Aligned text table, one row per report.
std::string format_report_table(const std::vector<EvalReport>& reports);

// One JSON line per item with its scores, prediction and gold index.
void write_item_scores_jsonl(const EvalReport& report, const std::string& path);

}  // namespace panda

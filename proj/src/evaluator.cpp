#include "panda/evaluator.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "panda/ops.hpp"

namespace panda {

const char* score_mode_name(ScoreMode mode) {
  return mode == ScoreMode::Sum ? "sum" : "mean";
}

int argmax_lowest(const std::vector<double>& scores) {
  if (scores.empty()) throw std::invalid_argument("argmax over no scores");
  int best = 0;
  for (int i = 1; i < static_cast<int>(scores.size()); ++i) {
    if (scores[static_cast<size_t>(i)] > scores[static_cast<size_t>(best)]) best = i;
  }
  return best;
}

namespace {

std::string scoring_prefix(const MCQAItem& item) {
  return item.context + "\n" + item.question + "\n";
}

// log softmax(row)[target], accumulated in double
double log_prob_at(const std::vector<float>& logits, int64_t row, int64_t vocab, int32_t target) {
  const float* x = logits.data() + row * vocab;
  double mx = x[0];
  for (int64_t j = 1; j < vocab; ++j) {
    mx = std::max(mx, static_cast<double>(x[j]));
  }
  double denom = 0.0;
  for (int64_t j = 0; j < vocab; ++j) {
    denom += std::exp(static_cast<double>(x[j]) - mx);
  }
  return static_cast<double>(x[target]) - mx - std::log(denom);
}

double score_tokens(const Checkpoint& ckpt, std::vector<int32_t> prefix,
                    const std::vector<int32_t>& option_ids, ScoreMode mode) {
  const int64_t max_len = ckpt.config.max_seq_len;
  const auto option_len = static_cast<int64_t>(option_ids.size());
  if (option_len + 1 > max_len) {
    throw std::invalid_argument("option is longer than the model window");
  }
  const int64_t overflow = static_cast<int64_t>(prefix.size()) + option_len - max_len;
  if (overflow > 0) {
    prefix.erase(prefix.begin() + 1, prefix.begin() + 1 + overflow);
  }

  std::vector<int32_t> full = prefix;
  full.insert(full.end(), option_ids.begin(), option_ids.end());
  Tensor logits = forward(ckpt, full);

  const int64_t start = static_cast<int64_t>(prefix.size());
  double total = 0.0;
  for (int64_t j = 0; j < option_len; ++j) {
    total += log_prob_at(logits.data(), start - 1 + j, ckpt.config.vocab_size,
                         option_ids[static_cast<size_t>(j)]);
  }
  if (mode == ScoreMode::Mean) {
    total /= static_cast<double>(option_len);
  }
  return total;
}

}  // namespace

double score_option(const Checkpoint& ckpt, const Vocab& vocab, const MCQAItem& item,
                    size_t option_index, ScoreMode mode) {
  if (option_index >= item.options.size()) {
    throw std::invalid_argument("option index out of range");
  }
  std::vector<int32_t> option_ids = encode(vocab, item.options[option_index], false);
  if (option_ids.empty()) {
    std::ostringstream msg;
    msg << "option " << option_index << " tokenizes to zero tokens";
    throw std::invalid_argument(msg.str());
  }
  std::vector<int32_t> prefix = encode(vocab, scoring_prefix(item), true);
  return score_tokens(ckpt, std::move(prefix), option_ids, mode);
}

EvalReport evaluate(const Checkpoint& ckpt, const Vocab& vocab, const std::string& dataset_name,
                    const std::vector<MCQAItem>& items, ScoreMode mode) {
  if (items.empty()) {
    throw std::invalid_argument("evaluation dataset '" + dataset_name + "' is empty");
  }

  EvalReport report;
  report.dataset_name = dataset_name;
  report.n_samples = static_cast<int64_t>(items.size());
  report.mode = mode;
  report.items.reserve(items.size());

  int64_t correct = 0;
  for (const MCQAItem& item : items) {
    ItemScore score;
    score.gold = item.gold_index;

    std::string why;
    if (item.options.size() < 2) {
      why = "fewer than two options";
    } else if (item.gold_index < 0 ||
               item.gold_index >= static_cast<int>(item.options.size())) {
      why = "gold index out of range";
    } else {
      for (size_t i = 0; i < item.options.size() && why.empty(); ++i) {
        if (encode(vocab, item.options[i], false).empty()) {
          why = "option " + std::to_string(i) + " tokenizes to zero tokens";
        }
      }
    }
    if (!why.empty()) {
      score.skipped = true;
      score.skip_reason = why;
      ++report.skipped;
      report.items.push_back(std::move(score));
      continue;
    }

    score.option_scores.reserve(item.options.size());
    for (size_t i = 0; i < item.options.size(); ++i) {
      score.option_scores.push_back(score_option(ckpt, vocab, item, i, mode));
    }
    score.predicted = argmax_lowest(score.option_scores);
    score.correct = score.predicted == score.gold;
    correct += score.correct;
    report.items.push_back(std::move(score));
  }

  const int64_t scored = report.n_samples - report.skipped;
  report.accuracy = scored > 0 ? static_cast<double>(correct) / static_cast<double>(scored) : 0.0;
  report.avg_token_length = dataset_stats(items, vocab).second;
  return report;
}

std::pair<int64_t, double> dataset_stats(const std::vector<MCQAItem>& items, const Vocab& vocab) {
  if (items.empty()) {
    std::cerr << "warning: dataset statistics requested for an empty dataset\n";
    return {0, 0.0};
  }
  double total = 0.0;
  for (const MCQAItem& item : items) {
    total += static_cast<double>(sample_token_length(vocab, item));
  }
  return {static_cast<int64_t>(items.size()), total / static_cast<double>(items.size())};
}

std::vector<MCQAItem> load_mcqa_jsonl(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error(path + ": cannot open");
  std::vector<MCQAItem> items;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string where = path + ":" + std::to_string(lineno);
    nlohmann::json record;
    try {
      record = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw std::runtime_error(where + ": invalid JSON: " + e.what());
    }
    if (!record.is_object()) throw std::runtime_error(where + ": record must be an object");

    MCQAItem item;
    if (!record.contains("question") || !record["question"].is_string()) {
      throw std::runtime_error(where + ": missing string field \"question\"");
    }
    item.question = record["question"].get<std::string>();
    if (!record.contains("options") || !record["options"].is_array()) {
      throw std::runtime_error(where + ": missing array field \"options\"");
    }
    for (const auto& opt : record["options"]) {
      if (!opt.is_string()) throw std::runtime_error(where + ": every option must be a string");
      item.options.push_back(opt.get<std::string>());
    }
    if (item.options.size() < 2) {
      throw std::runtime_error(where + ": an item needs at least two options");
    }
    if (!record.contains("gold") || !record["gold"].is_number_integer()) {
      throw std::runtime_error(where + ": missing integer field \"gold\"");
    }
    const int64_t gold = record["gold"].get<int64_t>();
    if (gold < 0 || gold >= static_cast<int64_t>(item.options.size())) {
      std::ostringstream msg;
      msg << where << ": gold index " << gold << " out of range for " << item.options.size()
          << " options";
      throw std::runtime_error(msg.str());
    }
    item.gold_index = static_cast<int>(gold);
    if (record.contains("context")) {
      if (!record["context"].is_string()) {
        throw std::runtime_error(where + ": \"context\" must be a string");
      }
      item.context = record["context"].get<std::string>();
    }
    if (record.contains("format")) {
      if (!record["format"].is_string()) {
        throw std::runtime_error(where + ": \"format\" must be a string");
      }
      item.format = record["format"].get<std::string>();
    }
    items.push_back(std::move(item));
  }
  return items;
}

std::string format_report_table(const std::vector<EvalReport>& reports) {
  std::ostringstream out;
  out << std::left << std::setw(24) << "dataset" << std::right << std::setw(8) << "items"
      << std::setw(9) << "skipped" << std::setw(12) << "avg_tokens" << std::setw(6) << "mode"
      << std::setw(10) << "accuracy" << '\n';
  for (const EvalReport& r : reports) {
    out << std::left << std::setw(24) << r.dataset_name << std::right << std::setw(8)
        << r.n_samples << std::setw(9) << r.skipped << std::setw(12) << std::fixed
        << std::setprecision(1) << r.avg_token_length << std::setw(6) << score_mode_name(r.mode)
        << std::setw(10) << std::setprecision(4) << r.accuracy << '\n';
    out.unsetf(std::ios::fixed);
    out << std::setprecision(6);
  }
  return out.str();
}

void write_item_scores_jsonl(const EvalReport& report, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write item scores to " + path);
  for (size_t i = 0; i < report.items.size(); ++i) {
    const ItemScore& s = report.items[i];
    nlohmann::json record;
    record["index"] = i;
    record["gold"] = s.gold;
    if (s.skipped) {
      record["skipped"] = true;
      record["reason"] = s.skip_reason;
    } else {
      record["scores"] = s.option_scores;
      record["predicted"] = s.predicted;
      record["correct"] = s.correct;
    }
    out << record.dump() << '\n';
  }
}

}  // namespace panda

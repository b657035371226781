#include "panda/data.hpp"

#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace panda {

const char* const kPromptHeader = "Below is an instruction. Write a response.\n";

std::vector<double> compute_proportions(const std::vector<DatasetSpec>& specs) {
  double total = 0.0;
  for (const DatasetSpec& s : specs) {
    if (s.epochs < 1) {
      throw std::invalid_argument("dataset '" + s.name + "': epochs must be at least 1");
    }
    total += static_cast<double>(s.epochs) * static_cast<double>(s.size_bytes);
  }
  if (!(total > 0.0)) {
    throw std::invalid_argument("compute_proportions: total weighted size is zero");
  }
  std::vector<double> out;
  out.reserve(specs.size());
  for (const DatasetSpec& s : specs) {
    out.push_back(static_cast<double>(s.epochs) * static_cast<double>(s.size_bytes) / total);
  }
  return out;
}

std::vector<std::string> load_plain(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error(path + ": cannot open");
  std::vector<std::string> documents;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) documents.push_back(line);
  }
  return documents;
}

std::vector<InstructExample> load_instruct(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error(path + ": cannot open");
  std::vector<InstructExample> examples;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = path + ":" + std::to_string(lineno);
    nlohmann::json record;
    try {
      record = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw std::runtime_error(where + ": invalid JSON: " + e.what());
    }
    if (!record.is_object()) throw std::runtime_error(where + ": record must be an object");

    InstructExample ex;
    if (!record.contains("instruction") || !record["instruction"].is_string()) {
      throw std::runtime_error(where + ": missing string field \"instruction\"");
    }
    if (!record.contains("output") || !record["output"].is_string()) {
      throw std::runtime_error(where + ": missing string field \"output\"");
    }
    ex.instruction = record["instruction"].get<std::string>();
    ex.output = record["output"].get<std::string>();
    if (record.contains("input")) {
      if (!record["input"].is_string()) {
        throw std::runtime_error(where + ": \"input\" must be a string");
      }
      ex.input = record["input"].get<std::string>();
    }
    if (ex.instruction.empty()) throw std::runtime_error(where + ": \"instruction\" is empty");
    if (ex.output.empty()) throw std::runtime_error(where + ": \"output\" is empty");
    examples.push_back(std::move(ex));
  }
  return examples;
}

std::string render_prompt(const InstructExample& ex) {
  std::string prompt = std::string(kPromptHeader) + "### Instruction:\n" + ex.instruction + "\n";
  if (!ex.input.empty()) {
    prompt += "### Input:\n" + ex.input + "\n";
  }
  prompt += "### Response:\n";
  return prompt;
}

std::string render_example(const InstructExample& ex) { return render_prompt(ex) + ex.output; }

TokenBatch format_instruct(const InstructExample& ex, const Vocab& vocab,
                           const std::string& source) {
  if (ex.instruction.empty()) {
    throw std::invalid_argument("format_instruct: instruction is empty");
  }
  if (ex.output.empty()) throw std::invalid_argument("format_instruct: output is empty");

  TokenBatch batch;
  batch.source = source;
  batch.ids = encode(vocab, render_prompt(ex), true);
  batch.loss_mask.assign(batch.ids.size(), 0);

  std::vector<int32_t> output_ids = encode(vocab, ex.output, false);
  for (int32_t id : output_ids) {
    batch.ids.push_back(id);
    batch.loss_mask.push_back(1);
  }
  batch.ids.push_back(Vocab::kEos);
  batch.loss_mask.push_back(1);
  return batch;
}

std::vector<TokenBatch> pack_plain(const std::vector<std::string>& documents, const Vocab& vocab,
                                   int64_t window, const std::string& source) {
  if (window < 2) throw std::invalid_argument("pack_plain: window must be at least 2");

  std::vector<int32_t> stream;
  for (const std::string& doc : documents) {
    std::vector<int32_t> ids = encode(vocab, doc, false);
    stream.insert(stream.end(), ids.begin(), ids.end());
    stream.push_back(Vocab::kEos);
  }

  std::vector<TokenBatch> batches;
  for (size_t off = 0; off < stream.size(); off += static_cast<size_t>(window)) {
    TokenBatch batch;
    batch.source = source;
    const size_t real = std::min(stream.size() - off, static_cast<size_t>(window));
    batch.ids.assign(stream.begin() + static_cast<std::ptrdiff_t>(off),
                     stream.begin() + static_cast<std::ptrdiff_t>(off + real));
    batch.loss_mask.assign(real, 1);
    batch.ids.resize(static_cast<size_t>(window), Vocab::kPad);
    batch.loss_mask.resize(static_cast<size_t>(window), 0);
    batches.push_back(std::move(batch));
  }
  return batches;
}

SampleStream::SampleStream(const MixturePlan& plan, const Vocab& vocab, int64_t window)
    : plan_(plan), rng_(plan.seed) {
  if (plan.specs.empty()) throw std::invalid_argument("mixture plan lists no datasets");

  for (const DatasetSpec& spec : plan.specs) {
    if (spec.epochs < 1) {
      throw std::invalid_argument("dataset '" + spec.name + "': epochs must be at least 1");
    }
    Prepared prepared;
    prepared.spec = spec;
    prepared.spec.size_bytes =
        static_cast<int64_t>(std::filesystem::file_size(std::filesystem::path(spec.path)));
    if (spec.kind == DatasetKind::PlainText) {
      prepared.samples = pack_plain(load_plain(spec.path), vocab, window, spec.name);
    } else {
      for (const InstructExample& ex : load_instruct(spec.path)) {
        prepared.samples.push_back(format_instruct(ex, vocab, spec.name));
      }
    }
    if (prepared.samples.empty()) {
      throw std::invalid_argument("dataset '" + spec.name + "' produced no samples");
    }
    specs_.push_back(prepared.spec);
    datasets_.push_back(std::move(prepared));
  }
  weights_.clear();
  for (const DatasetSpec& spec : specs_) {
    weights_.push_back(static_cast<double>(spec.epochs) * static_cast<double>(spec.size_bytes));
  }
  cursors_.assign(datasets_.size(), 0);
}

int64_t SampleStream::total_samples() const {
  int64_t total = 0;
  for (const Prepared& d : datasets_) {
    total += d.spec.epochs * static_cast<int64_t>(d.samples.size());
  }
  return total;
}

std::optional<TokenBatch> SampleStream::next() {
  if (plan_.mode == MixMode::Mixed) {
    const size_t pick = rng_.categorical(weights_);
    const Prepared& d = datasets_[pick];
    TokenBatch batch = d.samples[cursors_[pick] % d.samples.size()];
    cursors_[pick]++;
    return batch;
  }

  while (staged_dataset_ < datasets_.size()) {
    const Prepared& d = datasets_[staged_dataset_];
    if (staged_index_ < d.samples.size()) {
      return d.samples[staged_index_++];
    }
    staged_index_ = 0;
    if (++staged_epoch_ < d.spec.epochs) continue;
    staged_epoch_ = 0;
    ++staged_dataset_;
  }
  return std::nullopt;
}

void SampleStream::reset() {
  rng_ = Rng(plan_.seed);
  cursors_.assign(datasets_.size(), 0);
  staged_dataset_ = 0;
  staged_epoch_ = 0;
  staged_index_ = 0;
}

}  // namespace panda

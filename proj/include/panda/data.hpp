#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "panda/rng.hpp"
#include "panda/tokenizer.hpp"

namespace panda {

enum class DatasetKind { PlainText, Instruct };
enum class MixMode { Mixed, Staged };

struct DatasetSpec {
  std::string name;
  std::string path;
  DatasetKind kind = DatasetKind::PlainText;
  int64_t epochs = 1;
  int stage = 1;  // which training stage consumes this dataset
  int64_t size_bytes = 0;  // measured at ingestion
  std::optional<double> declared_proportion;

  bool operator==(const DatasetSpec&) const = default;
};

struct InstructExample {
  std::string instruction;
  std::string input;  // optional; empty means absent
  std::string output;
};

struct TokenBatch {
  std::vector<int32_t> ids;
  std::vector<uint8_t> loss_mask;  // 1 where the token is a training target
  std::string source;
};

struct MixturePlan {
  std::vector<DatasetSpec> specs;
  MixMode mode = MixMode::Mixed;
  uint64_t seed = 0;
};

// p_i = epochs_i * size_i / sum_j epochs_j * size_j
std::vector<double> compute_proportions(const std::vector<DatasetSpec>& specs);

// One document per line; empty lines are skipped.
std::vector<std::string> load_plain(const std::string& path);

// JSON Lines with keys "instruction", optional "input", "output". Malformed
// lines and empty required fields are errors naming the line.
std::vector<InstructExample> load_instruct(const std::string& path);

// The prompt template is fixed; the Input block disappears entirely when the
// example has no input.
extern const char* const kPromptHeader;
std::string render_prompt(const InstructExample& ex);      // everything before the output
std::string render_example(const InstructExample& ex);     // prompt plus output

// [BOS] + prompt tokens (mask 0) + output tokens + EOS (mask 1). Prompt and
// output are encoded separately so the mask boundary is exact.
TokenBatch format_instruct(const InstructExample& ex, const Vocab& vocab,
                           const std::string& source);

// Tokenizes each document, appends EOS after it, and chops the concatenated
// stream into length-T windows. The tail window is padded with PAD, mask 0
// on pads, mask 1 everywhere else.
std::vector<TokenBatch> pack_plain(const std::vector<std::string>& documents, const Vocab& vocab,
                                   int64_t window, const std::string& source);

// Deterministic sample iterator over a mixture plan. Mixed mode draws the
// dataset by its epochs*size proportion each step and cycles within each
// dataset; staged mode walks datasets in plan order, each repeated for its
// epoch count, and then ends.
class SampleStream {
 public:
  SampleStream(const MixturePlan& plan, const Vocab& vocab, int64_t window);

  bool finite() const { return plan_.mode == MixMode::Staged; }
  int64_t total_samples() const;  // per full pass, counting epochs

  std::optional<TokenBatch> next();
  void reset();

  const MixturePlan& plan() const { return plan_; }
  // specs with measured size_bytes filled in
  const std::vector<DatasetSpec>& specs() const { return specs_; }

 private:
  struct Prepared {
    DatasetSpec spec;
    std::vector<TokenBatch> samples;
  };

  MixturePlan plan_;
  std::vector<DatasetSpec> specs_;
  std::vector<Prepared> datasets_;
  std::vector<double> weights_;
  Rng rng_;
  std::vector<size_t> cursors_;
  size_t staged_dataset_ = 0;
  int64_t staged_epoch_ = 0;
  size_t staged_index_ = 0;
};

}  // namespace panda

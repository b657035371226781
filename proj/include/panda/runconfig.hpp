#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "panda/data.hpp"
#include "panda/evaluator.hpp"
#include "panda/model.hpp"
#include "panda/trainer.hpp"

namespace panda {

struct EvalSpec {
  std::string name;
  std::string path;

  bool operator==(const EvalSpec&) const = default;
};

// Controls what `prepare` generates.
struct SynthSpec {
  int64_t total_bytes = 50000;  // summed over the six mixture corpora
  int64_t eval_items = 64;

  bool operator==(const SynthSpec&) const = default;
};

struct GenerateSpec {
  int64_t max_new_tokens = 64;
  double temperature = 0.0;

  bool operator==(const GenerateSpec&) const = default;
};

// One JSON file drives every verb. Paths may start with "@out/", which
// resolves under the effective output directory, so a recipe can reference
// files a previous verb produced without hardcoding the run location.
struct RunConfig {
  uint64_t seed = 0;
  std::string out_dir = "runs/default";
  std::string vocab_path;  // empty selects the plain byte-fallback vocab
  int64_t window = 256;
  MixMode mix_mode = MixMode::Mixed;
  ScoreMode score_mode = ScoreMode::Mean;
  std::vector<int64_t> marks;  // stage-2 snapshot steps
  int32_t tokenizer_vocab_size = 512;
  ModelConfig model = ModelConfig::desk_default();
  TrainConfig stage1;
  TrainConfig stage2;
  std::vector<DatasetSpec> datasets;
  std::vector<EvalSpec> evals;
  SynthSpec synth;
  GenerateSpec generate;

  bool operator==(const RunConfig&) const = default;
};

// Carries every problem found in one pass; what() joins them line by line.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(std::vector<std::string> errors);
  const std::vector<std::string>& errors() const { return errors_; }

 private:
  std::vector<std::string> errors_;
};

// Strict parse: unknown keys anywhere are errors, and validation reports the
// full list of violations rather than stopping at the first.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);

// Emits JSON that parse_run_config reads back into an equal RunConfig.
std::string serialize_run_config(const RunConfig& cfg);

// out_dir, prefixed by $PANDA_OUT_ROOT when that is set and out_dir is
// relative. Every verb writes only beneath this directory.
std::string effective_out_dir(const RunConfig& cfg);

// Expands a leading "@out/" to the effective output directory; other paths
// pass through untouched.
std::string resolve_path(const RunConfig& cfg, const std::string& path);

const char* mix_mode_name(MixMode mode);
const char* stage_tag_name(StageTag tag);

}  // namespace panda

#include "panda/runconfig.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "panda/tokenizer.hpp"

namespace panda {

namespace {

std::string join_errors(const std::vector<std::string>& errors) {
  std::string joined = "config invalid:";
  for (const auto& e : errors) {
    joined += "\n  ";
    joined += e;
  }
  return joined;
}

// Accumulates problems across the whole file so a user sees every typo and
// constraint violation in one run.
struct Collector {
  std::vector<std::string> errors;

  void add(const std::string& field, const std::string& constraint) {
    errors.push_back(field + ": " + constraint);
  }
};

using Json = nlohmann::json;

void reject_unknown_keys(const Json& obj, const std::string& prefix,
                         const std::set<std::string>& known, Collector& out) {
  for (const auto& item : obj.items()) {
    if (!known.count(item.key()))
      out.add(prefix.empty() ? item.key() : prefix + "." + item.key(), "unknown key");
  }
}

bool fetch_i64(const Json& obj, const std::string& prefix, const std::string& key, int64_t& dst,
               Collector& out) {
  auto it = obj.find(key);
  if (it == obj.end()) return false;
  std::string field = prefix.empty() ? key : prefix + "." + key;
  if (!it->is_number_integer() && !it->is_number_unsigned()) {
    out.add(field, "must be an integer");
    return false;
  }
  dst = it->get<int64_t>();
  return true;
}

bool fetch_u64(const Json& obj, const std::string& prefix, const std::string& key, uint64_t& dst,
               Collector& out) {
  auto it = obj.find(key);
  if (it == obj.end()) return false;
  std::string field = prefix.empty() ? key : prefix + "." + key;
  if (it->is_number_unsigned()) {
    dst = it->get<uint64_t>();
    return true;
  }
  if (it->is_number_integer()) {
    int64_t v = it->get<int64_t>();
    if (v < 0) {
      out.add(field, "must be non-negative");
      return false;
    }
    dst = static_cast<uint64_t>(v);
    return true;
  }
  out.add(field, "must be a non-negative integer");
  return false;
}

bool fetch_f64(const Json& obj, const std::string& prefix, const std::string& key, double& dst,
               Collector& out) {
  auto it = obj.find(key);
  if (it == obj.end()) return false;
  std::string field = prefix.empty() ? key : prefix + "." + key;
  if (!it->is_number()) {
    out.add(field, "must be a number");
    return false;
  }
  dst = it->get<double>();
  return true;
}

bool fetch_str(const Json& obj, const std::string& prefix, const std::string& key,
               std::string& dst, Collector& out) {
  auto it = obj.find(key);
  if (it == obj.end()) return false;
  std::string field = prefix.empty() ? key : prefix + "." + key;
  if (!it->is_string()) {
    out.add(field, "must be a string");
    return false;
  }
  dst = it->get<std::string>();
  return true;
}

void parse_model(const Json& obj, ModelConfig& model, Collector& out) {
  if (!obj.is_object()) {
    out.add("model", "must be an object");
    return;
  }
  reject_unknown_keys(
      obj, "model", {"dim", "n_heads", "n_layers", "vocab_size", "max_seq_len", "ffn_hidden"},
      out);
  fetch_i64(obj, "model", "dim", model.dim, out);
  fetch_i64(obj, "model", "n_heads", model.n_heads, out);
  fetch_i64(obj, "model", "n_layers", model.n_layers, out);
  fetch_i64(obj, "model", "vocab_size", model.vocab_size, out);
  fetch_i64(obj, "model", "max_seq_len", model.max_seq_len, out);
  fetch_i64(obj, "model", "ffn_hidden", model.ffn_hidden, out);

  if (model.dim < 1) out.add("model.dim", "must be positive");
  if (model.n_heads < 1) out.add("model.n_heads", "must be positive");
  if (model.n_layers < 0) out.add("model.n_layers", "must be non-negative");
  if (model.vocab_size < 1) out.add("model.vocab_size", "must be positive");
  if (model.max_seq_len < 1) out.add("model.max_seq_len", "must be positive");
  if (model.ffn_hidden < 1) out.add("model.ffn_hidden", "must be positive");
  if (model.dim >= 1 && model.n_heads >= 1) {
    if (model.dim % model.n_heads != 0)
      out.add("model.dim", "must be divisible by model.n_heads");
    else if ((model.dim / model.n_heads) % 2 != 0)
      out.add("model.dim", "head size must be even for rotary embedding");
  }
}

void parse_stage(const Json& obj, const std::string& prefix, TrainConfig& cfg, Collector& out) {
  if (!obj.is_object()) {
    out.add(prefix, "must be an object");
    return;
  }
  reject_unknown_keys(obj, prefix,
                      {"base_lr", "warmup_frac", "effective_batch", "micro_batch", "max_steps",
                       "weight_decay"},
                      out);
  fetch_f64(obj, prefix, "base_lr", cfg.base_lr, out);
  fetch_f64(obj, prefix, "warmup_frac", cfg.warmup_frac, out);
  fetch_i64(obj, prefix, "effective_batch", cfg.effective_batch, out);
  fetch_i64(obj, prefix, "micro_batch", cfg.micro_batch, out);
  fetch_i64(obj, prefix, "max_steps", cfg.max_steps, out);
  fetch_f64(obj, prefix, "weight_decay", cfg.weight_decay, out);

  if (!(cfg.base_lr > 0.0)) out.add(prefix + ".base_lr", "must be positive");
  if (!(cfg.warmup_frac >= 0.0 && cfg.warmup_frac <= 1.0))
    out.add(prefix + ".warmup_frac", "must be between 0 and 1");
  if (cfg.effective_batch < 1) out.add(prefix + ".effective_batch", "must be positive");
  if (cfg.micro_batch < 1)
    out.add(prefix + ".micro_batch", "must be positive");
  else if (cfg.effective_batch >= 1 && cfg.effective_batch % cfg.micro_batch != 0)
    out.add(prefix + ".micro_batch", "must divide effective_batch");
  if (cfg.max_steps < 1) out.add(prefix + ".max_steps", "must be positive");
  if (!(cfg.weight_decay >= 0.0)) out.add(prefix + ".weight_decay", "must be non-negative");
}

void parse_datasets(const Json& arr, std::vector<DatasetSpec>& specs, Collector& out) {
  if (!arr.is_array()) {
    out.add("datasets", "must be an array");
    return;
  }
  std::set<std::string> seen;
  for (size_t i = 0; i < arr.size(); ++i) {
    std::string prefix = "datasets[" + std::to_string(i) + "]";
    const Json& obj = arr[i];
    if (!obj.is_object()) {
      out.add(prefix, "must be an object");
      continue;
    }
    reject_unknown_keys(obj, prefix,
                        {"name", "path", "kind", "epochs", "stage", "declared_proportion"}, out);
    DatasetSpec spec;
    fetch_str(obj, prefix, "name", spec.name, out);
    fetch_str(obj, prefix, "path", spec.path, out);
    std::string kind = "plain";
    fetch_str(obj, prefix, "kind", kind, out);
    fetch_i64(obj, prefix, "epochs", spec.epochs, out);
    int64_t stage = spec.stage;
    fetch_i64(obj, prefix, "stage", stage, out);
    spec.stage = static_cast<int>(stage);
    double declared = 0.0;
    if (fetch_f64(obj, prefix, "declared_proportion", declared, out)) {
      if (declared > 0.0 && declared <= 100.0)
        spec.declared_proportion = declared;
      else
        out.add(prefix + ".declared_proportion", "must be between 0 and 100");
    }

    if (spec.name.empty()) out.add(prefix + ".name", "must not be empty");
    if (spec.path.empty()) out.add(prefix + ".path", "must not be empty");
    if (kind == "plain")
      spec.kind = DatasetKind::PlainText;
    else if (kind == "instruct")
      spec.kind = DatasetKind::Instruct;
    else
      out.add(prefix + ".kind", "must be \"plain\" or \"instruct\"");
    if (spec.epochs < 1) out.add(prefix + ".epochs", "must be at least 1");
    if (spec.stage != 1 && spec.stage != 2) out.add(prefix + ".stage", "must be 1 or 2");
    if (!spec.name.empty() && !seen.insert(spec.name).second)
      out.add(prefix + ".name", "duplicate name \"" + spec.name + "\"");
    specs.push_back(std::move(spec));
  }
}

void parse_evals(const Json& arr, std::vector<EvalSpec>& evals, Collector& out) {
  if (!arr.is_array()) {
    out.add("evals", "must be an array");
    return;
  }
  std::set<std::string> seen;
  for (size_t i = 0; i < arr.size(); ++i) {
    std::string prefix = "evals[" + std::to_string(i) + "]";
    const Json& obj = arr[i];
    if (!obj.is_object()) {
      out.add(prefix, "must be an object");
      continue;
    }
    reject_unknown_keys(obj, prefix, {"name", "path"}, out);
    EvalSpec spec;
    fetch_str(obj, prefix, "name", spec.name, out);
    fetch_str(obj, prefix, "path", spec.path, out);
    if (spec.name.empty()) out.add(prefix + ".name", "must not be empty");
    if (spec.path.empty()) out.add(prefix + ".path", "must not be empty");
    if (!spec.name.empty() && !seen.insert(spec.name).second)
      out.add(prefix + ".name", "duplicate name \"" + spec.name + "\"");
    evals.push_back(std::move(spec));
  }
}

void parse_marks(const Json& arr, std::vector<int64_t>& marks, Collector& out) {
  if (!arr.is_array()) {
    out.add("marks", "must be an array");
    return;
  }
  for (size_t i = 0; i < arr.size(); ++i) {
    std::string field = "marks[" + std::to_string(i) + "]";
    if (!arr[i].is_number_integer() && !arr[i].is_number_unsigned()) {
      out.add(field, "must be an integer");
      continue;
    }
    int64_t mark = arr[i].get<int64_t>();
    if (mark < 1) {
      out.add(field, "must be positive");
      continue;
    }
    if (!marks.empty() && mark <= marks.back()) {
      out.add("marks", "must be strictly increasing");
      continue;
    }
    marks.push_back(mark);
  }
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> errors)
    : std::runtime_error(join_errors(errors)), errors_(std::move(errors)) {}

RunConfig parse_run_config(const std::string& json_text) {
  Json root;
  try {
    root = Json::parse(json_text);
  } catch (const Json::parse_error& e) {
    throw ConfigError({std::string("invalid JSON: ") + e.what()});
  }
  if (!root.is_object()) throw ConfigError({"top level: must be an object"});

  Collector out;
  RunConfig cfg;
  reject_unknown_keys(root,
                      "",
                      {"seed", "out_dir", "vocab_path", "window", "mix_mode", "score_mode",
                       "marks", "tokenizer_vocab_size", "model", "stage1", "stage2", "datasets",
                       "evals", "synth", "generate"},
                      out);

  fetch_u64(root, "", "seed", cfg.seed, out);
  fetch_str(root, "", "out_dir", cfg.out_dir, out);
  fetch_str(root, "", "vocab_path", cfg.vocab_path, out);
  fetch_i64(root, "", "window", cfg.window, out);

  std::string mode;
  if (fetch_str(root, "", "mix_mode", mode, out)) {
    if (mode == "mixed")
      cfg.mix_mode = MixMode::Mixed;
    else if (mode == "staged")
      cfg.mix_mode = MixMode::Staged;
    else
      out.add("mix_mode", "must be \"mixed\" or \"staged\"");
  }
  std::string score;
  if (fetch_str(root, "", "score_mode", score, out)) {
    if (score == "mean")
      cfg.score_mode = ScoreMode::Mean;
    else if (score == "sum")
      cfg.score_mode = ScoreMode::Sum;
    else
      out.add("score_mode", "must be \"mean\" or \"sum\"");
  }

  if (root.contains("marks")) parse_marks(root["marks"], cfg.marks, out);
  int64_t tok_size = cfg.tokenizer_vocab_size;
  fetch_i64(root, "", "tokenizer_vocab_size", tok_size, out);
  cfg.tokenizer_vocab_size = static_cast<int32_t>(tok_size);

  if (root.contains("model")) parse_model(root["model"], cfg.model, out);
  if (root.contains("stage1")) parse_stage(root["stage1"], "stage1", cfg.stage1, out);
  if (root.contains("stage2")) parse_stage(root["stage2"], "stage2", cfg.stage2, out);
  if (root.contains("datasets")) parse_datasets(root["datasets"], cfg.datasets, out);
  if (root.contains("evals")) parse_evals(root["evals"], cfg.evals, out);

  if (root.contains("synth")) {
    const Json& obj = root["synth"];
    if (!obj.is_object()) {
      out.add("synth", "must be an object");
    } else {
      reject_unknown_keys(obj, "synth", {"total_bytes", "eval_items"}, out);
      fetch_i64(obj, "synth", "total_bytes", cfg.synth.total_bytes, out);
      fetch_i64(obj, "synth", "eval_items", cfg.synth.eval_items, out);
      if (cfg.synth.total_bytes < 50000) out.add("synth.total_bytes", "must be at least 50000");
      if (cfg.synth.eval_items < 1) out.add("synth.eval_items", "must be positive");
    }
  }
  if (root.contains("generate")) {
    const Json& obj = root["generate"];
    if (!obj.is_object()) {
      out.add("generate", "must be an object");
    } else {
      reject_unknown_keys(obj, "generate", {"max_new_tokens", "temperature"}, out);
      fetch_i64(obj, "generate", "max_new_tokens", cfg.generate.max_new_tokens, out);
      fetch_f64(obj, "generate", "temperature", cfg.generate.temperature, out);
      if (cfg.generate.max_new_tokens < 1) out.add("generate.max_new_tokens", "must be positive");
      if (!(cfg.generate.temperature >= 0.0))
        out.add("generate.temperature", "must be non-negative");
    }
  }

  if (cfg.out_dir.empty()) out.add("out_dir", "must not be empty");
  if (cfg.window < 2) out.add("window", "must be at least 2");
  if (cfg.window > cfg.model.max_seq_len && cfg.model.max_seq_len >= 1)
    out.add("window", "must not exceed model.max_seq_len");
  if (cfg.tokenizer_vocab_size < Vocab::kBaseSize)
    out.add("tokenizer_vocab_size", "must be at least 259");
  if (!cfg.marks.empty() && cfg.stage2.max_steps >= 1 &&
      cfg.marks.back() > cfg.stage2.max_steps)
    out.add("marks", "last mark exceeds stage2.max_steps");

  cfg.stage1.seed = cfg.seed;
  cfg.stage2.seed = cfg.seed;
  cfg.stage1.stage = StageTag::Pretrain;
  cfg.stage2.stage = StageTag::Instruct;

  if (!out.errors.empty()) throw ConfigError(std::move(out.errors));
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open config " + path);
  std::ostringstream buffer;
  buffer << is.rdbuf();
  return parse_run_config(buffer.str());
}

std::string serialize_run_config(const RunConfig& cfg) {
  nlohmann::ordered_json root;
  root["seed"] = cfg.seed;
  root["out_dir"] = cfg.out_dir;
  root["vocab_path"] = cfg.vocab_path;
  root["window"] = cfg.window;
  root["mix_mode"] = mix_mode_name(cfg.mix_mode);
  root["score_mode"] = score_mode_name(cfg.score_mode);
  root["marks"] = cfg.marks;
  root["tokenizer_vocab_size"] = cfg.tokenizer_vocab_size;
  root["model"] = {{"dim", cfg.model.dim},
                   {"n_heads", cfg.model.n_heads},
                   {"n_layers", cfg.model.n_layers},
                   {"vocab_size", cfg.model.vocab_size},
                   {"max_seq_len", cfg.model.max_seq_len},
                   {"ffn_hidden", cfg.model.ffn_hidden}};
  for (const char* key : {"stage1", "stage2"}) {
    const TrainConfig& stage = std::string(key) == "stage1" ? cfg.stage1 : cfg.stage2;
    root[key] = {{"base_lr", stage.base_lr},
                 {"warmup_frac", stage.warmup_frac},
                 {"effective_batch", stage.effective_batch},
                 {"micro_batch", stage.micro_batch},
                 {"max_steps", stage.max_steps},
                 {"weight_decay", stage.weight_decay}};
  }
  root["datasets"] = nlohmann::ordered_json::array();
  for (const auto& spec : cfg.datasets) {
    nlohmann::ordered_json obj = {
        {"name", spec.name},
        {"path", spec.path},
        {"kind", spec.kind == DatasetKind::PlainText ? "plain" : "instruct"},
        {"epochs", spec.epochs},
        {"stage", spec.stage}};
    if (spec.declared_proportion) obj["declared_proportion"] = *spec.declared_proportion;
    root["datasets"].push_back(std::move(obj));
  }
  root["evals"] = nlohmann::ordered_json::array();
  for (const auto& spec : cfg.evals)
    root["evals"].push_back({{"name", spec.name}, {"path", spec.path}});
  root["synth"] = {{"total_bytes", cfg.synth.total_bytes}, {"eval_items", cfg.synth.eval_items}};
  root["generate"] = {{"max_new_tokens", cfg.generate.max_new_tokens},
                      {"temperature", cfg.generate.temperature}};
  return root.dump(2) + "\n";
}

std::string effective_out_dir(const RunConfig& cfg) {
  const char* root = std::getenv("PANDA_OUT_ROOT");
  if (root && *root && std::filesystem::path(cfg.out_dir).is_relative())
    return (std::filesystem::path(root) / cfg.out_dir).string();
  return cfg.out_dir;
}

std::string resolve_path(const RunConfig& cfg, const std::string& path) {
  if (path == "@out") return effective_out_dir(cfg);
  if (path.rfind("@out/", 0) == 0)
    return (std::filesystem::path(effective_out_dir(cfg)) / path.substr(5)).string();
  return path;
}

const char* mix_mode_name(MixMode mode) {
  return mode == MixMode::Mixed ? "mixed" : "staged";
}

const char* stage_tag_name(StageTag tag) {
  return tag == StageTag::Pretrain ? "pretrain" : "instruct";
}

}  // namespace panda

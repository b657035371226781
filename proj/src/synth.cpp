#include "panda/synth.hpp"

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "panda/rng.hpp"
#include "panda/tokenizer.hpp"

namespace panda {

namespace {

constexpr std::array<const char*, 20> kTinyLines = {
    "the cat sat on the old mat today",
    "a dove rests on the garden walls",
    "bird songs fill the quiet forest",
    "cold wind moves the tall grasses",
    "dogs bark near the little stream",
    "each morning brings a new chance",
    "fast rivers carve the deep stone",
    "green moss grows on north stones",
    "hill paths wind toward the lakes",
    "iron gates guard the old orchard",
    "jumps of the hare mark the field",
    "kind hands mend the broken fence",
    "lamps glow along the harbor road",
    "moon light rests on the cold bay",
    "night owls call from the big oak",
    "open fields stretch to the hills",
    "pond water mirrors the grey dawn",
    "quiet snow settles over the farm",
    "river bends shape the warm delta",
    "sun rays warm the village square",
};

constexpr std::array<const char*, 32> kWords = {
    "river",  "mountain", "harvest", "window",  "evening", "炎热",    "signal",  "garden",
    "winter", "学习",     "pattern", "journey", "market",  "lantern", "bridge",  "北京",
    "forest", "thunder",  "message", "quiet",   "copper",  "语言",    "morning", "stone",
    "yellow", "dragon",   "paper",   "valley",  "数据",    "harbor",  "circle",  "train",
};

std::string random_sentence(Rng& rng, size_t n_words) {
  std::string line;
  for (size_t i = 0; i < n_words; ++i) {
    if (i > 0) line += ' ';
    line += kWords[rng.uniform_index(kWords.size())];
  }
  return line;
}

void write_plain_exact(const std::string& path, int64_t target_bytes, Rng& rng) {
  std::string content;
  content.reserve(static_cast<size_t>(target_bytes));
  while (true) {
    std::string line = random_sentence(rng, 5 + rng.uniform_index(6));
    line += '\n';
    if (static_cast<int64_t>(content.size() + line.size()) > target_bytes) break;
    content += line;
  }
  const auto remainder = static_cast<size_t>(target_bytes) - content.size();
  if (remainder > 0) {
    content.append(remainder - 1, ' ');
    content += '\n';
  }
  std::ofstream os(path, std::ios::trunc | std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << content;
}

void write_instruct_exact(const std::string& path, int64_t target_bytes, Rng& rng) {
  auto make_record = [](const std::string& word, size_t pad) {
    nlohmann::json record;
    record["instruction"] = "repeat the word " + word;
    record["output"] = word + std::string(pad, 'x');
    return record.dump() + "\n";
  };

  std::string content;
  content.reserve(static_cast<size_t>(target_bytes));
  while (true) {
    std::string record = make_record(kWords[rng.uniform_index(kWords.size())], 0);
    // leave room to pad the final record onto the exact byte target
    if (static_cast<int64_t>(content.size() + record.size()) > target_bytes - 96) break;
    content += record;
  }
  const std::string word = "close";
  const size_t base = make_record(word, 0).size();
  const auto remainder = static_cast<size_t>(target_bytes) - content.size();
  if (remainder < base) {
    throw std::runtime_error("instruction dataset target too small to pad exactly");
  }
  content += make_record(word, remainder - base);

  std::ofstream os(path, std::ios::trunc | std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << content;
}

}  // namespace

std::string tiny_corpus_text() {
  std::string text;
  for (const char* line : kTinyLines) {
    text += line;
    text += '\n';
  }
  return text;
}

ModelConfig overfit_config() {
  ModelConfig cfg;
  cfg.dim = 64;
  cfg.n_heads = 8;
  cfg.n_layers = 1;
  cfg.vocab_size = Vocab::kBaseSize;
  cfg.max_seq_len = 64;
  cfg.ffn_hidden = 512;
  return cfg;
}

TrainConfig overfit_train_config() {
  TrainConfig cfg;
  cfg.base_lr = 0.3;
  cfg.warmup_frac = 0.1;
  cfg.effective_batch = 20;  // the whole corpus, one line per sample
  cfg.micro_batch = 4;
  cfg.max_steps = 300;
  cfg.seed = 3;
  return cfg;
}

Checkpoint planted_checkpoint(unsigned char boosted, float gain) {
  ModelConfig cfg;
  cfg.dim = 272;
  cfg.n_heads = 4;
  cfg.n_layers = 0;
  cfg.vocab_size = 259;
  cfg.max_seq_len = 512;
  cfg.ffn_hidden = 16;
  cfg.validate();

  Checkpoint ckpt;
  ckpt.config = cfg;

  std::vector<float> embed(static_cast<size_t>(cfg.vocab_size * cfg.dim), 0.0f);
  for (int64_t u = 0; u < cfg.vocab_size; ++u) {
    embed[static_cast<size_t>(u * cfg.dim + u)] = 1.0f;
  }
  ckpt.tensors.emplace("tok_embed",
                       Tensor::from_data({cfg.vocab_size, cfg.dim}, std::move(embed)));
  ckpt.tensors.emplace("final_norm",
                       Tensor::full({cfg.dim}, 1.0f));

  std::vector<float> head(static_cast<size_t>(cfg.vocab_size * cfg.dim), 0.0f);
  const int64_t boosted_id = Vocab::kByteOffset + static_cast<int64_t>(boosted);
  for (int64_t j = 0; j < cfg.dim; ++j) {
    head[static_cast<size_t>(boosted_id * cfg.dim + j)] = gain;
  }
  ckpt.tensors.emplace("head", Tensor::from_data({cfg.vocab_size, cfg.dim}, std::move(head)));
  return ckpt;
}

std::vector<MCQAItem> planted_eval_items(int n, unsigned char gold_char, unsigned char foil,
                                         uint64_t seed) {
  if (gold_char == foil) throw std::invalid_argument("gold and foil characters must differ");
  Rng rng(seed);
  std::vector<MCQAItem> items;
  items.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    std::vector<std::string> options = {std::string(1, static_cast<char>(gold_char)),
                                        std::string(1, static_cast<char>(foil))};
    while (options.size() < 4) {
      const char c = static_cast<char>('a' + rng.uniform_index(26));
      bool fresh = true;
      for (const std::string& o : options) fresh = fresh && o[0] != c;
      if (fresh) options.emplace_back(1, c);
    }
    for (size_t j = options.size(); j > 1; --j) {
      std::swap(options[j - 1], options[rng.uniform_index(j)]);
    }

    MCQAItem item;
    item.context = i % 2 == 0 ? "a short note about letters" : "";
    item.question = "which letter is the certain one, case " + std::to_string(i);
    item.options = std::move(options);
    for (size_t j = 0; j < item.options.size(); ++j) {
      if (item.options[j][0] == static_cast<char>(gold_char)) {
        item.gold_index = static_cast<int>(j);
      }
    }
    items.push_back(std::move(item));
  }
  return items;
}

std::vector<MCQAItem> random_eval_items(int n, uint64_t seed) {
  Rng rng(seed);
  std::vector<MCQAItem> items;
  items.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    MCQAItem item;
    std::string q;
    for (int j = 0; j < 8; ++j) q += static_cast<char>('a' + rng.uniform_index(26));
    item.question = q;
    while (item.options.size() < 4) {
      std::string opt;
      opt += static_cast<char>('a' + rng.uniform_index(26));
      opt += static_cast<char>('a' + rng.uniform_index(26));
      bool fresh = true;
      for (const std::string& o : item.options) fresh = fresh && o != opt;
      if (fresh) item.options.push_back(opt);
    }
    item.gold_index = static_cast<int>(rng.uniform_index(4));
    items.push_back(std::move(item));
  }
  return items;
}

void write_mcqa_jsonl(const std::vector<MCQAItem>& items, const std::string& path) {
  std::ofstream os(path, std::ios::trunc | std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path);
  for (const MCQAItem& item : items) {
    nlohmann::json record;
    record["context"] = item.context;
    record["question"] = item.question;
    record["options"] = item.options;
    record["gold"] = item.gold_index;
    record["format"] = item.format;
    os << record.dump() << '\n';
  }
}

std::vector<DatasetSpec> write_mixture_corpora(const std::string& dir, int64_t total_bytes,
                                               uint64_t seed) {
  if (total_bytes < 50'000) {
    throw std::invalid_argument("mixture corpora need at least 50000 bytes total");
  }
  std::filesystem::create_directories(dir);

  struct Part {
    const char* name;
    double size_share;  // relative raw size, before epoch weighting
    int epochs;
    int stage;
    DatasetKind kind;
  };
  // raw-size ratios 1600 : 9000 : 1000 : 3700 : 1100 : 350, the last part
  // consumed twice in stage 2
  const std::array<Part, 6> parts = {{
      {"wiki", 1600.0, 1, 1, DatasetKind::PlainText},
      {"news", 9000.0, 1, 1, DatasetKind::PlainText},
      {"baike", 1000.0, 1, 1, DatasetKind::PlainText},
      {"webtext", 3700.0, 1, 1, DatasetKind::PlainText},
      {"translation", 1100.0, 1, 1, DatasetKind::PlainText},
      {"instruct", 350.0, 2, 2, DatasetKind::Instruct},
  }};
  double share_sum = 0.0;
  for (const Part& p : parts) share_sum += p.size_share;

  Rng rng(seed);
  std::vector<DatasetSpec> specs;
  for (const Part& p : parts) {
    const auto target = static_cast<int64_t>(
        std::llround(static_cast<double>(total_bytes) * p.size_share / share_sum));
    const std::string path = dir + "/" + p.name +
                             (p.kind == DatasetKind::Instruct ? ".jsonl" : ".txt");
    if (p.kind == DatasetKind::Instruct) {
      write_instruct_exact(path, target, rng);
    } else {
      write_plain_exact(path, target, rng);
    }
    DatasetSpec spec;
    spec.name = p.name;
    spec.path = path;
    spec.kind = p.kind;
    spec.epochs = p.epochs;
    spec.stage = p.stage;
    specs.push_back(std::move(spec));
  }
  return specs;
}

}  // namespace panda

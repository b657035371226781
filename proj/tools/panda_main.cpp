#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "panda/checkpoint_io.hpp"
#include "panda/data.hpp"
#include "panda/evaluator.hpp"
#include "panda/model.hpp"
#include "panda/runconfig.hpp"
#include "panda/sha256.hpp"
#include "panda/synth.hpp"
#include "panda/tokenizer.hpp"
#include "panda/trainer.hpp"
#include "panda/version.hpp"
#include "panda/weightdiff.hpp"

namespace fs = std::filesystem;
using namespace panda;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  std::ostringstream buffer;
  buffer << is.rdbuf();
  return buffer.str();
}

std::string sha256_hex(const std::string& bytes) {
  Sha256 hasher;
  hasher.update(bytes.data(), bytes.size());
  return hex_digest(hasher.finish());
}

// Collects everything a manifest records about one verb invocation. Output
// paths are kept relative to the run directory and sorted, and nothing
// time-dependent is included, so reruns produce identical manifests.
struct Run {
  RunConfig cfg;
  std::string verb;
  std::string config_sha;
  std::vector<std::string> outputs;

  std::string dir() const { return effective_out_dir(cfg); }

  std::string path(const std::string& relative) {
    outputs.push_back(relative);
    fs::path full = fs::path(dir()) / relative;
    fs::create_directories(full.parent_path());
    return full.string();
  }

  void write_manifest() {
    nlohmann::ordered_json manifest;
    manifest["verb"] = verb;
    manifest["version"] = kVersion;
    manifest["config_sha256"] = config_sha;
    manifest["seed"] = cfg.seed;
    std::sort(outputs.begin(), outputs.end());
    manifest["outputs"] = outputs;
    fs::create_directories(dir());
    std::string path = (fs::path(dir()) / ("manifest-" + verb + ".json")).string();
    std::ofstream os(path, std::ios::trunc | std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path);
    os << manifest.dump(2) << '\n';
  }
};

Run make_run(const std::string& config_path, const std::string& verb) {
  std::string bytes = read_file(config_path);
  Run run;
  run.cfg = parse_run_config(bytes);
  run.verb = verb;
  run.config_sha = sha256_hex(bytes);
  return run;
}

Vocab load_configured_vocab(const RunConfig& cfg) {
  if (cfg.vocab_path.empty()) return Vocab::byte_fallback();
  return load_vocab(resolve_path(cfg, cfg.vocab_path));
}

void check_vocab_fits(const ModelConfig& model, const Vocab& vocab) {
  if (model.vocab_size < vocab.size())
    throw std::runtime_error("model.vocab_size " + std::to_string(model.vocab_size) +
                             " is smaller than the vocabulary (" +
                             std::to_string(vocab.size()) + " tokens)");
}

MixturePlan build_plan(const RunConfig& cfg, int stage) {
  MixturePlan plan;
  plan.mode = cfg.mix_mode;
  plan.seed = cfg.seed;
  for (DatasetSpec spec : cfg.datasets) {
    if (spec.stage != stage) continue;
    spec.path = resolve_path(cfg, spec.path);
    plan.specs.push_back(std::move(spec));
  }
  if (plan.specs.empty())
    throw std::runtime_error("no datasets declare stage " + std::to_string(stage));
  return plan;
}

// Loads every eval dataset before anything is scored or written, so a broken
// path cannot leave a partial report behind.
std::vector<std::pair<EvalSpec, std::vector<MCQAItem>>> load_eval_sets(const RunConfig& cfg) {
  std::vector<std::pair<EvalSpec, std::vector<MCQAItem>>> sets;
  for (const EvalSpec& spec : cfg.evals)
    sets.emplace_back(spec, load_mcqa_jsonl(resolve_path(cfg, spec.path)));
  return sets;
}

void write_eval_reports(Run& run, const Checkpoint& ckpt, const Vocab& vocab,
                        const std::vector<std::pair<EvalSpec, std::vector<MCQAItem>>>& sets,
                        const std::string& tag) {
  std::vector<EvalReport> reports;
  for (const auto& [spec, items] : sets) {
    EvalReport report = evaluate(ckpt, vocab, spec.name, items, run.cfg.score_mode);
    write_item_scores_jsonl(report, run.path("eval" + tag + "-" + spec.name + ".jsonl"));
    reports.push_back(std::move(report));
  }
  nlohmann::ordered_json summary = nlohmann::ordered_json::array();
  for (const EvalReport& r : reports) {
    summary.push_back({{"dataset", r.dataset_name},
                       {"items", r.n_samples},
                       {"skipped", r.skipped},
                       {"avg_token_length", r.avg_token_length},
                       {"mode", score_mode_name(r.mode)},
                       {"accuracy", r.accuracy}});
  }
  std::string path = run.path("eval_report" + tag + ".json");
  std::ofstream os(path, std::ios::trunc | std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << summary.dump(2) << '\n';
  std::cout << format_report_table(reports);
}

int cmd_tokenizer_train(const std::string& config_path) {
  Run run = make_run(config_path, "tokenizer-train");
  std::string corpus;
  for (const DatasetSpec& spec : run.cfg.datasets) {
    if (spec.kind != DatasetKind::PlainText) continue;
    for (const std::string& doc : load_plain(resolve_path(run.cfg, spec.path))) {
      corpus += doc;
      corpus += '\n';
    }
  }
  if (corpus.empty()) throw std::runtime_error("no plain-text datasets to train the vocab on");
  Vocab vocab = train_bpe(corpus, run.cfg.tokenizer_vocab_size);
  save_vocab(vocab, run.path("vocab.txt"));
  run.write_manifest();
  std::cout << "trained " << vocab.size() << " tokens\n";
  return 0;
}

int cmd_prepare(const std::string& config_path) {
  Run run = make_run(config_path, "prepare");
  std::string data_dir = (fs::path(run.dir()) / "data").string();
  std::vector<DatasetSpec> specs =
      write_mixture_corpora(data_dir, run.cfg.synth.total_bytes, run.cfg.seed);
  for (const DatasetSpec& spec : specs)
    run.outputs.push_back(fs::relative(spec.path, run.dir()).string());

  std::vector<MCQAItem> items =
      random_eval_items(static_cast<int>(run.cfg.synth.eval_items), run.cfg.seed);
  write_mcqa_jsonl(items, run.path("data/eval.jsonl"));

  std::ofstream os(run.path("data/tiny_corpus.txt"), std::ios::trunc | std::ios::binary);
  os << tiny_corpus_text();

  run.write_manifest();
  std::cout << "wrote " << run.outputs.size() << " files under " << data_dir << '\n';
  return 0;
}

int cmd_train(const std::string& config_path, int stage, const std::string& ckpt_path) {
  Run run = make_run(config_path, "train");
  Vocab vocab = load_configured_vocab(run.cfg);
  check_vocab_fits(run.cfg.model, vocab);

  Checkpoint start = ckpt_path.empty()
                         ? init_checkpoint(run.cfg.model, run.cfg.seed)
                         : load_checkpoint(resolve_path(run.cfg, ckpt_path));
  SampleStream stream(build_plan(run.cfg, stage), vocab, run.cfg.window);
  const TrainConfig& cfg = stage == 1 ? run.cfg.stage1 : run.cfg.stage2;
  cfg.validate();

  TrainResult result = train(start, stream, cfg);
  std::string label = "stage" + std::to_string(stage);
  save_checkpoint(result.checkpoint, run.path(label + ".pnda"));
  write_loss_csv(result.log, run.path(label + "_loss.csv"));
  run.write_manifest();
  std::cout << label << " done, final loss " << result.log.entries.back().loss << '\n';
  return 0;
}

int cmd_two_stage(const std::string& config_path) {
  Run run = make_run(config_path, "two-stage");
  Vocab vocab = load_configured_vocab(run.cfg);
  check_vocab_fits(run.cfg.model, vocab);
  auto eval_sets = load_eval_sets(run.cfg);

  run.cfg.stage1.validate();
  run.cfg.stage2.validate();
  SampleStream stage1_stream(build_plan(run.cfg, 1), vocab, run.cfg.window);
  SampleStream stage2_stream(build_plan(run.cfg, 2), vocab, run.cfg.window);

  TwoStageResult result = run_two_stage(init_checkpoint(run.cfg.model, run.cfg.seed),
                                        stage1_stream, run.cfg.stage1, stage2_stream,
                                        run.cfg.stage2, run.cfg.marks);

  save_checkpoint(result.stage1, run.path("stage1.pnda"));
  write_loss_csv(result.stage1_log, run.path("stage1_loss.csv"));
  write_loss_csv(result.stage2_log, run.path("stage2_loss.csv"));
  for (const auto& [step, ckpt] : result.stage2_marks)
    save_checkpoint(ckpt, run.path("stage2-mark-" + std::to_string(step) + ".pnda"));
  save_checkpoint(result.final, run.path("stage2-final.pnda"));

  if (!eval_sets.empty()) write_eval_reports(run, result.final, vocab, eval_sets, "");
  run.write_manifest();
  std::cout << "two-stage done, stage2 final loss " << result.stage2_log.entries.back().loss
            << '\n';
  return 0;
}

int cmd_eval(const std::string& config_path, const std::string& ckpt_path) {
  Run run = make_run(config_path, "eval");
  if (run.cfg.evals.empty()) throw std::runtime_error("config lists no eval datasets");
  Vocab vocab = load_configured_vocab(run.cfg);
  auto eval_sets = load_eval_sets(run.cfg);
  Checkpoint ckpt = load_checkpoint(resolve_path(run.cfg, ckpt_path));
  check_vocab_fits(ckpt.config, vocab);
  write_eval_reports(run, ckpt, vocab, eval_sets, "");
  run.write_manifest();
  return 0;
}

int cmd_generate(const std::string& config_path, const std::string& ckpt_path,
                 const std::string& prompt, bool add_bos) {
  Run run = make_run(config_path, "generate");
  Vocab vocab = load_configured_vocab(run.cfg);
  Checkpoint ckpt = load_checkpoint(resolve_path(run.cfg, ckpt_path));
  check_vocab_fits(ckpt.config, vocab);

  std::vector<int32_t> ids = encode(vocab, prompt, add_bos);
  GenerateResult result = generate(ckpt, ids, run.cfg.generate.max_new_tokens,
                                   run.cfg.generate.temperature, run.cfg.seed, Vocab::kEos);
  std::string text = decode(vocab, result.ids);

  std::string path = run.path("generation.txt");
  std::ofstream os(path, std::ios::trunc | std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << text << '\n';
  run.write_manifest();
  std::cout << text << '\n';
  if (result.truncated) std::cerr << "(stopped at the model's maximum sequence length)\n";
  return 0;
}

int cmd_diff(const std::string& config_path, const std::string& base_path,
             const std::string& trained_path, std::string out_path) {
  Run run = make_run(config_path, "diff");
  Checkpoint base = load_checkpoint(resolve_path(run.cfg, base_path));
  Checkpoint trained = load_checkpoint(resolve_path(run.cfg, trained_path));
  WeightDiff diff = make_diff(base, trained);
  if (out_path.empty()) {
    out_path = run.path("model.pndd");
  } else {
    out_path = resolve_path(run.cfg, out_path);
    run.outputs.push_back(out_path);
  }
  save_diff(diff, out_path);
  run.write_manifest();
  std::cout << "diff written to " << out_path << '\n';
  return 0;
}

int cmd_apply_diff(const std::string& config_path, const std::string& base_path,
                   const std::string& diff_path, std::string out_path) {
  Run run = make_run(config_path, "apply-diff");
  Checkpoint base = load_checkpoint(resolve_path(run.cfg, base_path));
  WeightDiff diff = load_diff(resolve_path(run.cfg, diff_path));
  Checkpoint reconstructed = apply_diff(base, diff);
  if (out_path.empty()) {
    out_path = run.path("reconstructed.pnda");
  } else {
    out_path = resolve_path(run.cfg, out_path);
    run.outputs.push_back(out_path);
  }
  save_checkpoint(reconstructed, out_path);
  run.write_manifest();
  std::cout << "checkpoint reconstructed at " << out_path << '\n';
  return 0;
}

int cmd_stats(const std::string& config_path) {
  Run run = make_run(config_path, "stats");
  if (run.cfg.evals.empty()) throw std::runtime_error("config lists no eval datasets");
  Vocab vocab = load_configured_vocab(run.cfg);
  auto eval_sets = load_eval_sets(run.cfg);

  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  std::cout << "dataset                      n  avg_tokens\n";
  for (const auto& [spec, items] : eval_sets) {
    auto [n, avg] = dataset_stats(items, vocab);
    std::cout << spec.name;
    for (size_t pad = spec.name.size(); pad < 24; ++pad) std::cout << ' ';
    std::cout << ' ' << n << "  " << avg << '\n';
    rows.push_back({{"dataset", spec.name}, {"items", n}, {"avg_token_length", avg}});
  }
  std::string path = run.path("stats.json");
  std::ofstream os(path, std::ios::trunc | std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << rows.dump(2) << '\n';
  run.write_manifest();
  return 0;
}

int cmd_compare_mix(const std::string& config_path) {
  Run run = make_run(config_path, "compare-mix");
  Vocab vocab = load_configured_vocab(run.cfg);
  check_vocab_fits(run.cfg.model, vocab);
  auto eval_sets = load_eval_sets(run.cfg);
  run.cfg.stage1.validate();

  MixturePlan plan = build_plan(run.cfg, 1);
  MixCompareResult result = compare_mixture_modes(init_checkpoint(run.cfg.model, run.cfg.seed),
                                                  plan, vocab, run.cfg.window, run.cfg.stage1);

  save_checkpoint(result.staged, run.path("mix-staged.pnda"));
  save_checkpoint(result.mixed, run.path("mix-mixed.pnda"));
  write_loss_csv(result.staged_log, run.path("mix-staged_loss.csv"));
  write_loss_csv(result.mixed_log, run.path("mix-mixed_loss.csv"));
  std::cout << "staged final loss " << result.staged_log.entries.back().loss
            << ", mixed final loss " << result.mixed_log.entries.back().loss << '\n';

  if (!eval_sets.empty()) {
    write_eval_reports(run, result.staged, vocab, eval_sets, "-staged");
    write_eval_reports(run, result.mixed, vocab, eval_sets, "-mixed");
  }
  run.write_manifest();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale two-stage LLM training pipeline"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  std::string config_path;
  std::string ckpt_path;
  std::string base_path;
  std::string other_path;
  std::string out_path;
  std::string prompt;
  int stage = 1;
  bool add_bos = false;

  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "run configuration JSON")
        ->required();
  };

  CLI::App* tok = app.add_subcommand("tokenizer-train", "learn a BPE vocabulary");
  add_config(tok);

  CLI::App* prep = app.add_subcommand("prepare", "write the synthetic corpora and eval set");
  add_config(prep);

  CLI::App* tr = app.add_subcommand("train", "run one training stage");
  add_config(tr);
  tr->add_option("--stage", stage, "1 for pretraining, 2 for instruction tuning")
      ->check(CLI::Range(1, 2));
  tr->add_option("--ckpt", ckpt_path, "starting checkpoint (default: fresh init)");

  CLI::App* two = app.add_subcommand("two-stage", "pretrain, instruction-tune, evaluate");
  add_config(two);

  CLI::App* ev = app.add_subcommand("eval", "score a checkpoint on the configured datasets");
  add_config(ev);
  ev->add_option("--ckpt", ckpt_path, "checkpoint to evaluate")->required();

  CLI::App* gen = app.add_subcommand("generate", "sample a continuation");
  add_config(gen);
  gen->add_option("--ckpt", ckpt_path, "checkpoint to sample from")->required();
  gen->add_option("--prompt", prompt, "prompt text")->required();
  gen->add_flag("--bos", add_bos, "prepend the BOS token");

  CLI::App* df = app.add_subcommand("diff", "bit-exact difference of two checkpoints");
  add_config(df);
  df->add_option("--base", base_path, "base checkpoint")->required();
  df->add_option("--trained", other_path, "trained checkpoint")->required();
  df->add_option("--out", out_path, "diff file (default @out/model.pndd)");

  CLI::App* ap = app.add_subcommand("apply-diff", "reconstruct a checkpoint from a diff");
  add_config(ap);
  ap->add_option("--base", base_path, "base checkpoint")->required();
  ap->add_option("--diff", other_path, "diff file")->required();
  ap->add_option("--out", out_path, "output checkpoint (default @out/reconstructed.pnda)");

  CLI::App* st = app.add_subcommand("stats", "token statistics of the eval datasets");
  add_config(st);

  CLI::App* cm = app.add_subcommand("compare-mix", "train staged and mixed under one budget");
  add_config(cm);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (tok->parsed()) return cmd_tokenizer_train(config_path);
    if (prep->parsed()) return cmd_prepare(config_path);
    if (tr->parsed()) return cmd_train(config_path, stage, ckpt_path);
    if (two->parsed()) return cmd_two_stage(config_path);
    if (ev->parsed()) return cmd_eval(config_path, ckpt_path);
    if (gen->parsed()) return cmd_generate(config_path, ckpt_path, prompt, add_bos);
    if (df->parsed()) return cmd_diff(config_path, base_path, other_path, out_path);
    if (ap->parsed()) return cmd_apply_diff(config_path, base_path, other_path, out_path);
    if (st->parsed()) return cmd_stats(config_path);
    if (cm->parsed()) return cmd_compare_mix(config_path);
  } catch (const ConfigError& e) {
    std::cerr << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "panda/data.hpp"
#include "panda/model.hpp"

namespace panda {

enum class StageTag { Pretrain, Instruct };

struct TrainConfig {
  double base_lr = 1e-3;
  double warmup_frac = 0.01;
  int64_t effective_batch = 8;  // sequences consumed per optimizer step
  int64_t micro_batch = 2;      // sequences per backward pass
  int64_t max_steps = 100;
  double weight_decay = 0.0;    // stays 0 unless explicitly enabled
  uint64_t seed = 0;
  StageTag stage = StageTag::Pretrain;

  void validate() const;  // throws std::invalid_argument

  bool operator==(const TrainConfig&) const = default;
};

struct LossLogEntry {
  int64_t step = 0;
  double lr = 0.0;
  double loss = 0.0;      // mean masked loss over the effective batch
  int64_t tokens = 0;     // cumulative non-pad input tokens consumed
  double seconds = 0.0;   // wall time since the run started
};

struct LossLog {
  std::vector<LossLogEntry> entries;
  int64_t skipped_batches = 0;  // samples dropped for having no target positions
};

// CSV with header step,lr,loss,tokens,seconds.
void write_loss_csv(const LossLog& log, const std::string& path);

// Linear ramp from 0 at step 0 to base_lr at step ceil(warmup_frac *
// max_steps), constant base_lr afterwards. A zero-length warmup means
// base_lr everywhere.
double lr_at(int64_t step, int64_t max_steps, double base_lr, double warmup_frac);

// p <- p - lr * (g + weight_decay * p), computed in double per element and
// stored back as f32. Every parameter must have a gradient entry.
void sgd_step(Checkpoint& ckpt, const std::map<std::string, std::vector<double>>& grads,
              double lr, double weight_decay);

struct TrainResult {
  Checkpoint checkpoint;
  LossLog log;
};

// Called with a snapshot whenever training passes one of the requested
// snapshot steps.
using CheckpointSink = std::function<void(const Checkpoint&, int64_t step)>;

// Runs cfg.max_steps optimizer steps over the stream. Each step consumes
// effective_batch sequences in micro_batch groups: per group the mean
// sequence loss is backpropagated once and gradients are accumulated in
// double precision scaled by micro/effective, which makes the update equal
// to a single full-batch step. A finite stream is rewound when exhausted.
// The logged loss is computed before the update. Non-finite losses abort
// with a diagnostic dump in the exception message.
TrainResult train(const Checkpoint& start, SampleStream& stream, const TrainConfig& cfg,
                  const std::vector<int64_t>& snapshot_steps = {},
                  const CheckpointSink& sink = nullptr);

struct TwoStageResult {
  Checkpoint stage1;  // pretraining output, the base the diffs are taken against
  Checkpoint final;   // last stage-2 snapshot
  LossLog stage1_log;
  LossLog stage2_log;
  std::vector<std::pair<int64_t, Checkpoint>> stage2_marks;  // step -> snapshot
};

// Stage 2 starts from stage 1's output; stage-2 snapshots are kept at the
// given marks (steps within stage 2).
TwoStageResult run_two_stage(const Checkpoint& base, SampleStream& stage1_stream,
                             const TrainConfig& stage1_cfg, SampleStream& stage2_stream,
                             const TrainConfig& stage2_cfg, const std::vector<int64_t>& marks);

struct MixCompareResult {
  Checkpoint staged;
  Checkpoint mixed;
  LossLog staged_log;
  LossLog mixed_log;
};

// Trains the same plan twice under the same budget and seed, once walking
// datasets in order (staged) and once sampling by proportion (mixed).
MixCompareResult compare_mixture_modes(const Checkpoint& base, const MixturePlan& plan,
                                       const Vocab& vocab, int64_t window,
                                       const TrainConfig& cfg);

}  // namespace panda

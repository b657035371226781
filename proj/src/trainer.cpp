#include "panda/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>
#include <stdexcept>

#include "panda/ops.hpp"
#include "panda/tokenizer.hpp"

namespace panda {

void TrainConfig::validate() const {
  if (!(base_lr > 0.0) || !std::isfinite(base_lr)) {
    throw std::invalid_argument("train config: base_lr must be positive and finite");
  }
  if (!(warmup_frac >= 0.0 && warmup_frac < 1.0)) {
    throw std::invalid_argument("train config: warmup_frac must lie in [0, 1)");
  }
  if (effective_batch < 1 || micro_batch < 1) {
    throw std::invalid_argument("train config: batch sizes must be at least 1");
  }
  if (effective_batch % micro_batch != 0) {
    std::ostringstream msg;
    msg << "train config: micro_batch " << micro_batch << " does not divide effective_batch "
        << effective_batch;
    throw std::invalid_argument(msg.str());
  }
  if (max_steps < 1) {
    throw std::invalid_argument("train config: max_steps must be at least 1");
  }
  if (weight_decay < 0.0 || !std::isfinite(weight_decay)) {
    throw std::invalid_argument("train config: weight_decay must be non-negative");
  }
}

void write_loss_csv(const LossLog& log, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw std::runtime_error("cannot write loss log to " + path);
  }
  out << "step,lr,loss,tokens,seconds\n";
  out.precision(17);
  for (const LossLogEntry& e : log.entries) {
    out << e.step << ',' << e.lr << ',' << e.loss << ',' << e.tokens << ',' << e.seconds << '\n';
  }
}

double lr_at(int64_t step, int64_t max_steps, double base_lr, double warmup_frac) {
  const auto warmup_end =
      static_cast<int64_t>(std::ceil(warmup_frac * static_cast<double>(max_steps)));
  if (warmup_end <= 0) {
    return base_lr;
  }
  if (step >= warmup_end) {
    return base_lr;
  }
  return base_lr * static_cast<double>(step) / static_cast<double>(warmup_end);
}

void sgd_step(Checkpoint& ckpt, const std::map<std::string, std::vector<double>>& grads,
              double lr, double weight_decay) {
  for (auto& [name, param] : ckpt.tensors) {
    auto it = grads.find(name);
    if (it == grads.end()) {
      throw std::invalid_argument("sgd step: no gradient for parameter '" + name + "'");
    }
    const std::vector<float>& p = param.data();
    const std::vector<double>& g = it->second;
    if (g.size() != p.size()) {
      std::ostringstream msg;
      msg << "sgd step: gradient for '" << name << "' has " << g.size() << " elements, parameter has "
          << p.size();
      throw std::invalid_argument(msg.str());
    }
    std::vector<float> updated(p.size());
    for (size_t i = 0; i < p.size(); ++i) {
      const double pd = static_cast<double>(p[i]);
      updated[i] = static_cast<float>(pd - lr * (g[i] + weight_decay * pd));
    }
    param = Tensor::from_data(param.shape(), std::move(updated), true);
  }
}

namespace {

// Next-token shift: position t predicts ids[t+1] and inherits its mask. The
// final position has nothing to predict and is masked out.
struct ShiftedBatch {
  std::vector<int32_t> targets;
  std::vector<uint8_t> mask;
  int64_t target_count = 0;
};

ShiftedBatch shift_targets(const TokenBatch& batch) {
  ShiftedBatch out;
  const size_t n = batch.ids.size();
  out.targets.assign(n, 0);
  out.mask.assign(n, 0);
  for (size_t t = 0; t + 1 < n; ++t) {
    out.targets[t] = batch.ids[t + 1];
    out.mask[t] = batch.loss_mask[t + 1];
    out.target_count += out.mask[t];
  }
  return out;
}

int64_t count_real_tokens(const TokenBatch& batch) {
  int64_t n = 0;
  for (int32_t id : batch.ids) {
    n += (id != Vocab::kPad);
  }
  return n;
}

TokenBatch pull_sample(SampleStream& stream) {
  auto sample = stream.next();
  if (!sample) {
    stream.reset();
    sample = stream.next();
    if (!sample) {
      throw std::runtime_error("training stream yields no samples even after a rewind");
    }
  }
  return std::move(*sample);
}

Checkpoint detach_all(const Checkpoint& ckpt) {
  Checkpoint out;
  out.config = ckpt.config;
  out.step = ckpt.step;
  for (const auto& [name, t] : ckpt.tensors) {
    out.tensors.emplace(name, t.detached(false));
  }
  return out;
}

}  // namespace

TrainResult train(const Checkpoint& start, SampleStream& stream, const TrainConfig& cfg,
                  const std::vector<int64_t>& snapshot_steps, const CheckpointSink& sink) {
  cfg.validate();
  start.config.validate();

  Checkpoint live = start.with_grads();
  TrainResult result;
  result.log.entries.reserve(static_cast<size_t>(cfg.max_steps));

  const int64_t micro_count = cfg.effective_batch / cfg.micro_batch;
  const double micro_weight =
      static_cast<double>(cfg.micro_batch) / static_cast<double>(cfg.effective_batch);

  int64_t tokens_seen = 0;
  const auto run_start = std::chrono::steady_clock::now();

  for (int64_t step = 1; step <= cfg.max_steps; ++step) {
    const double lr = lr_at(step, cfg.max_steps, cfg.base_lr, cfg.warmup_frac);

    std::map<std::string, std::vector<double>> grad_acc;
    for (const auto& [name, param] : live.tensors) {
      grad_acc.emplace(name, std::vector<double>(param.data().size(), 0.0));
    }

    double loss_sum = 0.0;
    for (int64_t micro = 0; micro < micro_count; ++micro) {
      std::vector<Tensor> seq_losses;
      std::vector<std::string> seq_sources;
      seq_losses.reserve(static_cast<size_t>(cfg.micro_batch));
      int64_t consecutive_skips = 0;
      while (std::ssize(seq_losses) < cfg.micro_batch) {
        TokenBatch sample = pull_sample(stream);
        ShiftedBatch shifted = shift_targets(sample);
        if (shifted.target_count == 0) {
          ++result.log.skipped_batches;
          if (++consecutive_skips > 100000) {
            throw std::runtime_error("training stream produced no sample with target positions");
          }
          continue;
        }
        consecutive_skips = 0;
        Tensor logits = forward(live, sample.ids);
        seq_losses.push_back(cross_entropy_masked(logits, shifted.targets, shifted.mask));
        seq_sources.push_back(sample.source);
        tokens_seen += count_real_tokens(sample);
      }

      Tensor micro_loss = seq_losses[0];
      for (size_t i = 1; i < seq_losses.size(); ++i) {
        micro_loss = add(micro_loss, seq_losses[i]);
      }
      micro_loss = scale(micro_loss, 1.0 / static_cast<double>(cfg.micro_batch));

      double micro_loss_f64 = 0.0;
      for (const Tensor& l : seq_losses) {
        micro_loss_f64 += l.item_f64();
      }
      micro_loss_f64 /= static_cast<double>(cfg.micro_batch);
      if (!std::isfinite(micro_loss_f64)) {
        std::ostringstream msg;
        msg << "training aborted: non-finite loss at step " << step << " (lr " << lr << ")\n";
        for (size_t i = 0; i < seq_losses.size(); ++i) {
          msg << "  sequence " << i << " from '" << seq_sources[i]
              << "': loss " << seq_losses[i].item_f64() << '\n';
        }
        throw std::runtime_error(msg.str());
      }
      loss_sum += micro_loss_f64 * static_cast<double>(cfg.micro_batch);

      Gradients grads = backward(micro_loss);
      for (const auto& [name, param] : live.tensors) {
        Tensor g = grads.grad_for(param);
        std::vector<double>& acc = grad_acc[name];
        const std::vector<float>& gv = g.data();
        for (size_t i = 0; i < gv.size(); ++i) {
          acc[i] += micro_weight * static_cast<double>(gv[i]);
        }
      }
    }

    sgd_step(live, grad_acc, lr, cfg.weight_decay);
    live.step = start.step + static_cast<uint64_t>(step);

    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - run_start).count();
    result.log.entries.push_back(
        {step, lr, loss_sum / static_cast<double>(cfg.effective_batch), tokens_seen, seconds});

    if (sink) {
      const bool requested =
          std::find(snapshot_steps.begin(), snapshot_steps.end(), step) != snapshot_steps.end();
      if (requested || step == cfg.max_steps) {
        sink(detach_all(live), step);
      }
    }
  }

  result.checkpoint = detach_all(live);
  return result;
}

TwoStageResult run_two_stage(const Checkpoint& base, SampleStream& stage1_stream,
                             const TrainConfig& stage1_cfg, SampleStream& stage2_stream,
                             const TrainConfig& stage2_cfg, const std::vector<int64_t>& marks) {
  TwoStageResult out;

  TrainResult stage1 = train(base, stage1_stream, stage1_cfg);
  out.stage1 = stage1.checkpoint;
  out.stage1_log = std::move(stage1.log);

  auto keep = [&out](const Checkpoint& ckpt, int64_t step) {
    out.stage2_marks.emplace_back(step, ckpt);
  };
  TrainResult stage2 = train(out.stage1, stage2_stream, stage2_cfg, marks, keep);
  out.final = stage2.checkpoint;
  out.stage2_log = std::move(stage2.log);
  return out;
}

MixCompareResult compare_mixture_modes(const Checkpoint& base, const MixturePlan& plan,
                                       const Vocab& vocab, int64_t window,
                                       const TrainConfig& cfg) {
  MixCompareResult out;

  MixturePlan staged_plan = plan;
  staged_plan.mode = MixMode::Staged;
  SampleStream staged_stream(staged_plan, vocab, window);
  TrainResult staged = train(base, staged_stream, cfg);
  out.staged = std::move(staged.checkpoint);
  out.staged_log = std::move(staged.log);

  MixturePlan mixed_plan = plan;
  mixed_plan.mode = MixMode::Mixed;
  SampleStream mixed_stream(mixed_plan, vocab, window);
  TrainResult mixed = train(base, mixed_stream, cfg);
  out.mixed = std::move(mixed.checkpoint);
  out.mixed_log = std::move(mixed.log);
  return out;
}

}  // namespace panda

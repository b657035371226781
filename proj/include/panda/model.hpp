#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "panda/tensor.hpp"

namespace panda {

// Decoder-only transformer: token embedding, pre-norm residual blocks with
// rotary-embedding attention and a SwiGLU feed-forward, final norm, untied
// output head.
struct ModelConfig {
  int64_t dim = 0;
  int64_t n_heads = 0;
  int64_t n_layers = 0;
  int64_t vocab_size = 0;
  int64_t max_seq_len = 0;
  int64_t ffn_hidden = 0;
  float norm_eps = 1e-5f;
  float rope_base = 10000.0f;

  int64_t head_dim() const { return dim / n_heads; }
  void validate() const;  // throws std::invalid_argument on a violated invariant

  static ModelConfig desk_default();

  bool operator==(const ModelConfig&) const = default;
};

struct TensorSpec {
  std::string name;
  Shape shape;
};

// Names and shapes of every weight tensor, in serialization order. Purely a
// function of the config.
std::vector<TensorSpec> checkpoint_schema(const ModelConfig& config);
int64_t param_count(const ModelConfig& config);

struct Checkpoint {
  ModelConfig config;
  uint64_t step = 0;
  std::map<std::string, Tensor> tensors;

  const Tensor& tensor(const std::string& name) const;  // throws if absent

  // Copy whose tensors are fresh gradient-tracking leaves (payloads shared).
  Checkpoint with_grads() const;
};

// Fresh checkpoint at step 0: normal(0, 0.02) weights, norm gains at one.
Checkpoint init_checkpoint(const ModelConfig& config, uint64_t seed);

// y = x / sqrt(mean(x^2) + eps) * gain, applied to each length-d row.
Tensor rmsnorm(const Tensor& x, const Tensor& gain, double eps);

// Rotates consecutive feature pairs of x [T, heads, head_dim] by m * theta_i
// with theta_i = rope_base^(-2i/head_dim) at position m. Positions must lie
// in [0, max_seq_len).
Tensor rope_apply(const Tensor& x, const std::vector<int32_t>& positions, double rope_base,
                  int64_t max_seq_len);

// y = x W^T for row-major weights stored [out, in].
Tensor linear(const Tensor& x, const Tensor& w);

// y = W2 (SiLU(W1 x) * (W3 x)); accepts a single row [d] or a batch [T, d].
Tensor swiglu_ffn(const Tensor& x, const Tensor& w1, const Tensor& w3, const Tensor& w2);

// Causal forward pass over the whole sequence; returns logits [T, vocab].
Tensor forward(const Checkpoint& ckpt, const std::vector<int32_t>& tokens);

struct GenerateResult {
  std::vector<int32_t> ids;     // prompt followed by generated tokens
  bool truncated = false;       // hit max_seq_len before max_new / eos
};

// Appends up to max_new tokens. Temperature 0 takes the argmax (lowest index
// wins ties); positive temperatures sample with the given seed. Stops early
// on eos_id.
GenerateResult generate(const Checkpoint& ckpt, const std::vector<int32_t>& prompt,
                        int64_t max_new, double temperature, uint64_t seed, int32_t eos_id);

}  // namespace panda

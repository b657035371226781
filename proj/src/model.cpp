#include "panda/model.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "panda/ops.hpp"
#include "panda/rng.hpp"

namespace panda {

void ModelConfig::validate() const {
  if (dim < 1 || n_heads < 1 || n_layers < 0 || ffn_hidden < 1) {
    throw std::invalid_argument("model config: dim, n_heads and ffn_hidden must be positive");
  }
  if (dim % n_heads != 0) {
    throw std::invalid_argument("model config: dim " + std::to_string(dim) +
                                " not divisible by n_heads " + std::to_string(n_heads));
  }
  if (head_dim() % 2 != 0) {
    throw std::invalid_argument("model config: head_dim " + std::to_string(head_dim()) +
                                " must be even for rotary pairs");
  }
  if (max_seq_len < 1) {
    throw std::invalid_argument("model config: max_seq_len must be at least 1");
  }
  if (vocab_size < 2) {
    throw std::invalid_argument("model config: vocab_size must be at least 2");
  }
  if (!(norm_eps > 0.0f) || !(rope_base > 0.0f)) {
    throw std::invalid_argument("model config: norm_eps and rope_base must be positive");
  }
}

ModelConfig ModelConfig::desk_default() {
  ModelConfig c;
  c.dim = 64;
  c.n_heads = 4;
  c.n_layers = 4;
  c.vocab_size = 512;
  c.max_seq_len = 256;
  c.ffn_hidden = 172;
  c.norm_eps = 1e-5f;
  c.rope_base = 10000.0f;
  return c;
}

std::vector<TensorSpec> checkpoint_schema(const ModelConfig& c) {
  std::vector<TensorSpec> schema;
  schema.push_back({"tok_embed", {c.vocab_size, c.dim}});
  for (int64_t i = 0; i < c.n_layers; ++i) {
    const std::string p = "layers." + std::to_string(i) + ".";
    schema.push_back({p + "attn_norm", {c.dim}});
    schema.push_back({p + "wq", {c.dim, c.dim}});
    schema.push_back({p + "wk", {c.dim, c.dim}});
    schema.push_back({p + "wv", {c.dim, c.dim}});
    schema.push_back({p + "wo", {c.dim, c.dim}});
    schema.push_back({p + "ffn_norm", {c.dim}});
    schema.push_back({p + "w1", {c.ffn_hidden, c.dim}});
    schema.push_back({p + "w3", {c.ffn_hidden, c.dim}});
    schema.push_back({p + "w2", {c.dim, c.ffn_hidden}});
  }
  schema.push_back({"final_norm", {c.dim}});
  schema.push_back({"head", {c.vocab_size, c.dim}});
  return schema;
}

int64_t param_count(const ModelConfig& c) {
  int64_t total = 0;
  for (const TensorSpec& spec : checkpoint_schema(c)) total += shape_numel(spec.shape);
  return total;
}

const Tensor& Checkpoint::tensor(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) {
    throw std::out_of_range("checkpoint has no tensor named '" + name + "'");
  }
  return it->second;
}

Checkpoint Checkpoint::with_grads() const {
  Checkpoint out;
  out.config = config;
  out.step = step;
  for (const auto& [name, t] : tensors) out.tensors.emplace(name, t.detached(true));
  return out;
}

Checkpoint init_checkpoint(const ModelConfig& config, uint64_t seed) {
  config.validate();
  Rng rng(seed);
  Checkpoint ckpt;
  ckpt.config = config;
  ckpt.step = 0;
  for (const TensorSpec& spec : checkpoint_schema(config)) {
    if (spec.shape.size() == 1) {
      ckpt.tensors.emplace(spec.name, Tensor::full(spec.shape, 1.0f));
      continue;
    }
    std::vector<float> v(static_cast<size_t>(shape_numel(spec.shape)));
    for (float& x : v) x = static_cast<float>(rng.normal(0.0, 0.02));
    ckpt.tensors.emplace(spec.name, Tensor::from_data(spec.shape, std::move(v)));
  }
  return ckpt;
}

Tensor rmsnorm(const Tensor& x, const Tensor& gain, double eps) {
  if (gain.rank() != 1 || x.dim(-1) != gain.dim(0)) {
    throw std::invalid_argument("rmsnorm: gain " + shape_str(gain.shape()) +
                                " does not match rows of " + shape_str(x.shape()));
  }
  const int64_t d = gain.dim(0);
  const int64_t rows = x.numel() / d;
  const auto& xv = x.data();
  const auto& gv = gain.data();

  std::vector<double> inv_rms(static_cast<size_t>(rows));
  std::vector<float> out(xv.size());
  for (int64_t i = 0; i < rows; ++i) {
    const float* row = xv.data() + static_cast<size_t>(i * d);
    double ms = 0.0;
    for (int64_t j = 0; j < d; ++j) ms += static_cast<double>(row[j]) * row[j];
    ms /= static_cast<double>(d);
    const double r = 1.0 / std::sqrt(ms + eps);
    inv_rms[static_cast<size_t>(i)] = r;
    float* dst = out.data() + static_cast<size_t>(i * d);
    for (int64_t j = 0; j < d; ++j) dst[j] = static_cast<float>(row[j] * r * gv[static_cast<size_t>(j)]);
  }

  return make_op("rmsnorm", x.shape(), std::move(out), {x, gain},
                 [x, gain, inv_rms, rows, d](const TensorNode& self) {
                   const auto& xv = x.data();
                   const auto& gv = gain.data();
                   std::vector<float> dx;
                   if (x.requires_grad()) dx.assign(xv.size(), 0.0f);
                   std::vector<double> dg;
                   if (gain.requires_grad()) dg.assign(static_cast<size_t>(d), 0.0);

                   for (int64_t i = 0; i < rows; ++i) {
                     const float* row = xv.data() + static_cast<size_t>(i * d);
                     const float* go = self.grad.data() + static_cast<size_t>(i * d);
                     const double r = inv_rms[static_cast<size_t>(i)];
                     if (gain.requires_grad()) {
                       for (int64_t j = 0; j < d; ++j)
                         dg[static_cast<size_t>(j)] += static_cast<double>(go[j]) * row[j] * r;
                     }
                     if (x.requires_grad()) {
                       double s = 0.0;
                       for (int64_t j = 0; j < d; ++j)
                         s += static_cast<double>(go[j]) * row[j] * gv[static_cast<size_t>(j)];
                       const double k = r * r * r * s / static_cast<double>(d);
                       float* dst = dx.data() + static_cast<size_t>(i * d);
                       for (int64_t j = 0; j < d; ++j)
                         dst[j] = static_cast<float>(go[j] * r * gv[static_cast<size_t>(j)] - row[j] * k);
                     }
                   }
                   if (x.requires_grad()) accumulate_grad(x, dx);
                   if (gain.requires_grad()) {
                     std::vector<float> dgf(dg.size());
                     for (size_t j = 0; j < dg.size(); ++j) dgf[j] = static_cast<float>(dg[j]);
                     accumulate_grad(gain, dgf);
                   }
                 });
}

Tensor rope_apply(const Tensor& x, const std::vector<int32_t>& positions, double rope_base,
                  int64_t max_seq_len) {
  if (x.rank() != 3) {
    throw std::invalid_argument("rope_apply: expected [seq, heads, head_dim], got " +
                                shape_str(x.shape()));
  }
  const int64_t t = x.dim(0), h = x.dim(1), hd = x.dim(2);
  if (hd % 2 != 0) {
    throw std::invalid_argument("rope_apply: head_dim " + std::to_string(hd) + " must be even");
  }
  if (static_cast<int64_t>(positions.size()) != t) {
    throw std::invalid_argument("rope_apply: need one position per row");
  }
  for (int32_t m : positions) {
    if (m < 0 || m >= max_seq_len) {
      throw std::out_of_range("rope_apply: position " + std::to_string(m) +
                              " outside [0, " + std::to_string(max_seq_len) + ")");
    }
  }

  const int64_t pairs = hd / 2;
  std::vector<double> theta(static_cast<size_t>(pairs));
  for (int64_t i = 0; i < pairs; ++i) {
    theta[static_cast<size_t>(i)] = std::pow(rope_base, -2.0 * static_cast<double>(i) / static_cast<double>(hd));
  }

  const auto& xv = x.data();
  std::vector<float> out(xv.size());
  for (int64_t m = 0; m < t; ++m) {
    for (int64_t head = 0; head < h; ++head) {
      const size_t base = static_cast<size_t>((m * h + head) * hd);
      for (int64_t i = 0; i < pairs; ++i) {
        const double angle = static_cast<double>(positions[static_cast<size_t>(m)]) * theta[static_cast<size_t>(i)];
        const double c = std::cos(angle), s = std::sin(angle);
        const double a = xv[base + static_cast<size_t>(2 * i)];
        const double b = xv[base + static_cast<size_t>(2 * i + 1)];
        out[base + static_cast<size_t>(2 * i)] = static_cast<float>(a * c - b * s);
        out[base + static_cast<size_t>(2 * i + 1)] = static_cast<float>(a * s + b * c);
      }
    }
  }

  return make_op("rope_apply", x.shape(), std::move(out), {x},
                 [x, positions, theta, t, h, pairs, hd](const TensorNode& self) {
                   // the adjoint of a rotation is the reverse rotation
                   std::vector<float> g(self.grad.size());
                   for (int64_t m = 0; m < t; ++m) {
                     for (int64_t head = 0; head < h; ++head) {
                       const size_t base = static_cast<size_t>((m * h + head) * hd);
                       for (int64_t i = 0; i < pairs; ++i) {
                         const double angle =
                             static_cast<double>(positions[static_cast<size_t>(m)]) * theta[static_cast<size_t>(i)];
                         const double c = std::cos(angle), s = std::sin(angle);
                         const double ga = self.grad[base + static_cast<size_t>(2 * i)];
                         const double gb = self.grad[base + static_cast<size_t>(2 * i + 1)];
                         g[base + static_cast<size_t>(2 * i)] = static_cast<float>(ga * c + gb * s);
                         g[base + static_cast<size_t>(2 * i + 1)] = static_cast<float>(-ga * s + gb * c);
                       }
                     }
                   }
                   accumulate_grad(x, g);
                 });
}

Tensor linear(const Tensor& x, const Tensor& w) { return matmul(x, transpose(w)); }

Tensor swiglu_ffn(const Tensor& x, const Tensor& w1, const Tensor& w3, const Tensor& w2) {
  const bool single_row = x.rank() == 1;
  Tensor rows = single_row ? reshape(x, {1, x.dim(0)}) : x;
  Tensor gated = mul(silu(linear(rows, w1)), linear(rows, w3));
  Tensor y = linear(gated, w2);
  return single_row ? reshape(y, {x.dim(0)}) : y;
}

Tensor forward(const Checkpoint& ckpt, const std::vector<int32_t>& tokens) {
  const ModelConfig& cfg = ckpt.config;
  const int64_t t = static_cast<int64_t>(tokens.size());
  if (t > cfg.max_seq_len) {
    throw std::out_of_range("forward: sequence of " + std::to_string(t) +
                            " tokens exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
  }
  const int64_t hd = cfg.head_dim();
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(hd));
  std::vector<int32_t> positions(static_cast<size_t>(t));
  std::iota(positions.begin(), positions.end(), 0);

  Tensor x = embedding_lookup(ckpt.tensor("tok_embed"), tokens);
  for (int64_t layer = 0; layer < cfg.n_layers; ++layer) {
    const std::string p = "layers." + std::to_string(layer) + ".";

    Tensor xn = rmsnorm(x, ckpt.tensor(p + "attn_norm"), cfg.norm_eps);
    Tensor q = linear(xn, ckpt.tensor(p + "wq"));
    Tensor k = linear(xn, ckpt.tensor(p + "wk"));
    Tensor v = linear(xn, ckpt.tensor(p + "wv"));
    q = reshape(rope_apply(reshape(q, {t, cfg.n_heads, hd}), positions, cfg.rope_base,
                           cfg.max_seq_len),
                {t, cfg.dim});
    k = reshape(rope_apply(reshape(k, {t, cfg.n_heads, hd}), positions, cfg.rope_base,
                           cfg.max_seq_len),
                {t, cfg.dim});

    std::vector<Tensor> heads;
    heads.reserve(static_cast<size_t>(cfg.n_heads));
    for (int64_t head = 0; head < cfg.n_heads; ++head) {
      Tensor qh = slice_cols(q, head * hd, (head + 1) * hd);
      Tensor kh = slice_cols(k, head * hd, (head + 1) * hd);
      Tensor vh = slice_cols(v, head * hd, (head + 1) * hd);
      Tensor weights = softmax(causal_mask(matmul(qh, transpose(kh)) * att_scale), -1);
      heads.push_back(matmul(weights, vh));
    }
    x = x + linear(concat_cols(heads), ckpt.tensor(p + "wo"));

    Tensor xn2 = rmsnorm(x, ckpt.tensor(p + "ffn_norm"), cfg.norm_eps);
    x = x + swiglu_ffn(xn2, ckpt.tensor(p + "w1"), ckpt.tensor(p + "w3"), ckpt.tensor(p + "w2"));
  }
  return linear(rmsnorm(x, ckpt.tensor("final_norm"), cfg.norm_eps), ckpt.tensor("head"));
}

GenerateResult generate(const Checkpoint& ckpt, const std::vector<int32_t>& prompt,
                        int64_t max_new, double temperature, uint64_t seed, int32_t eos_id) {
  if (prompt.empty()) throw std::invalid_argument("generate: prompt must be nonempty");
  if (max_new < 0) throw std::invalid_argument("generate: max_new must be >= 0");

  GenerateResult result;
  result.ids = prompt;
  Rng rng(seed);
  const int64_t v = ckpt.config.vocab_size;

  for (int64_t n = 0; n < max_new; ++n) {
    if (static_cast<int64_t>(result.ids.size()) >= ckpt.config.max_seq_len) {
      result.truncated = true;
      break;
    }
    Tensor logits = forward(ckpt, result.ids);
    const float* last = logits.data().data() + (logits.dim(0) - 1) * v;

    int32_t next = 0;
    if (temperature <= 0.0) {
      for (int64_t j = 1; j < v; ++j) {
        if (last[j] > last[next]) next = static_cast<int32_t>(j);
      }
    } else {
      double mx = last[0];
      for (int64_t j = 1; j < v; ++j) mx = std::max(mx, static_cast<double>(last[j]));
      std::vector<double> weights(static_cast<size_t>(v));
      for (int64_t j = 0; j < v; ++j) {
        weights[static_cast<size_t>(j)] = std::exp((static_cast<double>(last[j]) - mx) / temperature);
      }
      next = static_cast<int32_t>(rng.categorical(weights));
    }
    result.ids.push_back(next);
    if (next == eos_id) break;
  }
  return result;
}

}  // namespace panda

#include "panda/ops.hpp"

#include <Eigen/Core>

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace panda {

namespace {

using MatF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapF = Eigen::Map<const MatF>;

void require_rank(const Tensor& t, int rank, const char* op) {
  if (t.rank() != rank) {
    throw std::invalid_argument(std::string(op) + ": expected rank-" + std::to_string(rank) +
                                " tensor, got " + shape_str(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  }
}

// C = A * B with f64 accumulation, result cast back to f32.
std::vector<float> gemm(const float* a, int64_t m, int64_t k, const float* b, int64_t n,
                        bool trans_a, bool trans_b) {
  MapF ma(a, trans_a ? k : m, trans_a ? m : k);
  MapF mb(b, trans_b ? n : k, trans_b ? k : n);
  MatD cd;
  if (!trans_a && !trans_b) {
    cd = ma.cast<double>() * mb.cast<double>();
  } else if (!trans_a && trans_b) {
    cd = ma.cast<double>() * mb.cast<double>().transpose();
  } else if (trans_a && !trans_b) {
    cd = ma.cast<double>().transpose() * mb.cast<double>();
  } else {
    cd = ma.cast<double>().transpose() * mb.cast<double>().transpose();
  }
  MatF cf = cd.cast<float>();
  return std::vector<float>(cf.data(), cf.data() + m * n);
}

int normalize_axis(const Tensor& x, int axis, const char* op) {
  int r = x.rank();
  int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw std::invalid_argument(std::string(op) + ": axis " + std::to_string(axis) +
                                " invalid for shape " + shape_str(x.shape()));
  }
  return a;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw std::invalid_argument("matmul: inner extents differ, " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  }
  std::vector<float> out = gemm(a.data().data(), m, k, b.data().data(), n, false, false);
  return make_op("matmul", {m, n}, std::move(out), {a, b}, [a, b, m, k, n](const TensorNode& self) {
    if (a.requires_grad()) {
      // dA = dC * B^T
      accumulate_grad(a, gemm(self.grad.data(), m, n, b.data().data(), k, false, true));
    }
    if (b.requires_grad()) {
      // dB = A^T * dC
      std::vector<float> gb = gemm(a.data().data(), k, m, self.grad.data(), n, true, false);
      accumulate_grad(b, gb);
    }
  });
}

Tensor transpose(const Tensor& x) {
  require_rank(x, 2, "transpose");
  const int64_t m = x.dim(0), n = x.dim(1);
  std::vector<float> out(static_cast<size_t>(m * n));
  const auto& v = x.data();
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) out[static_cast<size_t>(j * m + i)] = v[static_cast<size_t>(i * n + j)];
  return make_op("transpose", {n, m}, std::move(out), {x}, [x, m, n](const TensorNode& self) {
    std::vector<float> g(static_cast<size_t>(m * n));
    for (int64_t j = 0; j < n; ++j)
      for (int64_t i = 0; i < m; ++i)
        g[static_cast<size_t>(i * n + j)] = self.grad[static_cast<size_t>(j * m + i)];
    accumulate_grad(x, g);
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  const auto& va = a.data();
  const auto& vb = b.data();
  std::vector<float> out(va.size());
  for (size_t i = 0; i < va.size(); ++i) out[i] = va[i] + vb[i];
  return make_op("add", a.shape(), std::move(out), {a, b}, [a, b](const TensorNode& self) {
    if (a.requires_grad()) accumulate_grad(a, self.grad);
    if (b.requires_grad()) accumulate_grad(b, self.grad);
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  const auto& va = a.data();
  const auto& vb = b.data();
  std::vector<float> out(va.size());
  for (size_t i = 0; i < va.size(); ++i) out[i] = va[i] * vb[i];
  return make_op("mul", a.shape(), std::move(out), {a, b}, [a, b](const TensorNode& self) {
    if (a.requires_grad()) {
      std::vector<float> g(self.grad.size());
      for (size_t i = 0; i < g.size(); ++i) g[i] = self.grad[i] * b.data()[i];
      accumulate_grad(a, g);
    }
    if (b.requires_grad()) {
      std::vector<float> g(self.grad.size());
      for (size_t i = 0; i < g.size(); ++i) g[i] = self.grad[i] * a.data()[i];
      accumulate_grad(b, g);
    }
  });
}

Tensor scale(const Tensor& x, double c) {
  const auto& v = x.data();
  std::vector<float> out(v.size());
  for (size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(v[i] * c);
  return make_op("scale", x.shape(), std::move(out), {x}, [x, c](const TensorNode& self) {
    std::vector<float> g(self.grad.size());
    for (size_t i = 0; i < g.size(); ++i) g[i] = static_cast<float>(self.grad[i] * c);
    accumulate_grad(x, g);
  });
}

Tensor silu(const Tensor& x) {
  const auto& v = x.data();
  std::vector<float> out(v.size());
  for (size_t i = 0; i < v.size(); ++i) {
    double z = v[i];
    out[i] = static_cast<float>(z / (1.0 + std::exp(-z)));
  }
  return make_op("silu", x.shape(), std::move(out), {x}, [x](const TensorNode& self) {
    std::vector<float> g(self.grad.size());
    for (size_t i = 0; i < g.size(); ++i) {
      double z = x.data()[i];
      double s = 1.0 / (1.0 + std::exp(-z));
      g[i] = static_cast<float>(self.grad[i] * (s * (1.0 + z * (1.0 - s))));
    }
    accumulate_grad(x, g);
  });
}

Tensor softmax(const Tensor& x, int axis) {
  const int a = normalize_axis(x, axis, "softmax");
  const auto& shape = x.shape();
  const int64_t n = shape[static_cast<size_t>(a)];
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < a; ++i) outer *= shape[static_cast<size_t>(i)];
  for (int i = a + 1; i < x.rank(); ++i) inner *= shape[static_cast<size_t>(i)];

  const auto& v = x.data();
  std::vector<float> out(v.size());
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t in = 0; in < inner; ++in) {
      const int64_t base = o * n * inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (int64_t j = 0; j < n; ++j) mx = std::max(mx, static_cast<double>(v[static_cast<size_t>(base + j * inner)]));
      double denom = 0.0;
      for (int64_t j = 0; j < n; ++j) denom += std::exp(static_cast<double>(v[static_cast<size_t>(base + j * inner)]) - mx);
      for (int64_t j = 0; j < n; ++j) {
        out[static_cast<size_t>(base + j * inner)] =
            static_cast<float>(std::exp(static_cast<double>(v[static_cast<size_t>(base + j * inner)]) - mx) / denom);
      }
    }
  }
  Tensor y = make_op("softmax", x.shape(), std::move(out), {x},
                     [x, n, outer, inner](const TensorNode& self) {
                       // dx_j = y_j * (g_j - sum_i g_i y_i) per lane
                       std::vector<float> g(self.grad.size());
                       const auto& yv = *self.values;
                       for (int64_t o = 0; o < outer; ++o) {
                         for (int64_t in = 0; in < inner; ++in) {
                           const int64_t base = o * n * inner + in;
                           double dot = 0.0;
                           for (int64_t j = 0; j < n; ++j) {
                             size_t idx = static_cast<size_t>(base + j * inner);
                             dot += static_cast<double>(self.grad[idx]) * yv[idx];
                           }
                           for (int64_t j = 0; j < n; ++j) {
                             size_t idx = static_cast<size_t>(base + j * inner);
                             g[idx] = static_cast<float>(yv[idx] * (self.grad[idx] - dot));
                           }
                         }
                       }
                       accumulate_grad(x, g);
                     });
  return y;
}

Tensor causal_mask(const Tensor& scores) {
  require_rank(scores, 2, "causal_mask");
  const int64_t t = scores.dim(0);
  if (scores.dim(1) != t) {
    throw std::invalid_argument("causal_mask: expected square scores, got " + shape_str(scores.shape()));
  }
  const auto& v = scores.data();
  std::vector<float> out(v.size());
  const float ninf = -std::numeric_limits<float>::infinity();
  for (int64_t i = 0; i < t; ++i)
    for (int64_t j = 0; j < t; ++j)
      out[static_cast<size_t>(i * t + j)] = j <= i ? v[static_cast<size_t>(i * t + j)] : ninf;
  return make_op("causal_mask", scores.shape(), std::move(out), {scores},
                 [scores, t](const TensorNode& self) {
                   std::vector<float> g(self.grad.size(), 0.0f);
                   for (int64_t i = 0; i < t; ++i)
                     for (int64_t j = 0; j <= i; ++j)
                       g[static_cast<size_t>(i * t + j)] = self.grad[static_cast<size_t>(i * t + j)];
                   accumulate_grad(scores, g);
                 });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw std::invalid_argument("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  return make_view("reshape", std::move(shape), x,
                   [x](const TensorNode& self) { accumulate_grad(x, self.grad); });
}

Tensor slice_cols(const Tensor& x, int64_t c0, int64_t c1) {
  require_rank(x, 2, "slice_cols");
  const int64_t m = x.dim(0), n = x.dim(1);
  if (c0 < 0 || c1 > n || c0 >= c1) {
    throw std::invalid_argument("slice_cols: range [" + std::to_string(c0) + "," + std::to_string(c1) +
                                ") invalid for " + shape_str(x.shape()));
  }
  const int64_t w = c1 - c0;
  const auto& v = x.data();
  std::vector<float> out(static_cast<size_t>(m * w));
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < w; ++j)
      out[static_cast<size_t>(i * w + j)] = v[static_cast<size_t>(i * n + c0 + j)];
  return make_op("slice_cols", {m, w}, std::move(out), {x}, [x, m, n, c0, w](const TensorNode& self) {
    std::vector<float> g(static_cast<size_t>(m * n), 0.0f);
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < w; ++j)
        g[static_cast<size_t>(i * n + c0 + j)] = self.grad[static_cast<size_t>(i * w + j)];
    accumulate_grad(x, g);
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no tensors given");
  const int64_t m = parts[0].dim(0);
  int64_t total = 0;
  for (const Tensor& p : parts) {
    require_rank(p, 2, "concat_cols");
    if (p.dim(0) != m) {
      throw std::invalid_argument("concat_cols: row mismatch " + shape_str(parts[0].shape()) + " vs " +
                                  shape_str(p.shape()));
    }
    total += p.dim(1);
  }
  std::vector<float> out(static_cast<size_t>(m * total));
  int64_t off = 0;
  for (const Tensor& p : parts) {
    const int64_t w = p.dim(1);
    const auto& v = p.data();
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < w; ++j)
        out[static_cast<size_t>(i * total + off + j)] = v[static_cast<size_t>(i * w + j)];
    off += w;
  }
  return make_op("concat_cols", {m, total}, std::move(out), parts,
                 [parts, m, total](const TensorNode& self) {
                   int64_t off = 0;
                   for (const Tensor& p : parts) {
                     const int64_t w = p.dim(1);
                     if (p.requires_grad()) {
                       std::vector<float> g(static_cast<size_t>(m * w));
                       for (int64_t i = 0; i < m; ++i)
                         for (int64_t j = 0; j < w; ++j)
                           g[static_cast<size_t>(i * w + j)] = self.grad[static_cast<size_t>(i * total + off + j)];
                       accumulate_grad(p, g);
                     }
                     off += w;
                   }
                 });
}

Tensor embedding_lookup(const Tensor& table, const std::vector<int32_t>& ids) {
  require_rank(table, 2, "embedding_lookup");
  if (ids.empty()) throw std::invalid_argument("embedding_lookup: empty id list");
  const int64_t v = table.dim(0), d = table.dim(1);
  for (int32_t id : ids) {
    if (id < 0 || id >= v) {
      throw std::out_of_range("embedding_lookup: id " + std::to_string(id) + " outside vocab of " +
                              std::to_string(v));
    }
  }
  const int64_t n = static_cast<int64_t>(ids.size());
  const auto& tv = table.data();
  std::vector<float> out(static_cast<size_t>(n * d));
  for (int64_t i = 0; i < n; ++i) {
    const float* row = tv.data() + static_cast<size_t>(ids[static_cast<size_t>(i)]) * d;
    std::copy(row, row + d, out.begin() + static_cast<size_t>(i * d));
  }
  return make_op("embedding_lookup", {n, d}, std::move(out), {table},
                 [table, ids, v, d, n](const TensorNode& self) {
                   // scatter-add rows, f64 accumulation for repeated ids
                   std::vector<double> acc(static_cast<size_t>(v * d), 0.0);
                   for (int64_t i = 0; i < n; ++i) {
                     double* dst = acc.data() + static_cast<size_t>(ids[static_cast<size_t>(i)]) * d;
                     const float* src = self.grad.data() + static_cast<size_t>(i * d);
                     for (int64_t j = 0; j < d; ++j) dst[j] += src[j];
                   }
                   std::vector<float> g(acc.size());
                   for (size_t i = 0; i < acc.size(); ++i) g[i] = static_cast<float>(acc[i]);
                   accumulate_grad(table, g);
                 });
}

Tensor cross_entropy_masked(const Tensor& logits, const std::vector<int32_t>& targets,
                            const std::vector<uint8_t>& mask) {
  require_rank(logits, 2, "cross_entropy_masked");
  const int64_t t = logits.dim(0), v = logits.dim(1);
  if (static_cast<int64_t>(targets.size()) != t || static_cast<int64_t>(mask.size()) != t) {
    throw std::invalid_argument("cross_entropy_masked: targets/mask length must equal " +
                                std::to_string(t) + " rows");
  }
  int64_t n_masked = 0;
  for (int64_t i = 0; i < t; ++i) {
    if (mask[static_cast<size_t>(i)] == 0) continue;
    ++n_masked;
    int32_t tgt = targets[static_cast<size_t>(i)];
    if (tgt < 0 || tgt >= v) {
      throw std::out_of_range("cross_entropy_masked: target " + std::to_string(tgt) +
                              " outside vocab of " + std::to_string(v));
    }
  }
  if (n_masked == 0) {
    throw std::invalid_argument("cross_entropy_masked: mask selects no positions");
  }

  const auto& lv = logits.data();
  double total = 0.0;
  for (int64_t i = 0; i < t; ++i) {
    if (mask[static_cast<size_t>(i)] == 0) continue;
    const float* row = lv.data() + static_cast<size_t>(i * v);
    double mx = row[0];
    for (int64_t j = 1; j < v; ++j) mx = std::max(mx, static_cast<double>(row[j]));
    double denom = 0.0;
    for (int64_t j = 0; j < v; ++j) denom += std::exp(static_cast<double>(row[j]) - mx);
    double logp = static_cast<double>(row[targets[static_cast<size_t>(i)]]) - mx - std::log(denom);
    total -= logp;
  }
  const double loss = total / static_cast<double>(n_masked);

  return make_scalar_op("cross_entropy_masked", loss, {logits},
                        [logits, targets, mask, t, v, n_masked](const TensorNode& self) {
                          const float gscale = self.grad[0];
                          const auto& lv = logits.data();
                          std::vector<float> g(lv.size(), 0.0f);
                          const double inv = 1.0 / static_cast<double>(n_masked);
                          for (int64_t i = 0; i < t; ++i) {
                            if (mask[static_cast<size_t>(i)] == 0) continue;
                            const float* row = lv.data() + static_cast<size_t>(i * v);
                            float* grow = g.data() + static_cast<size_t>(i * v);
                            double mx = row[0];
                            for (int64_t j = 1; j < v; ++j) mx = std::max(mx, static_cast<double>(row[j]));
                            double denom = 0.0;
                            for (int64_t j = 0; j < v; ++j) denom += std::exp(static_cast<double>(row[j]) - mx);
                            for (int64_t j = 0; j < v; ++j) {
                              double p = std::exp(static_cast<double>(row[j]) - mx) / denom;
                              double onehot = j == targets[static_cast<size_t>(i)] ? 1.0 : 0.0;
                              grow[j] = static_cast<float>(gscale * inv * (p - onehot));
                            }
                          }
                          accumulate_grad(logits, g);
                        });
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (float v : x.data()) acc += v;
  return make_scalar_op("sum", acc, {x}, [x](const TensorNode& self) {
    std::vector<float> g(static_cast<size_t>(x.numel()), self.grad[0]);
    accumulate_grad(x, g);
  });
}

}  // namespace panda

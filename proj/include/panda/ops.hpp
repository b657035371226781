#pragma once

#include <cstdint>
#include <vector>

#include "panda/tensor.hpp"

namespace panda {

// Dense kernels over Tensor. Reductions accumulate in f64 and store f32
// results; storage stays f32 throughout. Shapes are validated eagerly and
// mismatches throw with both shapes in the message.

Tensor matmul(const Tensor& a, const Tensor& b);  // [m,k] x [k,n] -> [m,n]
Tensor transpose(const Tensor& x);                // [m,n] -> [n,m]

Tensor add(const Tensor& a, const Tensor& b);  // same shape
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise
Tensor scale(const Tensor& x, double c);
Tensor silu(const Tensor& x);

Tensor softmax(const Tensor& x, int axis);

// Square [T,T] scores; entries above the diagonal become -inf so softmax
// assigns them zero weight.
Tensor causal_mask(const Tensor& scores);

Tensor reshape(const Tensor& x, Shape shape);           // shares the payload
Tensor slice_cols(const Tensor& x, int64_t c0, int64_t c1);
Tensor concat_cols(const std::vector<Tensor>& parts);

// Gathers rows of table [V,d] at the given ids -> [n,d].
Tensor embedding_lookup(const Tensor& table, const std::vector<int32_t>& ids);

// Mean over masked positions of -log softmax(logits)[t, targets[t]].
// logits [T,V]; targets and mask have length T; mask entries are 0 or 1 and
// at least one must be set.
Tensor cross_entropy_masked(const Tensor& logits, const std::vector<int32_t>& targets,
                            const std::vector<uint8_t>& mask);

Tensor sum(const Tensor& x);  // -> scalar

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double c) { return scale(a, c); }

}  // namespace panda

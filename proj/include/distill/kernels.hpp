#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "distill/matrix.hpp"

namespace distill {

// Dense product a * b (or a * b^T). Accumulation order is fixed: each output
// element is a single left-to-right sum over the shared dimension, so results
// are bitwise identical no matter how many threads run the outer loops.
MatrixF32 matmul(const MatrixF32& a, const MatrixF32& b, bool transpose_b = false);

// Numerically stabilized softmax over a span, in place (max subtraction).
void softmax_inplace(std::span<float> row);

// Row-wise softmax. Each output row sums to 1.
MatrixF32 softmax_rows(const MatrixF32& a);

// Row-wise softmax under a causal mask driven by absolute positions:
// entry (i, j) participates iff key_positions[j] <= query_positions[i];
// masked entries are exactly 0. A fully masked row is an error (empty
// attention context).
MatrixF32 softmax_rows(const MatrixF32& a,
                       std::span<const std::int64_t> query_positions,
                       std::span<const std::int64_t> key_positions);

// y_j = x_j / sqrt(mean(x^2) + eps) * gain_j
std::vector<float> rmsnorm(std::span<const float> x, std::span<const float> gain, float eps);

// Rotary position embedding over a (len x head_dim) per-head matrix.
// Adjacent coordinate pairs (2i, 2i+1) rotate by pos * theta^(-2i/head_dim).
MatrixF32 rope_apply(const MatrixF32& per_head,
                     std::span<const std::int64_t> positions,
                     float theta);

// Indices of the k largest scores, ascending index order. Ties break toward
// the smaller index.
std::vector<std::size_t> top_k_indices(std::span<const float> scores, std::size_t k);

// Causal attention for one head: row i of `queries` attends to the prefix of
// `keys`/`values` whose positions are <= query_positions[i]. Scores are
// scaled by `scale`, softmaxed with max subtraction, then mixed into values.
// Only the causal prefix is ever touched, so the multiply-accumulate count
// is exactly sum_i attended(i) * head_dim for scores and again for values.
// key_positions must be strictly increasing. An empty prefix is an error.
MatrixF32 causal_attention_head(const MatrixF32& queries,
                                const MatrixF32& keys,
                                const MatrixF32& values,
                                std::span<const std::int64_t> query_positions,
                                std::span<const std::int64_t> key_positions,
                                float scale);

// Number of key positions visible to a query at `query_position` (prefix
// length under the causal mask). key_positions must be sorted ascending.
std::size_t causal_prefix_len(std::span<const std::int64_t> key_positions,
                              std::int64_t query_position);

// Serial reference kernels. Same arithmetic, same accumulation order as the
// parallel versions above; kept for equivalence tests and the benchmark.
namespace reference {

MatrixF32 matmul_serial(const MatrixF32& a, const MatrixF32& b, bool transpose_b = false);

MatrixF32 causal_attention_head_serial(const MatrixF32& queries,
                                       const MatrixF32& keys,
                                       const MatrixF32& values,
                                       std::span<const std::int64_t> query_positions,
                                       std::span<const std::int64_t> key_positions,
                                       float scale);

} // namespace reference

// Thread count used by the OpenMP kernels. 1 disables parallel regions.
void set_kernel_threads(int n);
int kernel_threads();

} // namespace distill

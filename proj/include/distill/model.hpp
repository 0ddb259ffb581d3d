#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "distill/kv_cache.hpp"
#include "distill/matrix.hpp"

namespace distill {

class CostLedger;

// Architecture of the tiny decoder-only transformer: embeddings, num_layers
// blocks of (RMSNorm -> grouped-query attention with rotary positions ->
// RMSNorm -> SwiGLU MLP), final norm, LM head.
struct ModelConfig {
    std::size_t num_layers{0};
    std::size_t num_q_heads{0};
    std::size_t num_kv_heads{0};
    std::size_t head_dim{0};
    std::size_t model_dim{0}; // must equal num_q_heads * head_dim
    std::size_t mlp_hidden_dim{0};
    std::size_t vocab_size{0};
    float rope_theta{10000.0f};
    float norm_eps{1e-5f};
    std::uint64_t seed{0};

    std::size_t q_dim() const { return num_q_heads * head_dim; }
    std::size_t kv_dim() const { return num_kv_heads * head_dim; }
    std::size_t group_size() const { return num_q_heads / num_kv_heads; }

    // Throws naming the offending field.
    void validate() const;
};

struct TensorSpec {
    std::string name;
    std::size_t rows{0};
    std::size_t cols{0};
    std::size_t count() const { return rows * cols; }
};

// Canonical tensor list for a config. The order is the on-disk layout of
// weights.bin; norm gains are stored as 1 x model_dim rows.
std::vector<TensorSpec> tensor_specs(const ModelConfig& config);

struct ModelBundle {
    ModelConfig config;
    std::unordered_map<std::string, MatrixF32> tensors;

    const MatrixF32& tensor(const std::string& name) const;

    // Checks every spec'd tensor is present with the right shape and finite.
    void validate() const;
};

// Deterministic seeded weights: each tensor gets its own splitmix64 stream
// keyed by config.seed ^ fnv1a64(tensor name); entries are uniform in
// [-1, 1) scaled by 1/sqrt(fan_in) (fan_in = tensor rows). Norm gains are 1.
// Identical config+seed produce bitwise-identical bundles on any platform.
ModelBundle init_random(const ModelConfig& config);

// One block's worth of activations for a run of token rows. layer_forward
// fills q/k/v with what it computed (rotary already applied to q and k) so a
// caller can intercept the selection layer's last-row query.
struct LayerActivations {
    MatrixF32 hidden;                      // len x model_dim
    MatrixF32 q;                           // len x (h*d)
    MatrixF32 k;                           // len x (h_kv*d)
    MatrixF32 v;                           // len x (h_kv*d)
    std::vector<std::int64_t> positions;   // strictly increasing absolute ids

    std::size_t len() const { return positions.size(); }
};

// Embedding lookup. Positions default to 0..n-1; decode steps and re-embedded
// sequences pass their own.
LayerActivations embed(std::span<const std::int32_t> tokens, const ModelBundle& bundle,
                       std::span<const std::int64_t> positions = {});

// Runs one block over `acts`: appends this layer's K/V (+positions) to the
// cache, attends causally over everything now cached, applies output
// projection and MLP. Attention touches only each row's causal prefix, so the
// recorded score/value MAC counts are exact, not dense upper bounds. `ledger`
// may be null for uninstrumented calls.
LayerActivations layer_forward(std::size_t layer_index, const LayerActivations& acts,
                               LayerKVCache& cache, const ModelBundle& bundle,
                               CostLedger* ledger);

// Final norm + LM head over the last row only.
std::vector<float> lm_head(const LayerActivations& acts, const ModelBundle& bundle,
                           CostLedger* ledger);

// Greedy decode: argmax with ties to the smaller token id.
std::int32_t greedy_argmax(std::span<const float> logits);

// Row subset of activations (hidden/q/k/v/positions), ascending unique indices.
LayerActivations gather_rows(const LayerActivations& acts, std::span<const std::size_t> indices);

// The last row's query as a (num_q_heads x head_dim) matrix.
MatrixF32 last_query_heads(const LayerActivations& acts, const ModelConfig& config);

} // namespace distill

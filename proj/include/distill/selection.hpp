#pragma once

#include <cstdint>
#include <vector>

#include "distill/kv_cache.hpp"
#include "distill/matrix.hpp"

namespace distill {

// How per-head scores are combined into one score per token. Default is a
// per-head softmax over positions followed by a sum across query heads; the
// raw-logit alternative sums q·k/sqrt(d) directly. With a single head the two
// agree on ordering (softmax is strictly monotone).
enum class ScoreAggregation { SoftmaxSum, RawLogitSum };

// The (layers, counts, truncation) triple that drives staged selection.
// Stage p selects token_counts[p] survivors after layer layers[p]; stages
// with index < truncation_count also truncate the caches of layers 0..layers[p].
struct SelectionSchedule {
    std::vector<std::size_t> layers;       // strictly ascending, each < num_layers
    std::vector<std::size_t> token_counts; // strictly descending
    std::size_t truncation_count{1};       // in [1, stages]
    bool force_include_last{true};

    std::size_t stages() const { return layers.size(); }
};

struct ValidatedSchedule {
    SelectionSchedule schedule;
    bool clamped{false}; // true if some count exceeded the prompt and was reduced
};

// Enforces the schedule invariants against a concrete model depth and prompt
// length. Counts larger than the prompt are clamped to it (select-all) rather
// than rejected; the flag records that this happened. Ordering violations,
// out-of-range layers, and a bad truncation_count are errors.
ValidatedSchedule validate_schedule(const SelectionSchedule& s, std::size_t num_layers,
                                    std::size_t prompt_len);

struct SelectionOptions {
    ScoreAggregation aggregation{ScoreAggregation::SoftmaxSum};
    bool force_include_last{true};
};

struct SelectionOutcome {
    std::vector<std::size_t> indices;            // into the current sequence, ascending
    std::vector<std::int64_t> original_positions; // absolute positions of survivors
    std::vector<float> per_token_scores;          // aggregated score per current token
};

// Scores every cached token against the last row's per-head queries and keeps
// the top k (all of them when k >= length). q_last is (num_q_heads x head_dim),
// rotary already applied; keys come from the selection layer's cache, which
// under grouped-query attention serves each query head through its kv group.
// If force_include_last is set and the final token did not make the cut, it
// replaces the worst survivor (lowest score; ties drop the larger index).
SelectionOutcome select(const MatrixF32& q_last, const LayerKVCache& cache, std::size_t k,
                        const SelectionOptions& opts = {});

// Multiply-accumulates spent scoring a selection over `len` cached tokens:
// one q·k dot per query head per token.
std::uint64_t selection_score_macs(std::size_t num_q_heads, std::size_t head_dim, std::size_t len);

} // namespace distill

#include "distill/selection.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "distill/kernels.hpp"

namespace distill {

namespace {

[[noreturn]] void fail(const std::string& what) {
    throw std::invalid_argument("selection: " + what);
}

} // namespace

ValidatedSchedule validate_schedule(const SelectionSchedule& s, std::size_t num_layers,
                                    std::size_t prompt_len) {
    if (s.layers.empty()) fail("schedule has no stages");
    if (s.layers.size() != s.token_counts.size())
        fail("stage count mismatch: " + std::to_string(s.layers.size()) + " layers vs " +
             std::to_string(s.token_counts.size()) + " token counts");
    if (prompt_len == 0) fail("prompt is empty");

    for (std::size_t p = 0; p < s.layers.size(); ++p) {
        if (s.layers[p] >= num_layers)
            fail("selection layer " + std::to_string(s.layers[p]) + " out of range (model has " +
                 std::to_string(num_layers) + " layers)");
        if (p > 0 && s.layers[p] <= s.layers[p - 1])
            fail("selection layers must be strictly ascending (got " +
                 std::to_string(s.layers[p - 1]) + " then " + std::to_string(s.layers[p]) + ")");
        if (s.token_counts[p] == 0) fail("token count must be >= 1");
        if (p > 0 && s.token_counts[p] >= s.token_counts[p - 1])
            fail("token counts must be strictly descending (got " +
                 std::to_string(s.token_counts[p - 1]) + " then " +
                 std::to_string(s.token_counts[p]) + ")");
    }
    if (s.truncation_count < 1 || s.truncation_count > s.layers.size())
        fail("truncation count " + std::to_string(s.truncation_count) + " outside [1, " +
             std::to_string(s.layers.size()) + "]");

    ValidatedSchedule out{s, false};
    for (auto& k : out.schedule.token_counts) {
        if (k > prompt_len) {
            k = prompt_len; // select-all at this stage; equal neighbours are fine post-clamp
            out.clamped = true;
        }
    }
    return out;
}

std::uint64_t selection_score_macs(std::size_t num_q_heads, std::size_t head_dim, std::size_t len) {
    return static_cast<std::uint64_t>(num_q_heads) * head_dim * len;
}

SelectionOutcome select(const MatrixF32& q_last, const LayerKVCache& cache, std::size_t k,
                        const SelectionOptions& opts) {
    const std::size_t len = cache.size();
    if (len == 0) fail("cannot select from an empty cache");
    if (k == 0) fail("k must be >= 1");

    const std::size_t h = q_last.rows;
    const std::size_t d = q_last.cols;
    if (h == 0 || d == 0) fail("q_last is empty");
    if (cache.kv_dim % d != 0)
        fail("head_dim " + std::to_string(d) + " does not divide cache kv_dim " +
             std::to_string(cache.kv_dim));
    const std::size_t h_kv = cache.kv_dim / d;
    if (h % h_kv != 0)
        fail(std::to_string(h) + " query heads not divisible by " + std::to_string(h_kv) +
             " kv heads");
    const std::size_t group = h / h_kv;

    const float scale = 1.0f / std::sqrt(static_cast<float>(d));
    std::vector<float> aggregate(len, 0.0f);
    std::vector<float> head_scores(len);
    for (std::size_t qh = 0; qh < h; ++qh) {
        const std::size_t kvh = qh / group;
        const float* q = q_last.row(qh).data();
        for (std::size_t j = 0; j < len; ++j) {
            const float* key = cache.keys.row(j).data() + kvh * d;
            float acc = 0.0f;
            for (std::size_t c = 0; c < d; ++c) acc += q[c] * key[c];
            head_scores[j] = acc * scale;
        }
        if (opts.aggregation == ScoreAggregation::SoftmaxSum)
            softmax_inplace(head_scores);
        for (std::size_t j = 0; j < len; ++j) aggregate[j] += head_scores[j];
    }

    const std::size_t keep = std::min(k, len);
    std::vector<std::size_t> indices = top_k_indices(aggregate, keep);

    // indices are ascending, so the last token survived iff it is the tail.
    if (opts.force_include_last && indices.back() != len - 1) {
        std::size_t victim = 0;
        for (std::size_t i = 1; i < indices.size(); ++i) {
            const float vs = aggregate[indices[victim]];
            const float is = aggregate[indices[i]];
            // Lowest score loses; among equals the larger index goes, the
            // exact reverse of the selection preference.
            if (is < vs || (is == vs && indices[i] > indices[victim])) victim = i;
        }
        indices.erase(indices.begin() + static_cast<std::ptrdiff_t>(victim));
        indices.push_back(len - 1); // still ascending: len-1 exceeds everything kept
    }

    SelectionOutcome out;
    out.indices = std::move(indices);
    out.original_positions.reserve(out.indices.size());
    for (std::size_t idx : out.indices) out.original_positions.push_back(cache.positions[idx]);
    out.per_token_scores = std::move(aggregate);
    return out;
}

} // namespace distill

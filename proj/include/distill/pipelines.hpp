#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "distill/cost.hpp"
#include "distill/model.hpp"
#include "distill/selection.hpp"

namespace distill {

struct PipelineConfig {
    Variant variant{Variant::AllKV};
    SelectionSchedule schedule;        // ignored for allkv
    std::size_t max_new_tokens{1};     // T, counting the first token
    std::optional<std::int32_t> eos_id;
    ScoreAggregation aggregation{ScoreAggregation::SoftmaxSum};
    // Ablation: renumber survivors (activations + truncated caches) to
    // positions 0..k-1 and continue decoding from k. Requires every stage to
    // truncate, otherwise untouched caches would keep conflicting positions.
    bool compact_positions{false};
    bool collect_step_logits{true};
};

struct StageRecord {
    std::size_t layer{0};
    std::size_t k{0};
    std::vector<std::int64_t> original_positions;
};

struct GenerationResult {
    std::size_t prompt_len{0};
    std::int32_t first_token{0};
    std::vector<std::int32_t> tokens;             // generated ids, first included
    std::vector<std::uint64_t> step_logits_fnv;   // fingerprint per generated token
    std::vector<std::vector<float>> step_logits;  // full logits when collected
    std::vector<std::size_t> cache_lengths_after_prefill;
    std::vector<std::size_t> cache_lengths_final;
    std::vector<std::vector<std::int64_t>> cache_positions_final;
    std::vector<StageRecord> selection_stages;
    std::vector<std::uint64_t> decode_step_score_macs; // one per decode step
    bool stopped_early{false};
    bool schedule_clamped{false};
    CostLedger ledger;
};

// What prefill hands to the generation loop.
struct PrefillOutput {
    std::int32_t first_token{0};
    std::vector<float> first_logits;
    CacheSet caches;
    std::vector<StageRecord> stages;
    std::int64_t next_position{0}; // where the first generated token sits
    bool schedule_clamped{false};
};

// Full attention over the whole prompt: every layer sees every token.
PrefillOutput prefill_allkv(std::span<const std::int32_t> tokens, const ModelBundle& bundle,
                            CostLedger& ledger);

// Staged top-k prefill: run layers in order; after each scheduled layer,
// keep the k best-scoring tokens' hidden states (original positions kept);
// when `truncate`, stages below the schedule's truncation count also gather
// the caches of layers 0..r to the survivors. Remaining layers process
// survivors only; the first token comes from the last survivor's final state.
PrefillOutput prefill_promptdistill(std::span<const std::int32_t> tokens, const ModelBundle& bundle,
                                    const SelectionSchedule& schedule, bool truncate,
                                    const PipelineConfig& config, CostLedger& ledger);

// Select at layer r, then throw everything away and re-run all layers on the
// surviving token ids, re-embedded at compacted positions 0..k-1.
PrefillOutput prefill_gemfilter(std::span<const std::int32_t> tokens, const ModelBundle& bundle,
                                const SelectionSchedule& schedule, const PipelineConfig& config,
                                CostLedger& ledger);

// Greedy decode steps 2..T on top of a finished prefill. Appends one entry to
// every layer's cache per step; fed-back tokens sit at next_position, +1, ...
void generate_loop(GenerationResult& result, CacheSet& caches, const ModelBundle& bundle,
                   const PipelineConfig& config, std::int64_t next_position, CostLedger& ledger);

// One-call driver: prefill per variant, then the shared generation loop.
GenerationResult run_pipeline(const ModelBundle& bundle, std::span<const std::int32_t> tokens,
                              const PipelineConfig& config);

// Everything compare_runs reports. `identical` means: same tokens, same cache
// shapes, zero cost deltas (MAC figures compared as attention-score MACs).
struct RunDiff {
    bool first_token_equal{false};
    bool tokens_equal{false};
    std::size_t common_prefix_len{0};
    std::vector<long long> cache_length_delta; // a - b, per layer, after prefill
    long long prompt_score_mac_delta{0};
    long long generation_score_mac_delta{0};
    long long prefill_score_mac_delta{0};
    long long total_score_mac_delta{0};
    long long cache_peak_delta{0};
    long long cache_final_delta{0};
    std::optional<float> max_step_logit_diff; // present when both runs kept logits
    bool identical() const;
};

RunDiff compare_runs(const GenerationResult& a, const GenerationResult& b);

} // namespace distill

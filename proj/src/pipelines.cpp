#include "distill/pipelines.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "distill/rng.hpp"

namespace distill {

namespace {

[[noreturn]] void fail(const std::string& what) {
    throw std::invalid_argument("pipeline: " + what);
}

SelectionOptions selection_options(const PipelineConfig& config, const SelectionSchedule& schedule) {
    return SelectionOptions{config.aggregation, schedule.force_include_last};
}

void renumber_compact(LayerActivations& acts, CacheSet& caches, std::size_t upto_layer) {
    for (std::size_t i = 0; i < acts.positions.size(); ++i)
        acts.positions[i] = static_cast<std::int64_t>(i);
    for (std::size_t j = 0; j <= upto_layer; ++j) {
        auto& positions = caches.layers[j].positions;
        for (std::size_t i = 0; i < positions.size(); ++i)
            positions[i] = static_cast<std::int64_t>(i);
    }
}

} // namespace

PrefillOutput prefill_allkv(std::span<const std::int32_t> tokens, const ModelBundle& bundle,
                            CostLedger& ledger) {
    const ModelConfig& c = bundle.config;
    if (tokens.empty()) fail("empty prompt");

    PrefillOutput out;
    out.caches = CacheSet::make(c.num_layers, c.kv_dim());
    LayerActivations acts = embed(tokens, bundle);
    for (std::size_t i = 0; i < c.num_layers; ++i) {
        acts = layer_forward(i, acts, out.caches.layers[i], bundle, &ledger);
        ledger.observe_cache(out.caches.total_scalars());
    }
    ledger.begin_phase(Phase::GenSetup);
    out.first_logits = lm_head(acts, bundle, &ledger);
    out.first_token = greedy_argmax(out.first_logits);
    out.next_position = static_cast<std::int64_t>(tokens.size());
    return out;
}

PrefillOutput prefill_promptdistill(std::span<const std::int32_t> tokens, const ModelBundle& bundle,
                                    const SelectionSchedule& schedule, bool truncate,
                                    const PipelineConfig& config, CostLedger& ledger) {
    const ModelConfig& c = bundle.config;
    if (tokens.empty()) fail("empty prompt");

    const ValidatedSchedule validated = validate_schedule(schedule, c.num_layers, tokens.size());
    const SelectionSchedule& sched = validated.schedule;
    if (config.compact_positions) {
        if (!truncate || sched.truncation_count != sched.stages())
            fail("compact positions require every stage to truncate its caches");
    }

    PrefillOutput out;
    out.schedule_clamped = validated.clamped;
    out.caches = CacheSet::make(c.num_layers, c.kv_dim());
    LayerActivations acts = embed(tokens, bundle);
    const SelectionOptions opts = selection_options(config, sched);

    std::size_t stage = 0;
    for (std::size_t i = 0; i < c.num_layers; ++i) {
        acts = layer_forward(i, acts, out.caches.layers[i], bundle, &ledger);
        ledger.observe_cache(out.caches.total_scalars());

        if (stage < sched.stages() && sched.layers[stage] == i) {
            const bool final_stage = (stage + 1 == sched.stages());
            // The prompt stage spans layers 0..r_last; the last selection is
            // the first act of generation-stage setup.
            if (final_stage) ledger.begin_phase(Phase::GenSetup);

            LayerKVCache& sel_cache = out.caches.layers[i];
            // The selection layer's cache was filled by this very pass, so it
            // covers exactly the rows still active.
            if (sel_cache.size() != acts.len())
                fail("selection layer cache is out of step with the active rows");

            const MatrixF32 q_last = last_query_heads(acts, c);
            SelectionOutcome outcome = select(q_last, sel_cache, sched.token_counts[stage], opts);
            ledger.record_selection(
                selection_score_macs(c.num_q_heads, c.head_dim, sel_cache.size()));

            acts = gather_rows(acts, outcome.indices);
            out.stages.push_back(
                StageRecord{i, outcome.indices.size(), outcome.original_positions});

            if (truncate && stage < sched.truncation_count) {
                out.caches.truncate_prefix_layers(i, outcome.indices);
                ledger.observe_cache(out.caches.total_scalars());
            }
            if (final_stage && config.compact_positions) renumber_compact(acts, out.caches, i);
            ++stage;
        }
    }

    out.first_logits = lm_head(acts, bundle, &ledger);
    out.first_token = greedy_argmax(out.first_logits);
    out.next_position = config.compact_positions ? static_cast<std::int64_t>(acts.len())
                                                 : static_cast<std::int64_t>(tokens.size());
    return out;
}

PrefillOutput prefill_gemfilter(std::span<const std::int32_t> tokens, const ModelBundle& bundle,
                                const SelectionSchedule& schedule, const PipelineConfig& config,
                                CostLedger& ledger) {
    const ModelConfig& c = bundle.config;
    if (tokens.empty()) fail("empty prompt");

    const ValidatedSchedule validated = validate_schedule(schedule, c.num_layers, tokens.size());
    const SelectionSchedule& sched = validated.schedule;
    if (sched.stages() != 1) fail("gemfilter takes a single-stage schedule");
    const std::size_t r = sched.layers[0];

    PrefillOutput out;
    out.schedule_clamped = validated.clamped;
    out.caches = CacheSet::make(c.num_layers, c.kv_dim());

    // Phase 1: layers 0..r over the full prompt, used only to pick survivors.
    LayerActivations acts = embed(tokens, bundle);
    for (std::size_t i = 0; i <= r; ++i) {
        acts = layer_forward(i, acts, out.caches.layers[i], bundle, &ledger);
        ledger.observe_cache(out.caches.total_scalars());
    }

    ledger.begin_phase(Phase::GenSetup);
    const MatrixF32 q_last = last_query_heads(acts, c);
    SelectionOutcome outcome =
        select(q_last, out.caches.layers[r], sched.token_counts[0],
               selection_options(config, sched));
    ledger.record_selection(
        selection_score_macs(c.num_q_heads, c.head_dim, out.caches.layers[r].size()));
    out.stages.push_back(StageRecord{r, outcome.indices.size(), outcome.original_positions});

    // Phase 2: drop all state, re-embed the surviving ids at positions
    // 0..k-1, and run the whole stack on that short sequence.
    std::vector<std::int32_t> survivors;
    survivors.reserve(outcome.indices.size());
    for (std::size_t idx : outcome.indices) survivors.push_back(tokens[idx]);

    out.caches = CacheSet::make(c.num_layers, c.kv_dim());
    ledger.observe_cache(0);
    LayerActivations rerun = embed(survivors, bundle);
    for (std::size_t i = 0; i < c.num_layers; ++i) {
        rerun = layer_forward(i, rerun, out.caches.layers[i], bundle, &ledger);
        ledger.observe_cache(out.caches.total_scalars());
    }

    out.first_logits = lm_head(rerun, bundle, &ledger);
    out.first_token = greedy_argmax(out.first_logits);
    out.next_position = static_cast<std::int64_t>(survivors.size());
    return out;
}

void generate_loop(GenerationResult& result, CacheSet& caches, const ModelBundle& bundle,
                   const PipelineConfig& config, std::int64_t next_position, CostLedger& ledger) {
    const ModelConfig& c = bundle.config;
    if (result.tokens.empty()) fail("generate_loop needs the prefill token");

    bool decoding = false;
    while (result.tokens.size() < config.max_new_tokens && !result.stopped_early) {
        if (!decoding) {
            ledger.begin_phase(Phase::Decode);
            decoding = true;
        }
        const std::uint64_t score_before = ledger.phase_cost(Phase::Decode).attention_score_macs;
        const std::int32_t prev = result.tokens.back();
        const std::int64_t pos =
            next_position + static_cast<std::int64_t>(result.tokens.size()) - 1;

        LayerActivations acts = embed(std::span<const std::int32_t>(&prev, 1), bundle,
                                      std::span<const std::int64_t>(&pos, 1));
        for (std::size_t i = 0; i < c.num_layers; ++i) {
            acts = layer_forward(i, acts, caches.layers[i], bundle, &ledger);
            ledger.observe_cache(caches.total_scalars());
        }
        std::vector<float> logits = lm_head(acts, bundle, &ledger);
        const std::int32_t token = greedy_argmax(logits);

        result.step_logits_fnv.push_back(fnv1a64(std::span<const float>(logits)));
        if (config.collect_step_logits) result.step_logits.push_back(std::move(logits));
        result.decode_step_score_macs.push_back(
            ledger.phase_cost(Phase::Decode).attention_score_macs - score_before);
        result.tokens.push_back(token);
        if (config.eos_id && token == *config.eos_id) result.stopped_early = true;
    }
}

GenerationResult run_pipeline(const ModelBundle& bundle, std::span<const std::int32_t> tokens,
                              const PipelineConfig& config) {
    if (config.max_new_tokens < 1) fail("max_new_tokens must be >= 1");

    const auto require_single_stage = [&](const char* name) {
        if (config.schedule.stages() != 1)
            fail(std::string(name) + " takes a single-stage schedule, got " +
                 std::to_string(config.schedule.stages()) + " stages");
    };

    GenerationResult result;
    result.prompt_len = tokens.size();
    CostLedger& ledger = result.ledger;

    PrefillOutput pre;
    switch (config.variant) {
        case Variant::AllKV:
            if (config.compact_positions) fail("allkv has no survivors to renumber");
            pre = prefill_allkv(tokens, bundle, ledger);
            break;
        case Variant::PromptDistillBasic:
            require_single_stage("promptdistill_basic");
            if (config.compact_positions)
                fail("compact positions require truncation (promptdistill_basic keeps caches long)");
            pre = prefill_promptdistill(tokens, bundle, config.schedule, /*truncate=*/false,
                                        config, ledger);
            break;
        case Variant::PromptDistillTruncated:
            require_single_stage("promptdistill");
            pre = prefill_promptdistill(tokens, bundle, config.schedule, /*truncate=*/true,
                                        config, ledger);
            break;
        case Variant::PromptDistillMulti:
            pre = prefill_promptdistill(tokens, bundle, config.schedule, /*truncate=*/true,
                                        config, ledger);
            break;
        case Variant::GemFilter:
            require_single_stage("gemfilter");
            if (config.compact_positions)
                fail("gemfilter always re-embeds at compacted positions; the flag is for "
                     "promptdistill variants");
            pre = prefill_gemfilter(tokens, bundle, config.schedule, config, ledger);
            break;
    }

    result.first_token = pre.first_token;
    result.tokens.push_back(pre.first_token);
    result.step_logits_fnv.push_back(fnv1a64(std::span<const float>(pre.first_logits)));
    if (config.collect_step_logits) result.step_logits.push_back(std::move(pre.first_logits));
    result.cache_lengths_after_prefill = pre.caches.layer_lengths();
    result.selection_stages = std::move(pre.stages);
    result.schedule_clamped = pre.schedule_clamped;
    if (config.eos_id && result.first_token == *config.eos_id) result.stopped_early = true;

    generate_loop(result, pre.caches, bundle, config, pre.next_position, ledger);

    result.cache_lengths_final = pre.caches.layer_lengths();
    result.cache_positions_final.reserve(pre.caches.layers.size());
    for (const auto& layer : pre.caches.layers)
        result.cache_positions_final.push_back(layer.positions);
    return result;
}

bool RunDiff::identical() const {
    if (!first_token_equal || !tokens_equal) return false;
    for (long long d : cache_length_delta)
        if (d != 0) return false;
    if (prompt_score_mac_delta != 0 || generation_score_mac_delta != 0 ||
        prefill_score_mac_delta != 0 || total_score_mac_delta != 0)
        return false;
    if (cache_peak_delta != 0 || cache_final_delta != 0) return false;
    if (max_step_logit_diff && *max_step_logit_diff != 0.0f) return false;
    return true;
}

RunDiff compare_runs(const GenerationResult& a, const GenerationResult& b) {
    if (!a.step_logits.empty() && !b.step_logits.empty() &&
        a.step_logits.front().size() != b.step_logits.front().size())
        fail("runs come from different vocabularies");
    if (a.cache_lengths_after_prefill.size() != b.cache_lengths_after_prefill.size())
        fail("runs come from models of different depth");

    RunDiff diff;
    diff.first_token_equal = a.first_token == b.first_token;
    diff.tokens_equal = a.tokens == b.tokens;
    const std::size_t common = std::min(a.tokens.size(), b.tokens.size());
    std::size_t prefix = 0;
    while (prefix < common && a.tokens[prefix] == b.tokens[prefix]) ++prefix;
    diff.common_prefix_len = prefix;

    diff.cache_length_delta.reserve(a.cache_lengths_after_prefill.size());
    for (std::size_t i = 0; i < a.cache_lengths_after_prefill.size(); ++i)
        diff.cache_length_delta.push_back(
            static_cast<long long>(a.cache_lengths_after_prefill[i]) -
            static_cast<long long>(b.cache_lengths_after_prefill[i]));

    const auto signed_delta = [](std::uint64_t x, std::uint64_t y) {
        return static_cast<long long>(x) - static_cast<long long>(y);
    };
    diff.prompt_score_mac_delta =
        signed_delta(a.ledger.prompt().attention_score_macs, b.ledger.prompt().attention_score_macs);
    diff.generation_score_mac_delta = signed_delta(a.ledger.generation().attention_score_macs,
                                                   b.ledger.generation().attention_score_macs);
    diff.prefill_score_mac_delta =
        signed_delta(a.ledger.prefill().attention_score_macs, b.ledger.prefill().attention_score_macs);
    diff.total_score_mac_delta =
        signed_delta(a.ledger.total().attention_score_macs, b.ledger.total().attention_score_macs);
    diff.cache_peak_delta =
        signed_delta(a.ledger.total().cache_scalars_peak, b.ledger.total().cache_scalars_peak);
    diff.cache_final_delta =
        signed_delta(a.ledger.total().cache_scalars_final, b.ledger.total().cache_scalars_final);

    if (!a.step_logits.empty() && !b.step_logits.empty()) {
        float max_diff = 0.0f;
        const std::size_t steps = std::min(a.step_logits.size(), b.step_logits.size());
        for (std::size_t s = 0; s < steps; ++s)
            for (std::size_t i = 0; i < a.step_logits[s].size(); ++i)
                max_diff = std::max(max_diff, std::abs(a.step_logits[s][i] - b.step_logits[s][i]));
        diff.max_step_logit_diff = max_diff;
    }
    return diff;
}

} // namespace distill

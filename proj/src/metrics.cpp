#include "distill/metrics.hpp"

#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>

namespace distill {

namespace {

using nlohmann::json;

std::string hex64(std::uint64_t v) {
    char buf[19];
    std::snprintf(buf, sizeof buf, "0x%016llx", static_cast<unsigned long long>(v));
    return buf;
}

// A cache entry holds 2 * h_kv * d scalars per token; a model without grouped
// KV heads would hold 2 * h * d for the same attention pattern.
std::uint64_t attention_equivalent(std::size_t physical, const ModelConfig& c) {
    return static_cast<std::uint64_t>(physical) * c.num_q_heads / c.num_kv_heads;
}

std::string aggregation_name(ScoreAggregation a) {
    return a == ScoreAggregation::SoftmaxSum ? "softmax_sum" : "raw_logit_sum";
}

json schedule_json(const SelectionSchedule& s) {
    return json{{"layers", s.layers},
                {"token_counts", s.token_counts},
                {"truncation_count", s.truncation_count},
                {"force_include_last", s.force_include_last}};
}

json conventions_json() {
    return json{
        {"mac",
         "one multiply-accumulate; attention counters cover only the causal-prefix pairs the "
         "kernels actually compute"},
        {"attention_buckets",
         "score = query-key dot products, value = probability-weighted value mixing; selection "
         "scoring is booked separately under selection_score_macs"},
        {"cache_scalars",
         "physical floats resident in the KV cache: 2 * num_kv_heads * head_dim * length per "
         "layer"},
        {"cache_scalars_attention_equivalent",
         "physical scalars times num_q_heads / num_kv_heads: what a model without grouped KV "
         "heads would hold for the same attention"},
        {"stages",
         "prompt covers the token stream through the last selection layer; generation = setup "
         "(final selection, truncation, survivor layers, first logits) plus decode (the "
         "per-token loop); prefill = prompt + setup"}};
}

} // namespace

json phase_cost_json(const PhaseCost& cost, const ModelConfig& config) {
    json weights = json::object();
    for (const auto& [name, scalars] : cost.weights_touched) weights[name] = scalars;
    return json{
        {"attention_score_macs", cost.attention_score_macs},
        {"attention_value_macs", cost.attention_value_macs},
        {"attention_macs", cost.attention_macs()},
        {"selection_score_macs", cost.selection_score_macs},
        {"weight_macs", cost.weight_macs},
        {"total_macs", cost.total_macs()},
        {"cache_scalars_peak", cost.cache_scalars_peak},
        {"cache_scalars_final", cost.cache_scalars_final},
        {"cache_scalars_peak_attention_equivalent",
         attention_equivalent(cost.cache_scalars_peak, config)},
        {"cache_scalars_final_attention_equivalent",
         attention_equivalent(cost.cache_scalars_final, config)},
        {"attention_score_macs_by_layer", cost.score_macs_by_layer},
        {"attention_value_macs_by_layer", cost.value_macs_by_layer},
        {"weights_touched", std::move(weights)},
        {"weight_scalars_touched", cost.weight_scalars_touched()}};
}

json stage_prediction_json(const StagePrediction& stage, const ModelConfig& config) {
    return json{
        {"attention_score_macs", stage.attention_score_macs},
        {"attention_value_macs", stage.attention_value_macs},
        {"selection_score_macs", stage.selection_score_macs},
        {"weight_macs", stage.weight_macs},
        {"total_macs", stage.attention_score_macs + stage.attention_value_macs +
                           stage.selection_score_macs + stage.weight_macs},
        {"cache_scalars_peak", stage.cache_scalars_peak},
        {"cache_scalars_final", stage.cache_scalars_final},
        {"cache_scalars_peak_attention_equivalent",
         attention_equivalent(stage.cache_scalars_peak, config)},
        {"cache_scalars_final_attention_equivalent",
         attention_equivalent(stage.cache_scalars_final, config)}};
}

json audit_json(const AuditReport& report) {
    json entries = json::array();
    for (const AuditEntry& e : report.entries)
        entries.push_back(json{{"counter", e.counter},
                               {"measured", e.measured},
                               {"predicted", e.predicted},
                               {"ok", e.ok}});
    return json{{"ok", report.ok}, {"entries", std::move(entries)}, {"notes", report.notes}};
}

json metrics_json(const ModelConfig& config, const PipelineConfig& run,
                  const GenerationResult& result, const CostPrediction& prediction,
                  const AuditReport& audit, double wall_ms, bool dump_cache) {
    json doc;
    doc["schema"] = 1;
    doc["variant"] = variant_name(run.variant);

    doc["config"]["model"] = json{{"num_layers", config.num_layers},
                                  {"num_q_heads", config.num_q_heads},
                                  {"num_kv_heads", config.num_kv_heads},
                                  {"head_dim", config.head_dim},
                                  {"model_dim", config.model_dim},
                                  {"mlp_hidden_dim", config.mlp_hidden_dim},
                                  {"vocab_size", config.vocab_size},
                                  {"rope_theta", config.rope_theta},
                                  {"norm_eps", config.norm_eps},
                                  {"seed", config.seed}};
    json run_json{{"max_new_tokens", run.max_new_tokens},
                  {"aggregation", aggregation_name(run.aggregation)},
                  {"compact_positions", run.compact_positions},
                  {"eos_id", run.eos_id ? json(*run.eos_id) : json(nullptr)}};
    run_json["schedule"] =
        run.variant == Variant::AllKV ? json(nullptr) : schedule_json(run.schedule);
    doc["config"]["run"] = std::move(run_json);

    doc["n"] = result.prompt_len;
    doc["T"] = run.max_new_tokens;
    doc["first_token"] = result.first_token;
    doc["tokens"] = result.tokens;
    json fnv = json::array();
    for (std::uint64_t v : result.step_logits_fnv) fnv.push_back(hex64(v));
    doc["step_logits_fnv"] = std::move(fnv);
    doc["stopped_early"] = result.stopped_early;

    doc["cache_lengths_after_prefill"] = result.cache_lengths_after_prefill;
    json stages = json::array();
    for (const StageRecord& s : result.selection_stages)
        stages.push_back(json{{"layer", s.layer},
                              {"k", s.k},
                              {"original_positions", s.original_positions}});
    doc["selection"] = json{{"clamped", result.schedule_clamped}, {"stages", std::move(stages)}};

    const CostLedger& ledger = result.ledger;
    json measured{{"prompt", phase_cost_json(ledger.prompt(), config)},
                  {"gen_setup", phase_cost_json(ledger.phase_cost(Phase::GenSetup), config)},
                  {"decode", phase_cost_json(ledger.phase_cost(Phase::Decode), config)},
                  {"generation", phase_cost_json(ledger.generation(), config)},
                  {"prefill", phase_cost_json(ledger.prefill(), config)},
                  {"total", phase_cost_json(ledger.total(), config)}};
    measured["decode"]["per_step_score_macs"] = result.decode_step_score_macs;

    json predicted{{"prompt", stage_prediction_json(prediction.prompt, config)},
                   {"gen_setup", stage_prediction_json(prediction.gen_setup, config)},
                   {"decode", stage_prediction_json(prediction.decode, config)},
                   {"generation", stage_prediction_json(prediction.generation(), config)},
                   {"prefill", stage_prediction_json(prediction.prefill(), config)},
                   {"total", stage_prediction_json(prediction.total(), config)},
                   {"includes_decode", prediction.has_decode},
                   {"prompt_theta", prediction.prompt_theta},
                   {"generation_theta", prediction.generation_theta}};

    doc["cost"] = json{{"conventions", conventions_json()},
                       {"measured", std::move(measured)},
                       {"predicted", std::move(predicted)},
                       {"audit", audit_json(audit)}};

    if (dump_cache)
        doc["cache_dump"] = json{{"lengths_final", result.cache_lengths_final},
                                 {"positions_final", result.cache_positions_final}};

    doc["timing"] = json{{"wall_ms", wall_ms}};
    return doc;
}

json diff_json(const RunDiff& diff) {
    return json{
        {"first_token_equal", diff.first_token_equal},
        {"tokens_equal", diff.tokens_equal},
        {"common_prefix_len", diff.common_prefix_len},
        {"cache_length_delta", diff.cache_length_delta},
        {"attention_score_mac_delta",
         json{{"prompt", diff.prompt_score_mac_delta},
              {"generation", diff.generation_score_mac_delta},
              {"prefill", diff.prefill_score_mac_delta},
              {"total", diff.total_score_mac_delta}}},
        {"cache_peak_delta", diff.cache_peak_delta},
        {"cache_final_delta", diff.cache_final_delta},
        {"max_step_logit_diff",
         diff.max_step_logit_diff ? json(*diff.max_step_logit_diff) : json(nullptr)},
        {"identical", diff.identical()}};
}

void write_json_atomic(const json& doc, const std::filesystem::path& path) {
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("metrics: cannot open " + tmp.string());
        out << doc.dump(2) << '\n';
        if (!out) throw std::runtime_error("metrics: write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

} // namespace distill

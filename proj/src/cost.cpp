#include "distill/cost.hpp"

#include <algorithm>
#include <stdexcept>

namespace distill {

namespace {

[[noreturn]] void fail(const std::string& what) { throw std::invalid_argument("cost: " + what); }

std::size_t idx(Phase p) { return static_cast<std::size_t>(p); }

// Sum of causal prefix lengths over x rows starting from an empty context:
// row i attends i+1 keys.
std::uint64_t causal_pairs(std::uint64_t x) { return x * (x + 1) / 2; }

// Weight MACs one token row spends in one block.
std::uint64_t layer_weight_macs(const ModelConfig& c) {
    const std::uint64_t dm = c.model_dim, qd = c.q_dim(), kvd = c.kv_dim(), mlp = c.mlp_hidden_dim;
    return dm * qd + 2 * dm * kvd + qd * dm + 2 * dm * mlp + mlp * dm;
}

// Does stage p of this run truncate caches?
bool stage_truncates(Variant v, const SelectionSchedule& s, std::size_t p) {
    if (v == Variant::PromptDistillBasic || v == Variant::GemFilter) return false;
    return p < s.truncation_count;
}

// Sequence length entering stage p's selection (n for stage 0).
std::size_t stage_input_len(const SelectionSchedule& s, std::size_t n, std::size_t p) {
    return p == 0 ? n : s.token_counts[p - 1];
}

} // namespace

std::string variant_name(Variant v) {
    switch (v) {
        case Variant::AllKV: return "allkv";
        case Variant::PromptDistillBasic: return "promptdistill_basic";
        case Variant::PromptDistillTruncated: return "promptdistill";
        case Variant::PromptDistillMulti: return "promptdistill_multi";
        case Variant::GemFilter: return "gemfilter";
    }
    fail("unknown variant enum value");
}

Variant variant_from_name(std::string_view name) {
    if (name == "allkv") return Variant::AllKV;
    if (name == "promptdistill_basic") return Variant::PromptDistillBasic;
    if (name == "promptdistill") return Variant::PromptDistillTruncated;
    if (name == "promptdistill_multi") return Variant::PromptDistillMulti;
    if (name == "gemfilter") return Variant::GemFilter;
    fail("unknown variant '" + std::string(name) +
         "' (expected allkv|promptdistill_basic|promptdistill|promptdistill_multi|gemfilter)");
}

std::size_t PhaseCost::weight_scalars_touched() const {
    std::size_t total = 0;
    for (const auto& [name, scalars] : weights_touched) total += scalars;
    return total;
}

PhaseCost merge(const PhaseCost& a, const PhaseCost& b) {
    PhaseCost out = a;
    out.attention_score_macs += b.attention_score_macs;
    out.attention_value_macs += b.attention_value_macs;
    out.selection_score_macs += b.selection_score_macs;
    out.weight_macs += b.weight_macs;
    out.cache_scalars_peak = std::max(a.cache_scalars_peak, b.cache_scalars_peak);
    if (b.cache_observed) out.cache_scalars_final = b.cache_scalars_final;
    out.cache_observed = a.cache_observed || b.cache_observed;
    out.score_macs_by_layer.resize(
        std::max(a.score_macs_by_layer.size(), b.score_macs_by_layer.size()), 0);
    out.value_macs_by_layer.resize(
        std::max(a.value_macs_by_layer.size(), b.value_macs_by_layer.size()), 0);
    for (std::size_t i = 0; i < b.score_macs_by_layer.size(); ++i)
        out.score_macs_by_layer[i] += b.score_macs_by_layer[i];
    for (std::size_t i = 0; i < b.value_macs_by_layer.size(); ++i)
        out.value_macs_by_layer[i] += b.value_macs_by_layer[i];
    for (const auto& [name, scalars] : b.weights_touched) out.weights_touched.emplace(name, scalars);
    return out;
}

void CostLedger::begin_phase(Phase p) {
    if (idx(p) < idx(phase_)) fail("phases only move forward");
    if (p == phase_) return;
    phase_ = p;
    if (any_observed_) {
        PhaseCost& b = phases_[idx(p)];
        b.cache_scalars_peak = std::max(b.cache_scalars_peak, last_observed_);
        b.cache_scalars_final = last_observed_;
        b.cache_observed = true;
    }
}

void CostLedger::record_attention(std::size_t layer, std::uint64_t score_macs,
                                  std::uint64_t value_macs) {
    PhaseCost& b = phases_[idx(phase_)];
    b.attention_score_macs += score_macs;
    b.attention_value_macs += value_macs;
    if (layer >= b.score_macs_by_layer.size()) {
        b.score_macs_by_layer.resize(layer + 1, 0);
        b.value_macs_by_layer.resize(layer + 1, 0);
    }
    b.score_macs_by_layer[layer] += score_macs;
    b.value_macs_by_layer[layer] += value_macs;
}

void CostLedger::record_selection(std::uint64_t score_macs) {
    phases_[idx(phase_)].selection_score_macs += score_macs;
}

void CostLedger::record_weight_use(std::string_view tensor, std::size_t scalar_count,
                                   std::uint64_t macs) {
    PhaseCost& b = phases_[idx(phase_)];
    b.weight_macs += macs;
    b.weights_touched.emplace(std::string(tensor), scalar_count);
}

void CostLedger::observe_cache(std::size_t physical_scalars) {
    PhaseCost& b = phases_[idx(phase_)];
    b.cache_scalars_peak = std::max(b.cache_scalars_peak, physical_scalars);
    b.cache_scalars_final = physical_scalars;
    b.cache_observed = true;
    last_observed_ = physical_scalars;
    any_observed_ = true;
}

PhaseCost CostLedger::generation() const {
    return merge(phase_cost(Phase::GenSetup), phase_cost(Phase::Decode));
}

PhaseCost CostLedger::prefill() const {
    return merge(phase_cost(Phase::Prompt), phase_cost(Phase::GenSetup));
}

PhaseCost CostLedger::total() const {
    return merge(prefill(), phase_cost(Phase::Decode));
}

StagePrediction CostPrediction::merge_final_of_second(const StagePrediction& a,
                                                      const StagePrediction& b) {
    StagePrediction out;
    out.attention_score_macs = a.attention_score_macs + b.attention_score_macs;
    out.attention_value_macs = a.attention_value_macs + b.attention_value_macs;
    out.selection_score_macs = a.selection_score_macs + b.selection_score_macs;
    out.weight_macs = a.weight_macs + b.weight_macs;
    out.cache_scalars_peak = std::max(a.cache_scalars_peak, b.cache_scalars_peak);
    out.cache_scalars_final = b.cache_scalars_final;
    return out;
}

StagePrediction merge(const StagePrediction& a, const StagePrediction& b) {
    return CostPrediction::merge_final_of_second(a, b);
}

StagePrediction CostPrediction::generation() const {
    if (!has_decode) return gen_setup;
    return merge_final_of_second(gen_setup, decode);
}

StagePrediction CostPrediction::total() const {
    return merge_final_of_second(prompt, generation());
}

std::vector<std::size_t> predicted_cache_lengths(const ModelConfig& config, const RunShape& shape) {
    const std::size_t m = config.num_layers;
    const std::size_t n = shape.prompt_len;
    std::vector<std::size_t> lens(m, 0);

    if (shape.variant == Variant::AllKV) {
        std::fill(lens.begin(), lens.end(), n);
        return lens;
    }
    const SelectionSchedule s = validate_schedule(shape.schedule, m, n).schedule;
    if (shape.variant == Variant::GemFilter) {
        std::fill(lens.begin(), lens.end(), s.token_counts.back());
        return lens;
    }

    std::size_t cur = n;
    std::size_t next_layer = 0;
    for (std::size_t p = 0; p < s.stages(); ++p) {
        for (; next_layer <= s.layers[p]; ++next_layer) lens[next_layer] = cur;
        if (stage_truncates(shape.variant, s, p))
            for (std::size_t j = 0; j <= s.layers[p]; ++j) lens[j] = s.token_counts[p];
        cur = s.token_counts[p];
    }
    for (; next_layer < m; ++next_layer) lens[next_layer] = cur;
    return lens;
}

CostPrediction predict_cost(const ModelConfig& config, const RunShape& shape) {
    config.validate();
    if (shape.prompt_len < 1) fail("prompt_len must be >= 1");
    if (shape.max_new_tokens < 1) fail("max_new_tokens must be >= 1");

    const std::uint64_t m = config.num_layers;
    const std::uint64_t hd = static_cast<std::uint64_t>(config.num_q_heads) * config.head_dim;
    const std::uint64_t n = shape.prompt_len;
    const std::uint64_t T = shape.max_new_tokens;
    const std::uint64_t wl = layer_weight_macs(config);
    const std::uint64_t head_macs = static_cast<std::uint64_t>(config.model_dim) * config.vocab_size;
    const std::size_t entry_scalars = 2 * config.num_kv_heads * config.head_dim;

    CostPrediction pred;
    pred.has_decode = T > 1;

    SelectionSchedule s;
    if (shape.variant != Variant::AllKV) {
        s = validate_schedule(shape.schedule, config.num_layers, shape.prompt_len).schedule;
        const bool single_stage_variant = shape.variant == Variant::PromptDistillBasic ||
                                          shape.variant == Variant::PromptDistillTruncated ||
                                          shape.variant == Variant::GemFilter;
        if (single_stage_variant && s.stages() != 1)
            fail(variant_name(shape.variant) + " takes a single-stage schedule, got " +
                 std::to_string(s.stages()) + " stages");
    }

    // ---- MAC counts (closed forms) ----------------------------------------
    if (shape.variant == Variant::AllKV) {
        pred.prompt.attention_score_macs = m * hd * causal_pairs(n);
        pred.prompt.weight_macs = m * n * wl;
        pred.gen_setup.weight_macs = head_macs;
        pred.prompt_theta = "Theta(m h n^2 d)";
        pred.generation_theta = "Theta(m h (n t + t^2) d)";
    } else {
        const std::size_t P = s.stages();
        const std::uint64_t r_last = s.layers.back();
        const std::uint64_t k_last = s.token_counts.back();

        // Prompt window: layers 0..r_last, each running on the stage's width.
        std::uint64_t prompt_score = 0, prompt_weight = 0, prompt_sel = 0;
        std::size_t layer = 0;
        for (std::size_t p = 0; p < P; ++p) {
            const std::uint64_t width = stage_input_len(s, n, p);
            for (; layer <= s.layers[p]; ++layer) {
                prompt_score += hd * causal_pairs(width);
                prompt_weight += width * wl;
            }
            if (p + 1 < P) prompt_sel += hd * width; // intermediate selections
        }
        pred.prompt.attention_score_macs = prompt_score;
        pred.prompt.weight_macs = prompt_weight;
        pred.prompt.selection_score_macs = prompt_sel;

        // Generation setup: final selection, survivor processing, LM head.
        pred.gen_setup.selection_score_macs = hd * stage_input_len(s, n, P - 1);
        if (shape.variant == Variant::GemFilter) {
            pred.gen_setup.attention_score_macs = m * hd * causal_pairs(k_last);
            pred.gen_setup.weight_macs = m * k_last * wl + head_macs;
        } else {
            const std::uint64_t tail_layers = m - 1 - r_last;
            pred.gen_setup.attention_score_macs = tail_layers * hd * causal_pairs(k_last);
            pred.gen_setup.weight_macs = tail_layers * k_last * wl + head_macs;
        }

        // Theta text.
        if (shape.variant == Variant::PromptDistillMulti && P > 1) {
            std::string t = "Theta(r1 h n^2 d";
            for (std::size_t p = 1; p < P; ++p)
                t += " + (r" + std::to_string(p + 1) + " - r" + std::to_string(p) + ") h k" +
                     std::to_string(p) + "^2 d";
            pred.prompt_theta = t + ")";
        } else {
            pred.prompt_theta = "Theta(r h n^2 d)";
        }
        switch (shape.variant) {
            case Variant::PromptDistillBasic:
                pred.generation_theta = "Theta(m h (k^2 + t^2) d + r h (n t - k t - k^2) d)";
                break;
            case Variant::GemFilter:
                pred.generation_theta = "Theta(m h (k^2 + k t + t^2) d)";
                break;
            default:
                pred.generation_theta = "Theta(m h (k t + t^2) d)";
                break;
        }
    }

    // Decode MACs from the post-prefill per-layer lengths.
    const std::vector<std::size_t> base = predicted_cache_lengths(config, shape);
    if (pred.has_decode) {
        std::uint64_t base_sum = 0;
        for (std::size_t b : base) base_sum += b;
        const std::uint64_t steps = T - 1;
        pred.decode.attention_score_macs = hd * (steps * base_sum + m * causal_pairs(steps));
        pred.decode.weight_macs = steps * (m * wl + head_macs);
    }
    pred.prompt.attention_value_macs = pred.prompt.attention_score_macs;
    pred.gen_setup.attention_value_macs = pred.gen_setup.attention_score_macs;
    pred.decode.attention_value_macs = pred.decode.attention_score_macs;

    // ---- Cache scalar trajectory -------------------------------------------
    // Mirrors the observation points of a real run: after every append to a
    // layer, after every truncation, after a cache discard; each phase starts
    // at the level the previous one ended on.
    std::size_t run = 0;
    std::size_t prompt_peak = 0, setup_peak = 0;
    if (shape.variant == Variant::AllKV) {
        run = static_cast<std::size_t>(m) * n;
        prompt_peak = run;
        setup_peak = run;
    } else {
        std::vector<std::size_t> lens(config.num_layers, 0);
        std::size_t cur = n;
        std::size_t layer = 0;
        const std::size_t P = s.stages();
        for (std::size_t p = 0; p < P; ++p) {
            for (; layer <= s.layers[p]; ++layer) {
                lens[layer] = cur;
                run += cur;
                prompt_peak = std::max(prompt_peak, run);
            }
            if (p + 1 == P) break; // final selection happens in the setup phase
            if (stage_truncates(shape.variant, s, p)) {
                for (std::size_t j = 0; j <= s.layers[p]; ++j) {
                    run -= lens[j] - s.token_counts[p];
                    lens[j] = s.token_counts[p];
                }
            }
            cur = s.token_counts[p];
        }
        const std::size_t prompt_final = run;
        setup_peak = run; // phase entry level
        const std::size_t P1 = P - 1;
        const std::size_t k_last = s.token_counts.back();
        if (shape.variant == Variant::GemFilter) {
            run = 0; // phase-1 caches discarded wholesale
            for (std::size_t j = 0; j < config.num_layers; ++j) {
                run += k_last;
                setup_peak = std::max(setup_peak, run);
            }
        } else {
            if (stage_truncates(shape.variant, s, P1)) {
                for (std::size_t j = 0; j <= s.layers[P1]; ++j) {
                    run -= lens[j] - k_last;
                    lens[j] = k_last;
                }
            }
            for (std::size_t j = s.layers[P1] + 1; j < config.num_layers; ++j) {
                run += k_last;
                setup_peak = std::max(setup_peak, run);
            }
        }
        pred.prompt.cache_scalars_peak = prompt_peak * entry_scalars;
        pred.prompt.cache_scalars_final = prompt_final * entry_scalars;
        pred.gen_setup.cache_scalars_peak = setup_peak * entry_scalars;
        pred.gen_setup.cache_scalars_final = run * entry_scalars;
        if (pred.has_decode) {
            const std::size_t decode_final = run + config.num_layers * (T - 1);
            pred.decode.cache_scalars_peak = decode_final * entry_scalars;
            pred.decode.cache_scalars_final = decode_final * entry_scalars;
        }
        return pred;
    }

    pred.prompt.cache_scalars_peak = prompt_peak * entry_scalars;
    pred.prompt.cache_scalars_final = run * entry_scalars;
    pred.gen_setup.cache_scalars_peak = setup_peak * entry_scalars;
    pred.gen_setup.cache_scalars_final = run * entry_scalars;
    if (pred.has_decode) {
        const std::size_t decode_final = run + config.num_layers * (T - 1);
        pred.decode.cache_scalars_peak = decode_final * entry_scalars;
        pred.decode.cache_scalars_final = decode_final * entry_scalars;
    }
    return pred;
}

namespace {

void compare_stage(AuditReport& report, const std::string& stage, const PhaseCost& measured,
                   const StagePrediction& predicted) {
    auto entry = [&](const char* name, std::uint64_t got, std::uint64_t want) {
        AuditEntry e{stage + "." + name, got, want, got == want};
        if (!e.ok) report.ok = false;
        report.entries.push_back(std::move(e));
    };
    entry("attention_score_macs", measured.attention_score_macs, predicted.attention_score_macs);
    entry("attention_value_macs", measured.attention_value_macs, predicted.attention_value_macs);
    entry("selection_score_macs", measured.selection_score_macs, predicted.selection_score_macs);
    entry("weight_macs", measured.weight_macs, predicted.weight_macs);
    entry("cache_scalars_peak", measured.cache_scalars_peak, predicted.cache_scalars_peak);
    entry("cache_scalars_final", measured.cache_scalars_final, predicted.cache_scalars_final);
    if (measured.attention_score_macs != predicted.attention_score_macs ||
        measured.attention_value_macs != predicted.attention_value_macs) {
        std::string note = stage + " measured score MACs by layer:";
        for (std::size_t i = 0; i < measured.score_macs_by_layer.size(); ++i)
            note += " L" + std::to_string(i) + "=" + std::to_string(measured.score_macs_by_layer[i]);
        report.notes.push_back(std::move(note));
    }
}

} // namespace

AuditReport audit_cost(const CostLedger& ledger, const CostPrediction& prediction) {
    AuditReport report;
    compare_stage(report, "prompt", ledger.prompt(), prediction.prompt);
    compare_stage(report, "generation", ledger.generation(), prediction.generation());
    return report;
}

} // namespace distill

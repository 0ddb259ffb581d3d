#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "distill/model.hpp"
#include "distill/selection.hpp"

namespace distill {

// The five pipelines the engine can run and account for.
enum class Variant {
    AllKV,                  // full attention, nothing dropped
    PromptDistillBasic,     // select survivors, keep all caches long
    PromptDistillTruncated, // select survivors, truncate caches up to the selection layer
    PromptDistillMulti,     // staged selection with truncation count tt
    GemFilter,              // select at layer r, re-embed survivors, re-run all layers
};

std::string variant_name(Variant v);               // CLI token, e.g. "promptdistill"
Variant variant_from_name(std::string_view name);  // throws on unknown

// Accounting phases. The prompt stage covers layers 0..r_last over the full
// prompt (for AllKV: all layers). Everything after the last selection layer —
// the final selection itself, cache truncation, processing of survivors
// through the remaining layers, GemFilter's re-run, and the first LM-head
// call — is generation-stage setup; the per-token loop is decode. Reported
// figures use two stages: prompt, and generation = setup + decode.
enum class Phase { Prompt = 0, GenSetup = 1, Decode = 2 };
inline constexpr std::size_t kPhaseCount = 3;

// Counters for one phase. MAC = one multiply-accumulate. Attention counts
// follow causal counting (row i pairs with its prefix only), because that is
// what the kernels actually execute; selection scoring is kept in its own
// bucket so the attention figures stay directly comparable across variants.
struct PhaseCost {
    std::uint64_t attention_score_macs{0};
    std::uint64_t attention_value_macs{0};
    std::uint64_t selection_score_macs{0};
    std::uint64_t weight_macs{0}; // projections, MLP, LM head

    std::size_t cache_scalars_peak{0};  // physical: 2 * h_kv * len * d summed over layers
    std::size_t cache_scalars_final{0};
    bool cache_observed{false};

    std::vector<std::uint64_t> score_macs_by_layer;
    std::vector<std::uint64_t> value_macs_by_layer;
    std::map<std::string, std::size_t> weights_touched; // tensor -> scalar count (union, not sum)

    std::uint64_t attention_macs() const { return attention_score_macs + attention_value_macs; }
    std::uint64_t total_macs() const {
        return attention_score_macs + attention_value_macs + selection_score_macs + weight_macs;
    }
    std::size_t weight_scalars_touched() const;
};

// Sums MACs, maxes peaks, keeps the later final, unions touched weights.
PhaseCost merge(const PhaseCost& a, const PhaseCost& b);

// Measured counters for one run. Single-owner: one generation session
// mutates it sequentially. Phases only move forward; on a phase change the
// new phase inherits the current cache level so peaks are trajectory-true.
class CostLedger {
public:
    Phase phase() const { return phase_; }
    void begin_phase(Phase p);

    void record_attention(std::size_t layer, std::uint64_t score_macs, std::uint64_t value_macs);
    void record_selection(std::uint64_t score_macs);
    void record_weight_use(std::string_view tensor, std::size_t scalar_count, std::uint64_t macs);
    void observe_cache(std::size_t physical_scalars);

    const PhaseCost& phase_cost(Phase p) const { return phases_[static_cast<std::size_t>(p)]; }
    PhaseCost prompt() const { return phase_cost(Phase::Prompt); }
    PhaseCost generation() const; // setup + decode
    PhaseCost prefill() const;    // prompt + setup (everything through the first token)
    PhaseCost total() const;

private:
    Phase phase_{Phase::Prompt};
    std::array<PhaseCost, kPhaseCount> phases_{};
    std::size_t last_observed_{0};
    bool any_observed_{false};
};

// What a run is shaped like, for prediction purposes.
struct RunShape {
    Variant variant{Variant::AllKV};
    std::size_t prompt_len{0};
    std::size_t max_new_tokens{1};     // T, including the first token
    SelectionSchedule schedule;        // ignored for AllKV
};

struct StagePrediction {
    std::uint64_t attention_score_macs{0};
    std::uint64_t attention_value_macs{0};
    std::uint64_t selection_score_macs{0};
    std::uint64_t weight_macs{0};
    std::size_t cache_scalars_peak{0};
    std::size_t cache_scalars_final{0};
};

StagePrediction merge(const StagePrediction& a, const StagePrediction& b);

// Closed-form expected counters per phase, plus the order-of-growth
// expressions (as text) that the exact figures instantiate.
struct CostPrediction {
    StagePrediction prompt;
    StagePrediction gen_setup;
    StagePrediction decode;
    bool has_decode{false};
    std::string prompt_theta;
    std::string generation_theta;

    StagePrediction generation() const;
    StagePrediction prefill() const { return merge_final_of_second(prompt, gen_setup); }
    StagePrediction total() const;

    static StagePrediction merge_final_of_second(const StagePrediction& a, const StagePrediction& b);
};

// Exact expected counters for a run of `shape` on `config`, under the same
// conventions the ledger measures (causal attention counting, physical cache
// scalars, phase boundaries as documented on Phase). The schedule must
// already be valid for (config, prompt_len).
CostPrediction predict_cost(const ModelConfig& config, const RunShape& shape);

// Per-layer cache lengths expected after prefill (post selection/truncation
// and survivor processing, before any decode step).
std::vector<std::size_t> predicted_cache_lengths(const ModelConfig& config, const RunShape& shape);

struct AuditEntry {
    std::string counter;
    std::uint64_t measured{0};
    std::uint64_t predicted{0};
    bool ok{false};
};

struct AuditReport {
    bool ok{true};
    std::vector<AuditEntry> entries;
    std::vector<std::string> notes; // per-layer breakdown for mismatches
};

// Exact (zero-tolerance) comparison of measured vs predicted counters for the
// prompt and generation stages. Mismatches are reported, never thrown.
AuditReport audit_cost(const CostLedger& ledger, const CostPrediction& prediction);

} // namespace distill

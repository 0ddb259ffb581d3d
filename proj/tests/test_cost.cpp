// Exact-cost accounting tests: frozen closed-form values for the reference
// model shape, scaling points, cache-shape laws, and zero-tolerance audits of
// measured runs against predictions.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdint>
#include <vector>

#include "distill/cost.hpp"
#include "distill/model.hpp"
#include "distill/pipelines.hpp"

using namespace distill;

namespace {

// Reference shape used throughout: 8 layers, 4 query heads over 2 KV heads,
// head_dim 16 (model_dim 64), MLP 128, vocab 512.
ModelConfig reference_config() {
    ModelConfig c;
    c.num_layers = 8;
    c.num_q_heads = 4;
    c.num_kv_heads = 2;
    c.head_dim = 16;
    c.model_dim = 64;
    c.mlp_hidden_dim = 128;
    c.vocab_size = 512;
    c.rope_theta = 10000.0f;
    c.norm_eps = 1e-5f;
    c.seed = 11;
    return c;
}

SelectionSchedule single_stage(std::size_t layer, std::size_t k) {
    SelectionSchedule s;
    s.layers = {layer};
    s.token_counts = {k};
    s.truncation_count = 1;
    return s;
}

SelectionSchedule two_stage(std::size_t r0, std::size_t r1, std::size_t k0, std::size_t k1,
                            std::size_t tt) {
    SelectionSchedule s;
    s.layers = {r0, r1};
    s.token_counts = {k0, k1};
    s.truncation_count = tt;
    return s;
}

RunShape shape_of(Variant v, std::size_t n, std::size_t T, SelectionSchedule s = {}) {
    RunShape shape;
    shape.variant = v;
    shape.prompt_len = n;
    shape.max_new_tokens = T;
    shape.schedule = std::move(s);
    return shape;
}

// Sum of 1..x: causal attention over a fresh sequence of x rows pairs each
// row with its prefix including itself.
std::uint64_t L(std::uint64_t x) { return x * (x + 1) / 2; }

} // namespace

TEST_CASE("full-attention prompt MACs match the closed form m*h*d*L(n)") {
    const ModelConfig c = reference_config();
    const CostPrediction p = predict_cost(c, shape_of(Variant::AllKV, 512, 16));

    CHECK(p.prompt.attention_score_macs == 67'239'936ULL);
    CHECK(p.prompt.attention_value_macs == 67'239'936ULL); // value gather mirrors scores
    CHECK(p.prompt.selection_score_macs == 0);
    CHECK(p.prompt.attention_score_macs == 8ULL * 4 * 16 * L(512));
}

TEST_CASE("selected-prompt variants stop the full-width pass at the selection layer") {
    const ModelConfig c = reference_config();
    const auto sched = single_stage(4, 64);

    const CostPrediction truncated =
        predict_cost(c, shape_of(Variant::PromptDistillTruncated, 512, 16, sched));
    const CostPrediction basic =
        predict_cost(c, shape_of(Variant::PromptDistillBasic, 512, 16, sched));
    const CostPrediction gem = predict_cost(c, shape_of(Variant::GemFilter, 512, 16, sched));

    // Prompt = layers 0..4 over all 512 tokens, for all three.
    CHECK(truncated.prompt.attention_score_macs == 42'024'960ULL);
    CHECK(basic.prompt.attention_score_macs == 42'024'960ULL);
    CHECK(gem.prompt.attention_score_macs == 42'024'960ULL);
    CHECK(truncated.prompt.attention_score_macs == 5ULL * 4 * 16 * L(512));

    // Survivor tail: layers 5..7 over the 64 kept tokens.
    CHECK(truncated.gen_setup.attention_score_macs == 399'360ULL);
    CHECK(truncated.gen_setup.attention_score_macs == 3ULL * 4 * 16 * L(64));
    CHECK(basic.gen_setup.attention_score_macs == 399'360ULL);

    // Re-running all 8 layers over the survivors costs the 5 extra layers.
    CHECK(gem.gen_setup.attention_score_macs == 8ULL * 4 * 16 * L(64));
    CHECK(gem.gen_setup.attention_score_macs - truncated.gen_setup.attention_score_macs ==
          5ULL * 4 * 16 * L(64));
    CHECK(gem.gen_setup.attention_score_macs - truncated.gen_setup.attention_score_macs ==
          665'600ULL);

    // Prompt ratio against full attention is exactly m / (r+1).
    const CostPrediction allkv = predict_cost(c, shape_of(Variant::AllKV, 512, 16));
    CHECK(allkv.prompt.attention_score_macs * 5 == truncated.prompt.attention_score_macs * 8);
}

TEST_CASE("staged schedule books each stage's width to the prompt") {
    const ModelConfig c = reference_config();
    const CostPrediction p = predict_cost(
        c, shape_of(Variant::PromptDistillMulti, 512, 16, two_stage(2, 4, 128, 64, 2)));

    // Layers 0..2 see 512 rows; layers 3..4 see the 128 survivors.
    CHECK(p.prompt.attention_score_macs == 26'271'744ULL);
    CHECK(p.prompt.attention_score_macs == 4ULL * 16 * (3 * L(512) + 2 * L(128)));

    // Stage 0's scoring lands in the prompt bucket, stage 1's in setup.
    CHECK(p.prompt.selection_score_macs == 4ULL * 16 * 512);
    CHECK(p.gen_setup.selection_score_macs == 4ULL * 16 * 128);
}

TEST_CASE("scaling points hold across prompt lengths") {
    const ModelConfig c = reference_config();

    struct Point {
        std::size_t n, r, k;
        std::uint64_t allkv, single, multi;
    };
    const Point points[] = {
        {256, 2, 32, 16'842'752ULL, 6'316'032ULL, 4'343'808ULL},
        {512, 4, 64, 67'239'936ULL, 42'024'960ULL, 26'271'744ULL},
        {1024, 4, 128, 268'697'600ULL, 167'936'000ULL, 104'972'288ULL},
    };

    for (const Point& pt : points) {
        CAPTURE(pt.n);
        const auto allkv = predict_cost(c, shape_of(Variant::AllKV, pt.n, 16));
        CHECK(allkv.prompt.attention_score_macs == pt.allkv);

        const auto sched = single_stage(pt.r, pt.k);
        for (Variant v : {Variant::PromptDistillBasic, Variant::PromptDistillTruncated,
                          Variant::GemFilter}) {
            const auto p = predict_cost(c, shape_of(v, pt.n, 16, sched));
            CHECK(p.prompt.attention_score_macs == pt.single);
        }

        const auto multi = predict_cost(
            c, shape_of(Variant::PromptDistillMulti, pt.n, 16,
                        two_stage(pt.r / 2, pt.r, 2 * pt.k, pt.k, 2)));
        CHECK(multi.prompt.attention_score_macs == pt.multi);
    }
}

TEST_CASE("generation gap between long and truncated caches is exact") {
    const ModelConfig c = reference_config();
    const auto sched = single_stage(4, 64);
    const std::size_t T = 16;

    const auto basic = predict_cost(c, shape_of(Variant::PromptDistillBasic, 512, T, sched));
    const auto truncated =
        predict_cost(c, shape_of(Variant::PromptDistillTruncated, 512, T, sched));

    // Setup is identical; only decode differs, and only in layers 0..r whose
    // caches stayed at n instead of k. Per step per layer: h*d*(n-k).
    CHECK(basic.gen_setup.attention_score_macs == truncated.gen_setup.attention_score_macs);
    const std::uint64_t gap = basic.generation().attention_score_macs -
                              truncated.generation().attention_score_macs;
    CHECK(gap == 2'150'400ULL);
    CHECK(gap == (T - 1) * 5ULL * 4 * 16 * (512 - 64));
    CHECK(basic.generation().attention_value_macs - truncated.generation().attention_value_macs ==
          gap);
    CHECK(basic.generation().weight_macs == truncated.generation().weight_macs);
}

TEST_CASE("total ordering: truncated < re-run < full attention, with exact gaps") {
    const ModelConfig c = reference_config();
    const auto sched = single_stage(4, 64);

    const auto allkv = predict_cost(c, shape_of(Variant::AllKV, 512, 16));
    const auto pd = predict_cost(c, shape_of(Variant::PromptDistillTruncated, 512, 16, sched));
    const auto gem = predict_cost(c, shape_of(Variant::GemFilter, 512, 16, sched));

    auto total = [](const CostPrediction& p) {
        const StagePrediction t = p.total();
        return t.attention_score_macs + t.attention_value_macs + t.selection_score_macs +
               t.weight_macs;
    };
    CHECK(total(pd) < total(gem));
    CHECK(total(gem) < total(allkv));

    // The re-run pays (r+1) extra layers of causal attention over k survivors,
    // plus their projections/MLP. Everything else cancels.
    const std::uint64_t score_gap =
        gem.total().attention_score_macs - pd.total().attention_score_macs;
    CHECK(score_gap == 665'600ULL);
    CHECK(score_gap == 5ULL * 4 * 16 * L(64));
    CHECK(gem.total().attention_value_macs - pd.total().attention_value_macs == score_gap);

    // Per-row projection+MLP MACs for one layer.
    const std::uint64_t q_dim = 4 * 16, kv_dim = 2 * 16, dm = 64, mlp = 128;
    const std::uint64_t wl = dm * q_dim + 2 * dm * kv_dim + q_dim * dm + 2 * dm * mlp + mlp * dm;
    CHECK(total(gem) - total(pd) == 5ULL * (2 * 4 * 16 * L(64) + 64 * wl));
}

TEST_CASE("expected cache lengths after prefill follow the truncation law") {
    const ModelConfig c = reference_config();
    using V = std::vector<std::size_t>;

    CHECK(predicted_cache_lengths(c, shape_of(Variant::AllKV, 512, 16)) == V(8, 512));
    CHECK(predicted_cache_lengths(
              c, shape_of(Variant::PromptDistillTruncated, 512, 16, single_stage(4, 64))) ==
          V(8, 64));
    CHECK(predicted_cache_lengths(
              c, shape_of(Variant::PromptDistillBasic, 512, 16, single_stage(4, 64))) ==
          V{512, 512, 512, 512, 512, 64, 64, 64});
    CHECK(predicted_cache_lengths(
              c, shape_of(Variant::GemFilter, 512, 16, single_stage(4, 64))) == V(8, 64));
    CHECK(predicted_cache_lengths(
              c, shape_of(Variant::PromptDistillMulti, 512, 16, two_stage(2, 4, 128, 64, 2))) ==
          V(8, 64));
    // Truncation budget of one: the second stage selects but leaves caches long.
    CHECK(predicted_cache_lengths(
              c, shape_of(Variant::PromptDistillMulti, 512, 16, two_stage(2, 4, 128, 64, 1))) ==
          V{128, 128, 128, 128, 128, 64, 64, 64});
}

TEST_CASE("cache scalar peaks count layers through the selection layer") {
    const ModelConfig c = reference_config();

    const auto allkv = predict_cost(c, shape_of(Variant::AllKV, 512, 16));
    CHECK(allkv.prompt.cache_scalars_peak == 8ULL * 2 * 2 * 512 * 16);

    const auto pd =
        predict_cost(c, shape_of(Variant::PromptDistillTruncated, 512, 16, single_stage(4, 64)));
    // Layers 0..4 full of 512 entries each, 2 KV heads x head_dim 16, K and V.
    CHECK(pd.prompt.cache_scalars_peak == 5ULL * 2 * 2 * 512 * 16);
    CHECK(pd.prompt.cache_scalars_peak == 163'840ULL);
}

TEST_CASE("order-of-growth annotations are attached") {
    const ModelConfig c = reference_config();
    const auto allkv = predict_cost(c, shape_of(Variant::AllKV, 512, 16));
    CHECK(allkv.prompt_theta == "Theta(m h n^2 d)");
    CHECK(!allkv.generation_theta.empty());

    const auto pd =
        predict_cost(c, shape_of(Variant::PromptDistillTruncated, 512, 16, single_stage(4, 64)));
    CHECK(pd.prompt_theta == "Theta(r h n^2 d)");
    CHECK(!pd.generation_theta.empty());
}

TEST_CASE("measured runs audit exactly against predictions") {
    ModelConfig c;
    c.num_layers = 4;
    c.num_q_heads = 4;
    c.num_kv_heads = 2;
    c.head_dim = 8;
    c.model_dim = 32;
    c.mlp_hidden_dim = 64;
    c.vocab_size = 128;
    c.rope_theta = 10000.0f;
    c.norm_eps = 1e-5f;
    c.seed = 7;
    const ModelBundle bundle = init_random(c);

    std::vector<std::int32_t> prompt;
    for (int i = 0; i < 48; ++i) prompt.push_back((i * 37 + 5) % 128);

    auto run_and_audit = [&](Variant v, SelectionSchedule sched) {
        PipelineConfig pc;
        pc.variant = v;
        pc.schedule = std::move(sched);
        pc.max_new_tokens = 4;
        GenerationResult result = run_pipeline(bundle, prompt, pc);

        RunShape shape;
        shape.variant = v;
        shape.prompt_len = prompt.size();
        shape.max_new_tokens = result.tokens.size();
        shape.schedule = pc.schedule;
        const CostPrediction prediction = predict_cost(c, shape);
        const AuditReport report = audit_cost(result.ledger, prediction);

        CAPTURE(variant_name(v));
        for (const AuditEntry& e : report.entries) {
            CAPTURE(e.counter);
            CHECK(e.measured == e.predicted);
            CHECK(e.ok);
        }
        CHECK(report.ok);
        return result;
    };

    run_and_audit(Variant::AllKV, {});
    run_and_audit(Variant::PromptDistillBasic, single_stage(1, 12));
    GenerationResult truncated = run_and_audit(Variant::PromptDistillTruncated, single_stage(1, 12));
    run_and_audit(Variant::PromptDistillMulti, two_stage(1, 2, 16, 8, 2));
    run_and_audit(Variant::PromptDistillMulti, two_stage(1, 2, 16, 8, 1));
    run_and_audit(Variant::GemFilter, single_stage(1, 12));

    // Decode step t attends k + t entries per layer (the new token included).
    REQUIRE(truncated.decode_step_score_macs.size() == 3);
    for (std::size_t t = 1; t <= 3; ++t)
        CHECK(truncated.decode_step_score_macs[t - 1] == 4ULL * 4 * 8 * (12 + t));
}

TEST_CASE("audit flags an injected discrepancy instead of throwing") {
    ModelConfig c;
    c.num_layers = 2;
    c.num_q_heads = 2;
    c.num_kv_heads = 2;
    c.head_dim = 4;
    c.model_dim = 8;
    c.mlp_hidden_dim = 16;
    c.vocab_size = 32;
    c.rope_theta = 10000.0f;
    c.norm_eps = 1e-5f;
    c.seed = 3;
    const ModelBundle bundle = init_random(c);

    std::vector<std::int32_t> prompt{1, 2, 3, 4, 5, 6};
    PipelineConfig pc;
    pc.variant = Variant::AllKV;
    pc.max_new_tokens = 2;
    GenerationResult result = run_pipeline(bundle, prompt, pc);

    RunShape shape = shape_of(Variant::AllKV, prompt.size(), result.tokens.size());
    CostPrediction prediction = predict_cost(c, shape);
    prediction.prompt.attention_score_macs += 1; // sabotage

    const AuditReport report = audit_cost(result.ledger, prediction);
    CHECK(!report.ok);
    bool found = false;
    for (const AuditEntry& e : report.entries)
        if (!e.ok) {
            found = true;
            CHECK(e.counter == "prompt.attention_score_macs");
            CHECK(e.predicted == e.measured + 1);
        }
    CHECK(found);
    CHECK(!report.notes.empty());
}

TEST_CASE("single-stage variants reject multi-stage schedules at prediction time") {
    const ModelConfig c = reference_config();
    const auto sched = two_stage(2, 4, 128, 64, 2);
    CHECK_THROWS_AS(
        predict_cost(c, shape_of(Variant::PromptDistillTruncated, 512, 16, sched)),
        std::invalid_argument);
    CHECK_THROWS_AS(predict_cost(c, shape_of(Variant::GemFilter, 512, 16, sched)),
                    std::invalid_argument);
}

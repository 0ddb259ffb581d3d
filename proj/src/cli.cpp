#include "distill/cli.hpp"

#include <chrono>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "distill/bundle_io.hpp"
#include "distill/cost.hpp"
#include "distill/kernels.hpp"
#include "distill/metrics.hpp"
#include "distill/model.hpp"
#include "distill/needle.hpp"
#include "distill/pipelines.hpp"
#include "distill/rng.hpp"
#include "distill/tokenizer.hpp"

namespace distill::cli {

namespace {

using nlohmann::json;

constexpr std::size_t kAllStages = static_cast<std::size_t>(-1);

// ---------- shared option bags ----------

struct PromptArgs {
    std::string tokens_file;
    std::string text;
    std::string needle_spec; // "n=...,len=...,depth=...,seed=...[,ids=a:b:c]"
};

struct ScheduleArgs {
    std::vector<std::size_t> layers;
    std::vector<std::size_t> topk;
    std::size_t truncate_stages{kAllStages};
    bool no_force_include_last{false};
};

struct RunArgs {
    std::string bundle_dir;
    std::string variant{"allkv"};
    PromptArgs prompt;
    ScheduleArgs schedule;
    bool raw_logit_sum{false};
    bool compact_positions{false};
    std::size_t max_new_tokens{16};
    std::int32_t eos{-1}; // negative: disabled
    std::string out_path{"metrics.json"};
    bool deterministic{false};
    bool dump_cache{false};
    int threads{0};
};

const std::vector<std::string> kVariantTokens{"allkv", "promptdistill_basic", "promptdistill",
                                              "promptdistill_multi", "gemfilter"};

// ---------- small helpers ----------

[[noreturn]] void fail(const std::string& what) { throw std::runtime_error(what); }

SelectionSchedule make_schedule(const ScheduleArgs& s) {
    SelectionSchedule sched;
    sched.layers = s.layers;
    sched.token_counts = s.topk;
    sched.truncation_count =
        s.truncate_stages == kAllStages ? s.layers.size() : s.truncate_stages;
    sched.force_include_last = !s.no_force_include_last;
    return sched;
}

PipelineConfig make_pipeline_config(const RunArgs& a) {
    PipelineConfig pc;
    pc.variant = variant_from_name(a.variant);
    if (pc.variant != Variant::AllKV) {
        if (a.schedule.layers.empty() || a.schedule.topk.empty())
            fail("variant '" + a.variant + "' needs --layers-select and --topk");
        pc.schedule = make_schedule(a.schedule);
    }
    pc.max_new_tokens = a.max_new_tokens;
    if (a.eos >= 0) pc.eos_id = a.eos;
    pc.aggregation =
        a.raw_logit_sum ? ScoreAggregation::RawLogitSum : ScoreAggregation::SoftmaxSum;
    pc.compact_positions = a.compact_positions;
    return pc;
}

std::vector<std::int32_t> read_token_file(const std::string& path, std::size_t vocab) {
    std::ifstream in(path);
    if (!in) fail("cannot open token file " + path);
    std::vector<std::int32_t> tokens;
    long long value = 0;
    while (in >> value) {
        if (value < 0 || value >= static_cast<long long>(vocab))
            fail("token file " + path + ": id " + std::to_string(value) + " outside vocab " +
                 std::to_string(vocab) + " (entry " + std::to_string(tokens.size()) + ")");
        tokens.push_back(static_cast<std::int32_t>(value));
    }
    if (!in.eof()) fail("token file " + path + ": non-integer content");
    if (tokens.empty()) fail("token file " + path + " is empty");
    return tokens;
}

struct NeedleRequest {
    std::size_t n{0};
    std::size_t len{8};
    std::size_t depth{50};
    std::uint64_t seed{0};
    std::vector<std::int32_t> ids; // empty: sample from the seed
};

NeedleRequest parse_needle_request(const std::string& spec) {
    NeedleRequest req;
    bool saw_n = false;
    std::stringstream parts(spec);
    std::string part;
    while (std::getline(parts, part, ',')) {
        const auto eq = part.find('=');
        if (eq == std::string::npos) fail("needle spec entry '" + part + "' is not key=value");
        const std::string key = part.substr(0, eq);
        const std::string value = part.substr(eq + 1);
        try {
            if (key == "n") {
                req.n = std::stoull(value);
                saw_n = true;
            } else if (key == "len") {
                req.len = std::stoull(value);
            } else if (key == "depth") {
                req.depth = std::stoull(value);
            } else if (key == "seed") {
                req.seed = std::stoull(value);
            } else if (key == "ids") {
                std::stringstream ids(value);
                std::string id;
                while (std::getline(ids, id, ':'))
                    req.ids.push_back(static_cast<std::int32_t>(std::stol(id)));
            } else {
                fail("needle spec key '" + key + "' unknown (use n, len, depth, seed, ids)");
            }
        } catch (const std::logic_error&) {
            fail("needle spec entry '" + part + "' has a malformed number");
        }
    }
    if (!saw_n) fail("needle spec needs n=<haystack length>");
    if (!req.ids.empty()) req.len = req.ids.size();
    return req;
}

std::vector<std::int32_t> sample_needle_ids(std::size_t len, std::size_t vocab,
                                            std::uint64_t seed) {
    if (len + 1 > vocab) fail("needle of " + std::to_string(len) + " distinct ids plus filler "
                              "does not fit vocab " + std::to_string(vocab));
    SplitMix64 rng(seed ^ fnv1a64(std::string_view{"needle-ids"}));
    std::vector<std::int32_t> ids;
    while (ids.size() < len) {
        const auto id = static_cast<std::int32_t>(rng.next_below(vocab));
        if (std::find(ids.begin(), ids.end(), id) == ids.end()) ids.push_back(id);
    }
    return ids;
}

std::vector<std::int32_t> resolve_prompt(const PromptArgs& p, const ModelConfig& config) {
    if (!p.tokens_file.empty()) return read_token_file(p.tokens_file, config.vocab_size);
    if (!p.text.empty()) {
        if (config.vocab_size < static_cast<std::size_t>(kTextVocabMin))
            fail("text prompts need vocab_size >= " + std::to_string(kTextVocabMin) +
                 " (bytes plus specials); this model has " + std::to_string(config.vocab_size));
        return encode_text(p.text);
    }
    const NeedleRequest req = parse_needle_request(p.needle_spec);
    PlantedNeedleSpec spec;
    spec.haystack_len = req.n;
    spec.depth_pct = req.depth;
    spec.seed = req.seed;
    spec.needle_ids =
        req.ids.empty() ? sample_needle_ids(req.len, config.vocab_size, req.seed) : req.ids;
    return plant_needle(spec, static_cast<std::int32_t>(config.vocab_size)).tokens;
}

// Prediction parameterized by what actually ran: early EOS shortens the
// decode loop, so the audit compares like with like.
struct ExecutedRun {
    GenerationResult result;
    CostPrediction prediction;
    AuditReport audit;
    double wall_ms{0.0};
};

ExecutedRun execute(const ModelBundle& bundle, std::span<const std::int32_t> tokens,
                    const PipelineConfig& pc, bool deterministic) {
    const auto start = std::chrono::steady_clock::now();
    ExecutedRun run;
    run.result = run_pipeline(bundle, tokens, pc);
    const auto stop = std::chrono::steady_clock::now();
    run.wall_ms =
        deterministic ? 0.0 : std::chrono::duration<double, std::milli>(stop - start).count();

    RunShape shape;
    shape.variant = pc.variant;
    shape.prompt_len = tokens.size();
    shape.max_new_tokens = run.result.tokens.size();
    if (pc.variant != Variant::AllKV)
        shape.schedule =
            validate_schedule(pc.schedule, bundle.config.num_layers, tokens.size()).schedule;
    run.prediction = predict_cost(bundle.config, shape);
    run.audit = audit_cost(run.result.ledger, run.prediction);
    return run;
}

int emit_error(std::ostream& err, const std::exception& e) {
    const char* type = "error";
    if (dynamic_cast<const std::invalid_argument*>(&e) != nullptr)
        type = "invalid_argument";
    else if (dynamic_cast<const std::runtime_error*>(&e) != nullptr)
        type = "runtime_error";
    err << json{{"error", json{{"type", type}, {"message", e.what()}}}}.dump() << "\n";
    return 1;
}

// ---------- subcommands ----------

struct MakeModelArgs {
    std::size_t layers{0};
    std::size_t heads{0};
    std::size_t kv_heads{0}; // 0: same as heads
    std::size_t head_dim{0};
    std::size_t mlp_hidden{0}; // 0: 4 * model_dim
    std::size_t vocab{0};
    float rope_theta{10000.0f};
    float norm_eps{1e-5f};
    std::uint64_t seed{0};
    std::string out_dir;
};

int cmd_make_model(const MakeModelArgs& a, std::ostream& out) {
    ModelConfig config;
    config.num_layers = a.layers;
    config.num_q_heads = a.heads;
    config.num_kv_heads = a.kv_heads == 0 ? a.heads : a.kv_heads;
    config.head_dim = a.head_dim;
    config.model_dim = a.heads * a.head_dim;
    config.mlp_hidden_dim = a.mlp_hidden == 0 ? 4 * config.model_dim : a.mlp_hidden;
    config.vocab_size = a.vocab;
    config.rope_theta = a.rope_theta;
    config.norm_eps = a.norm_eps;
    config.seed = a.seed;
    config.validate();

    const ModelBundle bundle = init_random(config);
    save_bundle(bundle, a.out_dir);

    std::size_t total = 0;
    for (const TensorSpec& spec : tensor_specs(config)) {
        out << "  " << std::left << std::setw(24) << spec.name << std::right << std::setw(6)
            << spec.rows << " x " << spec.cols << "\n";
        total += spec.count();
    }
    out << "make-model: " << total << " floats -> " << a.out_dir << "\n";
    return 0;
}

int cmd_generate(const RunArgs& a, std::ostream& out, std::ostream& err) {
    if (a.threads > 0) set_kernel_threads(a.threads);
    const ModelBundle bundle = load_bundle(a.bundle_dir);
    const std::vector<std::int32_t> tokens = resolve_prompt(a.prompt, bundle.config);
    const PipelineConfig pc = make_pipeline_config(a);

    const ExecutedRun run = execute(bundle, tokens, pc, a.deterministic);
    const json doc = metrics_json(bundle.config, pc, run.result, run.prediction, run.audit,
                                  run.wall_ms, a.dump_cache);
    write_json_atomic(doc, a.out_path);

    if (run.result.schedule_clamped)
        err << "note: --topk exceeded the prompt length and was clamped (select-all)\n";
    out << "generate: variant=" << variant_name(pc.variant) << " n=" << tokens.size()
        << " T=" << run.result.tokens.size() << " first_token=" << run.result.first_token
        << (run.result.stopped_early ? " (eos)" : "")
        << " audit=" << (run.audit.ok ? "ok" : "MISMATCH") << " -> " << a.out_path << "\n";
    return 0;
}

struct CompareArgs {
    RunArgs a;
    std::string b_variant;                 // empty: inherit
    std::vector<std::size_t> b_layers;     // empty: inherit
    std::vector<std::size_t> b_topk;       // empty: inherit
    std::size_t b_truncate{kAllStages};    // kAllStages: inherit resolved value
    bool b_compact_positions{false};       // only overrides to true
    std::string out_path{"compare.json"};
};

int cmd_compare(const CompareArgs& c, std::ostream& out, std::ostream& err) {
    if (c.a.threads > 0) set_kernel_threads(c.a.threads);
    const ModelBundle bundle = load_bundle(c.a.bundle_dir);
    const std::vector<std::int32_t> tokens = resolve_prompt(c.a.prompt, bundle.config);

    RunArgs b = c.a;
    if (!c.b_variant.empty()) b.variant = c.b_variant;
    if (!c.b_layers.empty()) b.schedule.layers = c.b_layers;
    if (!c.b_topk.empty()) b.schedule.topk = c.b_topk;
    if (c.b_truncate != kAllStages) b.schedule.truncate_stages = c.b_truncate;
    if (c.b_compact_positions) b.compact_positions = true;

    const PipelineConfig pc_a = make_pipeline_config(c.a);
    const PipelineConfig pc_b = make_pipeline_config(b);
    const ExecutedRun run_a = execute(bundle, tokens, pc_a, c.a.deterministic);
    const ExecutedRun run_b = execute(bundle, tokens, pc_b, c.a.deterministic);
    const RunDiff diff = compare_runs(run_a.result, run_b.result);

    const auto side = [&](const PipelineConfig& pc, const ExecutedRun& run) {
        return json{{"variant", variant_name(pc.variant)},
                    {"first_token", run.result.first_token},
                    {"audit_ok", run.audit.ok},
                    {"total_macs", run.result.ledger.total().total_macs()}};
    };
    const json doc{{"a", side(pc_a, run_a)}, {"b", side(pc_b, run_b)}, {"diff", diff_json(diff)}};
    write_json_atomic(doc, c.out_path);

    if (run_a.result.schedule_clamped || run_b.result.schedule_clamped)
        err << "note: --topk exceeded the prompt length and was clamped (select-all)\n";
    out << "compare: a=" << variant_name(pc_a.variant) << " b=" << variant_name(pc_b.variant)
        << " identical=" << (diff.identical() ? "yes" : "no")
        << " first_token_equal=" << (diff.first_token_equal ? "yes" : "no")
        << " prefill_score_mac_delta=" << diff.prefill_score_mac_delta << " -> " << c.out_path
        << "\n";
    return 0;
}

struct CostArgs {
    std::string bundle_dir; // model shape from a bundle ...
    std::size_t layers{8};  // ... or from these flags
    std::size_t heads{4};
    std::size_t kv_heads{0};
    std::size_t head_dim{16};
    std::size_t mlp_hidden{0};
    std::size_t vocab{512};
    std::size_t n{512};
    std::size_t max_new_tokens{16};
    ScheduleArgs schedule;
    bool as_json{false};
};

int cmd_cost(const CostArgs& a, std::ostream& out, std::ostream& err) {
    ModelConfig config;
    if (!a.bundle_dir.empty()) {
        config = load_bundle_config(a.bundle_dir);
    } else {
        config.num_layers = a.layers;
        config.num_q_heads = a.heads;
        config.num_kv_heads = a.kv_heads == 0 ? a.heads : a.kv_heads;
        config.head_dim = a.head_dim;
        config.model_dim = a.heads * a.head_dim;
        config.mlp_hidden_dim = a.mlp_hidden == 0 ? 4 * config.model_dim : a.mlp_hidden;
        config.vocab_size = a.vocab;
        config.validate();
    }

    const ValidatedSchedule validated =
        validate_schedule(make_schedule(a.schedule), config.num_layers, a.n);
    if (validated.clamped)
        err << "note: --topk exceeded the prompt length and was clamped (select-all)\n";
    const SelectionSchedule& multi = validated.schedule;
    SelectionSchedule single;
    single.layers = {multi.layers.back()};
    single.token_counts = {multi.token_counts.back()};
    single.truncation_count = 1;
    single.force_include_last = multi.force_include_last;

    const auto shape_for = [&](Variant v) {
        RunShape shape;
        shape.variant = v;
        shape.prompt_len = a.n;
        shape.max_new_tokens = a.max_new_tokens;
        if (v != Variant::AllKV)
            shape.schedule = (v == Variant::PromptDistillMulti) ? multi : single;
        return shape;
    };

    const Variant all[] = {Variant::AllKV, Variant::PromptDistillBasic,
                           Variant::PromptDistillTruncated, Variant::PromptDistillMulti,
                           Variant::GemFilter};

    // Cache-peak figures under both layer-count readings of the selection
    // depth r: the trace counts layers 0..r inclusive (r+1); some summaries
    // count r layers. The audit anchors on the trace.
    const std::size_t r_last = single.layers[0];
    const std::size_t per_layer = 2 * config.num_kv_heads * config.head_dim * a.n;
    const std::size_t peak_inclusive = per_layer * (r_last + 1);
    const std::size_t peak_count_r = per_layer * r_last;
    const std::size_t group = config.num_q_heads / config.num_kv_heads;

    if (a.as_json) {
        json variants = json::object();
        for (Variant v : all) {
            const CostPrediction p = predict_cost(config, shape_for(v));
            variants[variant_name(v)] =
                json{{"prompt", stage_prediction_json(p.prompt, config)},
                     {"gen_setup", stage_prediction_json(p.gen_setup, config)},
                     {"decode", stage_prediction_json(p.decode, config)},
                     {"generation", stage_prediction_json(p.generation(), config)},
                     {"prefill", stage_prediction_json(p.prefill(), config)},
                     {"total", stage_prediction_json(p.total(), config)},
                     {"prompt_theta", p.prompt_theta},
                     {"generation_theta", p.generation_theta}};
        }
        const json doc{
            {"model",
             json{{"num_layers", config.num_layers},
                  {"num_q_heads", config.num_q_heads},
                  {"num_kv_heads", config.num_kv_heads},
                  {"head_dim", config.head_dim},
                  {"model_dim", config.model_dim},
                  {"mlp_hidden_dim", config.mlp_hidden_dim},
                  {"vocab_size", config.vocab_size}}},
            {"n", a.n},
            {"T", a.max_new_tokens},
            {"schedule", json{{"layers", multi.layers},
                              {"token_counts", multi.token_counts},
                              {"truncation_count", multi.truncation_count}}},
            {"variants", std::move(variants)},
            {"prompt_cache_peak_conventions",
             json{{"layers_zero_through_r", peak_inclusive},
                  {"r_as_layer_count", peak_count_r},
                  {"layers_zero_through_r_attention_equivalent", peak_inclusive * group},
                  {"r_as_layer_count_attention_equivalent", peak_count_r * group}}}};
        out << doc.dump(2) << "\n";
        return 0;
    }

    out << "cost model: m=" << config.num_layers << " h=" << config.num_q_heads
        << " h_kv=" << config.num_kv_heads << " d=" << config.head_dim << " n=" << a.n
        << " T=" << a.max_new_tokens << "  schedule r=[";
    for (std::size_t i = 0; i < multi.layers.size(); ++i)
        out << (i ? "," : "") << multi.layers[i];
    out << "] k=[";
    for (std::size_t i = 0; i < multi.token_counts.size(); ++i)
        out << (i ? "," : "") << multi.token_counts[i];
    out << "] tt=" << multi.truncation_count << "\n\n";

    out << std::left << std::setw(22) << "variant" << std::right << std::setw(16)
        << "prompt score" << std::setw(16) << "gen score" << std::setw(16) << "total MACs"
        << std::setw(14) << "cache peak" << std::setw(14) << "cache final" << "\n";
    for (Variant v : all) {
        const CostPrediction p = predict_cost(config, shape_for(v));
        const StagePrediction tot = p.total();
        out << std::left << std::setw(22) << variant_name(v) << std::right << std::setw(16)
            << p.prompt.attention_score_macs << std::setw(16)
            << p.generation().attention_score_macs << std::setw(16)
            << (tot.attention_score_macs + tot.attention_value_macs + tot.selection_score_macs +
                tot.weight_macs)
            << std::setw(14) << tot.cache_scalars_peak << std::setw(14)
            << tot.cache_scalars_final << "\n";
    }
    out << "\norder of growth (t = generated tokens):\n";
    for (Variant v : all) {
        const CostPrediction p = predict_cost(config, shape_for(v));
        out << "  " << std::left << std::setw(22) << variant_name(v)
            << "prompt " << p.prompt_theta << "   generation " << p.generation_theta << "\n";
    }
    if (multi.layers.size() > 1)
        out << "\nnote: single-stage variants use the schedule's last stage (r=" << r_last
            << ", k=" << single.token_counts[0] << ")\n";
    out << "note: attention counters follow causal counting (row i pairs with its prefix)\n";
    out << "note: prompt cache peak counts layers 0.." << r_last << " inclusive ("
        << r_last + 1 << " layers): " << peak_inclusive << " physical scalars ("
        << peak_inclusive * group << " attention-equivalent); if r counted layers instead, "
        << peak_count_r << " (" << peak_count_r * group << ")\n";
    return 0;
}

struct SelectDebugArgs {
    std::string bundle_dir;
    PromptArgs prompt;
    std::size_t layer{0};
    std::size_t topk{0};
    bool raw_logit_sum{false};
    bool no_force_include_last{false};
    std::string out_path{"-"}; // "-": stdout
    int threads{0};
};

int cmd_select_debug(const SelectDebugArgs& a, std::ostream& out) {
    if (a.threads > 0) set_kernel_threads(a.threads);
    const ModelBundle bundle = load_bundle(a.bundle_dir);
    const std::vector<std::int32_t> tokens = resolve_prompt(a.prompt, bundle.config);
    if (a.layer >= bundle.config.num_layers)
        fail("--layer " + std::to_string(a.layer) + " out of range (model has " +
             std::to_string(bundle.config.num_layers) + " layers)");
    if (a.topk == 0) fail("--topk must be positive");

    CostLedger ledger;
    CacheSet caches = CacheSet::make(bundle.config.num_layers, bundle.config.kv_dim());
    LayerActivations acts = embed(tokens, bundle);
    for (std::size_t i = 0; i <= a.layer; ++i)
        acts = layer_forward(i, acts, caches.layers[i], bundle, &ledger);

    SelectionOptions opts;
    opts.aggregation =
        a.raw_logit_sum ? ScoreAggregation::RawLogitSum : ScoreAggregation::SoftmaxSum;
    opts.force_include_last = !a.no_force_include_last;
    const SelectionOutcome outcome =
        select(last_query_heads(acts, bundle.config), caches.layers[a.layer], a.topk, opts);

    const json doc{{"layer", a.layer},
                   {"k", a.topk},
                   {"aggregation", a.raw_logit_sum ? "raw_logit_sum" : "softmax_sum"},
                   {"force_include_last", opts.force_include_last},
                   {"per_token_scores", outcome.per_token_scores},
                   {"indices", outcome.indices},
                   {"original_positions", outcome.original_positions}};
    if (a.out_path == "-")
        out << doc.dump(2) << "\n";
    else
        write_json_atomic(doc, a.out_path);
    return 0;
}

struct SynthNeedleArgs {
    std::size_t n{0};
    std::size_t needle_len{8};
    std::vector<std::int32_t> needle_ids;
    std::size_t depth{50};
    std::uint64_t seed{0};
    bool oracle{false};
    std::string bundle_dir;
    std::string out_dir;
};

int cmd_synth_needle(const SynthNeedleArgs& a, std::ostream& out) {
    std::filesystem::create_directories(a.out_dir);
    const std::filesystem::path dir(a.out_dir);

    PlantedPrompt prompt;
    json expected;
    if (a.oracle) {
        if (!a.bundle_dir.empty())
            fail("oracle mode builds its own bundle; drop --bundle");
        if (!a.needle_ids.empty())
            fail("oracle mode constructs its needle ids; drop --needle-ids");
        OracleNeedle oracle = make_oracle_needle(a.n, a.needle_len, a.depth, a.seed);
        save_bundle(oracle.bundle, dir / "bundle");
        prompt = std::move(oracle.prompt);
        expected["oracle"] = true;
        expected["select_layer"] = oracle.select_layer;
        expected["k"] = prompt.span_len;
        // Exact recovery holds for plain top-k; forcing the last token in
        // would displace one needle slot when the cue sits at the end.
        expected["force_include_last"] = false;
    } else {
        if (a.bundle_dir.empty())
            fail("non-oracle mode needs --bundle to know the vocabulary");
        const ModelConfig config = load_bundle_config(a.bundle_dir);
        PlantedNeedleSpec spec;
        spec.haystack_len = a.n;
        spec.depth_pct = a.depth;
        spec.seed = a.seed;
        spec.needle_ids = a.needle_ids.empty()
                              ? sample_needle_ids(a.needle_len, config.vocab_size, a.seed)
                              : a.needle_ids;
        prompt = plant_needle(spec, static_cast<std::int32_t>(config.vocab_size));
        expected["oracle"] = false;
    }

    {
        std::ofstream tokens_out(dir / "tokens.txt", std::ios::trunc);
        if (!tokens_out) fail("cannot write " + (dir / "tokens.txt").string());
        for (std::int32_t id : prompt.tokens) tokens_out << id << "\n";
    }
    expected["n"] = prompt.tokens.size();
    expected["span_start"] = prompt.span_start;
    expected["span_len"] = prompt.span_len;
    expected["expected_indices"] = prompt.expected_indices;
    expected["depth_pct"] = a.depth;
    expected["seed"] = a.seed;
    write_json_atomic(expected, dir / "expected.json");

    out << "synth-needle: n=" << prompt.tokens.size() << " span=[" << prompt.span_start << ","
        << prompt.span_start + prompt.span_len << ") -> " << a.out_dir
        << (a.oracle ? " (with oracle bundle)" : "") << "\n";
    return 0;
}

// ---------- wiring ----------

void add_prompt_options(CLI::App* sub, PromptArgs& p) {
    auto* group = sub->add_option_group("prompt", "exactly one prompt source");
    group->add_option("--tokens", p.tokens_file,
                      "file of newline-separated integer token ids")
        ->envname("DISTILL_TOKENS");
    group->add_option("--text", p.text, "byte-tokenized text prompt (BOS prepended)")
        ->envname("DISTILL_TEXT");
    group->add_option("--needle", p.needle_spec,
                      "planted-needle prompt, e.g. n=256,len=8,depth=50,seed=3[,ids=1:2:3]")
        ->envname("DISTILL_NEEDLE");
    group->require_option(1);
}

void add_schedule_options(CLI::App* sub, ScheduleArgs& s) {
    sub->add_option("--layers-select", s.layers,
                    "selection layer indices, ascending (comma-separated)")
        ->delimiter(',')
        ->envname("DISTILL_LAYERS_SELECT");
    sub->add_option("--topk", s.topk, "tokens kept per stage, descending (comma-separated)")
        ->delimiter(',')
        ->envname("DISTILL_TOPK");
    sub->add_option("--truncate-stages", s.truncate_stages,
                    "stages that also truncate caches (default: all)")
        ->default_str("all")
        ->envname("DISTILL_TRUNCATE_STAGES");
    sub->add_flag("--no-force-include-last", s.no_force_include_last,
                  "do not force the final token into the survivor set");
}

void add_run_options(CLI::App* sub, RunArgs& a) {
    sub->add_option("--bundle", a.bundle_dir, "model bundle directory")
        ->required()
        ->envname("DISTILL_BUNDLE");
    sub->add_option("--variant", a.variant, "pipeline to run")
        ->check(CLI::IsMember(kVariantTokens))
        ->envname("DISTILL_VARIANT");
    add_prompt_options(sub, a.prompt);
    add_schedule_options(sub, a.schedule);
    sub->add_flag("--raw-logit-sum", a.raw_logit_sum,
                  "aggregate selection scores as raw q.k sums instead of per-head softmax");
    sub->add_flag("--compact-positions", a.compact_positions,
                  "renumber survivors to positions 0..k-1 (requires full truncation)");
    sub->add_option("-T,--max-new-tokens", a.max_new_tokens,
                    "tokens to generate, first included")
        ->envname("DISTILL_MAX_NEW_TOKENS");
    sub->add_option("--eos", a.eos, "stop early on this token id")->envname("DISTILL_EOS");
    sub->add_flag("--deterministic", a.deterministic,
                  "zero out wall-clock timing for byte-identical output")
        ->envname("DISTILL_DETERMINISTIC");
    sub->add_option("--threads", a.threads, "kernel thread count (results are identical)")
        ->envname("DISTILL_THREADS");
}

} // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"prompt-compressing transformer inference workbench"};
    app.name("distill");
    app.require_subcommand(1);

    int rc = 0;

    MakeModelArgs mm;
    auto* sub_mm = app.add_subcommand("make-model", "write a seeded random model bundle");
    sub_mm->add_option("--layers", mm.layers)->required()->envname("DISTILL_LAYERS");
    sub_mm->add_option("--heads", mm.heads)->required()->envname("DISTILL_HEADS");
    sub_mm->add_option("--kv-heads", mm.kv_heads, "default: same as --heads")
        ->envname("DISTILL_KV_HEADS");
    sub_mm->add_option("--head-dim", mm.head_dim)->required()->envname("DISTILL_HEAD_DIM");
    sub_mm->add_option("--mlp-hidden", mm.mlp_hidden, "default: 4 * model_dim")
        ->envname("DISTILL_MLP_HIDDEN");
    sub_mm->add_option("--vocab", mm.vocab)->required()->envname("DISTILL_VOCAB");
    sub_mm->add_option("--rope-theta", mm.rope_theta)->envname("DISTILL_ROPE_THETA");
    sub_mm->add_option("--norm-eps", mm.norm_eps)->envname("DISTILL_NORM_EPS");
    sub_mm->add_option("--seed", mm.seed)->envname("DISTILL_SEED");
    sub_mm->add_option("--out", mm.out_dir, "bundle directory to create")
        ->required()
        ->envname("DISTILL_OUT");
    sub_mm->callback([&] { rc = cmd_make_model(mm, out); });

    RunArgs gen;
    auto* sub_gen = app.add_subcommand("generate", "run one pipeline and write metrics JSON");
    add_run_options(sub_gen, gen);
    sub_gen->add_option("--out", gen.out_path, "metrics file")->envname("DISTILL_OUT");
    sub_gen->add_flag("--dump-cache", gen.dump_cache,
                      "include final per-layer cache lengths and positions");
    sub_gen->callback([&] { rc = cmd_generate(gen, out, err); });

    CompareArgs cmp;
    auto* sub_cmp = app.add_subcommand(
        "compare", "run two pipelines on one prompt and write their diff");
    add_run_options(sub_cmp, cmp.a);
    sub_cmp->add_option("--b-variant", cmp.b_variant, "variant for run B (default: same as A)")
        ->check(CLI::IsMember(kVariantTokens));
    sub_cmp->add_option("--b-layers-select", cmp.b_layers)->delimiter(',');
    sub_cmp->add_option("--b-topk", cmp.b_topk)->delimiter(',');
    sub_cmp->add_option("--b-truncate-stages", cmp.b_truncate)->default_str("inherit");
    sub_cmp->add_flag("--b-compact-positions", cmp.b_compact_positions);
    sub_cmp->add_option("--out", cmp.out_path, "diff file")->envname("DISTILL_OUT");
    sub_cmp->callback([&] { rc = cmd_compare(cmp, out, err); });

    CostArgs cost;
    auto* sub_cost = app.add_subcommand(
        "cost", "closed-form cost table for all five variants (no model run)");
    sub_cost->add_option("--bundle", cost.bundle_dir, "read the model shape from a bundle")
        ->envname("DISTILL_BUNDLE");
    sub_cost->add_option("--layers", cost.layers);
    sub_cost->add_option("--heads", cost.heads);
    sub_cost->add_option("--kv-heads", cost.kv_heads, "default: same as --heads");
    sub_cost->add_option("--head-dim", cost.head_dim);
    sub_cost->add_option("--mlp-hidden", cost.mlp_hidden, "default: 4 * model_dim");
    sub_cost->add_option("--vocab", cost.vocab);
    sub_cost->add_option("-n,--prompt-len", cost.n)->envname("DISTILL_N");
    sub_cost->add_option("-T,--max-new-tokens", cost.max_new_tokens)
        ->envname("DISTILL_MAX_NEW_TOKENS");
    add_schedule_options(sub_cost, cost.schedule);
    sub_cost->get_option("--layers-select")->required();
    sub_cost->get_option("--topk")->required();
    sub_cost->add_flag("--json", cost.as_json, "emit JSON instead of the table");
    sub_cost->callback([&] { rc = cmd_cost(cost, out, err); });

    SelectDebugArgs sd;
    auto* sub_sd = app.add_subcommand("select-debug",
                                      "dump per-token selection scores and chosen indices");
    sub_sd->add_option("--bundle", sd.bundle_dir)->required()->envname("DISTILL_BUNDLE");
    add_prompt_options(sub_sd, sd.prompt);
    sub_sd->add_option("--layer", sd.layer, "selection layer")->required()
        ->envname("DISTILL_LAYER");
    sub_sd->add_option("--topk", sd.topk)->required()->envname("DISTILL_TOPK");
    sub_sd->add_flag("--raw-logit-sum", sd.raw_logit_sum);
    sub_sd->add_flag("--no-force-include-last", sd.no_force_include_last);
    sub_sd->add_option("--out", sd.out_path, "output file, or - for stdout")
        ->envname("DISTILL_OUT");
    sub_sd->add_option("--threads", sd.threads)->envname("DISTILL_THREADS");
    sub_sd->callback([&] { rc = cmd_select_debug(sd, out); });

    SynthNeedleArgs sn;
    auto* sub_sn = app.add_subcommand(
        "synth-needle", "write a planted-needle prompt, its ground truth, and (oracle "
                        "mode) a bundle with provable recovery");
    sub_sn->add_option("--n", sn.n, "haystack length")->required()->envname("DISTILL_N");
    sub_sn->add_option("--needle-len", sn.needle_len)->envname("DISTILL_NEEDLE_LEN");
    sub_sn->add_option("--needle-ids", sn.needle_ids, "explicit span ids (comma-separated)")
        ->delimiter(',');
    sub_sn->add_option("--depth", sn.depth, "span depth percent, 0 front / 100 back")
        ->envname("DISTILL_DEPTH");
    sub_sn->add_option("--seed", sn.seed)->envname("DISTILL_SEED");
    sub_sn->add_flag("--oracle", sn.oracle, "also build the hand-constructed bundle");
    sub_sn->add_option("--bundle", sn.bundle_dir, "vocabulary source (non-oracle mode)")
        ->envname("DISTILL_BUNDLE");
    sub_sn->add_option("--out-dir", sn.out_dir)->required()->envname("DISTILL_OUT_DIR");
    sub_sn->callback([&] { rc = cmd_synth_needle(sn, out); });

    std::vector<std::string> argv_storage;
    argv_storage.reserve(args.size() + 1);
    argv_storage.push_back("distill");
    argv_storage.insert(argv_storage.end(), args.begin(), args.end());
    std::vector<const char*> argv;
    argv.reserve(argv_storage.size());
    for (const std::string& s : argv_storage) argv.push_back(s.c_str());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 2;
    } catch (const std::exception& e) {
        return emit_error(err, e);
    }
    return rc;
}

} // namespace distill::cli

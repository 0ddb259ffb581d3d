#include "distill/needle.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <unordered_set>

#include "distill/kernels.hpp"
#include "distill/rng.hpp"

namespace distill {

namespace {

[[noreturn]] void fail(const std::string& what) {
    throw std::invalid_argument("needle: " + what);
}

std::size_t span_start_for(std::size_t n, std::size_t len, std::size_t depth_pct) {
    return (n - len) * depth_pct / 100;
}

void check_geometry(std::size_t n, std::size_t len, std::size_t depth_pct) {
    if (len == 0) fail("needle must be non-empty");
    if (depth_pct > 100) fail("depth must be 0..100");
    if (n < len) fail("haystack shorter than the needle");
}

std::vector<std::size_t> span_indices(std::size_t start, std::size_t len) {
    std::vector<std::size_t> idx(len);
    for (std::size_t j = 0; j < len; ++j) idx[j] = start + j;
    return idx;
}

} // namespace

PlantedPrompt plant_needle(const PlantedNeedleSpec& spec, std::int32_t vocab_size) {
    const std::size_t n = spec.haystack_len;
    const std::size_t len = spec.needle_ids.size();
    check_geometry(n, len, spec.depth_pct);
    if (vocab_size < 1) fail("vocab must be positive");

    std::unordered_set<std::int32_t> reserved;
    for (std::int32_t id : spec.needle_ids) {
        if (id < 0 || id >= vocab_size)
            fail("needle id " + std::to_string(id) + " outside vocab");
        reserved.insert(id);
    }
    if (reserved.size() >= static_cast<std::size_t>(vocab_size))
        fail("no ids left for filler");

    PlantedPrompt out;
    out.span_start = span_start_for(n, len, spec.depth_pct);
    out.span_len = len;
    out.expected_indices = span_indices(out.span_start, len);

    SplitMix64 rng(spec.seed);
    out.tokens.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::int32_t id;
        do {
            id = static_cast<std::int32_t>(rng.next_below(static_cast<std::uint64_t>(vocab_size)));
        } while (reserved.count(id) != 0);
        out.tokens[i] = id;
    }
    for (std::size_t j = 0; j < len; ++j)
        out.tokens[out.span_start + j] = spec.needle_ids[j];
    return out;
}

OracleNeedle make_oracle_needle(std::size_t haystack_len, std::size_t needle_len,
                                std::size_t depth_pct, std::uint64_t seed) {
    const std::size_t n = haystack_len;
    const std::size_t len = needle_len;
    check_geometry(n, len, depth_pct);
    const bool cue_at_end = depth_pct < 100;
    if (cue_at_end && n < len + 1) fail("haystack too short to append the cue token");

    // Ids: one filler, one cue, one per span slot — shuffled so id values
    // carry no positional information.
    const std::int32_t vocab = static_cast<std::int32_t>(2 + len);
    std::vector<std::int32_t> perm(static_cast<std::size_t>(vocab));
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<std::int32_t>(i);
    SplitMix64 rng(seed);
    for (std::size_t i = perm.size(); i > 1; --i)
        std::swap(perm[i - 1], perm[rng.next_below(i)]);
    const std::int32_t filler_id = perm[0];
    const std::int32_t cue_id = perm[1];

    ModelConfig config;
    config.num_layers = 2;
    config.num_q_heads = 1;
    config.num_kv_heads = 1;
    config.head_dim = 4;
    config.model_dim = 4;
    config.mlp_hidden_dim = 4;
    config.vocab_size = vocab;
    config.seed = seed;
    config.validate();

    ModelBundle bundle;
    bundle.config = config;
    for (const TensorSpec& spec : tensor_specs(config)) {
        MatrixF32 t(spec.rows, spec.cols);
        if (spec.name.ends_with("norm"))
            std::fill(t.data.begin(), t.data.end(), 1.0f);
        bundle.tensors.emplace(spec.name, std::move(t));
    }

    OracleNeedle oracle;
    oracle.prompt.span_start = span_start_for(n, len, depth_pct);
    oracle.prompt.span_len = len;
    oracle.prompt.expected_indices = span_indices(oracle.prompt.span_start, len);
    oracle.prompt.tokens.assign(n, filler_id);
    if (cue_at_end) oracle.prompt.tokens[n - 1] = cue_id;

    // Span token at absolute position p embeds to (cos p, -sin p, 0, 0): a
    // unit vector that the position-p rotation maps onto (1, 0, 0, 0). The
    // cue embeds off-plane to (0, 0, 1, 0); filler embeds to zero, and zero
    // is a fixed point of the norm, the projections, and the rotation.
    MatrixF32& emb = bundle.tensors.at("tok_embedding");
    emb.at(static_cast<std::size_t>(cue_id), 2) = 1.0f;
    for (std::size_t j = 0; j < len; ++j) {
        const double p = static_cast<double>(oracle.prompt.span_start + j);
        const std::int32_t id = perm[2 + j];
        oracle.prompt.tokens[oracle.prompt.span_start + j] = id;
        emb.at(static_cast<std::size_t>(id), 0) = static_cast<float>(std::cos(p));
        emb.at(static_cast<std::size_t>(id), 1) = static_cast<float>(-std::sin(p));
    }

    // The norm rescales the cue's unit vector; measure that scale with the
    // engine's own arithmetic so the query row cancels it exactly.
    const std::vector<float> gain(4, 1.0f);
    const float cue_emb[4] = {0.0f, 0.0f, 1.0f, 0.0f};
    const float cue_scale = rmsnorm(cue_emb, gain, config.norm_eps)[2];

    // Key map: keep the rotation plane, drop the rest. Query map: same plane
    // identity (serves the depth-100 case where the last span token asks the
    // question), plus a cue row that counter-rotates position n-1 onto (1, 0).
    const double last_pos = static_cast<double>(n - 1);
    for (std::size_t layer = 0; layer < config.num_layers; ++layer) {
        const std::string prefix = "layers." + std::to_string(layer) + ".";
        MatrixF32& wk = bundle.tensors.at(prefix + "wk");
        wk.at(0, 0) = 1.0f;
        wk.at(1, 1) = 1.0f;
        MatrixF32& wq = bundle.tensors.at(prefix + "wq");
        wq.at(0, 0) = 1.0f;
        wq.at(1, 1) = 1.0f;
        wq.at(2, 0) = static_cast<float>(std::cos(last_pos)) / cue_scale;
        wq.at(2, 1) = static_cast<float>(-std::sin(last_pos)) / cue_scale;
        // wv, wo, and the MLP weights stay zero: each layer adds nothing to
        // the residual stream, so the embeddings reach the selection layer
        // untouched.
    }

    bundle.validate();
    oracle.bundle = std::move(bundle);
    oracle.select_layer = 1;
    return oracle;
}

} // namespace distill

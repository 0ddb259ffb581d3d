#include "distill/model.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "distill/cost.hpp"
#include "distill/kernels.hpp"
#include "distill/rng.hpp"

namespace distill {

namespace {

[[noreturn]] void fail(const std::string& what) { throw std::invalid_argument("model: " + what); }

void require(bool ok, const std::string& what) {
    if (!ok) fail(what);
}

std::string layer_tensor(std::size_t layer, const char* suffix) {
    return "layers." + std::to_string(layer) + "." + suffix;
}

MatrixF32 rmsnorm_rows(const MatrixF32& x, const MatrixF32& gain, float eps) {
    MatrixF32 out(x.rows, x.cols);
    for (std::size_t r = 0; r < x.rows; ++r) {
        auto normed = rmsnorm(x.row(r), gain.row(0), eps);
        std::copy(normed.begin(), normed.end(), out.row(r).begin());
    }
    return out;
}

MatrixF32 extract_cols(const MatrixF32& m, std::size_t col0, std::size_t ncols) {
    MatrixF32 out(m.rows, ncols);
    for (std::size_t r = 0; r < m.rows; ++r) {
        const float* src = m.row(r).data() + col0;
        std::copy(src, src + ncols, out.row(r).begin());
    }
    return out;
}

void write_cols(MatrixF32& dst, std::size_t col0, const MatrixF32& src) {
    for (std::size_t r = 0; r < src.rows; ++r) {
        std::copy(src.row(r).begin(), src.row(r).end(), dst.row(r).begin() + col0);
    }
}

void add_inplace(MatrixF32& a, const MatrixF32& b) {
    for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] += b.data[i];
}

// Rotary rotation applied head by head over a flat (len x heads*d) matrix.
MatrixF32 rope_heads(const MatrixF32& flat, std::size_t heads, std::size_t head_dim,
                     std::span<const std::int64_t> positions, float theta) {
    MatrixF32 out(flat.rows, flat.cols);
    for (std::size_t h = 0; h < heads; ++h) {
        MatrixF32 rotated = rope_apply(extract_cols(flat, h * head_dim, head_dim), positions, theta);
        write_cols(out, h * head_dim, rotated);
    }
    return out;
}

float silu(float x) { return x / (1.0f + std::exp(-x)); }

void touch(CostLedger* ledger, const std::string& name, const MatrixF32& w, std::uint64_t macs) {
    if (ledger) ledger->record_weight_use(name, w.rows * w.cols, macs);
}

} // namespace

void ModelConfig::validate() const {
    if (num_layers < 1) fail("num_layers must be >= 1");
    if (num_q_heads < 1) fail("num_q_heads must be >= 1");
    if (num_kv_heads < 1) fail("num_kv_heads must be >= 1");
    if (num_q_heads % num_kv_heads != 0)
        fail("num_q_heads (" + std::to_string(num_q_heads) + ") must be a multiple of num_kv_heads (" +
             std::to_string(num_kv_heads) + ")");
    if (head_dim < 1) fail("head_dim must be >= 1");
    if (head_dim % 2 != 0) fail("head_dim must be even (rotary pairs)");
    if (model_dim != num_q_heads * head_dim)
        fail("model_dim (" + std::to_string(model_dim) + ") must equal num_q_heads * head_dim (" +
             std::to_string(num_q_heads * head_dim) + ")");
    if (mlp_hidden_dim < 1) fail("mlp_hidden_dim must be >= 1");
    if (vocab_size < 1) fail("vocab_size must be >= 1");
    if (!(rope_theta > 0.0f)) fail("rope_theta must be > 0");
    if (!(norm_eps > 0.0f)) fail("norm_eps must be > 0");
}

std::vector<TensorSpec> tensor_specs(const ModelConfig& c) {
    std::vector<TensorSpec> specs;
    specs.push_back({"tok_embedding", c.vocab_size, c.model_dim});
    for (std::size_t i = 0; i < c.num_layers; ++i) {
        specs.push_back({layer_tensor(i, "attn_norm"), 1, c.model_dim});
        specs.push_back({layer_tensor(i, "wq"), c.model_dim, c.q_dim()});
        specs.push_back({layer_tensor(i, "wk"), c.model_dim, c.kv_dim()});
        specs.push_back({layer_tensor(i, "wv"), c.model_dim, c.kv_dim()});
        specs.push_back({layer_tensor(i, "wo"), c.q_dim(), c.model_dim});
        specs.push_back({layer_tensor(i, "mlp_norm"), 1, c.model_dim});
        specs.push_back({layer_tensor(i, "w_gate"), c.model_dim, c.mlp_hidden_dim});
        specs.push_back({layer_tensor(i, "w_up"), c.model_dim, c.mlp_hidden_dim});
        specs.push_back({layer_tensor(i, "w_down"), c.mlp_hidden_dim, c.model_dim});
    }
    specs.push_back({"final_norm", 1, c.model_dim});
    specs.push_back({"lm_head", c.model_dim, c.vocab_size});
    return specs;
}

const MatrixF32& ModelBundle::tensor(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) fail("missing tensor '" + name + "'");
    return it->second;
}

void ModelBundle::validate() const {
    config.validate();
    const auto specs = tensor_specs(config);
    if (tensors.size() != specs.size())
        fail("bundle has " + std::to_string(tensors.size()) + " tensors, expected " +
             std::to_string(specs.size()));
    for (const auto& spec : specs) {
        const MatrixF32& t = tensor(spec.name);
        if (t.rows != spec.rows || t.cols != spec.cols)
            fail("tensor '" + spec.name + "' has shape " + std::to_string(t.rows) + "x" +
                 std::to_string(t.cols) + ", expected " + std::to_string(spec.rows) + "x" +
                 std::to_string(spec.cols));
        for (float v : t.data)
            if (!std::isfinite(v)) fail("tensor '" + spec.name + "' contains a non-finite entry");
    }
}

ModelBundle init_random(const ModelConfig& config) {
    config.validate();
    ModelBundle bundle;
    bundle.config = config;
    for (const auto& spec : tensor_specs(config)) {
        MatrixF32 t(spec.rows, spec.cols);
        const bool is_norm_gain = spec.name.ends_with("norm");
        if (is_norm_gain) {
            std::fill(t.data.begin(), t.data.end(), 1.0f);
        } else {
            SplitMix64 rng(config.seed ^ fnv1a64(spec.name));
            const float scale = 1.0f / std::sqrt(static_cast<float>(spec.rows));
            for (float& v : t.data) v = rng.next_signed_unit() * scale;
        }
        bundle.tensors.emplace(spec.name, std::move(t));
    }
    return bundle;
}

LayerActivations embed(std::span<const std::int32_t> tokens, const ModelBundle& bundle,
                       std::span<const std::int64_t> positions) {
    const ModelConfig& c = bundle.config;
    if (tokens.empty()) fail("embed: empty token sequence");
    if (!positions.empty() && positions.size() != tokens.size())
        fail("embed: " + std::to_string(tokens.size()) + " tokens but " +
             std::to_string(positions.size()) + " positions");

    const MatrixF32& table = bundle.tensor("tok_embedding");
    LayerActivations acts;
    acts.hidden = MatrixF32(tokens.size(), c.model_dim);
    acts.positions.reserve(tokens.size());
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        const std::int32_t id = tokens[i];
        if (id < 0 || static_cast<std::size_t>(id) >= c.vocab_size)
            fail("token id " + std::to_string(id) + " outside vocab of " +
                 std::to_string(c.vocab_size));
        auto row = table.row(static_cast<std::size_t>(id));
        std::copy(row.begin(), row.end(), acts.hidden.row(i).begin());
        acts.positions.push_back(positions.empty() ? static_cast<std::int64_t>(i) : positions[i]);
    }
    for (std::size_t i = 1; i < acts.positions.size(); ++i)
        if (acts.positions[i] <= acts.positions[i - 1])
            fail("embed positions must be strictly increasing");
    return acts;
}

LayerActivations layer_forward(std::size_t layer_index, const LayerActivations& acts,
                               LayerKVCache& cache, const ModelBundle& bundle,
                               CostLedger* ledger) {
    const ModelConfig& c = bundle.config;
    const std::size_t rows = acts.len();
    require(layer_index < c.num_layers,
            "layer index " + std::to_string(layer_index) + " out of range");
    require(rows >= 1, "layer_forward needs at least one row");
    require(acts.hidden.rows == rows && acts.hidden.cols == c.model_dim,
            "activation shape does not match config");
    if (!cache.positions.empty())
        require(acts.positions.front() > cache.positions.back(),
                "activation positions must come after everything already cached");

    const MatrixF32& wq = bundle.tensor(layer_tensor(layer_index, "wq"));
    const MatrixF32& wk = bundle.tensor(layer_tensor(layer_index, "wk"));
    const MatrixF32& wv = bundle.tensor(layer_tensor(layer_index, "wv"));
    const MatrixF32& wo = bundle.tensor(layer_tensor(layer_index, "wo"));
    const MatrixF32& attn_norm = bundle.tensor(layer_tensor(layer_index, "attn_norm"));
    const MatrixF32& mlp_norm = bundle.tensor(layer_tensor(layer_index, "mlp_norm"));
    const MatrixF32& w_gate = bundle.tensor(layer_tensor(layer_index, "w_gate"));
    const MatrixF32& w_up = bundle.tensor(layer_tensor(layer_index, "w_up"));
    const MatrixF32& w_down = bundle.tensor(layer_tensor(layer_index, "w_down"));

    const std::uint64_t rows64 = rows;

    // Attention half-block.
    MatrixF32 attn_in = rmsnorm_rows(acts.hidden, attn_norm, c.norm_eps);
    touch(ledger, layer_tensor(layer_index, "attn_norm"), attn_norm, 0);

    MatrixF32 q = matmul(attn_in, wq);
    MatrixF32 k = matmul(attn_in, wk);
    MatrixF32 v = matmul(attn_in, wv);
    touch(ledger, layer_tensor(layer_index, "wq"), wq, rows64 * c.model_dim * c.q_dim());
    touch(ledger, layer_tensor(layer_index, "wk"), wk, rows64 * c.model_dim * c.kv_dim());
    touch(ledger, layer_tensor(layer_index, "wv"), wv, rows64 * c.model_dim * c.kv_dim());

    q = rope_heads(q, c.num_q_heads, c.head_dim, acts.positions, c.rope_theta);
    k = rope_heads(k, c.num_kv_heads, c.head_dim, acts.positions, c.rope_theta);

    cache.append(k, v, acts.positions);

    // Causal MAC count: every query head walks each row's prefix once.
    std::uint64_t attended_total = 0;
    for (std::size_t i = 0; i < rows; ++i)
        attended_total += causal_prefix_len(cache.positions, acts.positions[i]);
    const std::uint64_t per_side = static_cast<std::uint64_t>(c.num_q_heads) * c.head_dim * attended_total;
    if (ledger) ledger->record_attention(layer_index, per_side, per_side);

    const float scale = 1.0f / std::sqrt(static_cast<float>(c.head_dim));
    MatrixF32 attn_concat(rows, c.q_dim());
    for (std::size_t qh = 0; qh < c.num_q_heads; ++qh) {
        const std::size_t kvh = qh / c.group_size();
        MatrixF32 q_head = extract_cols(q, qh * c.head_dim, c.head_dim);
        MatrixF32 k_head = extract_cols(cache.keys, kvh * c.head_dim, c.head_dim);
        MatrixF32 v_head = extract_cols(cache.values, kvh * c.head_dim, c.head_dim);
        MatrixF32 mixed = causal_attention_head(q_head, k_head, v_head, acts.positions,
                                                cache.positions, scale);
        write_cols(attn_concat, qh * c.head_dim, mixed);
    }

    MatrixF32 hidden = acts.hidden;
    MatrixF32 attn_out = matmul(attn_concat, wo);
    touch(ledger, layer_tensor(layer_index, "wo"), wo, rows64 * c.q_dim() * c.model_dim);
    add_inplace(hidden, attn_out);

    // MLP half-block: SwiGLU.
    MatrixF32 mlp_in = rmsnorm_rows(hidden, mlp_norm, c.norm_eps);
    touch(ledger, layer_tensor(layer_index, "mlp_norm"), mlp_norm, 0);
    MatrixF32 gate = matmul(mlp_in, w_gate);
    MatrixF32 up = matmul(mlp_in, w_up);
    touch(ledger, layer_tensor(layer_index, "w_gate"), w_gate, rows64 * c.model_dim * c.mlp_hidden_dim);
    touch(ledger, layer_tensor(layer_index, "w_up"), w_up, rows64 * c.model_dim * c.mlp_hidden_dim);
    for (std::size_t i = 0; i < gate.data.size(); ++i) gate.data[i] = silu(gate.data[i]) * up.data[i];
    MatrixF32 down = matmul(gate, w_down);
    touch(ledger, layer_tensor(layer_index, "w_down"), w_down, rows64 * c.mlp_hidden_dim * c.model_dim);
    add_inplace(hidden, down);

    LayerActivations out;
    out.hidden = std::move(hidden);
    out.q = std::move(q);
    out.k = std::move(k);
    out.v = std::move(v);
    out.positions = acts.positions;
    return out;
}

std::vector<float> lm_head(const LayerActivations& acts, const ModelBundle& bundle,
                           CostLedger* ledger) {
    const ModelConfig& c = bundle.config;
    require(acts.len() >= 1, "lm_head needs at least one row");
    const MatrixF32& final_norm = bundle.tensor("final_norm");
    const MatrixF32& head = bundle.tensor("lm_head");

    auto normed = rmsnorm(acts.hidden.row(acts.len() - 1), final_norm.row(0), c.norm_eps);
    MatrixF32 row(1, c.model_dim);
    std::copy(normed.begin(), normed.end(), row.row(0).begin());
    MatrixF32 logits = matmul(row, head);

    touch(ledger, "final_norm", final_norm, 0);
    touch(ledger, "lm_head", head, static_cast<std::uint64_t>(c.model_dim) * c.vocab_size);
    return std::vector<float>(logits.data.begin(), logits.data.end());
}

std::int32_t greedy_argmax(std::span<const float> logits) {
    if (logits.empty()) fail("empty logits");
    std::size_t best = 0;
    for (std::size_t i = 1; i < logits.size(); ++i)
        if (logits[i] > logits[best]) best = i; // strict: ties keep the smaller id
    return static_cast<std::int32_t>(best);
}

LayerActivations gather_rows(const LayerActivations& acts, std::span<const std::size_t> indices) {
    auto take = [&](const MatrixF32& m) {
        if (m.rows == 0) return MatrixF32{};
        MatrixF32 out(indices.size(), m.cols);
        for (std::size_t i = 0; i < indices.size(); ++i) {
            if (indices[i] >= m.rows) fail("gather_rows index out of range");
            auto src = m.row(indices[i]);
            std::copy(src.begin(), src.end(), out.row(i).begin());
        }
        return out;
    };
    LayerActivations out;
    out.hidden = take(acts.hidden);
    out.q = take(acts.q);
    out.k = take(acts.k);
    out.v = take(acts.v);
    out.positions.reserve(indices.size());
    for (std::size_t idx : indices) out.positions.push_back(acts.positions[idx]);
    return out;
}

MatrixF32 last_query_heads(const LayerActivations& acts, const ModelConfig& config) {
    require(acts.q.rows == acts.len() && acts.q.cols == config.q_dim(),
            "activations carry no query block (layer_forward not run?)");
    MatrixF32 q(config.num_q_heads, config.head_dim);
    auto last = acts.q.row(acts.q.rows - 1);
    for (std::size_t h = 0; h < config.num_q_heads; ++h)
        std::copy(last.begin() + h * config.head_dim, last.begin() + (h + 1) * config.head_dim,
                  q.row(h).begin());
    return q;
}

} // namespace distill

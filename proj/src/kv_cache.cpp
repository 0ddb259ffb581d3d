#include "distill/kv_cache.hpp"

#include <stdexcept>
#include <string>

namespace distill {

namespace {

void fail(const std::string& what) { throw std::invalid_argument("kv_cache: " + what); }

} // namespace

void LayerKVCache::append(const MatrixF32& new_keys, const MatrixF32& new_values,
                          std::span<const std::int64_t> new_positions) {
    if (new_keys.cols != kv_dim || new_values.cols != kv_dim)
        fail("appended rows have kv_dim " + std::to_string(new_keys.cols) +
             ", cache expects " + std::to_string(kv_dim));
    if (new_keys.rows != new_positions.size() || new_values.rows != new_positions.size())
        fail("append row/position count mismatch");

    std::int64_t last = positions.empty() ? -1 : positions.back();
    for (std::int64_t p : new_positions) {
        if (p <= last)
            fail("positions must be strictly increasing (got " + std::to_string(p) +
                 " after " + std::to_string(last) + ")");
        last = p;
    }

    keys.data.insert(keys.data.end(), new_keys.data.begin(), new_keys.data.end());
    values.data.insert(values.data.end(), new_values.data.begin(), new_values.data.end());
    keys.rows += new_keys.rows;
    values.rows += new_values.rows;
    keys.cols = kv_dim;
    values.cols = kv_dim;
    positions.insert(positions.end(), new_positions.begin(), new_positions.end());
}

void LayerKVCache::gather(std::span<const std::size_t> indices) {
    if (indices.empty()) fail("gather needs at least one index");
    const std::size_t len = size();
    std::size_t prev = 0;
    bool first = true;
    for (std::size_t idx : indices) {
        if (idx >= len)
            fail("gather index " + std::to_string(idx) + " out of range (cache length " +
                 std::to_string(len) + ")");
        if (!first && idx <= prev) fail("gather indices must be ascending and unique");
        prev = idx;
        first = false;
    }

    MatrixF32 new_keys(indices.size(), kv_dim);
    MatrixF32 new_values(indices.size(), kv_dim);
    std::vector<std::int64_t> new_positions;
    new_positions.reserve(indices.size());
    for (std::size_t out = 0; out < indices.size(); ++out) {
        const std::size_t src = indices[out];
        auto kr = keys.row(src);
        auto vr = values.row(src);
        std::copy(kr.begin(), kr.end(), new_keys.row(out).begin());
        std::copy(vr.begin(), vr.end(), new_values.row(out).begin());
        new_positions.push_back(positions[src]);
    }

    // Move-assign: the old (larger) buffers are freed here, not merely resized,
    // so memory accounting after truncation reflects what is actually held.
    keys = std::move(new_keys);
    values = std::move(new_values);
    positions = std::move(new_positions);
    keys.data.shrink_to_fit();
    values.data.shrink_to_fit();
    positions.shrink_to_fit();
}

CacheSet CacheSet::make(std::size_t num_layers, std::size_t kv_dim) {
    CacheSet set;
    set.layers.assign(num_layers, LayerKVCache(kv_dim));
    return set;
}

void CacheSet::truncate_prefix_layers(std::size_t upto_layer, std::span<const std::size_t> indices) {
    if (upto_layer >= layers.size())
        fail("truncate_prefix_layers: layer " + std::to_string(upto_layer) +
             " out of range (num_layers " + std::to_string(layers.size()) + ")");
    for (std::size_t i = 0; i <= upto_layer; ++i) layers[i].gather(indices);
}

std::vector<std::size_t> CacheSet::layer_lengths() const {
    std::vector<std::size_t> out;
    out.reserve(layers.size());
    for (const auto& layer : layers) out.push_back(layer.size());
    return out;
}

std::size_t CacheSet::total_scalars() const {
    std::size_t total = 0;
    for (const auto& layer : layers) total += layer.scalar_count();
    return total;
}

} // namespace distill

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "distill/matrix.hpp"

namespace distill {

// Per-layer key/value store. Entries carry the absolute position they were
// written at; positions stay strictly increasing and survive truncation, so
// attention can keep masking by original position after tokens are dropped.
struct LayerKVCache {
    std::size_t kv_dim{0}; // num_kv_heads * head_dim
    MatrixF32 keys;        // len x kv_dim
    MatrixF32 values;      // len x kv_dim
    std::vector<std::int64_t> positions;

    LayerKVCache() = default;
    explicit LayerKVCache(std::size_t kv_dim_)
        : kv_dim(kv_dim_), keys(0, kv_dim_), values(0, kv_dim_) {}

    std::size_t size() const { return positions.size(); }

    // Appends entries; every new position must exceed the current maximum.
    void append(const MatrixF32& new_keys, const MatrixF32& new_values,
                std::span<const std::int64_t> new_positions);

    // Keeps exactly the entries at `indices` (ascending, unique, in range),
    // in original relative order, and releases the discarded storage so the
    // post-truncation footprint is real.
    void gather(std::span<const std::size_t> indices);

    // Stored key+value scalars: 2 * len * kv_dim.
    std::size_t scalar_count() const { return 2 * size() * kv_dim; }
};

// One LayerKVCache per transformer layer.
struct CacheSet {
    std::vector<LayerKVCache> layers;

    static CacheSet make(std::size_t num_layers, std::size_t kv_dim);

    // Applies gather(indices) to every layer 0..upto_layer inclusive. Layers
    // above are untouched. Each affected layer must be long enough to hold
    // max(indices).
    void truncate_prefix_layers(std::size_t upto_layer, std::span<const std::size_t> indices);

    std::vector<std::size_t> layer_lengths() const;

    // Total stored key+value scalars across layers (physical h_kv figure).
    std::size_t total_scalars() const;
};

} // namespace distill

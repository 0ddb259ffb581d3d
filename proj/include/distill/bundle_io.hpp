#pragma once

#include <filesystem>

#include "distill/model.hpp"

namespace distill {

// On-disk bundle layout: a directory holding
//   config.json    — every ModelConfig field, explicitly typed
//   weights.bin    — all tensors concatenated, raw little-endian f32
//   manifest.json  — tensor name -> { offset (in floats), shape [rows, cols] }
// The loader cross-checks the manifest against the config's tensor list and
// the file size, so a truncated or reshuffled bundle is rejected up front.
void save_bundle(const ModelBundle& bundle, const std::filesystem::path& dir);

ModelBundle load_bundle(const std::filesystem::path& dir);

// Parse and validate config.json alone, without touching the weights. For
// consumers that only need the model shape (e.g. cost prediction).
ModelConfig load_bundle_config(const std::filesystem::path& dir);

} // namespace distill

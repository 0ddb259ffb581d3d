#pragma once

#include <filesystem>

#include <json.hpp>

#include "distill/cost.hpp"
#include "distill/pipelines.hpp"

namespace distill {

// JSON views of the accounting types. Objects serialize with sorted keys, so
// two identical runs produce byte-identical documents.

nlohmann::json phase_cost_json(const PhaseCost& cost, const ModelConfig& config);
nlohmann::json stage_prediction_json(const StagePrediction& stage, const ModelConfig& config);
nlohmann::json audit_json(const AuditReport& report);

// The full per-run metrics document (schema 1): run setup, generated tokens,
// cache shapes, selection record, measured vs predicted cost, audit verdict.
// Pass wall_ms = 0 for reproducible output. dump_cache adds final per-layer
// cache lengths and position lists.
nlohmann::json metrics_json(const ModelConfig& config, const PipelineConfig& run,
                            const GenerationResult& result, const CostPrediction& prediction,
                            const AuditReport& audit, double wall_ms, bool dump_cache);

nlohmann::json diff_json(const RunDiff& diff);

// Serialize with a trailing newline, write to `path` + ".tmp", then rename
// over `path`, so readers never observe a half-written document.
void write_json_atomic(const nlohmann::json& doc, const std::filesystem::path& path);

} // namespace distill

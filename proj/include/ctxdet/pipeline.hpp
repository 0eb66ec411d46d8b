#pragma once

#include "ctxdet/evaluation.hpp"
#include "ctxdet/lcr.hpp"
#include "ctxdet/scf.hpp"
#include "ctxdet/scr.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace ctxdet::pipeline {

struct ScfStage {
    std::vector<std::string> categories;
    scf::GraphDescriptor descriptor;
    std::filesystem::path embeddings_path;
    std::filesystem::path features_path;
    scf::FitHyper hyper;
};

struct ScrStage {
    /// Rules come from a file or inline; exactly one source.
    std::optional<std::filesystem::path> rules_path;
    std::optional<std::vector<scr::RelationRule>> inline_rules;
    scr::ApplyParams apply;
    double percentile = 0.05;
};

struct EvalStage {
    double iou = 0.5;
    double score_threshold = 0.5;
    std::vector<std::string> subsets;
};

struct PipelineConfig {
    std::uint64_t seed = 0;
    std::filesystem::path annotations_path;
    std::optional<std::filesystem::path> detections_path;
    std::filesystem::path out_dir;
    std::optional<lcr::LcrParams> lcr;
    std::optional<ScfStage> scf;
    std::optional<ScrStage> scr;
    std::optional<EvalStage> eval;
};

/// Parse and validate a config document. Relative paths resolve against
/// base_dir (the config file's directory); referenced inputs must exist.
PipelineConfig parse_config_json(const nlohmann::json& root, const std::string& origin,
                                 const std::filesystem::path& base_dir);
PipelineConfig parse_config(const std::filesystem::path& path);

struct StageReport {
    std::string name;
    double seconds = 0.0;
    std::vector<std::string> artifacts;
    std::vector<std::string> warnings;
};

struct RunReport {
    std::uint64_t seed = 0;
    std::vector<StageReport> stages;
};

/// Execute the enabled stages in fixed order lcr -> scf -> scr -> eval,
/// wiring each stage's output into the next and writing one JSON artifact
/// per output under out_dir.
RunReport run_pipeline(const PipelineConfig& config);

nlohmann::json report_to_json(const RunReport& report);

} // namespace ctxdet::pipeline

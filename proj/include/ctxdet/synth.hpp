#pragma once

#include "ctxdet/dataset.hpp"
#include "ctxdet/scr.hpp"

#include "json.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace ctxdet::synth {

/// Free-standing objects placed uniformly inside the image.
struct ObjectTemplate {
    std::string category;
    int count = 1;
    std::array<double, 2> width{20.0, 60.0};
    std::array<double, 2> height{20.0, 60.0};
    std::array<double, 2> score{0.55, 0.95};
};

/// For every subject instance, place one object realizing the predicate
/// with a target IoS drawn from the given range. The object's detection
/// score is drawn from the suppressed range with probability
/// suppress_prob, else from the regular range.
struct RelationTemplate {
    std::string subject;
    std::string object;
    std::optional<scr::Predicate> pred;
    std::array<double, 2> target_ios{0.2, 0.4};
    std::array<double, 2> width{20.0, 60.0};
    std::array<double, 2> height{10.0, 30.0};
    std::array<double, 2> score{0.55, 0.95};
    std::array<double, 2> suppressed_score{0.1, 0.45};
    double suppress_prob = 0.0;
};

/// Detector simulation: drop GT objects, jitter box corners uniformly,
/// add clamped Gaussian noise to scores.
struct NoiseModel {
    double drop_prob = 0.0;
    double score_noise_sd = 0.0;
    double jitter_px = 0.0;
};

struct SceneSpec {
    std::uint64_t seed = 0;
    int num_images = 1;
    int image_width = 640;
    int image_height = 480;
    std::vector<ObjectTemplate> objects;
    std::vector<RelationTemplate> relations;
    NoiseModel noise;
};

struct GeneratedScene {
    data::Dataset dataset;
    data::DetectionSet detections;
};

/// Deterministic per seed. Throws StageError when a relation placement
/// stays infeasible after bounded retries.
GeneratedScene generate(const SceneSpec& spec);

/// Reference promotion pass by exhaustive triple enumeration, written
/// against the geometry primitives only. Test-side twin of scr::apply.
data::DetectionSet oracle_scr(const data::DetectionSet& detections,
                              const std::vector<scr::RelationRule>& rules,
                              const data::Dataset& dataset,
                              const scr::ApplyParams& params);

SceneSpec spec_from_json(const nlohmann::json& root, const std::string& origin);
SceneSpec load_spec(const std::filesystem::path& path);

} // namespace ctxdet::synth

#pragma once

#include "ctxdet/dataset.hpp"
#include "ctxdet/evaluation.hpp"
#include "ctxdet/geometry.hpp"

#include "json.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace ctxdet::scr {

enum class Topology { disjoint, touch, overlap, within, contains, equal };
enum class Predicate { above, under, left_of, right_of };
enum class OcclusionSubset { reasonable, heavy };

/// Linear length expression over the subject and object box dimensions,
/// e.g. 0.2 * height_subject + height_object.
struct DimExpr {
    double constant = 0.0;
    double height_subject = 0.0;
    double width_subject = 0.0;
    double height_object = 0.0;
    double width_object = 0.0;

    double eval(const geom::BBox& subject, const geom::BBox& object) const {
        return constant + height_subject * subject.h + width_subject * subject.w +
               height_object * object.h + width_object * object.w;
    }

    bool operator==(const DimExpr&) const = default;
};

/// One configured relation R[Subject, Object] = pred[t(S, O)].
struct RelationRule {
    std::string subject;
    std::string object;
    std::optional<Predicate> pred;
    Topology topology = Topology::overlap;
    std::optional<double> overlap_threshold;
    std::optional<DimExpr> search_height;
    std::optional<DimExpr> search_width;
    /// Scopes ground-truth threshold derivation to the matching subset.
    std::optional<OcclusionSubset> occlusion;

    bool operator==(const RelationRule&) const = default;
};

struct ApplyParams {
    double keep_threshold = 0.5;
    double candidate_floor = 0.05;
};

/// Topology test between subject and object regions. overlap requires a
/// threshold (ios >= threshold and ios < 1); within accepts containment
/// in either direction; contains means object inside subject.
bool eval_topology(Topology t, const geom::Region& subject, const geom::Region& object,
                   std::optional<double> threshold);

/// Directional test: the reference point (intersection centroid, or the
/// object centroid when disjoint) lies strictly on the named side of the
/// subject's center line.
bool eval_pred(Predicate p, const geom::Region& subject, const geom::Region& object);

/// Rectangle to search for a candidate object around a detected subject,
/// evaluated from the rule's dimension expressions and clipped to the
/// image. Requires both expressions.
geom::BBox search_area(const RelationRule& rule, const geom::BBox& subject,
                       const geom::BBox& candidate, const data::ImageRecord& image);

/// Fill missing overlap thresholds with the nearest-rank percentile
/// (default 5th) of ground-truth IoS over same-image subject/object pairs
/// that satisfy the rule's predicate. Explicit thresholds pass through.
std::vector<RelationRule> derive_thresholds(const data::Dataset& dataset,
                                            std::vector<RelationRule> rules,
                                            double percentile = 0.05);

/// Keep detections scoring >= keep_threshold, then promote, per rule and
/// retained subject, the single best-scoring candidate object from
/// [candidate_floor, keep_threshold) that satisfies the search area,
/// predicate and topology. Rules whose object category is stuff anchor on
/// the dataset's stuff masks instead and promote the best satisfying
/// subject candidate. Promotion never removes or re-scores detections.
data::DetectionSet apply(const data::DetectionSet& detections,
                         const std::vector<RelationRule>& rules,
                         const data::Dataset& dataset, const ApplyParams& params);

std::vector<RelationRule> rules_from_json(const nlohmann::json& root,
                                          const std::string& origin);
std::vector<RelationRule> load_rules(const std::filesystem::path& path);
nlohmann::json rules_to_json(const std::vector<RelationRule>& rules);
void save_rules(const std::vector<RelationRule>& rules, const std::filesystem::path& path);

Topology topology_from_string(const std::string& name);
std::string to_string(Topology t);
Predicate predicate_from_string(const std::string& name);
std::string to_string(Predicate p);

} // namespace ctxdet::scr

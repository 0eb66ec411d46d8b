#pragma once

#include "ctxdet/dataset.hpp"

#include "json.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace ctxdet::eval {

/// Ground-truth slice by pixel height and visible ratio, closed bounds.
struct SubsetSpec {
    double min_height = 0.0;
    double vis_lo = 0.0;
    double vis_hi = 1.0;
};

inline constexpr SubsetSpec kReasonable{50.0, 0.65, 1.0};
inline constexpr SubsetSpec kHeavy{50.0, 0.0, 0.65};
inline constexpr SubsetSpec kAll{0.0, 0.0, 1.0};

/// Missing visible_ratio counts as fully visible.
bool in_subset(const SubsetSpec& subset, double height, std::optional<double> visible_ratio);

SubsetSpec subset_from_name(const std::string& name);

enum class DetOutcome {
    tp,
    fp,
    /// Best match was an already-consumed multi-member LCR group: the
    /// detection duplicates a dual-labeled object and leaves scoring.
    duplicate,
    /// Matched an ignore region (or out-of-subset ground truth).
    ignored,
};

struct DetRecord {
    int image_id = 0;
    int det_index = 0; // position in the DetectionSet
    double score = 0.0;
    DetOutcome outcome = DetOutcome::fp;
};

/// Match results for one category: records sorted by descending score
/// (ties by det_index), num_gt counting each LCR group once.
struct CategoryLog {
    int category_id = 0;
    std::string category_name;
    std::size_t num_gt = 0;
    std::vector<DetRecord> records;
};

struct MatchLog {
    std::vector<CategoryLog> categories;
    std::size_t num_images = 0;
};

/// Greedy per-image, per-category matching in descending score order.
/// An LCR group (original label plus enlarged twins) is consumed as one
/// object: matching any member claims the group. With a subset, ground
/// truth outside it is treated as ignore regions.
MatchLog match(const data::Dataset& dataset, const data::DetectionSet& detections,
               double iou_threshold,
               const std::optional<SubsetSpec>& subset = std::nullopt);

/// All-point interpolated average precision; nullopt when the category
/// has no ground truth.
std::optional<double> average_precision(const CategoryLog& log);

struct PrecisionRecall {
    double precision = 0.0;
    double recall = 0.0;
};

/// Precision and recall over detections with score >= score_threshold.
PrecisionRecall precision_recall(const CategoryLog& log, double score_threshold);

/// Log-average miss rate over 9 FPPI points log-spaced in [1e-2, 1].
/// Pooled across categories; throws DataError when the log has no
/// ground truth.
double log_avg_miss_rate(const MatchLog& log);

struct EvalOptions {
    double iou = 0.5;
    double score_threshold = 0.5;
    /// Subset filter applied to the AP/precision/recall matching pass;
    /// nullopt evaluates against all ground truth.
    std::optional<SubsetSpec> ap_subset;
    /// Named subsets to compute MR^-2 on.
    std::vector<std::pair<std::string, SubsetSpec>> mr2_subsets;
};

struct CategoryResult {
    int id = 0;
    std::string name;
    std::size_t num_gt = 0;
    double precision = 0.0;
    double recall = 0.0;
    std::optional<double> ap;
};

struct EvalReport {
    double iou = 0.5;
    double score_threshold = 0.5;
    std::size_t num_images = 0;
    std::vector<CategoryResult> categories;
    /// Mean AP over categories with ground truth; nullopt when none have any.
    std::optional<double> map;
    std::map<std::string, double> mr2;
};

EvalReport evaluate(const data::Dataset& dataset, const data::DetectionSet& detections,
                    const EvalOptions& options);

nlohmann::json report_to_json(const EvalReport& report);

} // namespace ctxdet::eval

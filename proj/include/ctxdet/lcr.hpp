#pragma once

#include "ctxdet/dataset.hpp"
#include "ctxdet/geometry.hpp"

namespace ctxdet::lcr {

/// Area below which a label counts as a small object under the COCO
/// standard (32 x 32 px), strict inequality.
inline constexpr double kCocoSmallArea = 32.0 * 32.0;

/// Box-to-image area ratio below which a label counts as a small object
/// under the SOD standard (0.58%), strict inequality.
inline constexpr double kSodSmallRatio = 0.0058;

enum class LabelingStandard { coco, sod };

struct LcrParams {
    LabelingStandard standard = LabelingStandard::coco;
    /// Enlarging factor applied to each linear dimension (alpha for the
    /// COCO standard, beta for SOD). Must satisfy 0 <= value < 1.
    double enlarge_percentage = 0.0;
};

/// Validate parameter bounds; throws ConfigError.
void validate(const LcrParams& params);

/// Small-object test: COCO -> area < 1024 px^2; SOD -> area / image area
/// < 0.58%. Both strict.
bool qualifies(const geom::BBox& box, const data::ImageRecord& image,
               const LcrParams& params);

/// Scale width and height by (1 + factor) about the box center, then clip
/// to the image rectangle.
geom::BBox enlarge(const geom::BBox& box, double factor, const data::ImageRecord& image);

/// Append an enlarged twin (fresh id, lcr_source_id -> original) for every
/// qualifying annotation. Twins never qualify themselves, and an original
/// that already has a twin is skipped, so the transform is idempotent.
/// Output order: originals first in input order, then twins in original-id
/// order.
data::Dataset transform_dataset(const data::Dataset& dataset, const LcrParams& params);

LabelingStandard standard_from_string(const std::string& name);
std::string to_string(LabelingStandard standard);

} // namespace ctxdet::lcr

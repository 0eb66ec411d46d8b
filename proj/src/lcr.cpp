#include "ctxdet/lcr.hpp"

#include "ctxdet/errors.hpp"

#include <algorithm>
#include <map>
#include <unordered_set>

namespace ctxdet::lcr {

void validate(const LcrParams& params) {
    if (params.enlarge_percentage < 0.0 || params.enlarge_percentage >= 1.0) {
        throw ConfigError("Enlarge_percentage must lie in [0, 1), got " +
                          std::to_string(params.enlarge_percentage));
    }
}

bool qualifies(const geom::BBox& box, const data::ImageRecord& image,
               const LcrParams& params) {
    const double box_area = box.area();
    if (params.standard == LabelingStandard::coco) {
        return box_area < kCocoSmallArea;
    }
    const double image_area =
        static_cast<double>(image.width) * static_cast<double>(image.height);
    return box_area / image_area < kSodSmallRatio;
}

geom::BBox enlarge(const geom::BBox& box, double factor, const data::ImageRecord& image) {
    const double scale = 1.0 + factor;
    const double new_w = box.w * scale;
    const double new_h = box.h * scale;
    const geom::BBox grown{box.center_x() - new_w / 2.0, box.center_y() - new_h / 2.0,
                           new_w, new_h};
    return geom::clip(grown, static_cast<double>(image.width),
                      static_cast<double>(image.height));
}

data::Dataset transform_dataset(const data::Dataset& dataset, const LcrParams& params) {
    validate(params);

    std::unordered_set<int> has_twin;
    int max_id = 0;
    for (const data::Annotation& ann : dataset.annotations) {
        max_id = std::max(max_id, ann.id);
        if (ann.lcr_source_id) {
            has_twin.insert(*ann.lcr_source_id);
        }
    }

    // Qualifiers keyed by original id so twins come out in id order.
    std::map<int, const data::Annotation*> qualifiers;
    for (const data::Annotation& ann : dataset.annotations) {
        if (ann.lcr_source_id || has_twin.count(ann.id) != 0) {
            continue;
        }
        const data::ImageRecord* image = dataset.find_image(ann.image_id);
        if (image != nullptr && qualifies(ann.bbox, *image, params)) {
            qualifiers.emplace(ann.id, &ann);
        }
    }

    data::Dataset out;
    out.categories = dataset.categories;
    out.images = dataset.images;
    out.annotations = dataset.annotations;

    int next_id = max_id + 1;
    for (const auto& [source_id, source] : qualifiers) {
        const data::ImageRecord* image = dataset.find_image(source->image_id);
        data::Annotation twin;
        twin.id = next_id++;
        twin.image_id = source->image_id;
        twin.category_id = source->category_id;
        twin.bbox = enlarge(source->bbox, params.enlarge_percentage, *image);
        twin.visible_ratio = source->visible_ratio;
        twin.ignore = source->ignore;
        twin.lcr_source_id = source_id;
        out.annotations.push_back(std::move(twin));
    }
    return out;
}

LabelingStandard standard_from_string(const std::string& name) {
    if (name == "coco") {
        return LabelingStandard::coco;
    }
    if (name == "sod") {
        return LabelingStandard::sod;
    }
    throw ConfigError("Labeling_standard must be 'coco' or 'sod', got '" + name + "'");
}

std::string to_string(LabelingStandard standard) {
    return standard == LabelingStandard::coco ? "coco" : "sod";
}

} // namespace ctxdet::lcr

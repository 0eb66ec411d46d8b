#pragma once

#include "ctxdet/geometry.hpp"

#include "json.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace ctxdet::data {

enum class CategoryKind { thing, stuff };

struct Category {
    int id = 0;
    std::string name;
    CategoryKind kind = CategoryKind::thing;

    bool operator==(const Category&) const = default;
};

struct ImageRecord {
    int id = 0;
    int width = 0;
    int height = 0;
    std::string file_name;

    bool operator==(const ImageRecord&) const = default;
};

/// One closed polygon, flat [x1, y1, x2, y2, ...] as in COCO.
struct Polygon {
    std::vector<double> xy;

    bool operator==(const Polygon&) const = default;
};

/// Uncompressed run-length encoding, column-major, first run counts zeros.
struct Rle {
    int height = 0;
    int width = 0;
    std::vector<int> counts;

    bool operator==(const Rle&) const = default;
};

using Segmentation = std::variant<std::vector<Polygon>, Rle>;

struct Annotation {
    int id = 0;
    int image_id = 0;
    int category_id = 0;
    geom::BBox bbox;
    std::optional<Segmentation> segmentation;
    std::optional<double> visible_ratio;
    bool ignore = false;
    /// Present on LCR twin labels: the id of the original annotation.
    std::optional<int> lcr_source_id;

    bool operator==(const Annotation&) const = default;
};

struct Detection {
    int image_id = 0;
    int category_id = 0;
    geom::BBox bbox;
    double score = 0.0;

    bool operator==(const Detection&) const = default;
};

struct Dataset {
    std::vector<Category> categories;
    std::vector<ImageRecord> images;
    std::vector<Annotation> annotations;
    /// Non-fatal load diagnostics (e.g. clipped boxes). Not serialized.
    std::vector<std::string> warnings;

    const Category* find_category(int id) const;
    const Category* find_category(const std::string& name) const;
    const ImageRecord* find_image(int id) const;

    bool operator==(const Dataset& other) const {
        return categories == other.categories && images == other.images &&
               annotations == other.annotations;
    }
};

/// Detections in canonical order: image_id ascending, then score
/// descending, ties keeping input order.
struct DetectionSet {
    std::vector<Detection> detections;

    bool operator==(const DetectionSet&) const = default;
};

Dataset parse_annotations(const nlohmann::json& root, const std::string& origin);
Dataset load_annotations(const std::filesystem::path& path);
nlohmann::json annotations_to_json(const Dataset& dataset);
void save_annotations(const Dataset& dataset, const std::filesystem::path& path);

DetectionSet parse_detections(const nlohmann::json& root, const Dataset& dataset,
                              const std::string& origin);
DetectionSet load_detections(const std::filesystem::path& path, const Dataset& dataset);
nlohmann::json detections_to_json(const DetectionSet& detections);
void save_detections(const DetectionSet& detections, const std::filesystem::path& path);

/// Decode an annotation's segmentation into a binary mask at image
/// resolution. Polygons use even-odd fill sampled at pixel centers; RLE
/// is decoded column-major.
geom::Mask decode_segmentation(const Annotation& annotation, const ImageRecord& image);

nlohmann::json load_json_file(const std::filesystem::path& path);
void write_json_file(const nlohmann::json& value, const std::filesystem::path& path);

} // namespace ctxdet::data

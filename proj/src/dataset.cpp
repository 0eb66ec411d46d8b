#include "ctxdet/dataset.hpp"

#include "ctxdet/errors.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace ctxdet::data {

namespace {

using nlohmann::json;

std::string at(const std::string& origin, const std::string& where) {
    return origin + ": " + where;
}

const json& require_field(const json& obj, const char* key, const std::string& ctx) {
    auto it = obj.find(key);
    if (it == obj.end()) {
        throw DataError(ctx + ": missing field '" + key + "'");
    }
    return *it;
}

int require_int(const json& obj, const char* key, const std::string& ctx) {
    const json& v = require_field(obj, key, ctx);
    if (!v.is_number_integer()) {
        throw DataError(ctx + ": field '" + key + "' must be an integer");
    }
    return v.get<int>();
}

double require_number(const json& obj, const char* key, const std::string& ctx) {
    const json& v = require_field(obj, key, ctx);
    if (!v.is_number()) {
        throw DataError(ctx + ": field '" + key + "' must be a number");
    }
    return v.get<double>();
}

std::string require_string(const json& obj, const char* key, const std::string& ctx) {
    const json& v = require_field(obj, key, ctx);
    if (!v.is_string()) {
        throw DataError(ctx + ": field '" + key + "' must be a string");
    }
    return v.get<std::string>();
}

geom::BBox parse_bbox(const json& obj, const std::string& ctx) {
    const json& v = require_field(obj, "bbox", ctx);
    if (!v.is_array() || v.size() != 4 || !std::all_of(v.begin(), v.end(), [](const json& e) {
            return e.is_number();
        })) {
        throw DataError(ctx + ": field 'bbox' must be [x, y, w, h]");
    }
    return geom::BBox{v[0].get<double>(), v[1].get<double>(), v[2].get<double>(),
                      v[3].get<double>()};
}

Segmentation parse_segmentation(const json& v, const std::string& ctx) {
    if (v.is_array()) {
        std::vector<Polygon> polys;
        for (std::size_t i = 0; i < v.size(); ++i) {
            const json& p = v[i];
            if (!p.is_array() || p.size() < 6 || p.size() % 2 != 0) {
                throw DataError(ctx + ": polygon " + std::to_string(i) +
                                " must be a flat list of at least 3 (x, y) pairs");
            }
            Polygon poly;
            poly.xy.reserve(p.size());
            for (const json& e : p) {
                if (!e.is_number()) {
                    throw DataError(ctx + ": polygon coordinates must be numbers");
                }
                poly.xy.push_back(e.get<double>());
            }
            polys.push_back(std::move(poly));
        }
        return polys;
    }
    if (v.is_object()) {
        const json& counts = require_field(v, "counts", ctx + ".segmentation");
        const json& size = require_field(v, "size", ctx + ".segmentation");
        if (!size.is_array() || size.size() != 2) {
            throw DataError(ctx + ": segmentation size must be [height, width]");
        }
        Rle rle;
        rle.height = size[0].get<int>();
        rle.width = size[1].get<int>();
        if (!counts.is_array()) {
            throw DataError(ctx + ": segmentation counts must be an array");
        }
        for (const json& c : counts) {
            if (!c.is_number_integer() || c.get<int>() < 0) {
                throw DataError(ctx + ": RLE counts must be non-negative integers");
            }
            rle.counts.push_back(c.get<int>());
        }
        return rle;
    }
    throw DataError(ctx + ": segmentation must be a polygon list or an RLE object");
}

json bbox_to_json(const geom::BBox& b) { return json::array({b.x, b.y, b.w, b.h}); }

json segmentation_to_json(const Segmentation& seg) {
    if (const auto* polys = std::get_if<std::vector<Polygon>>(&seg)) {
        json arr = json::array();
        for (const Polygon& p : *polys) {
            arr.push_back(p.xy);
        }
        return arr;
    }
    const Rle& rle = std::get<Rle>(seg);
    return json{{"counts", rle.counts}, {"size", {rle.height, rle.width}}};
}

// Even-odd point-in-polygon test against one closed ring.
bool point_in_polygon(double px, double py, const std::vector<double>& xy) {
    bool inside = false;
    const std::size_t n = xy.size() / 2;
    for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
        const double xi = xy[2 * i];
        const double yi = xy[2 * i + 1];
        const double xj = xy[2 * j];
        const double yj = xy[2 * j + 1];
        if ((yi > py) != (yj > py)) {
            const double x_cross = xi + (py - yi) * (xj - xi) / (yj - yi);
            if (px < x_cross) {
                inside = !inside;
            }
        }
    }
    return inside;
}

} // namespace

const Category* Dataset::find_category(int id) const {
    for (const Category& c : categories) {
        if (c.id == id) {
            return &c;
        }
    }
    return nullptr;
}

const Category* Dataset::find_category(const std::string& name) const {
    for (const Category& c : categories) {
        if (c.name == name) {
            return &c;
        }
    }
    return nullptr;
}

const ImageRecord* Dataset::find_image(int id) const {
    for (const ImageRecord& im : images) {
        if (im.id == id) {
            return &im;
        }
    }
    return nullptr;
}

Dataset parse_annotations(const json& root, const std::string& origin) {
    if (!root.is_object()) {
        throw DataError(at(origin, "top level must be an object"));
    }
    Dataset ds;

    std::unordered_set<int> category_ids;
    std::unordered_set<std::string> category_names;
    for (std::size_t i = 0; i < root.value("categories", json::array()).size(); ++i) {
        const json& c = root["categories"][i];
        const std::string ctx = at(origin, "categories[" + std::to_string(i) + "]");
        Category cat;
        cat.id = require_int(c, "id", ctx);
        cat.name = require_string(c, "name", ctx);
        const std::string kind = c.value("kind", "thing");
        if (kind == "thing") {
            cat.kind = CategoryKind::thing;
        } else if (kind == "stuff") {
            cat.kind = CategoryKind::stuff;
        } else {
            throw DataError(ctx + ": kind must be 'thing' or 'stuff', got '" + kind + "'");
        }
        if (!category_ids.insert(cat.id).second) {
            throw DataError(ctx + ": duplicate category id " + std::to_string(cat.id));
        }
        if (!category_names.insert(cat.name).second) {
            throw DataError(ctx + ": duplicate category name '" + cat.name + "'");
        }
        ds.categories.push_back(std::move(cat));
    }

    std::unordered_map<int, const ImageRecord*> image_by_id;
    for (std::size_t i = 0; i < root.value("images", json::array()).size(); ++i) {
        const json& im = root["images"][i];
        const std::string ctx = at(origin, "images[" + std::to_string(i) + "]");
        ImageRecord rec;
        rec.id = require_int(im, "id", ctx);
        rec.width = require_int(im, "width", ctx);
        rec.height = require_int(im, "height", ctx);
        rec.file_name = im.value("file_name", "");
        if (rec.width <= 0 || rec.height <= 0) {
            throw DataError(ctx + ": image dimensions must be positive");
        }
        if (image_by_id.count(rec.id) != 0) {
            throw DataError(ctx + ": duplicate image id " + std::to_string(rec.id));
        }
        ds.images.push_back(std::move(rec));
    }
    for (const ImageRecord& rec : ds.images) {
        image_by_id[rec.id] = &rec;
    }

    std::unordered_set<int> annotation_ids;
    for (std::size_t i = 0; i < root.value("annotations", json::array()).size(); ++i) {
        const json& a = root["annotations"][i];
        const std::string ctx = at(origin, "annotations[" + std::to_string(i) + "]");
        Annotation ann;
        ann.id = require_int(a, "id", ctx);
        ann.image_id = require_int(a, "image_id", ctx);
        ann.category_id = require_int(a, "category_id", ctx);
        ann.bbox = parse_bbox(a, ctx);
        if (a.contains("segmentation")) {
            ann.segmentation = parse_segmentation(a["segmentation"], ctx);
        }
        if (a.contains("visible_ratio")) {
            ann.visible_ratio = require_number(a, "visible_ratio", ctx);
            if (*ann.visible_ratio < 0.0 || *ann.visible_ratio > 1.0) {
                throw DataError(ctx + ": visible_ratio must lie in [0, 1]");
            }
        }
        ann.ignore = a.value("ignore", false);
        if (a.contains("lcr_source_id")) {
            ann.lcr_source_id = require_int(a, "lcr_source_id", ctx);
        }

        if (!annotation_ids.insert(ann.id).second) {
            throw DataError(ctx + ": duplicate annotation id " + std::to_string(ann.id));
        }
        if (category_ids.count(ann.category_id) == 0) {
            throw DataError(ctx + ": dangling category_id " + std::to_string(ann.category_id));
        }
        auto im_it = image_by_id.find(ann.image_id);
        if (im_it == image_by_id.end()) {
            throw DataError(ctx + ": dangling image_id " + std::to_string(ann.image_id));
        }
        const ImageRecord& image = *im_it->second;
        if (!ann.bbox.valid()) {
            throw DataError(ctx + ": bbox must have positive width and height");
        }
        const bool out_of_bounds = ann.bbox.x < 0.0 || ann.bbox.y < 0.0 ||
                                   ann.bbox.right() > image.width ||
                                   ann.bbox.bottom() > image.height;
        if (out_of_bounds) {
            const geom::BBox clipped =
                geom::clip(ann.bbox, static_cast<double>(image.width),
                           static_cast<double>(image.height));
            if (!clipped.valid()) {
                throw DataError(ctx + ": bbox does not intersect image " +
                                std::to_string(image.id));
            }
            ds.warnings.push_back(ctx + ": bbox extends past image " +
                                  std::to_string(image.id) + " bounds, clipped");
            ann.bbox = clipped;
        }
        ds.annotations.push_back(std::move(ann));
    }

    // lcr_source_id links must land on a same-image, same-category annotation.
    std::unordered_map<int, const Annotation*> ann_by_id;
    for (const Annotation& ann : ds.annotations) {
        ann_by_id[ann.id] = &ann;
    }
    for (const Annotation& ann : ds.annotations) {
        if (!ann.lcr_source_id) {
            continue;
        }
        auto it = ann_by_id.find(*ann.lcr_source_id);
        if (it == ann_by_id.end()) {
            throw DataError(at(origin, "annotation " + std::to_string(ann.id) +
                                           ": dangling lcr_source_id " +
                                           std::to_string(*ann.lcr_source_id)));
        }
        const Annotation& source = *it->second;
        if (source.image_id != ann.image_id || source.category_id != ann.category_id) {
            throw DataError(at(origin, "annotation " + std::to_string(ann.id) +
                                           ": lcr_source_id " +
                                           std::to_string(*ann.lcr_source_id) +
                                           " must share image and category"));
        }
    }
    return ds;
}

json load_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw DataError(path.string() + ": cannot open file");
    }
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw DataError(path.string() + ": parse error: " + e.what());
    }
}

void write_json_file(const json& value, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) {
        throw DataError(path.string() + ": cannot open file for writing");
    }
    out << value.dump(2) << '\n';
    if (!out) {
        throw DataError(path.string() + ": write failed");
    }
}

Dataset load_annotations(const std::filesystem::path& path) {
    return parse_annotations(load_json_file(path), path.string());
}

json annotations_to_json(const Dataset& dataset) {
    json root;
    root["categories"] = json::array();
    for (const Category& c : dataset.categories) {
        root["categories"].push_back(
            {{"id", c.id},
             {"name", c.name},
             {"kind", c.kind == CategoryKind::stuff ? "stuff" : "thing"}});
    }
    root["images"] = json::array();
    for (const ImageRecord& im : dataset.images) {
        root["images"].push_back({{"id", im.id},
                                  {"width", im.width},
                                  {"height", im.height},
                                  {"file_name", im.file_name}});
    }
    root["annotations"] = json::array();
    for (const Annotation& a : dataset.annotations) {
        json obj{{"id", a.id},
                 {"image_id", a.image_id},
                 {"category_id", a.category_id},
                 {"bbox", bbox_to_json(a.bbox)}};
        if (a.segmentation) {
            obj["segmentation"] = segmentation_to_json(*a.segmentation);
        }
        if (a.visible_ratio) {
            obj["visible_ratio"] = *a.visible_ratio;
        }
        if (a.ignore) {
            obj["ignore"] = true;
        }
        if (a.lcr_source_id) {
            obj["lcr_source_id"] = *a.lcr_source_id;
        }
        root["annotations"].push_back(std::move(obj));
    }
    return root;
}

void save_annotations(const Dataset& dataset, const std::filesystem::path& path) {
    write_json_file(annotations_to_json(dataset), path);
}

DetectionSet parse_detections(const json& root, const Dataset& dataset,
                              const std::string& origin) {
    if (!root.is_array()) {
        throw DataError(at(origin, "top level must be an array of detections"));
    }
    DetectionSet set;
    for (std::size_t i = 0; i < root.size(); ++i) {
        const json& d = root[i];
        const std::string ctx = at(origin, "detections[" + std::to_string(i) + "]");
        Detection det;
        det.image_id = require_int(d, "image_id", ctx);
        det.category_id = require_int(d, "category_id", ctx);
        det.bbox = parse_bbox(d, ctx);
        det.score = require_number(d, "score", ctx);
        if (det.score < 0.0 || det.score > 1.0) {
            throw DataError(ctx + ": score " + std::to_string(det.score) +
                            " outside [0, 1]");
        }
        if (dataset.find_image(det.image_id) == nullptr) {
            throw DataError(ctx + ": dangling image_id " + std::to_string(det.image_id));
        }
        if (dataset.find_category(det.category_id) == nullptr) {
            throw DataError(ctx + ": dangling category_id " +
                            std::to_string(det.category_id));
        }
        if (!det.bbox.valid()) {
            throw DataError(ctx + ": bbox must have positive width and height");
        }
        set.detections.push_back(std::move(det));
    }
    std::stable_sort(set.detections.begin(), set.detections.end(),
                     [](const Detection& a, const Detection& b) {
                         if (a.image_id != b.image_id) {
                             return a.image_id < b.image_id;
                         }
                         return a.score > b.score;
                     });
    return set;
}

DetectionSet load_detections(const std::filesystem::path& path, const Dataset& dataset) {
    return parse_detections(load_json_file(path), dataset, path.string());
}

json detections_to_json(const DetectionSet& detections) {
    json arr = json::array();
    for (const Detection& d : detections.detections) {
        arr.push_back({{"image_id", d.image_id},
                       {"category_id", d.category_id},
                       {"bbox", bbox_to_json(d.bbox)},
                       {"score", d.score}});
    }
    return arr;
}

void save_detections(const DetectionSet& detections, const std::filesystem::path& path) {
    write_json_file(detections_to_json(detections), path);
}

geom::Mask decode_segmentation(const Annotation& annotation, const ImageRecord& image) {
    if (!annotation.segmentation) {
        throw DataError("annotation " + std::to_string(annotation.id) +
                        " has no segmentation");
    }
    const Segmentation& seg = *annotation.segmentation;
    if (const auto* polys = std::get_if<std::vector<Polygon>>(&seg)) {
        geom::Mask mask(image.width, image.height);
        for (int row = 0; row < image.height; ++row) {
            for (int col = 0; col < image.width; ++col) {
                const double px = col + 0.5;
                const double py = row + 0.5;
                for (const Polygon& poly : *polys) {
                    if (point_in_polygon(px, py, poly.xy)) {
                        mask.set(col, row);
                        break;
                    }
                }
            }
        }
        return mask;
    }

    const Rle& rle = std::get<Rle>(seg);
    if (rle.width != image.width || rle.height != image.height) {
        throw DataError("annotation " + std::to_string(annotation.id) +
                        ": RLE size does not match image " + std::to_string(image.id));
    }
    long total = 0;
    for (int c : rle.counts) {
        total += c;
    }
    const long expected = static_cast<long>(rle.width) * rle.height;
    if (total != expected) {
        throw DataError("annotation " + std::to_string(annotation.id) +
                        ": RLE counts sum to " + std::to_string(total) + ", expected " +
                        std::to_string(expected));
    }
    geom::Mask mask(image.width, image.height);
    long pos = 0;
    bool value = false; // runs start with zeros
    for (int run : rle.counts) {
        if (value) {
            for (long k = pos; k < pos + run; ++k) {
                // column-major linear index
                const int col = static_cast<int>(k / rle.height);
                const int row = static_cast<int>(k % rle.height);
                mask.set(col, row);
            }
        }
        pos += run;
        value = !value;
    }
    return mask;
}

} // namespace ctxdet::data

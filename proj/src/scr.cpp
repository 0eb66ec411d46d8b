#include "ctxdet/scr.hpp"

#include "ctxdet/errors.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <unordered_map>

namespace ctxdet::scr {

namespace {

using nlohmann::json;

std::string rule_label(const RelationRule& rule) {
    return "[" + rule.subject + ", " + rule.object + "]";
}

bool point_in_box(double px, double py, const geom::BBox& box) {
    return px >= box.x && px <= box.right() && py >= box.y && py <= box.bottom();
}

// Nearest-rank percentile of an ascending sample: element ceil(p * n),
// 1-based, clamped into the sample.
double nearest_rank(std::vector<double> values, double percentile) {
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    std::size_t rank = static_cast<std::size_t>(
        std::ceil(percentile * static_cast<double>(n)));
    rank = std::clamp<std::size_t>(rank, 1, n);
    return values[rank - 1];
}

eval::SubsetSpec occlusion_spec(OcclusionSubset subset) {
    return subset == OcclusionSubset::reasonable ? eval::kReasonable : eval::kHeavy;
}

DimExpr dim_expr_from_json(const json& v, const std::string& ctx) {
    if (!v.is_object()) {
        throw ConfigError(ctx + ": must be an object of named coefficients");
    }
    DimExpr e;
    for (const auto& [key, value] : v.items()) {
        if (!value.is_number()) {
            throw ConfigError(ctx + ": coefficient '" + key + "' must be a number");
        }
        const double c = value.get<double>();
        if (key == "const") {
            e.constant = c;
        } else if (key == "height_subject") {
            e.height_subject = c;
        } else if (key == "width_subject") {
            e.width_subject = c;
        } else if (key == "height_object") {
            e.height_object = c;
        } else if (key == "width_object") {
            e.width_object = c;
        } else {
            throw ConfigError(ctx + ": unknown key '" + key + "'");
        }
    }
    return e;
}

json dim_expr_to_json(const DimExpr& e) {
    json obj = json::object();
    if (e.constant != 0.0) {
        obj["const"] = e.constant;
    }
    if (e.height_subject != 0.0) {
        obj["height_subject"] = e.height_subject;
    }
    if (e.width_subject != 0.0) {
        obj["width_subject"] = e.width_subject;
    }
    if (e.height_object != 0.0) {
        obj["height_object"] = e.height_object;
    }
    if (e.width_object != 0.0) {
        obj["width_object"] = e.width_object;
    }
    return obj;
}

std::string lowercase(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

// Region used for relation checks: stuff annotations fall back to their
// box when no segmentation is present.
geom::Region annotation_region(const data::Annotation& ann, const data::Dataset& dataset,
                               bool is_stuff,
                               std::unordered_map<int, geom::Mask>& mask_cache) {
    if (is_stuff && ann.segmentation) {
        auto it = mask_cache.find(ann.id);
        if (it == mask_cache.end()) {
            const data::ImageRecord* image = dataset.find_image(ann.image_id);
            it = mask_cache.emplace(ann.id, data::decode_segmentation(ann, *image)).first;
        }
        return it->second;
    }
    return ann.bbox;
}

} // namespace

bool eval_topology(Topology t, const geom::Region& subject, const geom::Region& object,
                   std::optional<double> threshold) {
    switch (t) {
    case Topology::disjoint:
        return geom::intersection_area(subject, object) == 0.0;
    case Topology::touch:
        return geom::touches(subject, object);
    case Topology::overlap: {
        if (!threshold) {
            throw ConfigError("overlap topology requires an overlap threshold");
        }
        const double value = geom::ios(subject, object);
        return value >= *threshold && value < 1.0;
    }
    case Topology::within:
        return geom::contains(object, subject) || geom::contains(subject, object);
    case Topology::contains:
        return geom::contains(subject, object);
    case Topology::equal:
        return geom::contains(object, subject) && geom::contains(subject, object);
    }
    return false;
}

bool eval_pred(Predicate p, const geom::Region& subject, const geom::Region& object) {
    const auto reference = geom::intersection_centroid(subject, object)
                               .value_or(geom::centroid(object));
    const auto center = geom::centroid(subject);
    switch (p) {
    case Predicate::above:
        return reference.second < center.second;
    case Predicate::under:
        return reference.second > center.second;
    case Predicate::left_of:
        return reference.first < center.first;
    case Predicate::right_of:
        return reference.first > center.first;
    }
    return false;
}

geom::BBox search_area(const RelationRule& rule, const geom::BBox& subject,
                       const geom::BBox& candidate, const data::ImageRecord& image) {
    if (!rule.search_height || !rule.search_width) {
        throw ConfigError("rule " + rule_label(rule) + " has no search-area expressions");
    }
    const double h = rule.search_height->eval(subject, candidate);
    const double w = rule.search_width->eval(subject, candidate);
    if (h <= 0.0 || w <= 0.0) {
        throw ConfigError("rule " + rule_label(rule) +
                          ": search-area expression evaluated to a non-positive length");
    }

    geom::BBox area{subject.center_x() - w / 2.0, subject.center_y() - h / 2.0, w, h};
    if (rule.pred) {
        switch (*rule.pred) {
        case Predicate::under:
            area.y = subject.bottom() + candidate.h - h;
            break;
        case Predicate::above:
            area.y = subject.y - candidate.h;
            break;
        case Predicate::left_of:
            area.x = subject.x - candidate.w;
            break;
        case Predicate::right_of:
            area.x = subject.right() + candidate.w - w;
            break;
        }
    }
    return geom::clip(area, static_cast<double>(image.width),
                      static_cast<double>(image.height));
}

std::vector<RelationRule> derive_thresholds(const data::Dataset& dataset,
                                            std::vector<RelationRule> rules,
                                            double percentile) {
    std::unordered_map<int, geom::Mask> mask_cache;
    std::vector<std::string> unresolved;

    for (RelationRule& rule : rules) {
        if (rule.topology != Topology::overlap || rule.overlap_threshold) {
            continue;
        }
        const data::Category* subject_cat = dataset.find_category(rule.subject);
        const data::Category* object_cat = dataset.find_category(rule.object);
        if (subject_cat == nullptr || object_cat == nullptr) {
            throw ConfigError("rule " + rule_label(rule) +
                              " references a category missing from the dataset");
        }
        const bool subject_stuff = subject_cat->kind == data::CategoryKind::stuff;
        const bool object_stuff = object_cat->kind == data::CategoryKind::stuff;

        // Same-image subject/object annotation pairs.
        std::map<int, std::vector<const data::Annotation*>> subjects;
        std::map<int, std::vector<const data::Annotation*>> objects;
        for (const data::Annotation& ann : dataset.annotations) {
            if (ann.category_id == subject_cat->id) {
                if (!rule.occlusion ||
                    eval::in_subset(occlusion_spec(*rule.occlusion), ann.bbox.h,
                                    ann.visible_ratio)) {
                    subjects[ann.image_id].push_back(&ann);
                }
            }
            if (ann.category_id == object_cat->id) {
                objects[ann.image_id].push_back(&ann);
            }
        }

        std::vector<double> sample;
        for (const auto& [image_id, subject_anns] : subjects) {
            auto obj_it = objects.find(image_id);
            if (obj_it == objects.end()) {
                continue;
            }
            for (const data::Annotation* s : subject_anns) {
                const geom::Region s_region =
                    annotation_region(*s, dataset, subject_stuff, mask_cache);
                for (const data::Annotation* o : obj_it->second) {
                    if (s->id == o->id) {
                        continue;
                    }
                    const geom::Region o_region =
                        annotation_region(*o, dataset, object_stuff, mask_cache);
                    const double value = geom::ios(s_region, o_region);
                    if (value <= 0.0) {
                        continue;
                    }
                    if (rule.pred && !eval_pred(*rule.pred, s_region, o_region)) {
                        continue;
                    }
                    sample.push_back(value);
                }
            }
        }
        if (sample.empty()) {
            unresolved.push_back(rule_label(rule));
            continue;
        }
        rule.overlap_threshold = nearest_rank(std::move(sample), percentile);
    }

    if (!unresolved.empty()) {
        std::string msg = "unresolved overlap thresholds, no co-occurring ground-truth "
                          "pairs for:";
        for (const std::string& label : unresolved) {
            msg += " " + label;
        }
        throw DataError(msg);
    }
    return rules;
}

data::DetectionSet apply(const data::DetectionSet& detections,
                         const std::vector<RelationRule>& rules,
                         const data::Dataset& dataset, const ApplyParams& params) {
    if (params.candidate_floor > params.keep_threshold) {
        throw ConfigError("candidate_floor must not exceed keep_threshold");
    }
    struct RuleInfo {
        const RelationRule* rule;
        int subject_id;
        int object_id;
        bool object_stuff;
    };
    std::vector<RuleInfo> infos;
    for (const RelationRule& rule : rules) {
        const data::Category* subject_cat = dataset.find_category(rule.subject);
        const data::Category* object_cat = dataset.find_category(rule.object);
        if (subject_cat == nullptr || object_cat == nullptr) {
            throw ConfigError("rule " + rule_label(rule) +
                              " references a category missing from the dataset");
        }
        if (rule.topology == Topology::overlap && !rule.overlap_threshold) {
            throw ConfigError("rule " + rule_label(rule) +
                              " has an unresolved overlap threshold");
        }
        infos.push_back({&rule, subject_cat->id, object_cat->id,
                         object_cat->kind == data::CategoryKind::stuff});
    }

    const auto& dets = detections.detections;
    std::map<int, std::vector<int>> dets_by_image;
    for (std::size_t i = 0; i < dets.size(); ++i) {
        dets_by_image[dets[i].image_id].push_back(static_cast<int>(i));
    }

    std::set<int> selected;
    for (std::size_t i = 0; i < dets.size(); ++i) {
        if (dets[i].score >= params.keep_threshold) {
            selected.insert(static_cast<int>(i));
        }
    }

    std::unordered_map<int, geom::Mask> mask_cache;
    for (const RuleInfo& info : infos) {
        const RelationRule& rule = *info.rule;
        const bool has_search = rule.search_height && rule.search_width;

        for (const auto& [image_id, indices] : dets_by_image) {
            const data::ImageRecord* image = dataset.find_image(image_id);
            if (image == nullptr) {
                throw DataError("detections reference image " + std::to_string(image_id) +
                                " missing from the dataset");
            }
            if (!info.object_stuff) {
                // Retained subjects promote the best suppressed object.
                for (int s_idx : indices) {
                    const data::Detection& s = dets[s_idx];
                    if (s.category_id != info.subject_id ||
                        s.score < params.keep_threshold) {
                        continue;
                    }
                    int best = -1;
                    for (int c_idx : indices) {
                        const data::Detection& c = dets[c_idx];
                        if (c.category_id != info.object_id ||
                            c.score < params.candidate_floor ||
                            c.score >= params.keep_threshold) {
                            continue;
                        }
                        if (has_search) {
                            const geom::BBox zone = search_area(rule, s.bbox, c.bbox, *image);
                            if (!point_in_box(c.bbox.center_x(), c.bbox.center_y(), zone)) {
                                continue;
                            }
                        }
                        if (rule.pred && !eval_pred(*rule.pred, s.bbox, c.bbox)) {
                            continue;
                        }
                        if (!eval_topology(rule.topology, s.bbox, c.bbox,
                                           rule.overlap_threshold)) {
                            continue;
                        }
                        if (best < 0 || c.score > dets[best].score ||
                            (c.score == dets[best].score && c_idx < best)) {
                            best = c_idx;
                        }
                    }
                    if (best >= 0) {
                        selected.insert(best);
                    }
                }
            } else {
                // Stuff objects come from the dataset's masks. They carry no
                // score to promote, so the relation runs the other way: each
                // mask anchors promotion of the best suppressed subject
                // candidate related to it.
                for (const data::Annotation& ann : dataset.annotations) {
                    if (ann.image_id != image_id || ann.category_id != info.object_id) {
                        continue;
                    }
                    const geom::Region anchor =
                        annotation_region(ann, dataset, true, mask_cache);
                    int best = -1;
                    for (int c_idx : indices) {
                        const data::Detection& c = dets[c_idx];
                        if (c.category_id != info.subject_id ||
                            c.score < params.candidate_floor ||
                            c.score >= params.keep_threshold) {
                            continue;
                        }
                        if (rule.pred && !eval_pred(*rule.pred, c.bbox, anchor)) {
                            continue;
                        }
                        if (!eval_topology(rule.topology, c.bbox, anchor,
                                           rule.overlap_threshold)) {
                            continue;
                        }
                        if (best < 0 || c.score > dets[best].score ||
                            (c.score == dets[best].score && c_idx < best)) {
                            best = c_idx;
                        }
                    }
                    if (best >= 0) {
                        selected.insert(best);
                    }
                }
            }
        }
    }

    data::DetectionSet out;
    out.detections.reserve(selected.size());
    for (int idx : selected) {
        out.detections.push_back(dets[idx]);
    }
    return out;
}

std::vector<RelationRule> rules_from_json(const json& root, const std::string& origin) {
    if (!root.is_array()) {
        throw ConfigError(origin + ": rule file must be an array of rule objects");
    }
    std::vector<RelationRule> rules;
    for (std::size_t i = 0; i < root.size(); ++i) {
        const json& r = root[i];
        const std::string ctx = origin + ": rules[" + std::to_string(i) + "]";
        if (!r.is_object()) {
            throw ConfigError(ctx + ": must be an object");
        }
        RelationRule rule;
        bool has_t = false;
        for (const auto& [key, value] : r.items()) {
            if (key == "Subject") {
                rule.subject = value.get<std::string>();
            } else if (key == "Object") {
                rule.object = value.get<std::string>();
            } else if (key == "pred") {
                rule.pred = predicate_from_string(value.get<std::string>());
            } else if (key == "t") {
                rule.topology = topology_from_string(value.get<std::string>());
                has_t = true;
            } else if (key == "Overlap_threshold") {
                if (!value.is_number()) {
                    throw ConfigError(ctx + ": Overlap_threshold must be a number");
                }
                rule.overlap_threshold = value.get<double>();
                if (*rule.overlap_threshold < 0.0 || *rule.overlap_threshold > 1.0) {
                    throw ConfigError(ctx + ": Overlap_threshold must lie in [0, 1]");
                }
            } else if (key == "Search_height") {
                rule.search_height = dim_expr_from_json(value, ctx + ".Search_height");
            } else if (key == "Search_width") {
                rule.search_width = dim_expr_from_json(value, ctx + ".Search_width");
            } else if (key == "Occlusion") {
                const std::string name = lowercase(value.get<std::string>());
                if (name == "reasonable") {
                    rule.occlusion = OcclusionSubset::reasonable;
                } else if (name == "heavy") {
                    rule.occlusion = OcclusionSubset::heavy;
                } else {
                    throw ConfigError(ctx + ": Occlusion must be 'reasonable' or 'heavy'");
                }
            } else {
                throw ConfigError(ctx + ": unknown key '" + key + "'");
            }
        }
        if (rule.subject.empty() || rule.object.empty()) {
            throw ConfigError(ctx + ": Subject and Object are required");
        }
        if (!has_t) {
            throw ConfigError(ctx + ": topology 't' is required");
        }
        if (rule.search_height.has_value() != rule.search_width.has_value()) {
            throw ConfigError(ctx +
                              ": Search_height and Search_width must be given together");
        }
        rules.push_back(std::move(rule));
    }
    return rules;
}

std::vector<RelationRule> load_rules(const std::filesystem::path& path) {
    return rules_from_json(data::load_json_file(path), path.string());
}

json rules_to_json(const std::vector<RelationRule>& rules) {
    json arr = json::array();
    for (const RelationRule& rule : rules) {
        json obj{{"Subject", rule.subject}, {"Object", rule.object},
                 {"t", to_string(rule.topology)}};
        if (rule.pred) {
            obj["pred"] = to_string(*rule.pred);
        }
        if (rule.overlap_threshold) {
            obj["Overlap_threshold"] = *rule.overlap_threshold;
        }
        if (rule.search_height) {
            obj["Search_height"] = dim_expr_to_json(*rule.search_height);
        }
        if (rule.search_width) {
            obj["Search_width"] = dim_expr_to_json(*rule.search_width);
        }
        if (rule.occlusion) {
            obj["Occlusion"] =
                rule.occlusion == OcclusionSubset::reasonable ? "reasonable" : "heavy";
        }
        arr.push_back(std::move(obj));
    }
    return arr;
}

void save_rules(const std::vector<RelationRule>& rules,
                const std::filesystem::path& path) {
    data::write_json_file(rules_to_json(rules), path);
}

Topology topology_from_string(const std::string& name) {
    if (name == "disjoint") {
        return Topology::disjoint;
    }
    if (name == "touch") {
        return Topology::touch;
    }
    if (name == "overlap") {
        return Topology::overlap;
    }
    if (name == "within") {
        return Topology::within;
    }
    if (name == "contains") {
        return Topology::contains;
    }
    if (name == "equal") {
        return Topology::equal;
    }
    throw ConfigError("unknown topology '" + name + "'");
}

std::string to_string(Topology t) {
    switch (t) {
    case Topology::disjoint:
        return "disjoint";
    case Topology::touch:
        return "touch";
    case Topology::overlap:
        return "overlap";
    case Topology::within:
        return "within";
    case Topology::contains:
        return "contains";
    case Topology::equal:
        return "equal";
    }
    return "overlap";
}

Predicate predicate_from_string(const std::string& name) {
    if (name == "above") {
        return Predicate::above;
    }
    if (name == "under") {
        return Predicate::under;
    }
    if (name == "left_of") {
        return Predicate::left_of;
    }
    if (name == "right_of") {
        return Predicate::right_of;
    }
    throw ConfigError("unknown predicate '" + name + "'");
}

std::string to_string(Predicate p) {
    switch (p) {
    case Predicate::above:
        return "above";
    case Predicate::under:
        return "under";
    case Predicate::left_of:
        return "left_of";
    case Predicate::right_of:
        return "right_of";
    }
    return "under";
}

} // namespace ctxdet::scr

#include "ctxdet/synth.hpp"

#include "ctxdet/errors.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>
#include <unordered_map>

namespace ctxdet::synth {

namespace {

using nlohmann::json;

constexpr int kPlacementRetries = 200;

std::array<double, 2> range_from_json(const json& v, const std::string& ctx) {
    if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number()) {
        throw ConfigError(ctx + ": expected [lo, hi]");
    }
    std::array<double, 2> r{v[0].get<double>(), v[1].get<double>()};
    if (r[0] > r[1]) {
        throw ConfigError(ctx + ": lo must not exceed hi");
    }
    return r;
}

double draw(std::mt19937_64& rng, const std::array<double, 2>& range) {
    std::uniform_real_distribution<double> u(range[0], range[1]);
    return u(rng);
}

// Extra image margin a relation may need around its subject, so that
// subjects are placed with enough headroom for their objects.
struct Margins {
    double left = 0.0;
    double right = 0.0;
    double top = 0.0;
    double bottom = 0.0;
};

Margins subject_margins(const SceneSpec& spec, const std::string& category) {
    Margins m;
    for (const RelationTemplate& rel : spec.relations) {
        if (rel.subject != category) {
            continue;
        }
        const double max_w = rel.width[1];
        const double max_h = rel.height[1];
        const scr::Predicate pred = rel.pred.value_or(scr::Predicate::under);
        switch (pred) {
        case scr::Predicate::under:
            m.bottom = std::max(m.bottom, max_h);
            m.left = std::max(m.left, max_w / 2.0);
            m.right = std::max(m.right, max_w / 2.0);
            break;
        case scr::Predicate::above:
            m.top = std::max(m.top, max_h);
            m.left = std::max(m.left, max_w / 2.0);
            m.right = std::max(m.right, max_w / 2.0);
            break;
        case scr::Predicate::left_of:
            m.left = std::max(m.left, max_w);
            m.top = std::max(m.top, max_h / 2.0);
            m.bottom = std::max(m.bottom, max_h / 2.0);
            break;
        case scr::Predicate::right_of:
            m.right = std::max(m.right, max_w);
            m.top = std::max(m.top, max_h / 2.0);
            m.bottom = std::max(m.bottom, max_h / 2.0);
            break;
        }
    }
    return m;
}

// Solve the object box realizing ios(subject, object) == target for the
// given predicate direction. Returns nullopt when the drawn sizes cannot
// reach the target.
std::optional<geom::BBox> place_related(const geom::BBox& s, double w_o, double h_o,
                                        double target, scr::Predicate pred) {
    const double subject_area = s.area();
    switch (pred) {
    case scr::Predicate::under:
    case scr::Predicate::above: {
        const double overlap_w = std::min(w_o, s.w);
        const double overlap_h = target * subject_area / overlap_w;
        if (overlap_h >= std::min(h_o, s.h)) {
            return std::nullopt;
        }
        const double x = s.center_x() - w_o / 2.0;
        const double y = pred == scr::Predicate::under ? s.bottom() - overlap_h
                                                       : s.y + overlap_h - h_o;
        return geom::BBox{x, y, w_o, h_o};
    }
    case scr::Predicate::left_of:
    case scr::Predicate::right_of: {
        const double overlap_h = std::min(h_o, s.h);
        const double overlap_w = target * subject_area / overlap_h;
        if (overlap_w >= std::min(w_o, s.w)) {
            return std::nullopt;
        }
        const double y = s.center_y() - h_o / 2.0;
        const double x = pred == scr::Predicate::left_of ? s.x + overlap_w - w_o
                                                         : s.right() - overlap_w;
        return geom::BBox{x, y, w_o, h_o};
    }
    }
    return std::nullopt;
}

bool inside_image(const geom::BBox& b, double width, double height) {
    return b.x >= 0.0 && b.y >= 0.0 && b.right() <= width && b.bottom() <= height;
}

// ---- oracle helpers: rule semantics re-derived from geometry only ----

bool oracle_topology(const scr::RelationRule& rule, const geom::Region& s,
                     const geom::Region& o) {
    const double area_s = geom::area(s);
    const double area_o = geom::area(o);
    const double inter = geom::intersection_area(s, o);
    switch (rule.topology) {
    case scr::Topology::disjoint:
        return inter == 0.0;
    case scr::Topology::touch:
        return geom::touches(s, o);
    case scr::Topology::overlap: {
        const double value = std::clamp(inter / area_s, 0.0, 1.0);
        return value >= *rule.overlap_threshold && value < 1.0;
    }
    case scr::Topology::within:
        return inter >= area_s * (1.0 - 1e-6) || inter >= area_o * (1.0 - 1e-6);
    case scr::Topology::contains:
        return inter >= area_o * (1.0 - 1e-6);
    case scr::Topology::equal:
        return inter >= area_s * (1.0 - 1e-6) && inter >= area_o * (1.0 - 1e-6);
    }
    return false;
}

bool oracle_pred(scr::Predicate pred, const geom::Region& s, const geom::Region& o) {
    const auto ref = geom::intersection_centroid(s, o).value_or(geom::centroid(o));
    const auto center = geom::centroid(s);
    switch (pred) {
    case scr::Predicate::above:
        return ref.second < center.second;
    case scr::Predicate::under:
        return ref.second > center.second;
    case scr::Predicate::left_of:
        return ref.first < center.first;
    case scr::Predicate::right_of:
        return ref.first > center.first;
    }
    return false;
}

bool oracle_in_search_area(const scr::RelationRule& rule, const geom::BBox& s,
                           const geom::BBox& c, const data::ImageRecord& image) {
    const double h = rule.search_height->eval(s, c);
    const double w = rule.search_width->eval(s, c);
    if (h <= 0.0 || w <= 0.0) {
        throw ConfigError("rule [" + rule.subject + ", " + rule.object +
                          "]: search-area expression evaluated to a non-positive length");
    }
    double x0 = s.center_x() - w / 2.0;
    double y0 = s.center_y() - h / 2.0;
    if (rule.pred) {
        switch (*rule.pred) {
        case scr::Predicate::under:
            y0 = s.bottom() + c.h - h;
            break;
        case scr::Predicate::above:
            y0 = s.y - c.h;
            break;
        case scr::Predicate::left_of:
            x0 = s.x - c.w;
            break;
        case scr::Predicate::right_of:
            x0 = s.right() + c.w - w;
            break;
        }
    }
    const double lx = std::max(x0, 0.0);
    const double ly = std::max(y0, 0.0);
    const double hx = std::min(x0 + w, static_cast<double>(image.width));
    const double hy = std::min(y0 + h, static_cast<double>(image.height));
    const double cx = c.center_x();
    const double cy = c.center_y();
    return cx >= lx && cx <= hx && cy >= ly && cy <= hy;
}

} // namespace

GeneratedScene generate(const SceneSpec& spec) {
    if (spec.num_images <= 0 || spec.image_width <= 0 || spec.image_height <= 0) {
        throw ConfigError("scene spec needs positive image count and dimensions");
    }
    const double W = static_cast<double>(spec.image_width);
    const double H = static_cast<double>(spec.image_height);

    GeneratedScene scene;

    // Category ids in first-appearance order across the templates.
    std::vector<std::string> names;
    auto add_category = [&](const std::string& name) {
        if (std::find(names.begin(), names.end(), name) == names.end()) {
            names.push_back(name);
        }
    };
    for (const ObjectTemplate& t : spec.objects) {
        add_category(t.category);
    }
    for (const RelationTemplate& t : spec.relations) {
        add_category(t.subject);
        add_category(t.object);
    }
    std::unordered_map<std::string, int> category_id;
    for (std::size_t i = 0; i < names.size(); ++i) {
        const int id = static_cast<int>(i) + 1;
        scene.dataset.categories.push_back({id, names[i], data::CategoryKind::thing});
        category_id[names[i]] = id;
    }

    std::mt19937_64 rng(spec.seed);
    std::vector<double> intended_scores; // parallel to annotations
    int next_ann_id = 1;

    for (int img = 1; img <= spec.num_images; ++img) {
        scene.dataset.images.push_back(
            {img, spec.image_width, spec.image_height,
             "synth_" + std::to_string(img) + ".png"});

        std::vector<std::size_t> placed_this_image;
        for (const ObjectTemplate& t : spec.objects) {
            const Margins m = subject_margins(spec, t.category);
            for (int k = 0; k < t.count; ++k) {
                const double w = draw(rng, t.width);
                const double h = draw(rng, t.height);
                const double x_lo = m.left;
                const double x_hi = W - m.right - w;
                const double y_lo = m.top;
                const double y_hi = H - m.bottom - h;
                if (x_hi < x_lo || y_hi < y_lo) {
                    throw StageError("cannot place '" + t.category +
                                     "' inside the image with relation margins");
                }
                const double x = draw(rng, {x_lo, x_hi});
                const double y = draw(rng, {y_lo, y_hi});
                data::Annotation ann;
                ann.id = next_ann_id++;
                ann.image_id = img;
                ann.category_id = category_id[t.category];
                ann.bbox = geom::BBox{x, y, w, h};
                placed_this_image.push_back(scene.dataset.annotations.size());
                scene.dataset.annotations.push_back(std::move(ann));
                intended_scores.push_back(draw(rng, t.score));
            }
        }

        for (const RelationTemplate& rel : spec.relations) {
            const int subj_id = category_id[rel.subject];
            const scr::Predicate pred = rel.pred.value_or(scr::Predicate::under);
            const std::vector<std::size_t> anchors = placed_this_image;
            for (std::size_t ann_idx : anchors) {
                const data::Annotation& subject = scene.dataset.annotations[ann_idx];
                if (subject.category_id != subj_id) {
                    continue;
                }
                std::optional<geom::BBox> placed;
                for (int attempt = 0; attempt < kPlacementRetries && !placed; ++attempt) {
                    const double w_o = draw(rng, rel.width);
                    const double h_o = draw(rng, rel.height);
                    const double target = draw(rng, rel.target_ios);
                    auto candidate = place_related(subject.bbox, w_o, h_o, target, pred);
                    if (candidate && inside_image(*candidate, W, H)) {
                        placed = candidate;
                    }
                }
                if (!placed) {
                    throw StageError("relation [" + rel.subject + ", " + rel.object +
                                     "] placement infeasible after " +
                                     std::to_string(kPlacementRetries) + " retries");
                }
                data::Annotation obj;
                obj.id = next_ann_id++;
                obj.image_id = img;
                obj.category_id = category_id[rel.object];
                obj.bbox = *placed;
                placed_this_image.push_back(scene.dataset.annotations.size());
                scene.dataset.annotations.push_back(std::move(obj));

                std::uniform_real_distribution<double> coin(0.0, 1.0);
                const bool suppressed = coin(rng) < rel.suppress_prob;
                intended_scores.push_back(
                    draw(rng, suppressed ? rel.suppressed_score : rel.score));
            }
        }
    }

    // Detector simulation over the ground truth.
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (std::size_t i = 0; i < scene.dataset.annotations.size(); ++i) {
        const data::Annotation& ann = scene.dataset.annotations[i];
        const double drop_roll = coin(rng);
        double jx0 = 0.0, jy0 = 0.0, jx1 = 0.0, jy1 = 0.0, noise = 0.0;
        if (spec.noise.jitter_px > 0.0) {
            std::uniform_real_distribution<double> jit(-spec.noise.jitter_px,
                                                       spec.noise.jitter_px);
            jx0 = jit(rng);
            jy0 = jit(rng);
            jx1 = jit(rng);
            jy1 = jit(rng);
        }
        if (spec.noise.score_noise_sd > 0.0) {
            noise = gauss(rng) * spec.noise.score_noise_sd;
        }
        if (drop_roll < spec.noise.drop_prob) {
            continue;
        }
        double x0 = ann.bbox.x + jx0;
        double y0 = ann.bbox.y + jy0;
        double x1 = ann.bbox.right() + jx1;
        double y1 = ann.bbox.bottom() + jy1;
        if (x1 - x0 < 1.0) {
            x1 = x0 + 1.0;
        }
        if (y1 - y0 < 1.0) {
            y1 = y0 + 1.0;
        }
        const geom::BBox jittered =
            geom::clip(geom::BBox{x0, y0, x1 - x0, y1 - y0}, W, H);
        if (!jittered.valid()) {
            continue;
        }
        data::Detection det;
        det.image_id = ann.image_id;
        det.category_id = ann.category_id;
        det.bbox = jittered;
        det.score = std::clamp(intended_scores[i] + noise, 0.0, 1.0);
        scene.detections.detections.push_back(std::move(det));
    }
    std::stable_sort(scene.detections.detections.begin(),
                     scene.detections.detections.end(),
                     [](const data::Detection& a, const data::Detection& b) {
                         if (a.image_id != b.image_id) {
                             return a.image_id < b.image_id;
                         }
                         return a.score > b.score;
                     });
    return scene;
}

data::DetectionSet oracle_scr(const data::DetectionSet& detections,
                              const std::vector<scr::RelationRule>& rules,
                              const data::Dataset& dataset,
                              const scr::ApplyParams& params) {
    if (params.candidate_floor > params.keep_threshold) {
        throw ConfigError("candidate_floor must not exceed keep_threshold");
    }
    const auto& dets = detections.detections;
    std::set<int> selected;
    for (std::size_t i = 0; i < dets.size(); ++i) {
        if (dets[i].score >= params.keep_threshold) {
            selected.insert(static_cast<int>(i));
        }
    }

    for (const scr::RelationRule& rule : rules) {
        const data::Category* subject_cat = dataset.find_category(rule.subject);
        const data::Category* object_cat = dataset.find_category(rule.object);
        if (subject_cat == nullptr || object_cat == nullptr) {
            throw ConfigError("rule [" + rule.subject + ", " + rule.object +
                              "] references a category missing from the dataset");
        }
        if (rule.topology == scr::Topology::overlap && !rule.overlap_threshold) {
            throw ConfigError("rule [" + rule.subject + ", " + rule.object +
                              "] has an unresolved overlap threshold");
        }

        if (object_cat->kind != data::CategoryKind::stuff) {
            for (std::size_t s_idx = 0; s_idx < dets.size(); ++s_idx) {
                const data::Detection& s = dets[s_idx];
                if (s.category_id != subject_cat->id || s.score < params.keep_threshold) {
                    continue;
                }
                const data::ImageRecord* image = dataset.find_image(s.image_id);
                if (image == nullptr) {
                    throw DataError("detections reference image " +
                                    std::to_string(s.image_id) +
                                    " missing from the dataset");
                }
                int best = -1;
                for (std::size_t c_idx = 0; c_idx < dets.size(); ++c_idx) {
                    const data::Detection& c = dets[c_idx];
                    if (c.image_id != s.image_id || c.category_id != object_cat->id ||
                        c.score < params.candidate_floor ||
                        c.score >= params.keep_threshold) {
                        continue;
                    }
                    if (rule.search_height && rule.search_width &&
                        !oracle_in_search_area(rule, s.bbox, c.bbox, *image)) {
                        continue;
                    }
                    if (rule.pred && !oracle_pred(*rule.pred, s.bbox, c.bbox)) {
                        continue;
                    }
                    if (!oracle_topology(rule, s.bbox, c.bbox)) {
                        continue;
                    }
                    if (best < 0 || c.score > dets[best].score) {
                        best = static_cast<int>(c_idx);
                    }
                }
                if (best >= 0) {
                    selected.insert(best);
                }
            }
        } else {
            for (const data::Annotation& ann : dataset.annotations) {
                if (ann.category_id != object_cat->id) {
                    continue;
                }
                geom::Region anchor = ann.bbox;
                if (ann.segmentation) {
                    const data::ImageRecord* image = dataset.find_image(ann.image_id);
                    anchor = data::decode_segmentation(ann, *image);
                }
                int best = -1;
                for (std::size_t c_idx = 0; c_idx < dets.size(); ++c_idx) {
                    const data::Detection& c = dets[c_idx];
                    if (c.image_id != ann.image_id ||
                        c.category_id != subject_cat->id ||
                        c.score < params.candidate_floor ||
                        c.score >= params.keep_threshold) {
                        continue;
                    }
                    if (rule.pred && !oracle_pred(*rule.pred, c.bbox, anchor)) {
                        continue;
                    }
                    if (!oracle_topology(rule, c.bbox, anchor)) {
                        continue;
                    }
                    if (best < 0 || c.score > dets[best].score) {
                        best = static_cast<int>(c_idx);
                    }
                }
                if (best >= 0) {
                    selected.insert(best);
                }
            }
        }
    }

    data::DetectionSet out;
    for (int idx : selected) {
        out.detections.push_back(dets[idx]);
    }
    return out;
}

SceneSpec spec_from_json(const json& root, const std::string& origin) {
    if (!root.is_object()) {
        throw ConfigError(origin + ": scene spec must be an object");
    }
    SceneSpec spec;
    for (const auto& [key, value] : root.items()) {
        if (key == "seed") {
            spec.seed = value.get<std::uint64_t>();
        } else if (key == "num_images") {
            spec.num_images = value.get<int>();
        } else if (key == "image_width") {
            spec.image_width = value.get<int>();
        } else if (key == "image_height") {
            spec.image_height = value.get<int>();
        } else if (key == "objects") {
            for (std::size_t i = 0; i < value.size(); ++i) {
                const json& o = value[i];
                const std::string ctx = origin + ": objects[" + std::to_string(i) + "]";
                ObjectTemplate t;
                for (const auto& [k, v] : o.items()) {
                    if (k == "category") {
                        t.category = v.get<std::string>();
                    } else if (k == "count") {
                        t.count = v.get<int>();
                    } else if (k == "width") {
                        t.width = range_from_json(v, ctx + ".width");
                    } else if (k == "height") {
                        t.height = range_from_json(v, ctx + ".height");
                    } else if (k == "score") {
                        t.score = range_from_json(v, ctx + ".score");
                    } else {
                        throw ConfigError(ctx + ": unknown key '" + k + "'");
                    }
                }
                if (t.category.empty()) {
                    throw ConfigError(ctx + ": category is required");
                }
                spec.objects.push_back(std::move(t));
            }
        } else if (key == "relations") {
            for (std::size_t i = 0; i < value.size(); ++i) {
                const json& o = value[i];
                const std::string ctx = origin + ": relations[" + std::to_string(i) + "]";
                RelationTemplate t;
                for (const auto& [k, v] : o.items()) {
                    if (k == "subject") {
                        t.subject = v.get<std::string>();
                    } else if (k == "object") {
                        t.object = v.get<std::string>();
                    } else if (k == "pred") {
                        t.pred = scr::predicate_from_string(v.get<std::string>());
                    } else if (k == "target_ios") {
                        t.target_ios = range_from_json(v, ctx + ".target_ios");
                    } else if (k == "width") {
                        t.width = range_from_json(v, ctx + ".width");
                    } else if (k == "height") {
                        t.height = range_from_json(v, ctx + ".height");
                    } else if (k == "score") {
                        t.score = range_from_json(v, ctx + ".score");
                    } else if (k == "suppressed_score") {
                        t.suppressed_score = range_from_json(v, ctx + ".suppressed_score");
                    } else if (k == "suppress_prob") {
                        t.suppress_prob = v.get<double>();
                    } else {
                        throw ConfigError(ctx + ": unknown key '" + k + "'");
                    }
                }
                if (t.subject.empty() || t.object.empty()) {
                    throw ConfigError(ctx + ": subject and object are required");
                }
                spec.relations.push_back(std::move(t));
            }
        } else if (key == "noise") {
            for (const auto& [k, v] : value.items()) {
                if (k == "drop_prob") {
                    spec.noise.drop_prob = v.get<double>();
                } else if (k == "score_noise_sd") {
                    spec.noise.score_noise_sd = v.get<double>();
                } else if (k == "jitter_px") {
                    spec.noise.jitter_px = v.get<double>();
                } else {
                    throw ConfigError(origin + ": noise: unknown key '" + k + "'");
                }
            }
        } else {
            throw ConfigError(origin + ": unknown key '" + key + "'");
        }
    }
    return spec;
}

SceneSpec load_spec(const std::filesystem::path& path) {
    return spec_from_json(data::load_json_file(path), path.string());
}

} // namespace ctxdet::synth

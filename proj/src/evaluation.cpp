#include "ctxdet/evaluation.hpp"

#include "ctxdet/errors.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <unordered_map>

namespace ctxdet::eval {

namespace {

using nlohmann::json;

// One scoring unit: the original annotation plus any LCR twins.
struct GtGroup {
    std::vector<const data::Annotation*> members;
    bool ignore = false;
    bool consumed = false;
};

struct ImageCategoryKey {
    int image_id;
    int category_id;
    bool operator<(const ImageCategoryKey& o) const {
        return image_id != o.image_id ? image_id < o.image_id
                                      : category_id < o.category_id;
    }
};

} // namespace

bool in_subset(const SubsetSpec& subset, double height,
               std::optional<double> visible_ratio) {
    const double v = visible_ratio.value_or(1.0);
    return height >= subset.min_height && v >= subset.vis_lo && v <= subset.vis_hi;
}

SubsetSpec subset_from_name(const std::string& name) {
    if (name == "reasonable") {
        return kReasonable;
    }
    if (name == "heavy") {
        return kHeavy;
    }
    if (name == "all") {
        return kAll;
    }
    throw ConfigError("subset must be 'reasonable', 'heavy' or 'all', got '" + name + "'");
}

MatchLog match(const data::Dataset& dataset, const data::DetectionSet& detections,
               double iou_threshold, const std::optional<SubsetSpec>& subset) {
    // Assemble LCR groups keyed by the original annotation id.
    std::unordered_map<int, const data::Annotation*> ann_by_id;
    for (const data::Annotation& a : dataset.annotations) {
        ann_by_id[a.id] = &a;
    }
    std::map<ImageCategoryKey, std::vector<GtGroup>> groups;
    std::unordered_map<int, GtGroup*> group_by_source;
    for (const data::Annotation& a : dataset.annotations) {
        if (a.lcr_source_id) {
            continue;
        }
        GtGroup g;
        g.members.push_back(&a);
        g.ignore = a.ignore;
        if (subset && !in_subset(*subset, a.bbox.h, a.visible_ratio)) {
            g.ignore = true;
        }
        auto& vec = groups[{a.image_id, a.category_id}];
        vec.push_back(std::move(g));
    }
    for (auto& [key, vec] : groups) {
        (void)key;
        for (GtGroup& g : vec) {
            group_by_source[g.members.front()->id] = &g;
        }
    }
    for (const data::Annotation& a : dataset.annotations) {
        if (!a.lcr_source_id) {
            continue;
        }
        auto it = group_by_source.find(*a.lcr_source_id);
        if (it != group_by_source.end()) {
            it->second->members.push_back(&a);
        }
    }

    // Detections grouped per (image, category), descending score with det
    // index as the deterministic tie-break.
    std::map<ImageCategoryKey, std::vector<int>> dets_by_key;
    for (std::size_t i = 0; i < detections.detections.size(); ++i) {
        const data::Detection& d = detections.detections[i];
        dets_by_key[{d.image_id, d.category_id}].push_back(static_cast<int>(i));
    }

    std::map<int, CategoryLog> logs;
    for (const data::Category& c : dataset.categories) {
        CategoryLog log;
        log.category_id = c.id;
        log.category_name = c.name;
        logs[c.id] = std::move(log);
    }
    for (auto& [key, vec] : groups) {
        for (const GtGroup& g : vec) {
            if (!g.ignore) {
                logs[key.category_id].num_gt += 1;
            }
        }
    }

    for (auto& [key, det_indices] : dets_by_key) {
        std::stable_sort(det_indices.begin(), det_indices.end(), [&](int a, int b) {
            return detections.detections[a].score > detections.detections[b].score;
        });
        auto groups_it = groups.find(key);
        std::vector<GtGroup>* gt = groups_it == groups.end() ? nullptr : &groups_it->second;

        for (int det_index : det_indices) {
            const data::Detection& det = detections.detections[det_index];
            DetRecord rec;
            rec.image_id = det.image_id;
            rec.det_index = det_index;
            rec.score = det.score;

            GtGroup* best_open = nullptr;
            double best_open_iou = 0.0;
            GtGroup* best_closed = nullptr;
            double best_closed_iou = 0.0;
            GtGroup* best_ignore = nullptr;
            double best_ignore_iou = 0.0;
            if (gt != nullptr) {
                for (GtGroup& g : *gt) {
                    double overlap = 0.0;
                    for (const data::Annotation* m : g.members) {
                        overlap = std::max(overlap, geom::iou(det.bbox, m->bbox));
                    }
                    if (g.ignore) {
                        if (overlap > best_ignore_iou) {
                            best_ignore_iou = overlap;
                            best_ignore = &g;
                        }
                    } else if (g.consumed) {
                        if (overlap > best_closed_iou) {
                            best_closed_iou = overlap;
                            best_closed = &g;
                        }
                    } else if (overlap > best_open_iou) {
                        best_open_iou = overlap;
                        best_open = &g;
                    }
                }
            }

            if (best_open != nullptr && best_open_iou >= iou_threshold) {
                best_open->consumed = true;
                rec.outcome = DetOutcome::tp;
            } else if (best_closed != nullptr && best_closed_iou >= iou_threshold &&
                       best_closed->members.size() > 1) {
                // Duplicate inside a dual-labeled group: dropped from scoring.
                rec.outcome = DetOutcome::duplicate;
            } else if (best_ignore != nullptr && best_ignore_iou >= iou_threshold) {
                rec.outcome = DetOutcome::ignored;
            } else {
                rec.outcome = DetOutcome::fp;
            }
            logs[key.category_id].records.push_back(rec);
        }
    }

    MatchLog out;
    out.num_images = dataset.images.size();
    for (auto& [id, log] : logs) {
        (void)id;
        std::stable_sort(log.records.begin(), log.records.end(),
                         [](const DetRecord& a, const DetRecord& b) {
                             if (a.score != b.score) {
                                 return a.score > b.score;
                             }
                             return a.det_index < b.det_index;
                         });
        out.categories.push_back(std::move(log));
    }
    return out;
}

std::optional<double> average_precision(const CategoryLog& log) {
    if (log.num_gt == 0) {
        return std::nullopt;
    }
    std::vector<double> precision;
    std::vector<double> recall;
    double tp = 0.0;
    double fp = 0.0;
    for (const DetRecord& rec : log.records) {
        if (rec.outcome == DetOutcome::tp) {
            tp += 1.0;
        } else if (rec.outcome == DetOutcome::fp) {
            fp += 1.0;
        } else {
            continue; // duplicates and ignored detections leave scoring
        }
        precision.push_back(tp / (tp + fp));
        recall.push_back(tp / static_cast<double>(log.num_gt));
    }
    if (precision.empty()) {
        return 0.0;
    }
    // Precision envelope, then the area under the stepwise PR curve.
    for (std::size_t i = precision.size() - 1; i > 0; --i) {
        precision[i - 1] = std::max(precision[i - 1], precision[i]);
    }
    double ap = 0.0;
    double prev_recall = 0.0;
    for (std::size_t i = 0; i < precision.size(); ++i) {
        ap += (recall[i] - prev_recall) * precision[i];
        prev_recall = recall[i];
    }
    return ap;
}

PrecisionRecall precision_recall(const CategoryLog& log, double score_threshold) {
    double tp = 0.0;
    double fp = 0.0;
    for (const DetRecord& rec : log.records) {
        if (rec.score < score_threshold) {
            continue;
        }
        if (rec.outcome == DetOutcome::tp) {
            tp += 1.0;
        } else if (rec.outcome == DetOutcome::fp) {
            fp += 1.0;
        }
    }
    PrecisionRecall pr;
    pr.precision = tp + fp > 0.0 ? tp / (tp + fp) : 0.0;
    pr.recall = log.num_gt > 0 ? tp / static_cast<double>(log.num_gt) : 0.0;
    return pr;
}

double log_avg_miss_rate(const MatchLog& log) {
    std::size_t num_gt = 0;
    std::vector<DetRecord> records;
    for (const CategoryLog& cat : log.categories) {
        num_gt += cat.num_gt;
        for (const DetRecord& rec : cat.records) {
            if (rec.outcome == DetOutcome::tp || rec.outcome == DetOutcome::fp) {
                records.push_back(rec);
            }
        }
    }
    if (num_gt == 0) {
        throw DataError("log_avg_miss_rate: no ground truth in the selected subset");
    }
    if (log.num_images == 0) {
        throw DataError("log_avg_miss_rate: no images");
    }
    std::stable_sort(records.begin(), records.end(),
                     [](const DetRecord& a, const DetRecord& b) {
                         if (a.score != b.score) {
                             return a.score > b.score;
                         }
                         return a.det_index < b.det_index;
                     });

    // Operating points after each detection, sweeping the score threshold.
    std::vector<double> fppi;
    std::vector<double> miss;
    double tp = 0.0;
    double fp = 0.0;
    for (const DetRecord& rec : records) {
        if (rec.outcome == DetOutcome::tp) {
            tp += 1.0;
        } else {
            fp += 1.0;
        }
        fppi.push_back(fp / static_cast<double>(log.num_images));
        miss.push_back(1.0 - tp / static_cast<double>(num_gt));
    }

    double log_sum = 0.0;
    const int kPoints = 9;
    for (int k = 0; k < kPoints; ++k) {
        const double ref = std::pow(10.0, -2.0 + 2.0 * k / (kPoints - 1));
        double value;
        if (fppi.empty() || fppi.front() > ref) {
            // Reference below the achieved FPPI range: extend with the
            // lowest achieved miss rate (miss 1.0 when nothing was detected).
            value = miss.empty() ? 1.0 : *std::min_element(miss.begin(), miss.end());
        } else {
            std::size_t best = 0;
            for (std::size_t i = 0; i < fppi.size(); ++i) {
                if (fppi[i] <= ref) {
                    best = i;
                }
            }
            value = miss[best];
        }
        log_sum += std::log(std::max(value, 1e-10));
    }
    return std::exp(log_sum / kPoints);
}

EvalReport evaluate(const data::Dataset& dataset, const data::DetectionSet& detections,
                    const EvalOptions& options) {
    EvalReport report;
    report.iou = options.iou;
    report.score_threshold = options.score_threshold;
    report.num_images = dataset.images.size();

    const MatchLog log = match(dataset, detections, options.iou, options.ap_subset);
    double ap_sum = 0.0;
    std::size_t ap_count = 0;
    for (const CategoryLog& cat : log.categories) {
        CategoryResult res;
        res.id = cat.category_id;
        res.name = cat.category_name;
        res.num_gt = cat.num_gt;
        const PrecisionRecall pr = precision_recall(cat, options.score_threshold);
        res.precision = pr.precision;
        res.recall = pr.recall;
        res.ap = average_precision(cat);
        if (res.ap) {
            ap_sum += *res.ap;
            ap_count += 1;
        }
        report.categories.push_back(std::move(res));
    }
    if (ap_count > 0) {
        report.map = ap_sum / static_cast<double>(ap_count);
    }

    for (const auto& [name, spec] : options.mr2_subsets) {
        const MatchLog subset_log = match(dataset, detections, options.iou, spec);
        report.mr2[name] = log_avg_miss_rate(subset_log);
    }
    return report;
}

json report_to_json(const EvalReport& report) {
    json root;
    root["schema_version"] = 1;
    root["iou_threshold"] = report.iou;
    root["score_threshold"] = report.score_threshold;
    root["num_images"] = report.num_images;
    json cats = json::array();
    for (const CategoryResult& c : report.categories) {
        json obj{{"id", c.id},
                 {"name", c.name},
                 {"num_gt", c.num_gt},
                 {"precision", c.precision},
                 {"recall", c.recall}};
        obj["ap"] = c.ap ? json(*c.ap) : json(nullptr);
        cats.push_back(std::move(obj));
    }
    root["categories"] = std::move(cats);
    root["map"] = report.map ? json(*report.map) : json(nullptr);
    json mr2 = json::object();
    for (const auto& [name, value] : report.mr2) {
        mr2[name] = value;
    }
    root["mr2"] = std::move(mr2);
    return root;
}

} // namespace ctxdet::eval

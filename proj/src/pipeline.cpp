#include "ctxdet/pipeline.hpp"

#include "ctxdet/errors.hpp"
#include "ctxdet/synth.hpp"

#include <chrono>
#include <cmath>

namespace ctxdet::pipeline {

namespace {

using nlohmann::json;

std::filesystem::path resolve(const std::string& raw,
                              const std::filesystem::path& base_dir) {
    std::filesystem::path p(raw);
    return p.is_absolute() ? p : base_dir / p;
}

void require_input(const std::filesystem::path& p, const std::string& ctx) {
    if (!std::filesystem::exists(p)) {
        throw ConfigError(ctx + ": path '" + p.string() + "' does not exist");
    }
}

lcr::LcrParams parse_lcr(const json& node, const std::string& ctx) {
    lcr::LcrParams params;
    bool has_standard = false;
    bool has_percentage = false;
    for (const auto& [key, value] : node.items()) {
        if (key == "Labeling_standard") {
            params.standard = lcr::standard_from_string(value.get<std::string>());
            has_standard = true;
        } else if (key == "Enlarge_percentage") {
            if (!value.is_number()) {
                throw ConfigError(ctx + ": Enlarge_percentage must be a number");
            }
            params.enlarge_percentage = value.get<double>();
            has_percentage = true;
        } else {
            throw ConfigError(ctx + ": unknown key '" + key + "'");
        }
    }
    if (!has_standard || !has_percentage) {
        throw ConfigError(ctx + ": Labeling_standard and Enlarge_percentage are required");
    }
    lcr::validate(params);
    return params;
}

ScfStage parse_scf(const json& node, const std::string& ctx,
                   const std::filesystem::path& base_dir, std::uint64_t seed) {
    ScfStage stage;
    stage.hyper.seed = seed;
    bool has_categories = false;
    bool has_embeddings = false;
    bool has_features = false;
    for (const auto& [key, value] : node.items()) {
        if (key == "Categories") {
            if (!value.is_array() || value.empty()) {
                throw ConfigError(ctx + ": Categories must be a non-empty array");
            }
            stage.categories = value.get<std::vector<std::string>>();
            has_categories = true;
        } else if (key == "Relation_descriptor") {
            stage.descriptor = scf::descriptor_from_json(value, ctx);
        } else if (key == "embeddings") {
            stage.embeddings_path = resolve(value.get<std::string>(), base_dir);
            has_embeddings = true;
        } else if (key == "features") {
            stage.features_path = resolve(value.get<std::string>(), base_dir);
            has_features = true;
        } else if (key == "hyper") {
            for (const auto& [hk, hv] : value.items()) {
                if (hk == "lr") {
                    stage.hyper.lr = hv.get<double>();
                } else if (hk == "momentum") {
                    stage.hyper.momentum = hv.get<double>();
                } else if (hk == "weight_decay") {
                    stage.hyper.weight_decay = hv.get<double>();
                } else if (hk == "epochs") {
                    stage.hyper.epochs = hv.get<int>();
                } else if (hk == "hidden_dim") {
                    stage.hyper.hidden_dim = hv.get<int>();
                } else if (hk == "leaky_slope") {
                    stage.hyper.leaky_slope = hv.get<double>();
                } else {
                    throw ConfigError(ctx + ".hyper: unknown key '" + hk + "'");
                }
            }
        } else {
            throw ConfigError(ctx + ": unknown key '" + key + "'");
        }
    }
    if (!has_categories || !has_embeddings || !has_features) {
        throw ConfigError(ctx + ": Categories, embeddings and features are required");
    }
    require_input(stage.embeddings_path, ctx + ".embeddings");
    require_input(stage.features_path, ctx + ".features");
    return stage;
}

ScrStage parse_scr(const json& node, const std::string& ctx,
                   const std::filesystem::path& base_dir) {
    ScrStage stage;
    for (const auto& [key, value] : node.items()) {
        if (key == "rules") {
            if (value.is_string()) {
                stage.rules_path = resolve(value.get<std::string>(), base_dir);
            } else if (value.is_array()) {
                stage.inline_rules = scr::rules_from_json(value, ctx + ".rules");
            } else {
                throw ConfigError(ctx + ": rules must be a path or an inline array");
            }
        } else if (key == "keep_threshold") {
            stage.apply.keep_threshold = value.get<double>();
        } else if (key == "candidate_floor") {
            stage.apply.candidate_floor = value.get<double>();
        } else if (key == "percentile") {
            stage.percentile = value.get<double>();
        } else {
            throw ConfigError(ctx + ": unknown key '" + key + "'");
        }
    }
    if (!stage.rules_path && !stage.inline_rules) {
        throw ConfigError(ctx + ": rules are required (path or inline array)");
    }
    if (stage.apply.candidate_floor > stage.apply.keep_threshold) {
        throw ConfigError(ctx + ": candidate_floor must not exceed keep_threshold");
    }
    if (stage.percentile <= 0.0 || stage.percentile >= 1.0) {
        throw ConfigError(ctx + ": percentile must lie in (0, 1)");
    }
    if (stage.rules_path) {
        require_input(*stage.rules_path, ctx + ".rules");
    }
    return stage;
}

EvalStage parse_eval(const json& node, const std::string& ctx) {
    EvalStage stage;
    for (const auto& [key, value] : node.items()) {
        if (key == "iou") {
            stage.iou = value.get<double>();
        } else if (key == "score_threshold") {
            stage.score_threshold = value.get<double>();
        } else if (key == "subsets") {
            if (!value.is_array()) {
                throw ConfigError(ctx + ": subsets must be an array of names");
            }
            for (const json& s : value) {
                const std::string name = s.get<std::string>();
                eval::subset_from_name(name); // validates
                stage.subsets.push_back(name);
            }
        } else {
            throw ConfigError(ctx + ": unknown key '" + key + "'");
        }
    }
    if (stage.iou <= 0.0 || stage.iou > 1.0) {
        throw ConfigError(ctx + ": iou must lie in (0, 1]");
    }
    return stage;
}

} // namespace

PipelineConfig parse_config_json(const json& root, const std::string& origin,
                                 const std::filesystem::path& base_dir) {
    if (!root.is_object()) {
        throw ConfigError(origin + ": config must be an object");
    }
    PipelineConfig config;
    if (root.contains("seed")) {
        config.seed = root["seed"].get<std::uint64_t>();
    }

    bool has_annotations = false;
    bool has_out = false;
    for (const auto& [key, value] : root.items()) {
        if (key == "seed") {
            continue;
        }
        if (key == "io") {
            for (const auto& [ik, iv] : value.items()) {
                if (ik == "annotations") {
                    config.annotations_path = resolve(iv.get<std::string>(), base_dir);
                    has_annotations = true;
                } else if (ik == "detections") {
                    config.detections_path = resolve(iv.get<std::string>(), base_dir);
                } else if (ik == "out_dir") {
                    config.out_dir = resolve(iv.get<std::string>(), base_dir);
                    has_out = true;
                } else {
                    throw ConfigError(origin + ": io: unknown key '" + ik + "'");
                }
            }
        } else if (key == "lcr") {
            config.lcr = parse_lcr(value, origin + ": lcr");
        } else if (key == "scf") {
            config.scf = parse_scf(value, origin + ": scf", base_dir, config.seed);
        } else if (key == "scr") {
            config.scr = parse_scr(value, origin + ": scr", base_dir);
        } else if (key == "eval") {
            config.eval = parse_eval(value, origin + ": eval");
        } else {
            throw ConfigError(origin + ": unknown key '" + key + "'");
        }
    }

    if (!config.lcr && !config.scf && !config.scr && !config.eval) {
        throw ConfigError(origin + ": no stage enabled (need lcr, scf, scr or eval)");
    }
    if (!has_annotations) {
        throw ConfigError(origin + ": io.annotations is required");
    }
    if (!has_out) {
        throw ConfigError(origin + ": io.out_dir is required");
    }
    require_input(config.annotations_path, origin + ": io.annotations");
    if (config.detections_path) {
        require_input(*config.detections_path, origin + ": io.detections");
    }
    if ((config.scr || config.eval) && !config.detections_path) {
        throw ConfigError(origin + ": scr and eval stages need io.detections");
    }
    return config;
}

PipelineConfig parse_config(const std::filesystem::path& path) {
    return parse_config_json(data::load_json_file(path), path.string(),
                             path.parent_path());
}

RunReport run_pipeline(const PipelineConfig& config) {
    namespace fs = std::filesystem;
    fs::create_directories(config.out_dir);

    RunReport report;
    report.seed = config.seed;

    data::Dataset dataset = data::load_annotations(config.annotations_path);
    std::optional<data::DetectionSet> detections;
    if (config.detections_path) {
        detections = data::load_detections(*config.detections_path, dataset);
    }

    auto run_stage = [&](const std::string& name, auto&& body) {
        StageReport stage;
        stage.name = name;
        const auto start = std::chrono::steady_clock::now();
        try {
            body(stage);
        } catch (const Error&) {
            throw;
        } catch (const std::exception& e) {
            throw StageError("stage " + name + " failed: " + e.what());
        }
        stage.seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
                .count();
        report.stages.push_back(std::move(stage));
    };

    if (config.lcr) {
        run_stage("lcr", [&](StageReport& stage) {
            dataset = lcr::transform_dataset(dataset, *config.lcr);
            const fs::path out = config.out_dir / "annotations_lcr.json";
            data::save_annotations(dataset, out);
            stage.artifacts.push_back(out.string());
            stage.warnings = dataset.warnings;
        });
    }

    if (config.scf) {
        run_stage("scf", [&](StageReport& stage) {
            const ScfStage& cfg = *config.scf;
            const scf::LabelEmbedding embeddings =
                scf::load_embeddings(cfg.embeddings_path, cfg.categories);
            const scf::ContextGraph graph =
                scf::build_graph(dataset, cfg.categories, cfg.descriptor);
            const fs::path graph_out = config.out_dir / "scf_graph.json";
            scf::save_graph(graph, graph_out);
            stage.artifacts.push_back(graph_out.string());

            const scf::RegionFeatures features = scf::load_features(cfg.features_path);
            const scf::FitResult fitted = scf::fit(graph, embeddings, features, cfg.hyper);
            const fs::path weights_out = config.out_dir / "scf_weights.json";
            scf::save_weights(fitted.weights, weights_out);
            stage.artifacts.push_back(weights_out.string());

            const Eigen::MatrixXd semantic_space =
                scf::gcn_forward(scf::normalize(graph), embeddings.vectors,
                                 fitted.weights);
            const Eigen::MatrixXd probabilities =
                scf::project(semantic_space, features.features);
            const fs::path probs_out = config.out_dir / "scf_probabilities.json";
            data::write_json_file(
                scf::probabilities_to_json(probabilities, cfg.categories), probs_out);
            stage.artifacts.push_back(probs_out.string());
        });
    }

    if (config.scr) {
        run_stage("scr", [&](StageReport& stage) {
            const ScrStage& cfg = *config.scr;
            std::vector<scr::RelationRule> rules =
                cfg.inline_rules ? *cfg.inline_rules : scr::load_rules(*cfg.rules_path);
            const bool needs_derivation =
                std::any_of(rules.begin(), rules.end(), [](const scr::RelationRule& r) {
                    return r.topology == scr::Topology::overlap && !r.overlap_threshold;
                });
            if (needs_derivation) {
                rules = scr::derive_thresholds(dataset, rules, cfg.percentile);
            }
            const fs::path rules_out = config.out_dir / "rules_resolved.json";
            scr::save_rules(rules, rules_out);
            stage.artifacts.push_back(rules_out.string());

            detections = scr::apply(*detections, rules, dataset, cfg.apply);
            const fs::path det_out = config.out_dir / "detections_scr.json";
            data::save_detections(*detections, det_out);
            stage.artifacts.push_back(det_out.string());
        });
    }

    if (config.eval) {
        run_stage("eval", [&](StageReport& stage) {
            const EvalStage& cfg = *config.eval;
            eval::EvalOptions options;
            options.iou = cfg.iou;
            options.score_threshold = cfg.score_threshold;
            for (const std::string& name : cfg.subsets) {
                options.mr2_subsets.emplace_back(name, eval::subset_from_name(name));
            }
            const eval::EvalReport result = eval::evaluate(dataset, *detections, options);
            const fs::path report_out = config.out_dir / "eval_report.json";
            data::write_json_file(eval::report_to_json(result), report_out);
            stage.artifacts.push_back(report_out.string());
        });
    }

    return report;
}

json report_to_json(const RunReport& report) {
    json root;
    root["schema_version"] = 1;
    root["seed"] = report.seed;
    json stages = json::array();
    for (const StageReport& s : report.stages) {
        stages.push_back({{"name", s.name},
                          {"seconds", s.seconds},
                          {"artifacts", s.artifacts},
                          {"warnings", s.warnings}});
    }
    root["stages"] = std::move(stages);
    return root;
}

} // namespace ctxdet::pipeline

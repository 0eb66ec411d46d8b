#include "ctxdet/dataset.hpp"
#include "ctxdet/errors.hpp"
#include "ctxdet/evaluation.hpp"
#include "ctxdet/lcr.hpp"
#include "ctxdet/pipeline.hpp"
#include "ctxdet/scf.hpp"
#include "ctxdet/scr.hpp"
#include "ctxdet/synth.hpp"

#include "CLI11.hpp"

#include <cstdint>
#include <iostream>
#include <string>

namespace {

using namespace ctxdet;

int run_lcr_transform(const std::string& annotations, const std::string& out,
                      const std::string& standard, double enlarge, bool verbose) {
    lcr::LcrParams params;
    params.standard = lcr::standard_from_string(standard);
    params.enlarge_percentage = enlarge;
    lcr::validate(params);

    const data::Dataset input = data::load_annotations(annotations);
    const data::Dataset output = lcr::transform_dataset(input, params);
    data::save_annotations(output, out);
    if (verbose) {
        std::cerr << "lcr-transform: " << input.annotations.size() << " -> "
                  << output.annotations.size() << " annotations\n";
    }
    return 0;
}

int run_synth(const std::string& spec_path, const std::string& out_ann,
              const std::string& out_det, bool verbose) {
    const synth::SceneSpec spec = synth::load_spec(spec_path);
    const synth::GeneratedScene scene = synth::generate(spec);
    data::save_annotations(scene.dataset, out_ann);
    data::save_detections(scene.detections, out_det);
    if (verbose) {
        std::cerr << "synth: " << scene.dataset.annotations.size() << " annotations, "
                  << scene.detections.detections.size() << " detections\n";
    }
    return 0;
}

std::vector<std::string> split_csv(const std::string& csv) {
    std::vector<std::string> out;
    std::string current;
    for (char c : csv) {
        if (c == ',') {
            if (!current.empty()) {
                out.push_back(current);
                current.clear();
            }
        } else {
            current += c;
        }
    }
    if (!current.empty()) {
        out.push_back(current);
    }
    return out;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Context pipeline toolkit for object-detection datasets"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    std::uint64_t seed = 0;
    bool seed_given = false;
    bool verbose = false;
    app.add_option("--config", config_path, "Pipeline config file (used by 'run')");
    app.add_option("--seed", seed, "Override the config seed")
        ->each([&](const std::string&) { seed_given = true; });
    app.add_flag("--verbose", verbose, "Print progress to stderr");

    // lcr-transform
    auto* lcr_cmd = app.add_subcommand("lcr-transform",
                                       "Enlarge qualifying small-object labels");
    std::string lcr_ann, lcr_out, lcr_standard;
    double lcr_enlarge = 0.0;
    lcr_cmd->add_option("--annotations", lcr_ann, "Annotation JSON")->required();
    lcr_cmd->add_option("--out", lcr_out, "Output annotation JSON")->required();
    lcr_cmd->add_option("--standard", lcr_standard, "Labeling standard: coco or sod")
        ->required();
    lcr_cmd->add_option("--enlarge", lcr_enlarge, "Enlarge percentage (e.g. 0.15)")
        ->required();

    // scf-build-graph
    auto* graph_cmd = app.add_subcommand("scf-build-graph",
                                         "Build the label co-occurrence graph");
    std::string g_ann, g_categories, g_descriptor = "conditional", g_out;
    double g_tau = 0.5;
    bool g_tau_given = false;
    graph_cmd->add_option("--annotations", g_ann, "Annotation JSON")->required();
    graph_cmd->add_option("--categories", g_categories, "Comma-separated category names")
        ->required();
    graph_cmd->add_option("--descriptor", g_descriptor,
                          "Graph descriptor: conditional or binary");
    graph_cmd->add_option("--tau", g_tau, "Binary descriptor threshold")
        ->each([&](const std::string&) { g_tau_given = true; });
    graph_cmd->add_option("--out", g_out, "Output graph JSON")->required();

    // scf-train
    auto* train_cmd = app.add_subcommand("scf-train",
                                         "Train the graph-convolution projection");
    std::string t_graph, t_embeddings, t_features, t_out;
    scf::FitHyper t_hyper;
    train_cmd->add_option("--graph", t_graph, "Graph JSON")->required();
    train_cmd->add_option("--embeddings", t_embeddings, "Embedding text file")->required();
    train_cmd->add_option("--features", t_features, "Region features JSON")->required();
    train_cmd->add_option("--out", t_out, "Output weights JSON")->required();
    train_cmd->add_option("--lr", t_hyper.lr, "Learning rate");
    train_cmd->add_option("--momentum", t_hyper.momentum, "SGD momentum");
    train_cmd->add_option("--weight-decay", t_hyper.weight_decay, "Weight decay");
    train_cmd->add_option("--epochs", t_hyper.epochs, "Training epochs");
    train_cmd->add_option("--hidden-dim", t_hyper.hidden_dim, "Hidden layer width");
    train_cmd->add_option("--leaky-slope", t_hyper.leaky_slope, "LeakyReLU slope");

    // scf-project
    auto* project_cmd = app.add_subcommand("scf-project",
                                           "Project region features into the semantic space");
    std::string p_graph, p_embeddings, p_weights, p_features, p_out;
    project_cmd->add_option("--graph", p_graph, "Graph JSON")->required();
    project_cmd->add_option("--embeddings", p_embeddings, "Embedding text file")
        ->required();
    project_cmd->add_option("--weights", p_weights, "Weights JSON")->required();
    project_cmd->add_option("--features", p_features, "Region features JSON")->required();
    project_cmd->add_option("--out", p_out, "Output probabilities JSON")->required();

    // scr-derive
    auto* derive_cmd = app.add_subcommand("scr-derive",
                                          "Derive missing overlap thresholds from ground truth");
    std::string d_ann, d_rules, d_out;
    double d_percentile = 0.05;
    derive_cmd->add_option("--annotations", d_ann, "Annotation JSON")->required();
    derive_cmd->add_option("--rules", d_rules, "Rule JSON")->required();
    derive_cmd->add_option("--out", d_out, "Output rule JSON")->required();
    derive_cmd->add_option("--percentile", d_percentile, "Nearest-rank percentile");

    // scr-apply
    auto* apply_cmd = app.add_subcommand("scr-apply",
                                         "Promote suppressed detections that satisfy the rules");
    std::string a_det, a_rules, a_masks, a_out;
    scr::ApplyParams a_params;
    apply_cmd->add_option("--detections", a_det, "Detection JSON")->required();
    apply_cmd->add_option("--rules", a_rules, "Rule JSON (thresholds resolved)")
        ->required();
    apply_cmd->add_option("--masks", a_masks, "Annotation JSON providing stuff masks")
        ->required();
    apply_cmd->add_option("--out", a_out, "Output detection JSON")->required();
    apply_cmd->add_option("--keep", a_params.keep_threshold, "Keep threshold");
    apply_cmd->add_option("--floor", a_params.candidate_floor, "Candidate floor");

    // evaluate
    auto* eval_cmd = app.add_subcommand("evaluate", "Score detections against ground truth");
    std::string e_ann, e_det, e_metric = "map", e_subset = "all", e_report;
    double e_iou = 0.5, e_score = 0.5;
    eval_cmd->add_option("--annotations", e_ann, "Annotation JSON")->required();
    eval_cmd->add_option("--detections", e_det, "Detection JSON")->required();
    eval_cmd->add_option("--metric", e_metric, "map or mr2");
    eval_cmd->add_option("--subset", e_subset, "reasonable, heavy or all");
    eval_cmd->add_option("--report", e_report, "Output report JSON")->required();
    eval_cmd->add_option("--iou", e_iou, "IoU matching threshold");
    eval_cmd->add_option("--score-threshold", e_score,
                         "Score cut for precision/recall reporting");

    // run
    auto* run_cmd = app.add_subcommand("run", "Run the configured pipeline stages");

    // synth
    auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic scene");
    std::string s_spec, s_out_ann, s_out_det;
    synth_cmd->add_option("--spec", s_spec, "Scene spec JSON")->required();
    synth_cmd->add_option("--out-ann", s_out_ann, "Output annotation JSON")->required();
    synth_cmd->add_option("--out-det", s_out_det, "Output detection JSON")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (lcr_cmd->parsed()) {
            return run_lcr_transform(lcr_ann, lcr_out, lcr_standard, lcr_enlarge, verbose);
        }
        if (graph_cmd->parsed()) {
            scf::GraphDescriptor descriptor;
            if (g_descriptor == "conditional") {
                descriptor.type = scf::GraphDescriptor::Type::conditional;
            } else if (g_descriptor == "binary") {
                descriptor.type = scf::GraphDescriptor::Type::binary;
                descriptor.tau = g_tau;
            } else {
                throw ConfigError("--descriptor must be 'conditional' or 'binary'");
            }
            if (g_tau_given && descriptor.type != scf::GraphDescriptor::Type::binary) {
                throw ConfigError("--tau only applies to the binary descriptor");
            }
            const data::Dataset dataset = data::load_annotations(g_ann);
            const scf::ContextGraph graph =
                scf::build_graph(dataset, split_csv(g_categories), descriptor);
            scf::save_graph(graph, g_out);
            return 0;
        }
        if (train_cmd->parsed()) {
            t_hyper.seed = seed;
            const scf::ContextGraph graph = scf::load_graph(t_graph);
            const scf::LabelEmbedding embeddings =
                scf::load_embeddings(t_embeddings, graph.categories);
            const scf::RegionFeatures features = scf::load_features(t_features);
            const scf::FitResult result = scf::fit(graph, embeddings, features, t_hyper);
            scf::save_weights(result.weights, t_out);
            if (verbose && !result.loss_trace.empty()) {
                std::cerr << "scf-train: loss " << result.loss_trace.front() << " -> "
                          << result.loss_trace.back() << " over "
                          << result.loss_trace.size() << " epochs\n";
            }
            return 0;
        }
        if (project_cmd->parsed()) {
            const scf::ContextGraph graph = scf::load_graph(p_graph);
            const scf::LabelEmbedding embeddings =
                scf::load_embeddings(p_embeddings, graph.categories);
            const scf::GcnWeights weights = scf::load_weights(p_weights);
            const scf::RegionFeatures features = scf::load_features(p_features);
            const Eigen::MatrixXd semantic_space =
                scf::gcn_forward(scf::normalize(graph), embeddings.vectors, weights);
            const Eigen::MatrixXd probabilities =
                scf::project(semantic_space, features.features);
            data::write_json_file(
                scf::probabilities_to_json(probabilities, graph.categories), p_out);
            return 0;
        }
        if (derive_cmd->parsed()) {
            const data::Dataset dataset = data::load_annotations(d_ann);
            std::vector<scr::RelationRule> rules = scr::load_rules(d_rules);
            rules = scr::derive_thresholds(dataset, std::move(rules), d_percentile);
            scr::save_rules(rules, d_out);
            return 0;
        }
        if (apply_cmd->parsed()) {
            const data::Dataset dataset = data::load_annotations(a_masks);
            const data::DetectionSet detections = data::load_detections(a_det, dataset);
            const std::vector<scr::RelationRule> rules = scr::load_rules(a_rules);
            const data::DetectionSet out = scr::apply(detections, rules, dataset, a_params);
            data::save_detections(out, a_out);
            if (verbose) {
                std::cerr << "scr-apply: " << detections.detections.size() << " -> "
                          << out.detections.size() << " detections\n";
            }
            return 0;
        }
        if (eval_cmd->parsed()) {
            const data::Dataset dataset = data::load_annotations(e_ann);
            const data::DetectionSet detections = data::load_detections(e_det, dataset);
            eval::EvalOptions options;
            options.iou = e_iou;
            options.score_threshold = e_score;
            if (e_metric == "map") {
                if (e_subset != "all") {
                    options.ap_subset = eval::subset_from_name(e_subset);
                }
            } else if (e_metric == "mr2") {
                options.mr2_subsets.emplace_back(e_subset,
                                                 eval::subset_from_name(e_subset));
            } else {
                throw ConfigError("--metric must be 'map' or 'mr2'");
            }
            const eval::EvalReport report = eval::evaluate(dataset, detections, options);
            data::write_json_file(eval::report_to_json(report), e_report);
            if (verbose && report.map) {
                std::cerr << "evaluate: mAP " << *report.map << "\n";
            }
            return 0;
        }
        if (run_cmd->parsed()) {
            if (config_path.empty()) {
                throw ConfigError("'run' needs --config <file>");
            }
            pipeline::PipelineConfig config = pipeline::parse_config(config_path);
            if (seed_given) {
                config.seed = seed;
                if (config.scf) {
                    config.scf->hyper.seed = seed;
                }
            }
            const pipeline::RunReport report = pipeline::run_pipeline(config);
            data::write_json_file(pipeline::report_to_json(report),
                                  config.out_dir / "run_report.json");
            if (verbose) {
                for (const pipeline::StageReport& s : report.stages) {
                    std::cerr << "stage " << s.name << ": " << s.seconds << "s, "
                              << s.artifacts.size() << " artifact(s)\n";
                }
            }
            return 0;
        }
        if (synth_cmd->parsed()) {
            return run_synth(s_spec, s_out_ann, s_out_det, verbose);
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const Error& e) {
        std::cerr << "stage failure: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "stage failure: " << e.what() << "\n";
        return 4;
    }
    return 0;
}

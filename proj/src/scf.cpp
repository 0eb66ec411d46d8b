#include "ctxdet/scf.hpp"

#include "ctxdet/errors.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <unordered_map>

namespace ctxdet::scf {

namespace {

using nlohmann::json;

std::string lowercase(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

std::vector<std::string> split_tokens(const std::string& name) {
    std::istringstream in(name);
    std::vector<std::string> tokens;
    std::string tok;
    while (in >> tok) {
        tokens.push_back(lowercase(tok));
    }
    return tokens;
}

Eigen::MatrixXd leaky_relu(const Eigen::MatrixXd& z, double slope) {
    return z.unaryExpr([slope](double v) { return v > 0.0 ? v : slope * v; });
}

// Derivative convention: 1 for z > 0, slope otherwise.
Eigen::MatrixXd leaky_relu_grad(const Eigen::MatrixXd& z, double slope) {
    return z.unaryExpr([slope](double v) { return v > 0.0 ? 1.0 : slope; });
}

Eigen::MatrixXd matrix_from_json(const json& rows, int expected_cols,
                                 const std::string& ctx) {
    if (!rows.is_array() || rows.empty()) {
        throw DataError(ctx + ": expected a non-empty array of rows");
    }
    const std::size_t n = rows.size();
    std::size_t cols = expected_cols > 0 ? static_cast<std::size_t>(expected_cols)
                                         : rows[0].size();
    Eigen::MatrixXd m(n, cols);
    for (std::size_t i = 0; i < n; ++i) {
        const json& row = rows[i];
        if (!row.is_array() || row.size() != cols) {
            throw DataError(ctx + ": row " + std::to_string(i) + " must have " +
                            std::to_string(cols) + " entries");
        }
        for (std::size_t j = 0; j < cols; ++j) {
            if (!row[j].is_number()) {
                throw DataError(ctx + ": entries must be numbers");
            }
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                row[j].get<double>();
        }
    }
    return m;
}

json matrix_to_json(const Eigen::MatrixXd& m) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            row.push_back(m(i, j));
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

} // namespace

GraphDescriptor descriptor_from_json(const json& v, const std::string& ctx) {
    GraphDescriptor d;
    if (v.is_string()) {
        const std::string name = v.get<std::string>();
        if (name == "conditional") {
            d.type = GraphDescriptor::Type::conditional;
            return d;
        }
        throw ConfigError(ctx + ": Relation_descriptor '" + name +
                          "' unknown (use \"conditional\" or {\"type\":\"binary\",\"tau\":...})");
    }
    if (v.is_object()) {
        const std::string type = v.value("type", "");
        if (type == "conditional") {
            d.type = GraphDescriptor::Type::conditional;
        } else if (type == "binary") {
            d.type = GraphDescriptor::Type::binary;
            if (!v.contains("tau") || !v["tau"].is_number()) {
                throw ConfigError(ctx + ": binary Relation_descriptor needs a numeric tau");
            }
            d.tau = v["tau"].get<double>();
        } else {
            throw ConfigError(ctx + ": Relation_descriptor type must be 'conditional' or 'binary'");
        }
        for (const auto& [key, value] : v.items()) {
            (void)value;
            if (key != "type" && key != "tau") {
                throw ConfigError(ctx + ": unknown key '" + key + "'");
            }
        }
        return d;
    }
    throw ConfigError(ctx + ": Relation_descriptor must be a string or an object");
}

json descriptor_to_json(const GraphDescriptor& d) {
    if (d.type == GraphDescriptor::Type::conditional) {
        return json{{"type", "conditional"}};
    }
    return json{{"type", "binary"}, {"tau", d.tau}};
}

LabelEmbedding parse_embeddings(std::istream& in,
                                const std::vector<std::string>& categories,
                                const std::string& origin) {
    std::unordered_map<std::string, std::vector<double>> vocab;
    std::string line;
    int line_no = 0;
    Eigen::Index dim = -1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        std::istringstream ls(line);
        std::string token;
        ls >> token;
        std::vector<double> values;
        double v = 0.0;
        while (ls >> v) {
            values.push_back(v);
        }
        if (!ls.eof()) {
            throw DataError(origin + ":" + std::to_string(line_no) +
                            ": malformed embedding line");
        }
        if (values.empty()) {
            throw DataError(origin + ":" + std::to_string(line_no) +
                            ": embedding line has no values");
        }
        if (dim < 0) {
            dim = static_cast<Eigen::Index>(values.size());
        } else if (static_cast<Eigen::Index>(values.size()) != dim) {
            throw DataError(origin + ":" + std::to_string(line_no) +
                            ": embedding dimension " + std::to_string(values.size()) +
                            " differs from " + std::to_string(dim));
        }
        vocab.emplace(lowercase(token), std::move(values));
    }
    if (vocab.empty()) {
        throw DataError(origin + ": no embedding vectors found");
    }

    LabelEmbedding emb;
    emb.categories = categories;
    emb.vectors.resize(static_cast<Eigen::Index>(categories.size()), dim);
    for (std::size_t i = 0; i < categories.size(); ++i) {
        const std::vector<std::string> tokens = split_tokens(categories[i]);
        if (tokens.empty()) {
            throw DataError(origin + ": category name '" + categories[i] + "' is empty");
        }
        Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(dim);
        for (const std::string& tok : tokens) {
            auto it = vocab.find(tok);
            if (it == vocab.end()) {
                throw DataError(origin + ": token '" + tok + "' (category '" +
                                categories[i] + "') not in vocabulary");
            }
            acc += Eigen::Map<const Eigen::RowVectorXd>(it->second.data(), dim);
        }
        emb.vectors.row(static_cast<Eigen::Index>(i)) =
            acc / static_cast<double>(tokens.size());
    }
    return emb;
}

LabelEmbedding load_embeddings(const std::filesystem::path& vocab_path,
                               const std::vector<std::string>& categories) {
    std::ifstream in(vocab_path);
    if (!in) {
        throw DataError(vocab_path.string() + ": cannot open file");
    }
    return parse_embeddings(in, categories, vocab_path.string());
}

ContextGraph build_graph(const data::Dataset& dataset,
                         const std::vector<std::string>& categories,
                         const GraphDescriptor& descriptor) {
    const Eigen::Index n = static_cast<Eigen::Index>(categories.size());
    std::unordered_map<int, Eigen::Index> category_index;
    for (Eigen::Index i = 0; i < n; ++i) {
        const data::Category* cat = dataset.find_category(categories[i]);
        if (cat != nullptr) {
            category_index.emplace(cat->id, i);
        }
    }

    // Per-image presence sets over the configured categories.
    std::map<int, std::set<Eigen::Index>> present;
    for (const data::Annotation& ann : dataset.annotations) {
        auto it = category_index.find(ann.category_id);
        if (it != category_index.end()) {
            present[ann.image_id].insert(it->second);
        }
    }

    Eigen::VectorXd count = Eigen::VectorXd::Zero(n);
    Eigen::MatrixXd co_count = Eigen::MatrixXd::Zero(n, n);
    for (const auto& [image_id, labels] : present) {
        (void)image_id;
        for (Eigen::Index i : labels) {
            count(i) += 1.0;
            for (Eigen::Index j : labels) {
                co_count(i, j) += 1.0;
            }
        }
    }

    ContextGraph graph;
    graph.categories = categories;
    graph.descriptor = descriptor;
    graph.adjacency = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        if (count(i) == 0.0) {
            continue;
        }
        for (Eigen::Index j = 0; j < n; ++j) {
            const double conditional = co_count(i, j) / count(i);
            if (descriptor.type == GraphDescriptor::Type::binary) {
                graph.adjacency(i, j) = conditional >= descriptor.tau ? 1.0 : 0.0;
            } else {
                graph.adjacency(i, j) = conditional;
            }
        }
    }
    return graph;
}

Eigen::MatrixXd normalize(const ContextGraph& graph) {
    const Eigen::MatrixXd& a = graph.adjacency;
    if (a.rows() != a.cols()) {
        throw DataError("adjacency must be square, got " + std::to_string(a.rows()) +
                        "x" + std::to_string(a.cols()));
    }
    const Eigen::Index n = a.rows();
    const Eigen::MatrixXd with_loops = a + Eigen::MatrixXd::Identity(n, n);
    const Eigen::VectorXd degree = with_loops.rowwise().sum();
    const Eigen::VectorXd inv_sqrt =
        degree.unaryExpr([](double d) { return d > 0.0 ? 1.0 / std::sqrt(d) : 0.0; });
    return inv_sqrt.asDiagonal() * with_loops * inv_sqrt.asDiagonal();
}

Eigen::MatrixXd gcn_forward(const Eigen::MatrixXd& a_hat, const Eigen::MatrixXd& labels,
                            const GcnWeights& weights) {
    if (a_hat.rows() != a_hat.cols() || a_hat.cols() != labels.rows()) {
        throw DataError("gcn_forward: adjacency " + std::to_string(a_hat.rows()) + "x" +
                        std::to_string(a_hat.cols()) + " incompatible with embeddings " +
                        std::to_string(labels.rows()) + "x" +
                        std::to_string(labels.cols()));
    }
    if (labels.cols() != weights.w1.rows() || weights.w1.cols() != weights.w2.rows()) {
        throw DataError("gcn_forward: weight shapes do not chain");
    }
    const Eigen::MatrixXd hidden = leaky_relu(a_hat * labels * weights.w1,
                                              weights.leaky_slope);
    return leaky_relu(a_hat * hidden * weights.w2, weights.leaky_slope);
}

Eigen::MatrixXd project(const Eigen::MatrixXd& semantic_space,
                        const Eigen::MatrixXd& region_features) {
    if (semantic_space.cols() != region_features.rows()) {
        throw DataError("project: semantic space dimension " +
                        std::to_string(semantic_space.cols()) +
                        " does not match feature dimension " +
                        std::to_string(region_features.rows()));
    }
    Eigen::MatrixXd logits = semantic_space * region_features;
    for (Eigen::Index j = 0; j < logits.cols(); ++j) {
        const double peak = logits.col(j).maxCoeff();
        Eigen::VectorXd e = (logits.col(j).array() - peak).exp();
        logits.col(j) = e / e.sum();
    }
    return logits;
}

GcnWeights init_weights(int embedding_dim, int hidden_dim, int feature_dim,
                        double leaky_slope, std::uint64_t seed) {
    GcnWeights w;
    w.leaky_slope = leaky_slope;
    w.w1.resize(embedding_dim, hidden_dim);
    w.w2.resize(hidden_dim, feature_dim);
    std::mt19937_64 rng(seed);
    const double bound1 = 1.0 / std::sqrt(static_cast<double>(embedding_dim));
    const double bound2 = 1.0 / std::sqrt(static_cast<double>(hidden_dim));
    std::uniform_real_distribution<double> u1(-bound1, bound1);
    std::uniform_real_distribution<double> u2(-bound2, bound2);
    for (Eigen::Index i = 0; i < w.w1.rows(); ++i) {
        for (Eigen::Index j = 0; j < w.w1.cols(); ++j) {
            w.w1(i, j) = u1(rng);
        }
    }
    for (Eigen::Index i = 0; i < w.w2.rows(); ++i) {
        for (Eigen::Index j = 0; j < w.w2.cols(); ++j) {
            w.w2(i, j) = u2(rng);
        }
    }
    return w;
}

LossGrads loss_and_gradients(const Eigen::MatrixXd& a_hat, const Eigen::MatrixXd& labels,
                             const GcnWeights& weights,
                             const Eigen::MatrixXd& features,
                             const std::vector<int>& label_indices,
                             const std::vector<int>& label_columns) {
    const double slope = weights.leaky_slope;
    const Eigen::Index n = a_hat.rows();
    const std::size_t batch = label_columns.size();
    if (batch == 0) {
        throw DataError("loss_and_gradients: no labeled regions");
    }

    Eigen::MatrixXd x(features.rows(), static_cast<Eigen::Index>(batch));
    for (std::size_t k = 0; k < batch; ++k) {
        x.col(static_cast<Eigen::Index>(k)) = features.col(label_columns[k]);
    }

    const Eigen::MatrixXd ah = a_hat * labels;             // n x d
    const Eigen::MatrixXd z1 = ah * weights.w1;            // n x h
    const Eigen::MatrixXd x1 = leaky_relu(z1, slope);
    const Eigen::MatrixXd ax1 = a_hat * x1;                // n x h
    const Eigen::MatrixXd z2 = ax1 * weights.w2;           // n x D
    const Eigen::MatrixXd x2 = leaky_relu(z2, slope);      // semantic space
    const Eigen::MatrixXd logits = x2 * x;                 // n x batch

    Eigen::MatrixXd probs(n, static_cast<Eigen::Index>(batch));
    double loss = 0.0;
    for (std::size_t k = 0; k < batch; ++k) {
        const Eigen::Index col = static_cast<Eigen::Index>(k);
        const double peak = logits.col(col).maxCoeff();
        const Eigen::VectorXd e = (logits.col(col).array() - peak).exp();
        probs.col(col) = e / e.sum();
        loss -= std::log(std::max(probs(label_indices[k], col), 1e-300));
    }
    loss /= static_cast<double>(batch);

    // d loss / d logits = (P - Y) / batch
    Eigen::MatrixXd dlogits = probs / static_cast<double>(batch);
    for (std::size_t k = 0; k < batch; ++k) {
        dlogits(label_indices[k], static_cast<Eigen::Index>(k)) -=
            1.0 / static_cast<double>(batch);
    }

    const Eigen::MatrixXd dx2 = dlogits * x.transpose();                  // n x D
    const Eigen::MatrixXd dz2 = dx2.cwiseProduct(leaky_relu_grad(z2, slope));
    const Eigen::MatrixXd dw2 = ax1.transpose() * dz2;                    // h x D
    const Eigen::MatrixXd dx1 = a_hat.transpose() * dz2 * weights.w2.transpose();
    const Eigen::MatrixXd dz1 = dx1.cwiseProduct(leaky_relu_grad(z1, slope));
    const Eigen::MatrixXd dw1 = ah.transpose() * dz1;                     // d x h

    return LossGrads{loss, dw1, dw2};
}

FitResult fit(const ContextGraph& graph, const LabelEmbedding& embeddings,
              const RegionFeatures& features, const FitHyper& hyper) {
    std::vector<int> label_indices;
    std::vector<int> label_columns;
    for (std::size_t i = 0; i < features.labels.size(); ++i) {
        if (features.labels[i]) {
            const int label = *features.labels[i];
            if (label < 0 || label >= static_cast<int>(graph.categories.size())) {
                throw DataError("region " + std::to_string(i) + " label " +
                                std::to_string(label) + " outside category range");
            }
            label_indices.push_back(label);
            label_columns.push_back(static_cast<int>(i));
        }
    }
    if (label_indices.empty()) {
        throw DataError("fit: no labeled region features");
    }

    const Eigen::MatrixXd a_hat = normalize(graph);
    GcnWeights weights = init_weights(static_cast<int>(embeddings.vectors.cols()),
                                      hyper.hidden_dim,
                                      static_cast<int>(features.features.rows()),
                                      hyper.leaky_slope, hyper.seed);

    Eigen::MatrixXd v1 = Eigen::MatrixXd::Zero(weights.w1.rows(), weights.w1.cols());
    Eigen::MatrixXd v2 = Eigen::MatrixXd::Zero(weights.w2.rows(), weights.w2.cols());

    FitResult result;
    result.loss_trace.reserve(static_cast<std::size_t>(std::max(hyper.epochs, 0)));
    for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
        const LossGrads lg = loss_and_gradients(a_hat, embeddings.vectors, weights,
                                                features.features, label_indices,
                                                label_columns);
        if (!std::isfinite(lg.loss)) {
            throw StageError("fit diverged at epoch " + std::to_string(epoch) +
                             ": loss is not finite");
        }
        result.loss_trace.push_back(lg.loss);

        v1 = hyper.momentum * v1 + (lg.dw1 + hyper.weight_decay * weights.w1);
        v2 = hyper.momentum * v2 + (lg.dw2 + hyper.weight_decay * weights.w2);
        weights.w1 -= hyper.lr * v1;
        weights.w2 -= hyper.lr * v2;
    }
    result.weights = std::move(weights);
    return result;
}

json graph_to_json(const ContextGraph& graph) {
    return json{{"categories", graph.categories},
                {"descriptor", descriptor_to_json(graph.descriptor)},
                {"adjacency", matrix_to_json(graph.adjacency)}};
}

ContextGraph graph_from_json(const json& root, const std::string& origin) {
    if (!root.is_object() || !root.contains("categories") || !root.contains("adjacency")) {
        throw DataError(origin + ": graph file needs 'categories' and 'adjacency'");
    }
    ContextGraph graph;
    graph.categories = root["categories"].get<std::vector<std::string>>();
    if (root.contains("descriptor")) {
        graph.descriptor = descriptor_from_json(root["descriptor"], origin);
    }
    graph.adjacency =
        matrix_from_json(root["adjacency"], static_cast<int>(graph.categories.size()),
                         origin + ": adjacency");
    if (graph.adjacency.rows() != static_cast<Eigen::Index>(graph.categories.size())) {
        throw DataError(origin + ": adjacency rows do not match category count");
    }
    return graph;
}

ContextGraph load_graph(const std::filesystem::path& path) {
    return graph_from_json(data::load_json_file(path), path.string());
}

void save_graph(const ContextGraph& graph, const std::filesystem::path& path) {
    data::write_json_file(graph_to_json(graph), path);
}

json weights_to_json(const GcnWeights& weights) {
    return json{{"embedding_dim", weights.w1.rows()},
                {"hidden_dim", weights.w1.cols()},
                {"feature_dim", weights.w2.cols()},
                {"leaky_slope", weights.leaky_slope},
                {"w1", matrix_to_json(weights.w1)},
                {"w2", matrix_to_json(weights.w2)}};
}

GcnWeights weights_from_json(const json& root, const std::string& origin) {
    if (!root.is_object() || !root.contains("w1") || !root.contains("w2")) {
        throw DataError(origin + ": weights file needs 'w1' and 'w2'");
    }
    GcnWeights w;
    w.leaky_slope = root.value("leaky_slope", 0.01);
    w.w1 = matrix_from_json(root["w1"], 0, origin + ": w1");
    w.w2 = matrix_from_json(root["w2"], 0, origin + ": w2");
    if (w.w1.cols() != w.w2.rows()) {
        throw DataError(origin + ": w1 columns must match w2 rows");
    }
    return w;
}

GcnWeights load_weights(const std::filesystem::path& path) {
    return weights_from_json(data::load_json_file(path), path.string());
}

void save_weights(const GcnWeights& weights, const std::filesystem::path& path) {
    data::write_json_file(weights_to_json(weights), path);
}

RegionFeatures features_from_json(const json& root, const std::string& origin) {
    if (!root.is_object() || !root.contains("dim") || !root.contains("rows")) {
        throw DataError(origin + ": features file needs 'dim' and 'rows'");
    }
    const int dim = root["dim"].get<int>();
    const json& rows = root["rows"];
    if (!rows.is_array()) {
        throw DataError(origin + ": 'rows' must be an array");
    }
    RegionFeatures rf;
    rf.features.resize(dim, static_cast<Eigen::Index>(rows.size()));
    rf.labels.resize(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const json& row = rows[i];
        const std::string ctx = origin + ": rows[" + std::to_string(i) + "]";
        const json& feats = row.contains("features") ? row["features"] : json();
        if (!feats.is_array() || static_cast<int>(feats.size()) != dim) {
            throw DataError(ctx + ": 'features' must hold " + std::to_string(dim) +
                            " numbers");
        }
        for (int d = 0; d < dim; ++d) {
            rf.features(d, static_cast<Eigen::Index>(i)) = feats[d].get<double>();
        }
        if (row.contains("label")) {
            rf.labels[i] = row["label"].get<int>();
        }
    }
    return rf;
}

RegionFeatures load_features(const std::filesystem::path& path) {
    return features_from_json(data::load_json_file(path), path.string());
}

json probabilities_to_json(const Eigen::MatrixXd& probabilities,
                           const std::vector<std::string>& categories) {
    json root;
    root["categories"] = categories;
    root["num_regions"] = probabilities.cols();
    json rows = json::array();
    for (Eigen::Index j = 0; j < probabilities.cols(); ++j) {
        json row = json::array();
        for (Eigen::Index i = 0; i < probabilities.rows(); ++i) {
            row.push_back(probabilities(i, j));
        }
        rows.push_back(std::move(row));
    }
    root["probabilities"] = std::move(rows);
    return root;
}

} // namespace ctxdet::scf

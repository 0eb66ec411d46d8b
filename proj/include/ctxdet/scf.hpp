#pragma once

#include "ctxdet/dataset.hpp"

#include "json.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <istream>
#include <optional>
#include <string>
#include <vector>

namespace ctxdet::scf {

/// Word-embedding rows for the configured categories: H in R^{n x d},
/// row i belonging to categories[i].
struct LabelEmbedding {
    std::vector<std::string> categories;
    Eigen::MatrixXd vectors;
};

struct GraphDescriptor {
    enum class Type { conditional, binary };
    Type type = Type::conditional;
    /// Binarization threshold, used only by the binary descriptor.
    double tau = 0.5;
};

/// Label co-occurrence adjacency A in R^{n x n}; A(i, j) is the
/// conditional probability of seeing label j in an image given label i
/// (optionally binarized at tau).
struct ContextGraph {
    std::vector<std::string> categories;
    Eigen::MatrixXd adjacency;
    GraphDescriptor descriptor;
};

/// Two-layer graph convolution parameters: W1 in R^{d x h}, W2 in
/// R^{h x D}, LeakyReLU after each layer.
struct GcnWeights {
    Eigen::MatrixXd w1;
    Eigen::MatrixXd w2;
    double leaky_slope = 0.01;
};

/// Region features f in R^{D x N}, one column per proposed region, with
/// optional ground-truth category indices for training.
struct RegionFeatures {
    Eigen::MatrixXd features;
    std::vector<std::optional<int>> labels;
};

struct FitHyper {
    double lr = 0.005;
    double momentum = 0.95;
    double weight_decay = 1e-4;
    int epochs = 40;
    int hidden_dim = 512;
    double leaky_slope = 0.01;
    std::uint64_t seed = 0;
};

struct FitResult {
    GcnWeights weights;
    std::vector<double> loss_trace;
};

/// Read "token f1 f2 ... fd" lines and assemble one row per category.
/// Multi-word category names embed as the unweighted mean of their token
/// vectors. Lookups are lowercase. Throws DataError on a missing token.
LabelEmbedding load_embeddings(const std::filesystem::path& vocab_path,
                               const std::vector<std::string>& categories);
LabelEmbedding parse_embeddings(std::istream& in,
                                const std::vector<std::string>& categories,
                                const std::string& origin);

/// Conditional descriptor: A(i, j) = co_count(i, j) / count(i), zero when
/// count(i) = 0. Binary descriptor thresholds the conditional value at tau.
ContextGraph build_graph(const data::Dataset& dataset,
                         const std::vector<std::string>& categories,
                         const GraphDescriptor& descriptor);

/// Symmetric normalization with self-loops:
/// A_hat = Dg^{-1/2} (A + I) Dg^{-1/2}, Dg the degree diagonal of A + I.
Eigen::MatrixXd normalize(const ContextGraph& graph);

/// H' = LeakyReLU(A_hat * LeakyReLU(A_hat * H * W1) * W2), n x D.
Eigen::MatrixXd gcn_forward(const Eigen::MatrixXd& a_hat, const Eigen::MatrixXd& labels,
                            const GcnWeights& weights);

/// Probabilities P = softmax(H' * f), softmax taken over the category
/// axis independently for each region column. Returns n x N.
Eigen::MatrixXd project(const Eigen::MatrixXd& semantic_space,
                        const Eigen::MatrixXd& region_features);

/// Seeded uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)].
GcnWeights init_weights(int embedding_dim, int hidden_dim, int feature_dim,
                        double leaky_slope, std::uint64_t seed);

/// Mean cross-entropy of project(gcn_forward(...)) over labeled columns,
/// with analytic gradients for both weight matrices.
struct LossGrads {
    double loss = 0.0;
    Eigen::MatrixXd dw1;
    Eigen::MatrixXd dw2;
};
LossGrads loss_and_gradients(const Eigen::MatrixXd& a_hat, const Eigen::MatrixXd& labels,
                             const GcnWeights& weights,
                             const Eigen::MatrixXd& features,
                             const std::vector<int>& label_indices,
                             const std::vector<int>& label_columns);

/// Full-batch momentum SGD with weight decay on the cross-entropy of the
/// projected probabilities. Deterministic given hyper.seed; throws
/// StageError when the loss leaves the finite range.
FitResult fit(const ContextGraph& graph, const LabelEmbedding& embeddings,
              const RegionFeatures& features, const FitHyper& hyper);

// JSON artifact round-trips.
GraphDescriptor descriptor_from_json(const nlohmann::json& value, const std::string& ctx);
nlohmann::json descriptor_to_json(const GraphDescriptor& descriptor);
nlohmann::json graph_to_json(const ContextGraph& graph);
ContextGraph graph_from_json(const nlohmann::json& root, const std::string& origin);
ContextGraph load_graph(const std::filesystem::path& path);
void save_graph(const ContextGraph& graph, const std::filesystem::path& path);

nlohmann::json weights_to_json(const GcnWeights& weights);
GcnWeights weights_from_json(const nlohmann::json& root, const std::string& origin);
GcnWeights load_weights(const std::filesystem::path& path);
void save_weights(const GcnWeights& weights, const std::filesystem::path& path);

RegionFeatures features_from_json(const nlohmann::json& root, const std::string& origin);
RegionFeatures load_features(const std::filesystem::path& path);

nlohmann::json probabilities_to_json(const Eigen::MatrixXd& probabilities,
                                     const std::vector<std::string>& categories);

} // namespace ctxdet::scf

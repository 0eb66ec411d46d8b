#include "ctxdet/scf.hpp"

#include "ctxdet/errors.hpp"
#include "doctest.h"

#include <random>
#include <sstream>

using namespace ctxdet;
using Eigen::MatrixXd;

namespace {

std::istringstream tiny_vocab() {
    return std::istringstream("door 1 2 3\n"
                              "knob 0.5 0.5 0.5\n"
                              "potted 1 0 1\n"
                              "plant 3 2 1\n");
}

// Dataset with per-image label sets {A,B}, {A}, {A,B}.
data::Dataset co_occurrence_dataset() {
    data::Dataset ds;
    ds.categories = {{1, "A", data::CategoryKind::thing},
                     {2, "B", data::CategoryKind::thing}};
    ds.images = {{1, 100, 100, ""}, {2, 100, 100, ""}, {3, 100, 100, ""}};
    int id = 1;
    auto add = [&](int image, int category) {
        data::Annotation ann;
        ann.id = id++;
        ann.image_id = image;
        ann.category_id = category;
        ann.bbox = geom::BBox{1, 1, 10, 10};
        ds.annotations.push_back(ann);
    };
    add(1, 1);
    add(1, 2);
    add(2, 1);
    add(3, 1);
    add(3, 2);
    return ds;
}

// Linearly separable two-cluster problem in feature space.
struct Toy {
    scf::ContextGraph graph;
    scf::LabelEmbedding embeddings;
    scf::RegionFeatures features;
};

Toy separable_toy(int regions, unsigned seed) {
    Toy toy;
    toy.graph.categories = {"a", "b"};
    toy.graph.adjacency = MatrixXd::Zero(2, 2);
    toy.graph.adjacency << 1.0, 0.25, 0.25, 1.0;

    toy.embeddings.categories = toy.graph.categories;
    toy.embeddings.vectors = MatrixXd::Zero(2, 4);
    toy.embeddings.vectors << 1.0, 0.2, 0.0, 0.0, 0.0, 0.0, 0.2, 1.0;

    const int dim = 8;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, 0.05);
    toy.features.features = MatrixXd::Zero(dim, regions);
    toy.features.labels.resize(regions);
    for (int j = 0; j < regions; ++j) {
        const int label = j % 2;
        for (int d = 0; d < dim; ++d) {
            const double center = (label == 0) == (d < dim / 2) ? 1.0 : -1.0;
            toy.features.features(d, j) = center + noise(rng);
        }
        toy.features.labels[j] = label;
    }
    return toy;
}

double training_accuracy(const Toy& toy, const scf::GcnWeights& weights) {
    const MatrixXd semantic =
        scf::gcn_forward(scf::normalize(toy.graph), toy.embeddings.vectors, weights);
    const MatrixXd probs = scf::project(semantic, toy.features.features);
    int correct = 0;
    int total = 0;
    for (Eigen::Index j = 0; j < probs.cols(); ++j) {
        if (!toy.features.labels[j]) {
            continue;
        }
        Eigen::Index argmax = 0;
        probs.col(j).maxCoeff(&argmax);
        correct += argmax == *toy.features.labels[j];
        total += 1;
    }
    return static_cast<double>(correct) / total;
}

} // namespace

TEST_CASE("embedding lookup") {
    SUBCASE("single token") {
        auto in = tiny_vocab();
        const scf::LabelEmbedding emb = scf::parse_embeddings(in, {"door"}, "vocab");
        REQUIRE(emb.vectors.rows() == 1);
        CHECK(emb.vectors(0, 0) == 1.0);
        CHECK(emb.vectors(0, 1) == 2.0);
        CHECK(emb.vectors(0, 2) == 3.0);
    }
    SUBCASE("multi-word mean") {
        auto in = tiny_vocab();
        const scf::LabelEmbedding emb =
            scf::parse_embeddings(in, {"potted plant"}, "vocab");
        CHECK(emb.vectors(0, 0) == doctest::Approx(2.0));
        CHECK(emb.vectors(0, 1) == doctest::Approx(1.0));
        CHECK(emb.vectors(0, 2) == doctest::Approx(1.0));
    }
    SUBCASE("out of vocabulary") {
        auto in = tiny_vocab();
        CHECK_THROWS_WITH_AS(scf::parse_embeddings(in, {"xyzzy"}, "vocab"),
                             doctest::Contains("xyzzy"), DataError);
    }
}

TEST_CASE("co-occurrence graph") {
    const data::Dataset ds = co_occurrence_dataset();
    SUBCASE("conditional probabilities") {
        const scf::ContextGraph g =
            scf::build_graph(ds, {"A", "B"}, scf::GraphDescriptor{});
        CHECK(g.adjacency(0, 1) == doctest::Approx(2.0 / 3.0));
        CHECK(g.adjacency(1, 0) == doctest::Approx(1.0));
    }
    SUBCASE("categories that never co-occur") {
        const scf::ContextGraph g =
            scf::build_graph(ds, {"A", "B", "C"}, scf::GraphDescriptor{});
        CHECK(g.adjacency(0, 2) == 0.0);
        CHECK(g.adjacency(2, 0) == 0.0);
        CHECK(g.adjacency(2, 2) == 0.0); // never observed
    }
    SUBCASE("binary descriptor") {
        scf::GraphDescriptor binary;
        binary.type = scf::GraphDescriptor::Type::binary;
        binary.tau = 0.5;
        const scf::ContextGraph g = scf::build_graph(ds, {"A", "B"}, binary);
        CHECK(g.adjacency(0, 1) == 1.0);
        CHECK(g.adjacency(1, 0) == 1.0);
    }
}

TEST_CASE("graph normalization") {
    scf::ContextGraph g;
    SUBCASE("zero adjacency gives identity") {
        g.adjacency = MatrixXd::Zero(2, 2);
        CHECK(scf::normalize(g).isApprox(MatrixXd::Identity(2, 2), 1e-12));
    }
    SUBCASE("single node") {
        g.adjacency = MatrixXd::Zero(1, 1);
        g.adjacency(0, 0) = 0.7;
        const MatrixXd a_hat = scf::normalize(g);
        CHECK(a_hat(0, 0) == doctest::Approx(1.0));
    }
    SUBCASE("symmetric pair") {
        g.adjacency = MatrixXd::Zero(2, 2);
        g.adjacency << 0, 1, 1, 0;
        const MatrixXd a_hat = scf::normalize(g);
        for (int i = 0; i < 2; ++i) {
            for (int j = 0; j < 2; ++j) {
                CHECK(a_hat(i, j) == doctest::Approx(0.5));
            }
        }
    }
}

TEST_CASE("gcn forward") {
    SUBCASE("identity path leaves non-negative input unchanged") {
        scf::GcnWeights w;
        w.w1 = MatrixXd::Identity(3, 3);
        w.w2 = MatrixXd::Identity(3, 3);
        MatrixXd h(1, 3);
        h << 0.5, 2.0, 0.0;
        const MatrixXd out = scf::gcn_forward(MatrixXd::Identity(1, 1), h, w);
        CHECK(out.isApprox(h, 1e-12));
    }
    SUBCASE("negative input passes through both slopes") {
        scf::GcnWeights w;
        w.w1 = MatrixXd::Identity(1, 1);
        w.w2 = MatrixXd::Identity(1, 1);
        w.leaky_slope = 0.01;
        MatrixXd h(1, 1);
        h << -1.0;
        const MatrixXd out = scf::gcn_forward(MatrixXd::Identity(1, 1), h, w);
        CHECK(out(0, 0) == doctest::Approx(-0.0001));
    }
    SUBCASE("matches a straight-line matmul oracle") {
        std::mt19937_64 rng(5);
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        auto fill = [&](MatrixXd& m) {
            for (Eigen::Index i = 0; i < m.rows(); ++i) {
                for (Eigen::Index j = 0; j < m.cols(); ++j) {
                    m(i, j) = u(rng);
                }
            }
        };
        for (int trial = 0; trial < 25; ++trial) {
            const int n = 3, d = 4, hdim = 5, D = 6;
            MatrixXd a(n, n), h(n, d);
            scf::GcnWeights w;
            w.w1.resize(d, hdim);
            w.w2.resize(hdim, D);
            w.leaky_slope = 0.1;
            fill(a);
            fill(h);
            fill(w.w1);
            fill(w.w2);

            // oracle: explicit loops, no shared code path
            auto matmul = [](const std::vector<std::vector<double>>& x,
                             const std::vector<std::vector<double>>& y) {
                std::vector<std::vector<double>> out(
                    x.size(), std::vector<double>(y[0].size(), 0.0));
                for (std::size_t i = 0; i < x.size(); ++i) {
                    for (std::size_t k = 0; k < y.size(); ++k) {
                        for (std::size_t j = 0; j < y[0].size(); ++j) {
                            out[i][j] += x[i][k] * y[k][j];
                        }
                    }
                }
                return out;
            };
            auto to_vec = [](const MatrixXd& m) {
                std::vector<std::vector<double>> v(m.rows(),
                                                   std::vector<double>(m.cols()));
                for (Eigen::Index i = 0; i < m.rows(); ++i) {
                    for (Eigen::Index j = 0; j < m.cols(); ++j) {
                        v[i][j] = m(i, j);
                    }
                }
                return v;
            };
            auto lrelu = [&](std::vector<std::vector<double>> m) {
                for (auto& row : m) {
                    for (double& v : row) {
                        v = v > 0.0 ? v : w.leaky_slope * v;
                    }
                }
                return m;
            };
            const auto expected = lrelu(
                matmul(to_vec(a), matmul(lrelu(matmul(to_vec(a),
                                                      matmul(to_vec(h), to_vec(w.w1)))),
                                         to_vec(w.w2))));

            const MatrixXd got = scf::gcn_forward(a, h, w);
            for (int i = 0; i < n; ++i) {
                for (int j = 0; j < D; ++j) {
                    CHECK(got(i, j) == doctest::Approx(expected[i][j]).epsilon(1e-9));
                }
            }
        }
    }
    SUBCASE("shape mismatch") {
        scf::GcnWeights w;
        w.w1 = MatrixXd::Identity(3, 3);
        w.w2 = MatrixXd::Identity(4, 4);
        CHECK_THROWS_AS(scf::gcn_forward(MatrixXd::Identity(2, 2),
                                         MatrixXd::Zero(2, 3), w),
                        DataError);
    }
}

TEST_CASE("projection softmax") {
    SUBCASE("uniform logits") {
        MatrixXd space = MatrixXd::Ones(3, 2);
        MatrixXd features = MatrixXd::Ones(2, 1);
        const MatrixXd p = scf::project(space, features);
        for (int i = 0; i < 3; ++i) {
            CHECK(p(i, 0) == doctest::Approx(1.0 / 3.0));
        }
    }
    SUBCASE("known two-way softmax") {
        MatrixXd space(2, 1);
        space << 1.0, 0.0;
        MatrixXd features = MatrixXd::Ones(1, 1);
        const MatrixXd p = scf::project(space, features);
        CHECK(p(0, 0) == doctest::Approx(0.7311).epsilon(1e-4));
        CHECK(p(1, 0) == doctest::Approx(0.2689).epsilon(1e-4));
    }
    SUBCASE("zero regions") {
        const MatrixXd p = scf::project(MatrixXd::Ones(3, 2), MatrixXd(2, 0));
        CHECK(p.rows() == 3);
        CHECK(p.cols() == 0);
    }
    SUBCASE("columns sum to one on random inputs") {
        std::mt19937_64 rng(8);
        std::uniform_real_distribution<double> u(-3.0, 3.0);
        MatrixXd space(4, 6), features(6, 9);
        for (Eigen::Index i = 0; i < space.size(); ++i) {
            space.data()[i] = u(rng);
        }
        for (Eigen::Index i = 0; i < features.size(); ++i) {
            features.data()[i] = u(rng);
        }
        const MatrixXd p = scf::project(space, features);
        for (Eigen::Index j = 0; j < p.cols(); ++j) {
            CHECK(p.col(j).sum() == doctest::Approx(1.0).epsilon(1e-9));
            for (Eigen::Index i = 0; i < p.rows(); ++i) {
                CHECK(p(i, j) > 0.0);
                CHECK(p(i, j) < 1.0);
            }
        }
    }
}

TEST_CASE("fit") {
    SUBCASE("zero epochs returns the seeded initialization") {
        Toy toy = separable_toy(20, 1);
        scf::FitHyper hyper;
        hyper.epochs = 0;
        hyper.hidden_dim = 8;
        hyper.seed = 77;
        const scf::FitResult result = scf::fit(toy.graph, toy.embeddings,
                                               toy.features, hyper);
        const scf::GcnWeights init =
            scf::init_weights(4, 8, 8, hyper.leaky_slope, hyper.seed);
        CHECK(result.weights.w1.isApprox(init.w1, 0.0));
        CHECK(result.weights.w2.isApprox(init.w2, 0.0));
        CHECK(result.loss_trace.empty());
    }
    SUBCASE("separable toy reaches full training accuracy") {
        Toy toy = separable_toy(200, 2);
        scf::FitHyper hyper; // paper defaults: lr 0.005, momentum 0.95, wd 1e-4
        hyper.epochs = 200;
        hyper.hidden_dim = 16;
        hyper.seed = 3;
        const scf::FitResult result = scf::fit(toy.graph, toy.embeddings,
                                               toy.features, hyper);
        CHECK(training_accuracy(toy, result.weights) == doctest::Approx(1.0));
        // loss should never increase on this smooth problem
        for (std::size_t i = 1; i < result.loss_trace.size(); ++i) {
            CHECK(result.loss_trace[i] <= result.loss_trace[i - 1] + 1e-12);
        }
    }
    SUBCASE("unlabeled features rejected") {
        Toy toy = separable_toy(4, 3);
        for (auto& label : toy.features.labels) {
            label.reset();
        }
        CHECK_THROWS_AS(scf::fit(toy.graph, toy.embeddings, toy.features,
                                 scf::FitHyper{}),
                        DataError);
    }
}

TEST_CASE("analytic gradients match central finite differences") {
    std::mt19937_64 rng(12);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const double eps = 1e-5;
    int checked = 0;
    for (int trial = 0; trial < 20; ++trial) {
        const int n = 2 + static_cast<int>(rng() % 3);  // <= 4
        const int d = 2 + static_cast<int>(rng() % 7);  // <= 8
        const int hdim = 3 + static_cast<int>(rng() % 4);
        const int D = 2 + static_cast<int>(rng() % 7);  // <= 8
        const int N = 2 + static_cast<int>(rng() % 15); // <= 16

        MatrixXd a_hat(n, n), labels(n, d), features(D, N);
        for (Eigen::Index i = 0; i < a_hat.size(); ++i) {
            a_hat.data()[i] = u(rng);
        }
        for (Eigen::Index i = 0; i < labels.size(); ++i) {
            labels.data()[i] = u(rng);
        }
        for (Eigen::Index i = 0; i < features.size(); ++i) {
            features.data()[i] = u(rng);
        }
        scf::GcnWeights weights = scf::init_weights(d, hdim, D, 0.1, rng());

        std::vector<int> label_indices, label_columns;
        for (int j = 0; j < N; ++j) {
            label_indices.push_back(static_cast<int>(rng() % n));
            label_columns.push_back(j);
        }

        const scf::LossGrads analytic = scf::loss_and_gradients(
            a_hat, labels, weights, features, label_indices, label_columns);

        auto loss_at = [&](const scf::GcnWeights& w) {
            return scf::loss_and_gradients(a_hat, labels, w, features, label_indices,
                                           label_columns)
                .loss;
        };
        auto check_matrix = [&](const MatrixXd& grad, MatrixXd scf::GcnWeights::* member) {
            for (Eigen::Index i = 0; i < grad.rows(); ++i) {
                for (Eigen::Index j = 0; j < grad.cols(); ++j) {
                    scf::GcnWeights plus = weights;
                    (plus.*member)(i, j) += eps;
                    scf::GcnWeights minus = weights;
                    (minus.*member)(i, j) -= eps;
                    const double fd = (loss_at(plus) - loss_at(minus)) / (2.0 * eps);
                    const double a = grad(i, j);
                    const double rel =
                        std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-6});
                    CHECK(rel < 1e-4);
                    ++checked;
                }
            }
        };
        check_matrix(analytic.dw1, &scf::GcnWeights::w1);
        check_matrix(analytic.dw2, &scf::GcnWeights::w2);
    }
    CHECK(checked > 0);
}

TEST_CASE("graph and weights artifacts round-trip") {
    scf::ContextGraph g;
    g.categories = {"a", "b"};
    g.descriptor.type = scf::GraphDescriptor::Type::binary;
    g.descriptor.tau = 0.4;
    g.adjacency = MatrixXd::Zero(2, 2);
    g.adjacency << 1.0, 0.5, 0.25, 1.0;
    const scf::ContextGraph g2 = scf::graph_from_json(scf::graph_to_json(g), "mem");
    CHECK(g2.categories == g.categories);
    CHECK(g2.adjacency.isApprox(g.adjacency, 0.0));
    CHECK(g2.descriptor.type == g.descriptor.type);
    CHECK(g2.descriptor.tau == g.descriptor.tau);

    const scf::GcnWeights w = scf::init_weights(3, 5, 4, 0.02, 123);
    const scf::GcnWeights w2 = scf::weights_from_json(scf::weights_to_json(w), "mem");
    CHECK(w2.w1.isApprox(w.w1, 0.0));
    CHECK(w2.w2.isApprox(w.w2, 0.0));
    CHECK(w2.leaky_slope == w.leaky_slope);
}

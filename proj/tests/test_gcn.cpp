#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "crfsmooth/gcn.hpp"
#include "test_support.hpp"

using namespace crfsmooth;
using crfsmooth::testing::TempDir;
using crfsmooth::testing::random_graph;

namespace {

// Central differences of the loss with respect to every entry of `at`.
// Perturbs a copy of the inputs and only calls the loss, never the gradient.
template <typename Loss>
Matrix finite_difference(const Matrix& at, Loss&& loss, double h = 1e-6) {
    Matrix grad(at.rows(), at.cols());
    for (Eigen::Index i = 0; i < at.size(); ++i) {
        Matrix plus = at, minus = at;
        plus.data()[i] += h;
        minus.data()[i] -= h;
        grad.data()[i] = (loss(plus) - loss(minus)) / (2.0 * h);
    }
    return grad;
}

double relative_error(const Matrix& a, const Matrix& b) {
    const double scale = std::max({a.norm(), b.norm(), 1e-12});
    return (a - b).norm() / scale;
}

}  // namespace

TEST_CASE("init_parameters") {
    const GcnParameters p = init_parameters(3, 3, 2, 2);
    CHECK(p.w1.rows() == 3);
    CHECK(p.w1.cols() == 2);
    CHECK(p.w2.rows() == 2);
    CHECK(p.w2.cols() == 2);
    CHECK(p == init_parameters(3, 3, 2, 2));
    CHECK_FALSE(p == init_parameters(4, 3, 2, 2));

    const GcnParameters big = init_parameters(9, 50, 16, 7);
    CHECK(big.w1.cwiseAbs().maxCoeff() <= std::sqrt(6.0 / (50 + 16)));
    CHECK(big.w2.cwiseAbs().maxCoeff() <= std::sqrt(6.0 / (16 + 7)));
}

TEST_CASE("forward") {
    Rng rng(1);
    const Graph g = random_graph(rng, 9, 4, 3, 0.4);

    SUBCASE("zero weights give uniform rows") {
        const GcnParameters zero{Matrix::Zero(4, 5), Matrix::Zero(5, 3)};
        const PredictionMatrix p = forward(zero, g);
        CHECK((p.probs.array() - 1.0 / 3.0).abs().maxCoeff() < 1e-15);
    }
    SUBCASE("isolated node uses the identity adjacency") {
        Matrix x(1, 4);
        x << 0.3, -1.2, 0.7, 2.0;
        const Graph single(1, {}, x, {0}, 3);
        const GcnParameters p = init_parameters(2, 4, 5, 3);
        const Eigen::RowVectorXd logits = (x * p.w1).cwiseMax(0.0) * p.w2;
        const Eigen::RowVectorXd expected = logits.array().exp() / logits.array().exp().sum();
        CHECK((forward(p, single).probs.row(0) - expected).cwiseAbs().maxCoeff() < 1e-15);
    }
    SUBCASE("rows are distributions") {
        for (std::uint64_t s = 0; s < 10; ++s) {
            CHECK(forward(init_parameters(s, 4, 6, 3), g).is_row_stochastic(1e-9));
        }
    }
    SUBCASE("shape mismatch") {
        CHECK_THROWS_AS(forward(init_parameters(0, 5, 2, 3), g), ValidationError);
    }
}

TEST_CASE("forward is permutation-equivariant") {
    Rng rng(23);
    for (int trial = 0; trial < 10; ++trial) {
        const Graph g = random_graph(rng, 7, 3, 2, 0.4);
        std::vector<NodeIndex> perm(7);
        std::iota(perm.begin(), perm.end(), NodeIndex{0});
        std::shuffle(perm.begin(), perm.end(), rng);

        EdgeList edges;
        for (const Edge& e : g.edges()) {
            edges.push_back(Edge{perm[e.u], perm[e.v]});
        }
        Matrix x(7, 3);
        Labels y(7);
        for (NodeIndex i = 0; i < 7; ++i) {
            x.row(perm[i]) = g.features().row(i);
            y[perm[i]] = g.labels()[i];
        }
        const Graph relabeled(7, edges, x, y, 2);
        const GcnParameters p = init_parameters(static_cast<std::uint64_t>(trial), 3, 4, 2);
        const PredictionMatrix a = forward(p, g), b = forward(p, relabeled);
        for (NodeIndex i = 0; i < 7; ++i) {
            CHECK((a.probs.row(i) - b.probs.row(perm[i])).cwiseAbs().maxCoeff() < 1e-12);
        }
    }
}

TEST_CASE("cross-entropy limits") {
    SUBCASE("uniform predictions give ln 2") {
        Rng rng(2);
        const Graph g = random_graph(rng, 5, 3, 2, 0.5);
        const GcnParameters zero{Matrix::Zero(3, 4), Matrix::Zero(4, 2)};
        const std::vector<NodeIndex> idx{0, 1, 2, 3, 4};
        CHECK(loss_and_gradients(zero, g, idx).loss == doctest::Approx(std::log(2.0)).epsilon(1e-14));
    }
    SUBCASE("saturated correct logits drive the loss to 0") {
        // One isolated node, feature 1, label 0: logits = (w1 relu) * w2 = (100, -100).
        const Graph g(1, {}, Matrix::Ones(1, 1), {0}, 2);
        GcnParameters p{Matrix::Ones(1, 1), Matrix(1, 2)};
        p.w2 << 100.0, -100.0;
        const std::vector<NodeIndex> idx{0};
        CHECK(loss_and_gradients(p, g, idx).loss < 1e-6);
    }
    SUBCASE("empty index list") {
        Rng rng(2);
        const Graph g = random_graph(rng, 5, 3, 2, 0.5);
        CHECK_THROWS_AS(loss_and_gradients(init_parameters(0, 3, 2, 2), g, {}), ValidationError);
    }
}

TEST_CASE("analytic gradients match central finite differences") {
    Rng rng(31);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 3 + static_cast<std::size_t>(trial % 4);
        const Graph g = random_graph(rng, n, 3, 2, 0.5);
        const GcnParameters p = init_parameters(static_cast<std::uint64_t>(100 + trial), 3, 4, 2);
        std::vector<NodeIndex> idx(n);
        std::iota(idx.begin(), idx.end(), NodeIndex{0});
        idx.resize(n - 1);
        const SparseMatrix adj = normalize_adjacency(g);
        const Gradients grads = loss_and_gradients(p, adj, g.features(), g.labels(), idx);

        auto loss_w1 = [&](const Matrix& w1) {
            return loss_and_gradients(GcnParameters{w1, p.w2}, adj, g.features(), g.labels(), idx).loss;
        };
        auto loss_w2 = [&](const Matrix& w2) {
            return loss_and_gradients(GcnParameters{p.w1, w2}, adj, g.features(), g.labels(), idx).loss;
        };
        auto loss_x = [&](const Matrix& x) { return loss_and_gradients(p, adj, x, g.labels(), idx).loss; };

        CHECK(relative_error(grads.w1, finite_difference(p.w1, loss_w1)) <= 1e-5);
        CHECK(relative_error(grads.w2, finite_difference(p.w2, loss_w2)) <= 1e-5);
        CHECK(relative_error(grads.x, finite_difference(g.features(), loss_x)) <= 1e-5);
    }
}

TEST_CASE("adam_step") {
    TrainingConfig cfg;
    SUBCASE("zero gradient leaves parameters unchanged") {
        GcnParameters p = init_parameters(0, 3, 2, 2);
        const GcnParameters before = p;
        AdamState s = AdamState::zeros_like(p);
        adam_step(s, p, Gradients{0.0, Matrix::Zero(3, 2), Matrix::Zero(2, 2), {}}, cfg);
        CHECK(p == before);
        CHECK(s.step == 1);
    }
    SUBCASE("scalar first step moves by -lr") {
        GcnParameters p{Matrix::Zero(1, 1), Matrix::Zero(1, 1)};
        AdamState s = AdamState::zeros_like(p);
        adam_step(s, p, Gradients{0.0, Matrix::Ones(1, 1), Matrix::Zero(1, 1), {}}, cfg);
        // m_hat = 1, v_hat = 1, so w = -0.01 / (1 + 1e-8).
        CHECK(p.w1(0, 0) == doctest::Approx(-0.01 / (1.0 + 1e-8)).epsilon(1e-12));
    }
    SUBCASE("non-finite gradient") {
        GcnParameters p{Matrix::Zero(1, 1), Matrix::Zero(1, 1)};
        AdamState s = AdamState::zeros_like(p);
        Matrix bad = Matrix::Zero(1, 1);
        bad(0, 0) = NAN;
        CHECK_THROWS_WITH_AS(adam_step(s, p, Gradients{0.0, bad, Matrix::Zero(1, 1), {}}, cfg), "diverged",
                             RuntimeError);
    }
}

TEST_CASE("train") {
    SUBCASE("separable cliques are learned") {
        const Dataset d = generate_synthetic(SyntheticSpec{1, 60, 2, 1.0, 0.0, 4, 3.0});
        TrainingConfig cfg;
        cfg.epochs = 100;
        const PredictionMatrix pred = predict(train(d.graph, d.splits, cfg), d.graph);
        std::size_t correct = 0;
        for (NodeIndex i : d.splits.train) {
            correct += pred.argmax(i) == d.graph.labels()[i] ? 1 : 0;
        }
        CHECK(static_cast<double>(correct) / static_cast<double>(d.splits.train.size()) >= 0.95);
    }
    SUBCASE("epochs = 0 rejected") {
        const Dataset d = generate_synthetic(SyntheticSpec{1, 20, 2, 0.5, 0.1, 2, 1.0});
        TrainingConfig cfg;
        cfg.epochs = 0;
        CHECK_THROWS_AS(train(d.graph, d.splits, cfg), ValidationError);
    }
    SUBCASE("same seed, bit-identical weights") {
        const Dataset d = generate_synthetic(SyntheticSpec{2, 50, 2, 0.3, 0.03, 4, 1.0});
        TrainingConfig cfg;
        cfg.epochs = 30;
        cfg.seed = 9;
        CHECK(train(d.graph, d.splits, cfg) == train(d.graph, d.splits, cfg));
    }
}

TEST_CASE("checkpoints") {
    const Dataset d = generate_synthetic(SyntheticSpec{4, 30, 3, 0.4, 0.05, 5, 1.0});
    TrainingConfig cfg;
    cfg.epochs = 10;
    const GcnParameters p = train(d.graph, d.splits, cfg);
    TempDir dir;

    SUBCASE("round trip reproduces predictions bit-exactly") {
        save_checkpoint(p, dir / "ckpt.json");
        const GcnParameters q = load_checkpoint(dir / "ckpt.json");
        CHECK(q == p);
        CHECK(predict(q, d.graph).probs == predict(p, d.graph).probs);
    }
    SUBCASE("corrupt file") {
        crfsmooth::testing::write_text(dir / "bad.json", "{\"meta\": {\"D\": 5,");
        CHECK_THROWS_AS(load_checkpoint(dir / "bad.json"), ValidationError);
    }
    SUBCASE("wrong row count") {
        crfsmooth::testing::write_text(dir / "bad.json",
                                       R"({"meta":{"D":2,"H":1,"C":2},"w1":[[1.0]],"w2":[[1.0,2.0]]})");
        CHECK_THROWS_AS(load_checkpoint(dir / "bad.json"), ValidationError);
    }
    SUBCASE("checkpoint does not fit the dataset") {
        CHECK_THROWS_AS(check_compatible(init_parameters(0, 7, 4, 3), d.graph), ValidationError);
        CHECK_THROWS_AS(check_compatible(init_parameters(0, 5, 4, 2), d.graph), ValidationError);
        CHECK_NOTHROW(check_compatible(p, d.graph));
    }
}

TEST_CASE("GcnModel matches forward and reuses cached adjacency") {
    Rng rng(8);
    const Graph g = random_graph(rng, 10, 3, 2, 0.3);
    const GcnParameters p = init_parameters(1, 3, 4, 2);
    const GcnModel model(p, 2);
    CHECK(model(g).probs == forward(p, g).probs);
    const Graph shifted = g.with_features(g.features().array() + 0.5);
    CHECK(model.adjacency(g) == model.adjacency(shifted));
    const Graph other = g.with_edges({{0, 1}});
    CHECK(model.adjacency(other) != model.adjacency(g));
    CHECK(model(other).probs == forward(p, other).probs);
}

#include "crfsmooth/gcn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

namespace crfsmooth {

using nlohmann::json;

void GcnParameters::validate() const {
    if (w1.rows() < 1 || w1.cols() < 1 || w2.cols() < 1) {
        throw ValidationError("GCN weights must be non-empty");
    }
    if (w1.cols() != w2.rows()) {
        throw ValidationError("GCN weight shapes disagree: w1 is " + std::to_string(w1.rows()) + "x" +
                              std::to_string(w1.cols()) + ", w2 is " + std::to_string(w2.rows()) + "x" +
                              std::to_string(w2.cols()));
    }
    if (!w1.allFinite() || !w2.allFinite()) {
        throw ValidationError("GCN weights contain non-finite values");
    }
}

bool operator==(const GcnParameters& a, const GcnParameters& b) {
    return a.w1.rows() == b.w1.rows() && a.w1.cols() == b.w1.cols() && a.w2.rows() == b.w2.rows() &&
           a.w2.cols() == b.w2.cols() && a.w1 == b.w1 && a.w2 == b.w2;
}

int PredictionMatrix::argmax(std::size_t node) const {
    const auto row = probs.row(static_cast<Eigen::Index>(node));
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < row.size(); ++c) {
        if (row(c) > row(best)) {
            best = c;
        }
    }
    return static_cast<int>(best);
}

bool PredictionMatrix::is_row_stochastic(double tol) const {
    for (Eigen::Index i = 0; i < probs.rows(); ++i) {
        if ((probs.row(i).array() < 0.0).any() || std::abs(probs.row(i).sum() - 1.0) > tol) {
            return false;
        }
    }
    return true;
}

void TrainingConfig::validate() const {
    if (epochs < 1) {
        throw ValidationError("epochs must be >= 1");
    }
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
        throw ValidationError("learning_rate must be > 0");
    }
    if (hidden_dim < 1) {
        throw ValidationError("hidden_dim must be >= 1");
    }
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(eps > 0.0)) {
        throw ValidationError("invalid Adam hyperparameters");
    }
}

AdamState AdamState::zeros_like(const GcnParameters& params) {
    AdamState s;
    s.m_w1 = Matrix::Zero(params.w1.rows(), params.w1.cols());
    s.v_w1 = s.m_w1;
    s.m_w2 = Matrix::Zero(params.w2.rows(), params.w2.cols());
    s.v_w2 = s.m_w2;
    return s;
}

GcnParameters init_parameters(std::uint64_t seed, std::size_t input_dim, std::size_t hidden_dim,
                              std::size_t num_classes) {
    if (input_dim < 1 || hidden_dim < 1 || num_classes < 1) {
        throw ValidationError("init_parameters: all dimensions must be >= 1");
    }
    auto glorot = [](Rng rng, std::size_t fan_in, std::size_t fan_out) {
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        Matrix w(static_cast<Eigen::Index>(fan_in), static_cast<Eigen::Index>(fan_out));
        for (Eigen::Index i = 0; i < w.rows(); ++i) {
            for (Eigen::Index j = 0; j < w.cols(); ++j) {
                w(i, j) = (2.0 * uniform01(rng) - 1.0) * bound;
            }
        }
        return w;
    };
    return GcnParameters{glorot(make_rng(seed, {0}), input_dim, hidden_dim),
                         glorot(make_rng(seed, {1}), hidden_dim, num_classes)};
}

namespace {

void check_shapes(const GcnParameters& params, const SparseMatrix& adjacency, const Matrix& features) {
    if (static_cast<std::size_t>(features.cols()) != params.input_dim()) {
        throw ValidationError("feature dimension " + std::to_string(features.cols()) + " does not match model input " +
                              std::to_string(params.input_dim()));
    }
    if (adjacency.rows() != features.rows() || adjacency.cols() != features.rows()) {
        throw ValidationError("adjacency and feature matrix disagree on node count");
    }
}

// Row-wise log-softmax with max subtraction.
Matrix log_softmax(const Matrix& logits) {
    Matrix out(logits.rows(), logits.cols());
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const double m = logits.row(i).maxCoeff();
        const double lse = m + std::log((logits.row(i).array() - m).exp().sum());
        out.row(i) = logits.row(i).array() - lse;
    }
    return out;
}

}  // namespace

PredictionMatrix forward(const GcnParameters& params, const SparseMatrix& adjacency, const Matrix& features) {
    check_shapes(params, adjacency, features);
    const Matrix z1 = adjacency * (features * params.w1);
    const Matrix h = z1.cwiseMax(0.0);
    const Matrix z2 = adjacency * (h * params.w2);
    return PredictionMatrix{log_softmax(z2).array().exp().matrix()};
}

PredictionMatrix forward(const GcnParameters& params, const Graph& graph) {
    return forward(params, normalize_adjacency(graph), graph.features());
}

Gradients loss_and_gradients(const GcnParameters& params, const SparseMatrix& adjacency, const Matrix& features,
                             std::span<const int> labels, std::span<const NodeIndex> node_idx) {
    check_shapes(params, adjacency, features);
    if (node_idx.empty()) {
        throw ValidationError("loss_and_gradients: empty node index list");
    }
    if (labels.size() != static_cast<std::size_t>(features.rows())) {
        throw ValidationError("loss_and_gradients: label count does not match node count");
    }

    const Matrix z1 = adjacency * (features * params.w1);
    const Matrix h = z1.cwiseMax(0.0);
    const Matrix ah = adjacency * h;
    const Matrix logp = log_softmax(ah * params.w2);

    const double scale = 1.0 / static_cast<double>(node_idx.size());
    Matrix dz2 = Matrix::Zero(logp.rows(), logp.cols());
    double loss = 0.0;
    for (NodeIndex i : node_idx) {
        if (i >= static_cast<std::size_t>(logp.rows())) {
            throw ValidationError("loss_and_gradients: node index out of range");
        }
        const int y = labels[i];
        loss -= logp(i, y);
        dz2.row(i) += logp.row(i).array().exp().matrix() * scale;
        dz2(i, y) -= scale;
    }

    Gradients g;
    g.loss = loss * scale;
    g.w2 = ah.transpose() * dz2;
    // Â is symmetric, so Âᵀ = Â in every backward product.
    const Matrix dh = adjacency * (dz2 * params.w2.transpose());
    const Matrix dz1 = dh.array() * (z1.array() > 0.0).cast<double>();
    const Matrix adz1 = adjacency * dz1;
    g.w1 = features.transpose() * adz1;
    g.x = adz1 * params.w1.transpose();
    return g;
}

Gradients loss_and_gradients(const GcnParameters& params, const Graph& graph, std::span<const NodeIndex> node_idx) {
    return loss_and_gradients(params, normalize_adjacency(graph), graph.features(), graph.labels(), node_idx);
}

void adam_step(AdamState& state, GcnParameters& params, const Gradients& grads, const TrainingConfig& config) {
    if (!std::isfinite(grads.loss) || !grads.w1.allFinite() || !grads.w2.allFinite()) {
        throw RuntimeError("diverged");
    }
    if (grads.w1.rows() != params.w1.rows() || grads.w1.cols() != params.w1.cols() ||
        grads.w2.rows() != params.w2.rows() || grads.w2.cols() != params.w2.cols() ||
        state.m_w1.rows() != params.w1.rows() || state.m_w2.cols() != params.w2.cols()) {
        throw ValidationError("adam_step: shape mismatch");
    }
    ++state.step;
    const double b1 = config.beta1;
    const double b2 = config.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
    auto update = [&](Matrix& w, Matrix& m, Matrix& v, const Matrix& g) {
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g.cwiseProduct(g);
        w.array() -= config.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + config.eps);
    };
    update(params.w1, state.m_w1, state.v_w1, grads.w1);
    update(params.w2, state.m_w2, state.v_w2, grads.w2);
}

GcnParameters train(const Graph& graph, const DatasetSplits& splits, const TrainingConfig& config) {
    config.validate();
    splits.validate(graph.num_nodes());

    const SparseMatrix adjacency = normalize_adjacency(graph);
    GcnParameters params = init_parameters(config.seed, graph.feature_dim(), config.hidden_dim,
                                           static_cast<std::size_t>(graph.num_classes()));
    AdamState state = AdamState::zeros_like(params);

    const auto& select_idx = splits.val.empty() ? splits.train : splits.val;
    auto selection_accuracy = [&](const GcnParameters& p) {
        const PredictionMatrix pred = forward(p, adjacency, graph.features());
        std::size_t correct = 0;
        for (NodeIndex i : select_idx) {
            correct += pred.argmax(i) == graph.labels()[i] ? 1 : 0;
        }
        return static_cast<double>(correct) / static_cast<double>(select_idx.size());
    };

    GcnParameters best = params;
    double best_acc = -1.0;
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        const Gradients grads =
            loss_and_gradients(params, adjacency, graph.features(), graph.labels(), splits.train);
        adam_step(state, params, grads, config);
        const double acc = selection_accuracy(params);
        if (acc >= best_acc) {
            best_acc = acc;
            best = params;
        }
    }
    return best;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

json matrix_to_json(const Matrix& m) {
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

Matrix matrix_from_json(const json& j, std::size_t rows, std::size_t cols, const char* name) {
    if (!j.is_array() || j.size() != rows) {
        throw ValidationError(std::string("checkpoint: \"") + name + "\" must have " + std::to_string(rows) + " rows");
    }
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (std::size_t i = 0; i < rows; ++i) {
        const json& row = j[i];
        if (!row.is_array() || row.size() != cols) {
            throw ValidationError(std::string("checkpoint: row ") + std::to_string(i) + " of \"" + name +
                                  "\" must have " + std::to_string(cols) + " columns");
        }
        for (std::size_t c = 0; c < cols; ++c) {
            if (!row[c].is_number()) {
                throw ValidationError(std::string("checkpoint: non-numeric entry in \"") + name + "\"");
            }
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = row[c].get<double>();
        }
    }
    return m;
}

}  // namespace

void save_checkpoint(const GcnParameters& params, const std::filesystem::path& path) {
    params.validate();
    json j;
    j["meta"] = {{"D", params.input_dim()},
                 {"H", params.hidden_dim()},
                 {"C", params.num_classes()},
                 {"normalization", kNormalizationTag}};
    j["w1"] = matrix_to_json(params.w1);
    j["w2"] = matrix_to_json(params.w2);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw RuntimeError("cannot write checkpoint " + path.string());
    }
    out << j.dump() << '\n';
    if (!out) {
        throw RuntimeError("write failed for " + path.string());
    }
}

GcnParameters load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ValidationError("missing checkpoint " + path.string());
    }
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ValidationError("checkpoint parse error: " + std::string(e.what()));
    }
    if (!j.is_object() || !j.contains("meta") || !j["meta"].is_object()) {
        throw ValidationError("checkpoint: missing \"meta\"");
    }
    const json& meta = j["meta"];
    auto dim = [&](const char* key) {
        if (!meta.contains(key) || !meta[key].is_number_integer() || meta[key] < 1) {
            throw ValidationError(std::string("checkpoint: meta.") + key + " must be a positive integer");
        }
        return meta[key].get<std::size_t>();
    };
    const std::size_t d = dim("D"), h = dim("H"), c = dim("C");
    if (meta.contains("normalization") && meta["normalization"] != kNormalizationTag) {
        throw ValidationError("checkpoint: unsupported normalization " + meta["normalization"].dump());
    }
    if (!j.contains("w1") || !j.contains("w2")) {
        throw ValidationError("checkpoint: missing weights");
    }
    GcnParameters params{matrix_from_json(j["w1"], d, h, "w1"), matrix_from_json(j["w2"], h, c, "w2")};
    params.validate();
    return params;
}

void check_compatible(const GcnParameters& params, const Graph& graph) {
    if (params.input_dim() != graph.feature_dim()) {
        throw ValidationError("checkpoint expects " + std::to_string(params.input_dim()) +
                              " features, dataset has " + std::to_string(graph.feature_dim()));
    }
    if (params.num_classes() != static_cast<std::size_t>(graph.num_classes())) {
        throw ValidationError("checkpoint expects " + std::to_string(params.num_classes()) +
                              " classes, dataset has " + std::to_string(graph.num_classes()));
    }
}

// ---------------------------------------------------------------------------

GcnModel::GcnModel(GcnParameters params, std::size_t cache_capacity)
    : params_(std::move(params)), capacity_(std::max<std::size_t>(1, cache_capacity)) {
    params_.validate();
}

std::shared_ptr<const SparseMatrix> GcnModel::adjacency(const Graph& graph) const {
    const std::uint64_t h = graph.structure_hash();
    {
        std::lock_guard lock(mutex_);
        for (const CacheEntry& e : cache_) {
            if (e.hash == h && e.num_nodes == graph.num_nodes() && e.edges == graph.edges()) {
                return e.adjacency;
            }
        }
    }
    auto adj = std::make_shared<const SparseMatrix>(normalize_adjacency(graph));
    std::lock_guard lock(mutex_);
    if (cache_.size() >= capacity_) {
        cache_.pop_front();
    }
    cache_.push_back(CacheEntry{h, graph.num_nodes(), graph.edges(), adj});
    return adj;
}

PredictionMatrix GcnModel::operator()(const Graph& graph) const {
    return forward(params_, *adjacency(graph), graph.features());
}

}  // namespace crfsmooth

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <deque>
#include <memory>
#include <mutex>
#include <span>
#include <string>

#include "crfsmooth/common.hpp"
#include "crfsmooth/graph.hpp"

namespace crfsmooth {

inline constexpr const char* kNormalizationTag = "sym-renorm";

/// Weights of a two-layer GCN without biases: softmax(Â ReLU(Â X W1) W2).
struct GcnParameters {
    Matrix w1;  // D x H
    Matrix w2;  // H x C

    std::size_t input_dim() const noexcept { return static_cast<std::size_t>(w1.rows()); }
    std::size_t hidden_dim() const noexcept { return static_cast<std::size_t>(w1.cols()); }
    std::size_t num_classes() const noexcept { return static_cast<std::size_t>(w2.cols()); }

    /// Shapes agree and every entry is finite.
    void validate() const;

    friend bool operator==(const GcnParameters& a, const GcnParameters& b);
};

/// n x C matrix whose rows are class distributions.
struct PredictionMatrix {
    Matrix probs;

    std::size_t num_nodes() const noexcept { return static_cast<std::size_t>(probs.rows()); }
    std::size_t num_classes() const noexcept { return static_cast<std::size_t>(probs.cols()); }

    /// Index of the row maximum; ties go to the lowest class.
    int argmax(std::size_t node) const;

    /// Entries non-negative and every row sums to 1 within tol.
    bool is_row_stochastic(double tol = 1e-9) const;
};

struct TrainingConfig {
    std::size_t epochs{300};
    double learning_rate{0.01};
    double beta1{0.9};
    double beta2{0.999};
    double eps{1e-8};
    std::uint64_t seed{0};
    std::size_t hidden_dim{16};

    void validate() const;
};

struct AdamState {
    Matrix m_w1, v_w1, m_w2, v_w2;
    std::uint64_t step{0};

    static AdamState zeros_like(const GcnParameters& params);
};

struct Gradients {
    double loss{0.0};
    Matrix w1;
    Matrix w2;
    Matrix x;
};

/// Glorot-uniform weights, deterministic in seed.
GcnParameters init_parameters(std::uint64_t seed, std::size_t input_dim, std::size_t hidden_dim,
                              std::size_t num_classes);

/// Forward pass with a precomputed normalized adjacency.
PredictionMatrix forward(const GcnParameters& params, const SparseMatrix& adjacency, const Matrix& features);
PredictionMatrix forward(const GcnParameters& params, const Graph& graph);
inline PredictionMatrix predict(const GcnParameters& params, const Graph& graph) { return forward(params, graph); }

/// Mean cross-entropy over node_idx and its gradients with respect to both
/// weight matrices and the features.
Gradients loss_and_gradients(const GcnParameters& params, const SparseMatrix& adjacency, const Matrix& features,
                             std::span<const int> labels, std::span<const NodeIndex> node_idx);
Gradients loss_and_gradients(const GcnParameters& params, const Graph& graph, std::span<const NodeIndex> node_idx);

/// Bias-corrected Adam. Throws RuntimeError("diverged") on non-finite gradients.
void adam_step(AdamState& state, GcnParameters& params, const Gradients& grads, const TrainingConfig& config);

/// Full-batch training; returns the weights of the epoch with the best
/// validation accuracy (later epoch on ties).
GcnParameters train(const Graph& graph, const DatasetSplits& splits, const TrainingConfig& config);

void save_checkpoint(const GcnParameters& params, const std::filesystem::path& path);
GcnParameters load_checkpoint(const std::filesystem::path& path);

/// Throws ValidationError if the checkpoint cannot be applied to graph.
void check_compatible(const GcnParameters& params, const Graph& graph);

/*
 * A trained classifier wrapped as a pure prediction function. Normalized
 * adjacencies are cached by edge-set content so feature-only perturbations of
 * one graph reuse a single normalization. Safe to call from many threads.
 */
class GcnModel {
public:
    explicit GcnModel(GcnParameters params, std::size_t cache_capacity = 16);

    PredictionMatrix operator()(const Graph& graph) const;

    const GcnParameters& parameters() const noexcept { return params_; }

    std::shared_ptr<const SparseMatrix> adjacency(const Graph& graph) const;

private:
    struct CacheEntry {
        std::uint64_t hash;
        std::size_t num_nodes;
        EdgeList edges;
        std::shared_ptr<const SparseMatrix> adjacency;
    };

    GcnParameters params_;
    std::size_t capacity_;
    mutable std::mutex mutex_;
    mutable std::deque<CacheEntry> cache_;  // oldest first
};

using PredictionFn = std::function<PredictionMatrix(const Graph&)>;

}  // namespace crfsmooth

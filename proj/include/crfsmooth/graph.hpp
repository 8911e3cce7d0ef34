#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <utility>
#include <vector>

#include <Eigen/SparseCore>

#include "crfsmooth/common.hpp"

namespace crfsmooth {

using NodeIndex = std::uint32_t;

/// Undirected edge stored with u < v.
struct Edge {
    NodeIndex u{0};
    NodeIndex v{0};

    auto operator<=>(const Edge&) const = default;
};

using EdgeList = std::vector<Edge>;
using Labels = std::vector<int>;
using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

/*
 * Immutable node-classification input: a simple undirected graph, a dense
 * n x D feature matrix, and one class label per node.
 *
 * Edges, features and labels are held behind shared pointers so perturbed
 * copies (a structural neighbor shares features, a feature neighbor shares
 * edges) cost only the part that actually changed.
 */
class Graph {
public:
    Graph() = default;

    /// Validates every invariant; edges may come in any order and either
    /// orientation but must be unique after symmetrization.
    Graph(std::size_t num_nodes, EdgeList edges, Matrix features, Labels labels, int num_classes);

    std::size_t num_nodes() const noexcept { return num_nodes_; }
    std::size_t num_edges() const noexcept { return edges_->size(); }
    std::size_t feature_dim() const noexcept { return static_cast<std::size_t>(features_->cols()); }
    int num_classes() const noexcept { return num_classes_; }

    /// Sorted, u < v, no duplicates.
    const EdgeList& edges() const noexcept { return *edges_; }
    const Matrix& features() const noexcept { return *features_; }
    const Labels& labels() const noexcept { return *labels_; }

    bool has_edge(NodeIndex a, NodeIndex b) const;

    /// Same features and labels, new edge set (validated).
    Graph with_edges(EdgeList edges) const;
    /// Same edges and labels, new features (validated).
    Graph with_features(Matrix features) const;

    /// Content hash of (n, edge set); keys the normalized-adjacency cache.
    std::uint64_t structure_hash() const noexcept { return structure_hash_; }

    friend bool operator==(const Graph& a, const Graph& b);

private:
    std::size_t num_nodes_{0};
    int num_classes_{0};
    std::shared_ptr<const EdgeList> edges_ = std::make_shared<EdgeList>();
    std::shared_ptr<const Matrix> features_ = std::make_shared<Matrix>();
    std::shared_ptr<const Labels> labels_ = std::make_shared<Labels>();
    std::uint64_t structure_hash_{0};

    static EdgeList canonical_edges(std::size_t num_nodes, EdgeList edges);
    void validate_features(const Matrix& features) const;
    void rehash() noexcept;
};

struct DatasetSplits {
    std::vector<NodeIndex> train;
    std::vector<NodeIndex> val;
    std::vector<NodeIndex> test;

    /// Disjoint, in range, non-empty train set.
    void validate(std::size_t num_nodes) const;

    friend bool operator==(const DatasetSplits&, const DatasetSplits&) = default;
};

struct Dataset {
    Graph graph;
    DatasetSplits splits;
};

/// Reads meta.json, edges.csv, features.csv, labels.csv and splits.json.
/// Errors name the file and line.
Dataset load_dataset(const std::filesystem::path& dir);

/// Writes the same five files; output is byte-stable for identical input.
void save_dataset(const Graph& graph, const DatasetSplits& splits, const std::filesystem::path& dir);

struct SyntheticSpec {
    std::uint64_t seed{0};
    std::size_t num_nodes{200};
    int num_classes{2};
    double p_in{0.1};
    double p_out{0.01};
    std::size_t feature_dim{8};
    double class_shift{1.0};
};

/// Stochastic block model with equal-size classes, Gaussian features shifted
/// along each class's one-hot direction, and a 10/10/80 split.
Dataset generate_synthetic(const SyntheticSpec& spec);

/// D^{-1/2} (A + I) D^{-1/2}, D the degree matrix of A + I.
SparseMatrix normalize_adjacency(const Graph& graph);

/// Number of differing adjacency positions i <= j.
std::size_t hamming_distance(const Graph& a, const Graph& b);

/// Fraction of edges joining same-label endpoints (0 for an edgeless graph).
double edge_homophily(const Graph& graph);

}  // namespace crfsmooth

#pragma once

#include <cstddef>
#include <cstdint>

#include "crfsmooth/common.hpp"
#include "crfsmooth/graph.hpp"

namespace crfsmooth {

/// Structural ball radius r = floor(p_r * m).
struct StructuralSampleConfig {
    std::size_t radius{0};

    static StructuralSampleConfig from_ratio(double p_r, std::size_t num_edges);
};

/// L2 radius over the flattened n x D feature matrix.
struct FeatureSampleConfig {
    double radius{0.1};
};

/// A perturbed input b drawn around a, with d(a, b) and the weight g_ab.
struct NeighborSample {
    Graph graph;
    double distance{0.0};
    double similarity{0.0};
};

/// d ~ Binomial(r, 1/2), drawn by inverting the CDF of C(r,d)/2^r.
std::size_t sample_distance(Rng& rng, std::size_t radius);

/// Flips d uniformly chosen off-diagonal positions (d from sample_distance).
/// similarity is prior_similarity(r, d).
NeighborSample sample_structural_neighbor(Rng& rng, const Graph& graph, const StructuralSampleConfig& config);

/// X + delta with delta uniform in the L2 ball of the configured radius.
/// similarity is left at 0; the caller's similarity mode fills it in.
NeighborSample sample_feature_neighbor(Rng& rng, const Graph& graph, const FeatureSampleConfig& config);

/// ln C(n, k) via log-gamma.
double log_binomial_coefficient(std::uint64_t n, std::uint64_t k);

/// C(r, d) / 2^r, computed in log space; underflows to 0.
double prior_similarity(std::uint64_t radius, std::uint64_t distance);

/// Binary entropy in bits.
double binary_entropy(double eps);

/// Number of upper-triangular adjacency positions including the diagonal.
constexpr std::uint64_t adjacency_positions(std::uint64_t n) noexcept { return n * (n + 1) / 2; }

/*
 * Lower bound on the number of graphs within Hamming distance r of any graph
 * on n nodes:
 *
 *     2^{H(eps) n(n+1)/2} / sqrt(4 n(n+1) eps (1 - eps)),  eps = 2r / (n(n+1)).
 *
 * Requires 1 <= r < n(n+1)/2. The log2 form stays finite for large n.
 */
double log2_ball_lower_bound(std::uint64_t n, std::uint64_t radius);
double ball_lower_bound(std::uint64_t n, std::uint64_t radius);

/// Exact ball size by generating every adjacency pattern over the n(n+1)/2
/// positions. Test oracle; refuses more than 24 positions.
std::uint64_t enumerate_hamming_ball(const Graph& graph, std::uint64_t radius);

inline constexpr std::uint64_t kEnumerationGuard = 24;

}  // namespace crfsmooth

#include "crfsmooth/sampler.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <iterator>
#include <numbers>
#include <unordered_set>

#include <boost/math/special_functions/gamma.hpp>

namespace crfsmooth {

StructuralSampleConfig StructuralSampleConfig::from_ratio(double p_r, std::size_t num_edges) {
    if (!(p_r > 0.0 && p_r <= 1.0)) {
        throw ValidationError("p_r must be in (0, 1]");
    }
    return StructuralSampleConfig{static_cast<std::size_t>(std::floor(p_r * static_cast<double>(num_edges)))};
}

double log_binomial_coefficient(std::uint64_t n, std::uint64_t k) {
    if (k > n) {
        throw ValidationError("log_binomial_coefficient: k > n");
    }
    if (k == 0 || k == n) {
        return 0.0;
    }
    // boost::math::lgamma does not touch the global signgam, unlike std::lgamma.
    const auto lg = [](std::uint64_t x) { return boost::math::lgamma(static_cast<double>(x) + 1.0); };
    return lg(n) - lg(k) - lg(n - k);
}

double prior_similarity(std::uint64_t radius, std::uint64_t distance) {
    if (distance > radius) {
        throw ValidationError("prior_similarity: distance exceeds radius");
    }
    return std::exp(log_binomial_coefficient(radius, distance) - static_cast<double>(radius) * std::numbers::ln2);
}

std::size_t sample_distance(Rng& rng, std::size_t radius) {
    if (radius == 0) {
        return 0;
    }
    const double u = uniform01(rng);
    double cumulative = 0.0;
    for (std::size_t d = 0; d < radius; ++d) {
        cumulative += prior_similarity(radius, d);
        if (u < cumulative) {
            return d;
        }
    }
    return radius;
}

namespace {

// Maps k in [0, n(n-1)/2) to the k-th pair (i, j), i < j, in row-major order.
Edge pair_from_index(std::uint64_t k, std::uint64_t n) {
    // Pairs in rows before i.
    auto row_start = [n](std::uint64_t i) { return i * (2 * n - i - 1) / 2; };
    std::uint64_t lo = 0, hi = n - 1;
    while (lo + 1 < hi) {
        const std::uint64_t mid = (lo + hi) / 2;
        if (row_start(mid) <= k) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    const std::uint64_t j = lo + 1 + (k - row_start(lo));
    return Edge{static_cast<NodeIndex>(lo), static_cast<NodeIndex>(j)};
}

}  // namespace

NeighborSample sample_structural_neighbor(Rng& rng, const Graph& graph, const StructuralSampleConfig& config) {
    const std::uint64_t n = graph.num_nodes();
    const std::uint64_t positions = n < 2 ? 0 : n * (n - 1) / 2;
    if (config.radius > positions) {
        throw ValidationError("radius " + std::to_string(config.radius) + " exceeds the " + std::to_string(positions) +
                              " available off-diagonal positions");
    }
    const std::size_t d = sample_distance(rng, config.radius);

    // Floyd's algorithm: d distinct indices, uniform over all d-subsets.
    std::unordered_set<std::uint64_t> chosen;
    chosen.reserve(d * 2);
    for (std::uint64_t top = positions - d; top < positions; ++top) {
        std::uniform_int_distribution<std::uint64_t> pick(0, top);
        const std::uint64_t t = pick(rng);
        if (!chosen.insert(t).second) {
            chosen.insert(top);
        }
    }
    EdgeList flips;
    flips.reserve(d);
    for (std::uint64_t k : chosen) {
        flips.push_back(pair_from_index(k, n));
    }
    std::sort(flips.begin(), flips.end());

    EdgeList toggled;
    toggled.reserve(graph.num_edges() + d);
    std::set_symmetric_difference(graph.edges().begin(), graph.edges().end(), flips.begin(), flips.end(),
                                  std::back_inserter(toggled));

    return NeighborSample{graph.with_edges(std::move(toggled)), static_cast<double>(d),
                          prior_similarity(config.radius, d)};
}

NeighborSample sample_feature_neighbor(Rng& rng, const Graph& graph, const FeatureSampleConfig& config) {
    if (!(config.radius >= 0.0) || !std::isfinite(config.radius)) {
        throw ValidationError("feature radius must be finite and non-negative");
    }
    const Matrix& x = graph.features();
    if (x.size() == 0 || config.radius == 0.0) {
        return NeighborSample{graph, 0.0, 0.0};
    }
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix delta(x.rows(), x.cols());
    double norm = 0.0;
    do {
        for (Eigen::Index i = 0; i < delta.size(); ++i) {
            delta.data()[i] = normal(rng);
        }
        norm = delta.norm();
    } while (!(norm > 0.0));
    const double magnitude = config.radius * std::pow(uniform01(rng), 1.0 / static_cast<double>(x.size()));
    delta *= magnitude / norm;
    const double distance = std::min(delta.norm(), config.radius);
    return NeighborSample{graph.with_features(x + delta), distance, 0.0};
}

double binary_entropy(double eps) {
    if (eps <= 0.0 || eps >= 1.0) {
        return 0.0;
    }
    return -eps * std::log2(eps) - (1.0 - eps) * std::log2(1.0 - eps);
}

double log2_ball_lower_bound(std::uint64_t n, std::uint64_t radius) {
    const std::uint64_t positions = adjacency_positions(n);
    if (radius < 1 || radius >= positions) {
        throw ValidationError("degenerate epsilon: need 1 <= r < n(n+1)/2");
    }
    const double eps = static_cast<double>(radius) / static_cast<double>(positions);
    const double nn1 = static_cast<double>(n) * static_cast<double>(n + 1);
    return binary_entropy(eps) * nn1 / 2.0 - 0.5 * std::log2(4.0 * nn1 * eps * (1.0 - eps));
}

double ball_lower_bound(std::uint64_t n, std::uint64_t radius) {
    return std::exp2(log2_ball_lower_bound(n, radius));
}

std::uint64_t enumerate_hamming_ball(const Graph& graph, std::uint64_t radius) {
    const std::uint64_t n = graph.num_nodes();
    const std::uint64_t positions = adjacency_positions(n);
    if (positions > kEnumerationGuard) {
        throw ValidationError("enumeration guard exceeded: " + std::to_string(positions) + " positions > " +
                              std::to_string(kEnumerationGuard));
    }
    // Bit p of `base` is A[i][j] for the p-th position (i <= j, row-major).
    std::uint64_t base = 0;
    std::uint64_t p = 0;
    for (std::uint64_t i = 0; i < n; ++i) {
        for (std::uint64_t j = i; j < n; ++j, ++p) {
            if (i != j && graph.has_edge(static_cast<NodeIndex>(i), static_cast<NodeIndex>(j))) {
                base |= std::uint64_t{1} << p;
            }
        }
    }
    std::uint64_t count = 0;
    for (std::uint64_t pattern = 0; pattern < (std::uint64_t{1} << positions); ++pattern) {
        if (static_cast<std::uint64_t>(std::popcount(pattern ^ base)) <= radius) {
            ++count;
        }
    }
    return count;
}

}  // namespace crfsmooth

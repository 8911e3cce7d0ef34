#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "crfsmooth/gcn.hpp"
#include "crfsmooth/graph.hpp"
#include "crfsmooth/sampler.hpp"

namespace crfsmooth {

enum class SimilarityMode { Cosine, BinomialPrior, Uniform };

/// Which ball the neighbors are drawn from.
enum class Perturbation { Feature, Structure };

std::string to_string(SimilarityMode mode);
std::string to_string(Perturbation perturbation);

struct CrfConfig {
    double sigma{0.9};
    std::size_t num_samples{5};
    std::size_t num_iterations{2};
    SimilarityMode mode{SimilarityMode::Cosine};
    Perturbation perturbation{Perturbation::Feature};
    double p_r{0.02};
    double feature_radius{0.1};
    std::uint64_t seed{0};

    /// Throws ValidationError naming the offending field.
    void validate() const;

    /// sigma = 0, one iteration, unit similarities.
    static CrfConfig randomized_smoothing(std::size_t num_samples, double feature_radius, std::uint64_t seed);

    /// Accepts the keys of to_json(); "preset": "randomized-smoothing" expands
    /// to sigma = 0, K = 1, uniform mode before the other keys are applied.
    static CrfConfig from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

/// <vec X, vec Y> / (|X| |Y|), clamped to [-1, 1]; 0 when either norm is 0.
double cosine_similarity(const Matrix& x, const Matrix& y);

/*
 * One mean-field step for a single CRF node:
 *
 *     (sigma * base + (1 - sigma) * sum_b g_b * neighbor_b)
 *   / (sigma + (1 - sigma) * sum_b g_b)
 *
 * Throws RuntimeError("degenerate weights") when the denominator is 0.
 */
PredictionMatrix update_rule(double sigma, const PredictionMatrix& base, std::span<const double> weights,
                             std::span<const PredictionMatrix> neighbors);

struct SmoothResult {
    PredictionMatrix predictions;
    std::uint64_t model_calls{0};
    // Cosine mode only: smallest raw cosine seen and how many were clamped to 0.
    double min_raw_similarity{1.0};
    std::uint64_t clamped_similarities{0};
};

/*
 * Depth-K sampling tree of model calls. At every tree node a the model is
 * evaluated, L neighbors are drawn from the ball around a, each is smoothed
 * recursively with depth K - 1, and the results are merged with update_rule.
 *
 * Branch i of the tree node at path p draws from make_rng with
 * derive_seed(seed, p + [i]); the root path is empty. The structural radius
 * is fixed from the root graph's edge count. The L root branches run on up
 * to `threads` workers; the output does not depend on the thread count.
 */
SmoothResult smooth(const PredictionFn& model, const Graph& graph, const CrfConfig& config, std::size_t threads = 1);

inline PredictionMatrix smooth_predictions(const PredictionFn& model, const Graph& graph, const CrfConfig& config,
                                           std::size_t threads = 1) {
    return smooth(model, graph, config, threads).predictions;
}

/// Exact number of model calls made by smooth(): 1 + L + ... + L^K.
std::uint64_t model_call_count(std::uint64_t num_samples, std::uint64_t num_iterations);

}  // namespace crfsmooth

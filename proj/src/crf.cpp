#include "crfsmooth/crf.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "crfsmooth/parallel.hpp"

namespace crfsmooth {

using nlohmann::json;

std::string to_string(SimilarityMode mode) {
    switch (mode) {
        case SimilarityMode::Cosine: return "cosine";
        case SimilarityMode::BinomialPrior: return "prior";
        case SimilarityMode::Uniform: return "uniform";
    }
    return "?";
}

std::string to_string(Perturbation perturbation) {
    return perturbation == Perturbation::Feature ? "feature" : "structure";
}

void CrfConfig::validate() const {
    if (!(sigma >= 0.0 && sigma <= 1.0)) {
        throw ValidationError("sigma: must be in [0, 1]");
    }
    if (num_samples < 1) {
        throw ValidationError("num_samples: must be >= 1");
    }
    if (sigma == 0.0 && num_iterations < 1) {
        throw ValidationError("num_iterations: must be >= 1 when sigma = 0");
    }
    if (mode == SimilarityMode::Cosine && perturbation != Perturbation::Feature) {
        throw ValidationError("mode: cosine similarity requires feature perturbation");
    }
    if (mode == SimilarityMode::BinomialPrior && perturbation != Perturbation::Structure) {
        throw ValidationError("mode: prior similarity requires structure perturbation");
    }
    if (perturbation == Perturbation::Structure && !(p_r > 0.0 && p_r <= 1.0)) {
        throw ValidationError("p_r: must be in (0, 1]");
    }
    if (perturbation == Perturbation::Feature && !(feature_radius > 0.0 && std::isfinite(feature_radius))) {
        throw ValidationError("feature_radius: must be finite and > 0");
    }
    model_call_count(num_samples, num_iterations);
}

CrfConfig CrfConfig::randomized_smoothing(std::size_t num_samples, double feature_radius, std::uint64_t seed) {
    CrfConfig c;
    c.sigma = 0.0;
    c.num_samples = num_samples;
    c.num_iterations = 1;
    c.mode = SimilarityMode::Uniform;
    c.perturbation = Perturbation::Feature;
    c.feature_radius = feature_radius;
    c.seed = seed;
    return c;
}

namespace {

double get_real(const json& j, const char* key) {
    if (!j.at(key).is_number()) {
        throw ValidationError(std::string(key) + ": expected a number");
    }
    return j.at(key).get<double>();
}

std::uint64_t get_count(const json& j, const char* key) {
    if (!(j.at(key).is_number_integer() && j.at(key) >= 0)) {
        throw ValidationError(std::string(key) + ": expected a non-negative integer");
    }
    return j.at(key).get<std::uint64_t>();
}

}  // namespace

CrfConfig CrfConfig::from_json(const json& j) {
    if (!j.is_object()) {
        throw ValidationError("crf config: expected a JSON object");
    }
    static const char* const known[] = {"sigma", "num_samples", "num_iterations", "mode", "perturbation",
                                        "p_r",   "feature_radius", "seed", "preset"};
    for (const auto& item : j.items()) {
        if (std::find_if(std::begin(known), std::end(known), [&](const char* k) { return item.key() == k; }) ==
            std::end(known)) {
            throw ValidationError(item.key() + ": unknown crf config field");
        }
    }

    CrfConfig c;
    bool perturbation_given = false;
    if (j.contains("preset")) {
        if (!j["preset"].is_string() || j["preset"] != "randomized-smoothing") {
            throw ValidationError("preset: only \"randomized-smoothing\" is supported");
        }
        c.sigma = 0.0;
        c.num_iterations = 1;
        c.mode = SimilarityMode::Uniform;
    }
    if (j.contains("sigma")) c.sigma = get_real(j, "sigma");
    if (j.contains("num_samples")) c.num_samples = get_count(j, "num_samples");
    if (j.contains("num_iterations")) c.num_iterations = get_count(j, "num_iterations");
    if (j.contains("p_r")) c.p_r = get_real(j, "p_r");
    if (j.contains("feature_radius")) c.feature_radius = get_real(j, "feature_radius");
    if (j.contains("seed")) c.seed = get_count(j, "seed");
    if (j.contains("mode")) {
        const json& m = j["mode"];
        if (m == "cosine") {
            c.mode = SimilarityMode::Cosine;
        } else if (m == "prior") {
            c.mode = SimilarityMode::BinomialPrior;
        } else if (m == "uniform") {
            c.mode = SimilarityMode::Uniform;
        } else {
            throw ValidationError("mode: expected \"cosine\", \"prior\" or \"uniform\"");
        }
    }
    if (j.contains("perturbation")) {
        const json& p = j["perturbation"];
        if (p == "feature") {
            c.perturbation = Perturbation::Feature;
        } else if (p == "structure") {
            c.perturbation = Perturbation::Structure;
        } else {
            throw ValidationError("perturbation: expected \"feature\" or \"structure\"");
        }
        perturbation_given = true;
    }
    if (!perturbation_given) {
        c.perturbation = c.mode == SimilarityMode::BinomialPrior ? Perturbation::Structure : Perturbation::Feature;
    }
    c.validate();
    return c;
}

json CrfConfig::to_json() const {
    return json{{"sigma", sigma},
                {"num_samples", num_samples},
                {"num_iterations", num_iterations},
                {"mode", to_string(mode)},
                {"perturbation", to_string(perturbation)},
                {"p_r", p_r},
                {"feature_radius", feature_radius},
                {"seed", seed}};
}

double cosine_similarity(const Matrix& x, const Matrix& y) {
    if (x.rows() != y.rows() || x.cols() != y.cols()) {
        throw ValidationError("cosine_similarity: shape mismatch");
    }
    const double nx = x.norm();
    const double ny = y.norm();
    if (nx == 0.0 || ny == 0.0) {
        return 0.0;
    }
    const double dot = (x.array() * y.array()).sum();
    return std::clamp(dot / (nx * ny), -1.0, 1.0);
}

PredictionMatrix update_rule(double sigma, const PredictionMatrix& base, std::span<const double> weights,
                             std::span<const PredictionMatrix> neighbors) {
    if (weights.size() != neighbors.size()) {
        throw ValidationError("update_rule: weight and neighbor lists differ in length");
    }
    double weight_sum = 0.0;
    for (double g : weights) {
        if (!(g >= 0.0) || !std::isfinite(g)) {
            throw ValidationError("update_rule: similarities must be finite and >= 0");
        }
        weight_sum += g;
    }
    const double denominator = sigma + (1.0 - sigma) * weight_sum;
    if (!(denominator > 0.0)) {
        throw RuntimeError("degenerate weights");
    }
    Matrix numerator = sigma * base.probs;
    for (std::size_t b = 0; b < neighbors.size(); ++b) {
        if (neighbors[b].probs.rows() != base.probs.rows() || neighbors[b].probs.cols() != base.probs.cols()) {
            throw ValidationError("update_rule: neighbor prediction shape mismatch");
        }
        numerator += ((1.0 - sigma) * weights[b]) * neighbors[b].probs;
    }
    return PredictionMatrix{numerator / denominator};
}

std::uint64_t model_call_count(std::uint64_t num_samples, std::uint64_t num_iterations) {
    if (num_samples < 1) {
        throw ValidationError("model_call_count: L must be >= 1");
    }
    constexpr std::uint64_t limit = std::uint64_t{1} << 62;
    // 1 + L + ... + L^K, accumulated so every partial term is range-checked.
    std::uint64_t total = 1;
    std::uint64_t power = 1;
    for (std::uint64_t k = 1; k <= num_iterations; ++k) {
        if (power > limit / num_samples) {
            throw ValidationError("model_call_count: L^(K+1) exceeds 2^62");
        }
        power *= num_samples;
        total += power;
        if (total > limit) {
            throw ValidationError("model_call_count: L^(K+1) exceeds 2^62");
        }
    }
    return total;
}

namespace {

struct NodeResult {
    PredictionMatrix predictions;
    std::uint64_t model_calls{0};
    double min_raw_similarity{1.0};
    std::uint64_t clamped{0};
};

class TreeSmoother {
public:
    TreeSmoother(const PredictionFn& model, const CrfConfig& config, std::size_t structural_radius)
        : model_(model), config_(config), structural_radius_(structural_radius) {}

    NodeResult run(const Graph& a, std::size_t depth, const std::vector<std::uint64_t>& path,
                   std::size_t threads) const {
        NodeResult out;
        out.predictions = model_(a);
        out.model_calls = 1;
        if (depth == 0) {
            return out;
        }

        const std::size_t num_samples = config_.num_samples;
        std::vector<NodeResult> children(num_samples);
        std::vector<double> weights(num_samples, 0.0);
        std::vector<double> raw(num_samples, 1.0);

        parallel_for(num_samples, threads, [&](std::size_t i) {
            std::vector<std::uint64_t> child_path = path;
            child_path.push_back(i);
            Rng rng(derive_seed(config_.seed, child_path));
            NeighborSample b = draw(rng, a);
            switch (config_.mode) {
                case SimilarityMode::Cosine:
                    raw[i] = cosine_similarity(a.features(), b.graph.features());
                    weights[i] = std::max(0.0, raw[i]);
                    break;
                case SimilarityMode::BinomialPrior:
                    weights[i] = b.similarity;
                    break;
                case SimilarityMode::Uniform:
                    weights[i] = 1.0;
                    break;
            }
            children[i] = run(b.graph, depth - 1, child_path, 1);
        });

        std::vector<PredictionMatrix> neighbor_predictions;
        neighbor_predictions.reserve(num_samples);
        for (std::size_t i = 0; i < num_samples; ++i) {
            out.model_calls += children[i].model_calls;
            out.min_raw_similarity = std::min({out.min_raw_similarity, children[i].min_raw_similarity, raw[i]});
            out.clamped += children[i].clamped + (raw[i] < 0.0 ? 1 : 0);
            neighbor_predictions.push_back(std::move(children[i].predictions));
        }
        out.predictions = update_rule(config_.sigma, out.predictions, weights, neighbor_predictions);
        return out;
    }

private:
    NeighborSample draw(Rng& rng, const Graph& a) const {
        if (config_.perturbation == Perturbation::Structure) {
            return sample_structural_neighbor(rng, a, StructuralSampleConfig{structural_radius_});
        }
        return sample_feature_neighbor(rng, a, FeatureSampleConfig{config_.feature_radius});
    }

    const PredictionFn& model_;
    const CrfConfig& config_;
    std::size_t structural_radius_;
};

}  // namespace

SmoothResult smooth(const PredictionFn& model, const Graph& graph, const CrfConfig& config, std::size_t threads) {
    config.validate();
    const std::size_t radius = config.perturbation == Perturbation::Structure
                                   ? StructuralSampleConfig::from_ratio(config.p_r, graph.num_edges()).radius
                                   : 0;
    TreeSmoother smoother(model, config, radius);
    NodeResult root = smoother.run(graph, config.num_iterations, {}, threads);
    return SmoothResult{std::move(root.predictions), root.model_calls, root.min_raw_similarity, root.clamped};
}

}  // namespace crfsmooth

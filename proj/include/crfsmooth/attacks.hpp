#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <variant>

#include <nlohmann/json.hpp>

#include "crfsmooth/common.hpp"
#include "crfsmooth/gcn.hpp"
#include "crfsmooth/graph.hpp"

namespace crfsmooth {

struct GaussianNoise {
    double psi{0.5};
};

struct PgdFeature {
    double rate{0.15};
    std::size_t steps{40};
};

struct DiceStructure {
    double rate{0.10};
};

struct AttackBudget {
    std::variant<GaussianNoise, PgdFeature, DiceStructure> kind{GaussianNoise{}};
    std::uint64_t seed{0};

    void validate() const;
    std::string kind_name() const;

    /// {"kind": "gaussian"|"pgd"|"dice", "psi"|"rate"|"steps": ..., "seed": ...}
    static AttackBudget from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

struct AttackResult {
    Graph perturbed;
    // Structural attacks.
    std::size_t edges_removed{0};
    std::size_t edges_added{0};
    // Feature attacks.
    double linf_norm{0.0};
    double l2_norm{0.0};

    nlohmann::json summary() const;
};

/// X + psi * Z, Z i.i.d. standard normal.
AttackResult gaussian_feature_attack(Rng& rng, const Graph& graph, double psi);

/*
 * Sign-gradient ascent on the mean cross-entropy of target_idx with respect
 * to the features. eps = rate * (max X - min X), step 2.5 eps / steps, and
 * every iterate is projected back onto the L-infinity ball of radius eps
 * around X. Deterministic; no random start.
 */
AttackResult pgd_feature_attack(const Graph& graph, const GcnParameters& params, double rate, std::size_t steps,
                                std::span<const NodeIndex> target_idx);

/*
 * DICE: delete same-label edges and insert different-label non-edges, chosen
 * uniformly. b = floor(rate * m) flips in total, ceil(b/2) deletions and
 * floor(b/2) insertions; a short pool hands its remainder to the other.
 */
AttackResult dice_structural_attack(Rng& rng, const Graph& graph, double rate);

/// Dispatches on budget.kind; PGD targets target_idx.
AttackResult run_attack(const AttackBudget& budget, const Graph& graph, const GcnParameters& params,
                        std::span<const NodeIndex> target_idx);

}  // namespace crfsmooth

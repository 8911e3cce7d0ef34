#include "crfsmooth/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <iterator>
#include <unordered_set>

namespace crfsmooth {

using nlohmann::json;

void AttackBudget::validate() const {
    std::visit(
        [](const auto& k) {
            using T = std::decay_t<decltype(k)>;
            if constexpr (std::is_same_v<T, GaussianNoise>) {
                if (!(k.psi >= 0.0) || !std::isfinite(k.psi)) {
                    throw ValidationError("psi: must be finite and >= 0");
                }
            } else {
                if (!(k.rate >= 0.0 && k.rate <= 1.0)) {
                    throw ValidationError("rate: must be in [0, 1]");
                }
            }
        },
        kind);
}

std::string AttackBudget::kind_name() const {
    switch (kind.index()) {
        case 0: return "gaussian";
        case 1: return "pgd";
        default: return "dice";
    }
}

AttackBudget AttackBudget::from_json(const json& j) {
    if (!j.is_object()) {
        throw ValidationError("attack config: expected a JSON object");
    }
    if (!j.contains("kind") || !j["kind"].is_string()) {
        throw ValidationError("kind: expected \"gaussian\", \"pgd\" or \"dice\"");
    }
    auto real = [&](const char* key, double fallback) {
        if (!j.contains(key)) return fallback;
        if (!j[key].is_number()) throw ValidationError(std::string(key) + ": expected a number");
        return j[key].get<double>();
    };
    auto count = [&](const char* key, std::uint64_t fallback) {
        if (!j.contains(key)) return fallback;
        if (!(j[key].is_number_integer() && j[key] >= 0)) {
            throw ValidationError(std::string(key) + ": expected a non-negative integer");
        }
        return j[key].get<std::uint64_t>();
    };
    const std::string kind = j["kind"];
    const char* const* allowed = nullptr;
    static const char* const gaussian_keys[] = {"kind", "psi", "seed", nullptr};
    static const char* const pgd_keys[] = {"kind", "rate", "steps", "seed", nullptr};
    static const char* const dice_keys[] = {"kind", "rate", "seed", nullptr};

    AttackBudget b;
    b.seed = count("seed", 0);
    if (kind == "gaussian") {
        b.kind = GaussianNoise{real("psi", 0.5)};
        allowed = gaussian_keys;
    } else if (kind == "pgd") {
        b.kind = PgdFeature{real("rate", 0.15), static_cast<std::size_t>(count("steps", 40))};
        allowed = pgd_keys;
    } else if (kind == "dice") {
        b.kind = DiceStructure{real("rate", 0.10)};
        allowed = dice_keys;
    } else {
        throw ValidationError("kind: expected \"gaussian\", \"pgd\" or \"dice\"");
    }
    for (const auto& item : j.items()) {
        bool ok = false;
        for (const char* const* k = allowed; *k != nullptr; ++k) {
            ok = ok || item.key() == *k;
        }
        if (!ok) {
            throw ValidationError(item.key() + ": not a field of the " + kind + " attack");
        }
    }
    b.validate();
    return b;
}

json AttackBudget::to_json() const {
    json j{{"kind", kind_name()}, {"seed", seed}};
    std::visit(
        [&j](const auto& k) {
            using T = std::decay_t<decltype(k)>;
            if constexpr (std::is_same_v<T, GaussianNoise>) {
                j["psi"] = k.psi;
            } else if constexpr (std::is_same_v<T, PgdFeature>) {
                j["rate"] = k.rate;
                j["steps"] = k.steps;
            } else {
                j["rate"] = k.rate;
            }
        },
        kind);
    return j;
}

json AttackResult::summary() const {
    return json{{"edges_removed", edges_removed},
                {"edges_added", edges_added},
                {"feature_linf", linf_norm},
                {"feature_l2", l2_norm}};
}

namespace {

AttackResult feature_result(const Graph& graph, Matrix perturbed) {
    AttackResult r;
    const Matrix delta = perturbed - graph.features();
    r.linf_norm = delta.size() == 0 ? 0.0 : delta.cwiseAbs().maxCoeff();
    r.l2_norm = delta.norm();
    r.perturbed = graph.with_features(std::move(perturbed));
    return r;
}

}  // namespace

AttackResult gaussian_feature_attack(Rng& rng, const Graph& graph, double psi) {
    if (!(psi >= 0.0) || !std::isfinite(psi)) {
        throw ValidationError("psi: must be finite and >= 0");
    }
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix x = graph.features();
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        x.data()[i] += psi * normal(rng);
    }
    return feature_result(graph, std::move(x));
}

AttackResult pgd_feature_attack(const Graph& graph, const GcnParameters& params, double rate, std::size_t steps,
                                std::span<const NodeIndex> target_idx) {
    if (!(rate >= 0.0 && rate <= 1.0)) {
        throw ValidationError("rate: must be in [0, 1]");
    }
    check_compatible(params, graph);
    const Matrix& x0 = graph.features();
    if (steps == 0 || x0.size() == 0) {
        return feature_result(graph, x0);
    }
    if (target_idx.empty()) {
        throw ValidationError("pgd: empty target set");
    }
    const double eps = rate * (x0.maxCoeff() - x0.minCoeff());
    const double step = 2.5 * eps / static_cast<double>(steps);
    const Matrix lower = x0.array() - eps;
    const Matrix upper = x0.array() + eps;
    const SparseMatrix adjacency = normalize_adjacency(graph);

    Matrix x = x0;
    for (std::size_t s = 0; s < steps; ++s) {
        const Gradients g = loss_and_gradients(params, adjacency, x, graph.labels(), target_idx);
        if (!g.x.allFinite()) {
            throw RuntimeError("pgd: non-finite feature gradient");
        }
        x += step * g.x.unaryExpr([](double v) { return static_cast<double>((v > 0.0) - (v < 0.0)); });
        x = x.cwiseMax(lower).cwiseMin(upper);
    }
    return feature_result(graph, std::move(x));
}

namespace {

// Partial Fisher-Yates: the first k entries become a uniform k-subset.
template <typename T>
void choose_prefix(Rng& rng, std::vector<T>& items, std::size_t k) {
    for (std::size_t i = 0; i < k; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, items.size() - 1);
        std::swap(items[i], items[pick(rng)]);
    }
}

constexpr std::uint64_t kEnumeratePairsLimit = 4'000'000;

}  // namespace

AttackResult dice_structural_attack(Rng& rng, const Graph& graph, double rate) {
    if (!(rate >= 0.0 && rate <= 1.0)) {
        throw ValidationError("rate: must be in [0, 1]");
    }
    const std::size_t n = graph.num_nodes();
    const Labels& y = graph.labels();
    const std::size_t budget = static_cast<std::size_t>(std::floor(rate * static_cast<double>(graph.num_edges())));

    EdgeList intra;
    std::size_t inter_edges = 0;
    for (const Edge& e : graph.edges()) {
        if (y[e.u] == y[e.v]) {
            intra.push_back(e);
        } else {
            ++inter_edges;
        }
    }
    std::vector<std::uint64_t> class_size(static_cast<std::size_t>(graph.num_classes()), 0);
    for (int label : y) {
        ++class_size[static_cast<std::size_t>(label)];
    }
    std::uint64_t same_pairs = 0;
    for (std::uint64_t c : class_size) {
        same_pairs += c * (c - (c > 0 ? 1 : 0)) / 2;
    }
    const std::uint64_t all_pairs = static_cast<std::uint64_t>(n) * (n - (n > 0 ? 1 : 0)) / 2;
    const std::uint64_t insert_pool = all_pairs - same_pairs - inter_edges;

    std::size_t deletions = (budget + 1) / 2;
    std::size_t insertions = budget / 2;
    if (deletions > intra.size()) {
        insertions += deletions - intra.size();
        deletions = intra.size();
    }
    if (insertions > insert_pool) {
        deletions += insertions - static_cast<std::size_t>(insert_pool);
        insertions = static_cast<std::size_t>(insert_pool);
    }
    if (deletions > intra.size()) {
        throw ValidationError("dice: budget " + std::to_string(budget) + " exceeds available modifications");
    }

    choose_prefix(rng, intra, deletions);
    EdgeList removed(intra.begin(), intra.begin() + static_cast<std::ptrdiff_t>(deletions));
    std::sort(removed.begin(), removed.end());

    EdgeList added;
    if (insertions > 0) {
        if (all_pairs <= kEnumeratePairsLimit) {
            EdgeList pool;
            pool.reserve(static_cast<std::size_t>(insert_pool));
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = i + 1; j < n; ++j) {
                    if (y[i] != y[j] && !graph.has_edge(static_cast<NodeIndex>(i), static_cast<NodeIndex>(j))) {
                        pool.push_back(Edge{static_cast<NodeIndex>(i), static_cast<NodeIndex>(j)});
                    }
                }
            }
            choose_prefix(rng, pool, insertions);
            added.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(insertions));
        } else {
            std::uniform_int_distribution<NodeIndex> node(0, static_cast<NodeIndex>(n - 1));
            std::unordered_set<std::uint64_t> taken;
            while (added.size() < insertions) {
                NodeIndex a = node(rng), b = node(rng);
                if (a == b || y[a] == y[b]) {
                    continue;
                }
                if (a > b) {
                    std::swap(a, b);
                }
                if (graph.has_edge(a, b) || !taken.insert((std::uint64_t{a} << 32) | b).second) {
                    continue;
                }
                added.push_back(Edge{a, b});
            }
        }
        std::sort(added.begin(), added.end());
    }

    EdgeList kept;
    kept.reserve(graph.num_edges());
    std::set_difference(graph.edges().begin(), graph.edges().end(), removed.begin(), removed.end(),
                        std::back_inserter(kept));
    EdgeList merged;
    merged.reserve(kept.size() + added.size());
    std::merge(kept.begin(), kept.end(), added.begin(), added.end(), std::back_inserter(merged));

    AttackResult r;
    r.perturbed = graph.with_edges(std::move(merged));
    r.edges_removed = removed.size();
    r.edges_added = added.size();
    return r;
}

AttackResult run_attack(const AttackBudget& budget, const Graph& graph, const GcnParameters& params,
                        std::span<const NodeIndex> target_idx) {
    budget.validate();
    Rng rng = make_rng(budget.seed, {0xa77ac4});
    return std::visit(
        [&](const auto& k) -> AttackResult {
            using T = std::decay_t<decltype(k)>;
            if constexpr (std::is_same_v<T, GaussianNoise>) {
                return gaussian_feature_attack(rng, graph, k.psi);
            } else if constexpr (std::is_same_v<T, PgdFeature>) {
                return pgd_feature_attack(graph, params, k.rate, k.steps, target_idx);
            } else {
                return dice_structural_attack(rng, graph, k.rate);
            }
        },
        budget.kind);
}

}  // namespace crfsmooth

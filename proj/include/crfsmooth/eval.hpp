#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "crfsmooth/attacks.hpp"
#include "crfsmooth/crf.hpp"
#include "crfsmooth/gcn.hpp"
#include "crfsmooth/graph.hpp"

namespace crfsmooth {

/// Fraction of idx whose argmax equals the label.
double accuracy(const PredictionMatrix& predictions, std::span<const int> labels, std::span<const NodeIndex> idx);

/// Among idx nodes correct under clean, the fraction wrong under attacked.
/// 0 when no node is correct under clean.
double attack_success_rate(const PredictionMatrix& clean, const PredictionMatrix& attacked,
                           std::span<const int> labels, std::span<const NodeIndex> idx);

/// Fraction of idx wrong under clean but correct under attacked.
double recovered_fraction(const PredictionMatrix& clean, const PredictionMatrix& attacked,
                          std::span<const int> labels, std::span<const NodeIndex> idx);

/// Keys: epochs, learning_rate, beta1, beta2, eps, hidden_dim, seed.
TrainingConfig training_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TrainingConfig& config);

/// Keys: seed, num_nodes, num_classes, p_in, p_out, feature_dim, class_shift.
SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SyntheticSpec& spec);

/*
 * Either a dataset directory or a synthetic generator spec. Every repeat i
 * uses seed = seed + i for training, the attack, the smoother, and (for
 * synthetic data) the generated graph; the seed fields inside training,
 * attack and crf are ignored.
 */
struct ExperimentConfig {
    std::optional<std::filesystem::path> dataset;
    SyntheticSpec synthetic;
    TrainingConfig training;
    AttackBudget attack;
    CrfConfig crf;
    std::size_t num_repeats{10};
    std::uint64_t seed{0};

    void validate() const;

    /// Relative dataset paths resolve against base_dir.
    static ExperimentConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
};

struct SeedMetrics {
    std::uint64_t seed{0};
    double clean_acc_vanilla{0.0};
    double clean_acc_smoothed{0.0};
    double atk_acc_vanilla{0.0};
    double atk_acc_smoothed{0.0};
    double asr_vanilla{0.0};
    double asr_smoothed{0.0};
    std::uint64_t model_calls{0};
    double smooth_wall_ms{0.0};
    // Second term of atk_acc = clean_acc * (1 - asr) + recovered.
    double recovered_vanilla{0.0};
    double recovered_smoothed{0.0};
};

struct ColumnSummary {
    std::string name;
    double mean{0.0};
    double std{0.0};  // population standard deviation
};

struct MetricsReport {
    std::vector<SeedMetrics> rows;
    std::vector<ColumnSummary> aggregate;

    std::string to_csv() const;
    nlohmann::json to_json() const;
};

inline constexpr const char* kMetricsCsvHeader =
    "seed,clean_acc_vanilla,clean_acc_smoothed,atk_acc_vanilla,atk_acc_smoothed,asr_vanilla,asr_smoothed,"
    "model_calls,smooth_wall_ms";

/// Mean and population std of each CSV column over rows.
std::vector<ColumnSummary> aggregate_rows(std::span<const SeedMetrics> rows);

struct RunOptions {
    std::size_t threads{1};
    // When false, smooth_wall_ms is reported as 0 so outputs are byte-stable.
    bool measure_time{true};
};

/// Train, attack, smooth and score every repeat. Throws RuntimeError if
/// the accuracy/ASR identity fails for any repeat.
MetricsReport run_experiment(const ExperimentConfig& config, const RunOptions& options = {});

void write_report(const MetricsReport& report, const std::filesystem::path& dir);

struct TimingRow {
    std::size_t num_samples{0};
    std::size_t num_iterations{0};
    std::uint64_t model_calls{0};
    double mean_ms{0.0};
    double std_ms{0.0};
};

/// Wall time and counted model calls of smooth() on each (L, K) cell.
/// Throws RuntimeError if a counted call total differs from model_call_count.
std::vector<TimingRow> timing_benchmark(const PredictionFn& model, const Graph& graph, const CrfConfig& base,
                                        std::span<const std::size_t> sample_counts,
                                        std::span<const std::size_t> iteration_counts, std::size_t repeats = 3,
                                        const RunOptions& options = {});

std::string timing_to_csv(std::span<const TimingRow> rows);

}  // namespace crfsmooth

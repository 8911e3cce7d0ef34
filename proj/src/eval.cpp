#include "crfsmooth/eval.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <initializer_list>
#include <memory>

#include "crfsmooth/parallel.hpp"

namespace crfsmooth {

using nlohmann::json;

double accuracy(const PredictionMatrix& predictions, std::span<const int> labels, std::span<const NodeIndex> idx) {
    if (idx.empty()) {
        throw ValidationError("accuracy: empty index list");
    }
    std::size_t correct = 0;
    for (NodeIndex i : idx) {
        correct += predictions.argmax(i) == labels[i] ? 1 : 0;
    }
    return static_cast<double>(correct) / static_cast<double>(idx.size());
}

double attack_success_rate(const PredictionMatrix& clean, const PredictionMatrix& attacked,
                           std::span<const int> labels, std::span<const NodeIndex> idx) {
    if (clean.num_nodes() != attacked.num_nodes() || clean.num_classes() != attacked.num_classes()) {
        throw ValidationError("attack_success_rate: prediction shapes differ");
    }
    std::size_t correct = 0;
    std::size_t flipped = 0;
    for (NodeIndex i : idx) {
        if (clean.argmax(i) == labels[i]) {
            ++correct;
            flipped += attacked.argmax(i) != labels[i] ? 1 : 0;
        }
    }
    return correct == 0 ? 0.0 : static_cast<double>(flipped) / static_cast<double>(correct);
}

double recovered_fraction(const PredictionMatrix& clean, const PredictionMatrix& attacked,
                          std::span<const int> labels, std::span<const NodeIndex> idx) {
    if (idx.empty()) {
        return 0.0;
    }
    std::size_t recovered = 0;
    for (NodeIndex i : idx) {
        recovered += clean.argmax(i) != labels[i] && attacked.argmax(i) == labels[i] ? 1 : 0;
    }
    return static_cast<double>(recovered) / static_cast<double>(idx.size());
}

// ---------------------------------------------------------------------------
// Config parsing

namespace {

void reject_unknown(const json& j, std::initializer_list<const char*> known, const std::string& where) {
    if (!j.is_object()) {
        throw ValidationError(where + ": expected a JSON object");
    }
    for (const auto& item : j.items()) {
        bool ok = false;
        for (const char* k : known) {
            ok = ok || item.key() == k;
        }
        if (!ok) {
            throw ValidationError(where + "." + item.key() + ": unknown field");
        }
    }
}

void read_real(const json& j, const char* key, double& out, const std::string& where) {
    if (!j.contains(key)) return;
    if (!j[key].is_number()) throw ValidationError(where + "." + key + ": expected a number");
    out = j[key].get<double>();
}

template <typename T>
void read_count(const json& j, const char* key, T& out, const std::string& where) {
    if (!j.contains(key)) return;
    if (!(j[key].is_number_integer() && j[key] >= 0)) {
        throw ValidationError(where + "." + key + ": expected a non-negative integer");
    }
    out = j[key].get<T>();
}

}  // namespace

TrainingConfig training_config_from_json(const json& j) {
    reject_unknown(j, {"epochs", "learning_rate", "beta1", "beta2", "eps", "hidden_dim", "seed"}, "training");
    TrainingConfig c;
    read_count(j, "epochs", c.epochs, "training");
    read_real(j, "learning_rate", c.learning_rate, "training");
    read_real(j, "beta1", c.beta1, "training");
    read_real(j, "beta2", c.beta2, "training");
    read_real(j, "eps", c.eps, "training");
    read_count(j, "hidden_dim", c.hidden_dim, "training");
    read_count(j, "seed", c.seed, "training");
    c.validate();
    return c;
}

json to_json(const TrainingConfig& c) {
    return json{{"epochs", c.epochs}, {"learning_rate", c.learning_rate}, {"beta1", c.beta1}, {"beta2", c.beta2},
                {"eps", c.eps},       {"hidden_dim", c.hidden_dim},       {"seed", c.seed}};
}

SyntheticSpec synthetic_spec_from_json(const json& j) {
    reject_unknown(j, {"seed", "num_nodes", "num_classes", "p_in", "p_out", "feature_dim", "class_shift"},
                   "synthetic");
    SyntheticSpec s;
    read_count(j, "seed", s.seed, "synthetic");
    read_count(j, "num_nodes", s.num_nodes, "synthetic");
    read_count(j, "num_classes", s.num_classes, "synthetic");
    read_real(j, "p_in", s.p_in, "synthetic");
    read_real(j, "p_out", s.p_out, "synthetic");
    read_count(j, "feature_dim", s.feature_dim, "synthetic");
    read_real(j, "class_shift", s.class_shift, "synthetic");
    return s;
}

json to_json(const SyntheticSpec& s) {
    return json{{"seed", s.seed},         {"num_nodes", s.num_nodes},     {"num_classes", s.num_classes},
                {"p_in", s.p_in},         {"p_out", s.p_out},             {"feature_dim", s.feature_dim},
                {"class_shift", s.class_shift}};
}

void ExperimentConfig::validate() const {
    if (num_repeats < 1) {
        throw ValidationError("num_repeats: must be >= 1");
    }
    training.validate();
    attack.validate();
    crf.validate();
}

ExperimentConfig ExperimentConfig::from_json(const json& j, const std::filesystem::path& base_dir) {
    reject_unknown(j, {"dataset", "synthetic", "training", "attack", "crf", "num_repeats", "seed"}, "experiment");
    ExperimentConfig c;
    if (j.contains("dataset") == j.contains("synthetic")) {
        throw ValidationError("experiment: exactly one of \"dataset\" and \"synthetic\" is required");
    }
    if (j.contains("dataset")) {
        if (!j["dataset"].is_string()) {
            throw ValidationError("experiment.dataset: expected a path string");
        }
        std::filesystem::path p = j["dataset"].get<std::string>();
        c.dataset = p.is_relative() && !base_dir.empty() ? base_dir / p : p;
    } else {
        c.synthetic = synthetic_spec_from_json(j["synthetic"]);
    }
    if (j.contains("training")) c.training = training_config_from_json(j["training"]);
    if (j.contains("attack")) c.attack = AttackBudget::from_json(j["attack"]);
    if (j.contains("crf")) c.crf = CrfConfig::from_json(j["crf"]);
    read_count(j, "num_repeats", c.num_repeats, "experiment");
    read_count(j, "seed", c.seed, "experiment");
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// Reports

namespace {

using Column = std::pair<const char*, double SeedMetrics::*>;

// Every CSV column after `seed`, in header order.
const Column kColumns[] = {
    {"clean_acc_vanilla", &SeedMetrics::clean_acc_vanilla},
    {"clean_acc_smoothed", &SeedMetrics::clean_acc_smoothed},
    {"atk_acc_vanilla", &SeedMetrics::atk_acc_vanilla},
    {"atk_acc_smoothed", &SeedMetrics::atk_acc_smoothed},
    {"asr_vanilla", &SeedMetrics::asr_vanilla},
    {"asr_smoothed", &SeedMetrics::asr_smoothed},
};

double column_value(const SeedMetrics& row, std::size_t col) {
    constexpr std::size_t n = std::size(kColumns);
    if (col < n) return row.*(kColumns[col].second);
    if (col == n) return static_cast<double>(row.model_calls);
    return row.smooth_wall_ms;
}

const char* column_name(std::size_t col) {
    constexpr std::size_t n = std::size(kColumns);
    if (col < n) return kColumns[col].first;
    return col == n ? "model_calls" : "smooth_wall_ms";
}

constexpr std::size_t kNumColumns = std::size(kColumns) + 2;

}  // namespace

std::vector<ColumnSummary> aggregate_rows(std::span<const SeedMetrics> rows) {
    std::vector<ColumnSummary> out;
    for (std::size_t c = 0; c < kNumColumns; ++c) {
        ColumnSummary s{column_name(c), 0.0, 0.0};
        if (!rows.empty()) {
            double sum = 0.0;
            for (const auto& r : rows) sum += column_value(r, c);
            s.mean = sum / static_cast<double>(rows.size());
            double sq = 0.0;
            for (const auto& r : rows) {
                const double d = column_value(r, c) - s.mean;
                sq += d * d;
            }
            s.std = std::sqrt(sq / static_cast<double>(rows.size()));
        }
        out.push_back(std::move(s));
    }
    return out;
}

std::string MetricsReport::to_csv() const {
    std::string out = kMetricsCsvHeader;
    out += '\n';
    for (const SeedMetrics& r : rows) {
        out += std::to_string(r.seed);
        for (const auto& [name, member] : kColumns) {
            out += ',';
            out += format_double(r.*member);
        }
        out += ',';
        out += std::to_string(r.model_calls);
        out += ',';
        out += format_double(r.smooth_wall_ms);
        out += '\n';
    }
    return out;
}

json MetricsReport::to_json() const {
    json agg = json::object();
    for (const ColumnSummary& s : aggregate) {
        agg[s.name] = {{"mean", s.mean}, {"std", s.std}};
    }
    json per_seed = json::array();
    for (const SeedMetrics& r : rows) {
        per_seed.push_back({{"seed", r.seed},
                            {"recovered_vanilla", r.recovered_vanilla},
                            {"recovered_smoothed", r.recovered_smoothed}});
    }
    return json{{"num_repeats", rows.size()}, {"aggregate", agg}, {"identity_terms", per_seed}};
}

void write_report(const MetricsReport& report, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) {
        throw RuntimeError("cannot create " + dir.string() + ": " + ec.message());
    }
    auto write = [](const std::filesystem::path& p, const std::string& content) {
        std::ofstream out(p, std::ios::binary | std::ios::trunc);
        if (!out || !(out << content)) {
            throw RuntimeError("cannot write " + p.string());
        }
    };
    write(dir / "metrics.csv", report.to_csv());
    write(dir / "metrics.json", report.to_json().dump(2) + "\n");
}

// ---------------------------------------------------------------------------

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point start) {
    return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

SeedMetrics run_repeat(const ExperimentConfig& config, const Dataset* fixed, std::uint64_t seed,
                       const RunOptions& options) {
    Dataset generated;
    if (fixed == nullptr) {
        SyntheticSpec spec = config.synthetic;
        spec.seed = seed;
        generated = generate_synthetic(spec);
    }
    const Dataset& data = fixed != nullptr ? *fixed : generated;
    const Graph& graph = data.graph;
    const auto& test = data.splits.test.empty() ? data.splits.train : data.splits.test;

    TrainingConfig training = config.training;
    training.seed = seed;
    const GcnParameters params = train(graph, data.splits, training);
    auto model = std::make_shared<GcnModel>(params);
    const PredictionFn fn = [model](const Graph& g) { return (*model)(g); };

    CrfConfig crf = config.crf;
    crf.seed = seed;
    AttackBudget budget = config.attack;
    budget.seed = seed;

    SeedMetrics m;
    m.seed = seed;

    const PredictionMatrix clean_vanilla = fn(graph);
    auto start = Clock::now();
    const SmoothResult clean_smoothed = smooth(fn, graph, crf, options.threads);
    double wall = elapsed_ms(start);

    const AttackResult attack = run_attack(budget, graph, params, test);
    const PredictionMatrix atk_vanilla = fn(attack.perturbed);
    start = Clock::now();
    const SmoothResult atk_smoothed = smooth(fn, attack.perturbed, crf, options.threads);
    wall += elapsed_ms(start);

    const Labels& y = graph.labels();
    m.clean_acc_vanilla = accuracy(clean_vanilla, y, test);
    m.clean_acc_smoothed = accuracy(clean_smoothed.predictions, y, test);
    m.atk_acc_vanilla = accuracy(atk_vanilla, y, test);
    m.atk_acc_smoothed = accuracy(atk_smoothed.predictions, y, test);
    m.asr_vanilla = attack_success_rate(clean_vanilla, atk_vanilla, y, test);
    m.asr_smoothed = attack_success_rate(clean_smoothed.predictions, atk_smoothed.predictions, y, test);
    m.recovered_vanilla = recovered_fraction(clean_vanilla, atk_vanilla, y, test);
    m.recovered_smoothed = recovered_fraction(clean_smoothed.predictions, atk_smoothed.predictions, y, test);
    m.model_calls = clean_smoothed.model_calls;
    m.smooth_wall_ms = options.measure_time ? wall / 2.0 : 0.0;

    auto check_identity = [seed](double atk, double clean, double asr, double recovered, const char* which) {
        if (std::abs(atk - (clean * (1.0 - asr) + recovered)) > 1e-12) {
            throw RuntimeError(std::string("accuracy/ASR identity violated (") + which + ") for seed " +
                               std::to_string(seed));
        }
    };
    check_identity(m.atk_acc_vanilla, m.clean_acc_vanilla, m.asr_vanilla, m.recovered_vanilla, "vanilla");
    check_identity(m.atk_acc_smoothed, m.clean_acc_smoothed, m.asr_smoothed, m.recovered_smoothed, "smoothed");
    return m;
}

}  // namespace

MetricsReport run_experiment(const ExperimentConfig& config, const RunOptions& options) {
    config.validate();
    std::unique_ptr<Dataset> fixed;
    if (config.dataset) {
        fixed = std::make_unique<Dataset>(load_dataset(*config.dataset));
    }

    MetricsReport report;
    report.rows.resize(config.num_repeats);
    const std::size_t outer = std::min(std::max<std::size_t>(1, options.threads), config.num_repeats);
    RunOptions inner = options;
    inner.threads = std::max<std::size_t>(1, options.threads / outer);
    parallel_for(config.num_repeats, outer, [&](std::size_t i) {
        report.rows[i] = run_repeat(config, fixed.get(), config.seed + i, inner);
    });
    report.aggregate = aggregate_rows(report.rows);
    return report;
}

std::vector<TimingRow> timing_benchmark(const PredictionFn& model, const Graph& graph, const CrfConfig& base,
                                        std::span<const std::size_t> sample_counts,
                                        std::span<const std::size_t> iteration_counts, std::size_t repeats,
                                        const RunOptions& options) {
    if (repeats < 1) {
        throw ValidationError("benchmark: repeats must be >= 1");
    }
    std::atomic<std::uint64_t> calls{0};
    const PredictionFn counted = [&](const Graph& g) {
        ++calls;
        return model(g);
    };

    std::vector<TimingRow> rows;
    for (std::size_t num_samples : sample_counts) {
        for (std::size_t num_iterations : iteration_counts) {
            CrfConfig crf = base;
            crf.num_samples = num_samples;
            crf.num_iterations = num_iterations;
            if (crf.sigma == 0.0 && num_iterations == 0) {
                crf.sigma = 0.5;  // sigma = 0 requires K >= 1; K = 0 never reads sigma.
            }
            const std::uint64_t expected = model_call_count(num_samples, num_iterations);

            std::vector<double> times;
            for (std::size_t rep = 0; rep < repeats; ++rep) {
                calls = 0;
                const auto start = Clock::now();
                const SmoothResult r = smooth(counted, graph, crf, options.threads);
                times.push_back(elapsed_ms(start));
                if (calls.load() != expected || r.model_calls != expected) {
                    throw RuntimeError("benchmark: counted " + std::to_string(calls.load()) + " model calls for L=" +
                                       std::to_string(num_samples) + ", K=" + std::to_string(num_iterations) +
                                       ", expected " + std::to_string(expected));
                }
            }
            TimingRow row{num_samples, num_iterations, expected, 0.0, 0.0};
            if (options.measure_time) {
                double sum = 0.0;
                for (double t : times) sum += t;
                row.mean_ms = sum / static_cast<double>(times.size());
                double sq = 0.0;
                for (double t : times) sq += (t - row.mean_ms) * (t - row.mean_ms);
                row.std_ms = std::sqrt(sq / static_cast<double>(times.size()));
            }
            rows.push_back(row);
        }
    }
    return rows;
}

std::string timing_to_csv(std::span<const TimingRow> rows) {
    std::string out = "num_samples,num_iterations,model_calls,mean_ms,std_ms\n";
    for (const TimingRow& r : rows) {
        out += std::to_string(r.num_samples) + "," + std::to_string(r.num_iterations) + "," +
               std::to_string(r.model_calls) + "," + format_double(r.mean_ms) + "," + format_double(r.std_ms) + "\n";
    }
    return out;
}

}  // namespace crfsmooth

#include "cli.hpp"

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "crfsmooth/attacks.hpp"
#include "crfsmooth/crf.hpp"
#include "crfsmooth/eval.hpp"
#include "crfsmooth/gcn.hpp"
#include "crfsmooth/graph.hpp"
#include "crfsmooth/parallel.hpp"
#include "crfsmooth/sampler.hpp"

namespace crfsmooth::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json read_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ValidationError("cannot read config " + path.string());
    }
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ValidationError(path.filename().string() + ": " + e.what());
    }
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out || !(out << text)) {
        throw RuntimeError("cannot write " + path.string());
    }
}

std::string predictions_csv(const PredictionMatrix& p) {
    std::string out = "node";
    for (std::size_t c = 0; c < p.num_classes(); ++c) {
        out += ",class_" + std::to_string(c);
    }
    out += '\n';
    for (Eigen::Index i = 0; i < p.probs.rows(); ++i) {
        out += std::to_string(i);
        for (Eigen::Index c = 0; c < p.probs.cols(); ++c) {
            out += ',';
            out += format_double(p.probs(i, c));
        }
        out += '\n';
    }
    return out;
}

struct Common {
    std::optional<std::uint64_t> seed;
    std::size_t threads = default_thread_count();
};

void add_common(CLI::App* cmd, Common& common) {
    cmd->add_option("--seed", common.seed, "Root seed; overrides any seed in the config file");
    cmd->add_option("--threads", common.threads, "Worker threads (results do not depend on this)")
        ->check(CLI::PositiveNumber);
}

// ---------------------------------------------------------------------------

struct GenerateArgs {
    Common common;
    std::string config;
    std::optional<std::size_t> nodes, classes, feature_dim;
    std::optional<double> p_in, p_out, class_shift;
    std::string out;
};

void run_generate(const GenerateArgs& a, std::ostream&) {
    SyntheticSpec spec = a.config.empty() ? SyntheticSpec{} : synthetic_spec_from_json(read_json_file(a.config));
    if (a.common.seed) spec.seed = *a.common.seed;
    if (a.nodes) spec.num_nodes = *a.nodes;
    if (a.classes) spec.num_classes = static_cast<int>(*a.classes);
    if (a.feature_dim) spec.feature_dim = *a.feature_dim;
    if (a.p_in) spec.p_in = *a.p_in;
    if (a.p_out) spec.p_out = *a.p_out;
    if (a.class_shift) spec.class_shift = *a.class_shift;
    const Dataset data = generate_synthetic(spec);
    save_dataset(data.graph, data.splits, a.out);
}

struct TrainArgs {
    Common common;
    std::string data, config, out, predictions;
    std::optional<std::size_t> epochs, hidden;
    std::optional<double> lr;
};

void run_train(const TrainArgs& a, std::ostream&) {
    TrainingConfig cfg = a.config.empty() ? TrainingConfig{} : training_config_from_json(read_json_file(a.config));
    if (a.common.seed) cfg.seed = *a.common.seed;
    if (a.epochs) cfg.epochs = *a.epochs;
    if (a.hidden) cfg.hidden_dim = *a.hidden;
    if (a.lr) cfg.learning_rate = *a.lr;
    cfg.validate();
    const Dataset data = load_dataset(a.data);
    const GcnParameters params = train(data.graph, data.splits, cfg);
    save_checkpoint(params, a.out);
    if (!a.predictions.empty()) {
        write_text(a.predictions, predictions_csv(predict(params, data.graph)));
    }
}

struct AttackArgs {
    Common common;
    std::string data, checkpoint, config, kind, out;
    std::optional<double> psi, rate;
    std::optional<std::size_t> steps;
};

void run_attack_cmd(const AttackArgs& a, std::ostream&) {
    json cfg = a.config.empty() ? json::object() : read_json_file(a.config);
    if (!a.kind.empty()) cfg["kind"] = a.kind;
    if (a.psi) cfg["psi"] = *a.psi;
    if (a.rate) cfg["rate"] = *a.rate;
    if (a.steps) cfg["steps"] = *a.steps;
    if (a.common.seed) cfg["seed"] = *a.common.seed;
    const AttackBudget budget = AttackBudget::from_json(cfg);

    const Dataset data = load_dataset(a.data);
    GcnParameters params;
    if (std::holds_alternative<PgdFeature>(budget.kind)) {
        if (a.checkpoint.empty()) {
            throw ValidationError("--checkpoint: required for the pgd attack");
        }
        params = load_checkpoint(a.checkpoint);
        check_compatible(params, data.graph);
    }
    const auto& targets = data.splits.test.empty() ? data.splits.train : data.splits.test;
    const AttackResult result = run_attack(budget, data.graph, params, targets);
    save_dataset(result.perturbed, data.splits, a.out);
    json manifest{{"attack", budget.to_json()},
                  {"summary", result.summary()},
                  {"source", fs::path(a.data).filename().string()},
                  {"num_edges_before", data.graph.num_edges()},
                  {"num_edges_after", result.perturbed.num_edges()}};
    write_text(fs::path(a.out) / "attack_manifest.json", manifest.dump(2) + "\n");
}

struct CrfOverrides {
    std::string config, preset, mode, perturbation;
    std::optional<double> sigma, p_r, radius;
    std::optional<std::size_t> samples, iterations;
};

void add_crf_options(CLI::App* cmd, CrfOverrides& o) {
    cmd->add_option("--config", o.config, "CRF config JSON")->check(CLI::ExistingFile);
    cmd->add_option("--preset", o.preset, "Named preset")->check(CLI::IsMember({"randomized-smoothing"}));
    cmd->add_option("--sigma", o.sigma, "Weight of the model's own prediction, in [0, 1]");
    cmd->add_option("--samples", o.samples, "Neighbors drawn per tree node (L)");
    cmd->add_option("--iterations", o.iterations, "Tree depth (K)");
    cmd->add_option("--mode", o.mode, "Similarity: cosine, prior or uniform")
        ->check(CLI::IsMember({"cosine", "prior", "uniform"}));
    cmd->add_option("--perturbation", o.perturbation, "Neighbor ball: feature or structure")
        ->check(CLI::IsMember({"feature", "structure"}));
    cmd->add_option("--p-r", o.p_r, "Structural radius ratio, r = floor(p_r * |E|)");
    cmd->add_option("--feature-radius", o.radius, "L2 radius of the feature ball");
}

CrfConfig resolve_crf(const CrfOverrides& o, const Common& common) {
    json cfg = o.config.empty() ? json::object() : read_json_file(o.config);
    if (!cfg.is_object()) {
        throw ValidationError("crf config: expected a JSON object");
    }
    if (!o.preset.empty()) cfg["preset"] = o.preset;
    if (o.sigma) cfg["sigma"] = *o.sigma;
    if (o.samples) cfg["num_samples"] = *o.samples;
    if (o.iterations) cfg["num_iterations"] = *o.iterations;
    if (!o.mode.empty()) cfg["mode"] = o.mode;
    if (!o.perturbation.empty()) cfg["perturbation"] = o.perturbation;
    if (o.p_r) cfg["p_r"] = *o.p_r;
    if (o.radius) cfg["feature_radius"] = *o.radius;
    if (common.seed) cfg["seed"] = *common.seed;
    return CrfConfig::from_json(cfg);
}

struct SmoothArgs {
    Common common;
    CrfOverrides crf;
    std::string data, checkpoint, out;
};

void run_smooth(const SmoothArgs& a, std::ostream&) {
    const CrfConfig crf = resolve_crf(a.crf, a.common);
    const Dataset data = load_dataset(a.data);
    GcnParameters params = load_checkpoint(a.checkpoint);
    check_compatible(params, data.graph);
    auto model = std::make_shared<GcnModel>(std::move(params));
    const PredictionFn fn = [model](const Graph& g) { return (*model)(g); };
    const SmoothResult result = smooth(fn, data.graph, crf, a.common.threads);
    write_text(a.out, predictions_csv(result.predictions));
}

struct EvalArgs {
    Common common;
    std::string config, out;
    std::optional<std::size_t> repeats;
    bool no_timing = false;
};

void run_eval(const EvalArgs& a, std::ostream&) {
    json cfg = read_json_file(a.config);
    if (a.repeats) cfg["num_repeats"] = *a.repeats;
    if (a.common.seed) cfg["seed"] = *a.common.seed;
    const ExperimentConfig experiment = ExperimentConfig::from_json(cfg, fs::path(a.config).parent_path());
    const MetricsReport report = run_experiment(experiment, RunOptions{a.common.threads, !a.no_timing});
    write_report(report, a.out);
}

struct BoundArgs {
    std::uint64_t n = 0, r = 0;
    std::string out;
};

void run_bound(const BoundArgs& a, std::ostream& out) {
    const double log2_bound = log2_ball_lower_bound(a.n, a.r);
    const double eps = static_cast<double>(a.r) / static_cast<double>(adjacency_positions(a.n));
    std::string csv = "n,r,epsilon,entropy,log2_bound,bound,exact\n";
    csv += std::to_string(a.n) + "," + std::to_string(a.r) + "," + format_double(eps) + "," +
           format_double(binary_entropy(eps)) + "," + format_double(log2_bound) + "," +
           format_double(std::exp2(log2_bound)) + ",";
    if (adjacency_positions(a.n) <= kEnumerationGuard) {
        std::vector<int> labels(a.n, 0);
        const Graph empty(a.n, {}, Matrix::Zero(static_cast<Eigen::Index>(a.n), 1), std::move(labels), 1);
        csv += std::to_string(enumerate_hamming_ball(empty, a.r));
    }
    csv += '\n';
    if (a.out.empty()) {
        out << csv;
    } else {
        write_text(a.out, csv);
    }
}

struct BenchmarkArgs {
    Common common;
    CrfOverrides crf;
    std::string data, checkpoint, out;
    std::vector<std::size_t> samples{5, 10, 20};
    std::vector<std::size_t> iterations{0, 1, 2};
    std::size_t repeats = 3;
    bool no_timing = false;
};

void run_benchmark(const BenchmarkArgs& a, std::ostream& out) {
    CrfOverrides crf_opts = a.crf;
    crf_opts.samples.reset();
    crf_opts.iterations.reset();
    const CrfConfig crf = resolve_crf(crf_opts, a.common);
    const Dataset data = load_dataset(a.data);
    GcnParameters params = load_checkpoint(a.checkpoint);
    check_compatible(params, data.graph);
    auto model = std::make_shared<GcnModel>(std::move(params));
    const PredictionFn fn = [model](const Graph& g) { return (*model)(g); };
    const auto rows = timing_benchmark(fn, data.graph, crf, a.samples, a.iterations, a.repeats,
                                       RunOptions{a.common.threads, !a.no_timing});
    const std::string csv = timing_to_csv(rows);
    if (a.out.empty()) {
        out << csv;
    } else {
        write_text(a.out, csv);
    }
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Post-hoc CRF smoothing of GCN node classifiers", "crfsmooth"};
    app.require_subcommand(1);

    GenerateArgs gen;
    auto* generate = app.add_subcommand("generate", "Write a synthetic stochastic-block-model dataset");
    add_common(generate, gen.common);
    generate->add_option("--config", gen.config, "Synthetic spec JSON")->check(CLI::ExistingFile);
    generate->add_option("--nodes", gen.nodes, "Number of nodes");
    generate->add_option("--classes", gen.classes, "Number of classes");
    generate->add_option("--p-in", gen.p_in, "Edge probability within a class");
    generate->add_option("--p-out", gen.p_out, "Edge probability across classes");
    generate->add_option("--feature-dim", gen.feature_dim, "Feature dimension (>= classes)");
    generate->add_option("--class-shift", gen.class_shift, "Mean shift along the class direction");
    generate->add_option("--out", gen.out, "Output dataset directory")->required();

    TrainArgs tr;
    auto* train_cmd = app.add_subcommand("train", "Train a two-layer GCN and write a checkpoint");
    add_common(train_cmd, tr.common);
    train_cmd->add_option("--data", tr.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
    train_cmd->add_option("--config", tr.config, "Training config JSON")->check(CLI::ExistingFile);
    train_cmd->add_option("--epochs", tr.epochs, "Training epochs");
    train_cmd->add_option("--lr", tr.lr, "Adam learning rate");
    train_cmd->add_option("--hidden", tr.hidden, "Hidden dimension");
    train_cmd->add_option("--out", tr.out, "Checkpoint JSON path")->required();
    train_cmd->add_option("--predictions", tr.predictions, "Also write vanilla predictions CSV");

    AttackArgs at;
    auto* attack = app.add_subcommand("attack", "Perturb a dataset with gaussian, pgd or dice");
    add_common(attack, at.common);
    attack->add_option("--data", at.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
    attack->add_option("--checkpoint", at.checkpoint, "Checkpoint (pgd only)")->check(CLI::ExistingFile);
    attack->add_option("--config", at.config, "Attack config JSON")->check(CLI::ExistingFile);
    attack->add_option("--kind", at.kind, "gaussian, pgd or dice")->check(CLI::IsMember({"gaussian", "pgd", "dice"}));
    attack->add_option("--psi", at.psi, "Gaussian noise scale");
    attack->add_option("--rate", at.rate, "Perturbation rate for pgd or dice");
    attack->add_option("--steps", at.steps, "PGD steps");
    attack->add_option("--out", at.out, "Output dataset directory")->required();

    SmoothArgs sm;
    auto* smooth_cmd = app.add_subcommand("smooth", "Smooth predictions of a trained model");
    add_common(smooth_cmd, sm.common);
    add_crf_options(smooth_cmd, sm.crf);
    smooth_cmd->add_option("--data", sm.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
    smooth_cmd->add_option("--checkpoint", sm.checkpoint, "Checkpoint JSON")->required()->check(CLI::ExistingFile);
    smooth_cmd->add_option("--out", sm.out, "Predictions CSV path")->required();

    EvalArgs ev;
    auto* eval = app.add_subcommand("eval", "Run train/attack/smooth repeats and write metrics");
    add_common(eval, ev.common);
    eval->add_option("--config", ev.config, "Experiment config JSON")->required()->check(CLI::ExistingFile);
    eval->add_option("--repeats", ev.repeats, "Override num_repeats");
    eval->add_flag("--no-timing", ev.no_timing, "Report smooth_wall_ms as 0 for byte-stable output");
    eval->add_option("--out", ev.out, "Output directory for metrics.csv and metrics.json")->required();

    BoundArgs bd;
    auto* bound = app.add_subcommand("bound", "Lower bound on the Hamming-ball size, as CSV");
    bound->add_option("--n", bd.n, "Number of nodes")->required();
    bound->add_option("--r", bd.r, "Radius, 1 <= r < n(n+1)/2")->required();
    bound->add_option("--out", bd.out, "CSV path (default: standard output)");

    BenchmarkArgs bm;
    auto* benchmark = app.add_subcommand("benchmark", "Time smoothing over an (L, K) grid");
    add_common(benchmark, bm.common);
    add_crf_options(benchmark, bm.crf);
    benchmark->add_option("--data", bm.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
    benchmark->add_option("--checkpoint", bm.checkpoint, "Checkpoint JSON")->required()->check(CLI::ExistingFile);
    benchmark->add_option("--L", bm.samples, "Sample counts")->delimiter(',');
    benchmark->add_option("--K", bm.iterations, "Iteration counts")->delimiter(',');
    benchmark->add_option("--repeats", bm.repeats, "Timed runs per cell")->check(CLI::PositiveNumber);
    benchmark->add_flag("--no-timing", bm.no_timing, "Report times as 0 for byte-stable output");
    benchmark->add_option("--out", bm.out, "CSV path (default: standard output)");

    std::vector<std::string> argv_storage;
    argv_storage.reserve(args.size() + 1);
    argv_storage.emplace_back("crfsmooth");
    argv_storage.insert(argv_storage.end(), args.begin(), args.end());
    std::vector<const char*> argv;
    for (const auto& s : argv_storage) {
        argv.push_back(s.c_str());
    }

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
        const auto subs = app.get_subcommands();
        out << (subs.empty() ? app.help() : subs.front()->help());
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n";
        const auto subs = app.get_subcommands();
        err << (subs.empty() ? app.help() : subs.front()->help());
        return kExitValidation;
    }

    try {
        if (generate->parsed()) run_generate(gen, out);
        else if (train_cmd->parsed()) run_train(tr, out);
        else if (attack->parsed()) run_attack_cmd(at, out);
        else if (smooth_cmd->parsed()) run_smooth(sm, out);
        else if (eval->parsed()) run_eval(ev, out);
        else if (bound->parsed()) run_bound(bd, out);
        else if (benchmark->parsed()) run_benchmark(bm, out);
    } catch (const ValidationError& e) {
        err << "error: " << e.what() << '\n';
        return kExitValidation;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
    return kExitOk;
}

}  // namespace crfsmooth::cli

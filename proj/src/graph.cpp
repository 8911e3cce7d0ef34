#include "crfsmooth/graph.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string_view>
#include <system_error>

#include <nlohmann/json.hpp>

namespace crfsmooth {

namespace fs = std::filesystem;
using nlohmann::json;

std::string format_double(double value) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
    if (ec != std::errc{}) {
        throw RuntimeError("cannot format number");
    }
    return std::string(buf, ptr);
}

// ---------------------------------------------------------------------------
// Graph

Graph::Graph(std::size_t num_nodes, EdgeList edges, Matrix features, Labels labels, int num_classes)
    : num_nodes_(num_nodes), num_classes_(num_classes) {
    if (num_classes < 1) {
        throw ValidationError("num_classes must be >= 1");
    }
    if (labels.size() != num_nodes) {
        throw ValidationError("expected " + std::to_string(num_nodes) + " labels, got " +
                              std::to_string(labels.size()));
    }
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= num_classes) {
            throw ValidationError("label out of range at node " + std::to_string(i));
        }
    }
    validate_features(features);
    edges_ = std::make_shared<const EdgeList>(canonical_edges(num_nodes, std::move(edges)));
    features_ = std::make_shared<const Matrix>(std::move(features));
    labels_ = std::make_shared<const Labels>(std::move(labels));
    rehash();
}

EdgeList Graph::canonical_edges(std::size_t num_nodes, EdgeList edges) {
    for (Edge& e : edges) {
        if (e.u >= num_nodes || e.v >= num_nodes) {
            throw ValidationError("edge (" + std::to_string(e.u) + "," + std::to_string(e.v) +
                                  ") index out of range");
        }
        if (e.u == e.v) {
            throw ValidationError("self-loop at node " + std::to_string(e.u));
        }
        if (e.u > e.v) {
            std::swap(e.u, e.v);
        }
    }
    std::sort(edges.begin(), edges.end());
    auto dup = std::adjacent_find(edges.begin(), edges.end());
    if (dup != edges.end()) {
        throw ValidationError("duplicate edge (" + std::to_string(dup->u) + "," + std::to_string(dup->v) +
                              ")");
    }
    return edges;
}

void Graph::validate_features(const Matrix& features) const {
    if (static_cast<std::size_t>(features.rows()) != num_nodes_) {
        throw ValidationError("feature matrix has " + std::to_string(features.rows()) + " rows, expected " +
                              std::to_string(num_nodes_));
    }
    if (!features.allFinite()) {
        throw ValidationError("non-finite feature value");
    }
}

void Graph::rehash() noexcept {
    // FNV-1a over (n, u, v, ...).
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto feed = [&h](std::uint64_t x) {
        for (int i = 0; i < 8; ++i) {
            h ^= (x >> (8 * i)) & 0xffU;
            h *= 0x100000001b3ULL;
        }
    };
    feed(num_nodes_);
    for (const Edge& e : *edges_) {
        feed((static_cast<std::uint64_t>(e.u) << 32) | e.v);
    }
    structure_hash_ = h;
}

bool Graph::has_edge(NodeIndex a, NodeIndex b) const {
    if (a > b) {
        std::swap(a, b);
    }
    return std::binary_search(edges_->begin(), edges_->end(), Edge{a, b});
}

Graph Graph::with_edges(EdgeList edges) const {
    Graph g = *this;
    g.edges_ = std::make_shared<const EdgeList>(canonical_edges(num_nodes_, std::move(edges)));
    g.rehash();
    return g;
}

Graph Graph::with_features(Matrix features) const {
    validate_features(features);
    Graph g = *this;
    g.features_ = std::make_shared<const Matrix>(std::move(features));
    return g;
}

bool operator==(const Graph& a, const Graph& b) {
    return a.num_nodes_ == b.num_nodes_ && a.num_classes_ == b.num_classes_ && *a.edges_ == *b.edges_ &&
           a.features_->rows() == b.features_->rows() && a.features_->cols() == b.features_->cols() &&
           *a.features_ == *b.features_ && *a.labels_ == *b.labels_;
}

void DatasetSplits::validate(std::size_t num_nodes) const {
    if (train.empty()) {
        throw ValidationError("train split is empty");
    }
    std::vector<char> seen(num_nodes, 0);
    for (const auto* part : {&train, &val, &test}) {
        for (NodeIndex i : *part) {
            if (i >= num_nodes) {
                throw ValidationError("split index " + std::to_string(i) + " out of range");
            }
            if (seen[i]) {
                throw ValidationError("node " + std::to_string(i) + " appears in more than one split");
            }
            seen[i] = 1;
        }
    }
}

// ---------------------------------------------------------------------------
// Dataset files

namespace {

[[noreturn]] void fail_at(const fs::path& file, std::size_t line, const std::string& what) {
    throw ValidationError(file.filename().string() + ":" + std::to_string(line) + ": " + what);
}

std::ifstream open_in(const fs::path& file) {
    std::ifstream in(file);
    if (!in) {
        throw ValidationError("missing file " + file.string());
    }
    return in;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.back() == '\r' || s.back() == ' ' || s.back() == '\t')) {
        s.remove_suffix(1);
    }
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) {
        s.remove_prefix(1);
    }
    return s;
}

template <typename T>
bool parse_number(std::string_view s, T& out) {
    s = trim(s);
    if (!s.empty() && s.front() == '+') {
        s.remove_prefix(1);
    }
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc{} && ptr == s.data() + s.size() && !s.empty();
}

std::vector<std::string_view> split_commas(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        std::size_t pos = line.find(',', start);
        out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos) {
            break;
        }
        start = pos + 1;
    }
    return out;
}

json read_json(const fs::path& file) {
    std::ifstream in = open_in(file);
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ValidationError(file.filename().string() + ": " + e.what());
    }
}

std::vector<NodeIndex> read_index_list(const json& j, const char* key, const fs::path& file) {
    if (!j.contains(key) || !j.at(key).is_array()) {
        throw ValidationError(file.filename().string() + ": missing array \"" + key + "\"");
    }
    std::vector<NodeIndex> out;
    for (const auto& v : j.at(key)) {
        if (!(v.is_number_integer() && v >= 0)) {
            throw ValidationError(file.filename().string() + ": \"" + key + "\" must hold non-negative integers");
        }
        out.push_back(v.get<NodeIndex>());
    }
    return out;
}

std::size_t read_count(const json& j, const char* key, const fs::path& file) {
    if (!j.contains(key) || !(j.at(key).is_number_integer() && j.at(key) >= 0)) {
        throw ValidationError(file.filename().string() + ": missing non-negative integer \"" + key + "\"");
    }
    return j.at(key).get<std::size_t>();
}

void write_file(const fs::path& file, const std::string& content) {
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw RuntimeError("cannot write " + file.string());
    }
    out << content;
    if (!out) {
        throw RuntimeError("write failed for " + file.string());
    }
}

}  // namespace

Dataset load_dataset(const fs::path& dir) {
    const fs::path meta_file = dir / "meta.json";
    json meta = read_json(meta_file);
    const std::size_t n = read_count(meta, "num_nodes", meta_file);
    const std::size_t dim = read_count(meta, "num_features", meta_file);
    const std::size_t num_classes = read_count(meta, "num_classes", meta_file);
    if (n == 0) {
        throw ValidationError("empty dataset rejected");
    }

    std::string line;

    const fs::path edges_file = dir / "edges.csv";
    EdgeList edges;
    {
        std::ifstream in = open_in(edges_file);
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            std::string_view sv = trim(line);
            if (sv.empty()) {
                continue;
            }
            auto cols = split_commas(sv);
            std::uint64_t u = 0, v = 0;
            if (cols.size() != 2 || !parse_number(cols[0], u) || !parse_number(cols[1], v)) {
                fail_at(edges_file, lineno, "malformed row, expected src,dst");
            }
            if (u >= n || v >= n) {
                fail_at(edges_file, lineno, "index out of range");
            }
            if (u == v) {
                fail_at(edges_file, lineno, "self-loop rejected");
            }
            edges.push_back(Edge{static_cast<NodeIndex>(std::min(u, v)), static_cast<NodeIndex>(std::max(u, v))});
        }
    }
    {
        EdgeList sorted = edges;
        std::sort(sorted.begin(), sorted.end());
        auto dup = std::adjacent_find(sorted.begin(), sorted.end());
        if (dup != sorted.end()) {
            throw ValidationError(edges_file.filename().string() + ": duplicate edge " + std::to_string(dup->u) +
                                  "," + std::to_string(dup->v) + " after symmetrization");
        }
    }

    const fs::path features_file = dir / "features.csv";
    Matrix features(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
    {
        std::ifstream in = open_in(features_file);
        std::size_t lineno = 0;
        std::size_t row = 0;
        while (std::getline(in, line)) {
            ++lineno;
            std::string_view sv = trim(line);
            if (sv.empty()) {
                continue;
            }
            if (row >= n) {
                fail_at(features_file, lineno, "more than " + std::to_string(n) + " rows");
            }
            auto cols = split_commas(sv);
            if (cols.size() != dim) {
                fail_at(features_file, lineno,
                        "malformed row, expected " + std::to_string(dim) + " values, got " +
                            std::to_string(cols.size()));
            }
            for (std::size_t c = 0; c < dim; ++c) {
                double x = 0.0;
                if (!parse_number(cols[c], x)) {
                    fail_at(features_file, lineno, "malformed number in column " + std::to_string(c));
                }
                if (!std::isfinite(x)) {
                    fail_at(features_file, lineno, "non-finite feature");
                }
                features(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(c)) = x;
            }
            ++row;
        }
        if (row != n) {
            fail_at(features_file, lineno, "expected " + std::to_string(n) + " rows, got " + std::to_string(row));
        }
    }

    const fs::path labels_file = dir / "labels.csv";
    Labels labels;
    {
        std::ifstream in = open_in(labels_file);
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            std::string_view sv = trim(line);
            if (sv.empty()) {
                continue;
            }
            long long y = 0;
            if (!parse_number(sv, y)) {
                fail_at(labels_file, lineno, "malformed label");
            }
            if (y < 0 || y >= static_cast<long long>(num_classes)) {
                fail_at(labels_file, lineno, "label out of range");
            }
            labels.push_back(static_cast<int>(y));
        }
        if (labels.size() != n) {
            fail_at(labels_file, lineno,
                    "expected " + std::to_string(n) + " labels, got " + std::to_string(labels.size()));
        }
    }

    const fs::path splits_file = dir / "splits.json";
    json sj = read_json(splits_file);
    DatasetSplits splits{read_index_list(sj, "train", splits_file), read_index_list(sj, "val", splits_file),
                         read_index_list(sj, "test", splits_file)};
    splits.validate(n);

    return Dataset{Graph(n, std::move(edges), std::move(features), std::move(labels), static_cast<int>(num_classes)),
                   std::move(splits)};
}

void save_dataset(const Graph& graph, const DatasetSplits& splits, const fs::path& dir) {
    if (graph.num_nodes() == 0) {
        throw ValidationError("empty dataset rejected");
    }
    splits.validate(graph.num_nodes());
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) {
        throw RuntimeError("cannot create " + dir.string() + ": " + ec.message());
    }

    json meta = {{"num_nodes", graph.num_nodes()},
                 {"num_features", graph.feature_dim()},
                 {"num_classes", graph.num_classes()}};
    write_file(dir / "meta.json", meta.dump() + "\n");

    std::string buf;
    for (const Edge& e : graph.edges()) {
        buf += std::to_string(e.u);
        buf += ',';
        buf += std::to_string(e.v);
        buf += '\n';
    }
    write_file(dir / "edges.csv", buf);

    buf.clear();
    const Matrix& x = graph.features();
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        for (Eigen::Index j = 0; j < x.cols(); ++j) {
            if (j > 0) {
                buf += ',';
            }
            buf += format_double(x(i, j));
        }
        buf += '\n';
    }
    write_file(dir / "features.csv", buf);

    buf.clear();
    for (int y : graph.labels()) {
        buf += std::to_string(y);
        buf += '\n';
    }
    write_file(dir / "labels.csv", buf);

    json sj = {{"train", splits.train}, {"val", splits.val}, {"test", splits.test}};
    write_file(dir / "splits.json", sj.dump() + "\n");
}

// ---------------------------------------------------------------------------
// Synthetic SBM

Dataset generate_synthetic(const SyntheticSpec& spec) {
    if (spec.num_nodes == 0) {
        throw ValidationError("num_nodes must be >= 1");
    }
    if (spec.num_classes < 1 || static_cast<std::size_t>(spec.num_classes) > spec.num_nodes) {
        throw ValidationError("num_classes must be in [1, num_nodes]");
    }
    if (!(spec.p_out >= 0.0 && spec.p_out <= spec.p_in && spec.p_in <= 1.0)) {
        throw ValidationError("need 0 <= p_out <= p_in <= 1");
    }
    if (spec.feature_dim < static_cast<std::size_t>(spec.num_classes)) {
        throw ValidationError("feature_dim must be >= num_classes");
    }
    if (!std::isfinite(spec.class_shift)) {
        throw ValidationError("class_shift must be finite");
    }

    const std::size_t n = spec.num_nodes;
    const auto num_classes = static_cast<std::size_t>(spec.num_classes);
    Labels labels(n);
    for (std::size_t i = 0; i < n; ++i) {
        labels[i] = static_cast<int>(i * num_classes / n);
    }

    Rng edge_rng = make_rng(spec.seed, {1});
    EdgeList edges;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const double p = labels[i] == labels[j] ? spec.p_in : spec.p_out;
            if (uniform01(edge_rng) < p) {
                edges.push_back(Edge{static_cast<NodeIndex>(i), static_cast<NodeIndex>(j)});
            }
        }
    }

    Rng feature_rng = make_rng(spec.seed, {2});
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix features(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(spec.feature_dim));
    for (Eigen::Index i = 0; i < features.rows(); ++i) {
        for (Eigen::Index j = 0; j < features.cols(); ++j) {
            features(i, j) = normal(feature_rng);
        }
        features(i, labels[static_cast<std::size_t>(i)]) += spec.class_shift;
    }

    Rng split_rng = make_rng(spec.seed, {3});
    std::vector<NodeIndex> order(n);
    std::iota(order.begin(), order.end(), NodeIndex{0});
    std::shuffle(order.begin(), order.end(), split_rng);
    const std::size_t n_train = std::max<std::size_t>(1, n / 10);
    const std::size_t n_val = std::min(n - n_train, n / 10);
    DatasetSplits splits;
    splits.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
    splits.val.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
                      order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    splits.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), order.end());
    for (auto* part : {&splits.train, &splits.val, &splits.test}) {
        std::sort(part->begin(), part->end());
    }

    return Dataset{Graph(n, std::move(edges), std::move(features), std::move(labels), spec.num_classes),
                   std::move(splits)};
}

// ---------------------------------------------------------------------------

SparseMatrix normalize_adjacency(const Graph& graph) {
    const std::size_t n = graph.num_nodes();
    std::vector<double> degree(n, 1.0);
    for (const Edge& e : graph.edges()) {
        degree[e.u] += 1.0;
        degree[e.v] += 1.0;
    }
    std::vector<double> inv_sqrt(n);
    for (std::size_t i = 0; i < n; ++i) {
        inv_sqrt[i] = 1.0 / std::sqrt(degree[i]);
    }

    std::vector<Eigen::Triplet<double>> triplets;
    triplets.reserve(n + 2 * graph.num_edges());
    for (std::size_t i = 0; i < n; ++i) {
        triplets.emplace_back(static_cast<int>(i), static_cast<int>(i), inv_sqrt[i] * inv_sqrt[i]);
    }
    for (const Edge& e : graph.edges()) {
        const double w = inv_sqrt[e.u] * inv_sqrt[e.v];
        triplets.emplace_back(static_cast<int>(e.u), static_cast<int>(e.v), w);
        triplets.emplace_back(static_cast<int>(e.v), static_cast<int>(e.u), w);
    }
    SparseMatrix a(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    a.setFromTriplets(triplets.begin(), triplets.end());
    return a;
}

std::size_t hamming_distance(const Graph& a, const Graph& b) {
    if (a.num_nodes() != b.num_nodes()) {
        throw ValidationError("hamming_distance: node-count mismatch (" + std::to_string(a.num_nodes()) + " vs " +
                              std::to_string(b.num_nodes()) + ")");
    }
    // Diagonals are always zero for a valid Graph, so only i < j can differ.
    std::size_t count = 0;
    auto ia = a.edges().begin(), ea = a.edges().end();
    auto ib = b.edges().begin(), eb = b.edges().end();
    while (ia != ea && ib != eb) {
        if (*ia < *ib) {
            ++count;
            ++ia;
        } else if (*ib < *ia) {
            ++count;
            ++ib;
        } else {
            ++ia;
            ++ib;
        }
    }
    return count + static_cast<std::size_t>(ea - ia) + static_cast<std::size_t>(eb - ib);
}

double edge_homophily(const Graph& graph) {
    if (graph.num_edges() == 0) {
        return 0.0;
    }
    const Labels& y = graph.labels();
    std::size_t same = 0;
    for (const Edge& e : graph.edges()) {
        same += y[e.u] == y[e.v] ? 1 : 0;
    }
    return static_cast<double>(same) / static_cast<double>(graph.num_edges());
}

}  // namespace crfsmooth

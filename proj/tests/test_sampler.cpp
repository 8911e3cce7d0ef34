#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <map>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/multiprecision/cpp_bin_float.hpp>
#include <boost/multiprecision/cpp_int.hpp>

#include "crfsmooth/sampler.hpp"
#include "test_support.hpp"

using namespace crfsmooth;
using boost::multiprecision::cpp_int;
using crfsmooth::testing::edgeless_graph;
using crfsmooth::testing::random_graph;

namespace {

cpp_int exact_binomial(unsigned n, unsigned k) {
    cpp_int num = 1, den = 1;
    for (unsigned i = 1; i <= k; ++i) {
        num *= n - k + i;
        den *= i;
    }
    return num / den;
}

double to_double(const cpp_int& v) { return v.convert_to<double>(); }

// Exact Binomial(r, 1/2) pmf from big integers.
std::vector<double> binomial_half_pmf(unsigned r) {
    std::vector<double> pmf;
    const double total = std::ldexp(1.0, static_cast<int>(r));
    for (unsigned d = 0; d <= r; ++d) {
        pmf.push_back(to_double(exact_binomial(r, d)) / total);
    }
    return pmf;
}

}  // namespace

TEST_CASE("sample_distance") {
    Rng rng(1);
    SUBCASE("r = 0") {
        for (int i = 0; i < 100; ++i) {
            CHECK(sample_distance(rng, 0) == 0);
        }
    }
    SUBCASE("r = 2 stratum probabilities") {
        CHECK(prior_similarity(2, 0) == doctest::Approx(0.25).epsilon(1e-14));
        CHECK(prior_similarity(2, 1) == doctest::Approx(0.5).epsilon(1e-14));
        CHECK(prior_similarity(2, 2) == doctest::Approx(0.25).epsilon(1e-14));
    }
    SUBCASE("r = 8 total variation") {
        const auto pmf = binomial_half_pmf(8);
        std::vector<double> counts(9, 0.0);
        const int draws = 100000;
        for (int i = 0; i < draws; ++i) {
            const std::size_t d = sample_distance(rng, 8);
            REQUIRE(d <= 8);
            counts[d] += 1.0;
        }
        double tv = 0.0;
        for (int d = 0; d <= 8; ++d) {
            tv += std::abs(counts[static_cast<std::size_t>(d)] / draws - pmf[static_cast<std::size_t>(d)]);
        }
        CHECK(tv / 2.0 <= 0.01);
    }
}

TEST_CASE("sample_distance passes chi-square goodness of fit") {
    for (unsigned r : {2u, 4u, 8u}) {
        Rng rng(1000 + r);
        const auto pmf = binomial_half_pmf(r);
        std::vector<double> counts(r + 1, 0.0);
        const double draws = 100000;
        for (int i = 0; i < static_cast<int>(draws); ++i) {
            counts[sample_distance(rng, r)] += 1.0;
        }
        double stat = 0.0;
        for (unsigned d = 0; d <= r; ++d) {
            const double expected = draws * pmf[d];
            stat += (counts[d] - expected) * (counts[d] - expected) / expected;
        }
        const boost::math::chi_squared dist(r);
        CHECK(stat < boost::math::quantile(boost::math::complement(dist, 0.001)));
    }
}

TEST_CASE("sample_structural_neighbor") {
    Rng rng(4);
    const Graph g = random_graph(rng, 15, 2, 2, 0.3);

    SUBCASE("r = 0 returns the input") {
        const NeighborSample s = sample_structural_neighbor(rng, g, StructuralSampleConfig{0});
        CHECK(s.distance == 0.0);
        CHECK(s.graph == g);
        CHECK(s.similarity == 1.0);
    }
    SUBCASE("reported distance is the Hamming distance") {
        for (int i = 0; i < 500; ++i) {
            const NeighborSample s = sample_structural_neighbor(rng, g, StructuralSampleConfig{12});
            CHECK(static_cast<double>(hamming_distance(g, s.graph)) == s.distance);
            CHECK(s.distance <= 12.0);
            CHECK(s.similarity == prior_similarity(12, static_cast<std::uint64_t>(s.distance)));
            CHECK(&s.graph.features() == &g.features());
        }
    }
    SUBCASE("radius beyond the off-diagonal positions") {
        const Graph tiny = edgeless_graph(3);
        CHECK_NOTHROW(sample_structural_neighbor(rng, tiny, StructuralSampleConfig{3}));
        CHECK_THROWS_AS(sample_structural_neighbor(rng, tiny, StructuralSampleConfig{4}), ValidationError);
    }
    SUBCASE("radius from ratio uses the floor") {
        CHECK(StructuralSampleConfig::from_ratio(0.02, 5429).radius == 108);
        CHECK(StructuralSampleConfig::from_ratio(0.5, 3).radius == 1);
    }
}

TEST_CASE("flipped positions are uniform given d") {
    // n = 3 has three off-diagonal positions; given d each is flipped with probability d/3.
    const Graph base = edgeless_graph(3).with_edges({{0, 1}});
    Rng rng(77);
    std::map<std::size_t, std::array<double, 3>> flips;
    std::map<std::size_t, double> seen;
    const Edge positions[3] = {{0, 1}, {0, 2}, {1, 2}};
    for (int i = 0; i < 100000; ++i) {
        const NeighborSample s = sample_structural_neighbor(rng, base, StructuralSampleConfig{3});
        const auto d = static_cast<std::size_t>(s.distance);
        seen[d] += 1.0;
        for (int p = 0; p < 3; ++p) {
            if (base.has_edge(positions[p].u, positions[p].v) != s.graph.has_edge(positions[p].u, positions[p].v)) {
                flips[d][static_cast<std::size_t>(p)] += 1.0;
            }
        }
    }
    for (std::size_t d = 1; d <= 2; ++d) {
        for (int p = 0; p < 3; ++p) {
            CHECK(flips[d][static_cast<std::size_t>(p)] / seen[d] == doctest::Approx(d / 3.0).epsilon(0.01));
        }
    }
}

TEST_CASE("sample_feature_neighbor") {
    Rng rng(6);
    const Graph g = random_graph(rng, 6, 4, 2, 0.4);

    SUBCASE("vanishing radius") {
        const NeighborSample s = sample_feature_neighbor(rng, g, FeatureSampleConfig{1e-300});
        CHECK((s.graph.features() - g.features()).cwiseAbs().maxCoeff() == 0.0);
        const NeighborSample zero = sample_feature_neighbor(rng, g, FeatureSampleConfig{0.0});
        CHECK(zero.graph == g);
    }
    SUBCASE("distance never exceeds the radius, adjacency untouched") {
        for (int i = 0; i < 1000; ++i) {
            const NeighborSample s = sample_feature_neighbor(rng, g, FeatureSampleConfig{0.7});
            CHECK(s.distance <= 0.7);
            CHECK((s.graph.features() - g.features()).norm() <= 0.7 + 1e-9);
            CHECK(s.graph.edges() == g.edges());
        }
    }
    SUBCASE("radius density 2t on the unit disk") {
        const Graph flat(1, {}, Matrix::Zero(1, 2), {0}, 1);
        double sum = 0.0;
        const int draws = 100000;
        for (int i = 0; i < draws; ++i) {
            sum += sample_feature_neighbor(rng, flat, FeatureSampleConfig{1.0}).distance;
        }
        CHECK(std::abs(sum / draws - 2.0 / 3.0) <= 0.01);
    }
}

TEST_CASE("log_binomial_coefficient") {
    CHECK(std::exp(log_binomial_coefficient(2, 1)) == doctest::Approx(2.0).epsilon(1e-13));
    CHECK(std::exp(log_binomial_coefficient(4, 2)) == doctest::Approx(6.0).epsilon(1e-13));
    CHECK(log_binomial_coefficient(9, 0) == 0.0);
    CHECK_THROWS_AS(log_binomial_coefficient(3, 4), ValidationError);

    for (unsigned n = 0; n <= 60; ++n) {
        for (unsigned k = 0; k <= n; ++k) {
            const double exact = to_double(exact_binomial(n, k));
            CHECK(std::abs(std::exp(log_binomial_coefficient(n, k)) - exact) / exact <= 1e-10);
        }
    }
}

TEST_CASE("prior_similarity") {
    CHECK(prior_similarity(2, 1) == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(prior_similarity(4, 2) == doctest::Approx(0.375).epsilon(1e-14));
    using boost::multiprecision::cpp_bin_float_50;
    const cpp_bin_float_50 ratio = cpp_bin_float_50(exact_binomial(50, 25)) / cpp_bin_float_50(cpp_int(1) << 50);
    CHECK(std::abs(prior_similarity(50, 25) / ratio.convert_to<double>() - 1.0) <= 1e-10);
    CHECK(prior_similarity(5000, 0) == 0.0);
    CHECK_THROWS_AS(prior_similarity(2, 3), ValidationError);
}

TEST_CASE("ball_lower_bound") {
    SUBCASE("n = 2, r = 1 closed form") {
        // eps = 1/3: 2^{3 H(1/3)} = 3 * (3/2)^2 = 27/4 and sqrt(24 * 2/9) = 4 / sqrt(3).
        CHECK(ball_lower_bound(2, 1) == doctest::Approx(27.0 * std::sqrt(3.0) / 16.0).epsilon(1e-12));
        CHECK(ball_lower_bound(2, 1) <= 4.0);
    }
    SUBCASE("monotone in r up to half the positions") {
        for (std::uint64_t n = 2; n <= 30; ++n) {
            const std::uint64_t half = adjacency_positions(n) / 2;
            for (std::uint64_t r = 2; r <= half; ++r) {
                CHECK(log2_ball_lower_bound(n, r) > log2_ball_lower_bound(n, r - 1));
            }
        }
    }
    SUBCASE("degenerate epsilon") {
        CHECK_THROWS_WITH_AS(ball_lower_bound(3, 0), doctest::Contains("degenerate epsilon"), ValidationError);
        CHECK_THROWS_WITH_AS(ball_lower_bound(3, 6), doctest::Contains("degenerate epsilon"), ValidationError);
    }
    SUBCASE("finite for large graphs in log form") {
        CHECK(std::isfinite(log2_ball_lower_bound(2708, 108)));
    }
}

TEST_CASE("enumerate_hamming_ball") {
    CHECK(enumerate_hamming_ball(edgeless_graph(2), 0) == 1);
    CHECK(enumerate_hamming_ball(edgeless_graph(2), 3) == 8);
    CHECK(enumerate_hamming_ball(edgeless_graph(3), 2) == 1 + 6 + 15);
    CHECK_THROWS_AS(enumerate_hamming_ball(edgeless_graph(7), 1), ValidationError);

    // Ball size does not depend on the center.
    const Graph center = edgeless_graph(4).with_edges({{0, 1}, {2, 3}, {1, 3}});
    for (std::uint64_t r = 0; r <= 10; ++r) {
        std::uint64_t binomial_sum = 0;
        for (unsigned d = 0; d <= r; ++d) {
            binomial_sum += exact_binomial(10, d).convert_to<std::uint64_t>();
        }
        CHECK(enumerate_hamming_ball(center, r) == binomial_sum);
    }
}

TEST_CASE("ball size dominates the lower bound for n in {2, 3}") {
    for (std::uint64_t n : {2u, 3u}) {
        for (std::uint64_t r = 1; r < adjacency_positions(n); ++r) {
            CHECK(static_cast<double>(enumerate_hamming_ball(edgeless_graph(n), r)) >= ball_lower_bound(n, r));
        }
    }
}

TEST_CASE("same seed, same samples") {
    Rng g_rng(3);
    const Graph g = random_graph(g_rng, 12, 3, 2, 0.3);
    Rng a(99), b(99);
    for (int i = 0; i < 20; ++i) {
        CHECK(sample_structural_neighbor(a, g, StructuralSampleConfig{6}).graph ==
              sample_structural_neighbor(b, g, StructuralSampleConfig{6}).graph);
        CHECK(sample_feature_neighbor(a, g, FeatureSampleConfig{0.4}).graph ==
              sample_feature_neighbor(b, g, FeatureSampleConfig{0.4}).graph);
    }
}

#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace crfsmooth {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Rng = std::mt19937_64;

/// Invalid input or configuration. The CLI maps this to exit code 1.
class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Failure while doing work (I/O, divergence, degenerate numerics). Exit code 2.
class RuntimeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// SplitMix64 finalizer.
constexpr std::uint64_t mix_seed(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Derives a child seed from a root seed and a path of branch indices.
/// Two different paths give independent streams, so parallel branches can
/// be seeded without depending on evaluation order.
inline std::uint64_t derive_seed(std::uint64_t root, std::span<const std::uint64_t> path) noexcept {
    std::uint64_t s = mix_seed(root);
    for (std::uint64_t p : path) {
        s = mix_seed(s ^ mix_seed(p + 0x632be59bd9b4e019ULL));
    }
    return s;
}

inline std::uint64_t derive_seed(std::uint64_t root, std::initializer_list<std::uint64_t> path) noexcept {
    return derive_seed(root, std::span<const std::uint64_t>(path.begin(), path.size()));
}

inline Rng make_rng(std::uint64_t root, std::initializer_list<std::uint64_t> path = {}) {
    return Rng(derive_seed(root, path));
}

/// Uniform double in [0, 1) from the top 53 bits of one draw.
inline double uniform01(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Shortest decimal that round-trips to the same double.
std::string format_double(double value);

}  // namespace crfsmooth

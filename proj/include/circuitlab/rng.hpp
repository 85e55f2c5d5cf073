#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <utility>
#include <vector>

namespace circuitlab {

// Derives an independent stream seed from (seed, index). Used so that record i
// of a dataset depends only on (seed, i), regardless of worker scheduling.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

// Seeded generator with platform-independent sampling helpers.
// std::uniform_int_distribution is implementation-defined, so bounded draws are
// done here by rejection over the raw mt19937_64 stream.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }

    // Uniform integer in [0, n). n must be > 0.
    std::uint64_t below(std::uint64_t n);

    // Uniform integer in [lo, hi] inclusive.
    int between(int lo, int hi);

    // Uniform double in [0, 1).
    double unit();

    bool chance(double p) { return unit() < p; }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    template <typename T>
    const T& pick(std::span<const T> v) {
        return v[static_cast<std::size_t>(below(v.size()))];
    }
    template <typename T>
    const T& pick(const std::vector<T>& v) {
        return pick(std::span<const T>(v));
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace circuitlab

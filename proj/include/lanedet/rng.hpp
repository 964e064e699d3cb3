#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

namespace lanedet {

// xoshiro256** seeded through splitmix64. Every random draw in the project
// goes through this generator so results depend only on the seed.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0);

    std::uint64_t next_u64();
    // Uniform in [0, 1).
    double uniform();
    double uniform(double lo, double hi);
    // Uniform integer in [lo, hi].
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
    bool bernoulli(double p);
    // Standard normal by Box-Muller.
    double normal();

    // Derives an independent stream, e.g. one per sample index.
    static std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(uniform_int(0, static_cast<std::int64_t>(i) - 1));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::array<std::uint64_t, 4> s_{};
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace lanedet

#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

namespace synthaug {

// SplitMix64 finalizer; also used as the seed expander for RngStream.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

// Deterministic random stream: xoshiro256** whose 256-bit state is filled by
// iterating SplitMix64 from splitmix64(master_seed ^ stream_index).
// No OS entropy is consulted anywhere.
class RngStream {
public:
    RngStream(std::uint64_t master_seed, std::uint64_t stream_index);

    std::uint64_t master_seed() const noexcept { return master_seed_; }
    std::uint64_t stream_index() const noexcept { return stream_index_; }

    std::uint64_t next_u64() noexcept;
    // Uniform in [0, 1) with 53 bits of resolution.
    double uniform() noexcept;
    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
    // Uniform integer in [0, n). Unbiased (rejection sampling).
    std::uint64_t below(std::uint64_t n) noexcept;
    // Standard normal via the Box-Muller transform; the second variate of each pair is cached.
    double normal() noexcept;

    template <typename T>
    void fill_normal(std::span<T> out, double stddev = 1.0) noexcept {
        for (auto& v : out) v = static_cast<T>(normal() * stddev);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) noexcept {
        for (std::size_t i = v.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // Independent child stream. Children of distinct parents or distinct indices never share state.
    RngStream derive(std::uint64_t child_index) const noexcept;

private:
    std::uint64_t master_seed_;
    std::uint64_t stream_index_;
    std::uint64_t s_[4];
    double cached_normal_ = 0.0;
    bool has_cached_normal_ = false;
};

inline RngStream derive_stream(std::uint64_t master_seed, std::uint64_t index) {
    return RngStream(master_seed, index);
}

} // namespace synthaug

#include "synthaug/rng.hpp"

#include <cmath>
#include <numbers>

namespace synthaug {

namespace {

constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept { return (x << k) | (x >> (64 - k)); }

} // namespace

RngStream::RngStream(std::uint64_t master_seed, std::uint64_t stream_index)
    : master_seed_(master_seed), stream_index_(stream_index) {
    std::uint64_t x = splitmix64(master_seed ^ stream_index);
    for (auto& s : s_) {
        x += 0x9E3779B97F4A7C15ULL;
        s = splitmix64(x);
    }
}

std::uint64_t RngStream::next_u64() noexcept {
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
}

double RngStream::uniform() noexcept {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::uint64_t RngStream::below(std::uint64_t n) noexcept {
    if (n <= 1) return 0;
    const std::uint64_t limit = -n % n; // 2^64 mod n
    for (;;) {
        const std::uint64_t r = next_u64();
        if (r >= limit) return r % n;
    }
}

double RngStream::normal() noexcept {
    if (has_cached_normal_) {
        has_cached_normal_ = false;
        return cached_normal_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    cached_normal_ = r * std::sin(theta);
    has_cached_normal_ = true;
    return r * std::cos(theta);
}

RngStream RngStream::derive(std::uint64_t child_index) const noexcept {
    // The child's master seed folds in the parent's identity so that (parent, child) pairs stay distinct.
    const std::uint64_t parent = splitmix64(master_seed_ ^ splitmix64(stream_index_ + 0x632BE59BD9B4E019ULL));
    return RngStream(parent, child_index);
}

} // namespace synthaug

#pragma once

#include <cmath>
#include <cstdint>
#include <limits>

namespace twostage {

/// SplitMix64 finalizer. Bijective 64-bit mixer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Labels for the independent streams split off a run seed.
enum class StreamLabel : std::uint64_t {
    arrivals = 1,
    sizes = 2,
    policy = 3,
    replication = 4,
};

/// Counter-based random stream: draw k is mix64(key + k * gamma).
///
/// Streams are split by hashing the parent key with a label, so the draws
/// consumed by one component never shift those of another. Satisfies
/// UniformRandomBitGenerator.
class Stream {
public:
    using result_type = std::uint64_t;

    explicit Stream(std::uint64_t key = 0) noexcept : key_(mix64(key ^ 0x6a09e667f3bcc909ULL)) {}

    [[nodiscard]] Stream split(std::uint64_t label) const noexcept {
        Stream child;
        child.key_ = mix64(key_ ^ mix64(label + kGamma));
        return child;
    }
    [[nodiscard]] Stream split(StreamLabel label) const noexcept {
        return split(static_cast<std::uint64_t>(label));
    }

    result_type next() noexcept { return mix64(key_ + (++counter_) * kGamma); }
    result_type operator()() noexcept { return next(); }

    /// Uniform on the open interval (0, 1); never returns 0 or 1.
    double uniform() noexcept { return (static_cast<double>(next() >> 11) + 0.5) * 0x1.0p-53; }

    /// Unbiased integer in [0, bound), Lemire's multiply-and-reject.
    std::uint64_t below(std::uint64_t bound) noexcept {
        unsigned __int128 m = static_cast<unsigned __int128>(next()) * bound;
        auto low = static_cast<std::uint64_t>(m);
        if (low < bound) {
            const std::uint64_t threshold = (0 - bound) % bound;
            while (low < threshold) {
                m = static_cast<unsigned __int128>(next()) * bound;
                low = static_cast<std::uint64_t>(m);
            }
        }
        return static_cast<std::uint64_t>(m >> 64);
    }

    /// Exponential with the given rate.
    double exponential(double rate) noexcept { return -std::log(uniform()) / rate; }

    [[nodiscard]] std::uint64_t counter() const noexcept { return counter_; }

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

private:
    static constexpr std::uint64_t kGamma = 0x9e3779b97f4a7c15ULL;
    std::uint64_t key_ = 0;
    std::uint64_t counter_ = 0;
};

/// Seed for replication `index` derived from a base seed.
constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) noexcept {
    return mix64(mix64(base) ^ (index * 0xd1b54a32d192ed03ULL + 1));
}

} // namespace twostage

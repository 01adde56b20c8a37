#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <vector>

namespace shortfall {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

inline std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace detail

/// Self-contained xoshiro256++ stream with Box-Muller normals.  Streams are
/// keyed by (seed, stream_index) so every Monte Carlo path owns its own
/// generator and results do not depend on scheduling.
class PathRng {
public:
    PathRng(std::uint64_t seed, std::uint64_t stream_index) {
        std::uint64_t sm = seed ^ (0xD1B54A32D192ED03ULL * (stream_index + 1));
        for (auto& word : state_) word = detail::splitmix64(sm);
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = detail::rotl(state_[0] + state_[3], 23) + state_[0];
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = detail::rotl(state_[3], 45);
        return result;
    }

    /// Uniform in (0, 1]; never returns 0 so log() below is safe.
    double uniform() {
        return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    }

    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        const double u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(angle);
        have_spare_ = true;
        return r * std::cos(angle);
    }

private:
    std::uint64_t state_[4] = {};
    double spare_ = 0.0;
    bool have_spare_ = false;
};

/// Order-independent summation: recursive pairwise reduction.  Parallel and
/// serial estimator runs aggregate per-path values through this so they
/// agree bit for bit.
inline double pairwise_sum(std::span<const double> values) {
    if (values.size() <= 8) {
        double acc = 0.0;
        for (double v : values) acc += v;
        return acc;
    }
    const std::size_t half = values.size() / 2;
    return pairwise_sum(values.subspan(0, half)) + pairwise_sum(values.subspan(half));
}

struct MeanStdErr {
    double mean = 0.0;
    double std_error = 0.0;
};

inline MeanStdErr mean_stderr(std::span<const double> values) {
    MeanStdErr out;
    if (values.empty()) return out;
    const double n = static_cast<double>(values.size());
    out.mean = pairwise_sum(values) / n;
    if (values.size() < 2) return out;
    std::vector<double> sq(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double d = values[i] - out.mean;
        sq[i] = d * d;
    }
    out.std_error = std::sqrt(pairwise_sum(sq) / (n * (n - 1.0)));
    return out;
}

}  // namespace shortfall

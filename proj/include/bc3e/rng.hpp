#pragma once

// Deterministic random primitives. The standard <random> distributions are
// implementation-defined, so every draw here is built from raw SplitMix64
// output; identical seeds give identical streams on every platform.

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

namespace bc3e {

class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed = 0) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // uniform on [0, 1)
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1p-53; }

    // uniform on (0, 1]
    double next_double_pos() {
        return static_cast<double>((next_u64() >> 11) + 1) * 0x1p-53;
    }

    // uniform integer in [0, n)
    std::uint64_t next_below(std::uint64_t n) { return next_u64() % n; }

private:
    std::uint64_t state_;
};

// Stream for instance n, independent of how instances are scheduled.
inline SplitMix64 instance_stream(std::uint64_t seed, std::uint64_t n) {
    SplitMix64 mix(seed ^ (0x632BE59BD9B4E019ULL * (n + 1)));
    return SplitMix64(mix.next_u64());
}

inline double sample_standard_normal(SplitMix64& rng) {
    const double u1 = rng.next_double_pos();
    const double u2 = rng.next_double();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
}

// Marsaglia-Tsang; the a < 1 case uses the boost Gamma(a) = Gamma(a+1) U^{1/a}.
inline double sample_gamma(SplitMix64& rng, double shape) {
    if (shape < 1.0) {
        const double u = rng.next_double_pos();
        return sample_gamma(rng, shape + 1.0) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        double x = 0.0;
        double v = 0.0;
        do {
            x = sample_standard_normal(rng);
            v = 1.0 + c * x;
        } while (v <= 0.0);
        v = v * v * v;
        const double u = rng.next_double_pos();
        if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) return d * v;
    }
}

inline std::vector<double> sample_dirichlet(SplitMix64& rng, std::span<const double> alpha) {
    std::vector<double> draw(alpha.size());
    double total = 0.0;
    for (std::size_t i = 0; i < alpha.size(); ++i) {
        draw[i] = sample_gamma(rng, alpha[i]);
        total += draw[i];
    }
    for (double& v : draw) v /= total;
    return draw;
}

// CDF walk in index order; returns a 0-based index.
inline int sample_categorical(SplitMix64& rng, std::span<const double> probs) {
    const double u = rng.next_double();
    double cum = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        cum += probs[i];
        if (u < cum) return static_cast<int>(i);
    }
    return static_cast<int>(probs.size()) - 1;
}

}  // namespace bc3e

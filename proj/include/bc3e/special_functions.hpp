#pragma once

// Scalar kernels shared by every update equation. They are implemented
// in-repo (recurrence + asymptotic series) so that results are identical
// across builds and platforms; libm's lgamma/digamma do not make that
// promise.

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "bc3e/errors.hpp"

namespace bc3e {

// psi(x). Upward recurrence to x >= 6, then the asymptotic series
//   psi(x) ~ ln x - 1/(2x) - sum_n B_{2n} / (2n x^{2n}).
// Absolute error stays below 1e-10 on [1e-6, 1e6].
inline double digamma(double x) {
    if (!(x > 0.0)) throw DomainError("digamma: x must be > 0");
    double acc = 0.0;
    while (x < 6.0) {
        acc -= 1.0 / x;
        x += 1.0;
    }
    const double inv = 1.0 / x;
    const double t = inv * inv;
    // B_2/2 .. B_14/14 over x^2 .. x^14
    const double series =
        t * (1.0 / 12.0 -
        t * (1.0 / 120.0 -
        t * (1.0 / 252.0 -
        t * (1.0 / 240.0 -
        t * (1.0 / 132.0 -
        t * (691.0 / 32760.0 -
        t * (1.0 / 12.0)))))));
    return acc + std::log(x) - 0.5 * inv - series;
}

// psi'(x), same scheme: recurrence psi'(x) = psi'(x+1) + 1/x^2 to x >= 6,
// then the asymptotic series. Needed for the Newton step on alpha.
inline double trigamma(double x) {
    if (!(x > 0.0)) throw DomainError("trigamma: x must be > 0");
    double acc = 0.0;
    while (x < 6.0) {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    const double inv = 1.0 / x;
    const double t = inv * inv;
    const double series =
        inv * (1.0 +
        inv * (0.5 +
        inv * (1.0 / 6.0 -
        t * (1.0 / 30.0 -
        t * (1.0 / 42.0 -
        t * (1.0 / 30.0 -
        t * (5.0 / 66.0 -
        t * (691.0 / 2730.0))))))));
    return acc + series;
}

// log Gamma(x). Upward recurrence to x >= 10, then Stirling's series.
// Relative error <= 1e-12 on [1e-6, 1e6] (absolute near the zeros at 1, 2).
inline double log_gamma(double x) {
    if (!(x > 0.0)) throw DomainError("log_gamma: x must be > 0");
    double shift = 1.0;
    while (x < 10.0) {
        shift *= x;
        x += 1.0;
    }
    const double inv = 1.0 / x;
    const double t = inv * inv;
    const double series =
        inv * (1.0 / 12.0 -
        t * (1.0 / 360.0 -
        t * (1.0 / 1260.0 -
        t * (1.0 / 1680.0 -
        t * (1.0 / 1188.0 -
        t * (691.0 / 360360.0 -
        t * (1.0 / 156.0)))))));
    constexpr double half_log_two_pi = 0.91893853320467274178032973640562;
    const double stirling = (x - 0.5) * std::log(x) - x + half_log_two_pi + series;
    return stirling - std::log(shift);
}

// exp-normalize with the max-shift guard: p_i = exp(lw_i - max) / sum_j ...
// Order-preserving; safe for very negative inputs.
inline std::vector<double> normalize_in_log_space(std::span<const double> log_weights) {
    double max_lw = -std::numeric_limits<double>::infinity();
    for (double lw : log_weights) {
        if (std::isnan(lw)) throw NumericalError("normalize_in_log_space: NaN log weight");
        if (lw > max_lw) max_lw = lw;
    }
    if (!std::isfinite(max_lw))
        throw AllNegativeInfinity("normalize_in_log_space: no finite log weight");
    std::vector<double> p(log_weights.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < log_weights.size(); ++i) {
        p[i] = std::exp(log_weights[i] - max_lw);
        sum += p[i];
    }
    for (double& v : p) v /= sum;
    return p;
}

inline std::vector<double> normalize_in_log_space(const std::vector<double>& log_weights) {
    return normalize_in_log_space(std::span<const double>(log_weights));
}

}  // namespace bc3e

#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "bc3e/rng.hpp"
#include "bc3e/special_functions.hpp"
#include "oracles.hpp"

using namespace bc3e;

namespace {
constexpr double kEulerMascheroni = 0.57721566490153286060651209008240;
}

TEST_CASE("digamma closed forms") {
    CHECK(std::fabs(digamma(1.0) + kEulerMascheroni) < 1e-12);
    CHECK(std::fabs(digamma(2.0) - (1.0 - kEulerMascheroni)) < 1e-12);
    // psi(1/2) = -gamma - 2 ln 2
    CHECK(std::fabs(digamma(0.5) - (-1.9635100260214234794409763330)) < 1e-12);
}

TEST_CASE("digamma domain") {
    CHECK_THROWS_AS(digamma(0.0), DomainError);
    CHECK_THROWS_AS(digamma(-3.0), DomainError);
}

TEST_CASE("digamma matches the high-precision oracle across the range") {
    SplitMix64 rng(11);
    for (int i = 0; i < 4000; ++i) {
        const double exponent = -6.0 + 12.0 * rng.next_double();
        const double x = std::pow(10.0, exponent);
        const double got = digamma(x);
        const double want = static_cast<double>(oracle::digamma_highprec(x));
        const double tol = std::max(1e-10, 8.0 * std::numeric_limits<double>::epsilon() *
                                               std::fabs(want));
        CHECK(std::fabs(got - want) <= tol);
    }
}

TEST_CASE("digamma recurrence property") {
    SplitMix64 rng(12);
    for (int i = 0; i < 10000; ++i) {
        const double x = 100.0 * rng.next_double_pos();
        CHECK(std::fabs(digamma(x + 1.0) - digamma(x) - 1.0 / x) <= 1e-10);
    }
}

TEST_CASE("trigamma values and recurrence") {
    CHECK(std::fabs(trigamma(1.0) - 1.6449340668482264365) < 1e-11);  // pi^2/6
    CHECK(std::fabs(trigamma(0.5) - 4.9348022005446793094) < 1e-10);  // pi^2/2
    SplitMix64 rng(13);
    for (int i = 0; i < 10000; ++i) {
        const double x = 100.0 * rng.next_double_pos();
        CHECK(std::fabs(trigamma(x) - trigamma(x + 1.0) - 1.0 / (x * x)) <= 1e-10);
    }
    CHECK_THROWS_AS(trigamma(0.0), DomainError);
}

TEST_CASE("log_gamma closed forms") {
    CHECK(std::fabs(log_gamma(1.0)) < 1e-13);
    CHECK(std::fabs(log_gamma(2.0)) < 1e-13);
    CHECK(std::fabs(log_gamma(5.0) - 3.1780538303479456196) < 1e-12);  // log 24
    CHECK_THROWS_AS(log_gamma(0.0), DomainError);
    CHECK_THROWS_AS(log_gamma(-1.0), DomainError);
}

TEST_CASE("log_gamma matches lgammal across the range") {
    SplitMix64 rng(14);
    for (int i = 0; i < 4000; ++i) {
        const double exponent = -6.0 + 12.0 * rng.next_double();
        const double x = std::pow(10.0, exponent);
        const double got = log_gamma(x);
        const double want = static_cast<double>(oracle::log_gamma_highprec(x));
        CHECK(std::fabs(got - want) <= 1e-12 * std::max(1.0, std::fabs(want)));
    }
}

TEST_CASE("log_gamma recurrence property") {
    SplitMix64 rng(15);
    for (int i = 0; i < 10000; ++i) {
        const double x = 100.0 * rng.next_double_pos();
        CHECK(std::fabs(log_gamma(x + 1.0) - log_gamma(x) - std::log(x)) <=
              1e-10 * std::max(1.0, std::fabs(log_gamma(x))));
    }
}

TEST_CASE("normalize_in_log_space examples") {
    {
        const auto p = normalize_in_log_space(std::vector<double>{0.0, 0.0});
        CHECK(p[0] == doctest::Approx(0.5).epsilon(1e-15));
        CHECK(p[1] == doctest::Approx(0.5).epsilon(1e-15));
    }
    {
        const auto p =
            normalize_in_log_space(std::vector<double>{std::log(9.0), std::log(1.0)});
        CHECK(std::fabs(p[0] - 0.9) < 1e-15);
        CHECK(std::fabs(p[1] - 0.1) < 1e-15);
    }
    {
        const auto p = normalize_in_log_space(std::vector<double>{-1000.0, 0.0});
        CHECK(std::isfinite(p[0]));
        CHECK(std::isfinite(p[1]));
        CHECK(p[0] < 1e-300);
        CHECK(p[1] == doctest::Approx(1.0).epsilon(1e-15));
    }
}

TEST_CASE("normalize_in_log_space guards") {
    const double inf = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(normalize_in_log_space(std::vector<double>{-inf, -inf}),
                    AllNegativeInfinity);
    CHECK_THROWS_AS(
        normalize_in_log_space(std::vector<double>{std::numeric_limits<double>::quiet_NaN()}),
        NumericalError);
}

TEST_CASE("normalize_in_log_space properties") {
    SplitMix64 rng(16);
    for (int trial = 0; trial < 500; ++trial) {
        const std::size_t q = 2 + rng.next_below(6);
        std::vector<double> lw(q);
        for (auto& v : lw) v = -50.0 + 100.0 * rng.next_double();
        const auto p = normalize_in_log_space(lw);
        double sum = 0.0;
        for (double v : p) sum += v;
        CHECK(std::fabs(sum - 1.0) <= 1e-15 * static_cast<double>(q));

        // invariant under a constant shift (up to the rounding of lw + shift
        // itself, a few ulps of a probability)
        const double shift = -30.0 + 60.0 * rng.next_double();
        std::vector<double> shifted = lw;
        for (auto& v : shifted) v += shift;
        const auto p2 = normalize_in_log_space(shifted);
        for (std::size_t i = 0; i < q; ++i) CHECK(std::fabs(p[i] - p2[i]) <= 5e-15);

        // order preserving
        for (std::size_t i = 0; i < q; ++i)
            for (std::size_t j = 0; j < q; ++j)
                if (lw[i] < lw[j]) CHECK(p[i] <= p[j]);
    }
}

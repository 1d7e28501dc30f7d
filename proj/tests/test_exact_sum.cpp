#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "bc3e/exact_sum.hpp"
#include "bc3e/rng.hpp"

using namespace bc3e;

namespace {

std::vector<double> random_values(SplitMix64& rng, std::size_t n) {
    std::vector<double> values(n);
    for (auto& v : values) {
        const double magnitude = std::pow(10.0, -8.0 + 14.0 * rng.next_double());
        v = (rng.next_double() < 0.5 ? -1.0 : 1.0) * magnitude;
    }
    return values;
}

}  // namespace

TEST_CASE("sum of representable integers is exact") {
    ExactSum s;
    for (int i = 1; i <= 1000; ++i) s.add(static_cast<double>(i));
    CHECK(s.value() == 500500.0);
    s.add(-500500.0);
    CHECK(s.value() == 0.0);
}

TEST_CASE("catastrophic cancellation") {
    ExactSum s;
    s.add(1e10);
    s.add(1.0);
    s.add(-1e10);
    CHECK(s.value() == 1.0);
}

TEST_CASE("sum is independent of partition and order") {
    SplitMix64 rng(21);
    const auto values = random_values(rng, 1000);
    ExactSum whole;
    for (double v : values) whole.add(v);

    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n_parts = 2 + rng.next_below(7);
        std::vector<ExactSum> parts(n_parts);
        std::vector<std::size_t> assignment(values.size());
        for (auto& a : assignment) a = rng.next_below(n_parts);
        // iterate in shuffled order so per-part insertion order varies too
        std::vector<std::size_t> order(values.size());
        std::iota(order.begin(), order.end(), 0);
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[rng.next_below(i)]);
        for (std::size_t idx : order) parts[assignment[idx]].add(values[idx]);
        // merge in shuffled part order
        std::vector<std::size_t> part_order(n_parts);
        std::iota(part_order.begin(), part_order.end(), 0);
        for (std::size_t i = part_order.size(); i > 1; --i)
            std::swap(part_order[i - 1], part_order[rng.next_below(i)]);
        ExactSum merged;
        for (std::size_t p : part_order) merged.merge(parts[p]);
        CHECK(merged == whole);
        CHECK(merged.value() == whole.value());
    }
}

TEST_CASE("accuracy against long double Kahan") {
    SplitMix64 rng(22);
    for (int trial = 0; trial < 50; ++trial) {
        const auto values = random_values(rng, 500);
        ExactSum s;
        long double kahan = 0.0L;
        long double comp = 0.0L;
        for (double v : values) {
            s.add(v);
            const long double y = static_cast<long double>(v) - comp;
            const long double t = kahan + y;
            comp = (t - kahan) - y;
            kahan = t;
        }
        const double reference = static_cast<double>(kahan);
        // each addend is quantized to 2^-60, so the totals may differ by n ulps of that
        const double tol = 500.0 * 0x1p-59 + 4.0 * std::numeric_limits<double>::epsilon() *
                                                 std::fabs(reference);
        CHECK(std::fabs(s.value() - reference) <= tol);
    }
}

TEST_CASE("range guards") {
    ExactSum s;
    CHECK_THROWS_AS(s.add(2e12), NumericalError);
    CHECK_THROWS_AS(s.add(std::numeric_limits<double>::infinity()), NumericalError);
    CHECK_THROWS_AS(s.add(std::numeric_limits<double>::quiet_NaN()), NumericalError);
    s.add(1e12);
    CHECK(s.value() == 1e12);
}

TEST_CASE("tiny addends quantize without error") {
    ExactSum s;
    s.add(1e-300);  // below the grid, rounds to zero
    CHECK(s.value() == 0.0);
    s.add(0x1p-60);
    CHECK(s.value() == 0x1p-60);
}

TEST_CASE("fixed-width codec round trip") {
    SplitMix64 rng(23);
    for (int trial = 0; trial < 2000; ++trial) {
        ExactSum s;
        for (int i = 0; i < 5; ++i) s.add((rng.next_double() - 0.5) * 1e6);
        const std::string encoded = encode_exact_units(s.raw_units());
        CHECK(encoded.size() == 40);
        CHECK(decode_exact_units(encoded) == s.raw_units());
    }
    const auto big = (static_cast<ExactSum::Int128>(0x7FFFFFFFFFFFFFFFLL) << 64) |
                     static_cast<ExactSum::Int128>(0xFFFFFFFFFFFFFFFFULL);
    CHECK(decode_exact_units(encode_exact_units(big)) == big);
    CHECK(decode_exact_units(encode_exact_units(-big)) == -big);
    CHECK_THROWS_AS(decode_exact_units("123"), ProtocolViolation);
    CHECK_THROWS_AS(decode_exact_units("+00000000000000000000000000000000000000x"),
                    ProtocolViolation);
}

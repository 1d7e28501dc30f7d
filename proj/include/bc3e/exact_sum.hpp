#pragma once

// Order-independent summation of doubles.
//
// Floating-point addition is not associative, so a sum split across sites
// (or worker threads) normally depends on the partition. Every reduction
// over instances in this library therefore goes through ExactSum: each
// addend is rounded once onto a fixed 2^-60 grid and accumulated in a
// 128-bit integer. Integer addition is associative and commutative, so
// partial sums merge to the same total for any partition, worker count,
// or site layout, and converting the total back to double is a single
// deterministic rounding.
//
// The grid bounds the usable range: |addend| < 2^40 (~1.1e12) and at most
// ~2^26 addends per sum. Everything accumulated here (digamma statistics,
// phi masses, per-instance ELBO shares) is orders of magnitude inside
// those limits; exceeding them throws instead of overflowing silently.

#include <cmath>
#include <cstdint>
#include <string>

#include "bc3e/errors.hpp"

namespace bc3e {

class ExactSum {
public:
    using Int128 = __int128;

    static constexpr int kFracBits = 60;
    static constexpr double kMaxAddend = 1099511627776.0;  // 2^40

    ExactSum() = default;

    void add(double x) {
        if (x == 0.0) return;
        if (!std::isfinite(x)) throw NumericalError("ExactSum: non-finite addend");
        if (std::fabs(x) > kMaxAddend) throw NumericalError("ExactSum: addend out of range");
        int exp2 = 0;
        const double frac = std::frexp(x, &exp2);          // x = frac * 2^exp2
        const auto mant = static_cast<std::int64_t>(std::ldexp(frac, 53));  // exact, 53 bits
        const int shift = exp2 - 53 + kFracBits;           // units = mant * 2^shift
        Int128 units = 0;
        if (shift >= 0) {
            units = static_cast<Int128>(mant) << shift;
        } else if (shift > -63) {
            const bool neg = mant < 0;
            std::uint64_t m = neg ? static_cast<std::uint64_t>(-mant)
                                  : static_cast<std::uint64_t>(mant);
            const std::uint64_t half = std::uint64_t{1} << (-shift - 1);
            m = (m + half) >> (-shift);                    // round half away from zero
            units = neg ? -static_cast<Int128>(m) : static_cast<Int128>(m);
        }
        units_ += units;
    }

    void merge(const ExactSum& other) { units_ += other.units_; }

    double value() const { return static_cast<double>(units_) * 0x1p-60; }

    Int128 raw_units() const { return units_; }
    void set_raw_units(Int128 u) { units_ = u; }

    bool operator==(const ExactSum&) const = default;

private:
    Int128 units_ = 0;
};

// Fixed-width codec used on the wire: sign character plus 39 decimal
// digits, enough for any int128 and independent of the value's magnitude.
inline std::string encode_exact_units(ExactSum::Int128 v) {
    const bool neg = v < 0;
    unsigned __int128 u = neg ? static_cast<unsigned __int128>(-v)
                              : static_cast<unsigned __int128>(v);
    std::string digits(39, '0');
    for (int i = 38; i >= 0; --i) {
        digits[i] = static_cast<char>('0' + static_cast<int>(u % 10));
        u /= 10;
    }
    return (neg ? "-" : "+") + digits;
}

inline ExactSum::Int128 decode_exact_units(const std::string& s) {
    if (s.size() != 40 || (s[0] != '+' && s[0] != '-'))
        throw ProtocolViolation("bad exact-sum field: " + s);
    unsigned __int128 u = 0;
    for (std::size_t i = 1; i < s.size(); ++i) {
        if (s[i] < '0' || s[i] > '9')
            throw ProtocolViolation("bad exact-sum digit in: " + s);
        u = u * 10 + static_cast<unsigned>(s[i] - '0');
    }
    auto v = static_cast<ExactSum::Int128>(u);
    return s[0] == '-' ? -v : v;
}

}  // namespace bc3e

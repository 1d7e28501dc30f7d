#pragma once

#include <stdexcept>
#include <string>

namespace bc3e {

struct Error : std::runtime_error {
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Argument outside the mathematical domain of an operation (x <= 0 for
// digamma, non-positive alpha, ...).
struct DomainError : Error {
    explicit DomainError(const std::string& what) : Error(what) {}
};

// A computed quantity came out NaN/inf or an accumulator left its safe range.
struct NumericalError : Error {
    explicit NumericalError(const std::string& what) : Error(what) {}
};

// Every entry of a log-weight vector is -inf: there is no mass to normalize.
struct AllNegativeInfinity : NumericalError {
    explicit AllNegativeInfinity(const std::string& what) : NumericalError(what) {}
};

struct ValidationError : Error {
    explicit ValidationError(const std::string& what) : Error(what) {}
};

// Malformed frame, unknown message type, or version mismatch on the wire.
struct ProtocolViolation : Error {
    explicit ProtocolViolation(const std::string& what) : Error(what) {}
};

struct TransportTimeout : Error {
    explicit TransportTimeout(const std::string& what) : Error(what) {}
};

struct TransportClosed : Error {
    explicit TransportClosed(const std::string& what) : Error(what) {}
};

}  // namespace bc3e

#pragma once

#include <stdexcept>
#include <string>

namespace qmem {

/// Precondition or invariant violation on a value handed to the library.
class DomainError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A numerical procedure (fit, inversion, linear solve) could not produce a result.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Configuration file could not be parsed or failed validation.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Filesystem failure; the message names the offending path.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {

inline void require(bool condition, const std::string& message) {
    if (!condition) throw DomainError(message);
}

} // namespace detail

} // namespace qmem

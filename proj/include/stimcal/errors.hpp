#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace stimcal {

// Invalid arguments, violated preconditions, bad configuration. CLI maps
// these to exit code 2.
class UsageError : public std::invalid_argument {
public:
    explicit UsageError(const std::string& what) : std::invalid_argument(what) {}
};

// Non-finite or out-of-domain numeric input.
class DomainError : public std::domain_error {
public:
    explicit DomainError(const std::string& what) : std::domain_error(what) {}
};

// A numeric routine failed to reach its requested tolerance.
class NumericalError : public std::runtime_error {
public:
    NumericalError(const std::string& what, double achieved_tolerance)
        : std::runtime_error(what), achieved_tolerance_(achieved_tolerance) {}

    double achieved_tolerance() const { return achieved_tolerance_; }

private:
    double achieved_tolerance_;
};

// Malformed or truncated file. Carries the byte offset where parsing stopped.
class FormatError : public std::runtime_error {
public:
    FormatError(const std::string& what, std::uint64_t byte_offset)
        : std::runtime_error(what + " (byte offset " + std::to_string(byte_offset) + ")"),
          byte_offset_(byte_offset) {}

    std::uint64_t byte_offset() const { return byte_offset_; }

private:
    std::uint64_t byte_offset_;
};

}  // namespace stimcal

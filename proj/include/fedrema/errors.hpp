#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace fedrema {

// Shapes that do not line up: layer dimensions, aggregation uploads, probes.
class StructuralError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A scalar argument outside its domain (temperature <= 0, lr < 0, ...).
class ParameterError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Invalid experiment or dataset configuration.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed binary input. Carries the byte offset at which decoding failed.
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, std::uint64_t offset)
        : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"),
          offset_(offset) {}

    std::uint64_t offset() const noexcept { return offset_; }

private:
    std::uint64_t offset_;
};

// Filesystem failures while writing metrics or reading inputs.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Non-finite values appeared in aggregated parameters.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace fedrema

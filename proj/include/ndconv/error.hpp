#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ndconv {

// Tensor/operator shape or channel-count mismatch.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Invalid user-supplied configuration value.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Broken internal contract, e.g. a backward pass invoked with state that does
// not correspond to any forward pass.
class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

// Nonfinite values or a numerically failed step.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed file content. Carries the file path and the byte offset at which
// parsing failed.
class ParseError : public std::runtime_error {
public:
    ParseError(std::string path, std::size_t byte_offset, const std::string& message)
        : std::runtime_error(path + " (byte " + std::to_string(byte_offset) + "): " + message),
          path_(std::move(path)),
          byte_offset_(byte_offset) {}

    const std::string& path() const noexcept { return path_; }
    std::size_t byte_offset() const noexcept { return byte_offset_; }

private:
    std::string path_;
    std::size_t byte_offset_;
};

}  // namespace ndconv

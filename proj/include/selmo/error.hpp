#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace selmo {

/// Raised when a caller passes data whose shape or range violates an operation's contract.
class InvalidInput : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A numeric update produced NaN/Inf. The update is rejected and the target left untouched.
class NonFiniteError : public std::runtime_error {
public:
    NonFiniteError(const std::string& what, std::ptrdiff_t layer = -1)
        : std::runtime_error(layer >= 0 ? what + " (layer " + std::to_string(layer) + ")" : what),
          layer_(layer) {}

    /// Index of the offending layer, or -1 when not attributable to a layer.
    std::ptrdiff_t layer() const noexcept { return layer_; }

private:
    std::ptrdiff_t layer_;
};

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace selmo

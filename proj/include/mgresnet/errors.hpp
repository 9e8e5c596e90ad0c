#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mgresnet {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// A non-finite value showed up during propagation or optimization.
///
/// `layer` is set by the forward pass, `level`/`iteration` by the level
/// optimizer. Unknown coordinates are -1.
class NumericError : public Error {
public:
    NumericError(const std::string& what, int layer, int level = -1, int iteration = -1)
        : Error(what), layer_(layer), level_(level), iteration_(iteration) {}

    int layer() const noexcept { return layer_; }
    int level() const noexcept { return level_; }
    int iteration() const noexcept { return iteration_; }

private:
    int layer_;
    int level_;
    int iteration_;
};

/// Malformed schedule text. `position` is the 0-based character offset.
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t position)
        : Error(what + " at position " + std::to_string(position)), position_(position) {}

    std::size_t position() const noexcept { return position_; }

private:
    std::size_t position_;
};

enum class IdxErrorKind { open_failed, bad_magic, truncated, count_mismatch, bad_label };

class IdxError : public Error {
public:
    IdxError(IdxErrorKind kind, const std::string& what) : Error(what), kind_(kind) {}

    IdxErrorKind kind() const noexcept { return kind_; }

private:
    IdxErrorKind kind_;
};

} // namespace mgresnet

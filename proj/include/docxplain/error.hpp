#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace docxplain {

/// Base class of every exception thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Mismatched dimensions, channel counts or out-of-range geometry.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Invalid parameters (kernel sizes, step counts, radii ...).
class ArgumentError : public Error {
public:
    using Error::Error;
};

/// Malformed or unreadable file.
class FormatError : public Error {
public:
    using Error::Error;
};

/// The classifier backend failed to produce scores (child died, pipe closed).
class BackendError : public Error {
public:
    using Error::Error;
};

/// A subprocess model violated the DXP1/DXR1 wire protocol. `offset` is the
/// byte offset into the reply stream at which the violation was detected.
class ProtocolError : public BackendError {
public:
    ProtocolError(const std::string& what, std::size_t offset)
        : BackendError(what + " (reply byte offset " + std::to_string(offset) + ")"),
          offset_(offset) {}

    [[nodiscard]] std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

} // namespace docxplain

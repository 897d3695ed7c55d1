#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace vispflow {

// Shape or dimension mismatch between tensors/canvases.
struct dim_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// An API precondition was violated (non-scalar loss, missing z_src, ...).
struct contract_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed or truncated on-disk data. Carries the byte offset of the
// first unreadable position.
struct format_error : std::runtime_error {
    format_error(const std::string& msg, std::size_t byte_offset)
        : std::runtime_error(msg + " (byte offset " + std::to_string(byte_offset) + ")"),
          offset(byte_offset) {}
    std::size_t offset;
};

// Non-finite value where the contract demands finite math (NaN loss abort).
struct numeric_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Text cannot be laid out even in the fallback box. Carries the token
// that failed to fit.
struct unlayoutable_error : std::runtime_error {
    explicit unlayoutable_error(const std::string& failing_token)
        : std::runtime_error("text cannot be laid out; failing token: \"" + failing_token + "\""),
          token(failing_token) {}
    std::string token;
};

// Both displacements of a directional similarity are (near) zero.
struct degenerate_edit_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad run configuration (unknown key, unparsable value).
struct config_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace vispflow

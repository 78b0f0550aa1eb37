#pragma once

#include <stdexcept>
#include <string>

namespace qroar {

// Bad arguments, broken invariants, schema violations. CLI exit code 1.
class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// File system and container errors. CLI exit code 2.
class IoError : public std::runtime_error {
public:
    enum class Kind { open_failed, malformed_header, overlapping_offsets, truncated_payload, write_failed };

    IoError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

// External evaluator failures: transport, protocol, non-finite results. CLI exit code 3.
class BackendError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ProtocolError : public BackendError {
public:
    ProtocolError(const std::string& what, std::string raw_line)
        : BackendError(what + ": " + raw_line), raw_line_(std::move(raw_line)) {}
    const std::string& raw_line() const noexcept { return raw_line_; }

private:
    std::string raw_line_;
};

} // namespace qroar

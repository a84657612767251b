#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace microcep {

// Base class for every error raised by the library. code() is the short,
// stable identifier used on the wire (`ERR <code> <message>`).
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& message)
        : std::runtime_error(message), code_(std::move(code)) {}

    const std::string& code() const noexcept { return code_; }

private:
    std::string code_;
};

class SyntaxError : public Error {
public:
    SyntaxError(std::size_t offset, const std::string& message,
                std::vector<std::string> expected = {});

    std::size_t offset() const noexcept { return offset_; }
    const std::vector<std::string>& expected() const noexcept { return expected_; }

private:
    std::size_t offset_;
    std::vector<std::string> expected_;
};

class TimeOrderError : public Error {
public:
    explicit TimeOrderError(const std::string& message) : Error("time-order", message) {}
};

class EmptyInput : public Error {
public:
    explicit EmptyInput(const std::string& message) : Error("empty-input", message) {}
};

class UnboundVariableError : public Error {
public:
    explicit UnboundVariableError(std::string variable);

    const std::string& variable() const noexcept { return variable_; }

private:
    std::string variable_;
};

// Raised when the aggregated variable of a lambda is not bound by its source pattern.
class ArityError : public Error {
public:
    explicit ArityError(const std::string& message) : Error("arity", message) {}
};

class WindowError : public Error {
public:
    explicit WindowError(const std::string& message) : Error("window", message) {}
};

// Structural restriction on operator placement (nseq/kseq/lambda operands).
class ShapeError : public Error {
public:
    explicit ShapeError(const std::string& message) : Error("shape", message) {}
};

class DuplicateRuleId : public Error {
public:
    explicit DuplicateRuleId(const std::string& id)
        : Error("dup-rule", "rule id already present: " + id) {}
};

class UnknownRuleId : public Error {
public:
    explicit UnknownRuleId(const std::string& id)
        : Error("unknown-id", "no rule with id: " + id) {}
};

class MissingWindow : public Error {
public:
    explicit MissingWindow(const std::string& message) : Error("missing-window", message) {}
};

class TimeRegression : public Error {
public:
    TimeRegression(long long requested, long long watermark)
        : Error("time-regression", "time " + std::to_string(requested) +
                                       " is before watermark " + std::to_string(watermark)) {}
};

class DimensionMismatch : public Error {
public:
    explicit DimensionMismatch(const std::string& message) : Error("dimension", message) {}
};

class FrozenOnlyModel : public Error {
public:
    explicit FrozenOnlyModel(const std::string& id)
        : Error("frozen-only", "model has no trainable layers: " + id) {}
};

class NotAutoencoder : public Error {
public:
    explicit NotAutoencoder(const std::string& message) : Error("not-autoencoder", message) {}
};

class FormatError : public Error {
public:
    FormatError(std::string path, const std::string& message)
        : Error("format", path + ": " + message), path_(std::move(path)) {}

    const std::string& path() const noexcept { return path_; }

private:
    std::string path_;
};

class InvariantViolation : public Error {
public:
    explicit InvariantViolation(const std::string& message) : Error("invariant", message) {}
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& message) : Error("config", message) {}
};

class OutOfRange : public Error {
public:
    explicit OutOfRange(const std::string& message) : Error("out-of-range", message) {}
};

class StreamTooLarge : public Error {
public:
    explicit StreamTooLarge(std::size_t size)
        : Error("stream-too-large",
                "oracle streams are limited to 12 events, got " + std::to_string(size)) {}
};

}  // namespace microcep

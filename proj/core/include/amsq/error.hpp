#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace amsq {

enum class ErrorCode {
    // netlist-core
    SyntaxError,
    ArityError,
    DuplicateName,
    UnknownCard,
    // port-annotation
    AnnotatorUnavailable,
    AnnotatorInvalidLabel,
    DegenerateDiffPair,
    // topomod
    NotFullyDifferential,
    NoBiasNodeFound,
    NoPassDevice,
    NoFeedbackDivider,
    AlreadyModified,
    // testbench
    UnboundPort,
    MissingHarness,
    InvalidTemplate,
    // sim / sizing
    PreconditionViolated,
    DegenerateSpec,
    BackendDown,
    NoFeasiblePolarity,
    // database
    DuplicateKey,
    SchemaMismatch,
    // cli
    ConfigError,
    MisalignedIds,
    IoError,
};

std::string_view to_string(ErrorCode code);

// All library failures are reported through this type. `code()` is the
// machine-readable kind; `what()` carries the human-readable detail.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& detail)
        : std::runtime_error(std::string(to_string(code)) + ": " + detail), code_(code) {}

    [[nodiscard]] ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

// Parser errors also carry the 1-based source line.
class SyntaxError : public Error {
public:
    SyntaxError(ErrorCode code, int line, const std::string& reason)
        : Error(code, "line " + std::to_string(line) + ": " + reason), line_(line) {}

    [[nodiscard]] int line() const noexcept { return line_; }

private:
    int line_;
};

} // namespace amsq

#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace mcpdet {

enum class ErrorKind {
    InvalidInput,
    CalibrationEmpty,
    MissingGroup,
    EvaluationInput,
    PartitionInput,
    DegenerateConfig,
    InvalidRegime,
    NoSelection,
    Parse,
    FormatVersion,
    Io,
};

constexpr std::string_view to_string(ErrorKind kind) noexcept {
    switch (kind) {
    case ErrorKind::InvalidInput: return "invalid-input";
    case ErrorKind::CalibrationEmpty: return "calibration-empty";
    case ErrorKind::MissingGroup: return "missing-group";
    case ErrorKind::EvaluationInput: return "evaluation-input";
    case ErrorKind::PartitionInput: return "partition-input";
    case ErrorKind::DegenerateConfig: return "degenerate-config";
    case ErrorKind::InvalidRegime: return "invalid-regime";
    case ErrorKind::NoSelection: return "no-selection";
    case ErrorKind::Parse: return "parse";
    case ErrorKind::FormatVersion: return "format-version";
    case ErrorKind::Io: return "io";
    }
    return "unknown";
}

// Every failure raised by the library carries a kind so the CLI can emit a
// machine-readable record.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    // Failure tied to one line of a line-oriented input (1-based).
    Error(ErrorKind kind, const std::string& message, std::size_t line)
        : std::runtime_error("line " + std::to_string(line) + ": " + message), kind_(kind), line_(line) {}

    ErrorKind kind() const noexcept { return kind_; }
    std::optional<std::size_t> line() const noexcept { return line_; }

private:
    ErrorKind kind_;
    std::optional<std::size_t> line_;
};

} // namespace mcpdet

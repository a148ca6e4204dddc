#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace preselect {

/// Broad failure class; the CLI maps each to a process exit code.
enum class ErrorKind {
    Config = 2,
    Data = 3,
    Internal = 4,
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

#define PRESELECT_DEFINE_ERROR(Name, Kind)                                           \
    class Name : public Error {                                                      \
    public:                                                                          \
        explicit Name(const std::string& what) : Error(ErrorKind::Kind, what) {}     \
    };

// Configuration / precondition problems.
PRESELECT_DEFINE_ERROR(ConfigError, Config)
PRESELECT_DEFINE_ERROR(SafetyError, Config)
PRESELECT_DEFINE_ERROR(SchemaError, Config)
PRESELECT_DEFINE_ERROR(CapacityError, Config)
PRESELECT_DEFINE_ERROR(OverlapError, Config)

// Bad or missing data.
PRESELECT_DEFINE_ERROR(IoError, Data)
PRESELECT_DEFINE_ERROR(DomainError, Data)
PRESELECT_DEFINE_ERROR(EmptyInputError, Data)
PRESELECT_DEFINE_ERROR(DegenerateInputError, Data)
PRESELECT_DEFINE_ERROR(ValueError, Data)
PRESELECT_DEFINE_ERROR(LookupError, Data)
PRESELECT_DEFINE_ERROR(LabelError, Data)
PRESELECT_DEFINE_ERROR(FormatError, Data)
PRESELECT_DEFINE_ERROR(CorruptionError, Data)
PRESELECT_DEFINE_ERROR(StaleArtifactError, Data)

#undef PRESELECT_DEFINE_ERROR

/// A malformed input record; carries the 1-based line number within its file.
class RecordError : public Error {
public:
    RecordError(std::size_t line, const std::string& what)
        : Error(ErrorKind::Data, "line " + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// Non-fatal diagnostics go through here so tests and the CLI can silence them.
void log_warning(const std::string& message);
void set_warnings_enabled(bool enabled);

}  // namespace preselect

#pragma once

#include <stdexcept>
#include <string>

namespace csl {

/// Process exit codes shared by every subcommand.
enum class ExitCode : int {
    kOk = 0,
    kConfig = 2,
    kData = 3,
    kNumeric = 4,
};

class Error : public std::runtime_error {
public:
    Error(const std::string& what, ExitCode code) : std::runtime_error(what), code_(code) {}
    ExitCode code() const noexcept { return code_; }

private:
    ExitCode code_;
};

/// Invalid grammar, corruption spec, model/train config or CLI usage.
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error(what, ExitCode::kConfig) {}
};

/// Malformed input files, schema violations, incompatible artifacts.
class DataError : public Error {
public:
    explicit DataError(const std::string& what) : Error(what, ExitCode::kData) {}
};

class ParseError : public DataError {
public:
    ParseError(const std::string& what, std::size_t line)
        : DataError("line " + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class SchemaError : public DataError {
public:
    using DataError::DataError;
};

class ShapeError : public DataError {
public:
    using DataError::DataError;
};

/// Checkpoint file damaged (bad CRC, truncated, shape mismatch vs manifest).
class CorruptionError : public DataError {
public:
    CorruptionError(const std::string& what, int epoch)
        : DataError("checkpoint epoch " + std::to_string(epoch) + ": " + what), epoch_(epoch) {}
    int epoch() const noexcept { return epoch_; }

private:
    int epoch_;
};

class FormatError : public DataError {
public:
    using DataError::DataError;
};

class MissingSnapshotError : public DataError {
public:
    using DataError::DataError;
};

/// Sequence has too few frames or label runs for the requested corruption.
class SequenceTooShortError : public DataError {
public:
    using DataError::DataError;
};

/// Operation called in a state it does not support (e.g. corrupting twice).
class UsageError : public ConfigError {
public:
    using ConfigError::ConfigError;
};

/// A class has zero frames in the training set, so its weight is undefined.
class CoverageError : public DataError {
public:
    CoverageError(const std::string& what, int missing_class)
        : DataError(what), missing_class_(missing_class) {}
    int missing_class() const noexcept { return missing_class_; }

private:
    int missing_class_;
};

class AuditCompatibilityError : public DataError {
public:
    using DataError::DataError;
};

class IndexError : public DataError {
public:
    using DataError::DataError;
};

class LookupError : public DataError {
public:
    using DataError::DataError;
};

class NumericError : public Error {
public:
    explicit NumericError(const std::string& what) : Error(what, ExitCode::kNumeric) {}
};

/// AUC / EDA requested on input where the metric has no defined value.
class UndefinedMetricError : public NumericError {
public:
    using NumericError::NumericError;
};

class InsufficientEpochsError : public NumericError {
public:
    using NumericError::NumericError;
};

class CalibrationError : public NumericError {
public:
    using NumericError::NumericError;
};

}  // namespace csl

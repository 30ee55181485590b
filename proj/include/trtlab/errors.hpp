#pragma once

#include <stdexcept>
#include <string>

namespace trtlab {

// Error taxonomy. The CLI maps categories to exit codes:
//   UsageError -> 2, DataError -> 3, NumericError -> 4.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct InvalidConfig : UsageError {
    using UsageError::UsageError;
};

// Scene point sampling ran out of its attempt budget. Non-fatal: callers skip
// the scene and move on.
struct ExhaustedAttempts : DataError {
    using DataError::DataError;
};

struct ParseError : DataError {
    int line = 0;
    ParseError(const std::string & msg, int line_no)
        : DataError("line " + std::to_string(line_no) + ": " + msg), line(line_no) {}
};
struct SchemaMismatch : DataError {
    using DataError::DataError;
};
struct DimensionMismatch : DataError {
    using DataError::DataError;
};
struct InsufficientData : DataError {
    using DataError::DataError;
};
struct ShapeMismatch : DataError {
    using DataError::DataError;
};
struct UnknownToken : DataError {
    using DataError::DataError;
};
struct ContextOverflow : DataError {
    using DataError::DataError;
};
struct WrongMode : DataError {
    using DataError::DataError;
};
struct MissingOracle : DataError {
    using DataError::DataError;
};
struct MissingModelSpan : DataError {
    using DataError::DataError;
};
struct MissingRow : DataError {
    using DataError::DataError;
};
struct DecodeBudgetExceeded : DataError {
    using DataError::DataError;
};

struct Divergence : NumericError {
    using NumericError::NumericError;
};
// Raised when the frozen prefix (prompt + image features + span placement)
// is not bit-identical across interventions of one suite run.
struct PrefixMismatch : NumericError {
    using NumericError::NumericError;
};
struct NaNGuard : NumericError {
    using NumericError::NumericError;
};

} // namespace trtlab

#pragma once

#include <stdexcept>
#include <string>

namespace ctxattr {

enum class ErrorCode {
    EntryOutOfRange,
    ShapeMismatch,
    NonFiniteInput,
    LengthMismatch,
    OutOfRange,
    CoalitionBudgetExceeded,
    BackendFailure,
    SingularSystem,
    DegenerateBase,
    InsufficientQueries,
    TooFewSolutions,
    EmptyQuestion,
    EmptyIndex,
    Unparseable,
    InvalidConfig,
    IoFailure,
};

const char* error_code_name(ErrorCode code);

/// All library errors carry a code so callers can distinguish failure kinds
/// without string matching.
class Error : public std::runtime_error {
  public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(error_code_name(code)) + ": " + message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

  private:
    ErrorCode code_;
};

[[noreturn]] inline void raise(ErrorCode code, const std::string& message) {
    throw Error(code, message);
}

}  // namespace ctxattr

#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace didiv {

enum class ErrorCode {
  DuplicateCell,
  InvalidInstrument,
  NotStaggered,
  SchemaError,
  MissingValue,
  InvalidWeights,
  NoVariation,
  EmptyCell,
  NotBalanced,
  ConvergenceFailure,
  WeakDenominator,
  DegenerateWeights,
  CollinearCovariates,
  OracleSingular,
  MissingControl,
  IncompatibleSpecs,
  IncompleteSchedule,
  OracleDegenerate,
  InvalidConfig,
  IoError,
};

// Upper snake case, as emitted in CLI error payloads.
std::string_view code_name(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

  // NotStaggered payload.
  std::optional<std::string> unit;
  std::optional<long long> period;
  // ConvergenceFailure payload.
  std::optional<double> last_change;

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace didiv

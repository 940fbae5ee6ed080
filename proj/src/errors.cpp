#include "didiv/errors.hpp"

namespace didiv {

std::string_view code_name(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::DuplicateCell: return "DUPLICATE_CELL";
    case ErrorCode::InvalidInstrument: return "INVALID_INSTRUMENT";
    case ErrorCode::NotStaggered: return "NOT_STAGGERED";
    case ErrorCode::SchemaError: return "SCHEMA_ERROR";
    case ErrorCode::MissingValue: return "MISSING_VALUE";
    case ErrorCode::InvalidWeights: return "INVALID_WEIGHTS";
    case ErrorCode::NoVariation: return "NO_VARIATION";
    case ErrorCode::EmptyCell: return "EMPTY_CELL";
    case ErrorCode::NotBalanced: return "NOT_BALANCED";
    case ErrorCode::ConvergenceFailure: return "CONVERGENCE_FAILURE";
    case ErrorCode::WeakDenominator: return "WEAK_DENOMINATOR";
    case ErrorCode::DegenerateWeights: return "DEGENERATE_WEIGHTS";
    case ErrorCode::CollinearCovariates: return "COLLINEAR_COVARIATES";
    case ErrorCode::OracleSingular: return "ORACLE_SINGULAR";
    case ErrorCode::MissingControl: return "MISSING_CONTROL";
    case ErrorCode::IncompatibleSpecs: return "INCOMPATIBLE_SPECS";
    case ErrorCode::IncompleteSchedule: return "INCOMPLETE_SCHEDULE";
    case ErrorCode::OracleDegenerate: return "ORACLE_DEGENERATE";
    case ErrorCode::InvalidConfig: return "INVALID_CONFIG";
    case ErrorCode::IoError: return "IO_ERROR";
  }
  return "UNKNOWN";
}

}  // namespace didiv

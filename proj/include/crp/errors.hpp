#pragma once

#include <stdexcept>
#include <string>

namespace crp {

enum class ErrorKind {
  MissingFile,
  SchemaViolation,
  DanglingReference,
  OutOfRange,
  EmptyInput,
  InsufficientData,
  SingularSystem,
  RankDeficient,
  NonConvergence,
  NoCommuters,
  NoEmployees,
  ZeroDenominator,
  EmptyModelFrame,
  UnknownRiskFactor,
  VaccinationPeriodRule,
  UnlinkedUprn,
  StaleInput,
  InvalidConfig,
};

inline const char* to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::MissingFile: return "MissingFile";
    case ErrorKind::SchemaViolation: return "SchemaViolation";
    case ErrorKind::DanglingReference: return "DanglingReference";
    case ErrorKind::OutOfRange: return "OutOfRange";
    case ErrorKind::EmptyInput: return "EmptyInput";
    case ErrorKind::InsufficientData: return "InsufficientData";
    case ErrorKind::SingularSystem: return "SingularSystem";
    case ErrorKind::RankDeficient: return "RankDeficient";
    case ErrorKind::NonConvergence: return "NonConvergence";
    case ErrorKind::NoCommuters: return "NoCommuters";
    case ErrorKind::NoEmployees: return "NoEmployees";
    case ErrorKind::ZeroDenominator: return "ZeroDenominator";
    case ErrorKind::EmptyModelFrame: return "EmptyModelFrame";
    case ErrorKind::UnknownRiskFactor: return "UnknownRiskFactor";
    case ErrorKind::VaccinationPeriodRule: return "VaccinationPeriodRule";
    case ErrorKind::UnlinkedUprn: return "UnlinkedUprn";
    case ErrorKind::StaleInput: return "StaleInput";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace crp

#pragma once

#include <stdexcept>
#include <string>

namespace phyvid {

enum class ErrorKind {
  Validation,
  Io,
  SimulationDiverged,
  OutOfFrame,
  InitializationFailed,
  LowConfidence,
  TooShort,
  ShapeMismatch,
  EmptyEquation,
  RankDeficient,
  DegenerateSeries,
  InexpressibleTruth,
  NumericalFailure,
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind), detail_(what) {}

  ErrorKind kind() const noexcept { return kind_; }
  // Message without the kind prefix, for adding context when rethrowing.
  const std::string& detail() const noexcept { return detail_; }

  // Validation and missing-input problems map to exit code 1 in the CLI,
  // everything else is a runtime failure.
  bool is_validation() const noexcept {
    return kind_ == ErrorKind::Validation || kind_ == ErrorKind::Io;
  }

 private:
  ErrorKind kind_;
  std::string detail_;
};

}  // namespace phyvid

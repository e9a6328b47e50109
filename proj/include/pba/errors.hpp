#pragma once

#include <stdexcept>
#include <string>

namespace pba {

// Base class for everything thrown by this library.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad inputs: malformed files, inconsistent parameters, unusable graphs.
// The CLI maps these to exit code 2.
struct ValidationError : Error {
  using Error::Error;
};

// Numerically unusable state: degenerate geometry, singular systems.
// The CLI maps these to exit code 3.
struct NumericalError : Error {
  using Error::Error;
};

struct InvalidSpec : ValidationError {
  using ValidationError::ValidationError;
};
struct ParseError : ValidationError {
  using ValidationError::ValidationError;
};
struct VersionMismatch : ValidationError {
  using ValidationError::ValidationError;
};
struct DisconnectedScene : ValidationError {
  using ValidationError::ValidationError;
};
struct DisconnectedGraph : ValidationError {
  using ValidationError::ValidationError;
};
struct TooFewFeatures : ValidationError {
  using ValidationError::ValidationError;
};
struct NoHoldoutFeatures : ValidationError {
  using ValidationError::ValidationError;
};
struct ScaleUnfixed : ValidationError {
  using ValidationError::ValidationError;
};

struct CheiralityViolation : NumericalError {
  using NumericalError::NumericalError;
};
struct SingularInput : NumericalError {
  using NumericalError::NumericalError;
};
struct NearPiAngle : NumericalError {
  using NumericalError::NumericalError;
};
struct SingularPointBlock : NumericalError {
  using NumericalError::NumericalError;
};
struct DegenerateGeometry : NumericalError {
  using NumericalError::NumericalError;
};
struct NumericalFailure : NumericalError {
  using NumericalError::NumericalError;
};
struct GaugeUnfixed : NumericalError {
  using NumericalError::NumericalError;
};

}  // namespace pba

#pragma once

#include <stdexcept>
#include <string>

namespace twofe {

// Base class for all library errors so callers can catch one type.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Data / input errors
struct DuplicateCell : Error {
  using Error::Error;
};
struct ParseError : Error {
  using Error::Error;
};
struct DegeneratePanel : Error {
  using Error::Error;
};
struct InvalidSpec : Error {
  using Error::Error;
};

// Numerical / estimation errors
struct NumericOverflow : Error {
  using Error::Error;
};
struct SeparationError : Error {
  using Error::Error;
};
struct NotConverged : Error {
  using Error::Error;
};
struct NumericalBreakdown : Error {
  using Error::Error;
};
struct DegenerateProjection : Error {
  using Error::Error;
};
struct SingularInformation : Error {
  using Error::Error;
};
struct InvalidTrim : Error {
  using Error::Error;
};
struct JackknifeSubfitError : Error {
  using Error::Error;
};
struct StudyUnreliable : Error {
  using Error::Error;
};

}  // namespace twofe

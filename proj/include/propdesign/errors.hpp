#pragma once

#include <stdexcept>
#include <string>

namespace propdesign {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NotPositiveDefinite : public Error {
 public:
  using Error::Error;
};

class InvalidConfig : public Error {
 public:
  using Error::Error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class EnumerationTooLarge : public Error {
 public:
  using Error::Error;
};

/// Raised when the measure carries no information (V_xi = 0).
class DegenerateMeasure : public Error {
 public:
  using Error::Error;
};

/// 1 + lambda1 + lambda2 (or 1 + 2 lambda) vanishes, so the total effect is identically zero.
class DegenerateTotalEffect : public InvalidConfig {
 public:
  using InvalidConfig::InvalidConfig;
};

class BranchMismatch : public Error {
 public:
  using Error::Error;
};

class NotEstimable : public Error {
 public:
  using Error::Error;
};

}  // namespace propdesign

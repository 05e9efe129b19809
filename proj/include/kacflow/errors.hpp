#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace kacflow {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad or incomplete configuration (missing fields, unknown names).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A sampled invariant failed; `point` holds the offending arguments.
class ValidationError : public Error {
 public:
  ValidationError(const std::string& what, std::vector<double> point)
      : Error(what), point(std::move(point)) {}
  std::vector<double> point;
};

class NumericError : public Error {
 public:
  NumericError(const std::string& what, double achieved)
      : Error(what), achieved(achieved) {}
  double achieved;
};

class EnvelopeViolation : public Error {
 public:
  using Error::Error;
};

class BoundViolation : public Error {
 public:
  BoundViolation(const std::string& what, std::vector<double> point)
      : Error(what), point(std::move(point)) {}
  std::vector<double> point;
};

class StepSizeError : public Error {
 public:
  StepSizeError(const std::string& what, double suggested_dt)
      : Error(what), suggested_dt(suggested_dt) {}
  double suggested_dt;
};

class PreconditionError : public Error {
 public:
  using Error::Error;
};

class ModeError : public Error {
 public:
  using Error::Error;
};

}  // namespace kacflow

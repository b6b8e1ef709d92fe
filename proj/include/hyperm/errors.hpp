#pragma once

#include <stdexcept>
#include <string>

namespace hyperm {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed geometry or a query outside the mission space.
class GeometryError : public Error {
 public:
  using Error::Error;
};

/// Scenario data that violates a load-time validation.
class ScenarioError : public Error {
 public:
  using Error::Error;
};

/// A point or target pair that cannot be connected under the agent dynamics.
class UnreachableError : public Error {
 public:
  using Error::Error;
};

/// Boundary conditions of a monitoring problem that no admissible control meets.
class InfeasibleError : public Error {
 public:
  using Error::Error;
};

/// Covariance propagation lost positive definiteness; the step is too large.
class StepSizeError : public Error {
 public:
  using Error::Error;
};

/// An inner optimal control solve failed inside a cycle.
class SolverError : public Error {
 public:
  SolverError(const std::string& what, int segment)
      : Error(what), segment_(segment) {}
  int segment() const noexcept { return segment_; }

 private:
  int segment_;
};

}  // namespace hyperm

#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace phaseflow {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid argument values (sizes, ranges, missing prerequisites).
class ParameterError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Dense work that would exceed the configured memory budget.
class CapacityError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values appeared during an iterative computation.
class NumericalBlowup : public Error {
 public:
  NumericalBlowup(const std::string& what, long step)
      : Error(what), step_(step) {}
  long step() const { return step_; }

 private:
  long step_;
};

/// An iterative solver stopped before reaching its tolerance. The trace holds
/// whatever the solver considers diagnostic (residual norms, iterates).
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, std::vector<double> trace = {})
      : Error(what), trace_(std::move(trace)) {}
  const std::vector<double>& trace() const { return trace_; }

 private:
  std::vector<double> trace_;
};

/// Evaluation outside the admissible domain of a function.
class DomainError : public Error {
 public:
  DomainError(const std::string& what, double margin)
      : Error(what), margin_(margin) {}
  double margin() const { return margin_; }

 private:
  double margin_;
};

/// Root search found no sign change; `curve` holds (x, residual) pairs.
class NotFoundError : public Error {
 public:
  NotFoundError(const std::string& what,
                std::vector<std::pair<double, double>> curve)
      : Error(what), curve_(std::move(curve)) {}
  const std::vector<std::pair<double, double>>& curve() const { return curve_; }

 private:
  std::vector<std::pair<double, double>> curve_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace phaseflow

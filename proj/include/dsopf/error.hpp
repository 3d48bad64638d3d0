#pragma once

#include <stdexcept>
#include <string>

namespace dsopf {

/// Malformed input text. Carries the 1-based line number where parsing failed
/// (0 when the failure is not tied to a line).
class ParseError : public std::runtime_error {
public:
  ParseError(const std::string& what, int line)
      : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}

  int line() const noexcept { return line_; }

private:
  int line_;
};

/// Input that parses but violates a model invariant.
class ValidationError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Dimension or protocol misuse by a caller.
class DimensionError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

class SingularBranchError : public ValidationError {
public:
  using ValidationError::ValidationError;
};

/// An iterative method failed to reach its tolerance.
class NonconvergenceError : public std::runtime_error {
public:
  NonconvergenceError(const std::string& what, double last_mismatch)
      : std::runtime_error(what), last_mismatch_(last_mismatch) {}

  double last_mismatch() const noexcept { return last_mismatch_; }

private:
  double last_mismatch_;
};

class SingularJacobianError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// A region's subproblem failed inside the consensus loop.
class RegionSolveError : public std::runtime_error {
public:
  RegionSolveError(const std::string& region, int iteration, const std::string& why)
      : std::runtime_error("region '" + region + "' failed at iteration " +
                           std::to_string(iteration) + ": " + why),
        region_(region),
        iteration_(iteration) {}

  const std::string& region() const noexcept { return region_; }
  int iteration() const noexcept { return iteration_; }

private:
  std::string region_;
  int iteration_;
};

class ProtocolError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

}  // namespace dsopf

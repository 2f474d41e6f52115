#pragma once

#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace opfd {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Base class for all library errors.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Line set is not a spanning tree rooted at the substation.
struct TopologyError : Error {
  using Error::Error;
};

/// Physically invalid model data (impedances, ratings, limits).
struct ModelError : Error {
  using Error::Error;
};

/// Dimension mismatch between operands.
struct ShapeError : Error {
  using Error::Error;
};

/// Iterative solver failed to reach its tolerance.
struct ConvergenceError : Error {
  ConvergenceError(const std::string& msg, double residual)
      : Error(msg), residual(residual) {}
  double residual;
};

/// Singular or rank-deficient linear system.
struct RankError : Error {
  using Error::Error;
};

/// Invalid argument value (out-of-range K, negative shrinkage, ...).
struct ArgumentError : Error {
  using Error::Error;
};

/// Malformed input file.
struct ParseError : Error {
  using Error::Error;
};

/// Inconsistent run configuration.
struct ConfigError : Error {
  using Error::Error;
};

/// Operation applied to an object in the wrong state.
struct StateError : Error {
  using Error::Error;
};

/// Non-finite value or numeric breakdown inside an algorithm.
struct NumericError : Error {
  using Error::Error;
};

inline void require_shape(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

}  // namespace opfd

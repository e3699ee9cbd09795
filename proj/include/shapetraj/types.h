#ifndef SHAPETRAJ_TYPES_H
#define SHAPETRAJ_TYPES_H

#include <Eigen/Core>

#include <stdexcept>
#include <string>

namespace shapetraj {

using Vec3 = Eigen::Vector3d;

/// N x 3 array of points or vectors, one row per item.
using PointSet = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

/// Ordered landmarks. Row i refers to the same anatomical location in every
/// shape of a dataset.
using LandmarkSet = PointSet;

/// One momentum vector per control point.
using MomentumSet = PointSet;

class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Input data violates a structural requirement (open mesh, bad manifest...).
class InvalidInput : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite cost or gradient encountered during a numerical procedure.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& message, int line)
      : std::runtime_error(message + " (line " + std::to_string(line) + ")"), message_(message), line_(line) {}
  int line() const { return line_; }
  const std::string& message() const { return message_; }

 private:
  std::string message_;
  int line_;
};

inline bool all_finite(const PointSet& p) { return p.allFinite(); }

}  // namespace shapetraj

#endif

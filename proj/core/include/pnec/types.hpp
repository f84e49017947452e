#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <stdexcept>
#include <string>

namespace pnec {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat32 = Eigen::Matrix<double, 3, 2>;

// Relative pose between two camera frames: X_1 = R * X_2 + scale * t,
// with the translation kept at unit norm (scale is unobservable).
struct RelativePose {
  Mat3 R = Mat3::Identity();
  Vec3 t = Vec3::UnitX();
};

// Pinhole intrinsics, pixels.
struct Camera {
  double fx = 720.0;
  double fy = 720.0;
  double cx = 0.0;
  double cy = 0.0;
};

// A matched image point pair with per-frame 2D noise covariances (px^2).
struct Correspondence {
  Vec2 p1 = Vec2::Zero();
  Vec2 p2 = Vec2::Zero();
  Mat2 cov1 = Mat2::Identity();
  Mat2 cov2 = Mat2::Identity();
};

// Unit bearing vectors with their propagated 3x3 covariances.
struct BearingPair {
  Vec3 f1 = Vec3::UnitZ();
  Vec3 f2 = Vec3::UnitZ();
  Mat3 cov1 = Mat3::Zero();
  Mat3 cov2 = Mat3::Zero();
};

// Thrown when input data violates an operation's preconditions.
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Thrown when a numerical procedure cannot proceed (singular system,
// non-finite values, degenerate configuration).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace pnec

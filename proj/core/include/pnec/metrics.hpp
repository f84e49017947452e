#pragma once

#include <optional>
#include <span>
#include <vector>

#include "pnec/types.hpp"

namespace pnec {

// Absolute pose of one trajectory frame.
struct TrajectoryPose {
  Mat3 R = Mat3::Identity();
  Vec3 position = Vec3::Zero();
};
using Trajectory = std::vector<TrajectoryPose>;

// Geodesic angle between two rotations, radians in [0, pi].
double e_rot(const Mat3& R_est, const Mat3& R_gt);

// Mean consecutive-frame relative-rotation error, degrees.
double rpe1_deg(const Trajectory& est, const Trajectory& gt);

// Endpoint rotational drift: e_rot between the frame-0-to-frame-n composed
// rotations of estimate and ground truth, degrees.
double rpen_deg(const Trajectory& est, const Trajectory& gt);

// Angular error between translation directions, degrees, sign-invariant
// (|cos| because the epipolar geometry does not observe the sign of t).
// Empty when ||t_gt|| <= min_gt_norm: the direction is undefined.
std::optional<double> e_t_deg(const Vec3& t_est, const Vec3& t_gt, double min_gt_norm = 1e-3);

// Mean absolute difference of the normalized variances
// sigma_norm_i = N * sigma_i^2 / sum_j sigma_j^2, invariant to global
// scaling of either set. Throws on an all-zero variance set.
double sigma_norm_error(std::span<const double> learned, std::span<const double> truth);

}  // namespace pnec

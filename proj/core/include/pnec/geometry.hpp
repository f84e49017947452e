#pragma once

#include "pnec/types.hpp"

namespace pnec {

// Skew-symmetric matrix of u, so that skew(u) * v == u x v.
Mat3 skew(const Vec3& u);

// Rodrigues exponential; second-order Taylor expansion below 1e-8 angle.
Mat3 so3_exp(const Vec3& x);

// Principal logarithm, ||result|| in [0, pi]. The near-zero and near-pi
// branches are handled explicitly; at exactly pi the axis sign is fixed by
// making the largest-magnitude component positive.
Vec3 so3_log(const Mat3& R);

bool is_rotation(const Mat3& R, double tol = 1e-9);

// Unit bearing vector of pixel p: normalize((x-cx)/fx, (y-cy)/fy, 1).
Vec3 unproject(const Vec2& p, const Camera& cam);

// Pinhole forward map of a point (or bearing) with positive depth.
Vec2 project(const Vec3& x, const Camera& cam);

// 3x2 Jacobian of unproject at p.
Mat32 unproject_jacobian(const Vec2& p, const Camera& cam);

// First-order propagation of a 2D pixel covariance to bearing space:
// J cov2 J^T with J = unproject_jacobian. Result is symmetric PSD with the
// bearing direction in its null space.
Mat3 propagate_cov(const Vec2& p, const Mat2& cov2, const Camera& cam);

// R S R^T, symmetrized.
Mat3 rotate_cov(const Mat3& R, const Mat3& S);

// Orthonormal basis of the tangent plane at unit vector t (3x2, deterministic).
Mat32 sphere_tangent_basis(const Vec3& t);

BearingPair make_bearing_pair(const Correspondence& c, const Camera& cam);

}  // namespace pnec

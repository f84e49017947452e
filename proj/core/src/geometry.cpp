#include "pnec/geometry.hpp"

#include <Eigen/LU>
#include <cmath>

namespace pnec {

Mat3 skew(const Vec3& u) {
  Mat3 m;
  m << 0.0, -u.z(), u.y(), u.z(), 0.0, -u.x(), -u.y(), u.x(), 0.0;
  return m;
}

Mat3 so3_exp(const Vec3& x) {
  const double theta = x.norm();
  const Mat3 k = skew(x);
  if (theta < 1e-8) {
    return Mat3::Identity() + k + 0.5 * k * k;
  }
  const double s = std::sin(theta) / theta;
  const double c = (1.0 - std::cos(theta)) / (theta * theta);
  return Mat3::Identity() + s * k + c * k * k;
}

Vec3 so3_log(const Mat3& R) {
  const Vec3 v(R(2, 1) - R(1, 2), R(0, 2) - R(2, 0), R(1, 0) - R(0, 1));
  // atan2 of (sin, cos) stays well conditioned at both ends of [0, pi],
  // where acos of the trace loses half the digits.
  const double cos_theta = (R.trace() - 1.0) / 2.0;
  const double sin_theta = 0.5 * v.norm();
  const double theta = std::atan2(sin_theta, cos_theta);

  if (theta < 1e-8) {
    // theta/(2 sin theta) -> 1/2 with O(theta^2) correction.
    return 0.5 * (1.0 + theta * theta / 6.0) * v;
  }
  if (theta < M_PI - 1e-4) {
    return theta / (2.0 * std::sin(theta)) * v;
  }

  // Near pi the anti-symmetric part degrades; take the axis from the
  // symmetric part (R + I)/2 = cos(t) I + (1-cos(t)) nn^T at t = pi.
  const Mat3 b = 0.5 * (R + Mat3::Identity());
  int k = 0;
  b.diagonal().maxCoeff(&k);
  Vec3 axis;
  const double dk = std::sqrt(std::max(0.0, b(k, k)));
  axis[k] = dk;
  for (int j = 0; j < 3; ++j) {
    if (j != k) axis[j] = dk > 0.0 ? b(j, k) / dk : 0.0;
  }
  axis.normalize();

  // Fix the sign: away from exactly pi, v = 2 sin(theta) * axis still carries
  // it; at exactly pi make the largest-magnitude component positive.
  if (v.norm() > 1e-12) {
    if (axis.dot(v) < 0.0) axis = -axis;
  } else {
    int m = 0;
    axis.cwiseAbs().maxCoeff(&m);
    if (axis[m] < 0.0) axis = -axis;
  }
  return theta * axis;
}

bool is_rotation(const Mat3& R, double tol) {
  return (R.transpose() * R - Mat3::Identity()).norm() < tol &&
         std::abs(R.determinant() - 1.0) < tol;
}

Vec3 unproject(const Vec2& p, const Camera& cam) {
  if (cam.fx <= 0.0 || cam.fy <= 0.0) throw InvalidInput("camera focal lengths must be positive");
  const Vec3 v((p.x() - cam.cx) / cam.fx, (p.y() - cam.cy) / cam.fy, 1.0);
  return v.normalized();
}

Vec2 project(const Vec3& x, const Camera& cam) {
  if (x.z() <= 0.0) throw InvalidInput("projected point must have positive depth");
  return {x.x() / x.z() * cam.fx + cam.cx, x.y() / x.z() * cam.fy + cam.cy};
}

Mat32 unproject_jacobian(const Vec2& p, const Camera& cam) {
  const Vec3 v((p.x() - cam.cx) / cam.fx, (p.y() - cam.cy) / cam.fy, 1.0);
  const double norm = v.norm();
  const Vec3 u = v / norm;
  Mat32 dv;
  dv << 1.0 / cam.fx, 0.0, 0.0, 1.0 / cam.fy, 0.0, 0.0;
  return (Mat3::Identity() - u * u.transpose()) / norm * dv;
}

Mat3 propagate_cov(const Vec2& p, const Mat2& cov2, const Camera& cam) {
  const Mat32 j = unproject_jacobian(p, cam);
  const Mat3 out = j * cov2 * j.transpose();
  return 0.5 * (out + out.transpose());
}

Mat3 rotate_cov(const Mat3& R, const Mat3& S) {
  const Mat3 out = R * S * R.transpose();
  return 0.5 * (out + out.transpose());
}

Mat32 sphere_tangent_basis(const Vec3& t) {
  int k = 0;
  t.cwiseAbs().minCoeff(&k);
  const Vec3 b1 = t.cross(Vec3::Unit(k)).normalized();
  const Vec3 b2 = t.cross(b1);
  Mat32 basis;
  basis.col(0) = b1;
  basis.col(1) = b2;
  return basis;
}

BearingPair make_bearing_pair(const Correspondence& c, const Camera& cam) {
  BearingPair bp;
  bp.f1 = unproject(c.p1, cam);
  bp.f2 = unproject(c.p2, cam);
  bp.cov1 = propagate_cov(c.p1, c.cov1, cam);
  bp.cov2 = propagate_cov(c.p2, c.cov2, cam);
  return bp;
}

}  // namespace pnec

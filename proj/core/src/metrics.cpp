#include "pnec/metrics.hpp"

#include <cmath>

#include "pnec/geometry.hpp"

namespace pnec {

namespace {
constexpr double kRadToDeg = 180.0 / M_PI;
}

double e_rot(const Mat3& R_est, const Mat3& R_gt) {
  return so3_log(R_gt.transpose() * R_est).norm();
}

double rpe1_deg(const Trajectory& est, const Trajectory& gt) {
  if (est.size() != gt.size()) throw InvalidInput("trajectory lengths differ");
  if (est.size() < 2) throw InvalidInput("trajectory needs at least two poses");
  double sum = 0.0;
  for (size_t i = 0; i + 1 < est.size(); ++i) {
    const Mat3 rel_est = est[i].R.transpose() * est[i + 1].R;
    const Mat3 rel_gt = gt[i].R.transpose() * gt[i + 1].R;
    sum += e_rot(rel_est, rel_gt);
  }
  return kRadToDeg * sum / static_cast<double>(est.size() - 1);
}

double rpen_deg(const Trajectory& est, const Trajectory& gt) {
  if (est.size() != gt.size()) throw InvalidInput("trajectory lengths differ");
  if (est.size() < 2) throw InvalidInput("trajectory needs at least two poses");
  const Mat3 total_est = est.front().R.transpose() * est.back().R;
  const Mat3 total_gt = gt.front().R.transpose() * gt.back().R;
  return kRadToDeg * e_rot(total_est, total_gt);
}

std::optional<double> e_t_deg(const Vec3& t_est, const Vec3& t_gt, double min_gt_norm) {
  const double gt_norm = t_gt.norm();
  if (gt_norm <= min_gt_norm) return std::nullopt;
  const double est_norm = t_est.norm();
  if (est_norm == 0.0) return std::nullopt;
  const double c = std::abs(t_est.dot(t_gt) / (est_norm * gt_norm));
  return kRadToDeg * std::acos(std::min(1.0, c));
}

double sigma_norm_error(std::span<const double> learned, std::span<const double> truth) {
  if (learned.empty() || learned.size() != truth.size())
    throw InvalidInput("variance sets must be non-empty and equally sized");
  double sum_l = 0.0, sum_t = 0.0;
  for (size_t i = 0; i < learned.size(); ++i) {
    sum_l += learned[i];
    sum_t += truth[i];
  }
  if (sum_l <= 0.0 || sum_t <= 0.0) throw InvalidInput("variance sets must have positive sums");
  const double n = static_cast<double>(learned.size());
  double err = 0.0;
  for (size_t i = 0; i < learned.size(); ++i) {
    err += std::abs(n * learned[i] / sum_l - n * truth[i] / sum_t);
  }
  return err / n;
}

}  // namespace pnec

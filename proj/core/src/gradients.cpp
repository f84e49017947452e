#include "pnec/gradients.hpp"

#include <Eigen/Dense>
#include <cmath>

#include "pnec/geometry.hpp"

namespace pnec {

ResidualJacobians residual_jacobians(const RelativePose& pose, const BearingPair& bp,
                                     double regularization) {
  const Vec3 g = pose.R * bp.f2;                  // R f2
  const Vec3 a = pose.t.cross(bp.f1);             // skew(f1)^T t
  const Vec3 h = g.cross(pose.t);                 // skew(R f2)^T t
  const Mat3 cov2_rot = pose.R * bp.cov2 * pose.R.transpose();

  ResidualJacobians out;
  const double e = pose.t.dot(bp.f1.cross(g));
  out.n = e * e;
  out.d_sigma = h.dot(bp.cov1 * h);
  out.d_sigma_p = a.dot(cov2_rot * a);

  const double d = out.d_sigma + out.d_sigma_p + regularization;
  if (d <= 0.0) throw NumericalError("zero residual variance; add regularization");
  const double sigma = std::sqrt(d);

  const Vec3 de_dx = g.cross(a);
  out.dn_dx = 2.0 * e * de_dx;
  out.dd_sigma_dx = 2.0 * g.cross(pose.t.cross(bp.cov1 * h));
  out.dd_sigma_p_dx = 2.0 * (cov2_rot * a).cross(a);
  out.des_dx = out.dn_dx / sigma -
               out.n / (2.0 * sigma * sigma * sigma) * (out.dd_sigma_dx + out.dd_sigma_p_dx);

  const double scale = -out.n / (2.0 * sigma * sigma * sigma);
  const Vec3 v2 = pose.R.transpose() * a;  // R^T skew(f1)^T t
  // Materialized outer products stay exactly symmetric under scaling.
  const Mat3 outer1 = h * h.transpose();
  const Mat3 outer2 = v2 * v2.transpose();
  out.des_dsigma = scale * outer1;
  out.des_dsigma_p = scale * outer2;
  return out;
}

Vec3 energy_grad_rotation(const RelativePose& pose, std::span<const BearingPair> problem,
                          double regularization) {
  Vec3 grad = Vec3::Zero();
  for (const BearingPair& bp : problem) {
    const Vec3 g = pose.R * bp.f2;
    const Vec3 a = pose.t.cross(bp.f1);
    const Vec3 h = g.cross(pose.t);
    const Mat3 cov2_rot = pose.R * bp.cov2 * pose.R.transpose();
    const double e = pose.t.dot(bp.f1.cross(g));
    const double d = h.dot(bp.cov1 * h) + a.dot(cov2_rot * a) + regularization;
    if (d <= 0.0) throw NumericalError("zero residual variance in energy gradient");
    const Vec3 de_dx = g.cross(a);
    const Vec3 dd_dx = 2.0 * g.cross(pose.t.cross(bp.cov1 * h)) + 2.0 * (cov2_rot * a).cross(a);
    grad += (2.0 * e / d) * de_dx - (e * e / (d * d)) * dd_dx;
  }
  return grad;
}

std::vector<EnergyCovGradient> energy_grad_covariances(const RelativePose& pose,
                                                       std::span<const BearingPair> problem,
                                                       double regularization) {
  std::vector<EnergyCovGradient> out(problem.size());
  for (size_t i = 0; i < problem.size(); ++i) {
    const BearingPair& bp = problem[i];
    const Vec3 g = pose.R * bp.f2;
    const Vec3 a = pose.t.cross(bp.f1);
    const Vec3 h = g.cross(pose.t);
    const double e = pose.t.dot(bp.f1.cross(g));
    const double d = h.dot(bp.cov1 * h) + a.dot(pose.R * bp.cov2 * pose.R.transpose() * a) +
                     regularization;
    if (d <= 0.0) throw NumericalError("zero residual variance in covariance gradient");
    const double scale = -e * e / (d * d);
    const Vec3 v2 = pose.R.transpose() * a;
    const Mat3 outer1 = h * h.transpose();
    const Mat3 outer2 = v2 * v2.transpose();
    out[i].d_cov1 = scale * outer1;
    out[i].d_cov2 = scale * outer2;
  }
  return out;
}

RelativePose refine_rotation_to_stationarity(std::span<const BearingPair> problem,
                                             const RelativePose& pose, double regularization,
                                             double gradient_tolerance, int max_steps) {
  RelativePose current = pose;
  const double h = 1e-6;
  for (int step = 0; step < max_steps; ++step) {
    const Vec3 grad = energy_grad_rotation(current, problem, regularization);
    if (grad.norm() < gradient_tolerance) return current;

    Mat3 hess;
    for (int k = 0; k < 3; ++k) {
      RelativePose plus = current, minus = current;
      plus.R = so3_exp(h * Vec3::Unit(k)) * current.R;
      minus.R = so3_exp(-h * Vec3::Unit(k)) * current.R;
      hess.col(k) = (energy_grad_rotation(plus, problem, regularization) -
                     energy_grad_rotation(minus, problem, regularization)) /
                    (2.0 * h);
    }
    hess = 0.5 * (hess + hess.transpose()).eval();
    Vec3 delta = hess.ldlt().solve(-grad);
    if (!delta.allFinite()) delta = -1e-3 * grad;
    // Trust-region cap; Newton is only used as a local polish.
    const double max_step = 1e-2;
    if (delta.norm() > max_step) delta *= max_step / delta.norm();
    current.R = so3_exp(delta) * current.R;
  }
  if (energy_grad_rotation(current, problem, regularization).norm() >= gradient_tolerance) {
    throw NumericalError("rotation refinement did not reach stationarity");
  }
  return current;
}

std::optional<Vec3> grad_erot_wrt_pose(const Mat3& R_est, const Mat3& R_gt) {
  const Vec3 log_rel = so3_log(R_est * R_gt.transpose());
  const double angle = log_rel.norm();
  if (angle <= 1e-9 || angle >= M_PI - 1e-9) return std::nullopt;
  return log_rel / angle;
}

ImplicitGradientResult implicit_covariance_gradient(std::span<const BearingPair> problem,
                                                    const RelativePose& pose_star,
                                                    const Mat3& R_gt,
                                                    const ImplicitGradientConfig& cfg) {
  ImplicitGradientResult result;
  result.grads.assign(problem.size(), EnergyCovGradient{});

  const std::optional<Vec3> g_rot = grad_erot_wrt_pose(pose_star.R, R_gt);
  if (!g_rot) {
    result.skipped_zero_loss = true;
    return result;
  }

  const double h = cfg.fd_step;
  const auto perturbed = [&](int axis, double step) {
    RelativePose p = pose_star;
    p.R = so3_exp(step * Vec3::Unit(axis)) * pose_star.R;
    return p;
  };

  // Rotation Hessian of E_s by central differences of the analytic gradient.
  Mat3 hess;
  for (int k = 0; k < 3; ++k) {
    const Vec3 gp = energy_grad_rotation(perturbed(k, h), problem, cfg.regularization);
    const Vec3 gm = energy_grad_rotation(perturbed(k, -h), problem, cfg.regularization);
    hess.col(k) = (gp - gm) / (2.0 * h);
  }
  hess = 0.5 * (hess + hess.transpose()).eval();

  Eigen::SelfAdjointEigenSolver<Mat3> eig(hess);
  const double ev_min = eig.eigenvalues().cwiseAbs().minCoeff();
  const double ev_max = eig.eigenvalues().cwiseAbs().maxCoeff();
  result.hessian_condition = ev_min > 0.0 ? ev_max / ev_min
                                          : std::numeric_limits<double>::infinity();
  Mat3 hess_solved = hess;
  if (result.hessian_condition > cfg.condition_limit) {
    hess_solved += cfg.ridge * Mat3::Identity();
    result.ridge_applied = true;
    Eigen::SelfAdjointEigenSolver<Mat3> eig2(hess_solved);
    if (eig2.eigenvalues().cwiseAbs().minCoeff() == 0.0) {
      throw NumericalError("singular rotation Hessian, condition " +
                           std::to_string(result.hessian_condition));
    }
  }
  const Vec3 w = hess_solved.ldlt().solve(*g_rot);
  if (!w.allFinite()) {
    throw NumericalError("rotation Hessian solve failed, condition " +
                         std::to_string(result.hessian_condition));
  }

  // Mixed second derivatives d2E/(dSigma dx) by differencing the analytic
  // covariance gradients along the same rotation axes.
  for (int k = 0; k < 3; ++k) {
    const auto gp = energy_grad_covariances(perturbed(k, h), problem, cfg.regularization);
    const auto gm = energy_grad_covariances(perturbed(k, -h), problem, cfg.regularization);
    for (size_t i = 0; i < problem.size(); ++i) {
      result.grads[i].d_cov1 -= w[k] * (gp[i].d_cov1 - gm[i].d_cov1) / (2.0 * h);
      result.grads[i].d_cov2 -= w[k] * (gp[i].d_cov2 - gm[i].d_cov2) / (2.0 * h);
    }
  }
  return result;
}

double filter_pow(double x) {
  if (x >= 0.0) return 1.0 + x;
  return 1.0 / (1.0 - x);
}

double filter_pow_deriv(double x) {
  if (x >= 0.0) return 1.0;
  const double den = 1.0 - x;
  return 1.0 / (den * den);
}

double filter_sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double filter_sigmoid_deriv(double x) {
  const double s = filter_sigmoid(x);
  return s * (1.0 - s);
}

double CovarianceParams::s() const { return filter_pow(s_raw); }
double CovarianceParams::beta() const { return filter_sigmoid(beta_raw); }

double CovarianceParams::s_raw_for(double s) {
  if (s <= 0.0) throw InvalidInput("covariance scale must be positive");
  return s >= 1.0 ? s - 1.0 : 1.0 - 1.0 / s;
}

Mat2 CovarianceParams::cov() const {
  const double sc = s();
  const double b = beta();
  const double c = std::cos(alpha_raw);
  const double sn = std::sin(alpha_raw);
  Mat2 rot;
  rot << c, -sn, sn, c;
  return sc * rot * Eigen::Vector2d(b, 1.0 - b).asDiagonal() * rot.transpose();
}

Mat2 pullback_cov_gradient(const Mat3& d_cov3, const Vec2& p, const Camera& cam) {
  const Mat32 j = unproject_jacobian(p, cam);
  return j.transpose() * d_cov3 * j;
}

Vec3 chain_to_params(const Mat2& d_cov2d, const CovarianceParams& params) {
  const double sc = params.s();
  const double b = params.beta();
  const double c = std::cos(params.alpha_raw);
  const double sn = std::sin(params.alpha_raw);
  Mat2 rot;
  rot << c, -sn, sn, c;
  const Mat2 shape = rot * Eigen::Vector2d(b, 1.0 - b).asDiagonal() * rot.transpose();

  Mat2 j90;  // d R_alpha / d alpha = J90 * R_alpha
  j90 << 0.0, -1.0, 1.0, 0.0;
  const Mat2 cov = sc * shape;
  const Mat2 dcov_dalpha = j90 * cov - cov * j90;
  const Mat2 dcov_dbeta = sc * rot * Eigen::Vector2d(1.0, -1.0).asDiagonal() * rot.transpose();

  const double inner_s = (d_cov2d.array() * shape.array()).sum();
  const double inner_alpha = (d_cov2d.array() * dcov_dalpha.array()).sum();
  const double inner_beta = (d_cov2d.array() * dcov_dbeta.array()).sum();

  return {inner_s * filter_pow_deriv(params.s_raw), inner_alpha,
          inner_beta * filter_sigmoid_deriv(params.beta_raw)};
}

}  // namespace pnec

#pragma once

#include <optional>
#include <span>
#include <vector>

#include "pnec/energy.hpp"
#include "pnec/types.hpp"

namespace pnec {

// Analytic first derivatives of the per-correspondence quantities
//   n       = e^2                         (squared epipolar residual)
//   d_sigma = (R f2 x t)^T cov1 (...)     (first-frame variance summand)
//   d_sigma_p = (t x f1)^T R cov2 R^T (...) (second-frame variance summand)
//   e_s     = n / sqrt(d_sigma + d_sigma_p + reg)
// with respect to a left tangent perturbation x of R (evaluated at x = 0)
// and with respect to the two bearing covariances.
struct ResidualJacobians {
  double n = 0.0;
  double d_sigma = 0.0;
  double d_sigma_p = 0.0;
  Vec3 dn_dx = Vec3::Zero();
  Vec3 dd_sigma_dx = Vec3::Zero();
  Vec3 dd_sigma_p_dx = Vec3::Zero();
  Vec3 des_dx = Vec3::Zero();
  Mat3 des_dsigma = Mat3::Zero();
  Mat3 des_dsigma_p = Mat3::Zero();
};

// Throws NumericalError when the regularized variance is zero.
ResidualJacobians residual_jacobians(const RelativePose& pose, const BearingPair& bp,
                                     double regularization = 1e-13);

// Gradient of the symmetric energy E_s with respect to a left tangent
// perturbation of R (t held fixed).
Vec3 energy_grad_rotation(const RelativePose& pose, std::span<const BearingPair> problem,
                          double regularization);

// Per-correspondence gradient of E_s with respect to the two 3x3 bearing
// covariances (all 9 entries treated as independent; the result is symmetric).
struct EnergyCovGradient {
  Mat3 d_cov1 = Mat3::Zero();
  Mat3 d_cov2 = Mat3::Zero();
};
std::vector<EnergyCovGradient> energy_grad_covariances(const RelativePose& pose,
                                                       std::span<const BearingPair> problem,
                                                       double regularization);

// Newton iterations on the analytic rotation gradient (t held fixed) to
// drive ||dE/dx|| below `gradient_tolerance`. Levenberg-Marquardt compares
// energies, whose rounding floor limits how small the gradient can get;
// this polish reaches stationarity to machine precision, as the implicit
// gradient requires. Throws NumericalError if the tolerance is unreachable.
RelativePose refine_rotation_to_stationarity(std::span<const BearingPair> problem,
                                             const RelativePose& pose, double regularization,
                                             double gradient_tolerance = 1e-10,
                                             int max_steps = 30);

// Gradient of e_rot = angle(R_gt^T R_est) with respect to a left tangent
// perturbation of R_est: the unit axis of R_est R_gt^T. Undefined (returns
// nullopt) when e_rot is outside (1e-9, pi - 1e-9).
std::optional<Vec3> grad_erot_wrt_pose(const Mat3& R_est, const Mat3& R_gt);

struct ImplicitGradientConfig {
  double regularization = 1e-13;
  double fd_step = 1e-6;           // step for differencing analytic gradients
  double condition_limit = 1e12;   // ridge threshold for the rotation Hessian
  double ridge = 1e-12;
};

struct ImplicitGradientResult {
  // dL/d cov1_i and dL/d cov2_i in bearing space, one entry per correspondence.
  std::vector<EnergyCovGradient> grads;
  double hessian_condition = 0.0;
  bool ridge_applied = false;
  // True when e_rot < 1e-9 and the sample is skipped (all gradients zero).
  bool skipped_zero_loss = false;
};

// Implicit-function-theorem gradient of the rotational loss with respect to
// the bearing covariances at a converged minimizer of E_s:
//   dL/dSigma = -(d2E/dSigma dx) (d2E/dx dx)^-1 dL_rot/dx.
// Second derivatives come from central differences of the analytic first
// derivatives. Throws NumericalError when the Hessian stays singular after
// the ridge.
ImplicitGradientResult implicit_covariance_gradient(std::span<const BearingPair> problem,
                                                    const RelativePose& pose_star,
                                                    const Mat3& R_gt,
                                                    const ImplicitGradientConfig& cfg = {});

// (s, alpha, beta) parameterization of a 2D covariance,
//   cov = s * R_alpha diag(beta, 1-beta) R_alpha^T,
// stored as unconstrained raw values passed through the filters
//   s = (1+|x|)^sign(x),  alpha = x,  beta = 1/(1+exp(-x)).
struct CovarianceParams {
  double s_raw = 0.0;
  double alpha_raw = 0.0;
  double beta_raw = 0.0;

  double s() const;
  double alpha() const { return alpha_raw; }
  double beta() const;
  Mat2 cov() const;

  // Raw value whose filtered s equals the given positive scale.
  static double s_raw_for(double s);
};

double filter_pow(double x);        // f1
double filter_pow_deriv(double x);
double filter_sigmoid(double x);    // f3
double filter_sigmoid_deriv(double x);

// Pullback of a bearing-space gradient to the 2D pixel covariance through
// the unprojection Jacobian.
Mat2 pullback_cov_gradient(const Mat3& d_cov3, const Vec2& p, const Camera& cam);

// Chain rule through cov(s, alpha, beta) and the raw-value filters.
Vec3 chain_to_params(const Mat2& d_cov2d, const CovarianceParams& params);

}  // namespace pnec

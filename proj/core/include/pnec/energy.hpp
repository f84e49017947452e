#pragma once

#include <span>
#include <vector>

#include "pnec/types.hpp"

namespace pnec {

struct EnergyConfig {
  // Added to every denominator variance; keeps the energy differentiable
  // when a propagated variance collapses to zero.
  double regularization = 1e-13;
};

// Epipolar-plane-normal residual e = t . (f1 x R f2); zero iff t, f1, R f2
// are coplanar.
double nec_residual(const RelativePose& pose, const BearingPair& bp);

// Residual variance from second-frame noise only:
// t^T skew(f1) R cov2 R^T skew(f1)^T t.
double variance_asym(const RelativePose& pose, const BearingPair& bp);

// Symmetric residual variance accounting for noise in both frames:
// t^T ( skew(R f2) cov1 skew(R f2)^T + skew(f1) R cov2 R^T skew(f1)^T ) t.
double variance_sym(const RelativePose& pose, const BearingPair& bp);

// Full covariance of the epipolar-plane normal under noise in both bearings,
// including the second-order cross term that variance_sym drops. The residual
// variance of the bilinear noise model is exactly t^T sigma_n_full t.
Mat3 sigma_n_full(const RelativePose& pose, const BearingPair& bp);

// Covariance of the cross product a x b for independent zero-mean noise with
// covariances A and B. This is the cross term of sigma_n_full.
Mat3 cross_product_cov(const Mat3& A, const Mat3& B);

// E_s = sum_i e_i^2 / (sigma_s,i^2 + regularization).
// Throws NumericalError if every denominator is zero (possible only with
// regularization == 0).
double energy_sym(const RelativePose& pose, std::span<const BearingPair> problem,
                  const EnergyConfig& cfg = {});

// Unweighted least-squares energy sum_i w_i e_i^2; weights default to 1.
double energy_nec_ls(const RelativePose& pose, std::span<const BearingPair> problem,
                     std::span<const double> weights = {});

// Per-term pieces of the symmetric energy, shared by the solver and the
// gradient code. d1/d2 are the two variance summands; denom includes the
// regularization.
struct EnergyTerm {
  double e = 0.0;      // residual
  double d1 = 0.0;     // (R f2 x t)^T cov1 (R f2 x t)
  double d2 = 0.0;     // (t x f1)^T R cov2 R^T (t x f1)
  double denom = 0.0;  // d1 + d2 + regularization
};
EnergyTerm energy_term(const RelativePose& pose, const BearingPair& bp, double regularization);

}  // namespace pnec

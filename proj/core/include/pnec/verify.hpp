#pragma once

#include <string>
#include <vector>

#include "pnec/config.hpp"
#include "pnec/types.hpp"

namespace pnec {

// One line of the gradient-verification report: the worst relative error of
// a derivative against its oracle, with the tolerance it must meet.
struct GradcheckEntry {
  std::string name;
  double worst_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  bool all_passed = false;
};

// Finite-difference verification of every analytic first derivative plus the
// argmin-perturbation check of the implicit covariance gradient and its
// scaling-direction pairing identity.
GradcheckReport run_gradient_checks(const GradcheckConfig& cfg);

// One row of the focal-length sweep comparing the symmetric variance against
// a Monte-Carlo estimate of the true residual variance under 2D pixel noise.
struct VarApproxRow {
  double focal = 0.0;
  double analytic = 0.0;     // sigma_s^2 from propagated covariances
  double monte_carlo = 0.0;  // control-variate MC estimate
  double rel_error = 0.0;    // |analytic - mc| / mc, 0 when both are 0
};

std::vector<VarApproxRow> variance_approximation_sweep(const VarApproxConfig& cfg, uint64_t seed);

// Monte-Carlo variance of the epipolar residual under 2D pixel noise in both
// frames, unprojected through the full camera model. The estimator uses the
// exactly-known variance of the linearized residual as a control variate, so
// its noise stays far below the approximation errors it measures.
double mc_residual_variance(const RelativePose& pose, const Vec2& p1, const Vec2& p2,
                            const Mat2& cov1, const Mat2& cov2, const Camera& cam,
                            size_t samples, uint64_t seed);

// Epipolar-consistent clean geometry for variance experiments.
struct VarianceGeometry {
  RelativePose pose;
  Camera camera;
  Vec2 p1;
  Vec2 p2;
};
VarianceGeometry make_variance_geometry(double focal, uint64_t seed);

}  // namespace pnec

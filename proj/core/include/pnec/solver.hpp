#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "pnec/energy.hpp"
#include "pnec/types.hpp"

namespace pnec {

struct SolverConfig {
  int lm_max_iterations = 100;
  double lm_initial_damping = 1e7;
  int ransac_iterations = 5000;
  double ransac_threshold = 1e-6;  // squared epipolar residual
  double perturbation_scale = 1.0 * M_PI / 180.0;  // training-time init jitter, radians
  uint64_t seed = 0;
  double regularization = 1e-13;
  // A sample whose design-matrix singular-value ratio s8/s1 falls below this
  // is treated as low parallax / degenerate.
  double parallax_sv_ratio = 1e-9;
};

struct SolveReport {
  RelativePose pose;
  std::vector<uint8_t> inlier_mask;
  std::vector<double> stage_energies;
  std::vector<int> iterations_used;
  bool converged = false;
};

struct EightPointResult {
  std::vector<RelativePose> poses;  // the four decompositions of E
  double sv_ratio = 0.0;            // s8/s1 of the design matrix
  bool low_parallax = false;
};

// Linear essential-matrix estimate from >= 8 bearing correspondences, with
// singular values projected to (s, s, 0) and all four (R, t) decompositions
// returned. Throws NumericalError on a rank-deficient design matrix.
EightPointResult eight_point(std::span<const BearingPair> corrs, double parallax_sv_ratio = 1e-9);

// Picks the decomposition with the most points in front of both cameras
// (midpoint triangulation over the given correspondences), ties broken by
// lower total squared epipolar residual.
RelativePose select_by_cheirality(const std::vector<RelativePose>& candidates,
                                  std::span<const BearingPair> corrs);

// 8-point hypotheses scored by the squared epipolar residual; the best
// hypothesis maximizes the inlier count, ties broken by lower total inlier
// residual, then by earlier sample index. Deterministic for a fixed seed.
SolveReport ransac(std::span<const BearingPair> corrs, const SolverConfig& cfg);

// Objective for Levenberg-Marquardt over SO(3) x S^2: residual vector r and
// optional Jacobian with 3 rotation columns (left tangent) and 2 translation
// columns (tangent basis of the sphere at t).
class PoseObjective {
 public:
  virtual ~PoseObjective() = default;
  virtual int residual_count() const = 0;
  virtual void evaluate(const RelativePose& pose, Eigen::VectorXd* residuals,
                        Eigen::MatrixXd* jacobian) const = 0;
  double energy(const RelativePose& pose) const;
};

class NecLsObjective final : public PoseObjective {
 public:
  explicit NecLsObjective(std::span<const BearingPair> corrs,
                          std::span<const double> weights = {});
  int residual_count() const override { return static_cast<int>(corrs_.size()); }
  void evaluate(const RelativePose& pose, Eigen::VectorXd* residuals,
                Eigen::MatrixXd* jacobian) const override;

 private:
  std::span<const BearingPair> corrs_;
  std::vector<double> sqrt_weights_;
};

class PnecSymObjective final : public PoseObjective {
 public:
  PnecSymObjective(std::span<const BearingPair> corrs, double regularization);
  int residual_count() const override { return static_cast<int>(corrs_.size()); }
  void evaluate(const RelativePose& pose, Eigen::VectorXd* residuals,
                Eigen::MatrixXd* jacobian) const override;

 private:
  std::span<const BearingPair> corrs_;
  double regularization_;
};

struct LmResult {
  RelativePose pose;
  double final_energy = 0.0;
  int iterations = 0;
  bool converged = false;
  // Set when a non-finite energy or gradient was encountered; pose then
  // carries the last valid iterate.
  bool numerical_failure = false;
  // Energy after each accepted step, starting with the initial energy.
  std::vector<double> energy_history;
};

struct LmOptions {
  int max_iterations = 100;
  double initial_damping = 1e7;
  double damping_increase = 2.0;
  double damping_decrease = 1.0 / 3.0;
  double min_damping = 1e-12;
  double max_damping = 1e32;
  double step_tolerance = 1e-12;
  double relative_decrease_tolerance = 1e-12;
  // When true the translation is held fixed and only R is optimized.
  bool rotation_only = false;
};

LmResult lm_minimize(const PoseObjective& objective, const RelativePose& init,
                     const LmOptions& options);

// Plain Gauss-Newton steps without energy checks, for polishing an
// LM-converged iterate to a stationary point (J^T r = 0) beyond the rounding
// floor of energy comparisons. Intended as a local refinement only.
RelativePose gauss_newton_polish(const PoseObjective& objective, const RelativePose& pose,
                                 int steps = 20, bool rotation_only = false);

// RANSAC outlier rejection, NEC-LS refinement on the inliers, then symmetric
// PNEC refinement. When init is given (constant-motion or training-time
// initialization) the least-squares stages start from it instead of the
// RANSAC pose. Throws InvalidInput for fewer than 8 correspondences.
SolveReport estimate_pose_multistage(std::span<const BearingPair> corrs, const SolverConfig& cfg,
                                     std::optional<RelativePose> init = std::nullopt);

// Rotation jitter for training-time initialization: axis uniform on the
// sphere, angle uniform in [0, scale].
RelativePose perturb_pose(const RelativePose& pose, double scale, uint64_t seed);

}  // namespace pnec

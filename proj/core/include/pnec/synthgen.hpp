#pragma once

#include <cstdint>
#include <vector>

#include "pnec/types.hpp"

namespace pnec {

// Per-point anisotropic noise: trace sampled log-uniformly in
// [scale_min, scale_max] px^2, eigenvalue split beta uniform in
// [beta_min, beta_max], orientation uniform in [0, pi).
struct NoiseSpec {
  double scale_min = 0.25;
  double scale_max = 8.0;
  double beta_min = 0.05;
  double beta_max = 0.5;
};

enum class PoseMode {
  kFixed,             // one relative pose shared by every sampled problem
  kRandomSecondFrame  // first frame fixed, second pose resampled per problem
};

struct SceneConfig {
  int num_points = 100;
  double depth_min = 5.0;
  double depth_max = 20.0;
  PoseMode pose_mode = PoseMode::kFixed;
  double rotation_scale = 0.03;     // radians, per-axis magnitude of pose sampling
  double translation_norm = 1.0;    // scene units
  // 0 samples translation directions uniformly on the sphere; 1 forces pure
  // forward motion. KITTI-style sequences sit near 1.
  double forward_bias = 0.0;
  // Fraction of the image (centered) that first-frame points are drawn from.
  double point_region = 0.6;
  NoiseSpec noise;
  double outlier_fraction = 0.0;
  double focal = 720.0;
  double image_width = 1240.0;
  double image_height = 370.0;
  uint64_t seed = 0;
};

struct SyntheticPoint {
  Vec2 clean1 = Vec2::Zero();
  Vec2 clean2 = Vec2::Zero();
  Mat2 gt_cov1 = Mat2::Identity();
  Mat2 gt_cov2 = Mat2::Identity();
  Vec2 noisy1 = Vec2::Zero();
  Vec2 noisy2 = Vec2::Zero();
  bool outlier = false;
};

struct SyntheticProblem {
  Camera camera;
  RelativePose gt_pose;        // unit-norm translation
  Vec3 gt_translation_full = Vec3::Zero();  // scene units
  std::vector<SyntheticPoint> points;
  std::vector<Vec3> landmarks;  // 3D points in the first camera frame
};

// Random relative-pose problem: random 3D points visible in both frames,
// pinhole projections, per-point Gaussian noise with stored ground-truth
// covariances. Deterministic for a given cfg.seed. Throws NumericalError if
// rejection sampling fails after 1e5 attempts.
SyntheticProblem generate_problem(const SceneConfig& cfg);

// Same geometry and ground-truth covariances, fresh noise draws.
SyntheticProblem resample_noise(const SyntheticProblem& base, uint64_t seed);

// New second-frame pose (first frame and landmarks fixed) plus fresh noise.
SyntheticProblem resample_pose_and_noise(const SyntheticProblem& base, const SceneConfig& cfg,
                                         uint64_t seed);

// Batch with per-problem seeds split in counter mode from `seed`: problem i
// does not depend on n. Fixed pose mode resamples noise only; random pose
// mode resamples the second-frame pose too.
std::vector<SyntheticProblem> sample_batch(const SceneConfig& cfg, const SyntheticProblem& base,
                                           int n, uint64_t seed);

// Replaces round(fraction * n) second-frame observations with uniform draws
// over the image and sets their outlier flags.
SyntheticProblem inject_outliers(const SyntheticProblem& problem, double fraction, uint64_t seed);

// Bearing-space view of a problem. Covariance choice is up to the caller:
// ground truth, learned, or unit isotropic.
std::vector<BearingPair> to_bearing_pairs(const SyntheticProblem& problem,
                                          const std::vector<Mat2>& covs1,
                                          const std::vector<Mat2>& covs2);
std::vector<BearingPair> to_bearing_pairs_gt(const SyntheticProblem& problem);

}  // namespace pnec

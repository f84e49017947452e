#include "pnec/synthgen.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <optional>

#include "pnec/geometry.hpp"
#include "pnec/rng.hpp"

namespace pnec {

namespace {

constexpr uint64_t kGeometryStream = 1;
constexpr uint64_t kPoseStream = 2;
constexpr uint64_t kNoiseStream = 3;
constexpr uint64_t kOutlierStream = 4;
constexpr int kMaxAttempts = 100000;

Mat2 sample_cov2(CounterRng& rng, const NoiseSpec& spec) {
  const double trace =
      std::exp(rng.uniform(std::log(spec.scale_min), std::log(spec.scale_max)));
  const double beta = rng.uniform(spec.beta_min, spec.beta_max);
  const double alpha = rng.uniform(0.0, M_PI);
  const double c = std::cos(alpha), s = std::sin(alpha);
  Mat2 rot;
  rot << c, -s, s, c;
  return trace * rot * Eigen::Vector2d(beta, 1.0 - beta).asDiagonal() * rot.transpose();
}

Vec2 sample_gaussian2(CounterRng& rng, const Mat2& cov) {
  const Eigen::LLT<Mat2> llt(cov);
  const Vec2 z(rng.next_gaussian(), rng.next_gaussian());
  return llt.matrixL() * z;
}

RelativePose sample_pose(CounterRng& rng, const SceneConfig& cfg, Vec3* t_full) {
  Vec3 axis(rng.next_gaussian(), rng.next_gaussian(), rng.next_gaussian());
  RelativePose pose;
  pose.R = so3_exp(cfg.rotation_scale * axis);
  Vec3 dir(rng.next_gaussian(), rng.next_gaussian(), rng.next_gaussian());
  dir.normalize();
  dir = ((1.0 - cfg.forward_bias) * dir + cfg.forward_bias * Vec3::UnitZ()).normalized();
  *t_full = cfg.translation_norm * dir;
  pose.t = dir;
  return pose;
}

bool in_image(const Vec2& p, const SceneConfig& cfg) {
  return p.x() >= 0.0 && p.x() < cfg.image_width && p.y() >= 0.0 && p.y() < cfg.image_height;
}

Camera make_camera(const SceneConfig& cfg) {
  return Camera{cfg.focal, cfg.focal, cfg.image_width / 2.0, cfg.image_height / 2.0};
}

// Second-frame projection of a first-frame landmark; empty when behind the
// camera or outside the image.
std::optional<Vec2> project_second(const Vec3& X, const RelativePose& pose, const Vec3& t_full,
                                   const Camera& cam, const SceneConfig& cfg) {
  const Vec3 X2 = pose.R.transpose() * (X - t_full);
  if (X2.z() <= 0.1) return std::nullopt;
  const Vec2 p2 = project(X2, cam);
  if (!in_image(p2, cfg)) return std::nullopt;
  return p2;
}

void apply_noise(SyntheticProblem& problem, uint64_t seed) {
  CounterRng noise_rng = CounterRng(seed).split(kNoiseStream);
  for (size_t i = 0; i < problem.points.size(); ++i) {
    CounterRng point_rng = noise_rng.split(i);
    SyntheticPoint& pt = problem.points[i];
    pt.noisy1 = pt.clean1 + sample_gaussian2(point_rng, pt.gt_cov1);
    pt.noisy2 = pt.clean2 + sample_gaussian2(point_rng, pt.gt_cov2);
    pt.outlier = false;
  }
}

}  // namespace

SyntheticProblem generate_problem(const SceneConfig& cfg) {
  if (cfg.num_points < 1) throw InvalidInput("scene needs at least one point");
  SyntheticProblem problem;
  problem.camera = make_camera(cfg);

  CounterRng pose_rng = CounterRng(cfg.seed).split(kPoseStream);
  problem.gt_pose = sample_pose(pose_rng, cfg, &problem.gt_translation_full);

  CounterRng geom_rng = CounterRng(cfg.seed).split(kGeometryStream);
  problem.points.resize(cfg.num_points);
  problem.landmarks.resize(cfg.num_points);
  int attempts = 0;
  for (int i = 0; i < cfg.num_points; ++i) {
    while (true) {
      if (++attempts > kMaxAttempts)
        throw NumericalError("rejection sampling failed: no mutually visible points");
      // Inner region of the first image so random second poses keep points
      // visible (cfg.point_region of each dimension, centered).
      const double lo = 0.5 - 0.5 * cfg.point_region;
      const double hi = 0.5 + 0.5 * cfg.point_region;
      const Vec2 p1(geom_rng.uniform(lo * cfg.image_width, hi * cfg.image_width),
                    geom_rng.uniform(lo * cfg.image_height, hi * cfg.image_height));
      const double depth = geom_rng.uniform(cfg.depth_min, cfg.depth_max);
      const Vec3 dir = unproject(p1, problem.camera);
      const Vec3 X = dir / dir.z() * depth;
      const auto p2 = project_second(X, problem.gt_pose, problem.gt_translation_full,
                                     problem.camera, cfg);
      if (!p2) continue;
      problem.landmarks[i] = X;
      problem.points[i].clean1 = p1;
      problem.points[i].clean2 = *p2;
      break;
    }
    CounterRng cov_rng = geom_rng.split(1000 + static_cast<uint64_t>(i));
    problem.points[i].gt_cov1 = sample_cov2(cov_rng, cfg.noise);
    problem.points[i].gt_cov2 = sample_cov2(cov_rng, cfg.noise);
  }

  apply_noise(problem, cfg.seed);
  if (cfg.outlier_fraction > 0.0) {
    problem = inject_outliers(problem, cfg.outlier_fraction, cfg.seed);
  }
  return problem;
}

SyntheticProblem resample_noise(const SyntheticProblem& base, uint64_t seed) {
  SyntheticProblem out = base;
  apply_noise(out, seed);
  return out;
}

SyntheticProblem resample_pose_and_noise(const SyntheticProblem& base, const SceneConfig& cfg,
                                         uint64_t seed) {
  SyntheticProblem out = base;
  CounterRng pose_rng = CounterRng(seed).split(kPoseStream);
  for (int attempt = 0;; ++attempt) {
    if (attempt >= kMaxAttempts)
      throw NumericalError("rejection sampling failed: no pose keeps all points visible");
    Vec3 t_full;
    const RelativePose pose = sample_pose(pose_rng, cfg, &t_full);
    bool all_visible = true;
    std::vector<Vec2> projections(out.landmarks.size());
    for (size_t i = 0; i < out.landmarks.size() && all_visible; ++i) {
      const auto p2 = project_second(out.landmarks[i], pose, t_full, out.camera, cfg);
      if (!p2) {
        all_visible = false;
      } else {
        projections[i] = *p2;
      }
    }
    if (!all_visible) continue;
    out.gt_pose = pose;
    out.gt_translation_full = t_full;
    for (size_t i = 0; i < out.points.size(); ++i) out.points[i].clean2 = projections[i];
    break;
  }
  apply_noise(out, seed);
  return out;
}

std::vector<SyntheticProblem> sample_batch(const SceneConfig& cfg, const SyntheticProblem& base,
                                           int n, uint64_t seed) {
  std::vector<SyntheticProblem> batch;
  batch.reserve(static_cast<size_t>(std::max(n, 0)));
  for (int i = 0; i < n; ++i) {
    const uint64_t problem_seed = CounterRng(seed).split(static_cast<uint64_t>(i)).next_u64();
    if (cfg.pose_mode == PoseMode::kFixed) {
      batch.push_back(resample_noise(base, problem_seed));
    } else {
      batch.push_back(resample_pose_and_noise(base, cfg, problem_seed));
    }
  }
  return batch;
}

SyntheticProblem inject_outliers(const SyntheticProblem& problem, double fraction, uint64_t seed) {
  if (fraction < 0.0 || fraction >= 1.0) throw InvalidInput("outlier fraction must be in [0, 1)");
  SyntheticProblem out = problem;
  const size_t n = out.points.size();
  const auto count = static_cast<size_t>(std::lround(fraction * static_cast<double>(n)));
  if (count == 0) return out;

  CounterRng rng = CounterRng(seed).split(kOutlierStream);
  // Partial Fisher-Yates: the first `count` slots pick the outliers.
  std::vector<size_t> indices(n);
  for (size_t i = 0; i < n; ++i) indices[i] = i;
  for (size_t i = 0; i < count; ++i) {
    const size_t j = i + static_cast<size_t>(rng.uniform_index(n - i));
    std::swap(indices[i], indices[j]);
  }
  const double w = 2.0 * out.camera.cx;
  const double h = 2.0 * out.camera.cy;
  for (size_t i = 0; i < count; ++i) {
    SyntheticPoint& pt = out.points[indices[i]];
    pt.noisy2 = Vec2(rng.uniform(0.0, w), rng.uniform(0.0, h));
    pt.outlier = true;
  }
  return out;
}

std::vector<BearingPair> to_bearing_pairs(const SyntheticProblem& problem,
                                          const std::vector<Mat2>& covs1,
                                          const std::vector<Mat2>& covs2) {
  if (covs1.size() != problem.points.size() || covs2.size() != problem.points.size())
    throw InvalidInput("covariance count must match point count");
  std::vector<BearingPair> out(problem.points.size());
  for (size_t i = 0; i < problem.points.size(); ++i) {
    const SyntheticPoint& pt = problem.points[i];
    out[i].f1 = unproject(pt.noisy1, problem.camera);
    out[i].f2 = unproject(pt.noisy2, problem.camera);
    out[i].cov1 = propagate_cov(pt.noisy1, covs1[i], problem.camera);
    out[i].cov2 = propagate_cov(pt.noisy2, covs2[i], problem.camera);
  }
  return out;
}

std::vector<BearingPair> to_bearing_pairs_gt(const SyntheticProblem& problem) {
  std::vector<Mat2> covs1(problem.points.size());
  std::vector<Mat2> covs2(problem.points.size());
  for (size_t i = 0; i < problem.points.size(); ++i) {
    covs1[i] = problem.points[i].gt_cov1;
    covs2[i] = problem.points[i].gt_cov2;
  }
  return to_bearing_pairs(problem, covs1, covs2);
}

}  // namespace pnec

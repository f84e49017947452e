#include "pnec/solver.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "pnec/geometry.hpp"
#include "pnec/rng.hpp"

namespace pnec {

namespace {

// Midpoint triangulation depths of a correspondence under (R, t): the point
// is in front of both cameras when both depths are positive.
std::pair<double, double> midpoint_depths(const RelativePose& pose, const BearingPair& bp) {
  const Vec3 d1 = bp.f1;
  const Vec3 d2 = pose.R * bp.f2;
  const double a = d1.dot(d1);
  const double b = d1.dot(d2);
  const double c = d2.dot(d2);
  const double det = a * c - b * b;
  if (std::abs(det) < 1e-15) return {0.0, 0.0};
  const Vec3 rhs = pose.t;
  const double e1 = d1.dot(rhs);
  const double e2 = d2.dot(rhs);
  // minimize ||s*d1 - (t + u*d2)||^2
  const double s = (c * e1 - b * e2) / det;
  const double u = (b * e1 - a * e2) / det;
  return {s, u};
}

}  // namespace

EightPointResult eight_point(std::span<const BearingPair> corrs, double parallax_sv_ratio) {
  if (corrs.size() < 8) throw InvalidInput("eight_point needs at least 8 correspondences");

  Eigen::MatrixXd design(corrs.size(), 9);
  for (size_t i = 0; i < corrs.size(); ++i) {
    const Vec3& f1 = corrs[i].f1;
    const Vec3& f2 = corrs[i].f2;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) design(static_cast<int>(i), 3 * r + c) = f1[r] * f2[c];
  }

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(design, Eigen::ComputeFullV);
  const Eigen::VectorXd sv = svd.singularValues();
  EightPointResult result;
  result.sv_ratio = sv[0] > 0.0 ? sv[7] / sv[0] : 0.0;
  result.low_parallax = result.sv_ratio < parallax_sv_ratio;
  if (sv[0] <= 0.0) throw NumericalError("degenerate configuration: zero design matrix");

  Eigen::Matrix<double, 9, 1> e_vec = svd.matrixV().col(8);
  Mat3 E;
  E << e_vec[0], e_vec[1], e_vec[2], e_vec[3], e_vec[4], e_vec[5], e_vec[6], e_vec[7], e_vec[8];

  // Project to the essential manifold: singular values (s, s, 0).
  Eigen::JacobiSVD<Mat3> esvd(E, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 U = esvd.matrixU();
  Mat3 V = esvd.matrixV();
  if (U.determinant() < 0.0) U.col(2) *= -1.0;
  if (V.determinant() < 0.0) V.col(2) *= -1.0;

  Mat3 W;
  W << 0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0;
  const Mat3 Ra = U * W * V.transpose();
  const Mat3 Rb = U * W.transpose() * V.transpose();
  const Vec3 t = U.col(2);

  result.poses = {{Ra, t}, {Ra, -t}, {Rb, t}, {Rb, -t}};
  return result;
}

RelativePose select_by_cheirality(const std::vector<RelativePose>& candidates,
                                  std::span<const BearingPair> corrs) {
  if (candidates.empty()) throw InvalidInput("no candidate poses");
  int best_votes = -1;
  double best_residual = std::numeric_limits<double>::infinity();
  RelativePose best = candidates.front();
  for (const RelativePose& cand : candidates) {
    int votes = 0;
    double residual = 0.0;
    for (const BearingPair& bp : corrs) {
      const auto [s, u] = midpoint_depths(cand, bp);
      if (s > 0.0 && u > 0.0) ++votes;
      const double e = nec_residual(cand, bp);
      residual += e * e;
    }
    if (votes > best_votes || (votes == best_votes && residual < best_residual)) {
      best_votes = votes;
      best_residual = residual;
      best = cand;
    }
  }
  return best;
}

SolveReport ransac(std::span<const BearingPair> corrs, const SolverConfig& cfg) {
  const size_t n = corrs.size();
  if (n < 8) throw InvalidInput("ransac needs at least 8 correspondences");

  // Samples are drawn up front so hypothesis evaluation order is fixed.
  CounterRng sample_rng = CounterRng(cfg.seed).split(0x5a5a);
  std::vector<std::array<size_t, 8>> samples(static_cast<size_t>(cfg.ransac_iterations));
  for (auto& sample : samples) {
    size_t filled = 0;
    while (filled < 8) {
      const size_t idx = static_cast<size_t>(sample_rng.uniform_index(n));
      bool duplicate = false;
      for (size_t j = 0; j < filled; ++j) duplicate |= sample[j] == idx;
      if (!duplicate) sample[filled++] = idx;
    }
  }

  int best_count = -1;
  double best_residual = std::numeric_limits<double>::infinity();
  RelativePose best_pose;
  bool found = false;

  const auto score = [&](const RelativePose& pose, int* count, double* residual) {
    *count = 0;
    *residual = 0.0;
    for (const BearingPair& bp : corrs) {
      const double e = nec_residual(pose, bp);
      if (e * e <= cfg.ransac_threshold) {
        ++*count;
        *residual += e * e;
      }
    }
  };

  // A minimal-sample pose is rarely accurate enough for the tight residual
  // threshold; each new best hypothesis is refit on its own consensus set
  // and re-scored, repeating while the inlier count grows (LO-RANSAC).
  const auto locally_optimize = [&](RelativePose pose) {
    int count = -1;
    for (int round = 0; round < 10; ++round) {
      std::vector<BearingPair> consensus;
      for (const BearingPair& bp : corrs) {
        const double e = nec_residual(pose, bp);
        if (e * e <= cfg.ransac_threshold) consensus.push_back(bp);
      }
      if (consensus.size() < 8) break;
      LmOptions lo;
      lo.max_iterations = 15;
      lo.initial_damping = 1e-8;
      const NecLsObjective objective(consensus);
      const LmResult refined = lm_minimize(objective, pose, lo);
      if (refined.numerical_failure) break;
      int refined_count = 0;
      double refined_residual = 0.0;
      score(refined.pose, &refined_count, &refined_residual);
      if (refined_count <= count) break;
      pose = refined.pose;
      count = refined_count;
    }
    return pose;
  };

  std::vector<BearingPair> minimal(8);
  for (size_t si = 0; si < samples.size(); ++si) {
    for (size_t j = 0; j < 8; ++j) minimal[j] = corrs[samples[si][j]];
    EightPointResult hyp;
    try {
      hyp = eight_point(minimal, cfg.parallax_sv_ratio);
    } catch (const NumericalError&) {
      continue;
    }
    RelativePose cand = select_by_cheirality(hyp.poses, minimal);

    int count = 0;
    double residual = 0.0;
    score(cand, &count, &residual);
    if (count >= 8) {
      const RelativePose refined = locally_optimize(cand);
      int refined_count = 0;
      double refined_residual = 0.0;
      score(refined, &refined_count, &refined_residual);
      if (refined_count > count ||
          (refined_count == count && refined_residual < residual)) {
        cand = refined;
        count = refined_count;
        residual = refined_residual;
      }
    }
    if (count > best_count || (count == best_count && residual < best_residual)) {
      best_count = count;
      best_residual = residual;
      best_pose = cand;
      found = true;
    }
  }
  if (!found || best_count < 8) {
    throw NumericalError("ransac failed to find a hypothesis with 8 inliers");
  }

  SolveReport report;
  report.pose = best_pose;
  report.inlier_mask.resize(n);
  double energy = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double e = nec_residual(best_pose, corrs[i]);
    report.inlier_mask[i] = e * e <= cfg.ransac_threshold ? 1 : 0;
    if (report.inlier_mask[i]) energy += e * e;
  }
  report.stage_energies = {energy};
  report.iterations_used = {cfg.ransac_iterations};
  report.converged = true;
  return report;
}

double PoseObjective::energy(const RelativePose& pose) const {
  Eigen::VectorXd r;
  evaluate(pose, &r, nullptr);
  return r.squaredNorm();
}

NecLsObjective::NecLsObjective(std::span<const BearingPair> corrs, std::span<const double> weights)
    : corrs_(corrs) {
  if (!weights.empty()) {
    if (weights.size() != corrs.size()) throw InvalidInput("weight count mismatch");
    sqrt_weights_.resize(weights.size());
    for (size_t i = 0; i < weights.size(); ++i) {
      if (weights[i] < 0.0) throw InvalidInput("weights must be non-negative");
      sqrt_weights_[i] = std::sqrt(weights[i]);
    }
  }
}

void NecLsObjective::evaluate(const RelativePose& pose, Eigen::VectorXd* residuals,
                              Eigen::MatrixXd* jacobian) const {
  const size_t n = corrs_.size();
  residuals->resize(static_cast<int>(n));
  if (jacobian) jacobian->resize(static_cast<int>(n), 5);
  const Mat32 basis = sphere_tangent_basis(pose.t);
  for (size_t i = 0; i < n; ++i) {
    const BearingPair& bp = corrs_[i];
    const Vec3 g = pose.R * bp.f2;
    const Vec3 cross = bp.f1.cross(g);
    const double w = sqrt_weights_.empty() ? 1.0 : sqrt_weights_[i];
    (*residuals)[static_cast<int>(i)] = w * pose.t.dot(cross);
    if (jacobian) {
      const Vec3 de_dx = g.cross(pose.t.cross(bp.f1));
      jacobian->block<1, 3>(static_cast<int>(i), 0) = w * de_dx.transpose();
      jacobian->block<1, 2>(static_cast<int>(i), 3) = w * (cross.transpose() * basis);
    }
  }
}

PnecSymObjective::PnecSymObjective(std::span<const BearingPair> corrs, double regularization)
    : corrs_(corrs), regularization_(regularization) {}

void PnecSymObjective::evaluate(const RelativePose& pose, Eigen::VectorXd* residuals,
                                Eigen::MatrixXd* jacobian) const {
  const size_t n = corrs_.size();
  residuals->resize(static_cast<int>(n));
  if (jacobian) jacobian->resize(static_cast<int>(n), 5);
  const Mat32 basis = sphere_tangent_basis(pose.t);
  for (size_t i = 0; i < n; ++i) {
    const BearingPair& bp = corrs_[i];
    const Vec3 g = pose.R * bp.f2;
    const Vec3 a = pose.t.cross(bp.f1);  // skew(f1)^T t
    const Vec3 h = g.cross(pose.t);      // skew(R f2)^T t
    const Mat3 cov2_rot = pose.R * bp.cov2 * pose.R.transpose();
    const Vec3 cov1_h = bp.cov1 * h;
    const Vec3 cov2_a = cov2_rot * a;
    const double e = pose.t.dot(bp.f1.cross(g));
    const double d = h.dot(cov1_h) + a.dot(cov2_a) + regularization_;
    if (d <= 0.0) throw NumericalError("zero residual variance in PNEC objective");
    const double sigma = std::sqrt(d);
    (*residuals)[static_cast<int>(i)] = e / sigma;
    if (!jacobian) continue;

    const double inv_sigma = 1.0 / sigma;
    const double half_e_d32 = 0.5 * e / (d * sigma);

    const Vec3 de_dx = g.cross(a);
    const Vec3 dd_dx = 2.0 * g.cross(pose.t.cross(cov1_h)) + 2.0 * cov2_a.cross(a);
    const Vec3 jac_x = inv_sigma * de_dx - half_e_d32 * dd_dx;

    const Vec3 de_dt = bp.f1.cross(g);
    // h = g x t, a = t x f1: dh/dt = skew(g), da/dt = -skew(f1).
    const Vec3 dd_dt = 2.0 * (skew(g).transpose() * cov1_h) - 2.0 * (skew(bp.f1).transpose() * cov2_a);
    const Vec3 jac_t = inv_sigma * de_dt - half_e_d32 * dd_dt;

    jacobian->block<1, 3>(static_cast<int>(i), 0) = jac_x.transpose();
    jacobian->block<1, 2>(static_cast<int>(i), 3) = (jac_t.transpose() * basis);
  }
}

LmResult lm_minimize(const PoseObjective& objective, const RelativePose& init,
                     const LmOptions& options) {
  LmResult result;
  result.pose = init;

  Eigen::VectorXd residuals;
  Eigen::MatrixXd jacobian;
  objective.evaluate(init, &residuals, nullptr);
  double energy = residuals.squaredNorm();
  result.energy_history.push_back(energy);
  if (!std::isfinite(energy)) {
    result.numerical_failure = true;
    result.final_energy = energy;
    return result;
  }

  const int dim = options.rotation_only ? 3 : 5;
  double damping = options.initial_damping;

  for (int iter = 0; iter < options.max_iterations; ++iter) {
    result.iterations = iter + 1;
    objective.evaluate(result.pose, &residuals, &jacobian);
    if (!residuals.allFinite() || !jacobian.allFinite()) {
      result.numerical_failure = true;
      result.final_energy = energy;
      return result;
    }
    const Eigen::MatrixXd jac = jacobian.leftCols(dim);
    const Eigen::MatrixXd jtj = jac.transpose() * jac;
    const Eigen::VectorXd jtr = jac.transpose() * residuals;
    const Mat32 basis = sphere_tangent_basis(result.pose.t);

    bool accepted = false;
    while (!accepted) {
      Eigen::MatrixXd lhs = jtj;
      lhs.diagonal().array() += damping;
      const Eigen::VectorXd step = lhs.ldlt().solve(-jtr);
      if (!step.allFinite()) {
        result.numerical_failure = true;
        result.final_energy = energy;
        return result;
      }

      RelativePose candidate = result.pose;
      candidate.R = so3_exp(step.head<3>()) * result.pose.R;
      if (!options.rotation_only) {
        candidate.t = (result.pose.t + basis * step.tail<2>()).normalized();
      }
      objective.evaluate(candidate, &residuals, nullptr);
      const double candidate_energy = residuals.squaredNorm();
      if (!std::isfinite(candidate_energy)) {
        result.numerical_failure = true;
        result.final_energy = energy;
        return result;
      }

      if (candidate_energy < energy) {
        const double decrease = energy - candidate_energy;
        result.pose = candidate;
        energy = candidate_energy;
        result.energy_history.push_back(energy);
        damping = std::max(damping * options.damping_decrease, options.min_damping);
        accepted = true;
        if (step.norm() < options.step_tolerance ||
            decrease < options.relative_decrease_tolerance * std::max(energy, 1e-300)) {
          result.converged = true;
        }
      } else {
        damping *= options.damping_increase;
        if (damping > options.max_damping) {
          // No further progress possible; the current iterate is the answer.
          result.converged = true;
          break;
        }
      }
    }
    if (result.converged) break;
  }
  result.final_energy = energy;
  return result;
}

RelativePose gauss_newton_polish(const PoseObjective& objective, const RelativePose& pose,
                                 int steps, bool rotation_only) {
  RelativePose current = pose;
  const int dim = rotation_only ? 3 : 5;
  Eigen::VectorXd residuals;
  Eigen::MatrixXd jacobian;
  for (int step = 0; step < steps; ++step) {
    objective.evaluate(current, &residuals, &jacobian);
    const Eigen::MatrixXd jac = jacobian.leftCols(dim);
    const Eigen::VectorXd delta =
        (jac.transpose() * jac).ldlt().solve(-jac.transpose() * residuals);
    if (!delta.allFinite() || delta.norm() > 1e-2) break;
    const Mat32 basis = sphere_tangent_basis(current.t);
    current.R = so3_exp(delta.head<3>()) * current.R;
    if (!rotation_only) current.t = (current.t + basis * delta.tail<2>()).normalized();
    if (delta.norm() < 1e-15) break;
  }
  return current;
}

SolveReport estimate_pose_multistage(std::span<const BearingPair> corrs, const SolverConfig& cfg,
                                     std::optional<RelativePose> init) {
  if (corrs.size() < 8) throw InvalidInput("estimate_pose_multistage needs >= 8 correspondences");

  SolveReport report = ransac(corrs, cfg);

  std::vector<BearingPair> inliers;
  inliers.reserve(corrs.size());
  for (size_t i = 0; i < corrs.size(); ++i) {
    if (report.inlier_mask[i]) inliers.push_back(corrs[i]);
  }

  LmOptions lm;
  lm.max_iterations = cfg.lm_max_iterations;
  lm.initial_damping = cfg.lm_initial_damping;

  const RelativePose ls_init = init.value_or(report.pose);
  const NecLsObjective nec_obj(inliers);
  const LmResult nec_result = lm_minimize(nec_obj, ls_init, lm);
  if (nec_result.numerical_failure)
    throw NumericalError("NEC-LS stage failed with non-finite values");
  report.stage_energies.push_back(nec_result.final_energy);
  report.iterations_used.push_back(nec_result.iterations);

  const PnecSymObjective pnec_obj(inliers, cfg.regularization);
  const LmResult pnec_result = lm_minimize(pnec_obj, nec_result.pose, lm);
  if (pnec_result.numerical_failure)
    throw NumericalError("PNEC stage failed with non-finite values");
  report.stage_energies.push_back(pnec_result.final_energy);
  report.iterations_used.push_back(pnec_result.iterations);

  report.pose = pnec_result.pose;
  report.converged = nec_result.converged && pnec_result.converged;
  return report;
}

RelativePose perturb_pose(const RelativePose& pose, double scale, uint64_t seed) {
  CounterRng rng(seed);
  Vec3 axis(rng.next_gaussian(), rng.next_gaussian(), rng.next_gaussian());
  const double norm = axis.norm();
  axis = norm > 0.0 ? Vec3(axis / norm) : Vec3::UnitZ();
  const double angle = rng.uniform(0.0, scale);
  RelativePose out = pose;
  out.R = so3_exp(angle * axis) * pose.R;
  return out;
}

}  // namespace pnec

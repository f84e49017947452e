#include "pnec/learning.hpp"

#include <Eigen/Dense>
#include <cmath>

#include "pnec/geometry.hpp"
#include "pnec/metrics.hpp"
#include "pnec/parallel.hpp"
#include "pnec/rng.hpp"

namespace pnec {

bool adam_step(AdamState& state, Eigen::VectorXd& params, const Eigen::VectorXd& grads,
               const AdamConfig& cfg, std::string* diagnostic) {
  if (params.size() != grads.size()) throw InvalidInput("adam_step: shape mismatch");
  if (state.m.size() != params.size()) {
    state.m = Eigen::VectorXd::Zero(params.size());
    state.v = Eigen::VectorXd::Zero(params.size());
  }
  if (!grads.allFinite()) {
    if (diagnostic) *diagnostic = "non-finite gradient; step rejected";
    return false;
  }
  state.step += 1;
  state.m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * grads;
  state.v = cfg.beta2 * state.v.array().matrix() +
            (1.0 - cfg.beta2) * grads.array().square().matrix();
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  params.array() -= cfg.learning_rate * (state.m.array() / bc1) /
                    ((state.v.array() / bc2).sqrt() + cfg.epsilon);
  return true;
}

double supervised_loss(const Mat3& R_est, const Mat3& R_gt) { return e_rot(R_est, R_gt); }

double self_supervised_loss(const std::array<Mat3, 3>& estimates,
                            const std::array<Mat3, 3>& nec_anchors,
                            const TripletLossConfig& cfg) {
  if (cfg.lambda_anchor < 0.0) throw InvalidInput("lambda_anchor must be non-negative");
  // Cycle P = {(1,2),(2,3),(3,1)} composed in order.
  const Mat3 cycle = estimates[2] * estimates[1] * estimates[0];
  const double cycle_loss = so3_log(cycle).norm();
  double anchor_loss = 0.0;
  for (int k = 0; k < 3; ++k) {
    anchor_loss += so3_log(estimates[k] * nec_anchors[k].transpose()).norm();
  }
  return cycle_loss + cfg.lambda_anchor * anchor_loss;
}

double sigma_norm_error_at_gt(const SyntheticProblem& problem, const std::vector<Mat2>& learned1,
                              const std::vector<Mat2>& learned2, double regularization) {
  const size_t n = problem.points.size();
  std::vector<double> learned(n), truth(n);
  for (size_t i = 0; i < n; ++i) {
    const SyntheticPoint& pt = problem.points[i];
    BearingPair bp;
    bp.f1 = unproject(pt.clean1, problem.camera);
    bp.f2 = unproject(pt.clean2, problem.camera);
    bp.cov1 = propagate_cov(pt.clean1, learned1[i], problem.camera);
    bp.cov2 = propagate_cov(pt.clean2, learned2[i], problem.camera);
    learned[i] = variance_sym(problem.gt_pose, bp) + regularization;
    bp.cov1 = propagate_cov(pt.clean1, pt.gt_cov1, problem.camera);
    bp.cov2 = propagate_cov(pt.clean2, pt.gt_cov2, problem.camera);
    truth[i] = variance_sym(problem.gt_pose, bp) + regularization;
  }
  return sigma_norm_error(learned, truth);
}

std::vector<double> set_normalized_point_cov_errors(const std::vector<Mat2>& learned,
                                                    const std::vector<Mat2>& truth) {
  if (learned.empty() || learned.size() != truth.size())
    throw InvalidInput("covariance sets must be non-empty and equally sized");
  double trace_l = 0.0, trace_t = 0.0;
  for (size_t i = 0; i < learned.size(); ++i) {
    trace_l += learned[i].trace();
    trace_t += truth[i].trace();
  }
  trace_l /= static_cast<double>(learned.size());
  trace_t /= static_cast<double>(learned.size());
  if (trace_l <= 0.0 || trace_t <= 0.0) throw InvalidInput("covariance sets must have positive trace");
  std::vector<double> out(learned.size());
  for (size_t i = 0; i < learned.size(); ++i) {
    out[i] = (learned[i] / trace_l - truth[i] / trace_t).norm();
  }
  return out;
}

double set_normalized_cov_error(const std::vector<Mat2>& learned, const std::vector<Mat2>& truth) {
  const std::vector<double> errs = set_normalized_point_cov_errors(learned, truth);
  double sum = 0.0;
  for (double e : errs) sum += e;
  return sum / static_cast<double>(errs.size());
}

namespace {

struct ProblemResult {
  double e_rot = 0.0;
  double sigma_norm_err = 0.0;
  Eigen::VectorXd grad;
  bool skipped = false;
};

// Shared driver for both synthetic experiments. learn_frame1 selects whether
// frame-1 covariances are parameters (experiment 1) or fixed ground truth
// (experiment 2, where the generator's frame-1 noise is handed to the
// optimizer).
LearningCurve train_impl(const TrainConfig& cfg, bool learn_frame1) {
  SceneConfig scene = cfg.scene;
  scene.pose_mode = learn_frame1 ? PoseMode::kFixed : PoseMode::kRandomSecondFrame;
  if (!learn_frame1) {
    // Small, isotropic, homogeneous first-frame noise, known to the solver.
    scene.seed = cfg.scene.seed;
  }
  SyntheticProblem base = generate_problem(scene);
  const size_t n_pts = base.points.size();
  if (!learn_frame1) {
    for (auto& pt : base.points) pt.gt_cov1 = cfg.frame1_iso_variance * Mat2::Identity();
  }

  const int threads = cfg.threads > 0 ? cfg.threads : default_thread_count();
  const int n_problems = cfg.num_problems;
  const int batch_size = std::min(cfg.batch_size, n_problems);

  // Problems are regenerated from per-problem seeds each epoch instead of
  // being stored; counter-mode splitting keeps problem i independent of the
  // batch size.
  CounterRng seed_root(cfg.seed);
  std::vector<uint64_t> problem_seeds(static_cast<size_t>(n_problems));
  std::vector<uint64_t> perturb_seeds(static_cast<size_t>(n_problems));
  for (int i = 0; i < n_problems; ++i) {
    problem_seeds[i] = seed_root.split(static_cast<uint64_t>(i)).next_u64();
    perturb_seeds[i] = seed_root.split(static_cast<uint64_t>(i)).split(99).next_u64();
  }
  const auto make_problem = [&](size_t i) {
    return learn_frame1 ? resample_noise(base, problem_seeds[i])
                        : resample_pose_and_noise(base, scene, problem_seeds[i]);
  };

  // Parameter vector: frame-1 raw triples (experiment 1 only) then frame-2.
  const size_t params_per_frame = 3 * n_pts;
  const size_t dim = learn_frame1 ? 2 * params_per_frame : params_per_frame;
  Eigen::VectorXd params = Eigen::VectorXd::Zero(static_cast<int>(dim));
  if (cfg.init == CovInit::kScaledIdentity) {
    const double init_s_raw = CovarianceParams::s_raw_for(2.0 * cfg.init_axis_variance);
    for (size_t i = 0; i < dim; i += 3) params[static_cast<int>(i)] = init_s_raw;
  } else {
    const auto raw_of = [](const Mat2& cov) {
      Eigen::SelfAdjointEigenSolver<Mat2> eig(cov);
      const double trace = eig.eigenvalues().sum();
      const double beta = eig.eigenvalues()[1] / trace;
      const Vec2 axis = eig.eigenvectors().col(1);
      return Vec3(CovarianceParams::s_raw_for(trace), std::atan2(axis.y(), axis.x()),
                  std::log(beta / (1.0 - beta)));
    };
    for (size_t i = 0; i < n_pts; ++i) {
      if (learn_frame1) {
        params.segment<3>(static_cast<int>(3 * i)) = raw_of(base.points[i].gt_cov1);
        params.segment<3>(static_cast<int>(params_per_frame + 3 * i)) =
            raw_of(base.points[i].gt_cov2);
      } else {
        params.segment<3>(static_cast<int>(3 * i)) = raw_of(base.points[i].gt_cov2);
      }
    }
  }

  const auto params_at = [&](size_t offset, size_t i) {
    return CovarianceParams{params[static_cast<int>(offset + 3 * i)],
                            params[static_cast<int>(offset + 3 * i + 1)],
                            params[static_cast<int>(offset + 3 * i + 2)]};
  };
  const auto current_covs = [&](std::vector<Mat2>* covs1, std::vector<Mat2>* covs2) {
    covs1->resize(n_pts);
    covs2->resize(n_pts);
    const size_t frame2_offset = learn_frame1 ? params_per_frame : 0;
    for (size_t i = 0; i < n_pts; ++i) {
      (*covs1)[i] = learn_frame1 ? params_at(0, i).cov() : base.points[i].gt_cov1;
      (*covs2)[i] = params_at(frame2_offset, i).cov();
    }
  };

  LmOptions lm;
  lm.max_iterations = cfg.solver.lm_max_iterations;
  lm.initial_damping = cfg.solver.lm_initial_damping;
  ImplicitGradientConfig ig_cfg;
  ig_cfg.regularization = cfg.solver.regularization;

  LearningCurve curve;
  {
    std::vector<Mat2> covs1, covs2;
    current_covs(&covs1, &covs2);
    std::vector<Mat2> truth2(n_pts);
    for (size_t i = 0; i < n_pts; ++i) truth2[i] = base.points[i].gt_cov2;
    curve.initial_point_cov_err = set_normalized_point_cov_errors(covs2, truth2);
  }

  const auto solve_one = [&](const SyntheticProblem& prob, const std::vector<BearingPair>& bps,
                             size_t i) {
    const RelativePose init =
        perturb_pose(prob.gt_pose, cfg.solver.perturbation_scale, perturb_seeds[i]);
    const PnecSymObjective objective(bps, cfg.solver.regularization);
    return lm_minimize(objective, init, lm);
  };

  // Baselines on the same problems with the same initializations.
  {
    std::vector<double> unit_err(static_cast<size_t>(n_problems));
    std::vector<double> necls_err(static_cast<size_t>(n_problems));
    const std::vector<Mat2> unit_covs(n_pts, Mat2::Identity());
    std::vector<Mat2> covs1_gt(n_pts);
    for (size_t i = 0; i < n_pts; ++i) covs1_gt[i] = base.points[i].gt_cov1;
    parallel_for(static_cast<size_t>(n_problems), threads, [&](size_t i) {
      const SyntheticProblem prob = make_problem(i);
      const auto bps_unit =
          to_bearing_pairs(prob, learn_frame1 ? unit_covs : covs1_gt, unit_covs);
      const LmResult unit_result = solve_one(prob, bps_unit, i);
      unit_err[i] = e_rot(unit_result.pose.R, prob.gt_pose.R);

      const RelativePose init =
          perturb_pose(prob.gt_pose, cfg.solver.perturbation_scale, perturb_seeds[i]);
      const NecLsObjective nec(bps_unit);
      const LmResult nec_result = lm_minimize(nec, init, lm);
      necls_err[i] = e_rot(nec_result.pose.R, prob.gt_pose.R);
    });
    for (int i = 0; i < n_problems; ++i) {
      curve.baseline_unit_erot += unit_err[i];
      curve.baseline_necls_erot += necls_err[i];
    }
    curve.baseline_unit_erot /= n_problems;
    curve.baseline_necls_erot /= n_problems;
  }

  AdamState adam;
  double initial_mean_erot = -1.0;
  std::vector<ProblemResult> results(static_cast<size_t>(n_problems));

  AdamConfig adam_cfg = cfg.adam;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    adam_cfg.learning_rate = cfg.adam.learning_rate * std::pow(cfg.lr_decay, epoch);
    double sum_erot = 0.0, sum_snerr = 0.0;
    // Each batch is solved and differentiated at the current parameters,
    // then applied as one ADAM step.
    for (int start = 0; start < n_problems; start += batch_size) {
      const size_t end = static_cast<size_t>(std::min(n_problems, start + batch_size));
      std::vector<Mat2> covs1, covs2;
      current_covs(&covs1, &covs2);

      parallel_for(end - static_cast<size_t>(start), threads, [&](size_t k) {
        const size_t i = static_cast<size_t>(start) + k;
        ProblemResult& res = results[i];
        const SyntheticProblem prob = make_problem(i);
        const auto bps = to_bearing_pairs(prob, covs1, covs2);
        const LmResult solved = solve_one(prob, bps, i);
        res.sigma_norm_err =
            sigma_norm_error_at_gt(prob, covs1, covs2, cfg.solver.regularization);
        res.grad = Eigen::VectorXd::Zero(static_cast<int>(dim));

        RelativePose pose_star = solved.pose;
        try {
          pose_star = refine_rotation_to_stationarity(bps, solved.pose,
                                                      cfg.solver.regularization, 1e-8);
        } catch (const NumericalError&) {
          // Ill-conditioned parameter draw; keep the LM pose for the loss
          // statistic and contribute no gradient.
          res.e_rot = e_rot(solved.pose.R, prob.gt_pose.R);
          res.skipped = true;
          return;
        }
        res.e_rot = e_rot(pose_star.R, prob.gt_pose.R);

        const auto ig = implicit_covariance_gradient(bps, pose_star, prob.gt_pose.R, ig_cfg);
        res.skipped = ig.skipped_zero_loss;
        if (res.skipped) return;
        const size_t frame2_offset = learn_frame1 ? params_per_frame : 0;
        for (size_t j = 0; j < n_pts; ++j) {
          if (learn_frame1) {
            const Mat2 d2d =
                pullback_cov_gradient(ig.grads[j].d_cov1, prob.points[j].noisy1, prob.camera);
            res.grad.segment<3>(static_cast<int>(3 * j)) = chain_to_params(d2d, params_at(0, j));
          }
          const Mat2 d2d =
              pullback_cov_gradient(ig.grads[j].d_cov2, prob.points[j].noisy2, prob.camera);
          res.grad.segment<3>(static_cast<int>(frame2_offset + 3 * j)) =
              chain_to_params(d2d, params_at(frame2_offset, j));
        }
      });

      Eigen::VectorXd grad = Eigen::VectorXd::Zero(static_cast<int>(dim));
      int used = 0;
      for (size_t i = static_cast<size_t>(start); i < end; ++i) {
        sum_erot += results[i].e_rot;
        sum_snerr += results[i].sigma_norm_err;
        if (!results[i].skipped) {
          grad += results[i].grad;
          ++used;
        }
      }
      if (used > 0) {
        grad /= static_cast<double>(used);
        adam_step(adam, params, grad, adam_cfg);
      }
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.mean_e_rot = sum_erot / n_problems;
    rec.mean_sigma_norm_err = sum_snerr / n_problems;
    {
      std::vector<Mat2> covs1_now, covs2_now;
      current_covs(&covs1_now, &covs2_now);
      std::vector<Mat2> truth2(n_pts);
      for (size_t i = 0; i < n_pts; ++i) truth2[i] = base.points[i].gt_cov2;
      rec.mean_cov_err = set_normalized_cov_error(covs2_now, truth2);
    }
    curve.records.push_back(rec);

    if (initial_mean_erot < 0.0) initial_mean_erot = rec.mean_e_rot;
    if (rec.mean_e_rot > cfg.divergence_factor * initial_mean_erot) {
      curve.diverged = true;
      break;
    }
  }

  curve.params_frame1.resize(n_pts);
  curve.params_frame2.resize(n_pts);
  const size_t frame2_offset = learn_frame1 ? params_per_frame : 0;
  for (size_t i = 0; i < n_pts; ++i) {
    if (learn_frame1) curve.params_frame1[i] = params_at(0, i);
    curve.params_frame2[i] = params_at(frame2_offset, i);
  }
  {
    std::vector<Mat2> covs2(n_pts), truth2(n_pts);
    for (size_t i = 0; i < n_pts; ++i) {
      covs2[i] = curve.params_frame2[i].cov();
      truth2[i] = base.points[i].gt_cov2;
    }
    curve.final_point_cov_err = set_normalized_point_cov_errors(covs2, truth2);
  }
  return curve;
}

}  // namespace

LearningCurve train_overfit_fixed_geometry(const TrainConfig& cfg) { return train_impl(cfg, true); }

LearningCurve train_diverse_geometry(const TrainConfig& cfg) { return train_impl(cfg, false); }

}  // namespace pnec

// Command-line front end: synthetic covariance-learning experiments, pose
// estimation from correspondence files, trajectory evaluation, and the
// gradient / variance verification suites.
#include <CLI11.hpp>
#include <filesystem>
#include <iostream>
#include <json.hpp>

#include "pnec/config.hpp"
#include "pnec/geometry.hpp"
#include "pnec/io.hpp"
#include "pnec/learning.hpp"
#include "pnec/metrics.hpp"
#include "pnec/parallel.hpp"
#include "pnec/solver.hpp"
#include "pnec/synthgen.hpp"
#include "pnec/verify.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace pnec;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitNumerical = 3;
constexpr int kExitVerification = 4;

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  std::string format;
  uint64_t seed = 0;
  bool seed_set = false;
};

RunConfig load_config(const CommonArgs& args) {
  RunConfig cfg;
  if (!args.config_path.empty()) {
    cfg = run_config_from_json(read_file(args.config_path));
  }
  if (args.seed_set) {
    cfg.seed = args.seed;
    cfg.scene.seed = args.seed;
    cfg.solver.seed = args.seed;
    cfg.train.seed = args.seed;
    cfg.train.scene.seed = args.seed;
  }
  if (!args.out_dir.empty()) cfg.out_dir = args.out_dir;
  if (!args.format.empty()) cfg.format = args.format;
  if (cfg.format != "csv" && cfg.format != "json")
    throw InvalidInput("format must be csv or json");
  cfg.train.threads = default_thread_count();
  return cfg;
}

void write_manifest(const RunConfig& cfg, const std::string& command,
                    const std::vector<std::pair<std::string, std::string>>& inputs) {
  write_file(fs::path(cfg.out_dir) / "manifest.json", make_manifest(command, cfg, inputs));
}

std::string recovery_csv(const LearningCurve& curve) {
  std::ostringstream out;
  out << "point,initial_cov_err,final_cov_err\n";
  for (size_t i = 0; i < curve.final_point_cov_err.size(); ++i) {
    out << i << ',' << format_double(curve.initial_point_cov_err[i]) << ','
        << format_double(curve.final_point_cov_err[i]) << '\n';
  }
  return out.str();
}

int run_training(const RunConfig& cfg, const std::string& command) {
  TrainConfig train = cfg.train;
  train.scene.pose_mode =
      command == "synth-diverse" ? PoseMode::kRandomSecondFrame : PoseMode::kFixed;
  const LearningCurve curve = command == "synth-diverse" ? train_diverse_geometry(train)
                                                         : train_overfit_fixed_geometry(train);

  write_file(fs::path(cfg.out_dir) / "curve.csv", learning_curve_to_csv(curve));
  write_file(fs::path(cfg.out_dir) / "covariances.json", learned_covariances_to_json(curve));
  if (command == "synth-diverse") {
    write_file(fs::path(cfg.out_dir) / "recovery.csv", recovery_csv(curve));
  }
  write_manifest(cfg, command, {});

  if (curve.diverged) {
    std::cerr << "training diverged; partial artifacts written to " << cfg.out_dir << "\n";
    return kExitNumerical;
  }
  std::cout << "wrote " << (fs::path(cfg.out_dir) / "curve.csv").string() << " ("
            << curve.records.size() << " epochs)\n";
  return kExitOk;
}

int run_estimate(const RunConfig& cfg, const std::string& input, bool reproj_cov,
                 const std::string& gt_pose_path) {
  const std::string content = read_file(input);
  std::vector<Correspondence> corrs = correspondences_from_csv(content);
  if (corrs.size() < 8) throw InvalidInput("need at least 8 correspondences");

  std::vector<std::pair<std::string, std::string>> inputs{
      {fs::path(input).filename().string(), git_blob_sha1(content)}};

  if (reproj_cov) {
    // Reprojection oracle: triangulate with the reference pose, reproject,
    // and use clipped isotropic covariances in both frames.
    if (gt_pose_path.empty()) throw InvalidInput("--reproj-cov requires --gt-pose");
    const std::string gt_content = read_file(gt_pose_path);
    const Trajectory gt = trajectory_from_kitti(gt_content);
    if (gt.size() != 1) throw InvalidInput("--gt-pose file must hold exactly one pose");
    inputs.emplace_back(fs::path(gt_pose_path).filename().string(), git_blob_sha1(gt_content));
    RelativePose pose;
    pose.R = gt[0].R;
    const double norm = gt[0].position.norm();
    if (norm <= 0.0) throw InvalidInput("--gt-pose translation must be nonzero");
    pose.t = gt[0].position / norm;
    for (Correspondence& c : corrs) {
      const Vec3 d1 = unproject(c.p1, cfg.camera);
      const Vec3 d2 = pose.R * unproject(c.p2, cfg.camera);
      // Midpoint triangulation in the first camera frame.
      const double b = d1.dot(d2);
      const double det = 1.0 - b * b;
      if (std::abs(det) < 1e-12) continue;
      const double e1 = d1.dot(pose.t);
      const double e2 = d2.dot(pose.t);
      const double s = (e1 - b * e2) / det;
      const double u = (b * e1 - e2) / det;
      const Vec3 x1 = 0.5 * (s * d1 + (pose.t + u * d2));
      const Vec3 x2 = pose.R.transpose() * (x1 - pose.t);
      if (x1.z() <= 0.0 || x2.z() <= 0.0) continue;
      const auto clip = [](double v) { return std::min(4.0, std::max(0.01, v)); };
      c.cov1 = clip((project(x1, cfg.camera) - c.p1).squaredNorm()) * Mat2::Identity();
      c.cov2 = clip((project(x2, cfg.camera) - c.p2).squaredNorm()) * Mat2::Identity();
    }
  }

  std::vector<BearingPair> bps(corrs.size());
  for (size_t i = 0; i < corrs.size(); ++i) bps[i] = make_bearing_pair(corrs[i], cfg.camera);

  const SolveReport report = estimate_pose_multistage(bps, cfg.solver);

  json j;
  j["format"] = "pnec-pose";
  j["version"] = 1;
  json rot = json::array();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) rot.push_back(report.pose.R(r, c));
  j["rotation"] = rot;
  j["translation"] = {report.pose.t[0], report.pose.t[1], report.pose.t[2]};
  json mask = json::array();
  for (uint8_t m : report.inlier_mask) mask.push_back(static_cast<bool>(m));
  j["inlier_mask"] = mask;
  j["stage_energies"] = report.stage_energies;
  j["iterations_used"] = report.iterations_used;
  j["converged"] = report.converged;
  write_file(fs::path(cfg.out_dir) / "pose.json", j.dump(2) + "\n");
  write_manifest(cfg, "estimate", inputs);
  std::cout << j.dump(2) << "\n";
  return kExitOk;
}

int run_eval(const RunConfig& cfg, const std::string& est_path, const std::string& gt_path) {
  const std::string est_content = read_file(est_path);
  const std::string gt_content = read_file(gt_path);
  const Trajectory est = trajectory_from_kitti(est_content);
  const Trajectory gt = trajectory_from_kitti(gt_content);
  if (est.size() != gt.size()) throw InvalidInput("trajectory lengths differ");

  const double rpe1 = rpe1_deg(est, gt);
  const double rpen = rpen_deg(est, gt);
  double et_sum = 0.0;
  int et_count = 0;
  for (size_t i = 0; i + 1 < gt.size(); ++i) {
    const Vec3 dt_gt = gt[i].R.transpose() * (gt[i + 1].position - gt[i].position);
    const Vec3 dt_est = est[i].R.transpose() * (est[i + 1].position - est[i].position);
    const auto angle = e_t_deg(dt_est, dt_gt);
    if (angle) {
      et_sum += *angle;
      ++et_count;
    }
  }
  const double et = et_count > 0 ? et_sum / et_count : 0.0;

  std::ostringstream csv;
  csv << "seq,rpe1_deg,rpen_deg,et_deg\n";
  csv << fs::path(est_path).stem().string() << ',' << format_double(rpe1) << ','
      << format_double(rpen) << ',' << format_double(et) << '\n';
  write_file(fs::path(cfg.out_dir) / "metrics.csv", csv.str());
  write_manifest(cfg, "eval",
                 {{fs::path(est_path).filename().string(), git_blob_sha1(est_content)},
                  {fs::path(gt_path).filename().string(), git_blob_sha1(gt_content)}});
  std::cout << csv.str();
  return kExitOk;
}

int run_gradcheck(const RunConfig& cfg) {
  const GradcheckReport report = run_gradient_checks(cfg.gradcheck);
  std::ostringstream csv;
  csv << "derivative,worst_rel_error,tolerance,passed\n";
  for (const auto& e : report.entries) {
    csv << e.name << ',' << format_double(e.worst_rel_error) << ',' << format_double(e.tolerance)
        << ',' << (e.passed ? 1 : 0) << '\n';
  }
  write_file(fs::path(cfg.out_dir) / "gradcheck.csv", csv.str());
  write_manifest(cfg, "gradcheck", {});
  std::cout << csv.str();
  if (!report.all_passed) {
    std::cerr << "gradient verification breached tolerance\n";
    return kExitVerification;
  }
  return kExitOk;
}

int run_varapprox(const RunConfig& cfg) {
  const auto rows = variance_approximation_sweep(cfg.varapprox, cfg.seed);
  std::ostringstream csv;
  csv << "focal,analytic_variance,mc_variance,rel_error\n";
  for (const auto& r : rows) {
    csv << format_double(r.focal) << ',' << format_double(r.analytic) << ','
        << format_double(r.monte_carlo) << ',' << format_double(r.rel_error) << '\n';
  }
  write_file(fs::path(cfg.out_dir) / "varapprox.csv", csv.str());
  write_manifest(cfg, "varapprox", {});
  std::cout << csv.str();
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Symmetric probabilistic normal epipolar constraint toolkit"};
  app.require_subcommand(1);

  CommonArgs common;
  app.add_option("--config", common.config_path, "JSON run configuration");
  app.add_option("--seed", common.seed, "Master seed override")
      ->each([&common](const std::string&) { common.seed_set = true; });
  app.add_option("--out", common.out_dir, "Output directory");
  app.add_option("--format", common.format, "Artifact format (csv|json)");

  auto* overfit =
      app.add_subcommand("synth-overfit", "Learn per-point covariances on one fixed geometry");
  auto* diverse =
      app.add_subcommand("synth-diverse", "Learn second-frame covariances across random poses");
  int opt_problems = 0, opt_epochs = 0, opt_batch = 0;
  double opt_lr = 0.0;
  for (auto* cmd : {overfit, diverse}) {
    cmd->add_option("--problems", opt_problems, "Number of sampled problems");
    cmd->add_option("--epochs", opt_epochs, "Training epochs");
    cmd->add_option("--batch", opt_batch, "Problems per ADAM step");
    cmd->add_option("--lr", opt_lr, "ADAM learning rate");
  }

  auto* estimate = app.add_subcommand("estimate", "Relative pose from a correspondence CSV");
  std::string est_input, gt_pose_path;
  bool reproj_cov = false;
  estimate->add_option("--input", est_input, "Correspondence CSV")->required();
  estimate->add_flag("--reproj-cov", reproj_cov,
                     "Replace covariances with the reprojection-error oracle");
  estimate->add_option("--gt-pose", gt_pose_path, "Reference pose for --reproj-cov");

  auto* eval = app.add_subcommand("eval", "Trajectory metrics (rpe1, rpen, et)");
  std::string eval_est, eval_gt;
  eval->add_option("--est", eval_est, "Estimated trajectory (KITTI format)")->required();
  eval->add_option("--gt", eval_gt, "Ground-truth trajectory (KITTI format)")->required();

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference and argmin oracles");
  bool gradcheck_full = false;
  std::string inject;
  gradcheck->add_flag("--full", gradcheck_full, "Run the full 20-problem argmin suite");
  gradcheck->add_option("--inject", inject, "Test hook: mutate a derivative (dn_dx_sign)");

  auto* varapprox = app.add_subcommand(
      "varapprox", "Residual-variance approximation sweep over focal lengths");
  std::vector<double> focals;
  int samples = 0;
  varapprox->add_option("--focals", focals, "Focal lengths to sweep");
  varapprox->add_option("--samples", samples, "Monte-Carlo samples");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return kExitUsage;
  }

  try {
    RunConfig cfg = load_config(common);
    if (overfit->parsed() || diverse->parsed()) {
      if (opt_problems > 0) cfg.train.num_problems = opt_problems;
      if (opt_epochs > 0) cfg.train.epochs = opt_epochs;
      if (opt_batch > 0) cfg.train.batch_size = opt_batch;
      if (opt_lr > 0.0) cfg.train.adam.learning_rate = opt_lr;
      cfg.train.batch_size = std::min(cfg.train.batch_size, cfg.train.num_problems);
      return run_training(cfg, overfit->parsed() ? "synth-overfit" : "synth-diverse");
    }
    if (estimate->parsed()) return run_estimate(cfg, est_input, reproj_cov, gt_pose_path);
    if (eval->parsed()) return run_eval(cfg, eval_est, eval_gt);
    if (gradcheck->parsed()) {
      if (gradcheck_full) cfg.gradcheck.argmin_problems = 20;
      if (!inject.empty()) cfg.gradcheck.inject = inject;
      return run_gradcheck(cfg);
    }
    if (varapprox->parsed()) {
      if (!focals.empty()) cfg.varapprox.focals = focals;
      if (samples > 0) cfg.varapprox.samples = samples;
      return run_varapprox(cfg);
    }
    return kExitUsage;
  } catch (const InvalidInput& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumerical;
  }
}

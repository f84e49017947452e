#include "pnec/verify.hpp"

#include <Eigen/Dense>
#include <cmath>

#include "pnec/energy.hpp"
#include "pnec/geometry.hpp"
#include "pnec/gradients.hpp"
#include "pnec/metrics.hpp"
#include "pnec/rng.hpp"
#include "pnec/solver.hpp"
#include "pnec/synthgen.hpp"

namespace pnec {

namespace {

constexpr double kReg = 1e-13;

struct EvalConfig {
  RelativePose pose;
  BearingPair bp;
};

EvalConfig random_eval_config(CounterRng& rng) {
  EvalConfig c;
  c.pose.R = so3_exp(Vec3(rng.next_gaussian(), rng.next_gaussian(), rng.next_gaussian()));
  c.pose.t = Vec3(rng.next_gaussian(), rng.next_gaussian(), rng.next_gaussian()).normalized();
  c.bp.f1 = Vec3(rng.next_gaussian(), rng.next_gaussian(), rng.next_gaussian()).normalized();
  c.bp.f2 = Vec3(rng.next_gaussian(), rng.next_gaussian(), rng.next_gaussian()).normalized();
  Mat3 sq1, sq2;
  for (int r = 0; r < 3; ++r)
    for (int col = 0; col < 3; ++col) {
      sq1(r, col) = 0.01 * rng.next_gaussian();
      sq2(r, col) = 0.01 * rng.next_gaussian();
    }
  c.bp.cov1 = sq1 * sq1.transpose();
  c.bp.cov2 = sq2 * sq2.transpose();
  return c;
}

double n_at(const EvalConfig& c, const Vec3& x) {
  const RelativePose p{so3_exp(x) * c.pose.R, c.pose.t};
  const double e = nec_residual(p, c.bp);
  return e * e;
}
double d_sigma_at(const EvalConfig& c, const Vec3& x) {
  const Mat3 r = so3_exp(x) * c.pose.R;
  const Vec3 h = (r * c.bp.f2).cross(c.pose.t);
  return h.dot(c.bp.cov1 * h);
}
double d_sigma_p_at(const EvalConfig& c, const Vec3& x) {
  const Mat3 r = so3_exp(x) * c.pose.R;
  const Vec3 a = c.pose.t.cross(c.bp.f1);
  return a.dot(r * c.bp.cov2 * r.transpose() * a);
}
double es_at(const EvalConfig& c, const Vec3& x) {
  return n_at(c, x) / std::sqrt(d_sigma_at(c, x) + d_sigma_p_at(c, x) + kReg);
}

double rel_err(double got, double want) {
  return std::abs(got - want) / std::max(1e-12, std::abs(want));
}

Mat2 psd_sqrt2(const Mat2& m) {
  Eigen::SelfAdjointEigenSolver<Mat2> eig(m);
  return eig.eigenvectors() * eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() *
         eig.eigenvectors().transpose();
}

}  // namespace

GradcheckReport run_gradient_checks(const GradcheckConfig& cfg) {
  GradcheckReport report;
  const bool flip_dn = cfg.inject == "dn_dx_sign";

  double worst_dn = 0.0, worst_dds = 0.0, worst_ddsp = 0.0, worst_des = 0.0;
  double worst_des_cov = 0.0;
  CounterRng rng(cfg.seed);
  for (int i = 0; i < cfg.derivative_configs; ++i) {
    const EvalConfig c = random_eval_config(rng);
    ResidualJacobians jac = residual_jacobians(c.pose, c.bp, kReg);
    if (flip_dn) jac.dn_dx = -jac.dn_dx;

    const double h = 1e-6;
    for (int k = 0; k < 3; ++k) {
      const Vec3 dp = h * Vec3::Unit(k);
      worst_dn = std::max(worst_dn, rel_err(jac.dn_dx[k], (n_at(c, dp) - n_at(c, -dp)) / (2 * h)));
      worst_dds = std::max(
          worst_dds, rel_err(jac.dd_sigma_dx[k], (d_sigma_at(c, dp) - d_sigma_at(c, -dp)) / (2 * h)));
      worst_ddsp = std::max(worst_ddsp, rel_err(jac.dd_sigma_p_dx[k],
                                                (d_sigma_p_at(c, dp) - d_sigma_p_at(c, -dp)) / (2 * h)));
      worst_des = std::max(worst_des, rel_err(jac.des_dx[k], (es_at(c, dp) - es_at(c, -dp)) / (2 * h)));
    }

    const double hc = 1e-7;
    for (int r = 0; r < 3; ++r) {
      for (int col = r; col < 3; ++col) {
        for (int which = 0; which < 2; ++which) {
          EvalConfig plus = c, minus = c;
          Mat3& mp = which == 0 ? plus.bp.cov1 : plus.bp.cov2;
          Mat3& mm = which == 0 ? minus.bp.cov1 : minus.bp.cov2;
          mp(r, col) += hc;
          mm(r, col) -= hc;
          if (r != col) {
            mp(col, r) += hc;
            mm(col, r) -= hc;
          }
          const double fd = (es_at(plus, Vec3::Zero()) - es_at(minus, Vec3::Zero())) / (2 * hc);
          const Mat3& grad = which == 0 ? jac.des_dsigma : jac.des_dsigma_p;
          const double analytic = r == col ? grad(r, col) : grad(r, col) + grad(col, r);
          worst_des_cov = std::max(worst_des_cov, rel_err(analytic, fd));
        }
      }
    }
  }
  report.entries.push_back({"dn_dx", worst_dn, 1e-5, worst_dn < 1e-5});
  report.entries.push_back({"dd_sigma_dx", worst_dds, 1e-5, worst_dds < 1e-5});
  report.entries.push_back({"dd_sigma_p_dx", worst_ddsp, 1e-5, worst_ddsp < 1e-5});
  report.entries.push_back({"des_dx", worst_des, 1e-5, worst_des < 1e-5});
  report.entries.push_back({"des_dcov", worst_des_cov, 1e-5, worst_des_cov < 1e-5});

  // Rotational-loss gradient against finite differences.
  double worst_erot = 0.0;
  for (int i = 0; i < 30; ++i) {
    const Mat3 r_gt =
        so3_exp(Vec3(rng.next_gaussian(), rng.next_gaussian(), rng.next_gaussian()));
    const Mat3 r_est =
        so3_exp(0.3 * Vec3(rng.next_gaussian(), rng.next_gaussian(), rng.next_gaussian())) * r_gt;
    const auto grad = grad_erot_wrt_pose(r_est, r_gt);
    if (!grad) continue;
    const double h = 1e-7;
    for (int k = 0; k < 3; ++k) {
      const double fd = (e_rot(so3_exp(h * Vec3::Unit(k)) * r_est, r_gt) -
                         e_rot(so3_exp(-h * Vec3::Unit(k)) * r_est, r_gt)) /
                        (2 * h);
      worst_erot = std::max(worst_erot, std::abs((*grad)[k] - fd));
    }
  }
  report.entries.push_back({"grad_erot", worst_erot, 1e-6, worst_erot < 1e-6});

  // Parameter chain rule against finite differences.
  double worst_chain = 0.0;
  for (int i = 0; i < 50; ++i) {
    const CovarianceParams p{rng.uniform(-2.0, 2.0), rng.uniform(-3.0, 3.0),
                             rng.uniform(-2.0, 2.0)};
    Mat2 g;
    const double a = rng.next_gaussian(), b = rng.next_gaussian(), c2 = rng.next_gaussian();
    g << a, b, b, c2;
    const Vec3 analytic = chain_to_params(g, p);
    const double h = 1e-6;
    const auto value = [&](double sr, double ar, double br) {
      return (g.array() * CovarianceParams{sr, ar, br}.cov().array()).sum();
    };
    const Vec3 fd((value(p.s_raw + h, p.alpha_raw, p.beta_raw) -
                   value(p.s_raw - h, p.alpha_raw, p.beta_raw)) /
                      (2 * h),
                  (value(p.s_raw, p.alpha_raw + h, p.beta_raw) -
                   value(p.s_raw, p.alpha_raw - h, p.beta_raw)) /
                      (2 * h),
                  (value(p.s_raw, p.alpha_raw, p.beta_raw + h) -
                   value(p.s_raw, p.alpha_raw, p.beta_raw - h)) /
                      (2 * h));
    worst_chain = std::max(worst_chain, (analytic - fd).norm() / std::max(1.0, fd.norm()));
  }
  report.entries.push_back({"chain_to_params", worst_chain, 1e-6, worst_chain < 1e-6});

  // Implicit gradient against the perturb-and-re-solve oracle, plus the
  // covariance-scaling pairing identity.
  double worst_argmin = 0.0;
  double worst_pairing = 0.0;
  for (int pi = 0; pi < cfg.argmin_problems; ++pi) {
    SceneConfig scene;
    scene.seed = cfg.seed + 1000 + static_cast<uint64_t>(pi);
    scene.num_points = cfg.argmin_correspondences;
    scene.noise.scale_min = 0.5;
    scene.noise.scale_max = 4.0;
    const SyntheticProblem problem = generate_problem(scene);
    const auto bps = to_bearing_pairs_gt(problem);
    const PnecSymObjective objective(bps, kReg);
    LmOptions lm;
    lm.max_iterations = 200;
    lm.initial_damping = 1e4;
    const LmResult solved =
        lm_minimize(objective, perturb_pose(problem.gt_pose, 0.01, scene.seed), lm);
    const RelativePose star = refine_rotation_to_stationarity(bps, solved.pose, kReg, 1e-10);
    const auto result = implicit_covariance_gradient(bps, star, problem.gt_pose.R, {});
    if (result.skipped_zero_loss) continue;

    double pairing = 0.0, scale = 0.0;
    for (size_t i = 0; i < bps.size(); ++i) {
      pairing += (result.grads[i].d_cov1.array() * bps[i].cov1.array()).sum() +
                 (result.grads[i].d_cov2.array() * bps[i].cov2.array()).sum();
      scale += std::abs((result.grads[i].d_cov2.array() * bps[i].cov2.array()).sum());
    }
    worst_pairing = std::max(worst_pairing, std::abs(pairing) / std::max(scale, 1e-12));

    CounterRng pick(scene.seed);
    for (int probe = 0; probe < 4; ++probe) {
      const size_t i = pick.uniform_index(bps.size());
      const int r = static_cast<int>(pick.uniform_index(3));
      const int c = static_cast<int>(pick.uniform_index(3));
      const bool second = pick.next_double() < 0.5;
      const double eps = 3e-9;
      auto plus = bps;
      auto minus = bps;
      Mat3& mp = second ? plus[i].cov2 : plus[i].cov1;
      Mat3& mm = second ? minus[i].cov2 : minus[i].cov1;
      mp(r, c) += eps;
      mm(r, c) -= eps;
      if (r != c) {
        mp(c, r) += eps;
        mm(c, r) -= eps;
      }
      const Mat3 r_plus = refine_rotation_to_stationarity(plus, star, kReg, 1e-10, 60).R;
      const Mat3 r_minus = refine_rotation_to_stationarity(minus, star, kReg, 1e-10, 60).R;
      const double fd =
          (e_rot(r_plus, problem.gt_pose.R) - e_rot(r_minus, problem.gt_pose.R)) / (2 * eps);
      const Mat3& grad = second ? result.grads[i].d_cov2 : result.grads[i].d_cov1;
      const double analytic = r == c ? grad(r, c) : grad(r, c) + grad(c, r);
      worst_argmin = std::max(worst_argmin, std::abs(analytic - fd) / std::max(std::abs(fd), 1e-12));
    }
  }
  report.entries.push_back({"implicit_vs_argmin", worst_argmin, 1e-3, worst_argmin < 1e-3});
  report.entries.push_back({"scaling_pairing", worst_pairing, 1e-6, worst_pairing < 1e-6});

  report.all_passed = true;
  for (const auto& e : report.entries) report.all_passed &= e.passed;
  return report;
}

double mc_residual_variance(const RelativePose& pose, const Vec2& p1, const Vec2& p2,
                            const Mat2& cov1, const Mat2& cov2, const Camera& cam,
                            size_t samples, uint64_t seed) {
  const Vec3 f1 = unproject(p1, cam);
  const Vec3 f2 = unproject(p2, cam);
  const Mat32 j1 = unproject_jacobian(p1, cam);
  const Mat32 j2 = unproject_jacobian(p2, cam);
  const Mat2 l1 = psd_sqrt2(cov1);
  const Mat2 l2 = psd_sqrt2(cov2);

  // l(eta1, eta2) = t.((j1 eta1) x R f2) + t.(f1 x (R j2 eta2)) with an
  // exactly computable variance, used as the control variate.
  const Vec3 g = pose.R * f2;
  Eigen::Matrix<double, 1, 2> row1, row2;
  for (int c = 0; c < 2; ++c) {
    row1(0, c) = pose.t.dot(Vec3(j1.col(c)).cross(g));
    row2(0, c) = pose.t.dot(f1.cross(pose.R * Vec3(j2.col(c))));
  }
  const double linear_variance =
      (row1 * cov1 * row1.transpose())(0, 0) + (row2 * cov2 * row2.transpose())(0, 0);
  if (linear_variance == 0.0) return 0.0;

  CounterRng rng(seed);
  double mean_e = 0.0, mean_l = 0.0, m2_e = 0.0, m2_l = 0.0;
  for (size_t i = 1; i <= samples; ++i) {
    const Vec2 eta1 = l1 * Vec2(rng.next_gaussian(), rng.next_gaussian());
    const Vec2 eta2 = l2 * Vec2(rng.next_gaussian(), rng.next_gaussian());
    const double e = pose.t.dot(unproject(p1 + eta1, cam).cross(pose.R * unproject(p2 + eta2, cam)));
    const double l = (row1 * eta1)(0, 0) + (row2 * eta2)(0, 0);
    const double de = e - mean_e;
    mean_e += de / static_cast<double>(i);
    m2_e += de * (e - mean_e);
    const double dl = l - mean_l;
    mean_l += dl / static_cast<double>(i);
    m2_l += dl * (l - mean_l);
  }
  const double var_e = m2_e / static_cast<double>(samples - 1);
  const double var_l = m2_l / static_cast<double>(samples - 1);
  return linear_variance + (var_e - var_l);
}

VarianceGeometry make_variance_geometry(double focal, uint64_t seed) {
  CounterRng rng(seed);
  VarianceGeometry out;
  out.camera = Camera{focal, focal, 620.0, 185.0};
  out.pose.R = so3_exp(Vec3(rng.next_gaussian(), rng.next_gaussian(), rng.next_gaussian()) * 0.02);
  out.pose.t = Vec3(rng.next_gaussian(), rng.next_gaussian(), rng.next_gaussian()).normalized();

  for (int attempt = 0; attempt < 1000; ++attempt) {
    const Vec2 p1(rng.uniform(0.3, 0.7) * 2.0 * out.camera.cx,
                  rng.uniform(0.3, 0.7) * 2.0 * out.camera.cy);
    const double depth = rng.uniform(5.0, 20.0);
    Vec3 dir = unproject(p1, out.camera);
    const Vec3 x1 = dir / dir.z() * depth;
    const Vec3 x2 = out.pose.R.transpose() * (x1 - out.pose.t);
    if (x2.z() < 0.5) continue;
    const Vec2 p2 = project(x2, out.camera);
    if (p2.x() < 0.0 || p2.x() >= 2.0 * out.camera.cx || p2.y() < 0.0 ||
        p2.y() >= 2.0 * out.camera.cy)
      continue;
    out.p1 = p1;
    out.p2 = p2;
    return out;
  }
  throw NumericalError("variance geometry: no mutually visible point found");
}

std::vector<VarApproxRow> variance_approximation_sweep(const VarApproxConfig& cfg, uint64_t seed) {
  std::vector<VarApproxRow> rows;
  CounterRng shape_rng(seed);
  // One anisotropic covariance pair shared across the sweep, scaled to the
  // configured trace.
  Mat2 sq1, sq2;
  sq1 << shape_rng.uniform(0.5, 1.0), shape_rng.uniform(-0.4, 0.4), 0.0,
      shape_rng.uniform(0.5, 1.0);
  sq2 << shape_rng.uniform(0.5, 1.0), shape_rng.uniform(-0.4, 0.4), 0.0,
      shape_rng.uniform(0.5, 1.0);
  Mat2 cov1 = sq1 * sq1.transpose();
  Mat2 cov2 = sq2 * sq2.transpose();
  const double total_trace = cov1.trace() + cov2.trace();
  cov1 *= cfg.cov_trace / total_trace;
  cov2 *= cfg.cov_trace / total_trace;

  for (double focal : cfg.focals) {
    // Same scene geometry at every focal length: only the camera changes.
    const VarianceGeometry geo = make_variance_geometry(focal, seed + 17);
    VarApproxRow row;
    row.focal = focal;
    BearingPair bp;
    bp.f1 = unproject(geo.p1, geo.camera);
    bp.f2 = unproject(geo.p2, geo.camera);
    bp.cov1 = propagate_cov(geo.p1, cov1, geo.camera);
    bp.cov2 = propagate_cov(geo.p2, cov2, geo.camera);
    row.analytic = variance_sym(geo.pose, bp);
    row.monte_carlo = mc_residual_variance(geo.pose, geo.p1, geo.p2, cov1, cov2, geo.camera,
                                           static_cast<size_t>(cfg.samples), seed + 31);
    row.rel_error = (row.analytic == 0.0 && row.monte_carlo == 0.0)
                        ? 0.0
                        : std::abs(row.analytic - row.monte_carlo) / row.monte_carlo;
    rows.push_back(row);
  }
  return rows;
}

}  // namespace pnec

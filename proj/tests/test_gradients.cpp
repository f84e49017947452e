#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "oracles.hpp"
#include "pnec/geometry.hpp"
#include "pnec/gradients.hpp"
#include "pnec/metrics.hpp"
#include "pnec/rng.hpp"
#include "pnec/solver.hpp"
#include "pnec/synthgen.hpp"

using namespace pnec;

namespace {

constexpr double kReg = 1e-13;

struct Config {
  RelativePose pose;
  BearingPair bp;
};

Config random_config(CounterRng& rng) {
  Config cfg;
  cfg.pose.R = so3_exp(Vec3(rng.next_gaussian(), rng.next_gaussian(), rng.next_gaussian()));
  cfg.pose.t = Vec3(rng.next_gaussian(), rng.next_gaussian(), rng.next_gaussian()).normalized();
  cfg.bp.f1 = Vec3(rng.next_gaussian(), rng.next_gaussian(), rng.next_gaussian()).normalized();
  cfg.bp.f2 = Vec3(rng.next_gaussian(), rng.next_gaussian(), rng.next_gaussian()).normalized();
  Mat3 sq1, sq2;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) {
      sq1(r, c) = 0.01 * rng.next_gaussian();
      sq2(r, c) = 0.01 * rng.next_gaussian();
    }
  cfg.bp.cov1 = sq1 * sq1.transpose();
  cfg.bp.cov2 = sq2 * sq2.transpose();
  return cfg;
}

double rel_err(double got, double want) {
  return std::abs(got - want) / std::max(1e-12, std::abs(want));
}

// Appendix-style components as plain functions of the tangent offset x.
double n_of(const Config& c, const Vec3& x) {
  const RelativePose p{so3_exp(x) * c.pose.R, c.pose.t};
  const double e = nec_residual(p, c.bp);
  return e * e;
}
double d_sigma_of(const Config& c, const Vec3& x) {
  const Mat3 r = so3_exp(x) * c.pose.R;
  const Vec3 h = (r * c.bp.f2).cross(c.pose.t);
  return h.dot(c.bp.cov1 * h);
}
double d_sigma_p_of(const Config& c, const Vec3& x) {
  const Mat3 r = so3_exp(x) * c.pose.R;
  const Vec3 a = c.pose.t.cross(c.bp.f1);
  return a.dot(r * c.bp.cov2 * r.transpose() * a);
}
double es_of(const Config& c, const Vec3& x) {
  return n_of(c, x) / std::sqrt(d_sigma_of(c, x) + d_sigma_p_of(c, x) + kReg);
}

}  // namespace

TEST_CASE("residual jacobians match central finite differences on 100 seeds") {
  CounterRng rng(41);
  double worst = 0.0;
  for (int seed = 0; seed < 100; ++seed) {
    const Config cfg = random_config(rng);
    const ResidualJacobians jac = residual_jacobians(cfg.pose, cfg.bp, kReg);

    const auto fd3 = [&](auto&& fn) {
      return oracles::central_difference(
          [&](const Eigen::VectorXd& v) { return fn(cfg, Vec3(v)); }, Eigen::VectorXd::Zero(3),
          1e-6);
    };
    const Eigen::VectorXd dn = fd3(n_of);
    const Eigen::VectorXd dds = fd3(d_sigma_of);
    const Eigen::VectorXd ddsp = fd3(d_sigma_p_of);
    const Eigen::VectorXd des = fd3(es_of);
    for (int k = 0; k < 3; ++k) {
      worst = std::max(worst, rel_err(jac.dn_dx[k], dn[k]));
      worst = std::max(worst, rel_err(jac.dd_sigma_dx[k], dds[k]));
      worst = std::max(worst, rel_err(jac.dd_sigma_p_dx[k], ddsp[k]));
      worst = std::max(worst, rel_err(jac.des_dx[k], des[k]));
    }

    // Covariance derivatives: symmetrized perturbations of each entry.
    for (int r = 0; r < 3; ++r) {
      for (int c = r; c < 3; ++c) {
        const double h = 1e-7;
        Config plus = cfg, minus = cfg;
        plus.bp.cov1(r, c) += h;
        plus.bp.cov1(c, r) = plus.bp.cov1(r, c);
        minus.bp.cov1(r, c) -= h;
        minus.bp.cov1(c, r) = minus.bp.cov1(r, c);
        if (r == c) {
          plus.bp.cov1(r, c) = cfg.bp.cov1(r, c) + h;
          minus.bp.cov1(r, c) = cfg.bp.cov1(r, c) - h;
        }
        const double fd = (es_of(plus, Vec3::Zero()) - es_of(minus, Vec3::Zero())) / (2.0 * h);
        const double analytic =
            r == c ? jac.des_dsigma(r, c) : jac.des_dsigma(r, c) + jac.des_dsigma(c, r);
        worst = std::max(worst, rel_err(analytic, fd));

        Config plus2 = cfg, minus2 = cfg;
        plus2.bp.cov2(r, c) += h;
        plus2.bp.cov2(c, r) = plus2.bp.cov2(r, c);
        minus2.bp.cov2(r, c) -= h;
        minus2.bp.cov2(c, r) = minus2.bp.cov2(r, c);
        if (r == c) {
          plus2.bp.cov2(r, c) = cfg.bp.cov2(r, c) + h;
          minus2.bp.cov2(r, c) = cfg.bp.cov2(r, c) - h;
        }
        const double fd2 = (es_of(plus2, Vec3::Zero()) - es_of(minus2, Vec3::Zero())) / (2.0 * h);
        const double analytic2 =
            r == c ? jac.des_dsigma_p(r, c) : jac.des_dsigma_p(r, c) + jac.des_dsigma_p(c, r);
        worst = std::max(worst, rel_err(analytic2, fd2));
      }
    }
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("covariance gradients vanish when the residual is zero") {
  // Epipolar-consistent bearings: e = 0 annihilates the covariance terms.
  const auto geo = oracles::variance_geometry(720.0, 42);
  BearingPair bp;
  bp.f1 = unproject(geo.p1, geo.camera);
  bp.f2 = unproject(geo.p2, geo.camera);
  bp.cov1 = 1e-6 * Mat3::Identity();
  bp.cov2 = 1e-6 * Mat3::Identity();
  const ResidualJacobians jac = residual_jacobians(geo.pose, bp, kReg);
  CHECK(jac.des_dsigma.norm() < 1e-20);
  CHECK(jac.des_dsigma_p.norm() < 1e-20);
}

TEST_CASE("des_dsigma is the stated rank-1 outer product") {
  CounterRng rng(43);
  const Config cfg = random_config(rng);
  const ResidualJacobians jac = residual_jacobians(cfg.pose, cfg.bp, kReg);
  CHECK((jac.des_dsigma - jac.des_dsigma.transpose()).norm() < 1e-18);
  const Vec3 v = cfg.pose.t.cross(cfg.pose.R * cfg.bp.f2);
  // des_dsigma is proportional to v v^T (same eigenvector structure).
  const Mat3 outer = v * v.transpose();
  const double scale = jac.des_dsigma.norm() / outer.norm();
  CHECK((jac.des_dsigma.cwiseAbs() - scale * outer.cwiseAbs()).norm() <
        1e-9 * jac.des_dsigma.norm());
  Eigen::SelfAdjointEigenSolver<Mat3> eig(jac.des_dsigma);
  // Rank 1: two eigenvalues are (numerically) zero.
  const Vec3 abs_ev = eig.eigenvalues().cwiseAbs();
  CHECK(abs_ev.minCoeff() < 1e-12 * abs_ev.maxCoeff() + 1e-300);
}

TEST_CASE("grad_erot_wrt_pose") {
  CounterRng rng(44);
  const Mat3 r_gt = so3_exp(Vec3(rng.next_gaussian(), rng.next_gaussian(), rng.next_gaussian()));

  SUBCASE("points along the geodesic with unit speed") {
    const Mat3 r_est = so3_exp(Vec3(0, 0, 0.1)) * r_gt;
    const auto grad = grad_erot_wrt_pose(r_est, r_gt);
    REQUIRE(grad.has_value());
    CHECK((*grad - Vec3(0, 0, 1)).norm() < 1e-6);
  }

  SUBCASE("matches finite differences and has unit norm") {
    for (int i = 0; i < 30; ++i) {
      const Mat3 r_est =
          so3_exp(0.3 * Vec3(rng.next_gaussian(), rng.next_gaussian(), rng.next_gaussian())) *
          r_gt;
      const auto grad = grad_erot_wrt_pose(r_est, r_gt);
      if (!grad) continue;
      CHECK(std::abs(grad->norm() - 1.0) < 1e-9);
      const Eigen::VectorXd fd = oracles::central_difference(
          [&](const Eigen::VectorXd& v) { return e_rot(so3_exp(Vec3(v)) * r_est, r_gt); },
          Eigen::VectorXd::Zero(3), 1e-7);
      CHECK((*grad - Vec3(fd)).norm() < 1e-6 * fd.norm());
    }
  }

  SUBCASE("undefined at zero and pi") {
    CHECK(!grad_erot_wrt_pose(r_gt, r_gt).has_value());
    CHECK(!grad_erot_wrt_pose(so3_exp(Vec3(M_PI, 0, 0)) * r_gt, r_gt).has_value());
  }
}

namespace {

// Re-solve the rotation at fixed translation to high precision, starting
// from the previous optimum: the argmin-perturbation oracle of the implicit
// gradient.
Mat3 reoptimize_rotation(std::span<const BearingPair> bps, const RelativePose& start,
                         double regularization) {
  // Newton refinement from the warm start resolves the perturbed argmin far
  // below the rounding floor of energy-comparison solvers.
  return refine_rotation_to_stationarity(bps, start, regularization, 1e-10, 60).R;
}

struct SolvedProblem {
  std::vector<BearingPair> bps;
  RelativePose pose_star;
  Mat3 r_gt;
};

SolvedProblem solved_random_problem(uint64_t seed, int n_points) {
  SceneConfig scene = oracles::default_scene(seed, n_points);
  scene.noise.scale_min = 0.5;
  scene.noise.scale_max = 4.0;
  const SyntheticProblem problem = generate_problem(scene);
  SolvedProblem out;
  out.bps = to_bearing_pairs_gt(problem);
  out.r_gt = problem.gt_pose.R;
  const PnecSymObjective objective(out.bps, kReg);
  LmOptions lm;
  lm.max_iterations = 200;
  lm.initial_damping = 1e4;
  lm.step_tolerance = 1e-15;
  lm.relative_decrease_tolerance = 1e-16;
  const LmResult solved =
      lm_minimize(objective, perturb_pose(problem.gt_pose, 0.01, seed), lm);
  out.pose_star = refine_rotation_to_stationarity(out.bps, solved.pose, kReg, 1e-10);
  return out;
}

}  // namespace

TEST_CASE("implicit gradient matches the argmin-perturbation oracle") {
  for (uint64_t seed : {101, 202}) {
    const SolvedProblem sp = solved_random_problem(seed, 20);
    REQUIRE(energy_grad_rotation(sp.pose_star, sp.bps, kReg).norm() < 1e-8);

    const auto result = implicit_covariance_gradient(sp.bps, sp.pose_star, sp.r_gt, {});
    REQUIRE(!result.skipped_zero_loss);

    // Perturb a few covariance entries, re-solve, differentiate e_rot.
    CounterRng pick(seed);
    for (int probe = 0; probe < 4; ++probe) {
      const size_t i = pick.uniform_index(sp.bps.size());
      const int r = static_cast<int>(pick.uniform_index(3));
      const int c = static_cast<int>(pick.uniform_index(3));
      const bool second = pick.next_double() < 0.5;
      const double eps = 3e-9;

      auto bps_plus = sp.bps;
      auto bps_minus = sp.bps;
      auto& mp = second ? bps_plus[i].cov2 : bps_plus[i].cov1;
      auto& mm = second ? bps_minus[i].cov2 : bps_minus[i].cov1;
      mp(r, c) += eps;
      if (r != c) mp(c, r) += eps;
      mm(r, c) -= eps;
      if (r != c) mm(c, r) -= eps;

      const Mat3 r_plus = reoptimize_rotation(bps_plus, sp.pose_star, kReg);
      const Mat3 r_minus = reoptimize_rotation(bps_minus, sp.pose_star, kReg);
      const double fd = (e_rot(r_plus, sp.r_gt) - e_rot(r_minus, sp.r_gt)) / (2.0 * eps);

      const Mat3& grad = second ? result.grads[i].d_cov2 : result.grads[i].d_cov1;
      const double analytic = r == c ? grad(r, c) : grad(r, c) + grad(c, r);
      CHECK(std::abs(analytic - fd) <= 1e-3 * std::max(std::abs(fd), 1e-12));
    }
  }
}

TEST_CASE("implicit gradient annihilates the covariance-scaling direction") {
  const SolvedProblem sp = solved_random_problem(303, 20);
  const auto result = implicit_covariance_gradient(sp.bps, sp.pose_star, sp.r_gt, {});
  double pairing = 0.0;
  double scale = 0.0;
  for (size_t i = 0; i < sp.bps.size(); ++i) {
    pairing += (result.grads[i].d_cov1.array() * sp.bps[i].cov1.array()).sum();
    pairing += (result.grads[i].d_cov2.array() * sp.bps[i].cov2.array()).sum();
    scale += std::abs((result.grads[i].d_cov2.array() * sp.bps[i].cov2.array()).sum());
  }
  CHECK(std::abs(pairing) < 1e-6 * std::max(scale, 1e-12));

  // Returned gradients are symmetric matrices.
  for (const auto& g : result.grads) {
    CHECK((g.d_cov1 - g.d_cov1.transpose()).norm() < 1e-12);
    CHECK((g.d_cov2 - g.d_cov2.transpose()).norm() < 1e-12);
  }
}

TEST_CASE("implicit gradient skips zero-loss samples") {
  const SolvedProblem sp = solved_random_problem(404, 15);
  // Pass the optimum itself as ground truth: e_rot = 0.
  const auto result = implicit_covariance_gradient(sp.bps, sp.pose_star, sp.pose_star.R, {});
  CHECK(result.skipped_zero_loss);
  for (const auto& g : result.grads) {
    CHECK(g.d_cov1.isZero(0.0));
    CHECK(g.d_cov2.isZero(0.0));
  }
}

TEST_CASE("chain_to_params cases and finite differences") {
  SUBCASE("zero gradient maps to zero") {
    CovarianceParams p{0.3, 0.7, -0.2};
    CHECK(chain_to_params(Mat2::Zero(), p).norm() == 0.0);
  }

  SUBCASE("isotropic beta kills the orientation gradient") {
    CovarianceParams p{0.5, 1.1, 0.0};  // beta_raw = 0 -> beta = 1/2
    Mat2 g;
    g << 0.7, 0.2, 0.2, -0.3;
    CHECK(std::abs(chain_to_params(g, p)[1]) < 1e-15);
  }

  SUBCASE("matches finite differences through filters and parameterization") {
    CounterRng rng(45);
    for (int i = 0; i < 50; ++i) {
      CovarianceParams p{rng.uniform(-2.0, 2.0), rng.uniform(-3.0, 3.0), rng.uniform(-2.0, 2.0)};
      Mat2 g;
      const double a = rng.next_gaussian(), b = rng.next_gaussian(), c = rng.next_gaussian();
      g << a, b, b, c;
      const Vec3 analytic = chain_to_params(g, p);
      const Eigen::VectorXd fd = oracles::central_difference(
          [&](const Eigen::VectorXd& v) {
            const CovarianceParams q{v[0], v[1], v[2]};
            return (g.array() * q.cov().array()).sum();
          },
          (Eigen::VectorXd(3) << p.s_raw, p.alpha_raw, p.beta_raw).finished(), 1e-6);
      CHECK((analytic - Vec3(fd)).norm() < 1e-6 * std::max(1.0, fd.norm()));
    }
  }
}

TEST_CASE("pullback through the unprojection Jacobian matches finite differences") {
  const Camera cam{720.0, 720.0, 620.0, 185.0};
  CounterRng rng(46);
  const Vec2 p(400.0, 200.0);
  Mat3 g3;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) g3(r, c) = rng.next_gaussian();
  g3 = 0.5 * (g3 + g3.transpose()).eval();
  const Mat2 pulled = pullback_cov_gradient(g3, p, cam);
  // Directional check: d/dt <g3, propagate(cov + t*dcov)> = <pulled, dcov>.
  for (int trial = 0; trial < 5; ++trial) {
    Mat2 dcov;
    const double a = rng.next_gaussian(), b = rng.next_gaussian(), c = rng.next_gaussian();
    dcov << a, b, b, c;
    const double h = 1e-6;
    Mat2 base = Mat2::Identity();
    const double fplus = (g3.array() * propagate_cov(p, base + h * dcov, cam).array()).sum();
    const double fminus = (g3.array() * propagate_cov(p, base - h * dcov, cam).array()).sum();
    const double fd = (fplus - fminus) / (2.0 * h);
    CHECK(std::abs((pulled.array() * dcov.array()).sum() - fd) < 1e-8 * std::max(1.0, std::abs(fd)));
  }
}

TEST_CASE("gradient eigenvector directions: fixed geometry concentrates, random spreads") {
  // Circular-histogram entropy of dL/dSigma'_2D eigenvector angles over many
  // samples: fixed problem geometry concentrates them in a few modes while
  // randomized relative poses spread them out.
  const auto entropy_of = [](const std::vector<double>& angles) {
    constexpr int kBins = 36;
    std::vector<double> hist(kBins, 0.0);
    for (double a : angles) {
      double wrapped = std::fmod(a, M_PI);
      if (wrapped < 0.0) wrapped += M_PI;
      const int bin = std::min(kBins - 1, static_cast<int>(wrapped / M_PI * kBins));
      hist[bin] += 1.0;
    }
    double h = 0.0;
    for (double count : hist) {
      if (count <= 0.0) continue;
      const double p = count / static_cast<double>(angles.size());
      h -= p * std::log(p);
    }
    return h;
  };

  const auto collect_angles = [&](bool randomize_pose, uint64_t seed) {
    SceneConfig scene = oracles::default_scene(seed, 25);
    scene.pose_mode = randomize_pose ? PoseMode::kRandomSecondFrame : PoseMode::kFixed;
    const SyntheticProblem base = generate_problem(scene);
    std::vector<double> angles;
    CounterRng rng(seed);
    int batch = 0;
    while (angles.size() < 1000) {
      ++batch;
      const uint64_t pseed = CounterRng(seed).split(batch).next_u64();
      const SyntheticProblem prob = randomize_pose
                                        ? resample_pose_and_noise(base, scene, pseed)
                                        : resample_noise(base, pseed);
      const auto bps = to_bearing_pairs_gt(prob);
      const PnecSymObjective objective(bps, kReg);
      LmOptions lm;
      lm.max_iterations = 150;
      lm.initial_damping = 1e4;
      const LmResult solved =
          lm_minimize(objective, perturb_pose(prob.gt_pose, 0.01, pseed), lm);
      const RelativePose star = refine_rotation_to_stationarity(bps, solved.pose, kReg, 1e-9);
      const auto result = implicit_covariance_gradient(bps, star, prob.gt_pose.R, {});
      if (result.skipped_zero_loss) continue;
      for (size_t i = 0; i < bps.size() && angles.size() < 1000; ++i) {
        const Mat2 g2 =
            pullback_cov_gradient(result.grads[i].d_cov2, prob.points[i].noisy2, prob.camera);
        Eigen::SelfAdjointEigenSolver<Mat2> eig(g2);
        const Vec2 v = eig.eigenvectors().col(1);
        angles.push_back(std::atan2(v.y(), v.x()));
      }
    }
    return entropy_of(angles);
  };

  const double fixed_entropy = collect_angles(false, 71);
  const double random_entropy = collect_angles(true, 72);
  CHECK(random_entropy > fixed_entropy);
}

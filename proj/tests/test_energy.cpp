#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "oracles.hpp"
#include "pnec/energy.hpp"
#include "pnec/geometry.hpp"
#include "pnec/rng.hpp"
#include "pnec/synthgen.hpp"

using namespace pnec;

namespace {

BearingPair random_bearing_pair(CounterRng& rng, double cov_scale) {
  BearingPair bp;
  bp.f1 = Vec3(rng.next_gaussian(), rng.next_gaussian(), rng.next_gaussian()).normalized();
  bp.f2 = Vec3(rng.next_gaussian(), rng.next_gaussian(), rng.next_gaussian()).normalized();
  Mat3 sq1, sq2;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) {
      sq1(r, c) = cov_scale * rng.next_gaussian();
      sq2(r, c) = cov_scale * rng.next_gaussian();
    }
  bp.cov1 = sq1 * sq1.transpose();
  bp.cov2 = sq2 * sq2.transpose();
  return bp;
}

RelativePose random_pose(CounterRng& rng, double angle_scale = 1.0) {
  RelativePose pose;
  pose.R = so3_exp(angle_scale *
                   Vec3(rng.next_gaussian(), rng.next_gaussian(), rng.next_gaussian()));
  pose.t = Vec3(rng.next_gaussian(), rng.next_gaussian(), rng.next_gaussian()).normalized();
  return pose;
}

}  // namespace

TEST_CASE("nec_residual hand case and determinant oracle") {
  RelativePose pose;
  pose.R = Mat3::Identity();
  pose.t = Vec3(1, 0, 0);
  BearingPair bp;
  bp.f1 = Vec3(0, 0, 1);
  bp.f2 = Vec3(0, 1, 0);
  CHECK(nec_residual(pose, bp) == doctest::Approx(-1.0).epsilon(1e-15));

  CounterRng rng(11);
  for (int i = 0; i < 100; ++i) {
    const RelativePose p = random_pose(rng);
    const BearingPair b = random_bearing_pair(rng, 0.01);
    Mat3 m;
    m.col(0) = p.t;
    m.col(1) = b.f1;
    m.col(2) = p.R * b.f2;
    CHECK(nec_residual(p, b) == doctest::Approx(m.determinant()).epsilon(1e-12));
  }
}

TEST_CASE("nec_residual vanishes on epipolar-consistent data") {
  const auto geo = oracles::variance_geometry(720.0, 21);
  BearingPair bp;
  bp.f1 = unproject(geo.p1, geo.camera);
  bp.f2 = unproject(geo.p2, geo.camera);
  CHECK(std::abs(nec_residual(geo.pose, bp)) < 1e-12);
}

TEST_CASE("variance_asym cases") {
  CounterRng rng(12);
  const RelativePose pose = random_pose(rng);
  BearingPair bp = random_bearing_pair(rng, 0.01);

  bp.cov2 = Mat3::Zero();
  CHECK(variance_asym(pose, bp) == 0.0);

  bp.cov2 = Mat3::Identity();
  const double expected = bp.f1.cross(pose.t).squaredNorm();
  CHECK(variance_asym(pose, bp) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("variance_asym matches Monte Carlo under bearing noise") {
  CounterRng rng(13);
  for (int rep = 0; rep < 3; ++rep) {
    const RelativePose pose = random_pose(rng);
    const BearingPair bp = random_bearing_pair(rng, 0.005);
    const double analytic = variance_asym(pose, bp);
    const double mc = oracles::mc_residual_variance_bearing2(pose, bp, 1000000, 100 + rep);
    CHECK(std::abs(analytic - mc) / mc < 0.01);
  }
}

TEST_CASE("variance_sym reduces to variance_asym when cov1 is zero") {
  CounterRng rng(14);
  for (int i = 0; i < 20; ++i) {
    const RelativePose pose = random_pose(rng);
    BearingPair bp = random_bearing_pair(rng, 0.01);
    bp.cov1 = Mat3::Zero();
    const double sym = variance_sym(pose, bp);
    const double asym = variance_asym(pose, bp);
    CHECK(std::abs(sym - asym) <= 1e-15 * std::max(1.0, std::abs(asym)));

    bp.cov2 = Mat3::Zero();
    CHECK(variance_sym(pose, bp) == 0.0);
  }
}

TEST_CASE("variance_sym matches Monte Carlo at KITTI focal length") {
  // 2D pixel noise on both frames, unprojected through the full camera
  // model; the analytic value uses first-order propagation plus the
  // symmetric variance. Claimed relative error at f=720 is ~1.5e-4.
  CounterRng rng(15);
  for (int rep = 0; rep < 2; ++rep) {
    const auto geo = oracles::variance_geometry(720.0, 300 + rep);
    Mat2 sq1, sq2;
    sq1 << rng.uniform(0.4, 1.0), rng.uniform(-0.4, 0.4), 0.0, rng.uniform(0.4, 1.0);
    sq2 << rng.uniform(0.4, 1.0), rng.uniform(-0.4, 0.4), 0.0, rng.uniform(0.4, 1.0);
    const Mat2 cov1 = sq1 * sq1.transpose();
    const Mat2 cov2 = sq2 * sq2.transpose();

    BearingPair bp;
    bp.f1 = unproject(geo.p1, geo.camera);
    bp.f2 = unproject(geo.p2, geo.camera);
    bp.cov1 = propagate_cov(geo.p1, cov1, geo.camera);
    bp.cov2 = propagate_cov(geo.p2, cov2, geo.camera);
    const double analytic = variance_sym(geo.pose, bp);

    const auto mc = oracles::mc_residual_variance_2d(geo.pose, geo.p1, geo.p2, cov1, cov2,
                                                     geo.camera, 1000000, 400 + rep);
    CHECK(std::abs(analytic - mc.variance) / mc.variance < 1e-3);
  }
}

TEST_CASE("sigma_n_full: cross term small, quadratic form tighter than approximation") {
  CounterRng rng(16);
  const auto geo = oracles::variance_geometry(720.0, 17);
  Mat2 sq1, sq2;
  sq1 << 1.0, 0.3, 0.0, 0.8;
  sq2 << 0.9, -0.2, 0.0, 1.1;
  const Mat2 cov1 = sq1 * sq1.transpose();
  const Mat2 cov2 = sq2 * sq2.transpose();

  BearingPair bp;
  bp.f1 = unproject(geo.p1, geo.camera);
  bp.f2 = unproject(geo.p2, geo.camera);
  bp.cov1 = propagate_cov(geo.p1, cov1, geo.camera);
  bp.cov2 = propagate_cov(geo.p2, cov2, geo.camera);

  BearingPair zero = bp;
  zero.cov1 = Mat3::Zero();
  zero.cov2 = Mat3::Zero();
  CHECK(sigma_n_full(geo.pose, zero).isZero(0.0));

  const Mat3 sigma_n = sigma_n_full(geo.pose, bp);
  const Mat3 cov2_rot = rotate_cov(geo.pose.R, bp.cov2);
  const Mat3 tilde = cross_product_cov(bp.cov1, cov2_rot);
  CHECK(tilde.norm() / sigma_n.norm() < 1e-3);

  // The column-cross-product construction reproduces the closed form.
  const Mat3 tilde_cols = oracles::sigma_tilde_from_columns(bp.cov1, cov2_rot);
  CHECK((tilde - tilde_cols).norm() <= 1e-15 + 1e-12 * tilde.norm());

  // t^T sigma_n t tracks the Monte-Carlo variance tighter than the
  // approximation that drops the cross term.
  const auto mc = oracles::mc_residual_variance_2d(geo.pose, geo.p1, geo.p2, cov1, cov2,
                                                   geo.camera, 1000000, 18);
  const double full = geo.pose.t.dot(sigma_n * geo.pose.t);
  CHECK(std::abs(full - mc.variance) / mc.variance < 5e-4);
  CHECK(full >= variance_sym(geo.pose, bp) - 1e-18);
}

TEST_CASE("cross_product_cov matches brute-force sampling") {
  CounterRng rng(19);
  Mat3 sq1, sq2;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) {
      sq1(r, c) = rng.next_gaussian();
      sq2(r, c) = rng.next_gaussian();
    }
  const Mat3 a = sq1 * sq1.transpose();
  const Mat3 b = sq2 * sq2.transpose();
  const Mat3 analytic = cross_product_cov(a, b);

  const Mat3 la = oracles::psd_sqrt3(a);
  const Mat3 lb = oracles::psd_sqrt3(b);
  Mat3 acc = Mat3::Zero();
  const int n = 400000;
  CounterRng noise(20);
  for (int i = 0; i < n; ++i) {
    const Vec3 x = la * Vec3(noise.next_gaussian(), noise.next_gaussian(), noise.next_gaussian());
    const Vec3 y = lb * Vec3(noise.next_gaussian(), noise.next_gaussian(), noise.next_gaussian());
    const Vec3 c = x.cross(y);
    acc += c * c.transpose();
  }
  acc /= static_cast<double>(n);
  CHECK((analytic - acc).norm() / analytic.norm() < 0.02);
}

TEST_CASE("energy_sym arithmetic and scaling") {
  // Single correspondence with e = 2 and sigma^2 = 4 gives energy 1.
  RelativePose pose;
  pose.R = Mat3::Identity();
  pose.t = Vec3(1, 0, 0);
  BearingPair bp;
  bp.f1 = Vec3(0, 0, 1);
  bp.f2 = Vec3(0, -2, 0);  // e = t.(f1 x f2) = 2
  bp.cov1 = Mat3::Zero();
  // d2 = (t x f1)^T cov2 (t x f1), t x f1 = (0,-1,0): pick cov2 = 4 e_y e_y^T.
  bp.cov2 = Mat3::Zero();
  bp.cov2(1, 1) = 4.0;
  const std::vector<BearingPair> problem{bp};
  CHECK(energy_sym(pose, problem, {.regularization = 0.0}) == doctest::Approx(1.0).epsilon(1e-14));

  // Scaling all covariances by c scales the energy by 1/c.
  CounterRng rng(21);
  std::vector<BearingPair> prob2;
  const RelativePose p2 = random_pose(rng);
  for (int i = 0; i < 10; ++i) prob2.push_back(random_bearing_pair(rng, 0.01));
  const double e1 = energy_sym(p2, prob2, {.regularization = 0.0});
  for (BearingPair& b : prob2) {
    b.cov1 *= 3.0;
    b.cov2 *= 3.0;
  }
  const double e3 = energy_sym(p2, prob2, {.regularization = 0.0});
  CHECK(e3 == doctest::Approx(e1 / 3.0).epsilon(1e-12));
}

TEST_CASE("energy is zero at the true pose of noise-free problems") {
  SceneConfig cfg = oracles::default_scene(22, 40);
  cfg.noise.scale_min = cfg.noise.scale_max = 1.0;  // stored covariances stay nonzero
  SyntheticProblem problem = generate_problem(cfg);
  for (auto& pt : problem.points) {
    pt.noisy1 = pt.clean1;
    pt.noisy2 = pt.clean2;
  }
  const auto bps = to_bearing_pairs_gt(problem);
  for (const auto& bp : bps) {
    CHECK(std::abs(nec_residual(problem.gt_pose, bp)) < 1e-12);
  }
  CHECK(energy_sym(problem.gt_pose, bps) < 1e-9);
  CHECK(energy_nec_ls(problem.gt_pose, bps) < 1e-12);
}

TEST_CASE("energy_nec_ls equals the per-term oracle") {
  CounterRng rng(23);
  const RelativePose pose = random_pose(rng);
  std::vector<BearingPair> problem;
  for (int i = 0; i < 20; ++i) problem.push_back(random_bearing_pair(rng, 0.01));
  double expected = 0.0;
  for (const auto& bp : problem) {
    const double e = nec_residual(pose, bp);
    expected += e * e;
  }
  CHECK(energy_nec_ls(pose, problem) == doctest::Approx(expected).epsilon(1e-12));

  // Weighted variant.
  std::vector<double> weights(problem.size(), 2.0);
  CHECK(energy_nec_ls(pose, problem, weights) == doctest::Approx(2.0 * expected).epsilon(1e-12));
}

TEST_CASE("energy_sym is invariant to negating t") {
  CounterRng rng(24);
  for (int i = 0; i < 20; ++i) {
    RelativePose pose = random_pose(rng);
    std::vector<BearingPair> problem;
    for (int j = 0; j < 8; ++j) problem.push_back(random_bearing_pair(rng, 0.01));
    const double e_plus = energy_sym(pose, problem);
    pose.t = -pose.t;
    const double e_minus = energy_sym(pose, problem);
    CHECK(e_plus == doctest::Approx(e_minus).epsilon(1e-12));
  }
}

TEST_CASE("per-term variances are non-negative for PSD inputs") {
  CounterRng rng(25);
  for (int i = 0; i < 200; ++i) {
    const RelativePose pose = random_pose(rng);
    const BearingPair bp = random_bearing_pair(rng, 0.02);
    CHECK(variance_sym(pose, bp) >= -1e-15);
    CHECK(variance_asym(pose, bp) >= -1e-15);
  }
}

TEST_CASE("degenerate energy errors") {
  RelativePose pose;
  pose.t = Vec3(1, 0, 0);
  BearingPair bp;
  bp.f1 = Vec3(0, 0, 1);
  bp.f2 = Vec3(0, 1, 0);  // nonzero residual
  bp.cov1 = Mat3::Zero();
  bp.cov2 = Mat3::Zero();
  const std::vector<BearingPair> problem{bp};
  CHECK_THROWS_AS(energy_sym(pose, problem, {.regularization = 0.0}), NumericalError);
  CHECK_THROWS_AS(energy_sym(pose, {}, {}), InvalidInput);
  CHECK_NOTHROW(energy_sym(pose, problem));  // default regularization
}

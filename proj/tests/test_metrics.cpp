#include <doctest.h>

#include <cmath>

#include "pnec/geometry.hpp"
#include "pnec/metrics.hpp"
#include "pnec/rng.hpp"

using namespace pnec;

namespace {
Mat3 random_rotation(CounterRng& rng, double scale = 1.0) {
  return so3_exp(scale * Vec3(rng.next_gaussian(), rng.next_gaussian(), rng.next_gaussian()));
}
}  // namespace

TEST_CASE("e_rot basics") {
  CounterRng rng(31);
  const Mat3 r = random_rotation(rng);
  CHECK(e_rot(r, r) == 0.0);
  CHECK(e_rot(so3_exp(Vec3(M_PI, 0, 0)) * r, r) == doctest::Approx(M_PI).epsilon(1e-7));

  for (int i = 0; i < 50; ++i) {
    const Mat3 a = random_rotation(rng), b = random_rotation(rng);
    CHECK(e_rot(a, b) == doctest::Approx(so3_log(b.transpose() * a).norm()).epsilon(1e-12));
    CHECK(e_rot(a, b) == doctest::Approx(e_rot(b, a)).epsilon(1e-9));
  }
}

TEST_CASE("e_rot triangle inequality") {
  CounterRng rng(32);
  for (int i = 0; i < 100; ++i) {
    const Mat3 a = random_rotation(rng), b = random_rotation(rng), c = random_rotation(rng);
    CHECK(e_rot(a, c) <= e_rot(a, b) + e_rot(b, c) + 1e-9);
  }
}

namespace {
Trajectory random_trajectory(CounterRng& rng, int n) {
  Trajectory out(n);
  for (int i = 1; i < n; ++i) {
    out[i].R = out[i - 1].R * random_rotation(rng, 0.1);
    out[i].position = out[i - 1].position + Vec3(1, 0, 0);
  }
  return out;
}
}  // namespace

TEST_CASE("rpe1 cases") {
  CounterRng rng(33);
  const Trajectory gt = random_trajectory(rng, 10);
  CHECK(rpe1_deg(gt, gt) == 0.0);

  // Every frame-to-frame estimate off by exactly 0.1 degrees.
  const double off = 0.1 * M_PI / 180.0;
  Trajectory est(gt.size());
  est[0] = gt[0];
  for (size_t i = 1; i < gt.size(); ++i) {
    const Mat3 rel = gt[i - 1].R.transpose() * gt[i].R;
    est[i].R = est[i - 1].R * (rel * so3_exp(Vec3(0, 0, off)));
    est[i].position = gt[i].position;
  }
  CHECK(rpe1_deg(est, gt) == doctest::Approx(0.1).epsilon(1e-9));

  // Naive loop oracle on a random pair.
  const Trajectory est2 = random_trajectory(rng, 10);
  double acc = 0.0;
  for (size_t i = 0; i + 1 < gt.size(); ++i) {
    acc += e_rot(est2[i].R.transpose() * est2[i + 1].R, gt[i].R.transpose() * gt[i + 1].R);
  }
  acc = acc / (gt.size() - 1) * 180.0 / M_PI;
  CHECK(rpe1_deg(est2, gt) == doctest::Approx(acc).epsilon(1e-12));

  Trajectory shorter(gt.begin(), gt.end() - 1);
  CHECK_THROWS_AS(rpe1_deg(shorter, gt), InvalidInput);
}

TEST_CASE("rpen telescoping and endpoint identity") {
  CounterRng rng(34);
  const Trajectory gt = random_trajectory(rng, 8);
  CHECK(rpen_deg(gt, gt) == 0.0);

  // Alternating +/-0.1 degree per-frame errors about one shared axis cancel
  // in the endpoint composition but not in rpe1. A z-only trajectory keeps
  // everything commuting so both values are exact. 9 poses = 8 steps (even).
  const double off = 0.1 * M_PI / 180.0;
  Trajectory gt9(9), est9(9);
  for (size_t i = 1; i < gt9.size(); ++i) {
    gt9[i].R = gt9[i - 1].R * so3_exp(Vec3(0, 0, 2.0 * M_PI / 180.0));
    gt9[i].position = gt9[i - 1].position + Vec3(1, 0, 0);
  }
  est9[0] = gt9[0];
  for (size_t i = 1; i < gt9.size(); ++i) {
    const double sign = (i % 2 == 1) ? 1.0 : -1.0;
    const Mat3 rel_est = gt9[i - 1].R.transpose() * gt9[i].R * so3_exp(Vec3(0, 0, sign * off));
    est9[i].R = est9[i - 1].R * rel_est;
    est9[i].position = gt9[i].position;
  }
  CHECK(rpen_deg(est9, gt9) < 1e-9);
  CHECK(rpe1_deg(est9, gt9) == doctest::Approx(0.1).epsilon(1e-9));

  // Definitional identity with the composed endpoints.
  const Trajectory est2 = random_trajectory(rng, 8);
  const double expected =
      e_rot(est2.front().R.transpose() * est2.back().R, gt.front().R.transpose() * gt.back().R) *
      180.0 / M_PI;
  CHECK(rpen_deg(est2, gt) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("e_t cases") {
  CHECK(*e_t_deg(Vec3(1, 0, 0), Vec3(2, 0, 0)) == doctest::Approx(0.0));
  CHECK(*e_t_deg(Vec3(1, 0, 0), Vec3(-3, 0, 0)) == doctest::Approx(0.0));
  CHECK(*e_t_deg(Vec3(1, 0, 0), Vec3(0, 1, 0)) == doctest::Approx(90.0));
  CHECK(!e_t_deg(Vec3(1, 0, 0), Vec3(1e-5, 0, 0)).has_value());
}

TEST_CASE("sigma_norm_error scale invariance and oracle") {
  const std::vector<double> truth{1.0, 2.0, 3.0, 4.0};
  CHECK(sigma_norm_error(truth, truth) == 0.0);

  std::vector<double> scaled = truth;
  for (double& v : scaled) v *= 17.5;
  CHECK(sigma_norm_error(scaled, truth) == doctest::Approx(0.0).epsilon(1e-15));

  CounterRng rng(35);
  std::vector<double> a(6), b(6);
  for (int i = 0; i < 6; ++i) {
    a[i] = rng.uniform(0.1, 2.0);
    b[i] = rng.uniform(0.1, 2.0);
  }
  double sa = 0.0, sb = 0.0;
  for (int i = 0; i < 6; ++i) {
    sa += a[i];
    sb += b[i];
  }
  double expected = 0.0;
  for (int i = 0; i < 6; ++i) expected += std::abs(6.0 * a[i] / sa - 6.0 * b[i] / sb);
  expected /= 6.0;
  CHECK(sigma_norm_error(a, b) == doctest::Approx(expected).epsilon(1e-14));

  const std::vector<double> zeros(4, 0.0);
  CHECK_THROWS_AS(sigma_norm_error(zeros, truth), InvalidInput);
}

#include "pnec/energy.hpp"

#include <cmath>

#include "pnec/geometry.hpp"

namespace pnec {

double nec_residual(const RelativePose& pose, const BearingPair& bp) {
  return pose.t.dot(bp.f1.cross(pose.R * bp.f2));
}

double variance_asym(const RelativePose& pose, const BearingPair& bp) {
  // t^T f̂ R cov2 R^T f̂^T t with f̂^T t = t x f1.
  const Vec3 a = pose.t.cross(bp.f1);
  return a.dot(pose.R * bp.cov2 * pose.R.transpose() * a);
}

double variance_sym(const RelativePose& pose, const BearingPair& bp) {
  const EnergyTerm term = energy_term(pose, bp, 0.0);
  return term.d1 + term.d2;
}

EnergyTerm energy_term(const RelativePose& pose, const BearingPair& bp, double regularization) {
  EnergyTerm out;
  const Vec3 g = pose.R * bp.f2;
  const Vec3 h = g.cross(pose.t);        // skew(R f2)^T t
  const Vec3 a = pose.t.cross(bp.f1);    // skew(f1)^T t
  out.e = pose.t.dot(bp.f1.cross(g));
  out.d1 = h.dot(bp.cov1 * h);
  out.d2 = a.dot(pose.R * bp.cov2 * pose.R.transpose() * a);
  out.denom = out.d1 + out.d2 + regularization;
  return out;
}

Mat3 cross_product_cov(const Mat3& A, const Mat3& B) {
  const double tr_a = A.trace();
  const double tr_b = B.trace();
  const Mat3 ab = A * B;
  Mat3 out = (tr_a * tr_b - ab.trace()) * Mat3::Identity() - tr_b * A - tr_a * B + ab +
             B * A;
  return 0.5 * (out + out.transpose());
}

Mat3 sigma_n_full(const RelativePose& pose, const BearingPair& bp) {
  const Mat3 g_hat = skew(pose.R * bp.f2);
  const Mat3 f_hat = skew(bp.f1);
  const Mat3 cov2_rot = rotate_cov(pose.R, bp.cov2);
  Mat3 out = g_hat * bp.cov1 * g_hat.transpose() + f_hat * cov2_rot * f_hat.transpose() +
             cross_product_cov(bp.cov1, cov2_rot);
  return 0.5 * (out + out.transpose());
}

double energy_sym(const RelativePose& pose, std::span<const BearingPair> problem,
                  const EnergyConfig& cfg) {
  if (problem.empty()) throw InvalidInput("energy_sym needs at least one correspondence");
  double energy = 0.0;
  bool any_valid = false;
  for (const BearingPair& bp : problem) {
    const EnergyTerm term = energy_term(pose, bp, cfg.regularization);
    if (term.denom > 0.0) {
      energy += term.e * term.e / term.denom;
      any_valid = true;
    } else if (term.e != 0.0) {
      throw NumericalError("zero residual variance with nonzero residual and no regularization");
    }
  }
  if (!any_valid) throw NumericalError("all residual variances are zero; energy is ill-posed");
  return energy;
}

double energy_nec_ls(const RelativePose& pose, std::span<const BearingPair> problem,
                     std::span<const double> weights) {
  if (problem.empty()) throw InvalidInput("energy_nec_ls needs at least one correspondence");
  if (!weights.empty() && weights.size() != problem.size())
    throw InvalidInput("weight count must match correspondence count");
  double energy = 0.0;
  for (size_t i = 0; i < problem.size(); ++i) {
    const double e = nec_residual(pose, problem[i]);
    const double w = weights.empty() ? 1.0 : weights[i];
    energy += w * e * e;
  }
  return energy;
}

}  // namespace pnec

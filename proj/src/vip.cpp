#include "flowvi/vip.hpp"

#include <cmath>

namespace flowvi {

std::vector<double> vip_inverse(const ModelGraph& model, std::span<const double> lambda, std::span<const double> z) {
  const std::size_t d = model.dim();
  if (lambda.size() != d || z.size() != d) throw std::invalid_argument("vip_inverse: length mismatch");
  std::vector<double> zt(d), scratch;
  for (std::size_t i = 0; i < d; ++i) {
    if (!model.sites[i].gaussian()) {
      zt[i] = z[i];
      continue;
    }
    const PriorMoments<double> pm = prior_moments(model, i, z, scratch);
    const double inv_scale = std::exp(-(1.0 - lambda[i]) * pm.log_scale);
    if (!std::isfinite(inv_scale) || inv_scale == 0.0) {
      throw ad::NumericDomainError("vip_inverse: scale out of range at coordinate " + std::to_string(i + 1));
    }
    zt[i] = lambda[i] * pm.mean + (z[i] - pm.mean) * inv_scale;
  }
  return zt;
}

VipSample sample_q_vip(const AffineBase& base, std::span<const double> lambda, const ModelGraph& model,
                       std::span<const double> eps) {
  if (base.dim() != model.dim()) throw std::invalid_argument("sample_q_vip: base and model dimensions differ");
  const FlowDraw<double> b = full_rank_forward(base, eps);
  VipDraw<double> v = vip_transform<double>(model, lambda, b.z);
  VipSample out;
  double log_qw = -b.logdet;
  for (double e : eps) log_qw += std_normal_logpdf(e);
  out.z = std::move(v.z);
  out.z_tilde = b.z;
  out.log_jacobian = v.log_jacobian;
  out.log_q = log_qw - v.log_jacobian;
  return out;
}

GfafStep gfaf_params_from_vip(const ModelGraph& model, const Eigen::VectorXd& mu, const Eigen::MatrixXd& L,
                              std::span<const double> lambda, std::span<const double> z_prefix,
                              std::span<const double> eps_prefix, std::size_t i, Theorem1Mutation mutation) {
  if (i >= model.dim() || z_prefix.size() != i || eps_prefix.size() != i) {
    throw std::invalid_argument("gfaf_params_from_vip: prefix lengths must equal the step index");
  }
  // parents all precede i, so the prefix is enough
  std::vector<double> z(model.dim(), 0.0), scratch;
  std::copy(z_prefix.begin(), z_prefix.end(), z.begin());
  const PriorMoments<double> pm = prior_moments(model, i, std::span<const double>(z), scratch);
  const auto ii = static_cast<Eigen::Index>(i);
  const double lii = L(ii, ii);
  const double lam = lambda[i];

  double cross = 0.0;
  for (std::size_t j = 0; j < i; ++j) cross += L(ii, static_cast<Eigen::Index>(j)) * eps_prefix[j];

  GfafStep s;
  s.m = mutation == Theorem1Mutation::ShiftFromMu ? mu(ii) : pm.mean;
  s.log_s = std::log(lii) + (mutation == Theorem1Mutation::DropOneMinusLambda ? 1.0 : 1.0 - lam) * pm.log_scale;
  const double lf = mutation == Theorem1Mutation::DropLambdaInT ? pm.mean : lam * pm.mean;
  const double m0 = mutation == Theorem1Mutation::DropMuInT ? 0.0 : mu(ii);
  const double c = mutation == Theorem1Mutation::DropPrefixInT ? 0.0 : cross;
  s.t = (lf - m0 - c) / lii;
  return s;
}

}  // namespace flowvi

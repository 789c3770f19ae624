#pragma once

// Partial non-centering of conditionally Gaussian sites:
//
//   z_i = f_i + g_i^(1 - lambda_i) (zt_i - lambda_i f_i),   f_i, g_i evaluated at the parents of z_i.
//
// lambda = 1 is the centered model, lambda = 0 fully non-centered. Sites with a
// custom prior pass through unchanged.

#include <span>
#include <string>
#include <vector>

#include "flowvi/flows.hpp"
#include "flowvi/model.hpp"
#include "flowvi/scalar.hpp"

namespace flowvi {

template <class T>
struct VipDraw {
  std::vector<T> z;
  T log_jacobian = T(0.0);  // sum (1 - lambda_i) log g_i along the path
};

template <class T>
VipDraw<T> vip_transform(const ModelGraph& model, std::span<const T> lambda, std::span<const T> zt) {
  using std::exp;
  using ad::exp;
  const std::size_t d = model.dim();
  if (lambda.size() != d || zt.size() != d) throw std::invalid_argument("vip_transform: length mismatch");
  VipDraw<T> out;
  out.z.assign(d, T(0.0));
  std::vector<T> scratch, logs;
  logs.reserve(d);
  for (std::size_t i = 0; i < d; ++i) {
    if (!model.sites[i].gaussian()) {
      out.z[i] = zt[i];
      continue;
    }
    const PriorMoments<T> pm = prior_moments(model, i, std::span<const T>(out.z), scratch);
    if (!std::isfinite(value_of(pm.log_scale)) || !std::isfinite(value_of(pm.mean))) {
      throw ad::NumericDomainError("vip_transform: non-finite prior moments at coordinate " + std::to_string(i + 1));
    }
    const T a = (T(1.0) - lambda[i]) * pm.log_scale;
    out.z[i] = pm.mean + exp(a) * (zt[i] - lambda[i] * pm.mean);
    if (!std::isfinite(value_of(out.z[i]))) {
      throw ad::NumericDomainError("vip_transform: non-finite value at coordinate " + std::to_string(i + 1));
    }
    logs.push_back(a);
  }
  out.log_jacobian = sum(std::span<const T>(logs));
  return out;
}

// zt_i = lambda_i f_i + (z_i - f_i) / g_i^(1 - lambda_i)
std::vector<double> vip_inverse(const ModelGraph& model, std::span<const double> lambda, std::span<const double> z);

// log p_VIP(zt, x) = sum log N(zt_i | lambda_i f_i, g_i^lambda_i) + log p(x | z), z = vip_transform(zt).
template <class T>
T log_p_vip(const ModelGraph& model, std::span<const T> lambda, std::span<const T> zt) {
  const VipDraw<T> draw = vip_transform(model, lambda, zt);
  std::vector<T> scratch, terms;
  terms.reserve(model.dim() + 1);
  for (std::size_t i = 0; i < model.dim(); ++i) {
    const PriorMoments<T> pm = prior_moments(model, i, std::span<const T>(draw.z), scratch);
    if (!model.sites[i].gaussian()) {
      terms.push_back(log_prior_term(model, i, zt[i], pm));
      continue;
    }
    terms.push_back(normal_logpdf_logscale(zt[i], lambda[i] * pm.mean, lambda[i] * pm.log_scale));
  }
  terms.push_back(log_likelihood(model, std::span<const T>(draw.z)));
  return require_finite(sum(std::span<const T>(terms)), "log_p_vip");
}

struct VipSample {
  std::vector<double> z;
  std::vector<double> z_tilde;
  double log_jacobian = 0.0;
  double log_q = 0.0;  // log q_w(zt) - log_jacobian
};

// Gaussian base zt = mu + L eps followed by the VIP transform.
VipSample sample_q_vip(const AffineBase& base, std::span<const double> lambda, const ModelGraph& model,
                       std::span<const double> eps);

// Broken variants of the construction below, used to show the certification
// actually detects formula errors.
enum class Theorem1Mutation { None, DropOneMinusLambda, DropLambdaInT, DropMuInT, DropPrefixInT, ShiftFromMu };

struct GfafStep {
  double m = 0.0;
  double log_s = 0.0;
  double t = 0.0;
};

// Affine GFAF parameters of step i (0-based) reproducing vip_transform(mu + L eps):
//   m_i = f_i,  log s_i = log L_ii + (1 - lambda_i) log g_i,
//   t_i = (lambda_i f_i - mu_i - L_{i,<i} eps_<i) / L_ii.
GfafStep gfaf_params_from_vip(const ModelGraph& model, const Eigen::VectorXd& mu, const Eigen::MatrixXd& L,
                              std::span<const double> lambda, std::span<const double> z_prefix,
                              std::span<const double> eps_prefix, std::size_t i,
                              Theorem1Mutation mutation = Theorem1Mutation::None);

}  // namespace flowvi

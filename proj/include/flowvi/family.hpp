#pragma once

// One entry point for every variational family: eps -> (z, log q(z)).

#include <span>
#include <vector>

#include "flowvi/flows.hpp"
#include "flowvi/vip.hpp"

namespace flowvi {

template <class T>
struct FamilySample {
  std::vector<T> z;
  T log_q = T(0.0);
  std::size_t clamp_events = 0;
};

// lambda_i = sigmoid(raw_i); sites with a custom prior keep lambda = 0.
template <class T>
std::vector<T> vip_lambda(const ParamLayout& layout, const ModelGraph& model, std::span<const T> params) {
  std::vector<T> lam(layout.dim(), T(0.0));
  for (std::size_t i = 0; i < layout.dim(); ++i) {
    if (model.sites[i].gaussian()) lam[i] = sigmoid(params[layout.lambda(i)]);
  }
  return lam;
}

template <class T>
FamilySample<T> sample_family(const FlowSpec& spec, const ParamLayout& layout, const ModelGraph& model,
                              std::span<const T> params, std::span<const double> eps) {
  if (params.size() != layout.size()) throw std::invalid_argument("sample_family: parameter length mismatch");
  if (model.dim() != spec.dim) throw std::invalid_argument("sample_family: model and family dimensions differ");
  FlowDraw<T> draw = spec.autoregressive() ? autoregressive_forward<T>(spec, layout, &model, params, eps)
                                           : affine_base_forward<T>(layout, params, eps);
  double base_lp = 0.0;
  for (double e : eps) base_lp += std_normal_logpdf(e);
  FamilySample<T> out;
  out.clamp_events = draw.clamp_events;
  out.log_q = T(base_lp) - draw.logdet;
  if (spec.vip) {
    const std::vector<T> lam = vip_lambda<T>(layout, model, params);
    VipDraw<T> v = vip_transform<T>(model, lam, draw.z);
    out.z = std::move(v.z);
    out.log_q = out.log_q - v.log_jacobian;
  } else {
    out.z = std::move(draw.z);
  }
  return out;
}

// log p(z, x) - log q(z) for one base draw.
template <class T>
T log_weight(const FlowSpec& spec, const ParamLayout& layout, const ModelGraph& model, std::span<const T> params,
             std::span<const double> eps, std::size_t* clamp_events = nullptr) {
  FamilySample<T> s = sample_family<T>(spec, layout, model, params, eps);
  if (clamp_events) *clamp_events += s.clamp_events;
  return log_joint<T>(model, std::span<const T>(s.z)) - s.log_q;
}

}  // namespace flowvi

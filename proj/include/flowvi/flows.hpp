#pragma once

// Invertible maps from base noise eps ~ N(0, I) to latents z.
//
// Affine families (MF, FR):   z = mu + L eps.
// Autoregressive families, one layer, processed in a fixed coordinate order:
//
//   z_i = m_i(u_i) + exp(log s_i(u_i)) * (eps_i - t_i([u_i, eps_prefix]))
//
// where u_i holds the previously generated values (z, or eps for the
// IAF-like variants) zero-padded to D slots, optionally followed by the
// model's prior mean f_i and log-scale log g_i. FAF, IAF, GFAF and every MIF
// ablation are flag combinations of this one recurrence.

#include <Eigen/Dense>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "flowvi/model.hpp"
#include "flowvi/scalar.hpp"

namespace flowvi {

enum class FamilyTag { MF, FR, FAF, IAF, GFAF, MIF };

struct MifFlags {
  bool use_translation = true;
  bool use_prior_inputs = true;
  bool respect_order = true;
  bool eps_conditioning = false;
  bool operator==(const MifFlags&) const = default;
};

struct FlowSpec {
  FamilyTag family = FamilyTag::FR;
  std::size_t dim = 0;
  std::size_t hidden = 0;        // hidden width of the nonlinear conditioner part, 0 = affine
  bool vip = false;              // VIP transform after the base (MF and FR only)
  std::optional<MifFlags> mif;   // present iff family == MIF

  static FlowSpec make(FamilyTag family, std::size_t dim, std::size_t hidden = 0);
  static FlowSpec make_mif(std::size_t dim, MifFlags flags, std::size_t hidden = 0);
  static FlowSpec make_vip(FamilyTag base, std::size_t dim);

  void validate() const;
  bool autoregressive() const { return family != FamilyTag::MF && family != FamilyTag::FR; }
  std::string label() const;
  bool operator==(const FlowSpec&) const = default;
};

// "MF", "FR", "MF-VIP", "FR-VIP", "FAF", "IAF", "GFAF", "MIF".
FlowSpec parse_family(const std::string& name, std::size_t dim, std::size_t hidden = 0);
std::string family_name(FamilyTag tag);

enum class CondKind { Shift = 0, LogScale = 1, Translation = 2 };

// Conditioner parameter block:
//   [linear weights (arity), linear bias,
//    W1 (hidden x arity, row-major), b1 (hidden), w2 (hidden), b2]   (MLP part iff hidden > 0)
struct ConditionerShape {
  std::size_t arity = 0;
  std::size_t hidden = 0;

  std::size_t size() const { return arity + 1 + (hidden ? hidden * (arity + 2) + 1 : 0); }
  std::size_t bias() const { return arity; }
  std::size_t w1(std::size_t j, std::size_t c) const { return arity + 1 + j * arity + c; }
  std::size_t b1(std::size_t j) const { return arity + 1 + hidden * arity + j; }
  std::size_t w2(std::size_t j) const { return arity + 1 + hidden * (arity + 1) + j; }
  std::size_t b2() const { return arity + 1 + hidden * (arity + 2); }
};

// Evaluates a conditioner on the active input columns `cols` with values `x`.
// Inactive columns are the zero padding and contribute nothing.
template <class T>
T apply_conditioner(const ConditionerShape& shape, std::span<const T> p,
                    std::span<const std::size_t> cols, std::span<const T> x, std::vector<T>& scratch) {
  scratch.clear();
  for (std::size_t c : cols) scratch.push_back(p[c]);
  T out = dot(p[shape.bias()], std::span<const T>(scratch), x);
  if (shape.hidden == 0) return out;
  std::vector<T> h(shape.hidden);
  for (std::size_t j = 0; j < shape.hidden; ++j) {
    scratch.clear();
    for (std::size_t c : cols) scratch.push_back(p[shape.w1(j, c)]);
    h[j] = relu(dot(p[shape.b1(j)], std::span<const T>(scratch), x));
  }
  const T mlp = dot(p[shape.b2()], p.subspan(shape.w2(0), shape.hidden), std::span<const T>(h));
  return out + mlp;
}

// Offsets of every parameter block inside the flat parameter vector.
class ParamLayout {
 public:
  explicit ParamLayout(const FlowSpec& spec);

  std::size_t size() const { return size_; }
  std::size_t dim() const { return dim_; }

  bool has_base() const { return has_base_; }
  bool diagonal() const { return diagonal_; }
  bool has_lambda() const { return has_lambda_; }
  std::size_t mu(std::size_t i) const { return mu_ + i; }
  // Raw entry (i, j), j <= i, of the Cholesky factor; the diagonal is log L_ii.
  std::size_t chol(std::size_t i, std::size_t j) const;
  std::size_t lambda(std::size_t i) const { return lambda_ + i; }

  bool has(CondKind k) const { return shapes_[static_cast<int>(k)].has_value(); }
  const ConditionerShape& shape(CondKind k) const;
  std::size_t offset(std::size_t step, CondKind k) const;

  // Conditioning slots: prefix slots [0, D), prior slots D and D+1 when present.
  std::size_t prior_slot() const { return dim_; }

 private:
  std::size_t dim_ = 0;
  std::size_t size_ = 0;
  bool has_base_ = false, diagonal_ = false, has_lambda_ = false;
  std::size_t mu_ = 0, chol_ = 0, lambda_ = 0;
  std::optional<ConditionerShape> shapes_[3];
  std::size_t block_ = 0;  // conditioner parameters per step
  std::size_t cond_ = 0;   // start of the conditioner region
};

// Mutable view onto one conditioner block; handy for hand-set weights.
std::span<double> conditioner_params(const ParamLayout& layout, std::span<double> params, std::size_t step,
                                     CondKind kind);

// mu + L eps with L lower-triangular, L_ii > 0.
struct AffineBase {
  Eigen::VectorXd mu;
  Eigen::MatrixXd L;

  std::size_t dim() const { return static_cast<std::size_t>(mu.size()); }
  static AffineBase identity(std::size_t dim);
  // Reads mu and raw L (diag = exp(raw)) from a parameter vector.
  static AffineBase from_params(const ParamLayout& layout, std::span<const double> params);
  void to_params(const ParamLayout& layout, std::span<double> params) const;
};

template <class T>
struct FlowDraw {
  std::vector<T> z;
  T logdet = T(0.0);  // log |det dz/deps|
  std::size_t clamp_events = 0;
};

inline constexpr double kLogScaleClamp = 30.0;

namespace detail {

struct ArConfig {
  bool eps_inputs = false;
  bool prior_inputs = false;
  bool translation = false;
  bool reversed = false;
};

ArConfig ar_config(const FlowSpec& spec);

template <class T>
T clamp_log_scale(const T& ls, std::size_t& events) {
  const double v = value_of(ls);
  if (v > kLogScaleClamp) {
    ++events;
    return T(kLogScaleClamp);
  }
  if (v < -kLogScaleClamp) {
    ++events;
    return T(-kLogScaleClamp);
  }
  return ls;
}

}  // namespace detail

// Processing order of the autoregressive loop.
std::vector<std::size_t> processing_order(const FlowSpec& spec);

template <class T>
FlowDraw<T> affine_base_forward(const ParamLayout& layout, std::span<const T> params,
                                std::span<const double> eps) {
  using std::exp;
  using ad::exp;
  const std::size_t d = layout.dim();
  FlowDraw<T> out;
  out.z.resize(d);
  std::vector<T> row, noise;
  std::vector<T> diag_raw(d);
  for (std::size_t i = 0; i < d; ++i) {
    const T raw = params[layout.chol(i, i)];
    diag_raw[i] = raw;
    if (layout.diagonal()) {
      out.z[i] = params[layout.mu(i)] + exp(raw) * T(eps[i]);
      continue;
    }
    row.clear();
    noise.clear();
    for (std::size_t j = 0; j < i; ++j) {
      row.push_back(params[layout.chol(i, j)]);
      noise.push_back(T(eps[j]));
    }
    row.push_back(exp(raw));
    noise.push_back(T(eps[i]));
    out.z[i] = dot(params[layout.mu(i)], std::span<const T>(row), std::span<const T>(noise));
  }
  out.logdet = sum(std::span<const T>(diag_raw));
  return out;
}

// The single autoregressive recurrence behind FAF / IAF / GFAF / MIF.
// `model` is required when the spec feeds prior inputs.
template <class T>
FlowDraw<T> autoregressive_forward(const FlowSpec& spec, const ParamLayout& layout, const ModelGraph* model,
                                   std::span<const T> params, std::span<const double> eps) {
  using std::exp;
  using ad::exp;
  const detail::ArConfig cfg = detail::ar_config(spec);
  const std::size_t d = spec.dim;
  if (eps.size() != d) throw std::invalid_argument("autoregressive_forward: eps has wrong length");
  if (cfg.prior_inputs && (!model || model->dim() != d)) {
    throw std::invalid_argument("autoregressive_forward: prior inputs need a model of matching dimension");
  }
  const std::vector<std::size_t> order = processing_order(spec);

  FlowDraw<T> out;
  out.z.assign(d, T(0.0));
  std::vector<T> log_scales;
  log_scales.reserve(d);

  std::vector<std::size_t> u_cols, t_cols;
  std::vector<T> u_vals, t_vals, scratch, prior_scratch;
  const std::size_t t_eps_base = layout.has(CondKind::Translation)
                                     ? layout.shape(CondKind::Translation).arity - d
                                     : 0;
  for (std::size_t k = 0; k < d; ++k) {
    const std::size_t i = order[k];
    if (k > 0) {
      const std::size_t prev = order[k - 1];
      u_cols.push_back(k - 1);
      u_vals.push_back(cfg.eps_inputs ? T(eps[prev]) : out.z[prev]);
    }
    std::vector<std::size_t> cols = u_cols;
    std::vector<T> vals = u_vals;
    if (cfg.prior_inputs) {
      // parents not generated yet read as zero
      const PriorMoments<T> pm = prior_moments(*model, i, std::span<const T>(out.z), prior_scratch);
      cols.push_back(layout.prior_slot());
      vals.push_back(pm.mean);
      cols.push_back(layout.prior_slot() + 1);
      vals.push_back(pm.log_scale);
    }
    auto cond = [&](CondKind kind, std::span<const std::size_t> c, std::span<const T> x) {
      const ConditionerShape& sh = layout.shape(kind);
      return apply_conditioner(sh, params.subspan(layout.offset(k, kind), sh.size()), c, x, scratch);
    };
    const T m = cond(CondKind::Shift, cols, vals);
    const T ls = detail::clamp_log_scale(cond(CondKind::LogScale, cols, vals), out.clamp_events);
    T shifted_eps = T(eps[i]);
    if (cfg.translation) {
      t_cols = cols;
      t_vals = vals;
      for (std::size_t j = 0; j < k; ++j) {
        t_cols.push_back(t_eps_base + j);
        t_vals.push_back(T(eps[order[j]]));
      }
      shifted_eps = shifted_eps - cond(CondKind::Translation, t_cols, t_vals);
    }
    out.z[i] = m + exp(ls) * shifted_eps;
    log_scales.push_back(ls);
  }
  out.logdet = sum(std::span<const T>(log_scales));
  return out;
}

// --- plain-double operations --------------------------------------------

FlowDraw<double> full_rank_forward(const AffineBase& base, std::span<const double> eps);
FlowDraw<double> faf_forward(const FlowSpec& spec, std::span<const double> params, std::span<const double> eps);
FlowDraw<double> iaf_forward(const FlowSpec& spec, std::span<const double> params, std::span<const double> eps);
FlowDraw<double> gfaf_forward(const FlowSpec& spec, std::span<const double> params, std::span<const double> eps);
FlowDraw<double> mif_forward(const ModelGraph& model, const FlowSpec& spec, std::span<const double> params,
                             std::span<const double> eps);

// Affine FAF parameters reproducing mu + L eps exactly:
//   m_i(z_<i) = mu_i + L_{i,<i} L_{<i,<i}^{-1} (z_<i - mu_<i),   log s_i = log L_ii.
std::vector<double> faf_from_full_rank(const Eigen::VectorXd& mu, const Eigen::MatrixXd& L);

// Warnings about flag combinations that have no effect on this model.
std::vector<std::string> flow_warnings(const FlowSpec& spec, const ModelGraph& model);

}  // namespace flowvi

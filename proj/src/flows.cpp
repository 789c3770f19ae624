#include "flowvi/flows.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace flowvi {

std::string family_name(FamilyTag tag) {
  switch (tag) {
    case FamilyTag::MF: return "MF";
    case FamilyTag::FR: return "FR";
    case FamilyTag::FAF: return "FAF";
    case FamilyTag::IAF: return "IAF";
    case FamilyTag::GFAF: return "GFAF";
    case FamilyTag::MIF: return "MIF";
  }
  return "?";
}

FlowSpec FlowSpec::make(FamilyTag family, std::size_t dim, std::size_t hidden) {
  FlowSpec s;
  s.family = family;
  s.dim = dim;
  s.hidden = hidden;
  if (family == FamilyTag::MIF) s.mif = MifFlags{};
  s.validate();
  return s;
}

FlowSpec FlowSpec::make_mif(std::size_t dim, MifFlags flags, std::size_t hidden) {
  FlowSpec s = make(FamilyTag::MIF, dim, hidden);
  s.mif = flags;
  return s;
}

FlowSpec FlowSpec::make_vip(FamilyTag base, std::size_t dim) {
  FlowSpec s = make(base, dim);
  s.vip = true;
  s.validate();
  return s;
}

void FlowSpec::validate() const {
  if (dim == 0) throw std::invalid_argument("flow spec: dimension must be positive");
  if (mif.has_value() != (family == FamilyTag::MIF)) {
    throw std::invalid_argument("flow spec: MIF flags are only legal on the MIF family");
  }
  if (vip && autoregressive()) throw std::invalid_argument("flow spec: VIP applies to MF and FR bases only");
  if (hidden && !autoregressive()) throw std::invalid_argument("flow spec: hidden width needs conditioners");
}

std::string FlowSpec::label() const {
  std::string s = family_name(family);
  if (vip) s += "-VIP";
  if (mif) {
    const MifFlags& f = *mif;
    std::vector<std::string> notes;
    if (f.eps_conditioning) notes.push_back(f.use_prior_inputs ? "eps-cond" : "eps-cond,w/o Prior");
    if (!f.use_translation) notes.push_back("w/o t");
    if (!f.use_prior_inputs && !f.eps_conditioning) notes.push_back("w/o Prior");
    if (!f.respect_order) notes.push_back("w/o Order");
    if (!notes.empty()) {
      s += "(";
      for (std::size_t k = 0; k < notes.size(); ++k) s += (k ? "," : "") + notes[k];
      s += ")";
    }
  }
  if (hidden) s += "[h=" + std::to_string(hidden) + "]";
  return s;
}

FlowSpec parse_family(const std::string& name, std::size_t dim, std::size_t hidden) {
  if (name == "MF") return FlowSpec::make(FamilyTag::MF, dim);
  if (name == "FR") return FlowSpec::make(FamilyTag::FR, dim);
  if (name == "MF-VIP") return FlowSpec::make_vip(FamilyTag::MF, dim);
  if (name == "FR-VIP") return FlowSpec::make_vip(FamilyTag::FR, dim);
  if (name == "FAF") return FlowSpec::make(FamilyTag::FAF, dim, hidden);
  if (name == "IAF") return FlowSpec::make(FamilyTag::IAF, dim, hidden);
  if (name == "GFAF") return FlowSpec::make(FamilyTag::GFAF, dim, hidden);
  if (name == "MIF") return FlowSpec::make(FamilyTag::MIF, dim, hidden);
  throw std::invalid_argument("unknown family '" + name + "'");
}

namespace detail {

ArConfig ar_config(const FlowSpec& spec) {
  switch (spec.family) {
    case FamilyTag::FAF: return {};
    case FamilyTag::IAF: return {.eps_inputs = true};
    case FamilyTag::GFAF: return {.translation = true};
    case FamilyTag::MIF: {
      const MifFlags& f = spec.mif.value();
      return {.eps_inputs = f.eps_conditioning,
              .prior_inputs = f.use_prior_inputs,
              .translation = f.use_translation,
              .reversed = !f.respect_order};
    }
    default: throw std::invalid_argument("ar_config: " + spec.label() + " is not autoregressive");
  }
}

}  // namespace detail

std::vector<std::size_t> processing_order(const FlowSpec& spec) {
  std::vector<std::size_t> order(spec.dim);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (spec.autoregressive() && detail::ar_config(spec).reversed) std::reverse(order.begin(), order.end());
  return order;
}

ParamLayout::ParamLayout(const FlowSpec& spec) : dim_(spec.dim) {
  spec.validate();
  const std::size_t d = dim_;
  if (!spec.autoregressive()) {
    has_base_ = true;
    diagonal_ = spec.family == FamilyTag::MF;
    mu_ = 0;
    chol_ = d;
    const std::size_t chol_size = diagonal_ ? d : d * (d + 1) / 2;
    lambda_ = chol_ + chol_size;
    has_lambda_ = spec.vip;
    size_ = lambda_ + (has_lambda_ ? d : 0);
    return;
  }
  const detail::ArConfig cfg = detail::ar_config(spec);
  const std::size_t u_arity = d + (cfg.prior_inputs ? 2 : 0);
  shapes_[0] = ConditionerShape{u_arity, spec.hidden};
  shapes_[1] = ConditionerShape{u_arity, spec.hidden};
  if (cfg.translation) shapes_[2] = ConditionerShape{u_arity + d, spec.hidden};
  block_ = 0;
  for (const auto& s : shapes_) block_ += s ? s->size() : 0;
  cond_ = 0;
  size_ = d * block_;
}

std::size_t ParamLayout::chol(std::size_t i, std::size_t j) const {
  if (!has_base_ || j > i || i >= dim_) throw std::out_of_range("ParamLayout::chol: bad index");
  if (diagonal_) {
    if (i != j) throw std::out_of_range("ParamLayout::chol: mean-field has no off-diagonal entries");
    return chol_ + i;
  }
  return chol_ + i * (i + 1) / 2 + j;
}

const ConditionerShape& ParamLayout::shape(CondKind k) const {
  const auto& s = shapes_[static_cast<int>(k)];
  if (!s) throw std::out_of_range("ParamLayout: family has no such conditioner");
  return *s;
}

std::size_t ParamLayout::offset(std::size_t step, CondKind k) const {
  if (step >= dim_) throw std::out_of_range("ParamLayout::offset: step out of range");
  std::size_t off = cond_ + step * block_;
  for (int c = 0; c < static_cast<int>(k); ++c) off += shapes_[c] ? shapes_[c]->size() : 0;
  shape(k);
  return off;
}

std::span<double> conditioner_params(const ParamLayout& layout, std::span<double> params, std::size_t step,
                                     CondKind kind) {
  return params.subspan(layout.offset(step, kind), layout.shape(kind).size());
}

AffineBase AffineBase::identity(std::size_t dim) {
  return {Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim)),
          Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim))};
}

AffineBase AffineBase::from_params(const ParamLayout& layout, std::span<const double> params) {
  if (!layout.has_base()) throw std::invalid_argument("AffineBase: family has no affine base");
  const auto d = static_cast<Eigen::Index>(layout.dim());
  AffineBase b{Eigen::VectorXd(d), Eigen::MatrixXd::Zero(d, d)};
  for (Eigen::Index i = 0; i < d; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    b.mu(i) = params[layout.mu(ui)];
    b.L(i, i) = std::exp(params[layout.chol(ui, ui)]);
    if (!layout.diagonal()) {
      for (Eigen::Index j = 0; j < i; ++j) b.L(i, j) = params[layout.chol(ui, static_cast<std::size_t>(j))];
    }
  }
  return b;
}

void AffineBase::to_params(const ParamLayout& layout, std::span<double> params) const {
  const std::size_t d = layout.dim();
  for (std::size_t i = 0; i < d; ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    if (!(L(ii, ii) > 0)) throw std::invalid_argument("AffineBase: diagonal of L must be positive");
    params[layout.mu(i)] = mu(ii);
    params[layout.chol(i, i)] = std::log(L(ii, ii));
    for (std::size_t j = 0; j < i; ++j) {
      const double v = L(ii, static_cast<Eigen::Index>(j));
      if (layout.diagonal()) {
        if (v != 0.0) throw std::invalid_argument("AffineBase: mean-field base must be diagonal");
      } else {
        params[layout.chol(i, j)] = v;
      }
    }
  }
}

FlowDraw<double> full_rank_forward(const AffineBase& base, std::span<const double> eps) {
  const auto d = static_cast<Eigen::Index>(base.dim());
  if (static_cast<Eigen::Index>(eps.size()) != d) throw std::invalid_argument("full_rank_forward: eps length");
  const Eigen::Map<const Eigen::VectorXd> e(eps.data(), d);
  const Eigen::VectorXd z = base.mu + base.L.triangularView<Eigen::Lower>() * e;
  FlowDraw<double> out;
  out.z.assign(z.data(), z.data() + d);
  out.logdet = base.L.diagonal().array().log().sum();
  return out;
}

namespace {

FlowDraw<double> checked_forward(const FlowSpec& spec, FamilyTag expected, const ModelGraph* model,
                                 std::span<const double> params, std::span<const double> eps) {
  if (spec.family != expected) {
    throw std::invalid_argument("expected a " + family_name(expected) + " spec, got " + spec.label());
  }
  const ParamLayout layout(spec);
  if (params.size() != layout.size()) throw std::invalid_argument("flow parameters have wrong length");
  FlowDraw<double> out = autoregressive_forward<double>(spec, layout, model, params, eps);
  for (std::size_t i = 0; i < out.z.size(); ++i) {
    if (!std::isfinite(out.z[i])) {
      throw ad::NumericDomainError(spec.label() + ": non-finite value at coordinate " + std::to_string(i + 1));
    }
  }
  require_finite(out.logdet, "flow log-determinant");
  return out;
}

}  // namespace

FlowDraw<double> faf_forward(const FlowSpec& spec, std::span<const double> params, std::span<const double> eps) {
  return checked_forward(spec, FamilyTag::FAF, nullptr, params, eps);
}

FlowDraw<double> iaf_forward(const FlowSpec& spec, std::span<const double> params, std::span<const double> eps) {
  return checked_forward(spec, FamilyTag::IAF, nullptr, params, eps);
}

FlowDraw<double> gfaf_forward(const FlowSpec& spec, std::span<const double> params, std::span<const double> eps) {
  return checked_forward(spec, FamilyTag::GFAF, nullptr, params, eps);
}

FlowDraw<double> mif_forward(const ModelGraph& model, const FlowSpec& spec, std::span<const double> params,
                             std::span<const double> eps) {
  if (model.dim() != spec.dim) throw std::invalid_argument("mif_forward: model and spec dimensions differ");
  topological_order(model);
  return checked_forward(spec, FamilyTag::MIF, &model, params, eps);
}

std::vector<double> faf_from_full_rank(const Eigen::VectorXd& mu, const Eigen::MatrixXd& L) {
  const Eigen::Index d = mu.size();
  if (L.rows() != d || L.cols() != d) throw std::invalid_argument("faf_from_full_rank: shape mismatch");
  for (Eigen::Index i = 0; i < d; ++i) {
    if (!(L(i, i) > 0)) throw std::invalid_argument("faf_from_full_rank: L_ii must be positive");
  }
  const FlowSpec spec = FlowSpec::make(FamilyTag::FAF, static_cast<std::size_t>(d));
  const ParamLayout layout(spec);
  std::vector<double> params(layout.size(), 0.0);
  for (Eigen::Index i = 0; i < d; ++i) {
    const auto step = static_cast<std::size_t>(i);
    auto shift = conditioner_params(layout, params, step, CondKind::Shift);
    auto log_scale = conditioner_params(layout, params, step, CondKind::LogScale);
    log_scale[layout.shape(CondKind::LogScale).bias()] = std::log(L(i, i));
    double bias = mu(i);
    if (i > 0) {
      // w^T = L_{i,<i} L_{<i,<i}^{-1}  <=>  L_{<i,<i}^T w = L_{i,<i}^T
      const Eigen::VectorXd rhs = L.block(i, 0, 1, i).transpose();
      const Eigen::VectorXd w = L.topLeftCorner(i, i).triangularView<Eigen::Lower>().transpose().solve(rhs);
      if (!w.allFinite()) throw std::runtime_error("faf_from_full_rank: singular leading minor");
      for (Eigen::Index j = 0; j < i; ++j) shift[static_cast<std::size_t>(j)] = w(j);
      bias -= w.dot(mu.head(i));
    }
    shift[layout.shape(CondKind::Shift).bias()] = bias;
  }
  return params;
}

std::vector<std::string> flow_warnings(const FlowSpec& spec, const ModelGraph& model) {
  std::vector<std::string> out;
  if (spec.mif && !spec.mif->respect_order) {
    std::vector<std::size_t> rev(model.dim());
    std::iota(rev.rbegin(), rev.rend(), std::size_t{0});
    if (is_topological(reorder_sites(model, rev))) {
      out.push_back("MIF(w/o Order): the reversed order is also topological for '" + model.name +
                    "', so the flag has no effect");
    }
  }
  return out;
}

}  // namespace flowvi

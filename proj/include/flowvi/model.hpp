#pragma once

// Hierarchical Bayesian models with conditionally Gaussian latents:
//
//   z_i ~ N(f_i(pa(z_i)), exp(log g_i(pa(z_i)))),   x_j ~ p(x_j | pa(x_j)).
//
// Every N(., .) second argument in this code base is a standard deviation.

#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "flowvi/scalar.hpp"

namespace flowvi {

class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A real function of a short vector of scalars, usable with both double and
// ad::Var. Built from one generic lambda so the two paths cannot drift apart.
class ScalarFn {
 public:
  ScalarFn() = default;

  template <class F>
  static ScalarFn from(F f) {
    ScalarFn fn;
    fn.plain_ = [f](std::span<const double> x) { return static_cast<double>(f(x)); };
    fn.taped_ = [f](std::span<const Var> x) { return Var(f(x)); };
    return fn;
  }

  static ScalarFn constant(double c) {
    return from([c](auto) { return c; });
  }

  double operator()(std::span<const double> x) const { return plain_(x); }
  Var operator()(std::span<const Var> x) const { return taped_(x); }
  explicit operator bool() const { return static_cast<bool>(plain_); }

 private:
  std::function<double(std::span<const double>)> plain_;
  std::function<Var(std::span<const Var>)> taped_;
};

struct LatentSite {
  std::string name;
  std::vector<std::size_t> parents;  // indices of earlier sites
  ScalarFn mean;                     // f_i(parents)
  ScalarFn log_scale;                // log g_i(parents)
  bool affine = false;               // f_i and log g_i affine in parents
  // Non-Gaussian prior on the unconstrained axis (includes any log-Jacobian).
  // When set, mean/log_scale are 0 and the site is a pass-through for VIP.
  std::optional<ScalarFn> custom_log_prior;

  bool gaussian() const { return !custom_log_prior.has_value(); }
};

struct LikelihoodTerm {
  std::string label;
  std::vector<std::size_t> parents;
  ScalarFn log_density;  // data is bound inside the closure
};

struct ModelGraph {
  std::string name;
  std::vector<LatentSite> sites;
  std::vector<LikelihoodTerm> likelihoods;
  std::optional<double> log_normalizer;  // exact log p(x) when known

  std::size_t dim() const { return sites.size(); }
};

struct Dataset {
  std::string name;
  std::map<std::string, std::vector<double>> columns;

  std::size_t rows() const { return columns.empty() ? 0 : columns.begin()->second.size(); }
  const std::vector<double>& column(const std::string& key) const;
  bool operator==(const Dataset&) const = default;
};

// Identity permutation when every parent precedes its child; otherwise throws
// ModelError naming the first violating edge (1-based, "parent -> child").
std::vector<std::size_t> topological_order(const ModelGraph& model);
bool is_topological(const ModelGraph& model);

// Moves site perm[k] to position k and remaps parent indices. The result is
// not validated: use topological_order to check it.
ModelGraph reorder_sites(const ModelGraph& model, std::span<const std::size_t> perm);

// Gathers parent values of `indices` from `z` into `out`.
template <class T>
void gather(std::span<const std::size_t> indices, std::span<const T> z, std::vector<T>& out) {
  out.clear();
  for (std::size_t p : indices) out.push_back(z[p]);
}

template <class T>
struct PriorMoments {
  T mean;
  T log_scale;
};

// f_i and log g_i evaluated at the parent values found in z.
template <class T>
PriorMoments<T> prior_moments(const ModelGraph& model, std::size_t i, std::span<const T> z,
                              std::vector<T>& scratch) {
  const LatentSite& site = model.sites[i];
  if (!site.gaussian()) return {T(0.0), T(0.0)};
  gather(std::span<const std::size_t>(site.parents), z, scratch);
  std::span<const T> pa(scratch);
  return {T(site.mean(pa)), T(site.log_scale(pa))};
}

template <class T>
T log_prior_term(const ModelGraph& model, std::size_t i, const T& zi, const PriorMoments<T>& pm) {
  const LatentSite& site = model.sites[i];
  if (!site.gaussian()) {
    const T arg[1] = {zi};
    return T((*site.custom_log_prior)(std::span<const T>(arg, 1)));
  }
  return normal_logpdf_logscale(zi, pm.mean, pm.log_scale);
}

template <class T>
T log_likelihood(const ModelGraph& model, std::span<const T> z) {
  std::vector<T> pa;
  std::vector<T> terms;
  terms.reserve(model.likelihoods.size());
  for (const LikelihoodTerm& lt : model.likelihoods) {
    gather(std::span<const std::size_t>(lt.parents), z, pa);
    terms.push_back(T(lt.log_density(std::span<const T>(pa))));
  }
  return sum(std::span<const T>(terms));
}

// log p(z, x): sum of prior and likelihood log densities.
template <class T>
T log_joint(const ModelGraph& model, std::span<const T> z) {
  if (z.size() != model.dim()) {
    throw ModelError("log_joint: z has length " + std::to_string(z.size()) + ", model dimension is " +
                     std::to_string(model.dim()));
  }
  for (const T& v : z) {
    if (!std::isfinite(value_of(v))) throw ModelError("log_joint: non-finite input");
  }
  std::vector<T> scratch;
  std::vector<T> terms;
  terms.reserve(model.dim() + 1);
  for (std::size_t i = 0; i < model.dim(); ++i) {
    const PriorMoments<T> pm = prior_moments(model, i, z, scratch);
    terms.push_back(log_prior_term(model, i, z[i], pm));
  }
  terms.push_back(log_likelihood(model, z));
  return require_finite(sum(std::span<const T>(terms)), "log_joint");
}

inline double log_joint(const ModelGraph& model, std::span<const double> z) {
  return log_joint<double>(model, z);
}

}  // namespace flowvi

#include "flowvi/equivalence.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <random>

#include "flowvi/flows.hpp"

namespace flowvi {

void EquivReport::merge(const EquivReport& other) {
  trials += other.trials;
  out_of_domain += other.out_of_domain;
  max_z_error = std::max(max_z_error, other.max_z_error);
  max_logdet_error = std::max(max_logdet_error, other.max_logdet_error);
  for (const auto& f : other.failures) {
    if (failures.size() < kMaxListedFailures) failures.push_back(f);
  }
  finalize();
}

void EquivReport::finalize() {
  passed = std::isfinite(max_z_error) && std::isfinite(max_logdet_error) &&
           max_z_error < tolerance && max_logdet_error < tolerance &&
           out_of_domain * kMaxOutOfDomainShare <= trials;
}

RandomInstance random_instance(std::size_t dim, std::uint64_t seed, std::uint64_t trial) {
  std::seed_seq ss{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                   static_cast<std::uint32_t>(trial), static_cast<std::uint32_t>(trial >> 32), 0x6571u};
  std::mt19937_64 rng(ss);
  std::normal_distribution<double> n01(0.0, 1.0), n05(0.0, 0.5);
  std::uniform_real_distribution<double> lam(0.05, 0.95);
  const auto d = static_cast<Eigen::Index>(dim);
  RandomInstance r{Eigen::VectorXd(d), Eigen::MatrixXd::Zero(d, d), {}, {}};
  for (Eigen::Index i = 0; i < d; ++i) r.mu(i) = n01(rng);
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = 0; j < i; ++j) r.L(i, j) = n05(rng);
    r.L(i, i) = std::exp(n05(rng));
  }
  for (std::size_t i = 0; i < dim; ++i) r.lambda.push_back(lam(rng));
  for (std::size_t i = 0; i < dim; ++i) r.eps.push_back(n01(rng));
  return r;
}

namespace {

EquivReport new_report(std::string check, std::string model, double tol) {
  EquivReport r;
  r.check = std::move(check);
  r.model = std::move(model);
  r.tolerance = tol;
  return r;
}

double scaled(double a, double b, double magnitude = 0.0) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b), magnitude});
}

constexpr double kRoundTripTol = 1e-10;

std::vector<double> guarded_inverse(const ModelGraph& model, std::span<const double> lambda,
                                    std::span<const double> z) {
  try {
    return vip_inverse(model, lambda, z);
  } catch (const ad::NumericDomainError&) {
    return std::vector<double>(z.size(), std::numeric_limits<double>::quiet_NaN());
  }
}

void note(EquivReport& r, std::uint64_t trial, std::size_t coord, double err, bool is_logdet) {
  if (!std::isfinite(err)) err = std::numeric_limits<double>::infinity();
  double& slot = is_logdet ? r.max_logdet_error : r.max_z_error;
  slot = std::max(slot, err);
  if (!(err < r.tolerance) && r.failures.size() < kMaxListedFailures) r.failures.push_back({trial, coord, err});
}

}  // namespace

EquivReport check_lemma1(std::uint64_t trials, std::size_t dim, double tol, std::uint64_t seed) {
  if (dim == 0 || tol < 0) throw std::invalid_argument("check_lemma1: need D >= 1 and tol >= 0");
  EquivReport rep = new_report("lemma1", "full-rank D=" + std::to_string(dim), tol);
  const FlowSpec spec = FlowSpec::make(FamilyTag::FAF, dim);
  for (std::uint64_t t = 0; t < trials; ++t) {
    const RandomInstance inst = random_instance(dim, seed, t);
    const AffineBase base{inst.mu, inst.L};
    const FlowDraw<double> a = full_rank_forward(base, inst.eps);
    const std::vector<double> params = faf_from_full_rank(inst.mu, inst.L);
    const FlowDraw<double> b = faf_forward(spec, params, inst.eps);
    for (std::size_t i = 0; i < dim; ++i) note(rep, t, i + 1, scaled(a.z[i], b.z[i]), false);
    note(rep, t, 0, scaled(a.logdet, b.logdet), true);
  }
  rep.trials = trials;
  rep.finalize();
  return rep;
}

EquivReport check_theorem1(const ModelGraph& model, std::uint64_t trials, double tol, std::uint64_t seed,
                           Theorem1Mutation mutation) {
  topological_order(model);
  const std::size_t d = model.dim();
  EquivReport rep = new_report("theorem1", model.name, tol);
  for (std::uint64_t t = 0; t < trials; ++t) {
    const RandomInstance inst = random_instance(d, seed, t);
    // path A: VIP after the full-rank base
    const VipSample a = sample_q_vip(AffineBase{inst.mu, inst.L}, inst.lambda, model, inst.eps);
    double logdet_a = a.log_jacobian;
    for (std::size_t i = 0; i < d; ++i) logdet_a += std::log(inst.L(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)));
    // path B: generalized FAF recurrence with constructed parameters
    std::vector<double> zb;
    double logdet_b = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      const GfafStep s = gfaf_params_from_vip(model, inst.mu, inst.L, inst.lambda, zb,
                                              std::span<const double>(inst.eps).first(i), i, mutation);
      zb.push_back(s.m + std::exp(s.log_s) * (inst.eps[i] - s.t));
      logdet_b += s.log_s;
    }
    for (std::size_t i = 0; i < d; ++i) note(rep, t, i + 1, scaled(a.z[i], zb[i]), false);
    note(rep, t, 0, scaled(logdet_a, logdet_b), true);
  }
  rep.trials = trials;
  rep.finalize();
  return rep;
}

EquivReport check_corollary1(const ModelGraph& model, std::uint64_t probes, double tol, std::uint64_t seed) {
  topological_order(model);
  for (const LatentSite& s : model.sites) {
    if (!s.affine) throw ModelError("check_corollary1: site '" + s.name + "' is not affine in its parents");
  }
  const std::size_t d = model.dim();
  EquivReport rep = new_report("corollary1", model.name, tol);
  std::seed_seq ss{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0xC011u};
  std::mt19937_64 rng(ss);
  std::normal_distribution<double> n01(0.0, 1.0);
  std::uniform_real_distribution<double> coef(-1.5, 1.5);

  const RandomInstance inst = random_instance(d, seed, 0);
  for (std::size_t i = 0; i < d; ++i) {
    // (eps_<i, z_<i) -> (m_i, log s_i, t_i)
    auto eval = [&](const std::vector<double>& e, const std::vector<double>& z) {
      const GfafStep s = gfaf_params_from_vip(model, inst.mu, inst.L, inst.lambda, z, e, i);
      return std::array<double, 3>{s.m, s.log_s, s.t};
    };
    const std::vector<double> zero(i, 0.0);
    const auto f0 = eval(zero, zero);
    for (std::uint64_t p = 0; p < probes; ++p) {
      std::vector<double> eu(i), zu(i), ev(i), zv(i), ew(i), zw(i);
      for (std::size_t j = 0; j < i; ++j) {
        eu[j] = n01(rng);
        zu[j] = n01(rng);
        ev[j] = n01(rng);
        zv[j] = n01(rng);
      }
      const double al = coef(rng), be = coef(rng);
      for (std::size_t j = 0; j < i; ++j) {
        ew[j] = al * eu[j] + be * ev[j];
        zw[j] = al * zu[j] + be * zv[j];
      }
      const auto fu = eval(eu, zu), fv = eval(ev, zv), fw = eval(ew, zw);
      for (int k = 0; k < 3; ++k) {
        const double rhs = al * fu[k] + be * fv[k] - (al + be - 1.0) * f0[k];
        const double mag = std::max({std::abs(al * fu[k]), std::abs(be * fv[k]), std::abs((al + be - 1.0) * f0[k])});
        note(rep, p, i + 1, scaled(fw[k], rhs, mag), false);
      }
    }
  }
  rep.trials = probes;
  rep.finalize();
  return rep;
}

EquivReport check_kl_identity(const ModelGraph& model, std::span<const double> lambda, std::uint64_t trials,
                              double tol, std::uint64_t seed) {
  const std::size_t d = model.dim();
  if (lambda.size() != d) throw std::invalid_argument("check_kl_identity: lambda has wrong length");
  EquivReport rep = new_report("kl_identity", model.name, tol);
  for (std::uint64_t t = 0; t < trials; ++t) {
    const RandomInstance inst = random_instance(d, seed, t);
    const AffineBase base{inst.mu, inst.L};
    const VipSample s = sample_q_vip(base, lambda, model, inst.eps);
    const double log_qw = s.log_q + s.log_jacobian;
    auto guarded = [](auto f) {
      try {
        return f();
      } catch (const ad::NumericDomainError&) {
        return std::numeric_limits<double>::quiet_NaN();
      }
    };
    const double lp = guarded([&] { return log_joint(model, s.z); });
    const double lp_vip = guarded([&] { return log_p_vip<double>(model, lambda, s.z_tilde); });
    // z no longer pins down z_tilde when g^(1-lambda) drops below the resolution of f
    const std::vector<double> back = guarded_inverse(model, lambda, s.z);
    double round_trip = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      round_trip = std::max(round_trip, std::abs(back[i] - s.z_tilde[i]) / std::max(1.0, std::abs(s.z_tilde[i])));
    }
    if ((!std::isfinite(lp) && !std::isfinite(lp_vip)) || !(round_trip <= kRoundTripTol)) {
      ++rep.out_of_domain;
      continue;
    }
    const double lhs = s.log_q - lp;
    const double rhs = log_qw - lp_vip;
    note(rep, t, 0, scaled(lhs, rhs, std::max(std::abs(lp), std::abs(lp_vip))), true);
  }
  rep.trials = trials;
  rep.finalize();
  return rep;
}

EquivReport check_kl_identity(const ModelGraph& model, std::uint64_t trials, double tol, std::uint64_t seed) {
  EquivReport rep = new_report("kl_identity", model.name, tol);
  for (std::uint64_t t = 0; t < trials; ++t) {
    const RandomInstance inst = random_instance(model.dim(), seed, t);
    EquivReport one = check_kl_identity(model, inst.lambda, 1, tol, seed + 0x9E3779B97F4A7C15ull * (t + 1));
    for (auto& f : one.failures) f.trial = t;
    rep.merge(one);
  }
  rep.trials = trials;
  rep.finalize();
  return rep;
}

}  // namespace flowvi

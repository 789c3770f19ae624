#pragma once

// Randomized numerical certification of the flow-equivalence results.

#include <cstdint>
#include <string>
#include <vector>

#include "flowvi/model.hpp"
#include "flowvi/vip.hpp"

namespace flowvi {

struct EquivFailure {
  std::uint64_t trial = 0;
  std::size_t coordinate = 0;  // 1-based; 0 = aggregate quantity (log-det, density)
  double error = 0.0;
  bool operator==(const EquivFailure&) const = default;
};

// Errors are |a - b| / max(1, |a|, |b|): absolute near the origin, relative for
// large magnitudes (heavy-tailed draws reach |z| ~ 1e11 on 8schools).
struct EquivReport {
  std::string check;
  std::string model;
  std::uint64_t trials = 0;
  double tolerance = 0.0;
  double max_z_error = 0.0;
  double max_logdet_error = 0.0;
  // trials where the model density itself overflows on both sides
  std::uint64_t out_of_domain = 0;
  std::vector<EquivFailure> failures;  // first few only
  bool passed = false;

  void merge(const EquivReport& other);
  void finalize();
  bool operator==(const EquivReport&) const = default;
};

inline constexpr std::size_t kMaxListedFailures = 20;
// at most 1 in 10 trials may be out of domain
inline constexpr std::uint64_t kMaxOutOfDomainShare = 10;

// Random instance: mu ~ N(0,1), strictly lower L ~ N(0,0.5), log L_ii ~ N(0,0.5),
// lambda ~ U(0.05,0.95), eps ~ N(0,I). One stream per (seed, trial).
struct RandomInstance {
  Eigen::VectorXd mu;
  Eigen::MatrixXd L;
  std::vector<double> lambda;
  std::vector<double> eps;
};
RandomInstance random_instance(std::size_t dim, std::uint64_t seed, std::uint64_t trial);

EquivReport check_lemma1(std::uint64_t trials, std::size_t dim, double tol, std::uint64_t seed = 1);

EquivReport check_theorem1(const ModelGraph& model, std::uint64_t trials, double tol, std::uint64_t seed = 1,
                           Theorem1Mutation mutation = Theorem1Mutation::None);

// `probes` superposition tests per step and map (m, log s, t).
EquivReport check_corollary1(const ModelGraph& model, std::uint64_t probes, double tol, std::uint64_t seed = 1);

EquivReport check_kl_identity(const ModelGraph& model, std::uint64_t trials, double tol, std::uint64_t seed = 1);

// Same as above with caller-fixed lambda (base still random).
EquivReport check_kl_identity(const ModelGraph& model, std::span<const double> lambda, std::uint64_t trials,
                              double tol, std::uint64_t seed = 1);

}  // namespace flowvi

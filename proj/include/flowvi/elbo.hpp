#pragma once

// Reparameterized Monte Carlo ELBO, Adam training and the learning-rate sweep.

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "flowvi/family.hpp"

namespace flowvi {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  bool operator==(const AdamConfig&) const = default;
};

struct TrainConfig {
  std::size_t iterations = 20000;
  std::size_t mc_samples = 64;
  std::vector<double> learning_rates{1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6};
  std::uint64_t seed = 1;
  std::size_t eval_samples = 100000;
  AdamConfig adam;
  double init_std = 0.1;
  double clip_norm = 100.0;
  std::size_t divergence_window = 100;
  std::size_t trace_points = 200;
  unsigned jobs = 1;

  void validate() const;
  // Desk budget: learning rates {1e-2, 1e-3, 1e-4}.
  static TrainConfig quick();
  bool operator==(const TrainConfig&) const = default;
};

class EstimationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ElboEstimate {
  double elbo = 0.0;
  double se = 0.0;  // Monte Carlo standard error of the mean
  std::size_t valid = 0;
  std::size_t invalid = 0;
};

// n draws on the plain-double path. Draws that hit a numeric-domain error are
// dropped; all draws failing raises EstimationError.
ElboEstimate elbo_estimate(const ModelGraph& model, const FlowSpec& spec, std::span<const double> params,
                           std::size_t n, std::mt19937_64& rng);

// Fresh-sample evaluation on an RNG stream that training never touches.
ElboEstimate final_eval(const ModelGraph& model, const FlowSpec& spec, std::span<const double> params,
                        std::size_t eval_samples, std::uint64_t seed);

// Differentiable estimate: value and gradient of the mean log weight over the
// given base draws (common random numbers). Invalid draws are skipped.
struct ElboGradient {
  double elbo = 0.0;
  std::vector<double> grad;
  std::size_t valid = 0;
  std::size_t clamp_events = 0;
};
ElboGradient elbo_gradient(const ModelGraph& model, const FlowSpec& spec, std::span<const double> params,
                           const std::vector<std::vector<double>>& eps, ad::Tape& tape);

struct SweepEntry {
  double learning_rate = 0.0;
  std::uint64_t seed = 0;
  bool failed = false;
  std::string failure;
  double final_elbo = 0.0;
  double final_se = 0.0;
  bool operator==(const SweepEntry&) const = default;
};

struct RunResult {
  std::string model;
  FlowSpec spec;
  double learning_rate = 0.0;
  std::uint64_t seed = 0;
  bool failed = false;
  std::string failure;
  double final_elbo = 0.0;  // fresh samples
  double final_se = 0.0;
  std::vector<std::pair<std::size_t, double>> trace;  // (iteration, training ELBO), thinned
  std::vector<double> lambda;                         // learned VIP lambda, if any
  std::vector<double> params;
  std::size_t clip_events = 0;
  std::size_t clamp_events = 0;
  std::size_t skipped_draws = 0;
  std::size_t eval_clamp_events = 0;
  std::vector<SweepEntry> sweep;
  double wall_seconds = 0.0;  // not part of the numerics

  double neg_elbo() const { return -final_elbo; }
};

std::vector<double> init_params(const ParamLayout& layout, double init_std, std::uint64_t seed);

RunResult train(const ModelGraph& model, const FlowSpec& spec, const TrainConfig& config, double lr,
                std::uint64_t seed);
inline RunResult train(const ModelGraph& model, const FlowSpec& spec, const TrainConfig& config, double lr) {
  return train(model, spec, config, lr, config.seed);
}

// One train() per learning rate with seed = config.seed + index; returns the
// run with the highest final ELBO (ties: smaller learning rate). Throws
// EstimationError when every run failed.
RunResult lr_sweep(const ModelGraph& model, const FlowSpec& spec, const TrainConfig& config);

}  // namespace flowvi

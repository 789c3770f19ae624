#include "flowvi/elbo.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <limits>
#include <thread>

namespace flowvi {

void TrainConfig::validate() const {
  if (iterations < 1) throw std::invalid_argument("iterations must be >= 1");
  if (mc_samples < 1) throw std::invalid_argument("mc_samples must be >= 1");
  if (learning_rates.empty()) throw std::invalid_argument("learning_rates must be non-empty");
  for (double lr : learning_rates) {
    if (!(lr > 0) || !std::isfinite(lr)) throw std::invalid_argument("learning rates must be positive");
  }
  if (eval_samples < 1) throw std::invalid_argument("eval_samples must be >= 1");
  if (!(init_std >= 0)) throw std::invalid_argument("init_std must be >= 0");
  if (!(clip_norm > 0)) throw std::invalid_argument("clip_norm must be positive");
  if (!(adam.beta1 >= 0 && adam.beta1 < 1 && adam.beta2 >= 0 && adam.beta2 < 1 && adam.epsilon > 0)) {
    throw std::invalid_argument("bad Adam hyperparameters");
  }
  if (divergence_window < 1) throw std::invalid_argument("divergence_window must be >= 1");
}

TrainConfig TrainConfig::quick() {
  TrainConfig c;
  c.learning_rates = {1e-2, 1e-3, 1e-4};
  return c;
}

namespace {

std::mt19937_64 stream(std::uint64_t seed, std::uint32_t tag) {
  std::seed_seq ss{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), tag};
  return std::mt19937_64(ss);
}

constexpr std::uint32_t kInitStream = 0x1417u;
constexpr std::uint32_t kTrainStream = 0x7EA1u;
constexpr std::uint32_t kEvalStream = 0xE7A1u;

void draw_eps(std::mt19937_64& rng, std::vector<double>& eps) {
  std::normal_distribution<double> n01;
  for (double& e : eps) e = n01(rng);
}

}  // namespace

ElboEstimate elbo_estimate(const ModelGraph& model, const FlowSpec& spec, std::span<const double> params,
                           std::size_t n, std::mt19937_64& rng) {
  if (n < 1) throw std::invalid_argument("elbo_estimate: n must be >= 1");
  const ParamLayout layout(spec);
  std::vector<double> eps(spec.dim);
  ElboEstimate out;
  // Welford
  double mean = 0.0, m2 = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    draw_eps(rng, eps);
    double w;
    try {
      w = log_weight<double>(spec, layout, model, params, eps);
      if (!std::isfinite(w)) throw ad::NumericDomainError("log weight");
    } catch (const ad::NumericDomainError&) {
      ++out.invalid;
      continue;
    } catch (const ModelError&) {
      ++out.invalid;
      continue;
    }
    ++out.valid;
    const double delta = w - mean;
    mean += delta / static_cast<double>(out.valid);
    m2 += delta * (w - mean);
  }
  if (out.valid == 0) throw EstimationError("ELBO estimate: all " + std::to_string(n) + " draws were invalid");
  out.elbo = mean;
  out.se = out.valid > 1 ? std::sqrt(m2 / static_cast<double>(out.valid - 1) / static_cast<double>(out.valid)) : 0.0;
  return out;
}

ElboEstimate final_eval(const ModelGraph& model, const FlowSpec& spec, std::span<const double> params,
                        std::size_t eval_samples, std::uint64_t seed) {
  for (double p : params) {
    if (!std::isfinite(p)) throw EstimationError("final_eval: non-finite parameters");
  }
  std::mt19937_64 rng = stream(seed, kEvalStream);
  return elbo_estimate(model, spec, params, eval_samples, rng);
}

ElboGradient elbo_gradient(const ModelGraph& model, const FlowSpec& spec, std::span<const double> params,
                           const std::vector<std::vector<double>>& eps, ad::Tape& tape) {
  const ParamLayout layout(spec);
  tape.clear();
  std::vector<Var> p;
  p.reserve(params.size());
  for (double v : params) p.emplace_back(&tape, tape.param(v));
  std::vector<Var> weights;
  weights.reserve(eps.size());
  ElboGradient out;
  for (const auto& e : eps) {
    const ad::Tape::Mark mk = tape.mark();
    std::size_t clamps = 0;
    try {
      weights.push_back(log_weight<Var>(spec, layout, model, std::span<const Var>(p), e, &clamps));
      out.clamp_events += clamps;
    } catch (const ad::NumericDomainError&) {
      tape.rewind(mk);
    } catch (const ModelError&) {
      tape.rewind(mk);
    }
  }
  out.valid = weights.size();
  out.grad.assign(params.size(), 0.0);
  if (weights.empty()) {
    out.elbo = -std::numeric_limits<double>::infinity();
    return out;
  }
  const Var mean = sum(std::span<const Var>(weights)) * Var(1.0 / static_cast<double>(weights.size()));
  out.elbo = mean.value();
  if (!mean.is_constant()) out.grad = tape.backward(mean.id());
  return out;
}

std::vector<double> init_params(const ParamLayout& layout, double init_std, std::uint64_t seed) {
  std::mt19937_64 rng = stream(seed, kInitStream);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> p(layout.size());
  for (double& v : p) v = init_std * n(rng);
  return p;
}

RunResult train(const ModelGraph& model, const FlowSpec& spec, const TrainConfig& config, double lr,
                std::uint64_t seed) {
  config.validate();
  if (model.dim() != spec.dim) throw std::invalid_argument("train: model and family dimensions differ");
  const auto t0 = std::chrono::steady_clock::now();
  const ParamLayout layout(spec);

  RunResult r;
  r.model = model.name;
  r.spec = spec;
  r.learning_rate = lr;
  r.seed = seed;
  r.params = init_params(layout, config.init_std, seed);

  const std::size_t n_par = r.params.size();
  std::vector<double> m(n_par, 0.0), v(n_par, 0.0);
  std::vector<std::vector<double>> eps(config.mc_samples, std::vector<double>(spec.dim));
  std::mt19937_64 rng = stream(seed, kTrainStream);
  ad::Tape tape;
  const std::size_t stride = std::max<std::size_t>(1, config.iterations / std::max<std::size_t>(1, config.trace_points));
  std::size_t bad_streak = 0;
  double b1t = 1.0, b2t = 1.0;

  for (std::size_t it = 0; it < config.iterations; ++it) {
    for (auto& e : eps) draw_eps(rng, e);
    const ElboGradient g = elbo_gradient(model, spec, r.params, eps, tape);
    r.skipped_draws += config.mc_samples - g.valid;
    r.clamp_events += g.clamp_events;
    if (g.valid == 0 || !std::isfinite(g.elbo)) {
      if (++bad_streak >= config.divergence_window) {
        r.failed = true;
        r.failure = "diverged: no finite ELBO for " + std::to_string(bad_streak) + " consecutive iterations at " +
                    std::to_string(it + 1);
        break;
      }
      continue;
    }
    bad_streak = 0;
    if (it % stride == 0 || it + 1 == config.iterations) r.trace.emplace_back(it, g.elbo);

    // maximize ELBO: descend on -grad
    double norm2 = 0.0;
    for (double x : g.grad) norm2 += x * x;
    const double norm = std::sqrt(norm2);
    double scale = 1.0;
    if (!std::isfinite(norm)) continue;
    if (norm > config.clip_norm) {
      scale = config.clip_norm / norm;
      ++r.clip_events;
    }
    b1t *= config.adam.beta1;
    b2t *= config.adam.beta2;
    for (std::size_t k = 0; k < n_par; ++k) {
      const double gk = -g.grad[k] * scale;
      m[k] = config.adam.beta1 * m[k] + (1 - config.adam.beta1) * gk;
      v[k] = config.adam.beta2 * v[k] + (1 - config.adam.beta2) * gk * gk;
      const double mh = m[k] / (1 - b1t), vh = v[k] / (1 - b2t);
      r.params[k] -= lr * mh / (std::sqrt(vh) + config.adam.epsilon);
    }
  }

  if (!r.failed) {
    try {
      const ElboEstimate fe = final_eval(model, spec, r.params, config.eval_samples, seed);
      r.final_elbo = fe.elbo;
      r.final_se = fe.se;
      r.skipped_draws += fe.invalid;
    } catch (const EstimationError& e) {
      r.failed = true;
      r.failure = e.what();
    }
  }
  if (spec.vip) {
    const std::vector<double> lam = vip_lambda<double>(layout, model, r.params);
    r.lambda = lam;
  }
  if (r.failed) {
    r.final_elbo = -std::numeric_limits<double>::infinity();
    r.final_se = 0.0;
  }
  r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

RunResult lr_sweep(const ModelGraph& model, const FlowSpec& spec, const TrainConfig& config) {
  config.validate();
  const std::size_t n = config.learning_rates.size();
  std::vector<RunResult> runs(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k; (k = next.fetch_add(1)) < n;) {
      runs[k] = train(model, spec, config, config.learning_rates[k], config.seed + k);
    }
  };
  const unsigned jobs = std::max(1u, std::min<unsigned>(config.jobs, static_cast<unsigned>(n)));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  std::vector<SweepEntry> entries;
  std::size_t best = n;
  for (std::size_t k = 0; k < n; ++k) {
    const RunResult& r = runs[k];
    entries.push_back({r.learning_rate, r.seed, r.failed, r.failure, r.final_elbo, r.final_se});
    if (r.failed) continue;
    if (best == n || r.final_elbo > runs[best].final_elbo ||
        (r.final_elbo == runs[best].final_elbo && r.learning_rate < runs[best].learning_rate)) {
      best = k;
    }
  }
  if (best == n) {
    std::string msg = "learning-rate sweep failed for every rate:";
    for (const auto& e : entries) msg += " [lr=" + std::to_string(e.learning_rate) + ": " + e.failure + "]";
    throw EstimationError(msg);
  }
  RunResult out = std::move(runs[best]);
  out.sweep = std::move(entries);
  return out;
}

}  // namespace flowvi

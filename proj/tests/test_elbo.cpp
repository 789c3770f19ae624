#include <cmath>
#include <random>

#include "doctest.h"
#include "flowvi/benchmarks.hpp"
#include "flowvi/elbo.hpp"

using namespace flowvi;

namespace {

std::vector<FlowSpec> specs_for(std::size_t d) {
  std::vector<FlowSpec> out{FlowSpec::make(FamilyTag::MF, d), FlowSpec::make(FamilyTag::FR, d),
                            FlowSpec::make_vip(FamilyTag::MF, d), FlowSpec::make_vip(FamilyTag::FR, d),
                            FlowSpec::make(FamilyTag::FAF, d), FlowSpec::make(FamilyTag::IAF, d, 3),
                            FlowSpec::make(FamilyTag::GFAF, d)};
  for (int m = 0; m < 16; m += 5) {
    MifFlags f;
    f.use_prior_inputs = m & 1;
    f.eps_conditioning = m & 2;
    f.use_translation = m & 4;
    f.respect_order = m & 8;
    out.push_back(FlowSpec::make_mif(d, f));
  }
  MifFlags full;
  out.push_back(FlowSpec::make_mif(d, full, 2));
  return out;
}

std::vector<std::vector<double>> base_draws(std::size_t n, std::size_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01;
  std::vector<std::vector<double>> eps(n, std::vector<double>(d));
  for (auto& e : eps)
    for (double& x : e) x = n01(rng);
  return eps;
}

double mean_weight(const ModelGraph& m, const FlowSpec& s, const ParamLayout& layout, std::span<const double> p,
                   const std::vector<std::vector<double>>& eps) {
  double acc = 0.0;
  for (const auto& e : eps) acc += log_weight<double>(s, layout, m, p, e);
  return acc / static_cast<double>(eps.size());
}

ModelGraph broken_model() {
  ModelGraph g = make_standard_normal(1);
  g.name = "broken";
  g.likelihoods.push_back({"nan", {0}, ScalarFn::from([](auto x) {
                             using T = std::decay_t<decltype(x[0])>;
                             using std::log;
                             return log(x[0] * T(0.0) - T(1.0));
                           })});
  return g;
}

TrainConfig small_config() {
  TrainConfig c;
  c.iterations = 300;
  c.mc_samples = 8;
  c.eval_samples = 2000;
  c.learning_rates = {1e-2, 1e-3};
  return c;
}

}  // namespace

TEST_CASE("exact family on a standard normal") {
  const ModelGraph g = make_standard_normal(1);
  const FlowSpec s = FlowSpec::make(FamilyTag::FR, 1);
  std::vector<double> p(ParamLayout(s).size(), 0.0);
  std::mt19937_64 rng(3);
  const std::size_t n = 10000;
  const ElboEstimate e = elbo_estimate(g, s, p, n, rng);
  CHECK(std::abs(e.elbo) < 3.0 / std::sqrt(double(n)));
  CHECK(e.valid == n);

  p[ParamLayout(s).mu(0)] = 1.0;
  const ElboEstimate shifted = elbo_estimate(g, s, p, n, rng);
  CHECK(std::abs(shifted.elbo + 0.5) < 4 * shifted.se);
}

TEST_CASE("elbo at the exact posterior is zero within noise") {
  for (std::size_t d : {1, 3, 5}) {
    const ModelGraph g = make_standard_normal(d);
    for (FamilyTag t : {FamilyTag::MF, FamilyTag::FR}) {
      const FlowSpec s = FlowSpec::make(t, d);
      const std::vector<double> p(ParamLayout(s).size(), 0.0);
      const ElboEstimate e = final_eval(g, s, p, 5000, 11);
      CHECK(std::abs(e.elbo) <= 4 * e.se + 1e-12);
    }
  }
}

TEST_CASE("gradient matches finite differences under common random numbers") {
  const std::vector<ModelGraph> models{make_funnel(4), make_nonlinear_chain(3, 2), make_standard_normal(2),
                                       make_affine_chain(4, 1)};
  double worst = 0.0;
  ad::Tape tape;
  for (const ModelGraph& m : models) {
    for (const FlowSpec& s : specs_for(m.dim())) {
      CAPTURE(m.name);
      CAPTURE(s.label());
      const ParamLayout layout(s);
      const std::vector<double> p = init_params(layout, 0.05, 17);
      const auto eps = base_draws(16, m.dim(), 5);
      const ElboGradient g = elbo_gradient(m, s, p, eps, tape);
      REQUIRE(g.valid == eps.size());
      CHECK(g.elbo == doctest::Approx(mean_weight(m, s, layout, p, eps)).epsilon(1e-12));
      for (std::size_t k = 0; k < p.size(); ++k) {
        const double h = 1e-6;
        std::vector<double> up = p, dn = p;
        up[k] += h;
        dn[k] -= h;
        const double fd = (mean_weight(m, s, layout, up, eps) - mean_weight(m, s, layout, dn, eps)) / (2 * h);
        const double rel = std::abs(g.grad[k] - fd) / std::max({std::abs(fd), std::abs(g.grad[k]), 1e-2});
        worst = std::max(worst, rel);
        CHECK(rel < 1e-4);
      }
    }
  }
  MESSAGE("worst relative gradient error " << worst);
}

TEST_CASE("init_params is seeded and scaled") {
  const ParamLayout layout(FlowSpec::make(FamilyTag::IAF, 6, 8));
  const auto a = init_params(layout, 0.1, 4);
  CHECK(a == init_params(layout, 0.1, 4));
  CHECK(a != init_params(layout, 0.1, 5));
  double ss = 0.0;
  for (double v : a) ss += v * v;
  CHECK(std::sqrt(ss / double(a.size())) == doctest::Approx(0.1).epsilon(0.2));
  for (double v : init_params(layout, 0.0, 4)) CHECK(v == 0.0);
}

TEST_CASE("training is reproducible") {
  const ModelGraph g = make_funnel(4);
  const FlowSpec s = FlowSpec::make(FamilyTag::FAF, 4);
  const TrainConfig c = small_config();
  const RunResult a = train(g, s, c, 1e-2, 9);
  const RunResult b = train(g, s, c, 1e-2, 9);
  CHECK(a.params == b.params);
  CHECK(a.final_elbo == b.final_elbo);
  CHECK(a.trace == b.trace);
  CHECK(train(g, s, c, 1e-2, 10).params != a.params);

  const ElboEstimate e1 = final_eval(g, s, a.params, 1000, 2);
  const ElboEstimate e2 = final_eval(g, s, a.params, 1000, 2);
  CHECK(e1.elbo == e2.elbo);
  CHECK(e1.se == e2.se);
}

TEST_CASE("sweep returns the best rate and matches single runs") {
  const ModelGraph g = make_funnel(4);
  const FlowSpec s = FlowSpec::make(FamilyTag::MF, 4);
  TrainConfig c = small_config();
  c.learning_rates = {1e-1, 1e-2, 1e-4};
  const RunResult best = lr_sweep(g, s, c);
  REQUIRE(best.sweep.size() == 3);
  for (std::size_t k = 0; k < 3; ++k) {
    CHECK(best.sweep[k].learning_rate == c.learning_rates[k]);
    CHECK(best.sweep[k].seed == c.seed + k);
    const RunResult single = train(g, s, c, c.learning_rates[k], c.seed + k);
    CHECK(single.final_elbo == best.sweep[k].final_elbo);
    if (!best.sweep[k].failed) CHECK(best.final_elbo >= best.sweep[k].final_elbo);
  }
  TrainConfig one = c;
  one.learning_rates = {1e-2};
  const RunResult a = lr_sweep(g, s, one);
  const RunResult b = train(g, s, one, 1e-2);
  CHECK(a.params == b.params);
  CHECK(a.final_elbo == b.final_elbo);

  TrainConfig par = c;
  par.jobs = 3;
  CHECK(lr_sweep(g, s, par).params == best.params);
}

TEST_CASE("mean field fits a standard normal") {
  const ModelGraph g = make_standard_normal(3);
  TrainConfig c;
  c.iterations = 2000;
  c.mc_samples = 16;
  c.eval_samples = 20000;
  const RunResult r = train(g, FlowSpec::make(FamilyTag::MF, 3), c, 1e-2);
  REQUIRE_FALSE(r.failed);
  CHECK(r.neg_elbo() < 0.01);
  CHECK(r.neg_elbo() > -4 * r.final_se);
}

TEST_CASE("divergence and invalid estimates") {
  const ModelGraph g = broken_model();
  const FlowSpec s = FlowSpec::make(FamilyTag::MF, 1);
  TrainConfig c = small_config();
  const RunResult r = train(g, s, c, 1e-2);
  CHECK(r.failed);
  CHECK(r.failure.find("diverged") != std::string::npos);
  CHECK(std::isinf(r.final_elbo));
  CHECK_THROWS_AS(lr_sweep(g, s, c), EstimationError);

  std::mt19937_64 rng(1);
  const std::vector<double> p(ParamLayout(s).size(), 0.0);
  CHECK_THROWS_AS(elbo_estimate(g, s, p, 10, rng), EstimationError);
  std::vector<double> nan_p = p;
  nan_p[0] = std::nan("");
  CHECK_THROWS_AS(final_eval(make_standard_normal(1), s, nan_p, 10, 1), EstimationError);
}

TEST_CASE("config validation") {
  auto bad = [](auto mutate) {
    TrainConfig c;
    mutate(c);
    return c;
  };
  CHECK_NOTHROW(TrainConfig{}.validate());
  CHECK(TrainConfig::quick().learning_rates == std::vector<double>{1e-2, 1e-3, 1e-4});
  CHECK_THROWS_AS(bad([](TrainConfig& c) { c.iterations = 0; }).validate(), std::invalid_argument);
  CHECK_THROWS_AS(bad([](TrainConfig& c) { c.mc_samples = 0; }).validate(), std::invalid_argument);
  CHECK_THROWS_AS(bad([](TrainConfig& c) { c.learning_rates.clear(); }).validate(), std::invalid_argument);
  CHECK_THROWS_AS(bad([](TrainConfig& c) { c.learning_rates = {-1e-3}; }).validate(), std::invalid_argument);
  CHECK_THROWS_AS(bad([](TrainConfig& c) { c.adam.beta2 = 1.0; }).validate(), std::invalid_argument);
  CHECK_THROWS_AS(bad([](TrainConfig& c) { c.clip_norm = 0; }).validate(), std::invalid_argument);
  CHECK_THROWS_AS(train(make_funnel(4), FlowSpec::make(FamilyTag::MF, 3), small_config(), 1e-2),
                  std::invalid_argument);
}

#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "doctest.h"
#include "flowvi/benchmarks.hpp"
#include "flowvi/family.hpp"
#include "flowvi/flows.hpp"

using namespace flowvi;

namespace {

std::vector<FlowSpec> all_specs(std::size_t d, std::size_t hidden) {
  std::vector<FlowSpec> s;
  if (hidden == 0) {
    s.push_back(FlowSpec::make(FamilyTag::MF, d));
    s.push_back(FlowSpec::make(FamilyTag::FR, d));
    s.push_back(FlowSpec::make_vip(FamilyTag::MF, d));
    s.push_back(FlowSpec::make_vip(FamilyTag::FR, d));
  }
  s.push_back(FlowSpec::make(FamilyTag::FAF, d, hidden));
  s.push_back(FlowSpec::make(FamilyTag::IAF, d, hidden));
  s.push_back(FlowSpec::make(FamilyTag::GFAF, d, hidden));
  for (int bits = 0; bits < 16; ++bits) {
    MifFlags f;
    f.use_translation = bits & 1;
    f.use_prior_inputs = bits & 2;
    f.respect_order = bits & 4;
    f.eps_conditioning = bits & 8;
    s.push_back(FlowSpec::make_mif(d, f, hidden));
  }
  return s;
}

std::vector<double> random_params(std::size_t n, std::mt19937_64& rng, double sd) {
  std::normal_distribution<double> g(0, sd);
  std::vector<double> p(n);
  for (double& v : p) v = g(rng);
  return p;
}

std::vector<double> random_eps(std::size_t d, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0, 1);
  std::vector<double> e(d);
  for (double& v : e) v = g(rng);
  return e;
}

// log |det dz/deps| of the whole family map, VIP included
double analytic_logdet(const FlowSpec& spec, const ModelGraph& m, std::span<const double> p,
                       std::span<const double> eps) {
  const ParamLayout layout(spec);
  const auto s = sample_family<double>(spec, layout, m, p, eps);
  double base = 0;
  for (double e : eps) base += std_normal_logpdf(e);
  return base - s.log_q;
}

double numeric_logdet(const FlowSpec& spec, const ModelGraph& m, std::span<const double> p,
                      std::vector<double> eps, double h) {
  const ParamLayout layout(spec);
  const std::size_t d = eps.size();
  Eigen::MatrixXd J(d, d);
  auto at = [&](std::size_t j, double shift) {
    const double e0 = eps[j];
    eps[j] = e0 + shift;
    auto z = sample_family<double>(spec, layout, m, p, eps).z;
    eps[j] = e0;
    return z;
  };
  // five-point stencil
  for (std::size_t j = 0; j < d; ++j) {
    const auto p1 = at(j, h), m1 = at(j, -h), p2 = at(j, 2 * h), m2 = at(j, -2 * h);
    for (std::size_t i = 0; i < d; ++i) J(i, j) = (8 * (p1[i] - m1[i]) - (p2[i] - m2[i])) / (12 * h);
  }
  return std::log(std::abs(J.determinant()));
}

Eigen::MatrixXd random_chol(std::size_t d, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0, 0.5);
  Eigen::MatrixXd L = Eigen::MatrixXd::Zero(d, d);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < i; ++j) L(i, j) = g(rng);
    L(i, i) = std::exp(g(rng));
  }
  return L;
}

}  // namespace

TEST_CASE("full_rank_forward examples") {
  const AffineBase id = AffineBase::identity(3);
  const double ones[3] = {1, 1, 1};
  const auto a = full_rank_forward(id, ones);
  for (double z : a.z) CHECK(z == 1.0);
  CHECK(a.logdet == 0.0);

  AffineBase b;
  b.mu = Eigen::Vector2d(0, 0);
  b.L.resize(2, 2);
  b.L << 1, 0, 0.5, 2;
  const double e[2] = {1, 1};
  const auto r = full_rank_forward(b, e);
  CHECK(r.z[0] == doctest::Approx(1.0));
  CHECK(r.z[1] == doctest::Approx(2.5));
  CHECK(r.logdet == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("full_rank_forward logdet vs numeric Jacobian (D=4)") {
  std::mt19937_64 rng(5);
  const FlowSpec spec = FlowSpec::make(FamilyTag::FR, 4);
  const ModelGraph m = make_standard_normal(4);
  for (int t = 0; t < 20; ++t) {
    AffineBase b;
    b.mu = Eigen::VectorXd::Random(4);
    b.L = random_chol(4, rng);
    std::vector<double> p(ParamLayout(spec).size());
    b.to_params(ParamLayout(spec), p);
    const auto eps = random_eps(4, rng);
    CHECK(std::abs(full_rank_forward(b, eps).logdet - numeric_logdet(spec, m, p, eps, 1e-5)) < 1e-6);
  }
}

TEST_CASE("faf / iaf / gfaf hand examples") {
  const double e11[2] = {1, 1};
  {
    const FlowSpec spec = FlowSpec::make(FamilyTag::FAF, 2);
    const ParamLayout layout(spec);
    std::vector<double> p(layout.size(), 0.0);
    auto r0 = faf_forward(spec, p, e11);
    CHECK(r0.z == std::vector<double>{1, 1});
    CHECK(r0.logdet == 0.0);
    conditioner_params(layout, p, 1, CondKind::Shift)[0] = 0.5;
    const auto r = faf_forward(spec, p, e11);
    CHECK(r.z[0] == 1.0);
    CHECK(r.z[1] == doctest::Approx(1.5));
    CHECK(r.logdet == 0.0);
  }
  {
    const FlowSpec spec = FlowSpec::make(FamilyTag::IAF, 2);
    const ParamLayout layout(spec);
    std::vector<double> p(layout.size(), 0.0);
    const double e[2] = {2, 0};
    CHECK(iaf_forward(spec, p, e).z == std::vector<double>{2, 0});
    conditioner_params(layout, p, 1, CondKind::Shift)[0] = 1.0;
    const auto r = iaf_forward(spec, p, e);
    CHECK(r.z[0] == 2.0);
    CHECK(r.z[1] == 2.0);
  }
  {
    const FlowSpec spec = FlowSpec::make(FamilyTag::GFAF, 1);
    const ParamLayout layout(spec);
    std::vector<double> p(layout.size(), 0.0);
    auto t = conditioner_params(layout, p, 0, CondKind::Translation);
    t[layout.shape(CondKind::Translation).bias()] = 0.7;
    const double e[1] = {0.2};
    const auto r = gfaf_forward(spec, p, e);
    CHECK(r.z[0] == doctest::Approx(0.2 - 0.7));
    CHECK(r.logdet == 0.0);
  }
}

TEST_CASE("family mismatch and non-finite values raise") {
  const FlowSpec faf = FlowSpec::make(FamilyTag::FAF, 2);
  const ParamLayout layout(faf);
  std::vector<double> p(layout.size(), 0.0);
  const double e[2] = {1, 1};
  CHECK_THROWS_AS(iaf_forward(faf, p, e), std::invalid_argument);
  conditioner_params(layout, p, 0, CondKind::Shift)[layout.shape(CondKind::Shift).bias()] = 1e308;
  conditioner_params(layout, p, 1, CondKind::Shift)[0] = 10.0;
  CHECK_THROWS_WITH_AS(faf_forward(faf, p, e), doctest::Contains("coordinate 2"), ad::NumericDomainError);
}

TEST_CASE("gfaf with zero translation equals faf on identical conditioners") {
  std::mt19937_64 rng(8);
  for (std::size_t hidden : {0, 3}) {
    const FlowSpec faf = FlowSpec::make(FamilyTag::FAF, 4, hidden);
    const FlowSpec gfaf = FlowSpec::make(FamilyTag::GFAF, 4, hidden);
    const ParamLayout lf(faf), lg(gfaf);
    for (int t = 0; t < 50; ++t) {
      std::vector<double> pf = random_params(lf.size(), rng, 0.4);
      std::vector<double> pg(lg.size(), 0.0);
      for (std::size_t k = 0; k < 4; ++k) {
        for (CondKind c : {CondKind::Shift, CondKind::LogScale}) {
          auto src = conditioner_params(lf, pf, k, c);
          auto dst = conditioner_params(lg, pg, k, c);
          std::copy(src.begin(), src.end(), dst.begin());
        }
      }
      const auto eps = random_eps(4, rng);
      const auto a = faf_forward(faf, pf, eps), b = gfaf_forward(gfaf, pg, eps);
      for (std::size_t i = 0; i < 4; ++i) CHECK(a.z[i] == b.z[i]);
      CHECK(a.logdet == b.logdet);
    }
  }
}

TEST_CASE("MIF with every flag off equals FAF") {
  std::mt19937_64 rng(9);
  const ModelGraph m = make_nonlinear_chain(5, 2);
  MifFlags off{false, false, true, false};
  for (std::size_t hidden : {0, 2}) {
    const FlowSpec faf = FlowSpec::make(FamilyTag::FAF, 5, hidden);
    const FlowSpec mif = FlowSpec::make_mif(5, off, hidden);
    const ParamLayout lf(faf), lm(mif);
    REQUIRE(lf.size() == lm.size());
    for (int t = 0; t < 100; ++t) {
      const auto p = random_params(lf.size(), rng, 0.4);
      const auto eps = random_eps(5, rng);
      const auto a = faf_forward(faf, p, eps), b = mif_forward(m, mif, p, eps);
      for (std::size_t i = 0; i < 5; ++i) CHECK(std::abs(a.z[i] - b.z[i]) < 1e-12);
      CHECK(std::abs(a.logdet - b.logdet) < 1e-12);
    }
  }
}

TEST_CASE("zero parameters give the identity for every autoregressive variant") {
  const ModelGraph m = make_funnel(4);
  for (const FlowSpec& spec : all_specs(4, 2)) {
    CAPTURE(spec.label());
    const ParamLayout layout(spec);
    std::vector<double> p(layout.size(), 0.0);
    const double e[4] = {0.3, -1.2, 2.0, 0.1};
    const auto r = autoregressive_forward<double>(spec, layout, &m, p, e);
    for (std::size_t i = 0; i < 4; ++i) CHECK(r.z[i] == e[i]);
    CHECK(r.logdet == 0.0);
  }
}

TEST_CASE("property: analytic logdet equals the numeric Jacobian (D<=5, 50 seeds)") {
  int checked = 0, redrawn = 0;
  for (std::size_t d = 1; d <= 5; ++d) {
    for (std::size_t hidden : {0, 3}) {
      for (const FlowSpec& spec : all_specs(d, hidden)) {
        const ParamLayout layout(spec);
        for (std::uint64_t seed = 0; seed < 50; ++seed) {
          std::mt19937_64 rng(seed * 7919 + d);
          const ModelGraph m = seed % 2 ? make_nonlinear_chain(d, seed + 1) : make_affine_chain(d, seed + 1);
          const auto p = random_params(layout.size(), rng, 0.3);
          auto eps = random_eps(d, rng);
          // redraw when the clamp is active (not differentiable) or the map is so
          // contracting that differences drown in rounding
          int tries = 0;
          while (tries < 20) {
            const auto s = sample_family<double>(spec, layout, m, p, eps);
            double zmax = 0;
            for (double z : s.z) zmax = std::max(zmax, std::abs(z));
            if (s.clamp_events == 0 && zmax < 50 && analytic_logdet(spec, m, p, eps) > -10) break;
            eps = random_eps(d, rng);
            ++tries;
            ++redrawn;
          }
          const double a = analytic_logdet(spec, m, p, eps);
          // step choice trades truncation against rounding; a relu kink can also
          // sit inside the stencil, so take the best of three steps
          double err = INFINITY;
          for (double h : {1e-3, 1e-4, 1e-5}) {
            err = std::min(err, std::abs(a - numeric_logdet(spec, m, p, eps, h)));
            if (err < 1e-5) break;
          }
          CAPTURE(spec.label());
          CAPTURE(seed);
          CAPTURE(d);
          CHECK(err < 1e-5);
          ++checked;
        }
      }
    }
  }
  CHECK(checked > 5000);
  CHECK(redrawn < checked / 50);
}

TEST_CASE("property: forward maps are injective on sampled inputs") {
  std::mt19937_64 rng(12);
  const ModelGraph m = make_nonlinear_chain(4, 3);
  for (const FlowSpec& spec : all_specs(4, 2)) {
    const ParamLayout layout(spec);
    const auto p = random_params(layout.size(), rng, 0.3);
    for (int t = 0; t < 50; ++t) {
      const auto e1 = random_eps(4, rng);
      auto e2 = e1;
      e2[t % 4] += 1e-5 * (1 + t);
      const auto z1 = sample_family<double>(spec, layout, m, p, e1).z;
      const auto z2 = sample_family<double>(spec, layout, m, p, e2).z;
      double dist = 0;
      for (std::size_t i = 0; i < 4; ++i) dist = std::max(dist, std::abs(z1[i] - z2[i]));
      CHECK(dist > 0.0);
    }
  }
}

TEST_CASE("property: gfaf logdet ignores translation weights when scales are constant") {
  std::mt19937_64 rng(13);
  const FlowSpec spec = FlowSpec::make(FamilyTag::GFAF, 4, 2);
  const ParamLayout layout(spec);
  const auto& ls = layout.shape(CondKind::LogScale);
  for (int t = 0; t < 50; ++t) {
    auto p = random_params(layout.size(), rng, 0.4);
    for (std::size_t k = 0; k < 4; ++k) {
      auto blk = conditioner_params(layout, p, k, CondKind::LogScale);
      const double bias = blk[ls.bias()];
      std::fill(blk.begin(), blk.end(), 0.0);
      blk[ls.bias()] = bias;
    }
    const auto eps = random_eps(4, rng);
    const double ref = gfaf_forward(spec, p, eps).logdet;
    for (int r = 0; r < 5; ++r) {
      for (std::size_t k = 0; k < 4; ++k) {
        for (double& w : conditioner_params(layout, p, k, CondKind::Translation)) {
          w = std::normal_distribution<double>(0, 2)(rng);
        }
      }
      CHECK(gfaf_forward(spec, p, eps).logdet == ref);
    }
  }
}

TEST_CASE("property: an h=0 conditioner is affine") {
  std::mt19937_64 rng(14);
  std::normal_distribution<double> g(0, 1);
  for (std::size_t arity : {1, 3, 7}) {
    const ConditionerShape sh{arity, 0};
    std::vector<std::size_t> cols(arity);
    for (std::size_t c = 0; c < arity; ++c) cols[c] = c;
    std::vector<double> scratch;
    for (int t = 0; t < 200; ++t) {
      const auto p = random_params(sh.size(), rng, 1.0);
      const auto u = random_params(arity, rng, 1.0), v = random_params(arity, rng, 1.0);
      const double a = g(rng), b = g(rng);
      std::vector<double> mix(arity), zero(arity, 0.0);
      for (std::size_t c = 0; c < arity; ++c) mix[c] = a * u[c] + b * v[c];
      auto out = [&](const std::vector<double>& x) {
        return apply_conditioner<double>(sh, p, cols, x, scratch);
      };
      CHECK(std::abs(out(mix) - (a * out(u) + b * out(v) - (a + b - 1) * out(zero))) < 1e-10);
    }
  }
}

TEST_CASE("faf_from_full_rank") {
  const FlowSpec spec = FlowSpec::make(FamilyTag::FAF, 2);
  const ParamLayout layout(spec);
  {
    Eigen::Vector2d mu(0.3, -0.4);
    Eigen::Matrix2d L;
    L << 2, 0, 0, 0.5;
    auto p = faf_from_full_rank(mu, L);
    auto s1 = conditioner_params(layout, p, 1, CondKind::Shift);
    CHECK(s1[0] == 0.0);
    CHECK(s1[layout.shape(CondKind::Shift).bias()] == doctest::Approx(-0.4));
    auto l0 = conditioner_params(layout, p, 0, CondKind::LogScale);
    CHECK(l0[layout.shape(CondKind::LogScale).bias()] == doctest::Approx(std::log(2.0)));
  }
  {
    Eigen::Matrix2d L;
    L << 1, 0, 0.5, 2;
    auto p = faf_from_full_rank(Eigen::Vector2d::Zero(), L);
    CHECK(conditioner_params(layout, p, 1, CondKind::Shift)[0] == doctest::Approx(0.5));
    CHECK(conditioner_params(layout, p, 1, CondKind::LogScale)[layout.shape(CondKind::LogScale).bias()] ==
          doctest::Approx(std::log(2.0)));
  }
  std::mt19937_64 rng(15);
  for (int t = 0; t < 100; ++t) {
    const std::size_t d = 1 + t % 6;
    AffineBase b;
    b.mu = Eigen::VectorXd::Random(static_cast<Eigen::Index>(d));
    b.L = random_chol(d, rng);
    const auto p = faf_from_full_rank(b.mu, b.L);
    const auto eps = random_eps(d, rng);
    const auto want = full_rank_forward(b, eps);
    const auto got = faf_forward(FlowSpec::make(FamilyTag::FAF, d), p, eps);
    for (std::size_t i = 0; i < d; ++i) CHECK(std::abs(got.z[i] - want.z[i]) < 1e-12);
    CHECK(std::abs(got.logdet - want.logdet) < 1e-12);
  }
  Eigen::Matrix2d bad;
  bad << 1, 0, 0, 0;
  CHECK_THROWS(faf_from_full_rank(Eigen::Vector2d::Zero(), bad));
}

TEST_CASE("spec validation and labels") {
  CHECK(parse_family("FR-VIP", 3).vip);
  CHECK(parse_family("MIF", 3).mif.has_value());
  CHECK_THROWS(parse_family("XYZ", 3));
  CHECK_THROWS(FlowSpec::make_vip(FamilyTag::IAF, 3));
  FlowSpec bad = FlowSpec::make(FamilyTag::FAF, 3);
  bad.mif = MifFlags{};
  CHECK_THROWS(bad.validate());
  CHECK(FlowSpec::make_mif(3, MifFlags{false, true, true, false}).label() == "MIF(w/o t)");
  CHECK(FlowSpec::make_mif(3, MifFlags{true, true, false, false}).label() == "MIF(w/o Order)");
  CHECK(FlowSpec::make_mif(3, MifFlags{true, false, true, false}).label() == "MIF(w/o Prior)");
}

TEST_CASE("layout sizes") {
  CHECK(ParamLayout(FlowSpec::make(FamilyTag::MF, 4)).size() == 8);
  CHECK(ParamLayout(FlowSpec::make(FamilyTag::FR, 4)).size() == 4 + 10);
  CHECK(ParamLayout(FlowSpec::make_vip(FamilyTag::FR, 4)).size() == 4 + 10 + 4);
  // FAF: two conditioners of arity D per step
  CHECK(ParamLayout(FlowSpec::make(FamilyTag::FAF, 3)).size() == 3 * 2 * 4);
  // MIF: m and log s see D + 2 slots, t sees D + 2 + D
  CHECK(ParamLayout(FlowSpec::make_mif(3, MifFlags{})).size() == 3 * (6 + 6 + 9));
}

TEST_CASE("order warnings") {
  const FlowSpec noorder = FlowSpec::make_mif(3, MifFlags{true, true, false, false});
  CHECK(flow_warnings(noorder, make_funnel(3)).empty());
  CHECK_FALSE(flow_warnings(noorder, make_standard_normal(3)).empty());
  CHECK(flow_warnings(FlowSpec::make_mif(3, MifFlags{}), make_standard_normal(3)).empty());
}

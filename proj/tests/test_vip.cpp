#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "doctest.h"
#include "flowvi/benchmarks.hpp"
#include "flowvi/family.hpp"
#include "flowvi/vip.hpp"

using namespace flowvi;

namespace {

ModelGraph scalar_site(double f, double g) {
  ModelGraph m;
  m.name = "scalar";
  LatentSite s;
  s.name = "z";
  s.mean = ScalarFn::constant(f);
  s.log_scale = ScalarFn::constant(std::log(g));
  s.affine = true;
  m.sites.push_back(s);
  return m;
}

std::vector<double> uniform(std::size_t d, double lo, double hi, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(d);
  for (double& x : v) x = u(rng);
  return v;
}

std::vector<double> normals(std::size_t d, double sd, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0, sd);
  std::vector<double> v(d);
  for (double& x : v) x = n(rng);
  return v;
}

Eigen::MatrixXd numeric_jacobian(const std::function<std::vector<double>(const std::vector<double>&)>& f,
                                 std::vector<double> x, double h) {
  const std::size_t d = x.size();
  Eigen::MatrixXd J(d, d);
  for (std::size_t j = 0; j < d; ++j) {
    const double x0 = x[j];
    x[j] = x0 + h;
    const auto p = f(x);
    x[j] = x0 - h;
    const auto m = f(x);
    x[j] = x0;
    for (std::size_t i = 0; i < d; ++i) J(i, j) = (p[i] - m[i]) / (2 * h);
  }
  return J;
}

AffineBase random_base(std::size_t d, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0, 1), h(0, 0.5);
  AffineBase b;
  b.mu.resize(static_cast<Eigen::Index>(d));
  b.L = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < d; ++i) {
    b.mu(static_cast<Eigen::Index>(i)) = n(rng);
    for (std::size_t j = 0; j < i; ++j) b.L(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = h(rng);
    b.L(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) = std::exp(h(rng));
  }
  return b;
}

double gaussian_logpdf(const Eigen::VectorXd& x, const AffineBase& b) {
  const Eigen::VectorXd r = b.L.triangularView<Eigen::Lower>().solve(x - b.mu);
  double lp = -0.5 * r.squaredNorm() - 0.5 * static_cast<double>(x.size()) * std::log(2 * M_PI);
  for (Eigen::Index i = 0; i < x.size(); ++i) lp -= std::log(b.L(i, i));
  return lp;
}

}  // namespace

TEST_CASE("vip_transform examples") {
  const ModelGraph slice = make_funnel(2);
  {
    const double lam[2] = {0, 0}, zt[2] = {1, 2};
    const auto r = vip_transform<double>(slice, lam, zt);
    CHECK(r.z[0] == doctest::Approx(3.0));
    CHECK(r.z[1] == doctest::Approx(2 * std::exp(1.5)).epsilon(1e-12));
    CHECK(r.z[1] == doctest::Approx(8.9634).epsilon(1e-4));
    CHECK(r.log_jacobian == doctest::Approx(std::log(3.0) + 1.5).epsilon(1e-12));

    const auto back = vip_inverse(slice, lam, r.z);
    CHECK(std::abs(back[0] - 1) < 1e-10);
    CHECK(std::abs(back[1] - 2) < 1e-10);
  }
  {
    const double lam[2] = {1, 1}, zt[2] = {0.4, -1.1};
    const auto r = vip_transform<double>(slice, lam, zt);
    CHECK(r.z[0] == 0.4);
    CHECK(r.z[1] == -1.1);
    CHECK(r.log_jacobian == 0.0);
    CHECK(vip_inverse(slice, lam, r.z) == std::vector<double>{0.4, -1.1});
  }
  {
    const ModelGraph one = scalar_site(2, 4);
    const double lam[1] = {0.5}, zt[1] = {3};
    CHECK(vip_transform<double>(one, lam, zt).z[0] == doctest::Approx(6.0).epsilon(1e-14));
  }
}

TEST_CASE("vip errors name the coordinate") {
  const ModelGraph slice = make_funnel(3);
  const double lam[3] = {0, 0, 0}, zt[3] = {500, 1, 1};
  CHECK_THROWS_WITH_AS(vip_transform<double>(slice, lam, zt), doctest::Contains("coordinate 2"),
                       ad::NumericDomainError);
  const double z[3] = {-3000, 1, 1};
  CHECK_THROWS_AS(vip_inverse(slice, lam, z), ad::NumericDomainError);
  const double short_lam[2] = {0, 0};
  CHECK_THROWS(vip_transform<double>(slice, short_lam, zt));
}

TEST_CASE("custom-prior sites pass through") {
  const Benchmark seeds = build_benchmark("seeds");
  const FlowSpec spec = FlowSpec::make_vip(FamilyTag::FR, seeds.graph.dim());
  const ParamLayout layout(spec);
  std::vector<double> p(layout.size(), 0.0);
  const auto lam = vip_lambda<double>(layout, seeds.graph, p);
  CHECK(lam[0] == 0.0);
  for (std::size_t i = 1; i < lam.size(); ++i) CHECK(lam[i] == 0.5);
  std::vector<double> zt(seeds.graph.dim(), 0.3);
  zt[0] = 1.7;
  const auto r = vip_transform<double>(seeds.graph, lam, zt);
  CHECK(r.z[0] == 1.7);
}

TEST_CASE("property: vip_inverse round trip (500 cases)") {
  std::mt19937_64 rng(21);
  double worst = 0;
  for (int t = 0; t < 500; ++t) {
    const std::size_t d = 2 + t % 7;
    const ModelGraph m = t % 3 == 0   ? make_funnel(d)
                         : t % 3 == 1 ? make_affine_chain(d, t)
                                      : make_nonlinear_chain(d, t);
    const auto lam = uniform(d, 0.01, 0.99, rng);
    const auto zt = normals(d, 1.0, rng);
    const auto z = vip_transform<double>(m, lam, zt).z;
    const auto back = vip_inverse(m, lam, z);
    for (std::size_t i = 0; i < d; ++i) worst = std::max(worst, std::abs(back[i] - zt[i]));
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("property: lambda at the high sigmoid end is close to the identity") {
  std::mt19937_64 rng(22);
  const double lam_hi = sigmoid(20.0);
  for (int t = 0; t < 200; ++t) {
    const std::size_t d = 2 + t % 5;
    const ModelGraph m = t % 2 ? make_funnel(d) : make_nonlinear_chain(d, t);
    const std::vector<double> lam(d, lam_hi);
    const auto zt = uniform(d, -3, 3, rng);
    const auto z = vip_transform<double>(m, lam, zt).z;
    for (std::size_t i = 0; i < d; ++i) CHECK(std::abs(z[i] - zt[i]) < 1e-6);
  }
}

TEST_CASE("property: log_jacobian equals the numeric Jacobian (D<=4)") {
  std::mt19937_64 rng(23);
  for (int t = 0; t < 200; ++t) {
    const std::size_t d = 1 + t % 4;
    const ModelGraph m = t % 2 ? make_funnel(d) : make_nonlinear_chain(d, t);
    const auto lam = uniform(d, 0.05, 0.95, rng);
    const auto zt = normals(d, 1.0, rng);
    const auto J = numeric_jacobian(
        [&](const std::vector<double>& x) { return vip_transform<double>(m, lam, x).z; }, zt, 1e-5);
    const double num = std::log(std::abs(J.determinant()));
    CHECK(std::abs(vip_transform<double>(m, lam, zt).log_jacobian - num) < 1e-5);
  }
}

TEST_CASE("sample_q_vip") {
  std::mt19937_64 rng(24);
  SUBCASE("identity base, lambda -> 1, standard normal prior") {
    const ModelGraph m = make_standard_normal(3);
    const std::vector<double> lam(3, 1.0);
    const auto eps = normals(3, 1.0, rng);
    const auto s = sample_q_vip(AffineBase::identity(3), lam, m, eps);
    double lq = 0;
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(s.z[i] == eps[i]);
      lq += std_normal_logpdf(eps[i]);
    }
    CHECK(s.log_q == doctest::Approx(lq).epsilon(1e-14));
  }
  SUBCASE("funnel, lambda = 0: the samples are exact") {
    const ModelGraph m = make_funnel(10);
    const std::vector<double> lam(10, 0.0);
    double kl = 0;
    const int n = 100000;
    for (int s = 0; s < n; ++s) {
      const auto eps = normals(10, 1.0, rng);
      const auto q = sample_q_vip(AffineBase::identity(10), lam, m, eps);
      kl += q.log_q - log_joint(m, q.z);
    }
    CHECK(std::abs(kl / n) < 0.02);
  }
  SUBCASE("log_q matches a brute-force change of variables (D=4)") {
    for (int t = 0; t < 100; ++t) {
      const ModelGraph m = t % 2 ? make_funnel(4) : make_nonlinear_chain(4, t);
      const AffineBase b = random_base(4, rng);
      const auto lam = uniform(4, 0.05, 0.95, rng);
      const auto eps = normals(4, 1.0, rng);
      const auto s = sample_q_vip(b, lam, m, eps);
      const Eigen::VectorXd zt = Eigen::Map<const Eigen::VectorXd>(s.z_tilde.data(), 4);
      const auto J = numeric_jacobian(
          [&](const std::vector<double>& x) { return vip_transform<double>(m, lam, x).z; }, s.z_tilde, 1e-5);
      const double brute = gaussian_logpdf(zt, b) - std::log(std::abs(J.determinant()));
      CHECK(std::abs(s.log_q - brute) < 1e-5);
    }
  }
}

TEST_CASE("log_p_vip") {
  std::mt19937_64 rng(25);
  const Benchmark s = build_benchmark("8schools");
  const auto zt = normals(10, 1.0, rng);
  const std::vector<double> one(10, 1.0);
  CHECK(log_p_vip<double>(s.graph, one, zt) == doctest::Approx(log_joint(s.graph, zt)).epsilon(1e-13));

  const ModelGraph f = make_funnel(10);
  const std::vector<double> zero(10, 0.0);
  double expect = 0;
  for (double v : zt) expect += std_normal_logpdf(v);
  CHECK(log_p_vip<double>(f, zero, zt) == doctest::Approx(expect).epsilon(1e-13));
}

TEST_CASE("gfaf_params_from_vip examples") {
  {
    const ModelGraph m = make_standard_normal(3);
    const std::vector<double> lam(3, 0.0), zp{0.2, 0.3}, ep{0.1, -0.4};
    const auto st = gfaf_params_from_vip(m, Eigen::VectorXd::Zero(3), Eigen::MatrixXd::Identity(3, 3), lam, zp, ep, 2);
    CHECK(st.m == 0.0);
    CHECK(st.log_s == 0.0);
    CHECK(st.t == 0.0);
  }
  {
    const ModelGraph m = make_funnel(2);
    const std::vector<double> lam(2, 0.0);
    const auto st =
        gfaf_params_from_vip(m, Eigen::VectorXd::Zero(2), Eigen::MatrixXd::Identity(2, 2), lam, {}, {}, 0);
    CHECK(st.m == 0.0);
    CHECK(st.log_s == doctest::Approx(std::log(3.0)));
    CHECK(st.t == 0.0);
  }
  {
    ModelGraph m = make_standard_normal(2);
    m.sites[1].mean = ScalarFn::constant(1.0);
    Eigen::Matrix2d L;
    L << 1, 0, 0.5, 2;
    const std::vector<double> lam{0.5, 0.3}, zp{0.9}, ep{2.0};
    const auto st = gfaf_params_from_vip(m, Eigen::VectorXd::Zero(2), L, lam, zp, ep, 1);
    CHECK(st.m == doctest::Approx(1.0));
    CHECK(st.log_s == doctest::Approx(std::log(2.0)));
    CHECK(st.t == doctest::Approx(-0.35).epsilon(1e-14));
  }
}

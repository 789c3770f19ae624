#include <cmath>

#include "doctest.h"
#include "flowvi/benchmarks.hpp"
#include "flowvi/equivalence.hpp"

using namespace flowvi;

TEST_CASE("triangular composition matches the dense map") {
  const EquivReport one = check_lemma1(200, 1, 1e-15);
  CHECK(one.passed);
  CHECK(one.max_z_error <= 1e-15);

  const EquivReport five = check_lemma1(1000, 5, 1e-10);
  CHECK(five.passed);
  CHECK(five.trials == 1000);
  CHECK(five.failures.empty());

  const EquivReport zero = check_lemma1(100, 5, 0.0);
  CHECK_FALSE(zero.passed);
  CHECK(std::max(zero.max_z_error, zero.max_logdet_error) > 0.0);
  CHECK_FALSE(zero.failures.empty());
  CHECK(zero.failures.size() <= kMaxListedFailures);
}

TEST_CASE("flow equivalence on the benchmark graphs") {
  for (const char* name : {"funnel", "8schools"}) {
    CAPTURE(name);
    const EquivReport r = check_theorem1(build_benchmark(name).graph, 1000, 1e-8);
    CHECK(r.passed);
    CHECK(r.max_z_error < 1e-8);
    CHECK(r.max_logdet_error < 1e-8);
  }
  CHECK(check_theorem1(make_nonlinear_chain(8, 3), 500, 1e-8).passed);
  CHECK(check_theorem1(make_standard_normal(4), 100, 1e-12).passed);
}

TEST_CASE("flow equivalence requires parents to precede children") {
  const Benchmark s = build_benchmark("8schools");
  std::vector<std::size_t> perm{2, 0, 1, 3, 4, 5, 6, 7, 8, 9};
  CHECK_THROWS_AS(check_theorem1(reorder_sites(s.graph, perm), 10, 1e-8), ModelError);
}

TEST_CASE("mutation test: broken constructions are caught") {
  const ModelGraph funnel = make_funnel(10);
  const ModelGraph chain = make_affine_chain(8, 5);
  for (Theorem1Mutation mut : {Theorem1Mutation::DropOneMinusLambda, Theorem1Mutation::DropLambdaInT,
                               Theorem1Mutation::DropMuInT, Theorem1Mutation::DropPrefixInT,
                               Theorem1Mutation::ShiftFromMu}) {
    CAPTURE(static_cast<int>(mut));
    // funnel has f = 0, so mean-dependent mutations need the chain
    const EquivReport a = check_theorem1(funnel, 200, 1e-8, 1, mut);
    const EquivReport b = check_theorem1(chain, 200, 1e-8, 1, mut);
    const double err = std::max({a.max_z_error, a.max_logdet_error, b.max_z_error,
                                 b.max_logdet_error});
    CHECK(err > 1e-3);
    CHECK_FALSE((a.passed && b.passed));
  }
}

TEST_CASE("corollary 1") {
  CHECK(check_corollary1(make_funnel(10), 500, 1e-10).passed);
  CHECK(check_corollary1(build_benchmark("8schools").graph, 500, 1e-10).passed);
  CHECK(check_corollary1(make_affine_chain(8, 2), 500, 1e-10).passed);
  CHECK(check_corollary1(make_standard_normal(3), 50, 1e-12).passed);
  CHECK_THROWS_AS(check_corollary1(make_nonlinear_chain(5, 1), 10, 1e-10), ModelError);
}

TEST_CASE("kl identity") {
  for (const char* name : {"funnel", "8schools"}) {
    CAPTURE(name);
    const ModelGraph g = build_benchmark(name).graph;
    CHECK(check_kl_identity(g, 1000, 1e-9).passed);
    const std::vector<double> one(g.dim(), 1.0);
    const EquivReport fixed = check_kl_identity(g, one, 100, 1e-12);
    CHECK(fixed.passed);
  }
  CHECK(check_kl_identity(build_benchmark("seeds").graph, 200, 1e-9).passed);
}

TEST_CASE("kl identity skips points the model cannot resolve") {
  for (const char* name : {"irt", "radon"}) {
    CAPTURE(name);
    const EquivReport r = check_kl_identity(build_benchmark(name).graph, 1000, 1e-9);
    CHECK(r.passed);
    CHECK(r.out_of_domain > 0);
    CHECK(r.out_of_domain * kMaxOutOfDomainShare <= r.trials);
  }
  CHECK(check_kl_identity(make_funnel(10), 1000, 1e-9).out_of_domain == 0);

  EquivReport r = check_kl_identity(make_funnel(10), 10, 1e-9);
  r.out_of_domain = 2;
  r.finalize();
  CHECK_FALSE(r.passed);
}

TEST_CASE("reports are deterministic per seed and merge by max") {
  const ModelGraph g = make_funnel(10);
  const EquivReport a = check_theorem1(g, 100, 1e-8, 7);
  const EquivReport b = check_theorem1(g, 100, 1e-8, 7);
  CHECK(a == b);
  const EquivReport c = check_theorem1(g, 100, 1e-8, 8);
  EquivReport m = a;
  m.merge(c);
  m.finalize();
  CHECK(m.trials == 200);
  CHECK(m.max_z_error == std::max(a.max_z_error, c.max_z_error));
  CHECK(m.passed);
}

TEST_CASE("random instances follow the declared ranges") {
  for (std::uint64_t t = 0; t < 200; ++t) {
    const RandomInstance r = random_instance(6, 3, t);
    for (double l : r.lambda) CHECK((l >= 0.05 && l <= 0.95));
    for (Eigen::Index i = 0; i < 6; ++i) {
      CHECK(r.L(i, i) > 0);
      for (Eigen::Index j = i + 1; j < 6; ++j) CHECK(r.L(i, j) == 0.0);
    }
  }
  CHECK(random_instance(4, 1, 0).eps == random_instance(4, 1, 0).eps);
  CHECK(random_instance(4, 1, 0).eps != random_instance(4, 1, 1).eps);
}

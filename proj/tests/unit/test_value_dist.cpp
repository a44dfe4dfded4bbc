#include <cmath>
#include <random>

#include "doctest.h"

#include "d2c/errors.hpp"
#include "d2c/oracle/oracle.hpp"
#include "d2c/random.hpp"
#include "d2c/value_dist.hpp"

using namespace d2c;

namespace {

std::vector<double> random_simplex(std::size_t n, Rng& rng) {
  std::exponential_distribution<double> e(1.0);
  std::vector<double> p(n);
  double s = 0.0;
  for (auto& v : p) s += (v = e(rng));
  for (auto& v : p) v /= s;
  return p;
}

std::vector<double> vec(std::span<const double> s) { return {s.begin(), s.end()}; }

}  // namespace

TEST_SUITE("value_dist") {

TEST_CASE("support atoms and validation") {
  const ValueSupport s(-1.0, 1.0, 51);
  CHECK(s.delta_z() == doctest::Approx(0.04));
  CHECK(s.atom(0) == -1.0);
  CHECK(s.atoms().back() == 1.0);
  CHECK(s.atom(25) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK_THROWS_AS(ValueSupport(1.0, 1.0, 5), InvalidInput);
  CHECK_THROWS_AS(ValueSupport(-1.0, 1.0, 1), InvalidInput);
  CHECK_THROWS_AS(ValueSupport(-INFINITY, 1.0, 5), InvalidInput);
}

TEST_CASE("distribution validation") {
  const ValueSupport s(-1.0, 1.0, 3);
  CHECK_THROWS_AS(ValueDistribution(s, {0.5, 0.5}), InvalidInput);
  CHECK_THROWS_AS(ValueDistribution(s, {0.5, 0.6, 0.0}), InvalidInput);
  CHECK_THROWS_AS(ValueDistribution(s, {1.5, -0.5, 0.0}), InvalidInput);
  CHECK_THROWS_AS(ValueDistribution(s, {NAN, 0.5, 0.5}), InvalidInput);
  const ValueDistribution tiny(s, {-1e-13, 0.5, 0.5 + 1e-13});
  CHECK(tiny[0] == 0.0);
}

TEST_CASE("softmax_dist examples") {
  const ValueSupport s51(-1.0, 1.0, 51);
  const std::vector<double> flat(51, 3.0);
  const auto u = softmax_dist(flat, s51);
  for (double p : u.probs()) CHECK(p == doctest::Approx(1.0 / 51.0).epsilon(1e-14));

  const ValueSupport s2(-1.0, 1.0, 2);
  const std::vector<double> l = {0.0, std::log(3.0)};
  const auto z = softmax_dist(l, s2);
  CHECK(z[0] == doctest::Approx(0.25).epsilon(1e-14));
  CHECK(z[1] == doctest::Approx(0.75).epsilon(1e-14));

  const ValueSupport s3(-1.0, 1.0, 3);
  const std::vector<double> extreme = {700.0, -700.0, 699.0};
  const auto e = softmax_dist(extreme, s3);
  for (double p : e.probs()) CHECK(std::isfinite(p));
  const auto ls = oracle::naive_log_softmax({700.0 - 700.0, -1400.0, -1.0});
  CHECK(e[0] == doctest::Approx(std::exp(ls[0])).epsilon(1e-12));
  CHECK(e[2] == doctest::Approx(std::exp(ls[2])).epsilon(1e-12));

  const std::vector<double> bad = {0.0, NAN, 0.0};
  CHECK_THROWS_AS(softmax_dist(bad, s3), InvalidInput);
}

TEST_CASE("expectation examples") {
  const ValueSupport s(-1.0, 1.0, 51);
  CHECK(std::abs(expectation(ValueDistribution::uniform(s))) < 1e-15);
  CHECK(expectation(ValueDistribution::point_mass(s, 50)) == 1.0);
  const ValueSupport s3(-1.0, 1.0, 3);
  CHECK(expectation(ValueDistribution(s3, {0.5, 0.5, 0.0})) == doctest::Approx(-0.5));
}

TEST_CASE("bellman_project examples") {
  const ValueSupport s(-1.0, 1.0, 3);
  // Identity transport.
  const ValueDistribution z(s, {0.2, 0.3, 0.5});
  CHECK(bellman_project(z, 0.0, 1.0, s) == z);
  // Half-atom shift.
  const auto p = bellman_project(ValueDistribution::point_mass(s, 1), 0.5, 1.0, s);
  CHECK(vec(p.probs()) == std::vector<double>{0.0, 0.5, 0.5});
  // Clamp to v_max.
  const auto c = bellman_project(z, 10.0, 0.9, s);
  CHECK(vec(c.probs()) == std::vector<double>{0.0, 0.0, 1.0});
  const auto n = oracle::naive_project({0.2, 0.3, 0.5}, 10.0, 0.9, -1.0, 1.0);
  CHECK(vec(c.probs()) == n);
  // Terminal: gamma 0 puts all mass at r.
  const auto t = bellman_project(z, -0.5, 0.0, s);
  CHECK(t[0] == doctest::Approx(0.5));
  CHECK(t[1] == doctest::Approx(0.5));
  CHECK_THROWS_AS(bellman_project(z, 0.0, 1.5, s), InvalidInput);
  CHECK_THROWS_AS(bellman_project(z, 0.0, -0.1, s), InvalidInput);
}

TEST_CASE("bellman_project agrees with the brute-force oracle") {
  Rng rng = make_rng(11, Stream::eval);
  std::uniform_real_distribution<double> r(-3.0, 3.0);
  for (int c = 0; c < 500; ++c) {
    const std::size_t n = 2 + static_cast<std::size_t>(c % 40);
    const ValueSupport s(-2.0, 1.5, n);
    const auto p = random_simplex(n, rng);
    const double gamma = uniform01(rng);
    const double rew = r(rng);
    const auto got = bellman_project(ValueDistribution(s, p), rew, gamma, s);
    const auto want = oracle::naive_project(p, rew, gamma, -2.0, 1.5);
    double mass = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      CHECK(std::abs(got[i] - want[i]) <= 1e-9);
      mass += got[i];
    }
    CHECK(std::abs(mass - 1.0) <= 1e-12);
  }
}

TEST_CASE("bellman_project is linear in the input distribution") {
  Rng rng = make_rng(12, Stream::eval);
  const ValueSupport s(-1.0, 1.0, 21);
  for (int c = 0; c < 100; ++c) {
    const auto p = random_simplex(21, rng);
    const auto q = random_simplex(21, rng);
    const double lam = uniform01(rng);
    std::vector<double> mix(21);
    for (std::size_t i = 0; i < 21; ++i) mix[i] = lam * p[i] + (1.0 - lam) * q[i];
    const double rew = 0.37, gamma = 0.9;
    const auto a = bellman_project(ValueDistribution(s, p), rew, gamma, s);
    const auto b = bellman_project(ValueDistribution(s, q), rew, gamma, s);
    const auto m = bellman_project(ValueDistribution(s, mix), rew, gamma, s);
    for (std::size_t i = 0; i < 21; ++i) {
      CHECK(std::abs(m[i] - (lam * a[i] + (1.0 - lam) * b[i])) <= 1e-12);
    }
  }
}

TEST_CASE("clipped_merge examples") {
  const ValueSupport s(-1.0, 1.0, 3);
  const ValueDistribution a(s, {0.5, 0.5, 0.0});
  const ValueDistribution b(s, {0.0, 0.5, 0.5});
  CHECK(clipped_merge(a, a) == a);
  CHECK(vec(clipped_merge(a, b).probs()) == std::vector<double>{0.5, 0.5, 0.0});

  const ValueDistribution c(s, {0.6, 0.0, 0.4});
  const ValueDistribution d(s, {0.0, 1.0, 0.0});
  const auto m = clipped_merge(c, d);
  CHECK(m[0] == doctest::Approx(0.6));
  CHECK(m[1] == doctest::Approx(0.4));
  CHECK(m[2] == 0.0);
  CHECK(m.cdf() == std::vector<double>{0.6, 1.0, 1.0});

  const ValueSupport other(-2.0, 2.0, 3);
  CHECK_THROWS_AS(clipped_merge(a, ValueDistribution::uniform(other)), InvalidInput);
}

TEST_CASE("clipped_merge properties on random pairs") {
  Rng rng = make_rng(13, Stream::eval);
  for (int c = 0; c < 2000; ++c) {
    const std::size_t n = 2 + static_cast<std::size_t>(c % 60);
    const ValueSupport s(-1.0, 1.0, n);
    const ValueDistribution z1(s, random_simplex(n, rng));
    const ValueDistribution z2(s, random_simplex(n, rng));
    const auto m = clipped_merge(z1, z2);
    const auto c1 = z1.cdf(), c2 = z2.cdf(), cm = m.cdf();
    for (std::size_t k = 0; k < n; ++k) CHECK(cm[k] == std::max(c1[k], c2[k]));
    CHECK(expectation(m) <= std::min(expectation(z1), expectation(z2)) + 1e-12);
    CHECK(clipped_merge(z2, z1) == m);
    CHECK(clipped_merge(z1, z1) == z1);
    // Probabilities track the oracle's differenced CDF.
    const auto want = oracle::naive_merge(vec(z1.probs()), vec(z2.probs()));
    for (std::size_t k = 0; k < n; ++k) CHECK(std::abs(m[k] - want[k]) <= 1e-15);
  }
}

TEST_CASE("log_sum_exp examples and shift invariance") {
  const std::vector<double> zeros = {0.0, 0.0};
  CHECK(log_sum_exp(zeros) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  const std::vector<double> big = {1000.0, 1000.0};
  CHECK(log_sum_exp(big) == doctest::Approx(1000.0 + std::log(2.0)).epsilon(1e-15));
  const std::vector<double> lopsided = {0.0, -745.0};
  CHECK(std::abs(log_sum_exp(lopsided) - std::log1p(std::exp(-745.0))) <= 1e-12);
  CHECK_THROWS_AS(log_sum_exp(std::vector<double>{}), InvalidInput);

  Rng rng = make_rng(14, Stream::eval);
  std::normal_distribution<double> nd(0.0, 5.0);
  for (int c = 0; c < 200; ++c) {
    std::vector<double> x(10), y(10);
    const double shift = nd(rng) * 10.0;
    for (std::size_t i = 0; i < 10; ++i) {
      x[i] = nd(rng);
      y[i] = x[i] + shift;
    }
    CHECK(std::abs(log_sum_exp(y) - (log_sum_exp(x) + shift)) <= 1e-12 * std::max(1.0, std::abs(shift)));
    CHECK(std::abs(log_sum_exp(x) - oracle::naive_log_sum_exp(x)) <= 1e-10);
  }
}

TEST_CASE("log_complement_cdf examples") {
  const std::vector<double> u = {0.0, 0.0};
  CHECK(log_complement_cdf(u, 0, 0.0) == doctest::Approx(std::log(0.5)).epsilon(1e-15));
  const std::vector<double> l = {0.3, -1.2, 2.0, 0.1};
  CHECK(log_complement_cdf(l, 3, 1e-4) == std::log(1e-4));
  CHECK_THROWS_AS(log_complement_cdf(l, 4, 1e-4), InvalidInput);
  CHECK_THROWS_AS(log_complement_cdf(l, 0, 1.0), InvalidInput);

  Rng rng = make_rng(15, Stream::eval);
  std::normal_distribution<double> nd(0.0, 2.0);
  for (int c = 0; c < 300; ++c) {
    std::vector<double> x(12);
    for (auto& v : x) v = nd(rng);
    const std::size_t k = static_cast<std::size_t>(c % 11);
    CHECK(std::abs(log_complement_cdf(x, k, 1e-4) - oracle::naive_log_complement_cdf(x, k, 1e-4)) <= 1e-10);
  }
  // Saturated logits stay finite.
  std::vector<double> sat(51, -700.0);
  sat[0] = 700.0;
  for (std::size_t k = 0; k + 1 < 51; ++k) CHECK(std::isfinite(log_complement_cdf(sat, k, 1e-4)));
}

TEST_CASE("complement_cdf_objective matches its term sum and gradient") {
  Rng rng = make_rng(16, Stream::eval);
  std::normal_distribution<double> nd(0.0, 1.5);
  for (int c = 0; c < 50; ++c) {
    const std::size_t n = 3 + static_cast<std::size_t>(c % 10);
    std::vector<double> x(n);
    for (auto& v : x) v = nd(rng);
    const auto o = complement_cdf_objective(x, 1e-4);
    double sum = 0.0;
    for (std::size_t k = 0; k + 1 < n; ++k) sum += log_complement_cdf(x, k, 1e-4);
    CHECK(o.value == doctest::Approx(sum).epsilon(1e-12));
    const auto fd = oracle::fd_gradient(
        [](const std::vector<double>& l) {
          double s = 0.0;
          for (std::size_t k = 0; k + 1 < l.size(); ++k) s += oracle::naive_log_complement_cdf(l, k, 1e-4);
          return s;
        },
        x, 1e-6);
    for (std::size_t i = 0; i < n; ++i) CHECK(o.grad[i] == doctest::Approx(fd[i]).epsilon(1e-6));
    // Per-term gradient.
    const std::size_t k = static_cast<std::size_t>(c) % (n - 1);
    const auto g = log_complement_cdf_grad(x, k, 1e-4);
    const auto fdk = oracle::fd_gradient(
        [k](const std::vector<double>& l) { return oracle::naive_log_complement_cdf(l, k, 1e-4); }, x, 1e-6);
    for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(g[i] - fdk[i]) <= 1e-7);
  }
}

TEST_CASE("saturated critic objectives") {
  std::vector<double> top(51, -50.0);
  top[50] = 50.0;
  const auto best = complement_cdf_objective(top, 1e-4);
  CHECK(std::abs(best.value) < 1e-12);
  for (double g : best.grad) CHECK(std::abs(g) < 1e-12);

  std::vector<double> bottom(51, -50.0);
  bottom[0] = 50.0;
  const auto worst = complement_cdf_objective(bottom, 1e-4);
  CHECK(worst.value == doctest::Approx(50.0 * std::log(1e-4)).epsilon(1e-9));
}

TEST_CASE("cross entropy examples and gradient") {
  const ValueSupport s(-1.0, 1.0, 5);
  const std::vector<double> logits = {0.1, -0.4, 1.2, 0.0, -2.0};
  const auto matched = cross_entropy_with_grad(softmax_dist(logits, s), logits);
  for (double g : matched.grad) CHECK(std::abs(g) < 1e-15);

  const std::vector<double> flat(5, 0.0);
  const auto pm = cross_entropy_with_grad(ValueDistribution::point_mass(s, 2), flat);
  for (std::size_t j = 0; j < 5; ++j) {
    CHECK(pm.grad[j] == doctest::Approx(0.2 - (j == 2 ? 1.0 : 0.0)).epsilon(1e-15));
  }
  CHECK(pm.loss == doctest::Approx(std::log(5.0)));

  Rng rng = make_rng(17, Stream::eval);
  std::normal_distribution<double> nd(0.0, 1.0);
  for (int c = 0; c < 50; ++c) {
    std::vector<double> l(5);
    for (auto& v : l) v = nd(rng);
    const auto t = random_simplex(5, rng);
    const auto got = cross_entropy_with_grad(ValueDistribution(s, t), l);
    CHECK(got.loss == doctest::Approx(oracle::naive_cross_entropy(t, l)).epsilon(1e-12));
    const auto fd = oracle::fd_gradient(
        [&](const std::vector<double>& x) { return oracle::naive_cross_entropy(t, x); }, l, 1e-6);
    for (std::size_t i = 0; i < 5; ++i) {
      CHECK(std::abs(got.grad[i] - fd[i]) <= 1e-6 * std::max(1.0, std::abs(fd[i])));
    }
  }
}

}  // TEST_SUITE

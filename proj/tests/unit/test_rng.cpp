#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numeric>
#include <vector>

#include "crp/rng.hpp"

using namespace crp;

TEST_CASE("same seed, same stream; different seed, different stream", "[rng]") {
  Rng a(42), b(42), c(43);
  bool all_equal = true, any_diff = false;
  for (int i = 0; i < 256; ++i) {
    auto x = a.next_u64(), y = b.next_u64(), z = c.next_u64();
    all_equal = all_equal && (x == y);
    any_diff = any_diff || (x != z);
  }
  CHECK(all_equal);
  CHECK(any_diff);
}

TEST_CASE("uniform stays in range and looks flat", "[rng]") {
  Rng r(7);
  const int n = 200000;
  std::vector<int> bins(10, 0);
  for (int i = 0; i < n; ++i) {
    double u = r.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    bins[static_cast<int>(u * 10)]++;
  }
  // chi-square with 9 dof, 99.9th percentile ~ 27.9
  double chi2 = 0;
  for (int b : bins) chi2 += (b - n / 10.0) * (b - n / 10.0) / (n / 10.0);
  CHECK(chi2 < 27.9);
}

TEST_CASE("below is unbiased at the modulus boundary", "[rng]") {
  Rng r(11);
  std::vector<int> counts(3, 0);
  for (int i = 0; i < 30000; ++i) counts[static_cast<int>(r.below(3))]++;
  for (int c : counts) CHECK(std::abs(c - 10000) < 400);
  CHECK(r.uniform_int(5, 5) == 5);
}

TEST_CASE("normal mean and variance", "[rng]") {
  Rng r(13);
  const int n = 200000;
  double s = 0, s2 = 0;
  for (int i = 0; i < n; ++i) {
    double x = r.normal();
    s += x;
    s2 += x * x;
  }
  double mean = s / n, var = s2 / n - mean * mean;
  CHECK(std::abs(mean) < 0.01);
  CHECK(std::abs(var - 1.0) < 0.02);
}

TEST_CASE("gamma moments across shape regimes", "[rng]") {
  Rng r(17);
  for (double shape : {0.4, 1.0, 2.5, 9.0}) {
    const double scale = 2.0;
    const int n = 200000;
    double s = 0, s2 = 0;
    for (int i = 0; i < n; ++i) {
      double x = r.gamma(shape, scale);
      REQUIRE(x > 0);
      s += x;
      s2 += x * x;
    }
    double mean = s / n, var = s2 / n - mean * mean;
    CHECK_THAT(mean, Catch::Matchers::WithinRel(shape * scale, 0.03));
    CHECK_THAT(var, Catch::Matchers::WithinRel(shape * scale * scale, 0.06));
  }
}

TEST_CASE("poisson moments in both sampler regimes", "[rng]") {
  Rng r(19);
  for (double lam : {0.3, 4.0, 180.0}) {
    const int n = 100000;
    double s = 0, s2 = 0;
    for (int i = 0; i < n; ++i) {
      double x = static_cast<double>(r.poisson(lam));
      s += x;
      s2 += x * x;
    }
    double mean = s / n, var = s2 / n - mean * mean;
    CHECK_THAT(mean, Catch::Matchers::WithinRel(lam, 0.03));
    CHECK_THAT(var, Catch::Matchers::WithinRel(lam, 0.06));
  }
}

TEST_CASE("negative binomial matches mean and gamma-poisson variance", "[rng]") {
  Rng r(23);
  const double mu = 6.0, theta = 2.5;
  const int n = 200000;
  double s = 0, s2 = 0;
  for (int i = 0; i < n; ++i) {
    double x = static_cast<double>(r.negative_binomial(mu, theta));
    s += x;
    s2 += x * x;
  }
  double mean = s / n, var = s2 / n - mean * mean;
  CHECK_THAT(mean, Catch::Matchers::WithinRel(mu, 0.03));
  CHECK_THAT(var, Catch::Matchers::WithinRel(mu + mu * mu / theta, 0.05));
}

TEST_CASE("dirichlet draws sum to one and track concentrations", "[rng]") {
  Rng r(29);
  std::vector<double> alpha = {1.0, 3.0, 6.0};
  std::vector<double> acc(3, 0.0);
  const int n = 50000;
  for (int i = 0; i < n; ++i) {
    auto d = r.dirichlet(alpha);
    double total = std::accumulate(d.begin(), d.end(), 0.0);
    REQUIRE(std::abs(total - 1.0) < 1e-12);
    for (int j = 0; j < 3; ++j) acc[j] += d[j];
  }
  double a0 = std::accumulate(alpha.begin(), alpha.end(), 0.0);
  for (int j = 0; j < 3; ++j) CHECK_THAT(acc[j] / n, Catch::Matchers::WithinAbs(alpha[j] / a0, 0.01));
}

TEST_CASE("shuffle is a permutation and seed-stable", "[rng]") {
  Rng a(31), b(31);
  std::vector<int> x(50), y(50);
  std::iota(x.begin(), x.end(), 0);
  std::iota(y.begin(), y.end(), 0);
  a.shuffle(x);
  b.shuffle(y);
  CHECK(x == y);
  std::sort(y.begin(), y.end());
  std::vector<int> ident(50);
  std::iota(ident.begin(), ident.end(), 0);
  CHECK(y == ident);
}

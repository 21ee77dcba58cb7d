#include "doctest.h"

#include <cmath>
#include <random>
#include <vector>

#include "p2pgrid/errors.hpp"
#include "p2pgrid/utility.hpp"

using namespace p2pgrid;

TEST_CASE("build_utility compensates the exponent") {
  const auto u = build_utility(0.15, 2.0, -2.0, 0.02);
  CHECK(u.r_prime == doctest::Approx(-2.0 / 1.01).epsilon(1e-15));
  const auto tiny = build_utility(0.15, 2.0, -2.0, 1e-12);
  CHECK(tiny.r_prime == doctest::Approx(-2.0).epsilon(1e-11));
  const auto def = build_utility(0.15, 2.0, -2.0);
  CHECK(def.delta_shift == doctest::Approx(0.02));
}

TEST_CASE("build_utility rejects bad parameters") {
  CHECK_THROWS_AS(build_utility(0.10, 1.0, -1.0, 0.01), DomainError);
  CHECK_THROWS_AS(build_utility(0.0, 1.0, -2.0, 0.01), DomainError);
  CHECK_THROWS_AS(build_utility(0.1, -1.0, -2.0, 0.01), DomainError);
  CHECK_THROWS_AS(build_utility(0.1, 1.0, 0.5, 0.01), DomainError);
  CHECK_THROWS_AS(build_utility(0.1, 1.0, -2.0, 0.0), DomainError);
}

TEST_CASE("marginal utility anchors and decreases") {
  const auto u = build_utility(0.15, 2.0, -2.0, 0.02);
  CHECK(marginal_utility(u, 2.0) == doctest::Approx(0.15).epsilon(1e-14));
  const double g0 = 0.15 * std::pow(0.02 / 2.02, 1.0 / u.r_prime);
  CHECK(marginal_utility(u, 0.0) == doctest::Approx(g0).epsilon(1e-14));
  CHECK(std::isfinite(marginal_utility(u, 0.0)));
  CHECK(marginal_utility(u, 4.0) < 0.15);
  CHECK_THROWS_AS(marginal_utility(u, -1e-3), DomainError);
}

TEST_CASE("utility value: zero at origin and derivative matches") {
  const auto u = build_utility(0.3, 1.5, -0.7, 0.015);
  CHECK(utility_value(u, 0.0) == 0.0);
  CHECK(utility_value(u, 1.5) > 0.0);
  CHECK_THROWS_AS(utility_value(u, -0.1), DomainError);
  const double h = 1e-5;
  for (double d : {0.2, 1.0, 1.5, 3.0, 9.0}) {
    const double fd = (utility_value(u, d + h) - utility_value(u, d - h)) / (2 * h);
    CHECK(std::abs(fd - marginal_utility(u, d)) <= 1e-6);
  }
  // Steep region next to zero demand: truncation error scales with g''.
  const double fd = (utility_value(u, 0.01 + h) - utility_value(u, 0.01 - h)) / (2 * h);
  CHECK(fd == doctest::Approx(marginal_utility(u, 0.01)).epsilon(1e-6));
}

TEST_CASE("utility near the logarithmic exponent") {
  // r' close to -1 puts the closed form next to its removable singularity.
  const auto u = build_utility(0.2, 1.0, -1.0 * (1.0 + 0.01) + 1e-13, 0.01);
  const double h = 1e-5;
  for (double d : {0.1, 1.0, 4.0}) {
    const double fd = (utility_value(u, d + h) - utility_value(u, d - h)) / (2 * h);
    CHECK(std::abs(fd - marginal_utility(u, d)) <= 1e-6);
  }
}

TEST_CASE("inverse demand") {
  const auto u = build_utility(0.15, 2.0, -2.0, 0.02);
  CHECK(inverse_demand(u, 0.15) == doctest::Approx(2.0).epsilon(1e-14));
  for (double d = 0.05; d <= 20.0; d += 0.37)
    CHECK(std::abs(inverse_demand(u, marginal_utility(u, d)) - d) <= 1e-9);
  // Threshold price where demand reaches zero: g(0).
  const double g0 = 0.15 * std::pow(0.02 / 2.02, 1.0 / u.r_prime);
  CHECK(inverse_demand(u, g0 * 1.001) == 0.0);
  CHECK(inverse_demand(u, g0 * 0.999) > 0.0);
  CHECK_THROWS_AS(inverse_demand(u, 0.0), DomainError);
}

TEST_CASE("elasticity at the anchor equals the target") {
  for (double r : {-0.5, -1.5, -2.0, -3.0}) {
    const auto u = build_utility(0.1, 1.3, r, 0.013);
    const double pi0 = 0.1, h = 1e-7;
    const double slope = (inverse_demand(u, pi0 + h) - inverse_demand(u, pi0 - h)) / (2 * h);
    CHECK(slope * pi0 / inverse_demand(u, pi0) == doctest::Approx(r).epsilon(1e-6));
  }
}

TEST_CASE("random strict concavity") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int i = 0; i < 500; ++i) {
    const auto u = build_utility(0.05 + unif(rng), 0.2 + 3 * unif(rng), -0.3 - 3 * unif(rng));
    if (std::abs(u.r_prime + 1.0) < 1e-6) continue;
    double a = 5 * unif(rng), b = 5 * unif(rng);
    if (a > b) std::swap(a, b);
    if (b - a < 1e-6) continue;
    CHECK(marginal_utility(u, a) > marginal_utility(u, b));
    const double mid = utility_value(u, 0.5 * (a + b));
    CHECK(mid - 0.5 * (utility_value(u, a) + utility_value(u, b)) > 0.0);
  }
}

TEST_CASE("total utility sums periods") {
  std::vector<QuasiCPEUtility> us{build_utility(0.1, 1.0, -2.0), build_utility(0.3, 2.0, -0.5)};
  std::vector<double> d{0.5, 1.0};
  CHECK(total_utility(us, d) == doctest::Approx(utility_value(us[0], 0.5) + utility_value(us[1], 1.0)));
}

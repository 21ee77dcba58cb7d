#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "p2pgrid/dispatch.hpp"
#include "p2pgrid/errors.hpp"

using namespace p2pgrid;
using V = std::vector<double>;

namespace {

ExtendedBattery lossy_battery() {
  ExtendedBattery b;
  b.p_max_discharge = 3.0;
  b.p_max_charge = 2.0;
  b.sigma_plus = 0.95;
  b.sigma_minus = 0.9;
  b.theta = 0.98;
  b.s_max = 10.0;
  b.s0 = 5.0;
  return b;
}

AgentSpec make_agent(std::size_t T, double pi0, double d0, double r, double solar,
                     std::optional<Battery> bat = std::nullopt) {
  AgentSpec a;
  a.id = "a";
  a.utility.assign(T, build_utility(pi0, d0, r));
  a.solar.assign(T, solar);
  a.battery = bat;
  return a;
}

Scenario random_scenario(std::mt19937_64& rng, bool extended = false) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Scenario sc;
  sc.horizon = 1 + static_cast<std::size_t>(unif(rng) * 12);
  const int n = 1 + static_cast<int>(unif(rng) * 5);
  for (int k = 0; k < n; ++k) {
    AgentSpec a;
    a.id = "n" + std::to_string(k);
    for (std::size_t t = 0; t < sc.horizon; ++t) {
      a.utility.push_back(build_utility(0.1 + 0.2 * unif(rng), 0.5 + 2 * unif(rng),
                                        -0.5 - unif(rng)));
      a.solar.push_back(unif(rng) < 0.3 ? 0.0 : 3 * unif(rng));
    }
    if (unif(rng) < 0.6) {
      const double cap = 5 * unif(rng);
      if (extended) {
        ExtendedBattery e = lossy_battery();
        e.s_max = cap;
        e.s0 = cap * unif(rng);
        e.p_max_discharge = 0.5 + 2 * unif(rng);
        e.p_max_charge = 0.5 + 2 * unif(rng);
        a.battery = e;
      } else {
        a.battery = IdealBattery{0.5 + 2 * unif(rng), cap, cap * unif(rng)};
      }
    }
    sc.agents.push_back(a);
  }
  return sc;
}

}  // namespace

TEST_CASE("battery response at the non-unique price profile") {
  const IdealBattery b{3.0, 10.0, 5.0};
  const V price{1, 1, 2, 3, 1};
  const auto r = best_response_battery(b, price);
  CHECK(r.objective == doctest::Approx(-14.0).epsilon(1e-9));
  CHECK(check_feasible(b, r.p).empty());
  for (const V& p : {V{-0.5, -0.5, 3, 3, 0}, V{0, -1, 3, 3, 0}, V{-1, -1, 3, 3, 1}}) {
    CHECK(check_feasible(b, p).empty());
    CHECK(battery_objective(price, p) == doctest::Approx(-14.0).epsilon(1e-12));
  }
}

TEST_CASE("battery response corner cases") {
  const IdealBattery b{100.0, 10.0, 4.0};
  CHECK(best_response_battery(b, V(4, 0.3)).objective == doctest::Approx(-0.3 * 4.0).epsilon(1e-8));
  CHECK(std::abs(best_response_battery(b, V(4, 0.0)).objective) <= 1e-8);
}

TEST_CASE("lossy battery example") {
  const auto b = lossy_battery();
  const V price{1, 1.0204, 2, 3, 1.2680};
  const V dispatches[] = {{-0.9587, -0.9587, 3, 3, 0}, {0, -1.8983, 3, 3, 0},
                          {-1.5863, -1.5863, 3, 3, 1}};
  for (const auto& p : dispatches) {
    V dis(5), chg(5);
    for (int t = 0; t < 5; ++t) {
      dis[t] = std::max(p[t], 0.0);
      chg[t] = std::max(-p[t], 0.0);
    }
    CHECK(check_feasible_ext(b, dis, chg, 1e-3).empty());
    CHECK(battery_objective(price, p) == doctest::Approx(-13.063).epsilon(1e-3 / 13.063));
  }
  const auto r = best_response_battery(b, price);
  CHECK(std::abs(r.objective + 13.063) <= 1e-3);
  CHECK(check_feasible_ext(b, r.p_dis, r.p_chg).empty());
  for (int t = 0; t < 5; ++t) CHECK(r.p_dis[t] * r.p_chg[t] == 0.0);
}

TEST_CASE("consumer and solar responses") {
  const auto u = build_utility(0.2, 1.5, -0.8);
  std::vector<QuasiCPEUtility> us(3, u);
  const auto d = best_response_consumer(us, V{0.2, 0.2, 1e6});
  CHECK(d[0] == doctest::Approx(1.5));
  CHECK(d[2] == 0.0);
  CHECK_THROWS_AS(best_response_consumer(us, V{0.2, 0.0, 0.1}), DomainError);
  // Cross-check with the solver on the same separable problem.
  for (double p : {0.05, 0.2, 0.6}) {
    ProgramBuilder b;
    b.add_variable(0.0, kInf, p, u);
    CHECK(solve_concave_program(b.build()).primal(0) ==
          doctest::Approx(inverse_demand(u, p)).epsilon(1e-7));
  }
  const auto s = best_response_solar(V{1, 2, 3}, V{0.1, 0.0, -0.2});
  CHECK(s.p_s == V{1, 2, 0});
  CHECK(s.negative_price_periods == std::vector<std::size_t>{2});
}

TEST_CASE("single consumer without storage consumes all solar") {
  Scenario sc;
  sc.horizon = 3;
  sc.agents.push_back(make_agent(3, 0.15, 2.0, -1.5, 1.2));
  const auto sol = solve_centralized(sc);
  for (int t = 0; t < 3; ++t) {
    CHECK(sol.agents[0].d[t] == doctest::Approx(1.2).epsilon(1e-8));
    CHECK(sol.price[t] ==
          doctest::Approx(marginal_utility(sc.agents[0].utility[t], 1.2)).epsilon(1e-7));
  }
}

TEST_CASE("identical consumers share equally") {
  Scenario sc;
  sc.horizon = 2;
  sc.agents.push_back(make_agent(2, 0.15, 2.0, -1.5, 3.0));
  sc.agents.push_back(make_agent(2, 0.15, 2.0, -1.5, 0.0));
  const auto sol = solve_centralized(sc);
  for (int t = 0; t < 2; ++t)
    CHECK(sol.agents[0].d[t] == doctest::Approx(sol.agents[1].d[t]).epsilon(1e-8));
}

TEST_CASE("grid search oracle on a two-period instance") {
  // One consumer with a battery and one without; solar is used in full at
  // positive prices, leaving the battery schedule and the split of energy.
  Scenario sc;
  sc.horizon = 2;
  sc.agents.push_back(make_agent(2, 0.2, 1.0, -0.8, 0.0, IdealBattery{1.0, 1.5, 1.0}));
  sc.agents.push_back(make_agent(2, 0.3, 1.2, -1.3, 0.0));
  sc.agents[0].solar = {2.0, 0.1};
  sc.agents[1].solar = {0.5, 0.2};
  const auto sol = solve_centralized(sc);
  const auto& u0 = sc.agents[0].utility;
  const auto& u1 = sc.agents[1].utility;
  double best = -kInf;
  const double step = 1e-3;
  // Battery p1 on the grid; s1 = 1 - p1, p2 in [-1,1] with 0 <= s1 - p2 <= 1.5.
  for (double p1 = -0.5; p1 <= 1.0 + 1e-12; p1 += step) {
    const double s1 = 1.0 - p1;
    // Energy given to period 2 is best discharged fully (positive prices).
    const double p2 = std::min(1.0, s1);
    const double e1 = 2.5 + p1, e2 = 0.3 + p2;
    if (e1 < 0 || e2 < 0) continue;
    double period_best[2] = {-kInf, -kInf};
    const double e[2] = {e1, e2};
    for (int t = 0; t < 2; ++t) {
      // Split by bisection on equal marginal utility, refined by grid below.
      double lo = 0.0, hi = e[t];
      for (int it = 0; it < 100; ++it) {
        const double mid = 0.5 * (lo + hi);
        (marginal_utility(u0[t], mid) > marginal_utility(u1[t], e[t] - mid) ? lo : hi) = mid;
      }
      period_best[t] = utility_value(u0[t], lo) + utility_value(u1[t], e[t] - lo);
    }
    best = std::max(best, period_best[0] + period_best[1]);
  }
  CHECK(std::abs(best - sol.welfare) <= 1e-4);
  CHECK(best <= sol.welfare + 1e-9);
}

TEST_CASE("random scenarios satisfy the optimality identities") {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 40; ++trial) {
    const auto sc = random_scenario(rng);
    const auto sol = solve_centralized(sc);
    const auto rep = verify_kkt(sc, sol);
    CHECK(rep.duality_gap <= 1e-6);
    CHECK(rep.price_dynamics <= 1e-5);
    CHECK(rep.battery_stationarity <= 1e-5);
    CHECK(rep.solar_stationarity <= 1e-6);
    CHECK(rep.decomposition_gap <= 1e-5);
    CHECK(sol.balance_residual <= 1e-6);
    for (std::size_t n = 0; n < sc.agents.size(); ++n)
      for (std::size_t t = 0; t < sc.horizon; ++t) {
        const auto& a = sol.agents[n];
        if (a.d[t] > 0)
          CHECK(std::abs(sol.price[t] - marginal_utility(sc.agents[n].utility[t], a.d[t]) -
                         a.lambda_d_minus[t]) <= 1e-6);
        CHECK(a.p_s[t] == doctest::Approx(sc.agents[n].solar[t]).epsilon(1e-7));
        CHECK(sol.price[t] > 0.0);
      }
  }
}

TEST_CASE("perturbed demand is flagged") {
  std::mt19937_64 rng(5);
  const auto sc = random_scenario(rng);
  auto sol = solve_centralized(sc);
  CHECK(verify_kkt(sc, sol).demand_stationarity <= 1e-6);
  sol.agents[0].d[0] += 1e-2;
  CHECK(verify_kkt(sc, sol).demand_stationarity > 1e-3);
}

TEST_CASE("extended model: lossless limit matches the ideal model") {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 10; ++trial) {
    const auto sc = random_scenario(rng);
    Scenario ext = sc;
    for (auto& a : ext.agents) {
      if (!a.battery) continue;
      const auto ib = std::get<IdealBattery>(*a.battery);
      ExtendedBattery e;
      e.p_max_discharge = e.p_max_charge = ib.p_max;
      e.s_max = ib.s_max;
      e.s0 = ib.s0;
      a.battery = e;
    }
    const auto s1 = solve_centralized(sc);
    const auto s2 = solve_centralized_ext(ext);
    CHECK(s2.welfare == doctest::Approx(s1.welfare).epsilon(1e-8));
  }
}

TEST_CASE("extended model: repaired dispatch keeps balance and identities") {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 20; ++trial) {
    const auto sc = random_scenario(rng, true);
    const auto sol = solve_centralized_ext(sc);
    CHECK(sol.balance_residual <= 1e-6);
    CHECK(sol.negative_price_periods.empty());
    const auto rep = verify_kkt(sc, sol);
    CHECK(rep.battery_stationarity <= 1e-5);
    CHECK(rep.price_dynamics <= 1e-5);
    CHECK(rep.duality_gap <= 1e-6);
    for (const auto& a : sol.agents)
      for (std::size_t t = 0; t < a.p_dis.size(); ++t) CHECK(a.p_dis[t] * a.p_chg[t] == 0.0);
  }
}

TEST_CASE("centralized rejects malformed scenarios") {
  Scenario sc;
  CHECK_THROWS_AS(solve_centralized(sc), DomainError);
  sc.horizon = 2;
  sc.agents.push_back(make_agent(1, 0.1, 1.0, -2.0, 1.0));
  CHECK_THROWS_AS(solve_centralized(sc), DomainError);
}

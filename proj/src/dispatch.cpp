#include "p2pgrid/dispatch.hpp"

#include <algorithm>
#include <cmath>
#include <variant>

#include "p2pgrid/errors.hpp"
#include "storage_rows.hpp"

namespace p2pgrid {

using Eigen::Index;

namespace {

constexpr double kNegativePriceTolerance = 1e-9;

std::vector<double> take(const Eigen::VectorXd& v, const std::vector<Index>& idx) {
  std::vector<double> out(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) out[i] = v(idx[i]);
  return out;
}

std::vector<double> take_signed(const Eigen::VectorXd& up, const Eigen::VectorXd& lo,
                                const std::vector<Index>& idx) {
  std::vector<double> out(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) out[i] = up(idx[i]) - lo(idx[i]);
  return out;
}

double sum_utility(const std::vector<QuasiCPEUtility>& u, const std::vector<double>& d) {
  double total = 0.0;
  for (std::size_t t = 0; t < d.size(); ++t)
    total += detail::utility_value_ext(u[t], std::max(d[t], 0.0));
  return total;
}

struct AgentVars {
  std::vector<Index> d, ps;
  std::optional<detail::StorageVars> storage;
};

std::vector<double> storage_soc(const Battery& b, const AgentDispatch& a) {
  if (const auto* ib = std::get_if<IdealBattery>(&b)) return soc_trajectory(*ib, a.p_b);
  return soc_trajectory_ext(std::get<ExtendedBattery>(b), a.p_dis, a.p_chg);
}

DispatchSolution solve_centralized_impl(const Scenario& sc, const SolverOptions& opt) {
  validate(sc);
  const std::size_t T = sc.horizon;
  ProgramBuilder b;
  std::vector<AgentVars> vars(sc.agents.size());
  for (std::size_t n = 0; n < sc.agents.size(); ++n) {
    const auto& a = sc.agents[n];
    for (std::size_t t = 0; t < T; ++t) vars[n].d.push_back(b.add_variable(0.0, kInf, 0.0, a.utility[t]));
    for (std::size_t t = 0; t < T; ++t) vars[n].ps.push_back(b.add_variable(0.0, a.solar[t]));
    if (a.battery) vars[n].storage = detail::add_storage(b, *a.battery, T, sc.dt);
  }
  std::vector<Index> balance(T);
  for (std::size_t t = 0; t < T; ++t) {
    ProgramBuilder::Row row;
    for (const auto& v : vars) {
      row.emplace_back(v.d[t], 1.0);
      row.emplace_back(v.ps[t], -1.0);
      if (v.storage) v.storage->add_injection(row, t, -1.0);
    }
    balance[t] = b.add_equality(row, 0.0);
  }
  const auto program = b.build();
  const auto r = solve_concave_program(program, opt);
  if (!r.optimal())
    throw InternalError("centralized dispatch: solver returned " + to_string(r.status));

  DispatchSolution sol;
  sol.status = r.status;
  sol.kkt_residual = r.kkt_residual;
  sol.price = take(r.eq_duals, balance);
  sol.dual_welfare = -r.dual_objective;
  for (std::size_t n = 0; n < sc.agents.size(); ++n) {
    const auto& v = vars[n];
    AgentDispatch a;
    a.d = take(r.primal, v.d);
    for (double& x : a.d) x = std::max(x, 0.0);
    a.p_s = take(r.primal, v.ps);
    a.lambda_d_minus = take(r.lower_duals, v.d);
    a.lambda_s = take_signed(r.upper_duals, r.lower_duals, v.ps);
    a.p_b.assign(T, 0.0);
    if (v.storage) {
      const auto& s = *v.storage;
      a.lambda_c.resize(T);
      for (std::size_t t = 0; t < T; ++t)
        a.lambda_c[t] = r.ineq_duals(s.upper_rows[t]) - r.ineq_duals(s.lower_rows[t]);
      if (s.extended) {
        sol.extended = true;
        a.p_dis = take(r.primal, s.dis);
        a.p_chg = take(r.primal, s.chg);
        for (double& x : a.p_dis) x = std::max(x, 0.0);
        for (double& x : a.p_chg) x = std::max(x, 0.0);
        a.lambda_b = take_signed(r.upper_duals, r.lower_duals, s.dis);
        a.lambda_b_minus = take_signed(r.upper_duals, r.lower_duals, s.chg);
      } else {
        a.p_b = take(r.primal, s.p);
        a.lambda_b = take_signed(r.upper_duals, r.lower_duals, s.p);
      }
    }
    sol.agents.push_back(std::move(a));
  }
  for (std::size_t t = 0; t < T; ++t)
    if (sol.price[t] < -kNegativePriceTolerance) sol.negative_price_periods.push_back(t);
  return sol;
}

void finish(const Scenario& sc, DispatchSolution& sol) {
  const std::size_t T = sc.horizon;
  sol.welfare = 0.0;
  for (std::size_t n = 0; n < sc.agents.size(); ++n) {
    auto& a = sol.agents[n];
    a.utility = sum_utility(sc.agents[n].utility, a.d);
    sol.welfare += a.utility;
    if (sc.agents[n].battery) a.soc = storage_soc(*sc.agents[n].battery, a);
  }
  sol.balance_residual = 0.0;
  for (std::size_t t = 0; t < T; ++t) {
    double net = 0.0;
    for (const auto& a : sol.agents) net += a.d[t] - a.p_s[t] - a.p_b[t];
    sol.balance_residual = std::max(sol.balance_residual, std::abs(net));
  }
}

}  // namespace

bool Scenario::has_extended_battery() const {
  return std::any_of(agents.begin(), agents.end(), [](const AgentSpec& a) {
    return a.battery && std::holds_alternative<ExtendedBattery>(*a.battery);
  });
}

void validate(const Scenario& sc) {
  auto fail = [](const std::string& what) { throw DomainError("scenario: " + what); };
  if (sc.horizon < 1) fail("horizon must be >= 1");
  if (!(sc.dt > 0.0)) fail("dt must be > 0");
  if (sc.agents.empty()) fail("at least one agent is required");
  for (const auto& a : sc.agents) {
    if (a.utility.size() != sc.horizon || a.solar.size() != sc.horizon)
      fail("agent '" + a.id + "' sequences do not match the horizon");
    for (double s : a.solar)
      if (!(s >= 0.0) || !std::isfinite(s)) fail("agent '" + a.id + "' has negative solar capacity");
    if (a.battery) {
      std::visit([](const auto& bat) { validate(bat); }, *a.battery);
      const double bdt = std::visit([](const auto& bat) { return bat.dt; }, *a.battery);
      if (std::abs(bdt - sc.dt) > 1e-12) fail("agent '" + a.id + "' battery dt differs from scenario dt");
    }
  }
}

DispatchSolution solve_centralized(const Scenario& sc, const SolverOptions& opt) {
  if (sc.has_extended_battery())
    throw DomainError("solve_centralized: extended batteries need solve_centralized_ext");
  auto sol = solve_centralized_impl(sc, opt);
  finish(sc, sol);
  return sol;
}

DispatchSolution solve_centralized_ext(const Scenario& sc, const SolverOptions& opt) {
  auto sol = solve_centralized_impl(sc, opt);
  for (std::size_t n = 0; n < sc.agents.size(); ++n) {
    const auto& spec = sc.agents[n];
    if (!spec.battery || !std::holds_alternative<ExtendedBattery>(*spec.battery)) continue;
    auto& a = sol.agents[n];
    const auto& eb = std::get<ExtendedBattery>(*spec.battery);
    auto [dis, chg] = repair_complementarity(eb, a.p_dis, a.p_chg);
    for (std::size_t t = 0; t < sc.horizon; ++t) {
      // Extra injection freed by the repair is curtailed from own solar first.
      double extra = (dis[t] - chg[t]) - (a.p_dis[t] - a.p_chg[t]);
      const double cut = std::clamp(extra, 0.0, a.p_s[t]);
      a.p_s[t] -= cut;
      extra -= cut;
      a.d[t] += extra;
      a.p_b[t] = dis[t] - chg[t];
    }
    a.p_dis = std::move(dis);
    a.p_chg = std::move(chg);
  }
  finish(sc, sol);
  if (sol.balance_residual > 1e-6)
    throw InternalError("extended dispatch: power balance lost after repair");
  return sol;
}

std::vector<double> best_response_consumer(std::span<const QuasiCPEUtility> u,
                                           std::span<const double> price) {
  if (u.size() != price.size()) throw DomainError("best_response_consumer: length mismatch");
  std::vector<double> d(u.size());
  for (std::size_t t = 0; t < u.size(); ++t) d[t] = inverse_demand(u[t], price[t]);
  return d;
}

double battery_objective(std::span<const double> price, std::span<const double> p) {
  double v = 0.0;
  for (std::size_t t = 0; t < p.size(); ++t) v -= price[t] * p[t];
  return v;
}

double battery_objective_ext(std::span<const double> price, std::span<const double> p_dis,
                             std::span<const double> p_chg) {
  double v = 0.0;
  for (std::size_t t = 0; t < p_dis.size(); ++t) v -= price[t] * (p_dis[t] - p_chg[t]);
  return v;
}

BatteryResponse best_response_battery(const IdealBattery& bat, std::span<const double> price,
                                      const SolverOptions& opt) {
  validate(bat);
  ProgramBuilder b;
  const auto s = detail::add_storage(b, bat, price.size(), bat.dt);
  for (std::size_t t = 0; t < price.size(); ++t) b.set_cost(s.p[t], -price[t]);
  const auto r = solve_linear_program(b.build(), opt);
  if (!r.optimal()) throw InternalError("battery response: solver returned " + to_string(r.status));
  BatteryResponse out;
  out.p = take(r.primal, s.p);
  out.objective = battery_objective(price, out.p);
  return out;
}

BatteryResponse best_response_battery(const ExtendedBattery& bat, std::span<const double> price,
                                      const SolverOptions& opt) {
  validate(bat);
  ProgramBuilder b;
  const auto s = detail::add_storage(b, bat, price.size(), bat.dt);
  for (std::size_t t = 0; t < price.size(); ++t) {
    b.set_cost(s.dis[t], -price[t]);
    b.set_cost(s.chg[t], price[t]);
  }
  const auto r = solve_linear_program(b.build(), opt);
  if (!r.optimal()) throw InternalError("battery response: solver returned " + to_string(r.status));
  auto dis = take(r.primal, s.dis);
  auto chg = take(r.primal, s.chg);
  for (double& x : dis) x = std::clamp(x, 0.0, bat.p_max_discharge);
  for (double& x : chg) x = std::clamp(x, 0.0, bat.p_max_charge);
  BatteryResponse out;
  std::tie(out.p_dis, out.p_chg) = repair_complementarity(bat, dis, chg);
  out.p = net_power(out.p_dis, out.p_chg);
  out.objective = battery_objective(price, out.p);
  return out;
}

SolarResponse best_response_solar(std::span<const double> cap, std::span<const double> price) {
  if (cap.size() != price.size()) throw DomainError("best_response_solar: length mismatch");
  SolarResponse out;
  out.p_s.resize(cap.size());
  for (std::size_t t = 0; t < cap.size(); ++t) {
    if (price[t] < 0.0) {
      out.p_s[t] = 0.0;
      out.negative_price_periods.push_back(t);
    } else {
      out.p_s[t] = cap[t];
    }
  }
  return out;
}

Decomposition decompose(const Scenario& sc, std::span<const double> price,
                        const SolverOptions& opt) {
  validate(sc);
  if (price.size() != sc.horizon) throw DomainError("decompose: price length mismatch");
  Decomposition out;
  std::vector<double> net(sc.horizon, 0.0);
  for (const auto& a : sc.agents) {
    const auto d = best_response_consumer(a.utility, price);
    double wn = 0.0;
    for (std::size_t t = 0; t < sc.horizon; ++t) {
      wn += -utility_value(a.utility[t], d[t]) + price[t] * d[t];
      net[t] += d[t];
    }
    out.consumer.push_back(wn);
    const auto solar = best_response_solar(a.solar, price);
    out.solar.push_back(battery_objective(price, solar.p_s));
    for (std::size_t t = 0; t < sc.horizon; ++t) net[t] -= solar.p_s[t];
    if (a.battery) {
      const auto resp = std::visit(
          [&](const auto& bat) { return best_response_battery(bat, price, opt); }, *a.battery);
      out.battery.push_back(resp.objective);
      for (std::size_t t = 0; t < sc.horizon; ++t) net[t] -= resp.p[t];
    }
  }
  out.total = 0.0;
  for (double v : out.consumer) out.total += v;
  for (double v : out.solar) out.total += v;
  for (double v : out.battery) out.total += v;
  for (double v : net) out.balance_residual = std::max(out.balance_residual, std::abs(v));
  return out;
}

double KktReport::max_residual() const {
  return std::max({demand_stationarity, battery_stationarity, solar_stationarity, price_dynamics,
                   duality_gap, decomposition_gap, balance_residual});
}

KktReport verify_kkt(const Scenario& sc, const DispatchSolution& sol, const SolverOptions& opt) {
  validate(sc);
  KktReport rep;
  const std::size_t T = sc.horizon;
  const auto& pi = sol.price;
  for (std::size_t n = 0; n < sc.agents.size(); ++n) {
    const auto& spec = sc.agents[n];
    const auto& a = sol.agents[n];
    for (std::size_t t = 0; t < T; ++t) {
      const double g = marginal_utility(spec.utility[t], std::max(a.d[t], 0.0));
      rep.demand_stationarity =
          std::max(rep.demand_stationarity, std::abs(pi[t] - g - a.lambda_d_minus[t]));
      rep.solar_stationarity = std::max(rep.solar_stationarity, std::abs(pi[t] - a.lambda_s[t]));
    }
    if (!spec.battery) continue;
    const double dt = sc.dt;
    if (const auto* eb = std::get_if<ExtendedBattery>(&*spec.battery)) {
      const double th = eb->theta, out = eb->discharge_factor(), in = eb->sigma_minus;
      for (std::size_t t = 0; t < T; ++t) {
        double tail = 0.0;
        for (std::size_t tau = t; tau < T; ++tau)
          tail += std::pow(th, static_cast<double>(tau - t)) * a.lambda_c[tau];
        rep.battery_stationarity =
            std::max({rep.battery_stationarity,
                      std::abs(pi[t] - (a.lambda_b[t] - dt * out * tail)),
                      std::abs(pi[t] - (-a.lambda_b_minus[t] - dt * in * tail))});
        if (t + 1 < T) {
          const double lhs = th * pi[t + 1] - pi[t];
          const double rhs = th * a.lambda_b[t + 1] - a.lambda_b[t] + dt * out * a.lambda_c[t];
          rep.price_dynamics = std::max(rep.price_dynamics, std::abs(lhs - rhs));
        }
      }
    } else {
      for (std::size_t t = 0; t < T; ++t) {
        double tail = 0.0;
        for (std::size_t tau = t; tau < T; ++tau) tail += a.lambda_c[tau];
        rep.battery_stationarity =
            std::max(rep.battery_stationarity, std::abs(pi[t] - (a.lambda_b[t] - dt * tail)));
        if (t + 1 < T) {
          const double lhs = pi[t + 1] - pi[t];
          const double rhs = a.lambda_b[t + 1] - a.lambda_b[t] + dt * a.lambda_c[t];
          rep.price_dynamics = std::max(rep.price_dynamics, std::abs(lhs - rhs));
        }
      }
    }
  }
  rep.duality_gap = std::abs(sol.welfare - sol.dual_welfare);
  const bool positive = std::all_of(pi.begin(), pi.end(), [](double p) { return p > 0.0; });
  if (positive) {
    rep.decomposition_gap = std::abs(decompose(sc, pi, opt).total + sol.welfare);
  } else {
    rep.decomposition_gap = kInf;
  }
  rep.balance_residual = sol.balance_residual;
  return rep;
}

LocalResult solve_local(const AgentSpec& agent, double dt, std::span<const double> price,
                        std::span<const double> q_lo, std::span<const double> q_hi,
                        double demand_floor, const SolverOptions& opt) {
  const std::size_t T = agent.utility.size();
  if (price.size() != T || q_lo.size() != T || q_hi.size() != T || agent.solar.size() != T)
    throw DomainError("solve_local: length mismatch for agent '" + agent.id + "'");
  ProgramBuilder b;
  std::vector<Index> d(T), q(T);
  for (std::size_t t = 0; t < T; ++t) d[t] = b.add_variable(-demand_floor, kInf, 0.0, agent.utility[t]);
  for (std::size_t t = 0; t < T; ++t) q[t] = b.add_variable(q_lo[t], q_hi[t], price[t]);
  std::optional<detail::StorageVars> storage;
  if (agent.battery) storage = detail::add_storage(b, *agent.battery, T, dt);
  for (std::size_t t = 0; t < T; ++t) {
    ProgramBuilder::Row row{{d[t], 1.0}, {q[t], -1.0}};
    if (storage) storage->add_injection(row, t, -1.0);
    b.add_equality(row, agent.solar[t]);
  }
  const auto r = solve_concave_program(b.build(), opt);
  LocalResult out;
  out.status = r.status;
  out.d = take(r.primal, d);
  out.q = take(r.primal, q);
  out.p_b.assign(T, 0.0);
  if (storage) {
    if (storage->extended) {
      for (std::size_t t = 0; t < T; ++t)
        out.p_b[t] = r.primal(storage->dis[t]) - r.primal(storage->chg[t]);
    } else {
      out.p_b = take(r.primal, storage->p);
    }
  }
  for (std::size_t t = 0; t < T; ++t) {
    out.utility += detail::utility_value_ext(agent.utility[t], out.d[t]);
    out.payment += price[t] * out.q[t];
  }
  return out;
}

}  // namespace p2pgrid

#include "p2pgrid/negotiation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "p2pgrid/errors.hpp"
#include "storage_rows.hpp"

namespace p2pgrid {

namespace {

constexpr double kBetaFloor = 1e-9;
constexpr double kDegenerateDemand = 1e-7;

using Matrix = std::vector<std::vector<double>>;

std::vector<double> zeros(std::size_t n) { return std::vector<double>(n, 0.0); }

std::vector<double> negated(std::span<const double> v) {
  std::vector<double> out(v.size());
  for (std::size_t t = 0; t < v.size(); ++t) out[t] = -v[t];
  return out;
}

LocalResult fixed_trade(const AgentSpec& a, double dt, std::span<const double> price,
                        std::span<const double> q, double floor) {
  return solve_local(a, dt, price, q, q, floor);
}

std::vector<double> offer_total(const Matrix& q_prime, std::span<const double> exited) {
  std::vector<double> total(exited.begin(), exited.end());
  for (const auto& row : q_prime)
    for (std::size_t t = 0; t < total.size(); ++t) total[t] += row[t];
  return total;
}

}  // namespace

void validate(const NegotiationConfig& cfg) {
  auto fail = [](const std::string& what) { throw DomainError("negotiation config: " + what); };
  if (!(cfg.gamma > 0.0 && cfg.gamma < 1.0)) fail("gamma must lie in (0, 1)");
  if (!(cfg.epsilon > 0.0)) fail("epsilon must be > 0");
  if (!(cfg.delta0 > cfg.gamma * cfg.epsilon)) fail("delta0 must exceed gamma * epsilon");
  if (cfg.max_iters < 1) fail("max_iters must be >= 1");
}

std::string to_string(Termination t) {
  return t == Termination::kAllExited ? "all-exited" : "max-iters";
}

Projection pi_project(const AgentSpec& v, double dt, const Matrix& q, const Matrix& q_hat,
                      std::span<const double> exited) {
  const std::size_t T = v.solar.size();
  if (q.size() != q_hat.size() || exited.size() != T)
    throw DomainError("pi_project: dimension mismatch");
  const auto q0 = offer_total(q, exited);
  const auto q1 = offer_total(q_hat, exited);
  double beta = 0.0;
  if (!v.battery) {
    for (std::size_t t = 0; t < T; ++t) {
      if (q0[t] <= v.solar[t]) continue;
      if (q1[t] > v.solar[t] + kTradeSlack)
        throw InternalError("pi_project: reference offer is infeasible");
      beta = std::max(beta, (q0[t] - v.solar[t]) / (q0[t] - q1[t]));
    }
  } else {
    ProgramBuilder b;
    const auto beta_var = b.add_variable(0.0, 1.0, 1.0);
    const auto storage = detail::add_storage(b, *v.battery, T, dt);
    for (std::size_t t = 0; t < T; ++t) {
      ProgramBuilder::Row row{{beta_var, q1[t] - q0[t]}};
      storage.add_injection(row, t, -1.0);
      b.add_inequality(row, v.solar[t] - q0[t]);
    }
    const auto r = solve_linear_program(b.build());
    if (!r.optimal()) throw InternalError("pi_project: reference offer is infeasible");
    beta = r.primal(beta_var);
    beta = beta <= kBetaFloor ? 0.0 : std::min(1.0, beta + kBetaFloor);
  }
  beta = std::clamp(beta, 0.0, 1.0);
  Projection out;
  out.beta = beta;
  out.q_prime.resize(q.size());
  for (std::size_t k = 0; k < q.size(); ++k) {
    out.q_prime[k].resize(T);
    for (std::size_t t = 0; t < T; ++t)
      out.q_prime[k][t] = beta == 0.0 ? q[k][t] : beta * q_hat[k][t] + (1.0 - beta) * q[k][t];
  }
  return out;
}

std::optional<double> pi_agent_utility(const AgentSpec& v, double dt,
                                       std::span<const double> total) {
  const auto imports = negated(total);
  const auto r = fixed_trade(v, dt, zeros(total.size()), imports, kTradeSlack);
  if (!r.optimal()) return std::nullopt;
  return r.utility;
}

Pricing pi_price(const AgentSpec& v, double dt, std::span<const double> offers,
                 std::span<const double> exited, double no_trade_utility) {
  const std::size_t T = offers.size();
  if (exited.size() != T) throw DomainError("pi_price: length mismatch");
  std::vector<double> total(offers.begin(), offers.end());
  for (std::size_t t = 0; t < T; ++t) total[t] += exited[t];
  const auto imports = negated(total);
  const auto r = fixed_trade(v, dt, zeros(T), imports, kTradeSlack);
  if (!r.optimal())
    throw InternalError("pi_price: offer is infeasible for the pricing agent (" +
                        to_string(r.status) + ")");
  Pricing out;
  out.price.resize(T);
  for (std::size_t t = 0; t < T; ++t) {
    const double d = std::max(r.d[t], 0.0);
    out.price[t] = marginal_utility(v.utility[t], d);
    if (d <= kDegenerateDemand) out.degenerate = true;
  }
  out.utility = r.utility;
  out.revenue = 0.0;
  for (std::size_t t = 0; t < T; ++t) out.revenue += out.price[t] * offers[t];
  out.alpha = out.utility + out.revenue >= no_trade_utility - kPreferenceSlack;
  return out;
}

QResponse q_respond(const AgentSpec& k, double dt, std::span<const double> price,
                    std::span<const double> q_prime, std::span<const double> delta,
                    const NegotiationConfig& cfg, double no_trade) {
  const std::size_t T = q_prime.size();
  std::vector<double> lo(T), hi(T);
  for (std::size_t t = 0; t < T; ++t) {
    if (!(delta[t] > 0.0)) throw DomainError("q_respond: step limit must be > 0");
    lo[t] = q_prime[t] - delta[t];
    hi[t] = q_prime[t] + delta[t];
  }
  SolverOptions opt;
  opt.canonical = k.battery.has_value();
  // Flat utilities and nearly active step limits amplify the residual into q.
  opt.tolerance = 1e-12;
  const auto r = solve_local(k, dt, price, lo, hi, 0.0, opt);
  if (!r.optimal())
    throw InternalError("q_respond: agent '" + k.id + "' solve returned " + to_string(r.status));
  QResponse out;
  out.q = r.q;
  out.eta = true;
  for (std::size_t t = 0; t < T; ++t) {
    out.q[t] = std::clamp(out.q[t], lo[t], hi[t]);
    if (std::abs(out.q[t] - q_prime[t]) > cfg.gamma * cfg.epsilon) out.eta = false;
  }
  const auto offer = fixed_trade(k, dt, price, q_prime, kTradeSlack);
  if (offer.optimal()) {
    out.offer_welfare = offer.welfare();
    out.alpha = out.offer_welfare >= no_trade - kPreferenceSlack;
  } else {
    out.offer_welfare = -kInf;
    out.alpha = false;
  }
  return out;
}

double closed_form_response(const AgentSpec& k, double price, double q_prime, double delta) {
  if (k.utility.size() != 1 || k.battery)
    throw DomainError("closed_form_response: needs one period and no storage");
  const double q_dagger = inverse_demand(k.utility[0], price) - k.solar[0];
  return std::clamp(q_dagger, q_prime - delta, q_prime + delta);
}

std::vector<int> update_oscillation(std::span<const double> q_next, std::span<const double> q_curr,
                                    std::span<const double> q_prev) {
  std::vector<int> o(q_next.size());
  for (std::size_t t = 0; t < q_next.size(); ++t) {
    const bool up = q_next[t] > q_curr[t] && q_curr[t] > q_prev[t];
    const bool down = q_next[t] < q_curr[t] && q_curr[t] < q_prev[t];
    o[t] = (up || down) ? 0 : 1;
  }
  return o;
}

std::vector<double> update_delta(std::span<const double> delta, std::span<const int> o, bool eta,
                                 double gamma) {
  std::vector<double> out(delta.begin(), delta.end());
  if (eta) return out;
  for (std::size_t t = 0; t < out.size(); ++t)
    if (o[t]) out[t] *= gamma;
  return out;
}

double no_trade_welfare(const AgentSpec& a, double dt) {
  const std::size_t T = a.utility.size();
  const auto r = fixed_trade(a, dt, zeros(T), zeros(T), kTradeSlack);
  if (!r.optimal())
    throw InternalError("agent '" + a.id + "' has no feasible schedule without trade");
  return r.welfare();
}

TradeLedger run_negotiation(const Scenario& sc, const NegotiationConfig& cfg) {
  validate(sc);
  validate(cfg);
  if (cfg.pi_agent >= sc.agents.size()) throw DomainError("negotiation: pi_agent out of range");
  const std::size_t T = sc.horizon;
  const std::size_t v = cfg.pi_agent;
  const AgentSpec& pi_spec = sc.agents[v];

  TradeLedger ledger;
  ledger.pi_agent = v;
  std::vector<QAgentState> states;
  std::vector<double> base(sc.agents.size(), 0.0);
  for (std::size_t n = 0; n < sc.agents.size(); ++n) {
    if (n == v) continue;
    QAgentState s;
    s.agent = n;
    s.delta.assign(T, cfg.delta0);
    s.q_prev = zeros(T);
    s.q_curr = zeros(T);
    states.push_back(std::move(s));
  }
  for_each_index(states.size(), cfg.policy, [&](std::size_t i) {
    base[states[i].agent] = no_trade_welfare(sc.agents[states[i].agent], sc.dt);
  });

  Matrix q_hat(states.size(), zeros(T));
  std::vector<double> hat_price = zeros(T);
  std::vector<double> exited = zeros(T);
  auto pi_no_trade = [&]() {
    const auto u = pi_agent_utility(pi_spec, sc.dt, exited);
    return u ? *u : -kInf;
  };
  double pi_base = pi_no_trade();
  const double pi_alone = pi_base;
  double settled_revenue = 0.0;

  int iter = 1;
  for (; iter <= cfg.max_iters; ++iter) {
    std::vector<std::size_t> active;
    for (std::size_t i = 0; i < states.size(); ++i)
      if (!states[i].exited) active.push_back(i);
    if (active.empty()) break;

    Matrix q_in, hat_in;
    for (auto i : active) {
      q_in.push_back(states[i].q_curr);
      hat_in.push_back(q_hat[i]);
    }
    const auto proj = pi_project(pi_spec, sc.dt, q_in, hat_in, exited);
    const auto pricing =
        pi_price(pi_spec, sc.dt, offer_total(proj.q_prime, zeros(T)), exited, pi_base);

    std::vector<QResponse> responses(active.size());
    for_each_index(active.size(), cfg.policy, [&](std::size_t j) {
      const auto& st = states[active[j]];
      responses[j] = q_respond(sc.agents[st.agent], sc.dt, pricing.price, proj.q_prime[j],
                               st.delta, cfg, base[st.agent]);
    });

    IterationRecord rec;
    rec.iter = iter;
    rec.beta = proj.beta;
    rec.price = pricing.price;
    rec.alpha_v = pricing.alpha;
    rec.degenerate_price = pricing.degenerate;
    bool all_alpha = pricing.alpha;
    for (std::size_t j = 0; j < active.size(); ++j) {
      auto& st = states[active[j]];
      const auto& resp = responses[j];
      const auto o = update_oscillation(resp.q, st.q_curr, st.q_prev);
      rec.agents.push_back(st.agent);
      rec.q.push_back(st.q_curr);
      rec.q_prime.push_back(proj.q_prime[j]);
      rec.q_next.push_back(resp.q);
      rec.delta.push_back(st.delta);
      rec.oscillating.push_back(o);
      rec.alpha.push_back(resp.alpha);
      rec.eta.push_back(resp.eta);
      for (int x : o) st.osc_count += x;
      st.delta = update_delta(st.delta, o, resp.eta, cfg.gamma);
      st.alpha = resp.alpha;
      st.eta = resp.eta;
      st.q_prev = st.q_curr;
      st.q_curr = resp.q;
      all_alpha = all_alpha && resp.alpha;
    }

    if (all_alpha) {
      for (std::size_t j = 0; j < active.size(); ++j) q_hat[active[j]] = proj.q_prime[j];
      hat_price = pricing.price;
      std::vector<std::size_t> leaving;
      for (std::size_t j = 0; j < active.size(); ++j)
        if (states[active[j]].eta) leaving.push_back(j);
      // A full exit settles everyone at the pi-agent's marginal value, which
      // never leaves it worse off. A partial exit prices the leavers at the
      // marginal value of the whole offer, so it must be checked against the
      // pi-agent's welfare without any trade.
      if (!leaving.empty() && leaving.size() < active.size()) {
        auto total = exited;
        double revenue = settled_revenue;
        for (auto j : leaving)
          for (std::size_t t = 0; t < T; ++t) {
            total[t] += proj.q_prime[j][t];
            revenue += pricing.price[t] * proj.q_prime[j][t];
          }
        const auto u = pi_agent_utility(pi_spec, sc.dt, total);
        if (!u || *u + revenue < pi_alone - kPreferenceSlack) {
          rec.exit_deferred = true;
          leaving.clear();
        }
      }
      for (auto j : leaving) {
        auto& st = states[active[j]];
        st.exited = true;
        st.settled = SettledTrade{st.agent, pricing.price, proj.q_prime[j], iter};
        for (std::size_t t = 0; t < T; ++t) {
          exited[t] += proj.q_prime[j][t];
          settled_revenue += pricing.price[t] * proj.q_prime[j][t];
        }
      }
      if (!leaving.empty()) pi_base = pi_no_trade();
    }
    ledger.records.push_back(std::move(rec));
  }

  const bool all_exited =
      std::all_of(states.begin(), states.end(), [](const QAgentState& s) { return s.exited; });
  ledger.termination = all_exited ? Termination::kAllExited : Termination::kMaxIters;
  ledger.iterations = static_cast<int>(ledger.records.size());
  for (std::size_t i = 0; i < states.size(); ++i) {
    auto& st = states[i];
    if (!st.settled) st.settled = SettledTrade{st.agent, hat_price, q_hat[i], 0};
    ledger.trades.push_back(*st.settled);
  }
  ledger.final_states = std::move(states);
  return ledger;
}

WelfareAudit audit_welfare(const Scenario& sc, const TradeLedger& ledger) {
  const std::size_t T = sc.horizon;
  WelfareAudit out;
  out.no_trade.assign(sc.agents.size(), 0.0);
  out.p2p.assign(sc.agents.size(), 0.0);
  std::vector<double> total = zeros(T);
  double paid = 0.0, received = 0.0;
  for (const auto& trade : ledger.trades) {
    const auto& a = sc.agents[trade.agent];
    const auto r = fixed_trade(a, sc.dt, trade.price, trade.quantity, kTradeSlack);
    out.p2p[trade.agent] = r.optimal() ? r.welfare() : -kInf;
    for (std::size_t t = 0; t < T; ++t) {
      total[t] += trade.quantity[t];
      paid += trade.price[t] * trade.quantity[t];
    }
  }
  for (const auto& trade : ledger.trades)
    for (std::size_t t = 0; t < T; ++t) received += trade.quantity[t] * trade.price[t];
  out.payment_imbalance = std::abs(paid - received);
  const auto pi_u = pi_agent_utility(sc.agents[ledger.pi_agent], sc.dt, total);
  out.pi_agent_feasible = pi_u.has_value();
  out.p2p[ledger.pi_agent] = pi_u ? *pi_u + received : -kInf;
  out.min_pareto_slack = kInf;
  for (std::size_t n = 0; n < sc.agents.size(); ++n) {
    out.no_trade[n] = no_trade_welfare(sc.agents[n], sc.dt);
    out.total_no_trade += out.no_trade[n];
    out.total_p2p += out.p2p[n];
    out.min_pareto_slack = std::min(out.min_pareto_slack, out.p2p[n] - out.no_trade[n]);
  }
  return out;
}

std::vector<double> centralized_agent_welfare(const Scenario& sc, const DispatchSolution& sol) {
  std::vector<double> out(sc.agents.size(), 0.0);
  for (std::size_t n = 0; n < sc.agents.size(); ++n) {
    const auto& a = sol.agents[n];
    double w = a.utility;
    for (std::size_t t = 0; t < sc.horizon; ++t) w -= sol.price[t] * (a.d[t] - a.p_s[t] - a.p_b[t]);
    out[n] = w;
  }
  return out;
}

}  // namespace p2pgrid

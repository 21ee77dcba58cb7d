#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "p2pgrid/dispatch.hpp"
#include "p2pgrid/kernels.hpp"

namespace p2pgrid {

struct NegotiationConfig {
  double gamma = 0.5;
  double epsilon = 1e-3;
  double delta0 = 0.5;
  int max_iters = 5000;
  std::size_t pi_agent = 0;
  ExecutionPolicy policy = ExecutionPolicy::kSerial;
};

/// Throws DomainError unless gamma in (0,1), epsilon > 0, delta0 > gamma*epsilon
/// and max_iters >= 1.
void validate(const NegotiationConfig& cfg);

/// Demand floor used whenever a quantity is imposed on an agent, so that
/// round-off in a feasible trade does not make the agent's problem infeasible.
inline constexpr double kTradeSlack = 1e-8;

/// Slack allowed in the prefers-trade comparisons.
inline constexpr double kPreferenceSlack = 1e-9;

struct SettledTrade {
  std::size_t agent = 0;
  std::vector<double> price;
  std::vector<double> quantity;
  int iteration = 0;  ///< 0 when settled at the last feasible offer after M
};

struct QAgentState {
  std::size_t agent = 0;
  std::vector<double> delta;
  std::vector<double> q_prev;  ///< q^(i-1)
  std::vector<double> q_curr;  ///< q^(i)
  bool alpha = false;
  bool eta = false;
  bool exited = false;
  std::optional<SettledTrade> settled;
  long osc_count = 0;
};

struct IterationRecord {
  int iter = 0;
  double beta = 0.0;
  std::vector<double> price;
  bool alpha_v = false;
  bool degenerate_price = false;
  /// Some agents asked to exit but settling only them would have left the
  /// pi-agent below its no-trade welfare.
  bool exit_deferred = false;
  std::vector<std::size_t> agents;              ///< negotiating agents
  std::vector<std::vector<double>> q;           ///< proposal q^(i)
  std::vector<std::vector<double>> q_prime;     ///< projected offer
  std::vector<std::vector<double>> q_next;      ///< response q^(i+1)
  std::vector<std::vector<double>> delta;       ///< step limit used
  std::vector<std::vector<int>> oscillating;    ///< o^(i)
  std::vector<bool> alpha, eta;
};

enum class Termination { kAllExited, kMaxIters };

std::string to_string(Termination t);

struct TradeLedger {
  std::size_t pi_agent = 0;
  std::vector<IterationRecord> records;
  std::vector<SettledTrade> trades;  ///< one per q-agent, ascending agent index
  std::vector<QAgentState> final_states;
  int iterations = 0;
  Termination termination = Termination::kMaxIters;
};

struct Projection {
  std::vector<std::vector<double>> q_prime;
  double beta = 0.0;
};

/// Smallest beta in [0,1] such that beta*q_hat + (1-beta)*q leaves the
/// pi-agent a feasible schedule, given the quantities of exited agents.
/// Throws InternalError when q_hat itself is infeasible.
Projection pi_project(const AgentSpec& v, double dt, const std::vector<std::vector<double>>& q,
                      const std::vector<std::vector<double>>& q_hat,
                      std::span<const double> exited);

struct Pricing {
  std::vector<double> price;
  bool alpha = false;
  bool degenerate = false;  ///< own demand at zero in some period
  double utility = 0.0;
  double revenue = 0.0;     ///< sum price_t * offers_t
};

/// Prices at the pi-agent's marginal utility after it supplies the summed
/// offers on top of the exited quantities. alpha holds when utility plus
/// revenue from the offers is at least `no_trade_utility`, its optimum with
/// only the exited quantities (pass -inf when that is infeasible).
Pricing pi_price(const AgentSpec& v, double dt, std::span<const double> offers,
                 std::span<const double> exited, double no_trade_utility);

/// Optimum of the pi-agent's own problem with imported quantities fixed at
/// -total. Returns nullopt when no schedule exists.
std::optional<double> pi_agent_utility(const AgentSpec& v, double dt,
                                       std::span<const double> total);

struct QResponse {
  std::vector<double> q;
  bool alpha = false;
  bool eta = false;
  double offer_welfare = 0.0;  ///< utility minus payment at (price, q_prime)
};

/// Step-limited best response of a q-agent. `no_trade_welfare` is the agent's
/// optimum with zero trade.
QResponse q_respond(const AgentSpec& k, double dt, std::span<const double> price,
                    std::span<const double> q_prime, std::span<const double> delta,
                    const NegotiationConfig& cfg, double no_trade_welfare);

/// Single-period agent without storage: h_k(price) clamped to q_prime +- delta.
double closed_form_response(const AgentSpec& k, double price, double q_prime, double delta);

/// o_t = not (strictly increasing or strictly decreasing) over the three points.
std::vector<int> update_oscillation(std::span<const double> q_next, std::span<const double> q_curr,
                                    std::span<const double> q_prev);

std::vector<double> update_delta(std::span<const double> delta, std::span<const int> o, bool eta,
                                 double gamma);

/// Optimum of an agent with zero trade.
double no_trade_welfare(const AgentSpec& a, double dt);

TradeLedger run_negotiation(const Scenario& sc, const NegotiationConfig& cfg);

/// Per-agent welfare at the settled trades.
struct WelfareAudit {
  std::vector<double> no_trade;
  std::vector<double> p2p;
  double total_no_trade = 0.0;
  double total_p2p = 0.0;
  double min_pareto_slack = 0.0;   ///< min over agents of p2p - no_trade
  double payment_imbalance = 0.0;  ///< |paid by q-agents - received by pi-agent|
  bool pi_agent_feasible = false;
};

WelfareAudit audit_welfare(const Scenario& sc, const TradeLedger& ledger);

/// Per-agent welfare of a centralized dispatch, with net purchases paid at the
/// dispatch price.
std::vector<double> centralized_agent_welfare(const Scenario& sc, const DispatchSolution& sol);

}  // namespace p2pgrid

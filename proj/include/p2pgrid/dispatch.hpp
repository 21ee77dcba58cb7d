#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "p2pgrid/battery.hpp"
#include "p2pgrid/convex.hpp"
#include "p2pgrid/utility.hpp"

namespace p2pgrid {

/// One prosumer: a utility per period, solar capacity per period and an
/// optional battery.
struct AgentSpec {
  std::string id;
  std::vector<QuasiCPEUtility> utility;
  std::vector<double> solar;
  std::optional<Battery> battery;
};

struct Scenario {
  std::size_t horizon = 0;
  double dt = 1.0;
  std::vector<AgentSpec> agents;

  bool has_extended_battery() const;
};

/// Throws DomainError unless horizon >= 1, at least one agent, sequence
/// lengths equal the horizon, solar >= 0, batteries valid with dt matching.
void validate(const Scenario& sc);

struct AgentDispatch {
  std::vector<double> d;
  std::vector<double> p_s;
  /// Net battery injection (discharge minus charge). Zero without a battery.
  std::vector<double> p_b;
  std::vector<double> p_dis;  ///< extended model only
  std::vector<double> p_chg;  ///< extended model only
  std::vector<double> soc;

  std::vector<double> lambda_s;        ///< upper minus lower solar bound dual
  std::vector<double> lambda_d_minus;  ///< dual of d >= 0
  /// Ideal: upper minus lower power-limit dual. Extended: discharge limit dual.
  std::vector<double> lambda_b;
  std::vector<double> lambda_b_minus;  ///< extended: charge limit dual
  /// Upper minus lower energy-limit dual per period.
  std::vector<double> lambda_c;

  double utility = 0.0;
};

struct DispatchSolution {
  SolveStatus status = SolveStatus::kIterationLimit;
  bool extended = false;
  std::vector<AgentDispatch> agents;
  std::vector<double> price;
  double welfare = 0.0;       ///< sum of utilities
  double dual_welfare = 0.0;  ///< welfare bound from the dual solution
  double kkt_residual = kInf;
  double balance_residual = 0.0;
  /// Periods with price below -1e-9 (extended model precondition).
  std::vector<std::size_t> negative_price_periods;
};

/// Centralized welfare maximization with ideal batteries.
/// Throws DomainError for extended batteries, InternalError if the solve fails.
DispatchSolution solve_centralized(const Scenario& sc, const SolverOptions& opt = {});

/// Centralized welfare maximization with any battery models. Simultaneous
/// charge and discharge is allowed in the solve and removed afterwards by
/// repair_complementarity.
DispatchSolution solve_centralized_ext(const Scenario& sc, const SolverOptions& opt = {});

/// d_t = inverse_demand(price_t). Throws DomainError for price_t <= 0.
std::vector<double> best_response_consumer(std::span<const QuasiCPEUtility> u,
                                           std::span<const double> price);

struct BatteryResponse {
  std::vector<double> p;      ///< net injection
  std::vector<double> p_dis;  ///< extended model only
  std::vector<double> p_chg;  ///< extended model only
  double objective = 0.0;     ///< -sum price_t * p_t
};

/// One optimal schedule of min -sum price_t p_t over the storage constraints.
BatteryResponse best_response_battery(const IdealBattery& b, std::span<const double> price,
                                      const SolverOptions& opt = {});
BatteryResponse best_response_battery(const ExtendedBattery& b, std::span<const double> price,
                                      const SolverOptions& opt = {});

/// -sum price_t p_t for a given schedule.
double battery_objective(std::span<const double> price, std::span<const double> p);
double battery_objective_ext(std::span<const double> price, std::span<const double> p_dis,
                             std::span<const double> p_chg);

struct SolarResponse {
  std::vector<double> p_s;
  std::vector<std::size_t> negative_price_periods;
};

/// Full output wherever price >= 0; zero output at negative prices, which are
/// also listed.
SolarResponse best_response_solar(std::span<const double> cap, std::span<const double> price);

/// Decentralized objective terms at a price vector.
struct Decomposition {
  std::vector<double> consumer;  ///< min_d sum -U(d) + price d, per agent
  std::vector<double> solar;     ///< min_ps -price ps, per agent
  std::vector<double> battery;   ///< min -price pb, per agent with a battery
  double total = 0.0;
  /// max_t |sum d - sum ps - sum pb| of the individual best responses.
  double balance_residual = 0.0;
};

Decomposition decompose(const Scenario& sc, std::span<const double> price,
                        const SolverOptions& opt = {});

struct KktReport {
  double demand_stationarity = 0.0;    ///< price = g(d) + lambda_d_minus
  double battery_stationarity = 0.0;   ///< battery price identities
  double solar_stationarity = 0.0;     ///< price = lambda_s
  double price_dynamics = 0.0;         ///< period-to-period price identity
  double duality_gap = 0.0;            ///< |welfare - dual_welfare|
  double decomposition_gap = 0.0;      ///< |sum of private objectives + welfare|
  double balance_residual = 0.0;
  double max_residual() const;
};

KktReport verify_kkt(const Scenario& sc, const DispatchSolution& sol,
                     const SolverOptions& opt = {});

/// One agent's own problem: maximize sum U(d) - sum price_t q_t subject to
/// d_t = solar_t + pb_t + q_t, the battery limits and q_lo <= q <= q_hi.
/// Solar runs at capacity. Demand is bounded below by -demand_floor.
struct LocalResult {
  SolveStatus status = SolveStatus::kIterationLimit;
  std::vector<double> d;
  std::vector<double> q;
  std::vector<double> p_b;
  double utility = 0.0;
  double payment = 0.0;                 ///< sum price_t q_t
  double welfare() const { return utility - payment; }
  bool optimal() const { return status == SolveStatus::kOptimal; }
};

LocalResult solve_local(const AgentSpec& agent, double dt, std::span<const double> price,
                        std::span<const double> q_lo, std::span<const double> q_hi,
                        double demand_floor = 0.0, const SolverOptions& opt = {});

}  // namespace p2pgrid

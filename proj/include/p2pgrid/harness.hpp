#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "p2pgrid/negotiation.hpp"
#include "p2pgrid/scenario.hpp"

namespace p2pgrid {

/// Where trial profiles come from: a CSV file, or the synthetic generator.
struct ProfileSource {
  std::string path;  ///< empty selects the generator
  SyntheticOptions synthetic{20, 24 * 365, 0, 1};
};

ProfileSet load_source(const ProfileSource& src);

struct GammaSweepConfig {
  std::vector<double> gammas{0.05, 0.2, 0.4, 0.7, 0.95};
  std::vector<double> deltas{0.5, 1.5};
  int trials = 20;
  double epsilon = 1e-3;
  int max_iters = 5000;
  double elasticity_lo = -1.5;
  double elasticity_hi = -0.5;
  std::uint64_t seed = 1;
  /// Trials run on OpenMP threads; results do not depend on it.
  bool parallel = true;
};

/// Full grid: gamma 0.05..0.95 and delta0 0.1..2 in steps of 0.05 and 0.1.
GammaSweepConfig full_gamma_grid();

struct GammaCell {
  double gamma = 0.0;
  double delta0 = 0.0;
  double mean_iters = 0.0;
  int max_iters = 0;
  int converged = 0;
  int trials = 0;
};

/// Two-agent single-period instance for sweep trial `index`: loads from
/// synthetic profiles at a random hour of the year, elasticities uniform in
/// the configured range and solar uniform between zero and twice the load.
/// Every cell of the sweep sees the same instances.
Scenario sweep_instance(const GammaSweepConfig& cfg, int index);

/// One row per (gamma, delta0) cell, gamma major.
std::vector<GammaCell> run_gamma_sweep(const GammaSweepConfig& cfg);

struct MultiAgentConfig {
  std::vector<double> capacities{15.0, 40.0, 300.0};  ///< total battery kWh
  std::vector<double> powers{5.0};                     ///< kW per battery
  int trials = 20;  ///< per (capacity, power) pair
  std::size_t min_agents = 2;
  std::size_t max_agents = 6;
  std::vector<std::size_t> horizons{1, 12, 24};
  double elasticity_lo = -1.5;
  double elasticity_hi = -0.5;
  NegotiationConfig negotiation;
  ProfileSource profiles;
  std::uint64_t seed = 1;
  bool parallel = true;
};

struct TrialRecord {
  int trial = 0;  ///< index within its (capacity, power) pair
  double capacity = 0.0;
  double power = 0.0;
  std::size_t agents = 0;
  std::size_t horizon = 0;
  std::size_t start = 0;
  int iterations = 0;
  bool converged = false;
  double w_no = 0.0;
  double w_centr = 0.0;
  double w_p2p = 0.0;
  double dw = 0.0;
  std::optional<double> dw_pct;  ///< empty when |w_centr| < 1e-6
  double min_pareto_slack = 0.0;
  bool pi_agent_feasible = false;
  int degenerate_prices = 0;  ///< iterations flagged with a degenerate price
};

/// 100 * dw / w_centr, empty when |w_centr| < 1e-6.
std::optional<double> welfare_gap_pct(double dw, double w_centr);

/// Recipe for trial `index`. The same index gives the same agents, horizon,
/// window and elasticities for every capacity, so capacities are compared on
/// paired instances.
ScenarioRecipe trial_recipe(const MultiAgentConfig& cfg, const ProfileSet& p, int index,
                            double capacity, double power);

TrialRecord run_trial(const Scenario& sc, const ScenarioRecipe& r, const NegotiationConfig& cfg,
                      int index);

/// Rows ordered by capacity, power, trial as listed in the config.
std::vector<TrialRecord> run_multiagent_experiment(const MultiAgentConfig& cfg);

struct Stats {
  std::size_t count = 0;
  double mean = 0.0;
  double std = 0.0;  ///< sample standard deviation, 0 for fewer than two
  double max = 0.0;
};
Stats describe(const std::vector<double>& x);

/// Linear interpolation between order statistics, p in [0, 1].
double quantile(std::vector<double> x, double p);

struct HorizonSummary {
  std::size_t horizon = 0;
  int trials = 0;
  int converged = 0;
  Stats dw_pct;  ///< converged trials with a defined percentage
  Stats dw;      ///< converged trials
};

struct CapacitySummary {
  double capacity = 0.0;
  double power = 0.0;
  int trials = 0;
  int converged = 0;
  double min_iters = 0, q1 = 0, median = 0, q3 = 0, max_iters = 0;
};

std::vector<HorizonSummary> summarize_by_horizon(const std::vector<TrialRecord>& rows);
std::vector<CapacitySummary> summarize_by_capacity(const std::vector<TrialRecord>& rows);

/// Per-agent welfare comparison for one scenario, plus a total row.
struct AgentWelfareRow {
  std::string agent;
  double w_no = 0.0;
  double w_centr = 0.0;
  double w_p2p = 0.0;
  double dw = 0.0;
  std::optional<double> dw_pct;
};

struct InstanceReport {
  std::vector<AgentWelfareRow> rows;  ///< agents, then "total"
  TradeLedger ledger;
  DispatchSolution central;
};

InstanceReport special_instance_report(const Scenario& sc, const NegotiationConfig& cfg);

enum class ReportFormat { kCsv, kJson };
ReportFormat parse_report_format(std::string_view s);

/// Writers return the paths they created. Throw IoError with the path.
std::vector<std::string> emit_gamma_sweep(const std::vector<GammaCell>& cells,
                                          const std::string& dir, ReportFormat f);
std::vector<std::string> emit_multiagent(const std::vector<TrialRecord>& rows,
                                         const std::string& dir, ReportFormat f);
std::vector<std::string> emit_instance(const InstanceReport& r, const std::string& dir,
                                       ReportFormat f);
std::vector<std::string> emit_dispatch(const Scenario& sc, const DispatchSolution& sol,
                                       const std::string& dir, ReportFormat f);

}  // namespace p2pgrid

#include "p2pgrid/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include "json.hpp"

#include "p2pgrid/errors.hpp"

namespace p2pgrid {
namespace {

using nlohmann::ordered_json;

ExecutionPolicy policy_of(bool parallel) {
  return parallel ? ExecutionPolicy::kParallel : ExecutionPolicy::kSerial;
}

std::string num(double x) {
  if (!std::isfinite(x)) return x > 0 ? "inf" : x < 0 ? "-inf" : "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", x);
  return buf;
}

std::string num(const std::optional<double>& x) { return x ? num(*x) : ""; }

ordered_json jnum(const std::optional<double>& x) {
  if (!x || !std::isfinite(*x)) return nullptr;
  return *x;
}

ordered_json jnum(double x) { return jnum(std::optional<double>(x)); }

class Output {
 public:
  explicit Output(const std::string& dir) : dir_(dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (ec) throw IoError("cannot create output directory '" + dir_ + "': " + ec.message());
  }

  void write(const std::string& name, const std::string& body) {
    const auto path = (std::filesystem::path(dir_) / name).string();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write '" + path + "'");
    out << body;
    out.close();
    if (!out) throw IoError("write failed for '" + path + "'");
    written_.push_back(path);
  }

  std::vector<std::string> written() const { return written_; }

 private:
  std::string dir_;
  std::vector<std::string> written_;
};

std::string csv_line(std::initializer_list<std::string> cells) {
  std::string out;
  for (const auto& c : cells) {
    if (!out.empty()) out += ',';
    out += c;
  }
  return out + '\n';
}

ordered_json stats_json(const Stats& s) {
  return {{"count", s.count}, {"mean", jnum(s.mean)}, {"std", jnum(s.std)}, {"max", jnum(s.max)}};
}

}  // namespace

ProfileSet load_source(const ProfileSource& src) {
  return src.path.empty() ? generate_profiles(src.synthetic) : load_profiles(src.path);
}

GammaSweepConfig full_gamma_grid() {
  GammaSweepConfig cfg;
  cfg.gammas.clear();
  cfg.deltas.clear();
  for (int k = 1; k <= 19; ++k) cfg.gammas.push_back(0.05 * k);
  for (int k = 1; k <= 20; ++k) cfg.deltas.push_back(0.1 * k);
  return cfg;
}

Scenario sweep_instance(const GammaSweepConfig& cfg, int index) {
  std::mt19937_64 rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(index)));
  const auto hour = std::uniform_int_distribution<std::size_t>(0, 24 * 365 - 1)(rng);
  const auto p = generate_profiles({2, 1, hour, rng()});
  std::uniform_real_distribution<double> elasticity(cfg.elasticity_lo, cfg.elasticity_hi);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Scenario sc;
  sc.horizon = 1;
  for (std::size_t a = 0; a < 2; ++a) {
    double e;
    do e = elasticity(rng);
    while (e == -1.0);
    const double load = std::max(p.load[a][0], kMinAnchorLoad);
    AgentSpec agent;
    agent.id = p.agent_ids[a];
    agent.utility = {build_utility(band_price(static_cast<int>(hour % 24)), load, e)};
    agent.solar = {2.0 * load * unif(rng)};
    sc.agents.push_back(std::move(agent));
  }
  return sc;
}

std::vector<GammaCell> run_gamma_sweep(const GammaSweepConfig& cfg) {
  if (cfg.trials < 1) throw DomainError("gamma sweep: trials must be >= 1");
  std::vector<Scenario> instances;
  for (int k = 0; k < cfg.trials; ++k) instances.push_back(sweep_instance(cfg, k));

  const std::size_t cells = cfg.gammas.size() * cfg.deltas.size();
  const std::size_t trials = static_cast<std::size_t>(cfg.trials);
  std::vector<NegotiationConfig> settings(cells);
  for (std::size_t c = 0; c < cells; ++c) {
    auto& s = settings[c];
    s.gamma = cfg.gammas[c / cfg.deltas.size()];
    s.delta0 = cfg.deltas[c % cfg.deltas.size()];
    s.epsilon = cfg.epsilon;
    s.max_iters = cfg.max_iters;
    validate(s);
  }

  std::vector<int> iters(cells * trials);
  std::vector<char> done(cells * trials);
  for_each_index(cells * trials, policy_of(cfg.parallel), [&](std::size_t j) {
    const auto ledger = run_negotiation(instances[j % trials], settings[j / trials]);
    iters[j] = ledger.iterations;
    done[j] = ledger.termination == Termination::kAllExited;
  });

  std::vector<GammaCell> out(cells);
  for (std::size_t c = 0; c < cells; ++c) {
    auto& cell = out[c];
    cell.gamma = settings[c].gamma;
    cell.delta0 = settings[c].delta0;
    cell.trials = cfg.trials;
    long sum = 0;
    for (std::size_t k = 0; k < trials; ++k) {
      sum += iters[c * trials + k];
      cell.max_iters = std::max(cell.max_iters, iters[c * trials + k]);
      cell.converged += done[c * trials + k];
    }
    cell.mean_iters = static_cast<double>(sum) / static_cast<double>(trials);
  }
  return out;
}

std::optional<double> welfare_gap_pct(double dw, double w_centr) {
  if (!(std::abs(w_centr) >= 1e-6)) return std::nullopt;
  return 100.0 * dw / w_centr;
}

ScenarioRecipe trial_recipe(const MultiAgentConfig& cfg, const ProfileSet& p, int index,
                            double capacity, double power) {
  if (cfg.horizons.empty()) throw DomainError("experiment: no horizons");
  if (cfg.min_agents < 2 || cfg.min_agents > cfg.max_agents)
    throw DomainError("experiment: agent range must satisfy 2 <= min <= max");
  if (cfg.max_agents > p.agent_ids.size())
    throw DomainError("experiment: profiles hold " + std::to_string(p.agent_ids.size()) +
                      " agents, " + std::to_string(cfg.max_agents) + " requested");
  std::mt19937_64 rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(index)));
  ScenarioRecipe r;
  r.agents = std::uniform_int_distribution<std::size_t>(cfg.min_agents, cfg.max_agents)(rng);
  r.horizon = cfg.horizons[std::uniform_int_distribution<std::size_t>(0, cfg.horizons.size() - 1)(rng)];
  if (r.horizon > p.hours())
    throw DomainError("experiment: horizon " + std::to_string(r.horizon) + " exceeds " +
                      std::to_string(p.hours()) + " profile hours");
  r.start = std::uniform_int_distribution<std::size_t>(0, p.hours() - r.horizon)(rng);
  std::vector<std::size_t> rows(p.agent_ids.size());
  std::iota(rows.begin(), rows.end(), 0);
  for (std::size_t i = 0; i < r.agents; ++i)
    std::swap(rows[i], rows[std::uniform_int_distribution<std::size_t>(i, rows.size() - 1)(rng)]);
  r.agent_rows.assign(rows.begin(), rows.begin() + static_cast<long>(r.agents));
  r.elasticity_lo = cfg.elasticity_lo;
  r.elasticity_hi = cfg.elasticity_hi;
  r.total_battery = capacity;
  r.battery_power = power;
  r.seed = rng();
  return r;
}

TrialRecord run_trial(const Scenario& sc, const ScenarioRecipe& r, const NegotiationConfig& cfg,
                      int index) {
  TrialRecord rec;
  rec.trial = index;
  rec.capacity = r.total_battery;
  rec.power = r.battery_power;
  rec.agents = sc.agents.size();
  rec.horizon = sc.horizon;
  rec.start = r.start;
  const auto central = sc.has_extended_battery() ? solve_centralized_ext(sc) : solve_centralized(sc);
  const auto ledger = run_negotiation(sc, cfg);
  const auto audit = audit_welfare(sc, ledger);
  rec.iterations = ledger.iterations;
  rec.converged = ledger.termination == Termination::kAllExited;
  rec.w_no = audit.total_no_trade;
  rec.w_centr = central.welfare;
  rec.w_p2p = audit.total_p2p;
  rec.dw = rec.w_centr - rec.w_p2p;
  rec.dw_pct = welfare_gap_pct(rec.dw, rec.w_centr);
  rec.min_pareto_slack = audit.min_pareto_slack;
  rec.pi_agent_feasible = audit.pi_agent_feasible;
  for (const auto& it : ledger.records) rec.degenerate_prices += it.degenerate_price;
  return rec;
}

std::vector<TrialRecord> run_multiagent_experiment(const MultiAgentConfig& cfg) {
  if (cfg.trials < 1) throw DomainError("experiment: trials must be >= 1");
  validate(cfg.negotiation);
  const auto profiles = load_source(cfg.profiles);
  struct Job {
    double capacity, power;
    int trial;
  };
  std::vector<Job> jobs;
  for (double c : cfg.capacities)
    for (double w : cfg.powers)
      for (int k = 0; k < cfg.trials; ++k) jobs.push_back({c, w, k});
  std::vector<ScenarioRecipe> recipes;
  for (const auto& j : jobs) recipes.push_back(trial_recipe(cfg, profiles, j.trial, j.capacity, j.power));

  auto inner = cfg.negotiation;
  inner.policy = ExecutionPolicy::kSerial;
  std::vector<TrialRecord> out(jobs.size());
  for_each_index(jobs.size(), policy_of(cfg.parallel), [&](std::size_t i) {
    out[i] = run_trial(generate_scenario(profiles, recipes[i]), recipes[i], inner, jobs[i].trial);
  });
  return out;
}

Stats describe(const std::vector<double>& x) {
  Stats s;
  s.count = x.size();
  if (x.empty()) return s;
  s.mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
  s.max = *std::max_element(x.begin(), x.end());
  if (x.size() > 1) {
    double ss = 0.0;
    for (double v : x) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(x.size() - 1));
  }
  return s;
}

double quantile(std::vector<double> x, double p) {
  if (x.empty()) throw DomainError("quantile of an empty sample");
  std::sort(x.begin(), x.end());
  const double pos = std::clamp(p, 0.0, 1.0) * static_cast<double>(x.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, x.size() - 1);
  return x[lo] + (pos - static_cast<double>(lo)) * (x[hi] - x[lo]);
}

std::vector<HorizonSummary> summarize_by_horizon(const std::vector<TrialRecord>& rows) {
  std::vector<std::size_t> horizons;
  for (const auto& r : rows) horizons.push_back(r.horizon);
  std::sort(horizons.begin(), horizons.end());
  horizons.erase(std::unique(horizons.begin(), horizons.end()), horizons.end());
  std::vector<HorizonSummary> out;
  for (auto T : horizons) {
    HorizonSummary s;
    s.horizon = T;
    std::vector<double> pct, dw;
    for (const auto& r : rows) {
      if (r.horizon != T) continue;
      ++s.trials;
      if (!r.converged) continue;
      ++s.converged;
      dw.push_back(r.dw);
      if (r.dw_pct) pct.push_back(*r.dw_pct);
    }
    s.dw_pct = describe(pct);
    s.dw = describe(dw);
    out.push_back(s);
  }
  return out;
}

std::vector<CapacitySummary> summarize_by_capacity(const std::vector<TrialRecord>& rows) {
  std::vector<CapacitySummary> out;
  for (const auto& r : rows) {
    const bool seen = std::any_of(out.begin(), out.end(), [&](const CapacitySummary& s) {
      return s.capacity == r.capacity && s.power == r.power;
    });
    if (seen) continue;
    CapacitySummary s;
    s.capacity = r.capacity;
    s.power = r.power;
    std::vector<double> iters;
    for (const auto& q : rows) {
      if (q.capacity != r.capacity || q.power != r.power) continue;
      ++s.trials;
      s.converged += q.converged;
      iters.push_back(q.iterations);
    }
    s.min_iters = quantile(iters, 0.0);
    s.q1 = quantile(iters, 0.25);
    s.median = quantile(iters, 0.5);
    s.q3 = quantile(iters, 0.75);
    s.max_iters = quantile(iters, 1.0);
    out.push_back(s);
  }
  return out;
}

InstanceReport special_instance_report(const Scenario& sc, const NegotiationConfig& cfg) {
  InstanceReport rep;
  rep.central = sc.has_extended_battery() ? solve_centralized_ext(sc) : solve_centralized(sc);
  rep.ledger = run_negotiation(sc, cfg);
  const auto audit = audit_welfare(sc, rep.ledger);
  const auto centr = centralized_agent_welfare(sc, rep.central);
  AgentWelfareRow total{"total", 0, 0, 0, 0, std::nullopt};
  for (std::size_t n = 0; n < sc.agents.size(); ++n) {
    AgentWelfareRow row{sc.agents[n].id, audit.no_trade[n], centr[n], audit.p2p[n], 0, {}};
    row.dw = row.w_centr - row.w_p2p;
    row.dw_pct = welfare_gap_pct(row.dw, row.w_centr);
    total.w_no += row.w_no;
    total.w_centr += row.w_centr;
    total.w_p2p += row.w_p2p;
    rep.rows.push_back(row);
  }
  total.dw = total.w_centr - total.w_p2p;
  total.dw_pct = welfare_gap_pct(total.dw, total.w_centr);
  rep.rows.push_back(total);
  return rep;
}

ReportFormat parse_report_format(std::string_view s) {
  if (s == "csv") return ReportFormat::kCsv;
  if (s == "json") return ReportFormat::kJson;
  throw DomainError("unknown format '" + std::string(s) + "' (csv or json)");
}

std::vector<std::string> emit_gamma_sweep(const std::vector<GammaCell>& cells,
                                          const std::string& dir, ReportFormat f) {
  Output out(dir);
  if (f == ReportFormat::kCsv) {
    std::string body = csv_line({"gamma", "delta0", "mean_iters", "max_iters"});
    for (const auto& c : cells)
      body += csv_line({num(c.gamma), num(c.delta0), num(c.mean_iters), std::to_string(c.max_iters)});
    out.write("gamma_sweep.csv", body);
  } else {
    ordered_json j = ordered_json::array();
    for (const auto& c : cells)
      j.push_back({{"gamma", c.gamma}, {"delta0", c.delta0}, {"mean_iters", c.mean_iters},
                   {"max_iters", c.max_iters}, {"converged", c.converged}, {"trials", c.trials}});
    out.write("gamma_sweep.json", ordered_json{{"cells", j}}.dump(2) + "\n");
  }
  return out.written();
}

std::vector<std::string> emit_multiagent(const std::vector<TrialRecord>& rows,
                                         const std::string& dir, ReportFormat f) {
  Output out(dir);
  const auto by_t = summarize_by_horizon(rows);
  const auto by_cap = summarize_by_capacity(rows);
  if (f == ReportFormat::kCsv) {
    std::string body = csv_line({"capacity", "power", "trial", "agents", "horizon", "start",
                                 "iterations", "converged", "W_no", "W_centr", "W_P2P", "dW",
                                 "dW_pct", "min_pareto_slack", "pi_agent_feasible",
                                 "degenerate_prices"});
    for (const auto& r : rows)
      body += csv_line({num(r.capacity), num(r.power), std::to_string(r.trial),
                        std::to_string(r.agents), std::to_string(r.horizon), std::to_string(r.start),
                        std::to_string(r.iterations), r.converged ? "1" : "0", num(r.w_no),
                        num(r.w_centr), num(r.w_p2p), num(r.dw), num(r.dw_pct),
                        num(r.min_pareto_slack), r.pi_agent_feasible ? "1" : "0",
                        std::to_string(r.degenerate_prices)});
    out.write("trials.csv", body);

    body = csv_line({"T", "trials", "converged", "mean_dW_pct", "std_dW_pct", "max_dW_pct",
                     "mean_dW", "std_dW", "max_dW"});
    for (const auto& s : by_t)
      body += csv_line({std::to_string(s.horizon), std::to_string(s.trials),
                        std::to_string(s.converged), num(s.dw_pct.mean), num(s.dw_pct.std),
                        num(s.dw_pct.max), num(s.dw.mean), num(s.dw.std), num(s.dw.max)});
    out.write("welfare_by_T.csv", body);

    body = csv_line({"capacity", "power", "trials", "converged", "min_iters", "q1_iters",
                     "median_iters", "q3_iters", "max_iters"});
    for (const auto& s : by_cap)
      body += csv_line({num(s.capacity), num(s.power), std::to_string(s.trials),
                        std::to_string(s.converged), num(s.min_iters), num(s.q1), num(s.median),
                        num(s.q3), num(s.max_iters)});
    out.write("iterations_by_capacity.csv", body);
  } else {
    ordered_json trials = ordered_json::array();
    for (const auto& r : rows)
      trials.push_back({{"capacity", r.capacity}, {"power", r.power}, {"trial", r.trial},
                        {"agents", r.agents}, {"horizon", r.horizon}, {"start", r.start},
                        {"iterations", r.iterations}, {"converged", r.converged},
                        {"W_no", jnum(r.w_no)}, {"W_centr", jnum(r.w_centr)},
                        {"W_P2P", jnum(r.w_p2p)}, {"dW", jnum(r.dw)}, {"dW_pct", jnum(r.dw_pct)},
                        {"min_pareto_slack", jnum(r.min_pareto_slack)},
                        {"pi_agent_feasible", r.pi_agent_feasible},
                        {"degenerate_prices", r.degenerate_prices}});
    ordered_json horizons = ordered_json::array();
    for (const auto& s : by_t)
      horizons.push_back({{"T", s.horizon}, {"trials", s.trials}, {"converged", s.converged},
                          {"dW_pct", stats_json(s.dw_pct)}, {"dW", stats_json(s.dw)}});
    ordered_json caps = ordered_json::array();
    for (const auto& s : by_cap)
      caps.push_back({{"capacity", s.capacity}, {"power", s.power}, {"trials", s.trials},
                      {"converged", s.converged}, {"min_iters", s.min_iters}, {"q1_iters", s.q1},
                      {"median_iters", s.median}, {"q3_iters", s.q3}, {"max_iters", s.max_iters}});
    out.write("multiagent.json",
              ordered_json{{"trials", trials}, {"by_T", horizons}, {"by_capacity", caps}}.dump(2) +
                  "\n");
  }
  return out.written();
}

std::vector<std::string> emit_instance(const InstanceReport& r, const std::string& dir,
                                       ReportFormat f) {
  Output out(dir);
  if (f == ReportFormat::kCsv) {
    std::string body = csv_line({"agent", "W_no", "W_centr", "W_P2P", "dW", "dW_pct"});
    for (const auto& row : r.rows)
      body += csv_line({row.agent, num(row.w_no), num(row.w_centr), num(row.w_p2p), num(row.dw),
                        num(row.dw_pct)});
    out.write("instance_welfare.csv", body);
    body = csv_line({"agent", "t", "quantity", "price", "iteration"});
    for (const auto& tr : r.ledger.trades)
      for (std::size_t t = 0; t < tr.quantity.size(); ++t)
        body += csv_line({std::to_string(tr.agent), std::to_string(t), num(tr.quantity[t]),
                          num(tr.price[t]), std::to_string(tr.iteration)});
    out.write("trades.csv", body);
  } else {
    ordered_json rows = ordered_json::array();
    for (const auto& row : r.rows)
      rows.push_back({{"agent", row.agent}, {"W_no", jnum(row.w_no)}, {"W_centr", jnum(row.w_centr)},
                      {"W_P2P", jnum(row.w_p2p)}, {"dW", jnum(row.dw)}, {"dW_pct", jnum(row.dw_pct)}});
    ordered_json trades = ordered_json::array();
    for (const auto& tr : r.ledger.trades)
      trades.push_back({{"agent", tr.agent}, {"iteration", tr.iteration},
                        {"quantity", tr.quantity}, {"price", tr.price}});
    out.write("instance.json",
              ordered_json{{"iterations", r.ledger.iterations},
                           {"termination", to_string(r.ledger.termination)},
                           {"pi_agent", r.ledger.pi_agent},
                           {"welfare", rows},
                           {"trades", trades}}
                      .dump(2) +
                  "\n");
  }
  return out.written();
}

std::vector<std::string> emit_dispatch(const Scenario& sc, const DispatchSolution& sol,
                                       const std::string& dir, ReportFormat f) {
  Output out(dir);
  if (f == ReportFormat::kCsv) {
    std::string body = csv_line({"t", "agent", "d", "p_s", "p_b", "soc", "price"});
    for (std::size_t t = 0; t < sc.horizon; ++t)
      for (std::size_t n = 0; n < sc.agents.size(); ++n) {
        const auto& a = sol.agents[n];
        body += csv_line({std::to_string(t), sc.agents[n].id, num(a.d[t]), num(a.p_s[t]),
                          num(a.p_b[t]), a.soc.empty() ? "" : num(a.soc[t]), num(sol.price[t])});
      }
    out.write("dispatch.csv", body);
  } else {
    ordered_json agents = ordered_json::array();
    for (std::size_t n = 0; n < sc.agents.size(); ++n) {
      const auto& a = sol.agents[n];
      agents.push_back({{"id", sc.agents[n].id}, {"utility", a.utility}, {"d", a.d},
                        {"p_s", a.p_s}, {"p_b", a.p_b}, {"soc", a.soc}});
    }
    out.write("dispatch.json", ordered_json{{"status", to_string(sol.status)},
                                            {"welfare", jnum(sol.welfare)},
                                            {"dual_welfare", jnum(sol.dual_welfare)},
                                            {"kkt_residual", jnum(sol.kkt_residual)},
                                            {"price", sol.price},
                                            {"agents", agents}}
                                   .dump(2) +
                                   "\n");
  }
  return out.written();
}

}  // namespace p2pgrid

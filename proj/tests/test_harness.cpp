#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "p2pgrid/config.hpp"
#include "p2pgrid/errors.hpp"
#include "p2pgrid/harness.hpp"

using namespace p2pgrid;
namespace fs = std::filesystem;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("p2pgrid_" + name);
  fs::remove_all(dir);
  return dir;
}

MultiAgentConfig small_experiment() {
  MultiAgentConfig m;
  m.capacities = {5.0, 20.0};
  m.powers = {3.0};
  m.trials = 3;
  m.max_agents = 3;
  m.horizons = {1, 6};
  m.profiles.synthetic = {6, 24 * 14, 24 * 120, 5};
  m.seed = 8;
  return m;
}

}  // namespace

TEST_CASE("welfare gap percentage") {
  CHECK(*welfare_gap_pct(36.717, 473.298) == doctest::Approx(7.758).epsilon(1e-4));
  CHECK(*welfare_gap_pct(5.512, 19.804) == doctest::Approx(27.833).epsilon(1e-4));
  CHECK_FALSE(welfare_gap_pct(0.1, 5e-7).has_value());
  CHECK(*welfare_gap_pct(-1.0, -2.0) == 50.0);
}

TEST_CASE("statistics helpers") {
  const auto s = describe({1.0, 2.0, 3.0, 4.0});
  CHECK(s.count == 4);
  CHECK(s.mean == 2.5);
  CHECK(s.max == 4.0);
  CHECK(s.std == doctest::Approx(std::sqrt(5.0 / 3.0)));
  CHECK(describe({}).count == 0);
  CHECK(describe({7.0}).std == 0.0);
  CHECK(quantile({3, 1, 2, 4}, 0.5) == 2.5);
  CHECK(quantile({3, 1, 2, 4}, 0.25) == 1.75);
  CHECK(quantile({3, 1, 2, 4}, 1.0) == 4.0);
  CHECK_THROWS_AS(quantile({}, 0.5), DomainError);
}

TEST_CASE("gamma grid shapes") {
  const auto full = full_gamma_grid();
  CHECK(full.gammas.size() * full.deltas.size() == 380);
  CHECK(full.gammas.front() == doctest::Approx(0.05));
  CHECK(full.gammas.back() == doctest::Approx(0.95));
  CHECK(full.deltas.back() == doctest::Approx(2.0));

  GammaSweepConfig g;
  g.gammas = {0.2, 0.4, 0.6, 0.8, 0.9};
  g.deltas = {0.25, 0.5, 1.0, 2.0};
  g.trials = 20;
  const auto cells = run_gamma_sweep(g);
  REQUIRE(cells.size() == 20);
  CHECK(cells[0].gamma == 0.2);
  CHECK(cells[0].delta0 == 0.25);
  CHECK(cells[1].delta0 == 0.5);
  for (const auto& c : cells) {
    CHECK(c.converged == 20);
    CHECK(c.mean_iters <= c.max_iters);
    CHECK(c.mean_iters >= 1.0);
  }
  g.parallel = false;
  const auto serial = run_gamma_sweep(g);
  for (std::size_t i = 0; i < cells.size(); ++i) {
    CHECK(serial[i].mean_iters == cells[i].mean_iters);
    CHECK(serial[i].max_iters == cells[i].max_iters);
  }
}

TEST_CASE("sweep instances") {
  GammaSweepConfig g;
  for (int k = 0; k < 50; ++k) {
    const auto sc = sweep_instance(g, k);
    CHECK_NOTHROW(validate(sc));
    REQUIRE(sc.agents.size() == 2);
    for (const auto& a : sc.agents) {
      CHECK(a.solar[0] >= 0.0);
      CHECK(a.solar[0] <= 2.0 * a.utility[0].d0);
      CHECK(a.utility[0].r_hat >= -1.5);
      CHECK(a.utility[0].r_hat <= -0.5);
    }
  }
  CHECK(sweep_instance(g, 3).agents[1].solar == sweep_instance(g, 3).agents[1].solar);
}

TEST_CASE("trial recipes are paired across capacities") {
  const auto m = small_experiment();
  const auto p = load_source(m.profiles);
  for (int k = 0; k < 10; ++k) {
    const auto a = trial_recipe(m, p, k, 5.0, 3.0);
    const auto b = trial_recipe(m, p, k, 20.0, 3.0);
    CHECK(a.agent_rows == b.agent_rows);
    CHECK(a.horizon == b.horizon);
    CHECK(a.start == b.start);
    CHECK(a.seed == b.seed);
    CHECK(a.agents >= 2);
    CHECK(a.agents <= 3);
    CHECK(a.start + a.horizon <= p.hours());
    const auto sa = generate_scenario(p, a);
    const auto sb = generate_scenario(p, b);
    for (std::size_t i = 0; i < sa.agents.size(); ++i) {
      CHECK(sa.agents[i].utility[0].r_hat == sb.agents[i].utility[0].r_hat);
      CHECK(4.0 * std::get<IdealBattery>(*sa.agents[i].battery).s_max ==
            doctest::Approx(std::get<IdealBattery>(*sb.agents[i].battery).s_max));
    }
  }
  auto bad = m;
  bad.max_agents = 7;
  CHECK_THROWS_AS(trial_recipe(bad, p, 0, 5.0, 3.0), DomainError);
}

TEST_CASE("multi-agent experiment rows and summaries") {
  const auto m = small_experiment();
  const auto rows = run_multiagent_experiment(m);
  REQUIRE(rows.size() == 6);
  CHECK(rows[0].capacity == 5.0);
  CHECK(rows[3].capacity == 20.0);
  for (const auto& r : rows) {
    CHECK(r.converged);
    CHECK(r.min_pareto_slack >= -1e-6);
    CHECK(r.pi_agent_feasible);
    CHECK(r.dw == doctest::Approx(r.w_centr - r.w_p2p));
    CHECK(r.w_p2p >= r.w_no - 1e-6);
    if (r.dw_pct) CHECK(*r.dw_pct == doctest::Approx(100.0 * r.dw / r.w_centr));
  }
  // Summaries follow from the rows alone.
  for (const auto& s : summarize_by_horizon(rows)) {
    std::vector<double> pct;
    int n = 0;
    for (const auto& r : rows)
      if (r.horizon == s.horizon) {
        ++n;
        if (r.converged && r.dw_pct) pct.push_back(*r.dw_pct);
      }
    CHECK(s.trials == n);
    CHECK(s.dw_pct.mean == describe(pct).mean);
  }
  const auto caps = summarize_by_capacity(rows);
  REQUIRE(caps.size() == 2);
  CHECK(caps[0].trials == 3);
  CHECK(caps[0].min_iters <= caps[0].median);
  CHECK(caps[0].median <= caps[0].max_iters);

  auto serial = m;
  serial.parallel = false;
  const auto again = run_multiagent_experiment(serial);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(again[i].iterations == rows[i].iterations);
    CHECK(again[i].w_p2p == rows[i].w_p2p);
  }
}

TEST_CASE("staggered exits keep the pi-agent whole") {
  // Default experiment, capacity 15, trial 1: agents used to leave at
  // iterations 6, 30, 51, 61 and 93, and the pi-agent ended below no trade.
  MultiAgentConfig m;
  const auto p = load_source(m.profiles);
  const auto r = trial_recipe(m, p, 1, 15.0, 5.0);
  const auto sc = generate_scenario(p, r);
  const auto ledger = run_negotiation(sc, m.negotiation);
  CHECK(ledger.termination == Termination::kAllExited);
  const auto audit = audit_welfare(sc, ledger);
  CHECK(audit.min_pareto_slack >= -1e-6);
  CHECK(audit.p2p[0] >= audit.no_trade[0] - 1e-6);
  bool deferred = false;
  for (const auto& rec : ledger.records) deferred = deferred || rec.exit_deferred;
  CHECK(deferred);
}

TEST_CASE("special-instance report") {
  const auto m = small_experiment();
  const auto p = load_source(m.profiles);
  const auto sc = generate_scenario(p, trial_recipe(m, p, 1, 20.0, 3.0));
  const auto rep = special_instance_report(sc, NegotiationConfig{});
  REQUIRE(rep.rows.size() == sc.agents.size() + 1);
  const auto& total = rep.rows.back();
  CHECK(total.agent == "total");
  double no = 0, centr = 0, p2p = 0;
  for (std::size_t n = 0; n + 1 < rep.rows.size(); ++n) {
    no += rep.rows[n].w_no;
    centr += rep.rows[n].w_centr;
    p2p += rep.rows[n].w_p2p;
    CHECK(rep.rows[n].w_p2p >= rep.rows[n].w_no - 1e-6);
  }
  CHECK(total.w_no == doctest::Approx(no));
  CHECK(total.w_centr == doctest::Approx(centr));
  CHECK(total.w_centr == doctest::Approx(rep.central.welfare).epsilon(1e-9));
  CHECK(total.w_p2p == doctest::Approx(p2p));
  CHECK(total.dw == doctest::Approx(total.w_centr - total.w_p2p));
}

TEST_CASE("reports are deterministic files") {
  GammaSweepConfig g;
  g.gammas = {0.3, 0.5};
  g.deltas = {0.5};
  g.trials = 5;
  const auto dir = scratch("report");
  auto paths = emit_gamma_sweep(run_gamma_sweep(g), (dir / "a").string(), ReportFormat::kCsv);
  REQUIRE(paths.size() == 1);
  const auto first = slurp(paths[0]);
  CHECK(first.rfind("gamma,delta0,mean_iters,max_iters\n", 0) == 0);
  CHECK(std::count(first.begin(), first.end(), '\n') == 3);
  paths = emit_gamma_sweep(run_gamma_sweep(g), (dir / "b").string(), ReportFormat::kCsv);
  CHECK(slurp(paths[0]) == first);

  const auto m = small_experiment();
  const auto rows = run_multiagent_experiment(m);
  const auto csv = emit_multiagent(rows, (dir / "m").string(), ReportFormat::kCsv);
  CHECK(csv.size() == 3);
  CHECK(slurp((dir / "m" / "welfare_by_T.csv").string())
            .rfind("T,trials,converged,mean_dW_pct,std_dW_pct,max_dW_pct,mean_dW,std_dW,max_dW\n",
                   0) == 0);
  const auto json = emit_multiagent(rows, (dir / "j").string(), ReportFormat::kJson);
  REQUIRE(json.size() == 1);
  CHECK(slurp(json[0]).find("\"by_capacity\"") != std::string::npos);

  const auto blocker = dir / "file";
  std::ofstream(blocker) << "x";
  CHECK_THROWS_AS(emit_gamma_sweep({}, (blocker / "sub").string(), ReportFormat::kCsv), IoError);
  fs::remove_all(dir);
}

TEST_CASE("config parsing") {
  auto cfg = parse_config("{}");
  CHECK(cfg.seed == 1);
  CHECK(cfg.negotiation.gamma == 0.5);

  cfg = parse_config(R"({
    "seed": 42,
    "parallel": false,
    "negotiation": {"gamma": 0.4, "delta0": 1.0, "epsilon": 0.001, "max_iters": 100},
    "profiles": {"agents": 4, "hours": 48, "start_hour": 10},
    "scenario": {"agents": 3, "horizon": 12, "elasticity": [-3, -2], "total_battery": 15,
                 "battery_power": 2, "price_mode": "flat", "flat_price": 0.2},
    "sweep": {"grid": "full", "trials": 3},
    "experiment": {"capacities": [15, 40], "agents": [2, 4], "horizons": [1, 12]}
  })");
  CHECK(cfg.seed == 42);
  CHECK(cfg.scenario.seed == 42);
  CHECK(cfg.sweep.seed == 42);
  CHECK(cfg.experiment.seed == 42);
  CHECK(cfg.profiles.synthetic.seed == 42);
  CHECK_FALSE(cfg.experiment.parallel);
  CHECK(cfg.experiment.negotiation.gamma == 0.4);
  CHECK(cfg.experiment.profiles.synthetic.hours == 48);
  CHECK(cfg.scenario.elasticity_lo == -3.0);
  CHECK(cfg.scenario.price_mode == PriceMode::kFlat);
  CHECK(cfg.sweep.gammas.size() * cfg.sweep.deltas.size() == 380);
  CHECK(cfg.experiment.max_agents == 4);

  auto message = [](const std::string& text) {
    try {
      parse_config(text);
    } catch (const DomainError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  CHECK(message(R"({"sweep": {"gama": 1}})").find("sweep.gama: unknown key") != std::string::npos);
  CHECK(message(R"({"seed": "x"})").find("seed: wrong type") != std::string::npos);
  CHECK(message(R"({"negotiation": {"gamma": 1.5}})").find("negotiation") != std::string::npos);
  CHECK(message(R"({"scenario": {"price_mode": "peak"}})").find("scenario.price_mode") !=
        std::string::npos);
  CHECK(message(R"({"scenario": {"elasticity": [-1]}})").find("[lo, hi]") != std::string::npos);
  CHECK(message(R"({"experiment": {"agents": [1, 3]}})").find("experiment.agents") !=
        std::string::npos);
  CHECK(message("{").find("invalid JSON") != std::string::npos);
  CHECK_THROWS_AS(load_config("/nonexistent/config.json"), IoError);
  CHECK(parse_report_format("json") == ReportFormat::kJson);
  CHECK_THROWS_AS(parse_report_format("xml"), DomainError);
}

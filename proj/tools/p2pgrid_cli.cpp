#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "p2pgrid/config.hpp"
#include "p2pgrid/errors.hpp"
#include "p2pgrid/harness.hpp"

using namespace p2pgrid;

namespace {

constexpr int kConfigError = 2;
constexpr int kIoError = 3;

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  std::string format = "csv";
};

HarnessConfig resolve(const Options& o) {
  HarnessConfig cfg = o.config.empty() ? HarnessConfig{} : load_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  cfg.propagate();
  return cfg;
}

void report(const std::vector<std::string>& paths) {
  for (const auto& p : paths) std::printf("wrote %s\n", p.c_str());
}

Scenario configured_scenario(const HarnessConfig& cfg) {
  return generate_scenario(load_source(cfg.profiles), cfg.scenario);
}

int run_dispatch(const Options& o) {
  const auto cfg = resolve(o);
  const auto sc = configured_scenario(cfg);
  const auto sol = sc.has_extended_battery() ? solve_centralized_ext(sc) : solve_centralized(sc);
  std::printf("dispatch: %zu agents, T=%zu, welfare %.6f, status %s\n", sc.agents.size(),
              sc.horizon, sol.welfare, to_string(sol.status).c_str());
  report(emit_dispatch(sc, sol, o.out, parse_report_format(o.format)));
  return 0;
}

int run_negotiate(const Options& o) {
  const auto cfg = resolve(o);
  const auto rep = special_instance_report(configured_scenario(cfg), cfg.negotiation);
  const auto& total = rep.rows.back();
  std::printf("negotiate: %d iterations (%s), W_centr %.6f, W_P2P %.6f, dW %.6f\n",
              rep.ledger.iterations, to_string(rep.ledger.termination).c_str(), total.w_centr,
              total.w_p2p, total.dw);
  report(emit_instance(rep, o.out, parse_report_format(o.format)));
  return 0;
}

int run_sweep(const Options& o) {
  const auto cfg = resolve(o);
  const auto cells = run_gamma_sweep(cfg.sweep);
  std::printf("sweep-gamma: %zu cells x %d trials\n", cells.size(), cfg.sweep.trials);
  report(emit_gamma_sweep(cells, o.out, parse_report_format(o.format)));
  return 0;
}

int run_experiment(const Options& o) {
  const auto cfg = resolve(o);
  const auto rows = run_multiagent_experiment(cfg.experiment);
  int converged = 0;
  for (const auto& r : rows) converged += r.converged;
  std::printf("experiment-multiagent: %zu trials, %d converged\n", rows.size(), converged);
  report(emit_multiagent(rows, o.out, parse_report_format(o.format)));
  return 0;
}

int run_gen_profiles(const Options& o) {
  const auto cfg = resolve(o);
  if (o.format != "csv") throw DomainError("gen-profiles writes CSV only");
  const auto p = generate_profiles(cfg.profiles.synthetic);
  std::error_code ec;
  std::filesystem::create_directories(o.out, ec);
  if (ec) throw IoError("cannot create output directory '" + o.out + "': " + ec.message());
  const auto path = (std::filesystem::path(o.out) / "profiles.csv").string();
  save_profiles(path, p);
  report({path});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Peer-to-peer energy trading experiments"};
  app.require_subcommand(1);
  app.fallthrough();
  Options o;
  app.add_option("--config", o.config, "JSON config file");
  app.add_option("--seed", o.seed, "Seed overriding the config");
  app.add_option("--out", o.out, "Output directory")->capture_default_str();
  app.add_option("--format", o.format, "csv or json")
      ->check(CLI::IsMember({"csv", "json"}))
      ->capture_default_str();

  int (*verb)(const Options&) = nullptr;
  app.add_subcommand("dispatch", "Centralized dispatch of the configured scenario")
      ->callback([&] { verb = run_dispatch; });
  app.add_subcommand("negotiate", "Negotiation and per-agent welfare report")
      ->callback([&] { verb = run_negotiate; });
  app.add_subcommand("sweep-gamma", "Iterations over a (gamma, delta0) grid")
      ->callback([&] { verb = run_sweep; });
  app.add_subcommand("experiment-multiagent", "Multi-agent convergence and welfare trials")
      ->callback([&] { verb = run_experiment; });
  app.add_subcommand("gen-profiles", "Write synthetic load and PV profiles")
      ->callback([&] { verb = run_gen_profiles; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfigError;
  }

  try {
    return verb(o);
  } catch (const IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kIoError;
  } catch (const DomainError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kConfigError;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}

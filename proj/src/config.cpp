#include "p2pgrid/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

#include "p2pgrid/errors.hpp"

namespace p2pgrid {
namespace {

using nlohmann::json;

// Reads one JSON object, remembering its path for messages and rejecting keys
// nobody asked for.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail(path_, "expected an object");
  }

  ~Section() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (const auto& [key, value] : j_.items())
      if (!known_.count(key)) fail(key_path(key), "unknown key");
  }

  bool has(const std::string& key) {
    known_.insert(key);
    return j_.contains(key);
  }

  template <typename T>
  void read(const std::string& key, T& out) {
    if (!has(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      fail(key_path(key), "wrong type");
    }
  }

  void read_range(const std::string& key, double& lo, double& hi) {
    std::vector<double> v{lo, hi};
    read(key, v);
    if (v.size() != 2) fail(key_path(key), "expected [lo, hi]");
    lo = v[0];
    hi = v[1];
  }

  void read_range(const std::string& key, std::size_t& lo, std::size_t& hi) {
    std::vector<std::size_t> v{lo, hi};
    read(key, v);
    if (v.size() != 2) fail(key_path(key), "expected [lo, hi]");
    lo = v[0];
    hi = v[1];
  }

  Section child(const std::string& key) {
    known_.insert(key);
    return Section(j_.at(key), key_path(key));
  }

  std::string key_path(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  [[noreturn]] static void fail(const std::string& where, const std::string& what) {
    throw DomainError("config: " + (where.empty() ? std::string("<root>") : where) + ": " + what);
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> known_;
};

void read_negotiation(Section s, NegotiationConfig& n) {
  s.read("gamma", n.gamma);
  s.read("delta0", n.delta0);
  s.read("epsilon", n.epsilon);
  s.read("max_iters", n.max_iters);
  s.read("pi_agent", n.pi_agent);
}

void read_profiles(Section s, ProfileSource& p) {
  s.read("path", p.path);
  s.read("agents", p.synthetic.agents);
  s.read("hours", p.synthetic.hours);
  s.read("start_hour", p.synthetic.start_hour);
}

void read_scenario(Section s, ScenarioRecipe& r) {
  s.read("agents", r.agents);
  s.read("horizon", r.horizon);
  s.read("start", r.start);
  s.read("agent_rows", r.agent_rows);
  if (s.has("elasticity")) s.read_range("elasticity", r.elasticity_lo, r.elasticity_hi);
  s.read("total_battery", r.total_battery);
  s.read("battery_power", r.battery_power);
  s.read("flat_price", r.flat_price);
  auto named = [&](const char* key, auto parse, auto& out) {
    if (!s.has(key)) return;
    std::string name;
    s.read(key, name);
    try {
      out = parse(name);
    } catch (const DomainError& e) {
      Section::fail(s.key_path(key), e.what());
    }
  };
  named("pv_scaling", parse_pv_scaling, r.pv_scaling);
  named("price_mode", parse_price_mode, r.price_mode);
}

void read_sweep(Section s, GammaSweepConfig& g) {
  if (s.has("grid")) {
    std::string grid;
    s.read("grid", grid);
    if (grid != "full") Section::fail(s.key_path("grid"), "only \"full\" is defined");
    const auto full = full_gamma_grid();
    g.gammas = full.gammas;
    g.deltas = full.deltas;
  }
  s.read("gammas", g.gammas);
  s.read("deltas", g.deltas);
  s.read("trials", g.trials);
  s.read("epsilon", g.epsilon);
  s.read("max_iters", g.max_iters);
  if (s.has("elasticity")) s.read_range("elasticity", g.elasticity_lo, g.elasticity_hi);
  if (g.gammas.empty() || g.deltas.empty()) Section::fail(s.key_path("gammas"), "empty grid");
  if (g.trials < 1) Section::fail(s.key_path("trials"), "must be >= 1");
}

void read_experiment(Section s, MultiAgentConfig& m) {
  s.read("capacities", m.capacities);
  s.read("powers", m.powers);
  s.read("trials", m.trials);
  if (s.has("agents")) s.read_range("agents", m.min_agents, m.max_agents);
  s.read("horizons", m.horizons);
  if (s.has("elasticity")) s.read_range("elasticity", m.elasticity_lo, m.elasticity_hi);
  if (m.capacities.empty() || m.powers.empty() || m.horizons.empty())
    Section::fail(s.key_path("capacities"), "capacities, powers and horizons must be non-empty");
  if (m.trials < 1) Section::fail(s.key_path("trials"), "must be >= 1");
  if (m.min_agents < 2 || m.min_agents > m.max_agents)
    Section::fail(s.key_path("agents"), "must satisfy 2 <= lo <= hi");
}

}  // namespace

void HarnessConfig::propagate() {
  profiles.synthetic.seed = seed;
  scenario.seed = seed;
  sweep.seed = seed;
  sweep.parallel = parallel;
  experiment.seed = seed;
  experiment.parallel = parallel;
  experiment.negotiation = negotiation;
  experiment.profiles = profiles;
}

HarnessConfig parse_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw DomainError(std::string("config: invalid JSON: ") + e.what());
  }
  HarnessConfig cfg;
  {
    Section root(j, "");
    root.read("seed", cfg.seed);
    root.read("parallel", cfg.parallel);
    if (root.has("negotiation")) read_negotiation(root.child("negotiation"), cfg.negotiation);
    if (root.has("profiles")) read_profiles(root.child("profiles"), cfg.profiles);
    if (root.has("scenario")) read_scenario(root.child("scenario"), cfg.scenario);
    if (root.has("sweep")) read_sweep(root.child("sweep"), cfg.sweep);
    if (root.has("experiment")) read_experiment(root.child("experiment"), cfg.experiment);
  }
  try {
    validate(cfg.negotiation);
  } catch (const DomainError& e) {
    throw DomainError(std::string("config: negotiation: ") + e.what());
  }
  try {
    validate(cfg.scenario);
  } catch (const DomainError& e) {
    throw DomainError(std::string("config: scenario: ") + e.what());
  }
  cfg.propagate();
  return cfg;
}

HarnessConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path + "'");
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str());
}

}  // namespace p2pgrid

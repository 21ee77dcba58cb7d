#include "p2pgrid/scenario.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "p2pgrid/errors.hpp"

namespace p2pgrid {
namespace {

using namespace std::chrono;

constexpr std::string_view kHeader = "timestamp,agent_id,load_kwh,pv_kw";

[[noreturn]] void fail(const std::string& source, std::size_t line, const std::string& msg) {
  throw DomainError(source + ":" + std::to_string(line) + ": " + msg);
}

int parse_int(std::string_view s) {
  int v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) throw DomainError("bad timestamp field");
  return v;
}

std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (true) {
    const auto comma = line.find(',', pos);
    out.push_back(line.substr(pos, comma == std::string_view::npos ? comma : comma - pos));
    if (comma == std::string_view::npos) return out;
    pos = comma + 1;
  }
}

double parse_value(std::string_view s, const std::string& source, std::size_t line,
                   const char* column) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc{} || ptr != s.data() + s.size() || !std::isfinite(v))
    fail(source, line, std::string("invalid ") + column + " '" + std::string(s) + "'");
  return v;
}

double round6(double x) { return std::round(x * 1e6) / 1e6; }

int hour_of_day(sys_seconds t) {
  const auto day = floor<days>(t);
  return static_cast<int>(duration_cast<hours>(t - day).count());
}

std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace

sys_seconds parse_timestamp(std::string_view text) {
  if (!text.empty() && text.back() == 'Z') text.remove_suffix(1);
  if (text.size() != 19 || text[4] != '-' || text[7] != '-' || text[10] != 'T' ||
      text[13] != ':' || text[16] != ':')
    throw DomainError("timestamp '" + std::string(text) + "' is not YYYY-MM-DDTHH:MM:SS");
  try {
    const year_month_day ymd{year{parse_int(text.substr(0, 4))},
                             month{static_cast<unsigned>(parse_int(text.substr(5, 2)))},
                             day{static_cast<unsigned>(parse_int(text.substr(8, 2)))}};
    const int h = parse_int(text.substr(11, 2));
    const int m = parse_int(text.substr(14, 2));
    const int s = parse_int(text.substr(17, 2));
    if (!ymd.ok() || h < 0 || h > 23 || m < 0 || m > 59 || s < 0 || s > 59)
      throw DomainError("out of range");
    return sys_days{ymd} + hours{h} + minutes{m} + seconds{s};
  } catch (const DomainError&) {
    throw DomainError("timestamp '" + std::string(text) + "' is not a valid date and time");
  }
}

std::string format_timestamp(sys_seconds t) {
  const auto day = floor<days>(t);
  const year_month_day ymd{day};
  const hh_mm_ss hms{t - day};
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02d", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()) % 100u, static_cast<unsigned>(ymd.day()) % 100u,
                static_cast<int>(hms.hours().count()) % 100, static_cast<int>(hms.minutes().count()) % 100,
                static_cast<int>(hms.seconds().count()) % 100);
  return buf;
}

ProfileSet parse_profiles(std::istream& in, const std::string& source) {
  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(in, line)) fail(source, 1, "empty file");
  ++lineno;
  if (line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kHeader) fail(source, lineno, "expected header '" + std::string(kHeader) + "'");

  ProfileSet p;
  sys_seconds current{};
  std::size_t hour = 0, pos = 0;
  bool any = false;
  auto close_hour = [&](std::size_t at) {
    if (pos != p.agent_ids.size())
      fail(source, at, format_timestamp(current) + " lists " + std::to_string(pos) +
                           " agents, expected " + std::to_string(p.agent_ids.size()));
  };

  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split(line);
    if (f.size() != 4) fail(source, lineno, "expected 4 fields, got " + std::to_string(f.size()));
    sys_seconds ts;
    try {
      ts = parse_timestamp(f[0]);
    } catch (const DomainError& e) {
      fail(source, lineno, e.what());
    }
    if (ts != floor<hours>(ts)) fail(source, lineno, "timestamp not on the hour");
    const std::string id(f[1]);
    if (id.empty()) fail(source, lineno, "empty agent_id");
    const double load = parse_value(f[2], source, lineno, "load_kwh");
    const double pv = parse_value(f[3], source, lineno, "pv_kw");
    if (load < 0.0) fail(source, lineno, "negative load_kwh for agent '" + id + "'");
    if (pv < 0.0) fail(source, lineno, "negative pv_kw for agent '" + id + "'");

    if (!any) {
      p.start = current = ts;
      any = true;
    } else if (ts < current) {
      fail(source, lineno, "rows not sorted by timestamp");
    } else if (ts > current) {
      close_hour(lineno - 1);
      if (ts != current + hours{1})
        fail(source, lineno, "gap in timestamps: " + format_timestamp(current + hours{1}) +
                                 " missing before " + format_timestamp(ts));
      current = ts;
      ++hour;
      pos = 0;
    }

    if (hour == 0) {
      if (!p.agent_ids.empty() && id <= p.agent_ids.back())
        fail(source, lineno, "agent_id '" + id + "' out of order or repeated");
      p.agent_ids.push_back(id);
      p.load.emplace_back();
      p.pv.emplace_back();
    } else if (pos >= p.agent_ids.size() || p.agent_ids[pos] != id) {
      fail(source, lineno, "unexpected agent_id '" + id + "' at " + format_timestamp(ts));
    }
    p.load[pos].push_back(load);
    p.pv[pos].push_back(pv);
    ++pos;
  }
  if (!any) fail(source, lineno, "no data rows");
  close_hour(lineno);
  return p;
}

ProfileSet load_profiles(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open profile file '" + path + "'");
  return parse_profiles(in, path);
}

void write_profiles(std::ostream& out, const ProfileSet& p) {
  out << kHeader << '\n';
  char buf[64];
  for (std::size_t h = 0; h < p.hours(); ++h) {
    const auto ts = format_timestamp(p.time_at(h));
    for (std::size_t a = 0; a < p.agent_ids.size(); ++a) {
      std::snprintf(buf, sizeof buf, "%.6f,%.6f", p.load[a][h], p.pv[a][h]);
      out << ts << ',' << p.agent_ids[a] << ',' << buf << '\n';
    }
  }
}

void save_profiles(const std::string& path, const ProfileSet& p) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write profile file '" + path + "'");
  write_profiles(out, p);
  if (!out) throw IoError("write failed for '" + path + "'");
}

ProfileSet generate_profiles(const SyntheticOptions& opt) {
  if (opt.agents == 0 || opt.hours == 0) throw DomainError("generate_profiles: empty request");
  std::mt19937_64 rng(opt.seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 1.0);
  auto between = [&](double lo, double hi) { return lo + (hi - lo) * unif(rng); };

  struct House {
    double capacity, base, morning, morning_at, evening, evening_at;
  };
  std::vector<House> houses(opt.agents);
  for (auto& h : houses)
    h = {between(2.0, 6.0), between(0.3, 0.6), between(0.3, 0.8), between(6.5, 8.5),
         between(0.8, 2.0), between(18.0, 20.0)};

  ProfileSet p;
  p.start = sys_seconds{sys_days{year{2017} / January / 1}} + hours{opt.start_hour};
  const int width = opt.agents < 10 ? 1 : opt.agents < 100 ? 2 : 3;
  for (std::size_t a = 0; a < opt.agents; ++a) {
    char id[16];
    std::snprintf(id, sizeof id, "h%0*zu", width, a);
    p.agent_ids.emplace_back(id);
  }
  p.load.assign(opt.agents, std::vector<double>(opt.hours));
  p.pv.assign(opt.agents, std::vector<double>(opt.hours));

  const double pi = std::numbers::pi;
  double clearness = 1.0;
  for (std::size_t t = 0; t < opt.hours; ++t) {
    const auto ts = p.time_at(t);
    const int hod = hour_of_day(ts);
    if (t == 0 || hod == 0) clearness = between(0.3, 1.0);
    const auto day = floor<days>(ts);
    const double doy = (day - sys_days{year_month_day{day}.year() / January / 1}).count();
    const double season = 0.8 + 0.2 * std::cos(2 * pi * (doy - 172.0) / 365.0);
    const double sun = std::max(0.0, std::sin(pi * (hod - 6.0) / 12.0));
    for (std::size_t a = 0; a < opt.agents; ++a) {
      const auto& h = houses[a];
      const double shape = h.base +
                           h.morning * std::exp(-0.5 * std::pow(hod - h.morning_at, 2)) +
                           h.evening * std::exp(-0.5 * std::pow((hod - h.evening_at) / 1.5, 2));
      p.load[a][t] = round6(shape * std::max(0.2, 1.0 + 0.1 * noise(rng)));
      p.pv[a][t] = round6(h.capacity * clearness * season * sun);
    }
  }
  return p;
}

void validate(const ScenarioRecipe& r) {
  auto require = [](bool ok, const char* msg) {
    if (!ok) throw DomainError(std::string("scenario recipe: ") + msg);
  };
  require(r.agents >= 2, "at least two agents");
  require(r.horizon >= 1, "horizon must be >= 1");
  require(std::isfinite(r.elasticity_lo) && std::isfinite(r.elasticity_hi) &&
              r.elasticity_lo <= r.elasticity_hi && r.elasticity_hi < 0.0,
          "elasticity range must satisfy lo <= hi < 0");
  require(r.elasticity_lo != -1.0 || r.elasticity_hi != -1.0, "elasticity -1 is not supported");
  require(std::isfinite(r.total_battery) && r.total_battery >= 0.0,
          "total battery capacity must be >= 0");
  require(std::isfinite(r.battery_power) && r.battery_power >= 0.0,
          "battery power must be >= 0");
  require(r.total_battery == 0.0 || r.battery_power > 0.0,
          "battery power must be > 0 when capacity is given");
  require(r.price_mode != PriceMode::kFlat || (std::isfinite(r.flat_price) && r.flat_price > 0.0),
          "flat price must be > 0");
  require(r.agent_rows.empty() || r.agent_rows.size() == r.agents,
          "agent_rows must list one row per agent");
}

double band_price(int hour_of_day) {
  if (hour_of_day >= 11 && hour_of_day < 16) return 0.15;
  if (hour_of_day >= 16 && hour_of_day < 21) return 0.30;
  return 0.10;
}

Scenario generate_scenario(const ProfileSet& p, const ScenarioRecipe& r) {
  validate(r);
  std::vector<std::size_t> rows = r.agent_rows;
  if (rows.empty())
    for (std::size_t a = 0; a < r.agents; ++a) rows.push_back(a);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= p.agent_ids.size())
      throw DomainError("generate_scenario: profile row " + std::to_string(rows[i]) +
                        " out of range (" + std::to_string(p.agent_ids.size()) + " agents)");
    if (std::find(rows.begin(), rows.begin() + static_cast<long>(i), rows[i]) !=
        rows.begin() + static_cast<long>(i))
      throw DomainError("generate_scenario: profile row repeated");
  }
  if (r.start + r.horizon > p.hours())
    throw DomainError("generate_scenario: window [" + std::to_string(r.start) + ", " +
                      std::to_string(r.start + r.horizon) + ") exceeds " +
                      std::to_string(p.hours()) + " profile hours");

  std::mt19937_64 rng(r.seed);
  std::uniform_real_distribution<double> elasticity(r.elasticity_lo, r.elasticity_hi);
  std::vector<double> e(rows.size());
  for (auto& x : e) {
    do x = r.elasticity_lo == r.elasticity_hi ? r.elasticity_lo : elasticity(rng);
    while (x == -1.0 || x >= 0.0);
  }

  std::vector<double> capacity(rows.size(), 0.0);
  if (r.total_battery > 0.0) {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    double sum = 0.0;
    for (auto& c : capacity) sum += (c = unif(rng));
    if (!(sum > 0.0)) std::fill(capacity.begin(), capacity.end(), sum = 1.0);
    for (auto& c : capacity) c = r.total_battery * c / sum;
  }

  double load_sum = 0.0, pv_sum = 0.0;
  for (auto row : rows)
    for (std::size_t t = r.start; t < r.start + r.horizon; ++t) {
      load_sum += p.load[row][t];
      pv_sum += p.pv[row][t];
    }
  const double scale =
      r.pv_scaling == PvScaling::kMatchLoad && pv_sum > 0.0 ? load_sum / pv_sum : 1.0;

  Scenario sc;
  sc.horizon = r.horizon;
  sc.dt = 1.0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    AgentSpec a;
    a.id = p.agent_ids[rows[i]];
    for (std::size_t t = r.start; t < r.start + r.horizon; ++t) {
      const double price =
          r.price_mode == PriceMode::kFlat ? r.flat_price : band_price(hour_of_day(p.time_at(t)));
      a.utility.push_back(build_utility(price, std::max(p.load[rows[i]][t], kMinAnchorLoad), e[i]));
      a.solar.push_back(p.pv[rows[i]][t] * scale);
    }
    if (capacity[i] > 0.0)
      a.battery = IdealBattery{r.battery_power, capacity[i], 0.5 * capacity[i], 1.0};
    sc.agents.push_back(std::move(a));
  }
  return sc;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  return splitmix64(splitmix64(seed) ^ index);
}

std::string to_string(PriceMode m) { return m == PriceMode::kFlat ? "flat" : "time-of-use"; }
std::string to_string(PvScaling s) { return s == PvScaling::kNone ? "none" : "match-load"; }

PriceMode parse_price_mode(std::string_view s) {
  if (s == "time-of-use") return PriceMode::kTimeOfUse;
  if (s == "flat") return PriceMode::kFlat;
  throw DomainError("unknown price mode '" + std::string(s) + "'");
}

PvScaling parse_pv_scaling(std::string_view s) {
  if (s == "match-load") return PvScaling::kMatchLoad;
  if (s == "none") return PvScaling::kNone;
  throw DomainError("unknown PV scaling '" + std::string(s) + "'");
}

}  // namespace p2pgrid

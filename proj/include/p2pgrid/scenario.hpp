#pragma once

#include <chrono>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "p2pgrid/dispatch.hpp"

namespace p2pgrid {

/// Hourly load and PV capacity per agent, starting at `start`.
struct ProfileSet {
  std::chrono::sys_seconds start{};
  std::vector<std::string> agent_ids;    ///< ascending
  std::vector<std::vector<double>> load;  ///< [agent][hour], kWh
  std::vector<std::vector<double>> pv;    ///< [agent][hour], kW

  std::size_t hours() const { return load.empty() ? 0 : load.front().size(); }
  std::chrono::sys_seconds time_at(std::size_t hour) const {
    return start + std::chrono::hours(static_cast<long>(hour));
  }
};

/// Reads `timestamp,agent_id,load_kwh,pv_kw` rows sorted by (timestamp,
/// agent_id). Every hour must list the same agents and hours must be
/// contiguous. Errors carry "<source>:<line>:". Throws IoError when the file
/// cannot be opened and DomainError for malformed content.
ProfileSet load_profiles(const std::string& path);
ProfileSet parse_profiles(std::istream& in, const std::string& source = "<stream>");

/// Writes the same CSV format, six decimals.
void write_profiles(std::ostream& out, const ProfileSet& p);
void save_profiles(const std::string& path, const ProfileSet& p);

/// "YYYY-MM-DDTHH:MM:SS", optionally with a trailing Z. Throws DomainError.
std::chrono::sys_seconds parse_timestamp(std::string_view text);
std::string format_timestamp(std::chrono::sys_seconds t);

struct SyntheticOptions {
  std::size_t agents = 10;
  std::size_t hours = 24 * 7;
  /// First hour, counted from 2017-01-01T00:00:00.
  std::size_t start_hour = 0;
  std::uint64_t seed = 1;
};

/// Daily sinusoidal PV with per-day cloud cover and a seasonal factor, and a
/// two-peak household load with multiplicative noise. Deterministic in seed.
ProfileSet generate_profiles(const SyntheticOptions& opt);

enum class PriceMode {
  kTimeOfUse,  ///< 0.10 from 21:00 to 11:00, 0.15 until 16:00, 0.30 until 21:00
  kFlat,
};

enum class PvScaling {
  kMatchLoad,  ///< scale PV so window energy equals window load
  kNone,
};

struct ScenarioRecipe {
  std::size_t agents = 2;
  std::size_t horizon = 24;
  /// First hour of the window within the profile set.
  std::size_t start = 0;
  /// Profile rows to use. Empty selects the first `agents` profiles.
  std::vector<std::size_t> agent_rows;
  double elasticity_lo = -1.5;
  double elasticity_hi = -0.5;
  double total_battery = 0.0;  ///< kWh, split over all agents
  double battery_power = 0.0;  ///< kW per battery
  PvScaling pv_scaling = PvScaling::kMatchLoad;
  PriceMode price_mode = PriceMode::kTimeOfUse;
  double flat_price = 0.15;
  std::uint64_t seed = 1;
};

/// Throws DomainError unless lo <= hi < 0, agents >= 2, horizon >= 1 and the
/// battery figures are consistent.
void validate(const ScenarioRecipe& r);

/// Anchor price for the hour of day under the banded tariff.
double band_price(int hour_of_day);

/// Loads below this are anchored here so the utility stays defined.
inline constexpr double kMinAnchorLoad = 1e-3;

/// Builds a scenario from the profile window. Elasticities are drawn per
/// agent, battery capacity fractions are uniform draws normalized to one and
/// each battery starts half full. Throws DomainError when the window or the
/// agent rows fall outside the profiles.
Scenario generate_scenario(const ProfileSet& p, const ScenarioRecipe& r);

/// Independent seed for trial `index` of a run seeded with `seed`.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

std::string to_string(PriceMode m);
std::string to_string(PvScaling s);
/// Throw DomainError on unknown names.
PriceMode parse_price_mode(std::string_view s);
PvScaling parse_pv_scaling(std::string_view s);

}  // namespace p2pgrid

#include "p2pgrid/battery.hpp"

#include <algorithm>
#include <cmath>

#include "p2pgrid/errors.hpp"

namespace p2pgrid {

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw DomainError(std::string("battery: ") + what);
}

void require_same_length(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), "charge and discharge sequences differ in length");
}

}  // namespace

void validate(const IdealBattery& b) {
  require(b.p_max >= 0.0 && b.s_max >= 0.0, "limits must be >= 0");
  require(b.s0 >= 0.0 && b.s0 <= b.s_max, "initial SOC outside [0, s_max]");
  require(b.dt > 0.0, "dt must be > 0");
  require(b.terminal_soc_min <= b.s_max, "terminal SOC bound above capacity");
}

void validate(const ExtendedBattery& b) {
  require(b.p_max_discharge >= 0.0 && b.p_max_charge >= 0.0 && b.s_max >= 0.0,
          "limits must be >= 0");
  require(b.sigma_plus > 0.0 && b.sigma_plus <= 1.0, "sigma_plus outside (0, 1]");
  require(b.sigma_minus > 0.0 && b.sigma_minus <= 1.0,
          "sigma_minus outside (0, 1]");
  require(b.theta >= 0.0 && b.theta <= 1.0, "theta outside [0, 1]");
  require(b.s0 >= 0.0 && b.s0 <= b.s_max, "initial SOC outside [0, s_max]");
  require(b.dt > 0.0, "dt must be > 0");
  require(b.terminal_soc_min <= b.s_max, "terminal SOC bound above capacity");
}

std::vector<double> soc_trajectory(const IdealBattery& b,
                                   std::span<const double> p) {
  std::vector<double> s(p.size());
  double level = b.s0;
  for (std::size_t t = 0; t < p.size(); ++t) {
    level -= p[t] * b.dt;
    s[t] = level;
  }
  return s;
}

std::vector<double> soc_trajectory_ext(const ExtendedBattery& b,
                                       std::span<const double> p_dis,
                                       std::span<const double> p_chg) {
  require_same_length(p_dis, p_chg);
  std::vector<double> s(p_dis.size());
  double level = b.s0;
  const double out = b.discharge_factor();
  for (std::size_t t = 0; t < p_dis.size(); ++t) {
    require(p_dis[t] >= 0.0 && p_chg[t] >= 0.0, "negative power component");
    level = b.theta * level + (b.sigma_minus * p_chg[t] - out * p_dis[t]) * b.dt;
    s[t] = level;
  }
  return s;
}

std::string to_string(BatteryConstraint c) {
  switch (c) {
    case BatteryConstraint::kPowerLimit: return "power";
    case BatteryConstraint::kEnergyLower: return "energy_lower";
    case BatteryConstraint::kEnergyUpper: return "energy_upper";
    case BatteryConstraint::kTerminal: return "terminal";
  }
  return "unknown";
}

namespace {

void check_energy(std::span<const double> s, double s_max, double terminal,
                  double tol, std::vector<BatteryViolation>& out) {
  for (std::size_t t = 0; t < s.size(); ++t) {
    if (s[t] < -tol) {
      out.push_back({t + 1, BatteryConstraint::kEnergyLower, -s[t]});
    } else if (s[t] > s_max + tol) {
      out.push_back({t + 1, BatteryConstraint::kEnergyUpper, s[t] - s_max});
    }
  }
  if (!s.empty() && terminal >= 0.0 && s.back() < terminal - tol) {
    out.push_back({s.size(), BatteryConstraint::kTerminal, terminal - s.back()});
  }
}

}  // namespace

std::vector<BatteryViolation> check_feasible(const IdealBattery& b,
                                             std::span<const double> p,
                                             double tol) {
  std::vector<BatteryViolation> out;
  for (std::size_t t = 0; t < p.size(); ++t) {
    const double excess = std::abs(p[t]) - b.p_max;
    if (excess > tol) out.push_back({t + 1, BatteryConstraint::kPowerLimit, excess});
  }
  check_energy(soc_trajectory(b, p), b.s_max, b.terminal_soc_min, tol, out);
  return out;
}

std::vector<BatteryViolation> check_feasible_ext(const ExtendedBattery& b,
                                                 std::span<const double> p_dis,
                                                 std::span<const double> p_chg,
                                                 double tol) {
  require_same_length(p_dis, p_chg);
  std::vector<BatteryViolation> out;
  for (std::size_t t = 0; t < p_dis.size(); ++t) {
    const double excess = std::max(p_dis[t] - b.p_max_discharge,
                                   p_chg[t] - b.p_max_charge);
    if (excess > tol) out.push_back({t + 1, BatteryConstraint::kPowerLimit, excess});
  }
  check_energy(soc_trajectory_ext(b, p_dis, p_chg), b.s_max, b.terminal_soc_min,
               tol, out);
  return out;
}

std::pair<std::vector<double>, std::vector<double>> repair_complementarity(
    const ExtendedBattery& b, std::span<const double> p_dis,
    std::span<const double> p_chg) {
  require_same_length(p_dis, p_chg);
  const double out_factor = b.discharge_factor();
  std::vector<double> dis(p_dis.size()), chg(p_chg.size());
  for (std::size_t t = 0; t < p_dis.size(); ++t) {
    require(p_dis[t] >= 0.0 && p_chg[t] >= 0.0, "negative power component");
    require(p_dis[t] <= b.p_max_discharge + kFeasibilityTolerance &&
                p_chg[t] <= b.p_max_charge + kFeasibilityTolerance,
            "power outside its box limit");
    // Net energy drawn from storage in this period.
    const double drawn = out_factor * p_dis[t] - b.sigma_minus * p_chg[t];
    dis[t] = std::max(drawn, 0.0) / out_factor;
    chg[t] = std::max(-drawn, 0.0) / b.sigma_minus;
  }
  return {std::move(dis), std::move(chg)};
}

std::vector<double> net_power(std::span<const double> p_dis,
                              std::span<const double> p_chg) {
  require_same_length(p_dis, p_chg);
  std::vector<double> net(p_dis.size());
  for (std::size_t t = 0; t < p_dis.size(); ++t) net[t] = p_dis[t] - p_chg[t];
  return net;
}

}  // namespace p2pgrid

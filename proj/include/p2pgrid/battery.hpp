#pragma once

#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace p2pgrid {

/// Lossless storage: s_t = s_{t-1} - p_t * dt, |p_t| <= p_max, 0 <= s_t <= s_max.
/// Positive power discharges into the grid.
struct IdealBattery {
  double p_max = 0.0;
  double s_max = 0.0;
  double s0 = 0.0;
  double dt = 1.0;
  /// Optional lower bound on the final state of charge (unconstrained when < 0).
  double terminal_soc_min = -1.0;
};

/// Storage with charge/discharge efficiencies, self-discharge and asymmetric
/// power limits:
///   s_t = theta * s_{t-1} + (sigma_minus * p_chg_t - p_dis_t / sigma_plus) * dt
struct ExtendedBattery {
  double p_max_discharge = 0.0;
  double p_max_charge = 0.0;
  double sigma_plus = 1.0;
  double sigma_minus = 1.0;
  double theta = 1.0;
  double s_max = 0.0;
  double s0 = 0.0;
  double dt = 1.0;
  double terminal_soc_min = -1.0;
  /// Apply the discharge efficiency as 1/sigma_minus instead of 1/sigma_plus.
  /// Kept only to evaluate the alternate reading of the storage recursion.
  bool discharge_uses_charge_efficiency = false;

  /// Energy drawn from storage per unit of discharged power.
  double discharge_factor() const {
    return 1.0 / (discharge_uses_charge_efficiency ? sigma_minus : sigma_plus);
  }
};

using Battery = std::variant<IdealBattery, ExtendedBattery>;

void validate(const IdealBattery& b);
void validate(const ExtendedBattery& b);

std::vector<double> soc_trajectory(const IdealBattery& b,
                                   std::span<const double> p);

std::vector<double> soc_trajectory_ext(const ExtendedBattery& b,
                                       std::span<const double> p_dis,
                                       std::span<const double> p_chg);

enum class BatteryConstraint { kPowerLimit, kEnergyLower, kEnergyUpper, kTerminal };

std::string to_string(BatteryConstraint c);

struct BatteryViolation {
  std::size_t t = 0;  ///< 1-based period
  BatteryConstraint constraint = BatteryConstraint::kPowerLimit;
  double magnitude = 0.0;
};

inline constexpr double kFeasibilityTolerance = 1e-7;

/// Every power or energy limit exceeded by more than `tol`. Empty means feasible.
std::vector<BatteryViolation> check_feasible(const IdealBattery& b,
                                             std::span<const double> p,
                                             double tol = kFeasibilityTolerance);

std::vector<BatteryViolation> check_feasible_ext(
    const ExtendedBattery& b, std::span<const double> p_dis,
    std::span<const double> p_chg, double tol = kFeasibilityTolerance);

/// Maps a relaxed (possibly simultaneous) charge/discharge schedule to one
/// with p_dis_t * p_chg_t = 0 and the same stored-energy trajectory.
std::pair<std::vector<double>, std::vector<double>> repair_complementarity(
    const ExtendedBattery& b, std::span<const double> p_dis,
    std::span<const double> p_chg);

/// Net discharge p_dis - p_chg.
std::vector<double> net_power(std::span<const double> p_dis,
                              std::span<const double> p_chg);

}  // namespace p2pgrid

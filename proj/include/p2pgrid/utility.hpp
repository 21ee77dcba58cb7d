#pragma once

#include <span>
#include <vector>

namespace p2pgrid {

/// Strictly concave utility with quasi-constant price elasticity.
///
/// The marginal utility curve of a constant-elasticity demand function is
/// shifted left by `delta_shift` so that g(0) and U(0) stay finite, and the
/// exponent is compensated so that the elasticity at the anchor price equals
/// `r_hat`:
///
///   g(d) = pi0 * ((d + delta) / (d0 + delta))^(1 / r')
///   r'   = r_hat / (1 + delta / d0)
///
/// U is normalized so that U(0) = 0.
struct QuasiCPEUtility {
  double pi0 = 0.0;          ///< anchor price [$/kWh]
  double d0 = 0.0;           ///< anchor demand [kWh]
  double r_hat = 0.0;        ///< target elasticity at pi0 (< 0, != -1)
  double delta_shift = 0.0;  ///< demand shift [kWh]
  double r_prime = 0.0;      ///< compensated exponent
};

/// Fraction of d0 used as the demand shift when a scenario omits it.
inline constexpr double kDefaultShiftFraction = 0.01;

QuasiCPEUtility build_utility(double pi0, double d0, double r_hat,
                              double delta_shift);

/// build_utility with delta_shift = kDefaultShiftFraction * d0.
QuasiCPEUtility build_utility(double pi0, double d0, double r_hat);

/// g(d), the marginal utility. Throws DomainError for d < 0.
double marginal_utility(const QuasiCPEUtility& u, double d);

/// U(d), normalized to U(0) = 0. Throws DomainError for d < 0.
double utility_value(const QuasiCPEUtility& u, double d);

/// h(pi) = max(0, g^{-1}(pi)). Throws DomainError for pi <= 0.
double inverse_demand(const QuasiCPEUtility& u, double pi);

namespace detail {
// Unchecked evaluations on the extended domain d > -delta_shift. The solver
// uses these so that iterates slightly below zero demand stay evaluable.
double marginal_utility_ext(const QuasiCPEUtility& u, double d);
double marginal_utility_slope_ext(const QuasiCPEUtility& u, double d);
double utility_value_ext(const QuasiCPEUtility& u, double d);
}  // namespace detail

/// Sum over periods of U_t(d_t).
double total_utility(std::span<const QuasiCPEUtility> u,
                     std::span<const double> d);

}  // namespace p2pgrid

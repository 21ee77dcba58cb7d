#include "p2pgrid/utility.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "p2pgrid/errors.hpp"

namespace p2pgrid {

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw DomainError(std::string("utility: ") + what);
}

}  // namespace

QuasiCPEUtility build_utility(double pi0, double d0, double r_hat,
                              double delta_shift) {
  require(std::isfinite(pi0) && pi0 > 0.0, "anchor price must be > 0");
  require(std::isfinite(d0) && d0 > 0.0, "anchor demand must be > 0");
  require(std::isfinite(r_hat) && r_hat < 0.0, "elasticity must be < 0");
  require(r_hat != -1.0, "elasticity -1 is not supported");
  require(std::isfinite(delta_shift) && delta_shift > 0.0,
          "demand shift must be > 0");

  QuasiCPEUtility u;
  u.pi0 = pi0;
  u.d0 = d0;
  u.r_hat = r_hat;
  u.delta_shift = delta_shift;
  u.r_prime = r_hat / (1.0 + delta_shift / d0);
  return u;
}

QuasiCPEUtility build_utility(double pi0, double d0, double r_hat) {
  return build_utility(pi0, d0, r_hat, kDefaultShiftFraction * d0);
}

namespace detail {

double marginal_utility_ext(const QuasiCPEUtility& u, double d) {
  return u.pi0 *
         std::pow((d + u.delta_shift) / (u.d0 + u.delta_shift), 1.0 / u.r_prime);
}

double marginal_utility_slope_ext(const QuasiCPEUtility& u, double d) {
  return marginal_utility_ext(u, d) / (u.r_prime * (d + u.delta_shift));
}

double utility_value_ext(const QuasiCPEUtility& u, double d) {
  // U(d) = pi0 * X0 * (x1^a - x0^a) / a with x = (d + delta) / X0,
  // a = 1 + 1/r'. Written as x0^a * expm1(a * log(x1 / x0)) / a so that
  // a -> 0 (r' -> -1) degrades to the logarithmic limit.
  const double scale = u.d0 + u.delta_shift;
  const double x0 = u.delta_shift / scale;
  const double log_ratio = std::log1p(d / u.delta_shift);
  const double a = 1.0 + 1.0 / u.r_prime;
  double integral;
  if (std::abs(a) < 1e-12) {
    integral = log_ratio;
  } else {
    integral = std::pow(x0, a) * std::expm1(a * log_ratio) / a;
  }
  return u.pi0 * scale * integral;
}

}  // namespace detail

double marginal_utility(const QuasiCPEUtility& u, double d) {
  require(d >= 0.0, "demand must be >= 0");
  return detail::marginal_utility_ext(u, d);
}

double utility_value(const QuasiCPEUtility& u, double d) {
  require(d >= 0.0, "demand must be >= 0");
  return detail::utility_value_ext(u, d);
}

double inverse_demand(const QuasiCPEUtility& u, double pi) {
  require(std::isfinite(pi) && pi > 0.0, "price must be > 0");
  const double raw =
      (u.d0 + u.delta_shift) * std::pow(pi / u.pi0, u.r_prime) - u.delta_shift;
  return raw > 0.0 ? raw : 0.0;
}

double total_utility(std::span<const QuasiCPEUtility> u,
                     std::span<const double> d) {
  if (u.size() != d.size()) throw DomainError("total_utility: length mismatch");
  double sum = 0.0;
  for (std::size_t t = 0; t < u.size(); ++t) sum += utility_value(u[t], d[t]);
  return sum;
}

}  // namespace p2pgrid

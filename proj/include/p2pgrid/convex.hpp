#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "p2pgrid/kernels.hpp"
#include "p2pgrid/utility.hpp"

namespace p2pgrid {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// minimize   sum_j -U_j(x_j) + cost^T x
/// subject to eq_matrix x = eq_rhs            (duals y)
///            ineq_matrix x <= ineq_rhs       (duals z >= 0)
///            lower <= x <= upper             (duals z_lower, z_upper >= 0)
///
/// A variable carrying a utility term must have a finite lower bound above
/// -delta_shift of that utility.
struct ConcaveProgram {
  std::vector<std::optional<QuasiCPEUtility>> utility_terms;  // size n or empty
  Eigen::VectorXd cost;
  Eigen::MatrixXd eq_matrix;
  Eigen::VectorXd eq_rhs;
  Eigen::MatrixXd ineq_matrix;
  Eigen::VectorXd ineq_rhs;
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;

  Eigen::Index num_vars() const { return cost.size(); }
  bool is_linear() const;
};

enum class SolveStatus { kOptimal, kInfeasible, kIterationLimit };

std::string to_string(SolveStatus s);

struct SolverOptions {
  int max_iterations = 10000;
  /// Absolute stopping tolerance on every KKT block of the interior iterations.
  double tolerance = 1e-10;
  /// Adds canonical_weight/2 * x^2 to every variable so degenerate optima
  /// resolve to one reproducible point. The reported objective excludes it.
  bool canonical = false;
  double canonical_weight = 1e-9;
  ExecutionPolicy policy = ExecutionPolicy::kSerial;
};

struct SolveResult {
  SolveStatus status = SolveStatus::kIterationLimit;
  Eigen::VectorXd primal;
  Eigen::VectorXd eq_duals;
  Eigen::VectorXd ineq_duals;
  Eigen::VectorXd lower_duals;
  Eigen::VectorXd upper_duals;
  double objective = 0.0;
  /// Lagrangian evaluated at the returned primal/dual pair.
  double dual_objective = 0.0;
  /// max over stationarity, primal and dual feasibility, complementarity.
  double kkt_residual = kInf;
  int iterations = 0;

  bool optimal() const { return status == SolveStatus::kOptimal; }
};

/// Certification threshold: status kOptimal implies kkt_residual <= this.
inline constexpr double kKktCertifyTolerance = 1e-7;

/// Primal-dual interior point (Mehrotra predictor-corrector) on the program.
/// Deterministic: the iteration schedule depends only on the input.
/// Throws DomainError on dimension mismatches.
SolveResult solve_concave_program(const ConcaveProgram& p,
                                  const SolverOptions& options = {});

/// Same engine restricted to programs without utility terms.
SolveResult solve_linear_program(const ConcaveProgram& p,
                                 const SolverOptions& options = {});

/// Objective of the program at x (without any canonical term).
double program_objective(const ConcaveProgram& p, const Eigen::VectorXd& x);

/// KKT residual of an arbitrary primal/dual pair for the program.
double kkt_residual(const ConcaveProgram& p, const SolveResult& r);

/// Incremental construction of a ConcaveProgram from sparse rows.
class ProgramBuilder {
 public:
  using Row = std::vector<std::pair<Eigen::Index, double>>;

  Eigen::Index add_variable(double lower, double upper, double cost = 0.0,
                            std::optional<QuasiCPEUtility> utility = std::nullopt);
  Eigen::Index add_equality(const Row& row, double rhs);
  Eigen::Index add_inequality(const Row& row, double rhs);

  Eigen::Index num_vars() const { return static_cast<Eigen::Index>(cost_.size()); }
  void set_cost(Eigen::Index j, double c) { cost_[static_cast<std::size_t>(j)] = c; }

  ConcaveProgram build() const;

 private:
  std::vector<double> lower_, upper_, cost_;
  std::vector<std::optional<QuasiCPEUtility>> terms_;
  std::vector<Row> eq_rows_, ineq_rows_;
  std::vector<double> eq_rhs_, ineq_rhs_;
};

}  // namespace p2pgrid

#pragma once

#include <cstddef>
#include <exception>
#include <mutex>

#include <Eigen/Core>

namespace p2pgrid {

/// Selects between the OpenMP path and the serial reference path of a kernel.
/// Both paths produce bit-identical results; the serial path is what tests
/// compare against.
enum class ExecutionPolicy { kSerial, kParallel };

/// Column block width used by assemble_normal_matrix. Fixed so the
/// accumulation order does not depend on the thread count.
inline constexpr Eigen::Index kNormalMatrixBlock = 16;

/// out = G^T diag(weights) G + diag(diagonal).
void assemble_normal_matrix(const Eigen::MatrixXd& g,
                            const Eigen::VectorXd& weights,
                            const Eigen::VectorXd& diagonal,
                            Eigen::MatrixXd& out, ExecutionPolicy policy);

/// Runs fn(i) for i in [0, n). Under kParallel the calls are distributed over
/// OpenMP threads; the first exception thrown by any call is rethrown after
/// the loop.
template <typename Fn>
void for_each_index(std::size_t n, ExecutionPolicy policy, Fn&& fn) {
  if (policy == ExecutionPolicy::kSerial || n < 2) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::exception_ptr error;
  std::mutex error_mutex;
  const auto count = static_cast<long long>(n);
#pragma omp parallel for schedule(dynamic)
  for (long long i = 0; i < count; ++i) {
    try {
      fn(static_cast<std::size_t>(i));
    } catch (...) {
      std::lock_guard<std::mutex> lock(error_mutex);
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
}

/// Number of OpenMP threads available to kParallel (1 without OpenMP).
int available_threads();

}  // namespace p2pgrid

#include "p2pgrid/kernels.hpp"

#include <algorithm>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace p2pgrid {

namespace {

// Fills the upper triangle of columns [j0, j1) and mirrors it.
void normal_matrix_block(const Eigen::MatrixXd& g, const Eigen::MatrixXd& wg,
                         const Eigen::VectorXd& diagonal, Eigen::Index j0,
                         Eigen::Index j1, Eigen::MatrixXd& out) {
  const Eigen::Index rows = g.rows();
  for (Eigen::Index j = j0; j < j1; ++j) {
    const double* wcol = wg.col(j).data();
    for (Eigen::Index i = 0; i <= j; ++i) {
      const double* col = g.col(i).data();
      double sum = 0.0;
      for (Eigen::Index k = 0; k < rows; ++k) sum += col[k] * wcol[k];
      out(i, j) = sum;
      out(j, i) = sum;
    }
    out(j, j) += diagonal(j);
  }
}

}  // namespace

void assemble_normal_matrix(const Eigen::MatrixXd& g,
                            const Eigen::VectorXd& weights,
                            const Eigen::VectorXd& diagonal,
                            Eigen::MatrixXd& out, ExecutionPolicy policy) {
  const Eigen::Index n = g.cols();
  out.resize(n, n);
  const Eigen::MatrixXd wg = weights.asDiagonal() * g;
  const Eigen::Index blocks = (n + kNormalMatrixBlock - 1) / kNormalMatrixBlock;

  if (policy == ExecutionPolicy::kSerial) {
    for (Eigen::Index b = 0; b < blocks; ++b) {
      normal_matrix_block(g, wg, diagonal, b * kNormalMatrixBlock,
                          std::min(n, (b + 1) * kNormalMatrixBlock), out);
    }
    return;
  }
  // Blocks write disjoint entries: column j's upper part and row j's lower part.
#pragma omp parallel for schedule(dynamic)
  for (Eigen::Index b = 0; b < blocks; ++b) {
    normal_matrix_block(g, wg, diagonal, b * kNormalMatrixBlock,
                        std::min(n, (b + 1) * kNormalMatrixBlock), out);
  }
}

int available_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace p2pgrid

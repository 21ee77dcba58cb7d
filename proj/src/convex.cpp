#include "p2pgrid/convex.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <sstream>

#include <Eigen/Cholesky>
#include <Eigen/LU>
#include <Eigen/QR>

#include "p2pgrid/errors.hpp"

namespace p2pgrid {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

bool ConcaveProgram::is_linear() const {
  return std::none_of(utility_terms.begin(), utility_terms.end(),
                      [](const auto& t) { return t.has_value(); });
}

std::string to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::kOptimal: return "optimal";
    case SolveStatus::kInfeasible: return "infeasible";
    case SolveStatus::kIterationLimit: return "iteration-limit";
  }
  return "unknown";
}

namespace {

constexpr double kFixedTolerance = 1e-9;
constexpr double kFeasTolerance = 1e-9;
constexpr double kPhaseOneTolerance = 1e-7;
constexpr double kDivergence = 1e13;
constexpr double kStepFraction = 0.995;
constexpr double kCenterFloor = 0.01;
// Relative residual above which the normal equations are abandoned.
constexpr double kSolveAccuracy = 1e-9;

void check_dimensions(const ConcaveProgram& p) {
  const Index n = p.num_vars();
  auto fail = [](const std::string& what) {
    throw DomainError("concave program: " + what);
  };
  if (p.lower.size() != n || p.upper.size() != n) fail("bound vectors do not match cost");
  if (!p.utility_terms.empty() && static_cast<Index>(p.utility_terms.size()) != n)
    fail("utility term count does not match cost");
  if (p.eq_matrix.rows() != p.eq_rhs.size()) fail("equality rows do not match rhs");
  if (p.ineq_matrix.rows() != p.ineq_rhs.size()) fail("inequality rows do not match rhs");
  if (p.eq_matrix.rows() > 0 && p.eq_matrix.cols() != n) fail("equality columns");
  if (p.ineq_matrix.rows() > 0 && p.ineq_matrix.cols() != n) fail("inequality columns");
  for (Index j = 0; j < n; ++j) {
    if (std::isnan(p.lower(j)) || std::isnan(p.upper(j)) || !std::isfinite(p.cost(j)))
      fail("non-finite data in variable " + std::to_string(j));
    if (!p.utility_terms.empty() && p.utility_terms[static_cast<std::size_t>(j)]) {
      const auto& u = *p.utility_terms[static_cast<std::size_t>(j)];
      if (!(p.lower(j) > -u.delta_shift))
        fail("utility variable " + std::to_string(j) +
             " needs a lower bound above -delta_shift");
    }
  }
}

const QuasiCPEUtility* term_of(const ConcaveProgram& p, Index j) {
  if (p.utility_terms.empty()) return nullptr;
  const auto& t = p.utility_terms[static_cast<std::size_t>(j)];
  return t ? &*t : nullptr;
}

// Problem after fixed variables, redundant equalities and empty inequality
// rows are removed.
struct Reduced {
  std::vector<Index> free_vars;
  VectorXd full_x;  // values of fixed variables, in original indexing
  std::vector<Index> eq_rows;
  std::vector<Index> ineq_rows;
  MatrixXd a, g;
  VectorXd b, h, c, l, u;
  std::vector<const QuasiCPEUtility*> terms;
  bool infeasible = false;
};

Reduced presolve(const ConcaveProgram& p) {
  Reduced r;
  const Index n = p.num_vars();
  r.full_x = VectorXd::Zero(n);
  for (Index j = 0; j < n; ++j) {
    if (p.lower(j) > p.upper(j)) {
      r.infeasible = true;
      return r;
    }
    const double span = p.upper(j) - p.lower(j);
    if (std::isfinite(span) && span <= kFixedTolerance * (1.0 + std::abs(p.lower(j)))) {
      r.full_x(j) = 0.5 * (p.lower(j) + p.upper(j));
    } else {
      r.free_vars.push_back(j);
    }
  }
  const Index nf = static_cast<Index>(r.free_vars.size());

  auto restrict = [&](const MatrixXd& m, const VectorXd& rhs, MatrixXd& out,
                      VectorXd& out_rhs) {
    out.resize(m.rows(), nf);
    for (Index k = 0; k < nf; ++k) out.col(k) = m.col(r.free_vars[static_cast<std::size_t>(k)]);
    out_rhs = rhs;
    if (m.rows() > 0) out_rhs -= m * r.full_x;
  };

  MatrixXd a_all, g_all;
  VectorXd b_all, h_all;
  restrict(p.eq_matrix, p.eq_rhs, a_all, b_all);
  restrict(p.ineq_matrix, p.ineq_rhs, g_all, h_all);

  // Equalities: keep an independent subset, reject inconsistent systems.
  if (a_all.rows() > 0) {
    const double scale = 1.0 + (b_all.size() ? b_all.cwiseAbs().maxCoeff() : 0.0);
    if (nf == 0) {
      if (b_all.cwiseAbs().maxCoeff() > kFeasTolerance * scale) r.infeasible = true;
    } else {
      Eigen::ColPivHouseholderQR<MatrixXd> qr(a_all.transpose());
      qr.setThreshold(1e-11);
      const Index rank = qr.rank();
      std::vector<Index> keep;
      for (Index k = 0; k < rank; ++k) keep.push_back(qr.colsPermutation().indices()(k));
      std::sort(keep.begin(), keep.end());
      MatrixXd a_keep(static_cast<Index>(keep.size()), nf);
      VectorXd b_keep(static_cast<Index>(keep.size()));
      for (std::size_t k = 0; k < keep.size(); ++k) {
        a_keep.row(static_cast<Index>(k)) = a_all.row(keep[k]);
        b_keep(static_cast<Index>(k)) = b_all(keep[k]);
      }
      // Consistency of the dropped rows via the minimum-norm solution.
      if (rank < a_all.rows()) {
        VectorXd x_ls = VectorXd::Zero(nf);
        if (rank > 0) {
          Eigen::CompleteOrthogonalDecomposition<MatrixXd> cod(a_keep);
          x_ls = cod.solve(b_keep);
        }
        if ((a_all * x_ls - b_all).cwiseAbs().maxCoeff() > kFeasTolerance * scale)
          r.infeasible = true;
      }
      r.eq_rows = keep;
      r.a = std::move(a_keep);
      r.b = std::move(b_keep);
    }
  }
  if (r.a.rows() == 0) {
    r.a.resize(0, nf);
    r.b.resize(0);
  }

  // Inequalities: drop rows with no free coefficients.
  std::vector<Index> keep;
  for (Index i = 0; i < g_all.rows(); ++i) {
    if (nf > 0 && g_all.row(i).cwiseAbs().maxCoeff() > 0.0) {
      keep.push_back(i);
    } else if (h_all(i) < -kFeasTolerance * (1.0 + std::abs(h_all(i)))) {
      r.infeasible = true;
    }
  }
  r.ineq_rows = keep;
  r.g.resize(static_cast<Index>(keep.size()), nf);
  r.h.resize(static_cast<Index>(keep.size()));
  for (std::size_t k = 0; k < keep.size(); ++k) {
    r.g.row(static_cast<Index>(k)) = g_all.row(keep[k]);
    r.h(static_cast<Index>(k)) = h_all(keep[k]);
  }

  r.c.resize(nf);
  r.l.resize(nf);
  r.u.resize(nf);
  r.terms.resize(static_cast<std::size_t>(nf));
  for (Index k = 0; k < nf; ++k) {
    const Index j = r.free_vars[static_cast<std::size_t>(k)];
    r.c(k) = p.cost(j);
    r.l(k) = p.lower(j);
    r.u(k) = p.upper(j);
    r.terms[static_cast<std::size_t>(k)] = term_of(p, j);
  }
  return r;
}

struct Iterate {
  VectorXd x, y, z, s, zl, zu;
};

struct CoreResult {
  Iterate it;
  int iterations = 0;
  bool converged = false;
};

class InteriorPoint {
 public:
  InteriorPoint(const Reduced& r, const SolverOptions& opt) : r_(r), opt_(opt) {
    n_ = r.c.size();
    me_ = r.a.rows();
    mi_ = r.g.rows();
    has_l_.resize(static_cast<std::size_t>(n_));
    has_u_.resize(static_cast<std::size_t>(n_));
    for (Index j = 0; j < n_; ++j) {
      has_l_[static_cast<std::size_t>(j)] = std::isfinite(r.l(j));
      has_u_[static_cast<std::size_t>(j)] = std::isfinite(r.u(j));
      if (r.terms[static_cast<std::size_t>(j)]) nonlinear_ = true;
    }
  }

  CoreResult run() {
    Iterate w = initial_point();
    CoreResult out;
    Iterate best_point = w;
    double best = kInf;
    double progress = kInf;
    int since_progress = 0;
    for (int iter = 0; iter < opt_.max_iterations; ++iter) {
      out.iterations = iter;
      evaluate(w);
      const double res = std::max({inf_norm(rd_), inf_norm(re_), inf_norm(ri_)});
      res_ = res;
      const double comp = max_complementarity(w);
      const double merit = std::max(res, comp);
      if (!std::isfinite(merit)) break;
      if (merit < best) {
        best = merit;
        best_point = w;
      }
      if (res <= opt_.tolerance && comp <= opt_.tolerance) {
        out.converged = true;
        break;
      }
      if (merit < 0.5 * progress) {
        progress = merit;
        since_progress = 0;
      } else if (++since_progress > 80) {
        break;
      }
      if (dual_norm(w) > kDivergence || inf_norm(w.x) > kDivergence) break;
      if (std::getenv("P2P_IPM_TRACE")) std::fprintf(stderr, "it %d res %g comp %g mu %g step %g%s\n", iter, res, comp, mu_, last_step_, augmented_ ? " aug" : "");
      if (!factor(w)) break;
      step(w);
    }
    out.it = out.converged ? std::move(w) : std::move(best_point);
    return out;
  }

 private:
  static double inf_norm(const VectorXd& v) {
    return v.size() ? v.cwiseAbs().maxCoeff() : 0.0;
  }

  double dual_norm(const Iterate& w) const {
    return std::max({inf_norm(w.y), inf_norm(w.z), inf_norm(w.zl), inf_norm(w.zu)});
  }

  bool hl(Index j) const { return has_l_[static_cast<std::size_t>(j)]; }
  bool hu(Index j) const { return has_u_[static_cast<std::size_t>(j)]; }

  Iterate initial_point() const {
    Iterate w;
    w.x.resize(n_);
    for (Index j = 0; j < n_; ++j) {
      if (hl(j) && hu(j)) {
        w.x(j) = 0.5 * (r_.l(j) + r_.u(j));
      } else if (hl(j)) {
        w.x(j) = r_.l(j) + 1.0;
      } else if (hu(j)) {
        w.x(j) = r_.u(j) - 1.0;
      } else {
        w.x(j) = 0.0;
      }
    }
    w.y = VectorXd::Zero(me_);
    w.s = VectorXd::Ones(mi_);
    if (mi_ > 0) {
      const VectorXd slack = r_.h - r_.g * w.x;
      for (Index i = 0; i < mi_; ++i) w.s(i) = std::max(slack(i), 1.0);
    }
    w.z = VectorXd::Ones(mi_);
    w.zl = VectorXd::Zero(n_);
    w.zu = VectorXd::Zero(n_);
    for (Index j = 0; j < n_; ++j) {
      if (hl(j)) w.zl(j) = 1.0;
      if (hu(j)) w.zu(j) = 1.0;
    }
    return w;
  }

  void derivatives(const VectorXd& x) {
    grad_.resize(n_);
    hess_.resize(n_);
    for (Index j = 0; j < n_; ++j) {
      double gj = 0.0, hj = 0.0;
      if (const auto* u = r_.terms[static_cast<std::size_t>(j)]) {
        gj = -detail::marginal_utility_ext(*u, x(j));
        hj = -detail::marginal_utility_slope_ext(*u, x(j));
      }
      if (opt_.canonical) {
        gj += opt_.canonical_weight * x(j);
        hj += opt_.canonical_weight;
      }
      grad_(j) = gj;
      hess_(j) = hj;
    }
  }

  void evaluate(const Iterate& w) {
    derivatives(w.x);
    rd_ = grad_ + r_.c - w.zl + w.zu;
    if (me_ > 0) rd_.noalias() += r_.a.transpose() * w.y;
    if (mi_ > 0) rd_.noalias() += r_.g.transpose() * w.z;
    re_ = me_ > 0 ? VectorXd(r_.a * w.x - r_.b) : VectorXd(0);
    ri_ = mi_ > 0 ? VectorXd(r_.g * w.x + w.s - r_.h) : VectorXd(0);
    xl_ = VectorXd::Ones(n_);
    xu_ = VectorXd::Ones(n_);
    for (Index j = 0; j < n_; ++j) {
      if (hl(j)) xl_(j) = w.x(j) - r_.l(j);
      if (hu(j)) xu_(j) = r_.u(j) - w.x(j);
    }
    double sum = 0.0;
    int count = 0;
    for (Index i = 0; i < mi_; ++i, ++count) sum += w.s(i) * w.z(i);
    for (Index j = 0; j < n_; ++j) {
      if (hl(j)) { sum += xl_(j) * w.zl(j); ++count; }
      if (hu(j)) { sum += xu_(j) * w.zu(j); ++count; }
    }
    pairs_ = count;
    mu_ = count > 0 ? sum / count : 0.0;
  }

  double max_complementarity(const Iterate& w) const {
    double m = 0.0;
    for (Index i = 0; i < mi_; ++i) m = std::max(m, w.s(i) * w.z(i));
    for (Index j = 0; j < n_; ++j) {
      if (hl(j)) m = std::max(m, xl_(j) * w.zl(j));
      if (hu(j)) m = std::max(m, xu_(j) * w.zu(j));
    }
    return m;
  }

  bool factor(const Iterate& w) {
    diag_ = hess_;
    for (Index j = 0; j < n_; ++j) {
      if (hl(j)) diag_(j) += w.zl(j) / xl_(j);
      if (hu(j)) diag_(j) += w.zu(j) / xu_(j);
    }
    dinv_ = mi_ > 0 ? VectorXd(w.s.cwiseQuotient(w.z)) : VectorXd(0);
    if (augmented_) return factor_augmented();
    if (mi_ > 0) {
      const VectorXd weights = w.z.cwiseQuotient(w.s);
      assemble_normal_matrix(r_.g, weights, diag_, m_, opt_.policy);
    } else {
      m_ = diag_.asDiagonal();
    }
    double reg = 0.0;
    const double scale = 1.0 + (n_ ? m_.diagonal().cwiseAbs().maxCoeff() : 0.0);
    for (int attempt = 0; attempt < 12; ++attempt) {
      if (reg > 0.0) m_.diagonal().array() += reg;
      llt_m_.compute(m_);
      if (llt_m_.info() == Eigen::Success) break;
      if (reg > 0.0) m_.diagonal().array() -= reg;
      reg = reg == 0.0 ? 1e-14 * scale : reg * 100.0;
      if (attempt == 11) return factor_augmented();
    }
    if (me_ > 0) {
      minv_at_ = llt_m_.solve(r_.a.transpose());
      MatrixXd k = r_.a * minv_at_;
      const double kscale = 1.0 + k.diagonal().cwiseAbs().maxCoeff();
      double kreg = 0.0;
      for (int attempt = 0; attempt < 12; ++attempt) {
        if (kreg > 0.0) k.diagonal().array() += kreg;
        llt_k_.compute(k);
        if (llt_k_.info() == Eigen::Success) return true;
        if (kreg > 0.0) k.diagonal().array() -= kreg;
        kreg = kreg == 0.0 ? 1e-14 * kscale : kreg * 100.0;
      }
      return factor_augmented();
    }
    return true;
  }

  // Dense LU of [D_x G' A'; G -D_s 0; A 0 0]. Slower than the normal
  // equations but keeps its accuracy when the barrier scalings span many
  // orders of magnitude.
  bool factor_augmented() {
    augmented_ = true;
    const Index dim = n_ + mi_ + me_;
    MatrixXd k = MatrixXd::Zero(dim, dim);
    k.topLeftCorner(n_, n_).diagonal() = diag_;
    if (mi_ > 0) {
      k.block(n_, 0, mi_, n_) = r_.g;
      k.block(0, n_, n_, mi_) = r_.g.transpose();
      k.block(n_, n_, mi_, mi_).diagonal() = -dinv_;
    }
    if (me_ > 0) {
      k.block(n_ + mi_, 0, me_, n_) = r_.a;
      k.block(0, n_ + mi_, n_, me_) = r_.a.transpose();
    }
    lu_.compute(k);
    return std::isfinite(lu_.rcond());
  }

  struct Direction {
    VectorXd dx, dy, dz, ds, dzl, dzu;
  };

  // Residual of the augmented system at (dx, dz, dy).
  double augmented_error(const VectorXd& bx, const VectorXd& bz, const VectorXd& by,
                         const Direction& d, VectorXd& ex, VectorXd& ez, VectorXd& ey) const {
    ex = bx - diag_.cwiseProduct(d.dx);
    ez = bz;
    ey = by;
    if (mi_ > 0) {
      ex.noalias() -= r_.g.transpose() * d.dz;
      ez.noalias() -= r_.g * d.dx;
      ez += dinv_.cwiseProduct(d.dz);
    }
    if (me_ > 0) {
      ex.noalias() -= r_.a.transpose() * d.dy;
      ey.noalias() -= r_.a * d.dx;
    }
    return std::max({inf_norm(ex), inf_norm(ez), inf_norm(ey)});
  }

  void solve_augmented(const VectorXd& bx, const VectorXd& bz, const VectorXd& by,
                       Direction& d) const {
    VectorXd b(n_ + mi_ + me_);
    b << bx, bz, by;
    const VectorXd sol = lu_.solve(b);
    d.dx = sol.head(n_);
    d.dz = sol.segment(n_, mi_);
    d.dy = sol.tail(me_);
  }

  // Solves the Newton system for complementarity targets rs (s∘z), rl, ru.
  Direction solve(const Iterate& w, const VectorXd& rs, const VectorXd& rl,
                  const VectorXd& ru) {
    VectorXd bx = -rd_;
    for (Index j = 0; j < n_; ++j) {
      if (hl(j)) bx(j) -= rl(j) / xl_(j);
      if (hu(j)) bx(j) += ru(j) / xu_(j);
    }
    const VectorXd bz = mi_ > 0 ? VectorXd(-ri_ + rs.cwiseQuotient(w.z)) : VectorXd(0);
    const VectorXd by = -re_;
    const double scale =
        1.0 + std::max({inf_norm(bx), inf_norm(bz), inf_norm(by)});

    Direction d;
    VectorXd ex, ez, ey;
    if (!augmented_) {
      VectorXd rhs = bx;
      if (mi_ > 0) rhs.noalias() += r_.g.transpose() * bz.cwiseQuotient(dinv_);
      solve_reduced(rhs, by, d.dx, d.dy);
      d.dz = mi_ > 0 ? VectorXd((r_.g * d.dx - bz).cwiseQuotient(dinv_)) : VectorXd(0);
      const double err = augmented_error(bx, bz, by, d, ex, ez, ey);
      if (!(err <= kSolveAccuracy * scale)) {
        factor_augmented();
      }
    }
    if (augmented_) {
      solve_augmented(bx, bz, by, d);
      for (int pass = 0; pass < 2; ++pass) {
        if (augmented_error(bx, bz, by, d, ex, ez, ey) <= 1e-15 * scale) break;
        Direction c;
        solve_augmented(ex, ez, ey, c);
        d.dx += c.dx;
        d.dz += c.dz;
        d.dy += c.dy;
      }
    }
    d.ds = mi_ > 0 ? VectorXd(-ri_ - r_.g * d.dx) : VectorXd(0);
    d.dzl = VectorXd::Zero(n_);
    d.dzu = VectorXd::Zero(n_);
    for (Index j = 0; j < n_; ++j) {
      if (hl(j)) d.dzl(j) = (-rl(j) - w.zl(j) * d.dx(j)) / xl_(j);
      if (hu(j)) d.dzu(j) = (-ru(j) + w.zu(j) * d.dx(j)) / xu_(j);
    }
    return d;
  }

  // [M A'; A 0] [dx; dy] = [r1; r2] with the factored M and Schur complement.
  void solve_reduced(const VectorXd& r1, const VectorXd& r2, VectorXd& dx, VectorXd& dy) const {
    if (me_ > 0) {
      const VectorXd minv_r1 = llt_m_.solve(r1);
      dy = llt_k_.solve(r_.a * minv_r1 - r2);
      dx = minv_r1 - minv_at_ * dy;
    } else {
      dy = VectorXd(0);
      dx = llt_m_.solve(r1);
    }
  }

  // Largest step in [0, 1] keeping all slacks and duals nonnegative.
  double max_step(const Iterate& w, const Direction& d) const {
    double a = 1.0;
    auto limit = [&a](double v, double dv) {
      if (dv < 0.0) a = std::min(a, -v / dv);
    };
    for (Index i = 0; i < mi_; ++i) {
      limit(w.s(i), d.ds(i));
      limit(w.z(i), d.dz(i));
    }
    for (Index j = 0; j < n_; ++j) {
      if (hl(j)) {
        limit(xl_(j), d.dx(j));
        limit(w.zl(j), d.dzl(j));
      }
      if (hu(j)) {
        limit(xu_(j), -d.dx(j));
        limit(w.zu(j), d.dzu(j));
      }
    }
    return a;
  }

  double complementarity_after(const Iterate& w, const Direction& d, double a) const {
    double sum = 0.0;
    for (Index i = 0; i < mi_; ++i) sum += (w.s(i) + a * d.ds(i)) * (w.z(i) + a * d.dz(i));
    for (Index j = 0; j < n_; ++j) {
      if (hl(j)) sum += (xl_(j) + a * d.dx(j)) * (w.zl(j) + a * d.dzl(j));
      if (hu(j)) sum += (xu_(j) - a * d.dx(j)) * (w.zu(j) + a * d.dzu(j));
    }
    return pairs_ > 0 ? sum / pairs_ : 0.0;
  }

  // Barrier objective with an l1 penalty on the linear residuals.
  double barrier_merit(const Iterate& w, double tau) const {
    double f = r_.c.dot(w.x);
    for (Index j = 0; j < n_; ++j) {
      if (const auto* u = r_.terms[static_cast<std::size_t>(j)])
        f -= detail::utility_value_ext(*u, w.x(j));
      if (opt_.canonical) f += 0.5 * opt_.canonical_weight * w.x(j) * w.x(j);
      if (hl(j)) {
        if (!(w.x(j) > r_.l(j))) return kInf;
        f -= tau * std::log(w.x(j) - r_.l(j));
      }
      if (hu(j)) {
        if (!(w.x(j) < r_.u(j))) return kInf;
        f -= tau * std::log(r_.u(j) - w.x(j));
      }
    }
    for (Index i = 0; i < mi_; ++i) {
      if (!(w.s(i) > 0.0)) return kInf;
      f -= tau * std::log(w.s(i));
    }
    if (me_ > 0) f += nu_ * (r_.a * w.x - r_.b).lpNorm<1>();
    if (mi_ > 0) f += nu_ * (r_.g * w.x + w.s - r_.h).lpNorm<1>();
    return f;
  }

  // Armijo backtracking on the barrier merit.
  double backtrack(const Iterate& w, const Direction& d, double a, double tau) {
    const double dual_max = std::max(inf_norm(w.y + d.dy), inf_norm(w.z + d.dz));
    nu_ = std::max(nu_, 2.0 * dual_max + 1.0);
    double slope = (grad_ + r_.c).dot(d.dx);
    for (Index j = 0; j < n_; ++j) {
      if (hl(j)) slope -= tau * d.dx(j) / xl_(j);
      if (hu(j)) slope += tau * d.dx(j) / xu_(j);
    }
    for (Index i = 0; i < mi_; ++i) slope -= tau * d.ds(i) / w.s(i);
    slope -= nu_ * (re_.lpNorm<1>() + ri_.lpNorm<1>());
    if (!(slope < 0.0)) return a;
    const double m0 = barrier_merit(w, tau);
    Iterate trial;
    for (int k = 0; k < 40; ++k) {
      trial.x = w.x + a * d.dx;
      trial.s = w.s + a * d.ds;
      const double m1 = barrier_merit(trial, tau);
      if (m1 <= m0 + 1e-4 * a * slope) return a;
      a *= 0.5;
    }
    return a;
  }

  void step(Iterate& w) {
    VectorXd rs = w.s.cwiseProduct(w.z);
    VectorXd rl = VectorXd::Zero(n_), ru = VectorXd::Zero(n_);
    for (Index j = 0; j < n_; ++j) {
      if (hl(j)) rl(j) = xl_(j) * w.zl(j);
      if (hu(j)) ru(j) = xu_(j) * w.zu(j);
    }
    const Direction aff = solve(w, rs, rl, ru);
    Direction d;
    double tau = 0.0;
    if (pairs_ > 0) {
      const double a_aff = max_step(w, aff);
      const double mu_aff = complementarity_after(w, aff, a_aff);
      const double ratio = mu_ > 0.0 ? mu_aff / mu_ : 0.0;
      const double sigma = std::clamp(ratio * ratio * ratio, 0.0, 1.0);
      // Centering never outpaces the residuals, otherwise complementarity can
      // collapse while the equations are still unsatisfied.
      const double target = std::max(sigma * mu_, std::min(mu_, kCenterFloor * res_));
      tau = target;
      // The second-order term is skipped for nonlinear programs so that the
      // direction is a descent direction for the barrier merit.
      const double cross = nonlinear_ ? 0.0 : 1.0;
      for (Index i = 0; i < mi_; ++i) rs(i) += cross * aff.ds(i) * aff.dz(i) - target;
      for (Index j = 0; j < n_; ++j) {
        if (hl(j)) rl(j) += cross * aff.dx(j) * aff.dzl(j) - target;
        if (hu(j)) ru(j) += -cross * aff.dx(j) * aff.dzu(j) - target;
      }
      d = solve(w, rs, rl, ru);
    } else {
      d = aff;
    }
    const double a_max = max_step(w, d);
    double a = std::min(1.0, kStepFraction * a_max);
    if (nonlinear_) a = backtrack(w, d, a, tau);
    last_step_ = a;
    w.x += a * d.dx;
    w.y += a * d.dy;
    w.z += a * d.dz;
    w.s += a * d.ds;
    w.zl += a * d.dzl;
    w.zu += a * d.dzu;
    // Keep strictly interior against round-off.
    for (Index j = 0; j < n_; ++j) {
      if (hl(j) && w.x(j) <= r_.l(j)) w.x(j) = std::nextafter(r_.l(j), kInf);
      if (hu(j) && w.x(j) >= r_.u(j)) w.x(j) = std::nextafter(r_.u(j), -kInf);
    }
  }

  const Reduced& r_;
  const SolverOptions& opt_;
  Index n_ = 0, me_ = 0, mi_ = 0;
  std::vector<bool> has_l_, has_u_;
  VectorXd grad_, hess_, rd_, re_, ri_, xl_, xu_;
  double mu_ = 0.0;
  double last_step_ = 0.0;
  double res_ = 0.0;
  double nu_ = 0.0;
  bool nonlinear_ = false;
  int pairs_ = 0;
  VectorXd diag_, dinv_;
  bool augmented_ = false;
  MatrixXd m_, minv_at_;
  Eigen::LLT<MatrixXd> llt_m_, llt_k_;
  Eigen::PartialPivLU<MatrixXd> lu_;
};

// Expands a reduced iterate to the original indexing and fills the duals of
// fixed variables from stationarity.
SolveResult expand(const ConcaveProgram& p, const Reduced& r, const Iterate& w) {
  const Index n = p.num_vars();
  SolveResult out;
  out.primal = r.full_x;
  out.lower_duals = VectorXd::Zero(n);
  out.upper_duals = VectorXd::Zero(n);
  for (std::size_t k = 0; k < r.free_vars.size(); ++k) {
    const Index j = r.free_vars[k];
    out.primal(j) = w.x(static_cast<Index>(k));
    out.lower_duals(j) = w.zl(static_cast<Index>(k));
    out.upper_duals(j) = w.zu(static_cast<Index>(k));
  }
  out.eq_duals = VectorXd::Zero(p.eq_rhs.size());
  for (std::size_t k = 0; k < r.eq_rows.size(); ++k)
    out.eq_duals(r.eq_rows[k]) = w.y(static_cast<Index>(k));
  out.ineq_duals = VectorXd::Zero(p.ineq_rhs.size());
  for (std::size_t k = 0; k < r.ineq_rows.size(); ++k)
    out.ineq_duals(r.ineq_rows[k]) = w.z(static_cast<Index>(k));

  if (static_cast<Index>(r.free_vars.size()) < n) {
    VectorXd station = p.cost;
    for (Index j = 0; j < n; ++j)
      if (const auto* u = term_of(p, j))
        station(j) -= detail::marginal_utility_ext(*u, out.primal(j));
    if (p.eq_rhs.size()) station.noalias() += p.eq_matrix.transpose() * out.eq_duals;
    if (p.ineq_rhs.size()) station.noalias() += p.ineq_matrix.transpose() * out.ineq_duals;
    std::vector<bool> is_free(static_cast<std::size_t>(n), false);
    for (Index j : r.free_vars) is_free[static_cast<std::size_t>(j)] = true;
    for (Index j = 0; j < n; ++j) {
      if (is_free[static_cast<std::size_t>(j)]) continue;
      if (station(j) > 0.0) {
        out.lower_duals(j) = station(j);
      } else {
        out.upper_duals(j) = -station(j);
      }
    }
  }
  return out;
}

ConcaveProgram phase_one(const ConcaveProgram& p) {
  const Index n = p.num_vars();
  ProgramBuilder b;
  for (Index j = 0; j < n; ++j) b.add_variable(-kInf, kInf);
  const Index t = b.add_variable(0.0, kInf, 1.0);
  for (Index i = 0; i < p.eq_matrix.rows(); ++i) {
    ProgramBuilder::Row row;
    for (Index j = 0; j < n; ++j)
      if (p.eq_matrix(i, j) != 0.0) row.emplace_back(j, p.eq_matrix(i, j));
    b.add_equality(row, p.eq_rhs(i));
  }
  for (Index i = 0; i < p.ineq_matrix.rows(); ++i) {
    ProgramBuilder::Row row{{t, -1.0}};
    for (Index j = 0; j < n; ++j)
      if (p.ineq_matrix(i, j) != 0.0) row.emplace_back(j, p.ineq_matrix(i, j));
    b.add_inequality(row, p.ineq_rhs(i));
  }
  for (Index j = 0; j < n; ++j) {
    if (std::isfinite(p.upper(j))) b.add_inequality({{j, 1.0}, {t, -1.0}}, p.upper(j));
    if (std::isfinite(p.lower(j))) b.add_inequality({{j, -1.0}, {t, -1.0}}, -p.lower(j));
  }
  return b.build();
}

SolveResult solve_impl(const ConcaveProgram& p, const SolverOptions& options,
                       bool allow_phase_one) {
  check_dimensions(p);
  const Reduced reduced = presolve(p);
  if (reduced.infeasible) {
    SolveResult out;
    out.status = SolveStatus::kInfeasible;
    out.primal = reduced.full_x;
    out.eq_duals = VectorXd::Zero(p.eq_rhs.size());
    out.ineq_duals = VectorXd::Zero(p.ineq_rhs.size());
    out.lower_duals = VectorXd::Zero(p.num_vars());
    out.upper_duals = VectorXd::Zero(p.num_vars());
    out.objective = kInf;
    out.dual_objective = -kInf;
    return out;
  }
  InteriorPoint ipm(reduced, options);
  const CoreResult core = ipm.run();
  SolveResult out = expand(p, reduced, core.it);
  out.iterations = core.iterations;
  out.objective = program_objective(p, out.primal);
  out.kkt_residual = kkt_residual(p, out);

  // Lagrangian at the returned pair.
  double lag = out.objective;
  if (p.eq_rhs.size()) lag += out.eq_duals.dot(p.eq_matrix * out.primal - p.eq_rhs);
  if (p.ineq_rhs.size()) lag += out.ineq_duals.dot(p.ineq_matrix * out.primal - p.ineq_rhs);
  for (Index j = 0; j < p.num_vars(); ++j) {
    if (std::isfinite(p.lower(j))) lag += out.lower_duals(j) * (p.lower(j) - out.primal(j));
    if (std::isfinite(p.upper(j))) lag += out.upper_duals(j) * (out.primal(j) - p.upper(j));
  }
  out.dual_objective = lag;

  if (out.kkt_residual <= kKktCertifyTolerance) {
    out.status = SolveStatus::kOptimal;
    return out;
  }
  out.status = SolveStatus::kIterationLimit;
  if (allow_phase_one) {
    SolverOptions phase = options;
    phase.canonical = false;
    const SolveResult feas = solve_impl(phase_one(p), phase, false);
    if (feas.optimal() && feas.primal(feas.primal.size() - 1) > kPhaseOneTolerance)
      out.status = SolveStatus::kInfeasible;
  }
  return out;
}

}  // namespace

double program_objective(const ConcaveProgram& p, const VectorXd& x) {
  double f = p.cost.dot(x);
  for (Index j = 0; j < p.num_vars(); ++j)
    if (const auto* u = term_of(p, j)) f -= detail::utility_value_ext(*u, x(j));
  return f;
}

double kkt_residual(const ConcaveProgram& p, const SolveResult& r) {
  const Index n = p.num_vars();
  const VectorXd& x = r.primal;
  VectorXd station = p.cost - r.lower_duals + r.upper_duals;
  for (Index j = 0; j < n; ++j)
    if (const auto* u = term_of(p, j))
      station(j) -= detail::marginal_utility_ext(*u, x(j));
  if (p.eq_rhs.size()) station.noalias() += p.eq_matrix.transpose() * r.eq_duals;
  if (p.ineq_rhs.size()) station.noalias() += p.ineq_matrix.transpose() * r.ineq_duals;
  double res = n ? station.cwiseAbs().maxCoeff() : 0.0;

  if (p.eq_rhs.size())
    res = std::max(res, (p.eq_matrix * x - p.eq_rhs).cwiseAbs().maxCoeff());
  if (p.ineq_rhs.size()) {
    const VectorXd slack = p.ineq_rhs - p.ineq_matrix * x;
    for (Index i = 0; i < slack.size(); ++i) {
      res = std::max(res, -slack(i));
      res = std::max(res, -r.ineq_duals(i));
      res = std::max(res, std::abs(r.ineq_duals(i) * slack(i)));
    }
  }
  for (Index j = 0; j < n; ++j) {
    res = std::max({res, -r.lower_duals(j), -r.upper_duals(j)});
    if (std::isfinite(p.lower(j))) {
      res = std::max(res, p.lower(j) - x(j));
      res = std::max(res, std::abs(r.lower_duals(j) * (x(j) - p.lower(j))));
    } else {
      res = std::max(res, std::abs(r.lower_duals(j)));
    }
    if (std::isfinite(p.upper(j))) {
      res = std::max(res, x(j) - p.upper(j));
      res = std::max(res, std::abs(r.upper_duals(j) * (p.upper(j) - x(j))));
    } else {
      res = std::max(res, std::abs(r.upper_duals(j)));
    }
  }
  return res;
}

SolveResult solve_concave_program(const ConcaveProgram& p, const SolverOptions& options) {
  return solve_impl(p, options, true);
}

SolveResult solve_linear_program(const ConcaveProgram& p, const SolverOptions& options) {
  if (!p.is_linear()) throw DomainError("solve_linear_program: program has utility terms");
  return solve_impl(p, options, true);
}

Index ProgramBuilder::add_variable(double lower, double upper, double cost,
                                   std::optional<QuasiCPEUtility> utility) {
  lower_.push_back(lower);
  upper_.push_back(upper);
  cost_.push_back(cost);
  terms_.push_back(std::move(utility));
  return static_cast<Index>(cost_.size()) - 1;
}

Index ProgramBuilder::add_equality(const Row& row, double rhs) {
  eq_rows_.push_back(row);
  eq_rhs_.push_back(rhs);
  return static_cast<Index>(eq_rows_.size()) - 1;
}

Index ProgramBuilder::add_inequality(const Row& row, double rhs) {
  ineq_rows_.push_back(row);
  ineq_rhs_.push_back(rhs);
  return static_cast<Index>(ineq_rows_.size()) - 1;
}

ConcaveProgram ProgramBuilder::build() const {
  const Index n = num_vars();
  ConcaveProgram p;
  p.cost = Eigen::Map<const VectorXd>(cost_.data(), n);
  p.lower = Eigen::Map<const VectorXd>(lower_.data(), n);
  p.upper = Eigen::Map<const VectorXd>(upper_.data(), n);
  if (std::any_of(terms_.begin(), terms_.end(), [](const auto& t) { return t.has_value(); }))
    p.utility_terms = terms_;
  auto fill = [n](const std::vector<Row>& rows, const std::vector<double>& rhs,
                  MatrixXd& m, VectorXd& v) {
    m = MatrixXd::Zero(static_cast<Index>(rows.size()), n);
    v = VectorXd::Zero(static_cast<Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      for (const auto& [j, coef] : rows[i]) {
        if (j < 0 || j >= n) throw DomainError("program builder: column out of range");
        m(static_cast<Index>(i), j) += coef;
      }
      v(static_cast<Index>(i)) = rhs[i];
    }
  };
  fill(eq_rows_, eq_rhs_, p.eq_matrix, p.eq_rhs);
  fill(ineq_rows_, ineq_rhs_, p.ineq_matrix, p.ineq_rhs);
  return p;
}

}  // namespace p2pgrid

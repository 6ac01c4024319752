// Generic first-order solver for linear objectives over an affine subspace
// intersected with the nonnegative orthant and one PSD block.
//
// Standard form:  minimize c'x  subject to  Ax = b,  x in K,
// with x = [free | nonneg | svec(PSD block)] and K the matching cone product.
// The PSD block uses the scaled symmetric vectorization of types.hpp, so the
// Euclidean inner product of coordinate vectors equals the trace inner
// product of the matrices they represent.
#pragma once

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <iosfwd>
#include <vector>

#include "sce/types.hpp"

namespace sce::conic {

struct ConeSpec {
  Index n_free = 0;
  Index n_nonneg = 0;
  Index psd_side = 0;  // side length of the PSD block, 0 if absent

  Index n_psd() const { return svec_size(psd_side); }
  Index psd_offset() const { return n_free + n_nonneg; }
  Index n_total() const { return n_free + n_nonneg + n_psd(); }
};

struct ConicProblem {
  VecX c;
  Eigen::SparseMatrix<Real> A;  // one row per equality constraint
  VecX b;
  ConeSpec cones;

  void validate() const;
};

enum class SolveStatus { converged, max_iterations, infeasible_detected };

struct ConicSolution {
  VecX x;  // primal point, in K up to projection roundoff
  VecX y;  // equality multipliers
  VecX s;  // dual slack c - A'y
  SolveStatus status = SolveStatus::max_iterations;
  long iterations = 0;
  Real primal_residual = 0;
  Real dual_residual = 0;
  Real gap = 0;
  Real primal_objective = 0;
  Real dual_objective = 0;
};

struct SolverConfig {
  Real tolerance = 1e-7;
  long max_iterations = 200000;
  Real penalty = 1.0;             // initial ADMM penalty rho
  bool adaptive_penalty = true;   // rebalance when residual ratio exceeds 10
  Real over_relaxation = 1.6;
  int check_interval = 25;        // coarse residual probe spacing
  int consecutive_passes = 10;    // iterations below tolerance before stopping
  bool polish = true;             // active-face polish, LP problems only
  std::ostream* log = nullptr;    // optional iteration log (tab-delimited)
  int log_interval = 1000;
};

struct Residuals {
  Real primal = 0;
  Real dual = 0;
  Real gap = 0;
};

/// Project a symmetric matrix onto the PSD cone by clipping negative eigenvalues.
MatX project_psd(const MatX& s);

/// Recompute residuals of a candidate solution against a problem:
/// primal = |Ax-b| / (1+|b|), dual = dist_{K*}(c - A'y) / (1+|c|),
/// gap = |c'x - b'y| / (1 + |c'x| + |b'y|).
Residuals residuals(const ConicProblem& p, const ConicSolution& sol);

/// Reusable solver: the affine-step factorization is computed once at
/// construction and shared across solves; b and c may be swapped out while
/// the constraint matrix stays fixed. Problems with few rows use a cached
/// Cholesky of A A'; row-heavy problems use a quasi-definite KKT
/// factorization refreshed only when the penalty changes.
class Solver {
 public:
  explicit Solver(ConicProblem p);

  const ConicProblem& problem() const { return p_; }
  void set_rhs(const VecX& b);
  void set_objective(const VecX& c);

  ConicSolution solve(const SolverConfig& cfg = {}) const;

 private:
  ConicProblem p_;
  Eigen::SparseMatrix<Real> At_;
  bool use_kkt_ = false;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<Real>> gram_;  // A A' + delta I
  Eigen::SparseMatrix<Real> kkt_;                          // [[rho I, A'], [A, -delta I]]

  VecX project_cone(const VecX& v) const;
  VecX project_dual_cone_distance(const VecX& s, Real* dist) const;
  bool polish_lp(ConicSolution& sol) const;

  friend struct AffineStep;
};

/// One-shot convenience wrapper.
ConicSolution solve(const ConicProblem& p, const SolverConfig& cfg = {});

}  // namespace sce::conic

#include "sce/conic.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <ostream>
#include <stdexcept>
#include <vector>

namespace sce::conic {

namespace {

constexpr Real kKktRegularization = 1e-7;
constexpr Index kKktRowThreshold = 1024;  // above this, the Gram fill-in usually loses

Real safe_norm(const VecX& v) { return v.size() ? v.norm() : Real(0); }

}  // namespace

void ConicProblem::validate() const {
  if (cones.n_free < 0 || cones.n_nonneg < 0 || cones.psd_side < 0)
    throw std::invalid_argument("conic: negative cone dimension");
  if (c.size() != cones.n_total()) throw std::invalid_argument("conic: objective size mismatch");
  if (A.rows() != b.size()) throw std::invalid_argument("conic: rhs size mismatch");
  if (A.rows() > 0 && A.cols() != cones.n_total())
    throw std::invalid_argument("conic: constraint matrix width mismatch");
}

MatX project_psd(const MatX& s) {
  if (s.rows() != s.cols()) throw std::invalid_argument("project_psd: non-square input");
  const Real asym = (s - s.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-12 * std::max(Real(1), s.cwiseAbs().maxCoeff()))
    throw std::invalid_argument("project_psd: input not symmetric");
  Eigen::SelfAdjointEigenSolver<MatX> es(Real(0.5) * (s + s.transpose()));
  VecX ev = es.eigenvalues().cwiseMax(Real(0));
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

Solver::Solver(ConicProblem p) : p_(std::move(p)) {
  p_.validate();
  At_ = p_.A.transpose();
  const Index m = p_.A.rows();
  if (m == 0) return;
  use_kkt_ = m > kKktRowThreshold;
  if (!use_kkt_) {
    Eigen::SparseMatrix<Real> gram = (p_.A * At_).pruned();
    Real max_diag = 0;
    for (Index i = 0; i < gram.rows(); ++i) max_diag = std::max(max_diag, gram.coeff(i, i));
    const Real delta = 1e-10 * std::max(Real(1), max_diag);
    Eigen::SparseMatrix<Real> shift(gram.rows(), gram.cols());
    shift.setIdentity();
    gram += delta * shift;
    gram_.compute(gram);
    if (gram_.info() != Eigen::Success) throw std::runtime_error("conic: Gram factorization failed");
  } else {
    const Index n = p_.cones.n_total();
    std::vector<Eigen::Triplet<Real>> trip;
    trip.reserve((size_t)(n + m) + 2 * (size_t)p_.A.nonZeros());
    for (Index i = 0; i < n; ++i) trip.emplace_back(i, i, 1.0);  // rho slot
    for (Index k = 0; k < p_.A.outerSize(); ++k)
      for (Eigen::SparseMatrix<Real>::InnerIterator it(p_.A, k); it; ++it) {
        trip.emplace_back(n + it.row(), it.col(), it.value());
        trip.emplace_back(it.col(), n + it.row(), it.value());
      }
    for (Index i = 0; i < m; ++i) trip.emplace_back(n + i, n + i, -kKktRegularization);
    kkt_.resize(n + m, n + m);
    kkt_.setFromTriplets(trip.begin(), trip.end());
  }
}

void Solver::set_rhs(const VecX& b) {
  if (b.size() != p_.b.size()) throw std::invalid_argument("conic: rhs size change not allowed");
  p_.b = b;
}

void Solver::set_objective(const VecX& c) {
  if (c.size() != p_.c.size()) throw std::invalid_argument("conic: objective size change not allowed");
  p_.c = c;
}

/// One affine projection x = argmin { c'x + (rho/2)|x - (z-u)|^2 : Ax = b },
/// either through the cached Gram factorization (penalty-independent) or the
/// quasi-definite KKT system (refactorized when the penalty moves).
struct AffineStep {
  const Solver& s;
  Real rho;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<Real>> kkt_ldlt;
  Eigen::SparseMatrix<Real> kkt_current;
  bool analyzed = false;

  explicit AffineStep(const Solver& solver, Real rho0) : s(solver), rho(rho0) {
    if (s.use_kkt_) refactor(rho0);
  }

  void refactor(Real new_rho) {
    rho = new_rho;
    if (!s.use_kkt_) return;
    const Index n = s.p_.cones.n_total();
    kkt_current = s.kkt_;
    for (Index i = 0; i < n; ++i) kkt_current.valuePtr()[kkt_current.outerIndexPtr()[i]] = rho;
    if (!analyzed) {
      kkt_ldlt.analyzePattern(kkt_current);
      analyzed = true;
    }
    kkt_ldlt.factorize(kkt_current);
    if (kkt_ldlt.info() != Eigen::Success)
      throw std::runtime_error("conic: KKT factorization failed");
  }

  // v = z - u - c/rho; multiplier nu satisfies c + rho (x - (z-u)) + A' nu = 0.
  VecX project(const VecX& v, VecX* nu_out) {
    const Index m = s.p_.A.rows();
    if (m == 0) {
      if (nu_out) nu_out->resize(0);
      return v;
    }
    if (!s.use_kkt_) {
      VecX lam = s.gram_.solve(s.p_.A * v - s.p_.b);
      if (nu_out) *nu_out = rho * lam;
      return v - s.At_ * lam;
    }
    const Index n = s.p_.cones.n_total();
    VecX rhs(n + m);
    rhs.head(n) = rho * v;
    rhs.tail(m) = s.p_.b;
    VecX sol = kkt_ldlt.solve(rhs);
    // one refinement round against the unregularized system
    VecX x = sol.head(n), nu = sol.tail(m);
    VecX r(n + m);
    r.head(n) = rhs.head(n) - rho * x - s.At_ * nu;
    r.tail(m) = s.p_.b - s.p_.A * x;
    const VecX corr = kkt_ldlt.solve(r);
    x += corr.head(n);
    nu += corr.tail(m);
    if (nu_out) *nu_out = nu;
    return x;
  }

  /// Range(A) component of a multiplier vector (kills null(A') junk).
  VecX range_project(const VecX& y) {
    const Index m = s.p_.A.rows();
    if (!s.use_kkt_) {
      const VecX t = s.At_ * y;
      VecX yr = s.gram_.solve(s.p_.A * t);
      yr += s.gram_.solve(s.p_.A * (t - s.At_ * yr));
      return yr;
    }
    // With [[I, A'],[A, -dI]] [w; xi] = [A'y; 0], the tail block solves
    // (A A' + d) xi = A A' y, i.e. xi ~ Pi_range(y); refine once.
    refactor(1.0);
    const Index n = s.p_.cones.n_total();
    VecX rhs = VecX::Zero(n + m);
    rhs.head(n) = s.At_ * y;
    VecX xi = kkt_ldlt.solve(rhs).tail(m);
    rhs.head(n) = s.At_ * (y - xi);
    xi += kkt_ldlt.solve(rhs).tail(m);
    return xi;
  }
};

VecX Solver::project_cone(const VecX& v) const {
  VecX out = v;
  const auto& cn = p_.cones;
  if (cn.n_nonneg > 0)
    out.segment(cn.n_free, cn.n_nonneg) = out.segment(cn.n_free, cn.n_nonneg).cwiseMax(Real(0));
  if (cn.psd_side > 0) {
    VecX blk = out.segment(cn.psd_offset(), cn.n_psd());
    MatX s = svec_to_matrix<Real>(blk, cn.psd_side);
    Eigen::SelfAdjointEigenSolver<MatX> es(s);
    VecX ev = es.eigenvalues().cwiseMax(Real(0));
    MatX proj = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
    out.segment(cn.psd_offset(), cn.n_psd()) = matrix_to_svec<Real>(proj);
  }
  return out;
}

VecX Solver::project_dual_cone_distance(const VecX& s, Real* dist) const {
  // Dual cone: {0} x R+ x PSD for the [free | nonneg | psd] layout.
  VecX proj = s;
  const auto& cn = p_.cones;
  if (cn.n_free > 0) proj.head(cn.n_free).setZero();
  if (cn.n_nonneg > 0)
    proj.segment(cn.n_free, cn.n_nonneg) = proj.segment(cn.n_free, cn.n_nonneg).cwiseMax(Real(0));
  if (cn.psd_side > 0) {
    VecX blk = proj.segment(cn.psd_offset(), cn.n_psd());
    MatX m = svec_to_matrix<Real>(blk, cn.psd_side);
    Eigen::SelfAdjointEigenSolver<MatX> es(m);
    VecX ev = es.eigenvalues().cwiseMax(Real(0));
    MatX pm = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
    proj.segment(cn.psd_offset(), cn.n_psd()) = matrix_to_svec<Real>(pm);
  }
  if (dist) *dist = (s - proj).norm();
  return proj;
}

Residuals residuals(const ConicProblem& p, const ConicSolution& sol) {
  Residuals r;
  const VecX ax = p.A.rows() ? VecX(p.A * sol.x) : VecX();
  r.primal = (p.A.rows() ? (ax - p.b).norm() : Real(0)) / (Real(1) + safe_norm(p.b));
  VecX s = p.c;
  if (p.A.rows()) s -= VecX(p.A.transpose() * sol.y);
  Real dist = 0;
  {
    VecX proj = s;
    const auto& cn = p.cones;
    if (cn.n_free > 0) proj.head(cn.n_free).setZero();
    if (cn.n_nonneg > 0)
      proj.segment(cn.n_free, cn.n_nonneg) = proj.segment(cn.n_free, cn.n_nonneg).cwiseMax(Real(0));
    if (cn.psd_side > 0) {
      MatX m = svec_to_matrix<Real>(VecX(proj.segment(cn.psd_offset(), cn.n_psd())), cn.psd_side);
      Eigen::SelfAdjointEigenSolver<MatX> es(m);
      VecX ev = es.eigenvalues().cwiseMax(Real(0));
      MatX pm = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
      proj.segment(cn.psd_offset(), cn.n_psd()) = matrix_to_svec<Real>(pm);
    }
    dist = (s - proj).norm();
  }
  r.dual = dist / (Real(1) + safe_norm(p.c));
  const Real pobj = p.c.dot(sol.x);
  const Real dobj = sol.y.size() ? p.b.dot(sol.y) : Real(0);
  r.gap = std::abs(pobj - dobj) / (Real(1) + std::abs(pobj) + std::abs(dobj));
  return r;
}

bool Solver::polish_lp(ConicSolution& sol) const {
  const auto& cn = p_.cones;
  if (cn.psd_side != 0 || p_.A.rows() == 0) return false;
  const Index n = cn.n_total();
  const Index m = p_.A.rows();

  // Face detection at tolerance 1e-9, narrowed by complementarity against the
  // current dual slack so a settled support is recognized from rough iterates.
  const Real tau = 1e-9 * std::max(Real(1), sol.x.cwiseAbs().maxCoeff());
  VecX slack_est;
  if (sol.y.size() == m) slack_est = p_.c - At_ * sol.y;
  std::vector<Index> support;
  for (Index i = 0; i < n; ++i) {
    const bool by_size = sol.x[i] > tau;
    const bool by_comp = slack_est.size() > 0 && sol.x[i] > std::max(slack_est[i], Real(0));
    if (i < cn.n_free || (by_size && by_comp) || (slack_est.size() == 0 && by_size))
      support.push_back(i);
  }
  if (support.empty() || (Index)support.size() > 4 * m + cn.n_free) return false;

  MatX asub(m, (Index)support.size());
  VecX csub((Index)support.size());
  VecX xs((Index)support.size());
  for (size_t k = 0; k < support.size(); ++k) {
    asub.col((Index)k) = p_.A.col(support[k]);
    csub[(Index)k] = p_.c[support[k]];
    xs[(Index)k] = sol.x[support[k]];
  }

  // Project the iterate onto the affine hull of the detected face. One
  // shrink-and-retry pass drops coordinates the projection sends negative.
  for (int attempt = 0; attempt < 2; ++attempt) {
    MatX gram = asub * asub.transpose();
    gram.diagonal().array() += 1e-12 * std::max(Real(1), gram.diagonal().maxCoeff());
    Eigen::LDLT<MatX> ldlt(gram);
    const VecX corr = ldlt.solve(asub * xs - p_.b);
    xs -= asub.transpose() * corr;
    if ((asub * xs - p_.b).norm() > 1e-10 * (Real(1) + p_.b.norm())) return false;
    Real min_entry = 0;
    for (size_t k = 0; k < support.size(); ++k)
      if (support[k] >= cn.n_free) min_entry = std::min(min_entry, xs[(Index)k]);
    if (min_entry >= -1e-11) break;
    if (attempt == 1) return false;
    std::vector<Index> kept;
    VecX xs_kept((Index)support.size());
    Index nk = 0;
    for (size_t k = 0; k < support.size(); ++k) {
      if (support[k] >= cn.n_free && xs[(Index)k] < 1e-12) continue;
      kept.push_back(support[k]);
      xs_kept[nk++] = std::max(xs[(Index)k], Real(0));
    }
    if (kept.empty() || kept.size() == support.size()) return false;
    support.swap(kept);
    asub.resize(m, (Index)support.size());
    csub.resize((Index)support.size());
    for (size_t k = 0; k < support.size(); ++k) {
      asub.col((Index)k) = p_.A.col(support[k]);
      csub[(Index)k] = p_.c[support[k]];
    }
    xs = xs_kept.head((Index)support.size());
  }

  Eigen::ColPivHouseholderQR<MatX> qrt(asub.transpose());
  VecX yd = qrt.solve(csub);
  if ((asub.transpose() * yd - csub).norm() > 1e-9 * (Real(1) + csub.norm())) return false;
  VecX slack = p_.c - At_ * yd;
  Real min_slack = 0;
  for (Index i = cn.n_free; i < n; ++i) min_slack = std::min(min_slack, slack[i]);
  if (min_slack < -1e-9 * (Real(1) + p_.c.cwiseAbs().maxCoeff())) return false;

  VecX xp = VecX::Zero(n);
  for (size_t k = 0; k < support.size(); ++k) xp[support[k]] = std::max(xs[(Index)k], Real(0));
  const Real pobj = p_.c.dot(xp);
  const Real dobj = p_.b.dot(yd);
  if (std::abs(pobj - dobj) > 1e-9 * (Real(1) + std::abs(pobj) + std::abs(dobj))) return false;

  sol.x = xp;
  sol.y = yd;
  sol.s = slack;
  sol.primal_objective = pobj;
  sol.dual_objective = dobj;
  return true;
}

ConicSolution Solver::solve(const SolverConfig& cfg) const {
  const Index n = p_.cones.n_total();
  const Index m = p_.A.rows();
  const Real alpha = cfg.over_relaxation;

  VecX z = VecX::Zero(n);
  VecX u = VecX::Zero(n);
  VecX nu(m);
  // Data-scaled initial penalty; cfg.penalty acts as a multiplier on it.
  Real rho = cfg.penalty * std::max(Real(1), p_.c.norm()) / std::max(Real(1), p_.b.norm());
  AffineStep affine(*this, rho);

  ConicSolution sol;
  sol.x = z;
  sol.y = VecX::Zero(m);

  const Real bnorm = safe_norm(p_.b);
  const Real cnorm = safe_norm(p_.c);
  const Real diverge_cap = 1e9 * (Real(1) + bnorm + cnorm);

  int consecutive = 0;
  bool verifying = false;
  Real last_consensus = -1;

  auto compute_residuals = [&](ConicSolution& out) {
    out.x = z;
    out.y = (m > 0) ? VecX(-nu) : VecX();
    out.s = p_.c - (m > 0 ? VecX(At_ * out.y) : VecX::Zero(n));
    Real dist = 0;
    project_dual_cone_distance(out.s, &dist);
    out.primal_residual = (m > 0 ? (p_.A * z - p_.b).norm() : Real(0)) / (Real(1) + bnorm);
    out.dual_residual = dist / (Real(1) + cnorm);
    out.primal_objective = p_.c.dot(z);
    out.dual_objective = (m > 0) ? p_.b.dot(out.y) : Real(0);
    out.gap = std::abs(out.primal_objective - out.dual_objective) /
              (Real(1) + std::abs(out.primal_objective) + std::abs(out.dual_objective));
  };

  long iter = 0;
  Real consensus_res = 0, change_res = 0;
  long adapt_interval = 4 * cfg.check_interval;
  long next_adapt = adapt_interval;
  const bool lp_polish = cfg.polish && p_.cones.psd_side == 0 && m > 0;
  for (iter = 1; iter <= cfg.max_iterations; ++iter) {
    VecX v = z - u - p_.c / rho;
    VecX xhat = affine.project(v, &nu);
    VecX xtilde = alpha * xhat + (Real(1) - alpha) * z;
    VecX znew = project_cone(xtilde + u);
    u += xtilde - znew;
    consensus_res = (xhat - znew).norm();
    change_res = rho * (znew - z).norm();
    z.swap(znew);

    // An LP iterate whose support has settled can be finished exactly by the
    // active-face polish, well before the splitting tail plays out.
    if (lp_polish && iter % 1000 == 0) {
      ConicSolution cand;
      cand.x = z;
      cand.y = VecX(-nu);
      if (polish_lp(cand)) {
        Residuals r = residuals(p_, cand);
        if (std::max({r.primal, r.dual, r.gap}) <= cfg.tolerance) {
          cand.primal_residual = r.primal;
          cand.dual_residual = r.dual;
          cand.gap = r.gap;
          cand.iterations = iter;
          cand.status = SolveStatus::converged;
          return cand;
        }
      }
    }

    const bool probe = verifying || (iter % cfg.check_interval == 0) || iter == cfg.max_iterations;
    if (!probe) continue;

    compute_residuals(sol);
    sol.iterations = iter;
    const bool pass = sol.primal_residual <= cfg.tolerance && sol.dual_residual <= cfg.tolerance &&
                      sol.gap <= cfg.tolerance;
    if (pass) {
      verifying = true;
      if (++consecutive >= cfg.consecutive_passes) {
        sol.status = SolveStatus::converged;
        break;
      }
    } else {
      verifying = false;
      consecutive = 0;
    }

    if (cfg.log && (iter % cfg.log_interval == 0 || pass))
      (*cfg.log) << iter << '\t' << sol.primal_residual << '\t' << sol.dual_residual << '\t'
                 << sol.gap << '\t' << sol.primal_objective << '\n';

    // Residual balancing on the splitting residuals (consensus gap vs scaled
    // iterate change); the termination test above stays on the KKT residuals.
    // The interval between changes doubles each time, so the penalty settles
    // and the fixed-penalty convergence theory applies to the tail.
    if (!verifying && cfg.adaptive_penalty && iter >= next_adapt) {
      bool changed = false;
      if (consensus_res > 10 * change_res && rho < 1e8) {
        rho *= 2;
        u *= Real(0.5);
        changed = true;
      } else if (change_res > 10 * consensus_res && rho > 1e-8) {
        rho *= Real(0.5);
        u *= 2;
        changed = true;
      }
      if (changed) {
        affine.refactor(rho);
        adapt_interval *= 2;
        next_adapt = iter + adapt_interval;
      }
    }

    // Divergence test: a persistent consensus gap with unbounded multipliers
    // signals an infeasible (or mis-assembled) problem.
    if (!verifying && iter % (cfg.check_interval * 8) == 0) {
      const Real consensus = consensus_res / (Real(1) + z.norm());
      if (u.norm() > diverge_cap && consensus > 1e-6 && last_consensus > 0 &&
          std::abs(consensus - last_consensus) < 1e-3 * consensus) {
        sol.status = SolveStatus::infeasible_detected;
        sol.y = (m > 0) ? VecX(-nu / std::max(Real(1), nu.norm())) : VecX();
        return sol;
      }
      last_consensus = consensus;
    }
  }

  if (sol.status != SolveStatus::converged) {
    compute_residuals(sol);
    sol.iterations = std::min(iter, cfg.max_iterations);
  }

  // Project the reported multipliers onto range(A'): the regularized affine
  // solves leave an O(roundoff/delta) component in null(A') that is invisible
  // to A'y but pollutes per-row dual values.
  if (m > 0) {
    sol.y = affine.range_project(sol.y);
    sol.s = p_.c - At_ * sol.y;
    Real dist = 0;
    project_dual_cone_distance(sol.s, &dist);
    sol.dual_residual = dist / (Real(1) + cnorm);
    sol.dual_objective = p_.b.dot(sol.y);
    sol.gap = std::abs(sol.primal_objective - sol.dual_objective) /
              (Real(1) + std::abs(sol.primal_objective) + std::abs(sol.dual_objective));
  }

  if (lp_polish) {
    ConicSolution polished = sol;
    if (polish_lp(polished)) {
      Residuals r = residuals(p_, polished);
      if (std::max({r.primal, r.dual, r.gap}) <=
          std::max({sol.primal_residual, sol.dual_residual, sol.gap})) {
        polished.primal_residual = r.primal;
        polished.dual_residual = r.dual;
        polished.gap = r.gap;
        polished.iterations = sol.iterations;
        polished.status = (std::max({r.primal, r.dual, r.gap}) <= cfg.tolerance)
                              ? SolveStatus::converged
                              : sol.status;
        return polished;
      }
    }
  }
  return sol;
}

ConicSolution solve(const ConicProblem& p, const SolverConfig& cfg) { return Solver(p).solve(cfg); }

}  // namespace sce::conic

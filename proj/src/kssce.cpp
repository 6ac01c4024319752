#include "sce/kssce.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <stdexcept>

#include "sce/mmot.hpp"
#include "sce/relax.hpp"

namespace sce::kssce {

namespace {

class LpFunctional final : public SceFunctional {
 public:
  LpFunctional(const model::HamiltonianSpec& h, conic::SolverConfig cfg)
      : solver_(mmot::cost_from_interaction(h.v)), cfg_(cfg) {}

  FunctionalEval evaluate(const VecX& rho) override {
    const auto m = mmot::MarginalSet::binary_from_density(rho);
    auto r = solver_.solve(m, cfg_);
    return {r.value, r.gradient, r.converged, r.raw.iterations};
  }

 private:
  mmot::ExactMmotSolver solver_;
  conic::SolverConfig cfg_;
};

class SdpFunctional final : public SceFunctional {
 public:
  SdpFunctional(const model::HamiltonianSpec& h, bool three, conic::SolverConfig cfg)
      : solver_(mmot::cost_from_interaction(h.v), three), cfg_(cfg) {}

  FunctionalEval evaluate(const VecX& rho) override {
    const auto m = mmot::MarginalSet::binary_from_density(rho);
    auto r = solver_.solve(m, cfg_);
    VecX g = r.converged ? r.gradient : VecX();
    return {r.value, g, r.converged, r.raw.iterations};
  }

 private:
  relax::RelaxSolver solver_;
  conic::SolverConfig cfg_;
};

}  // namespace

std::unique_ptr<SceFunctional> make_functional(Backend backend, const model::HamiltonianSpec& h,
                                               const conic::SolverConfig& solver_cfg) {
  switch (backend) {
    case Backend::LP: return std::make_unique<LpFunctional>(h, solver_cfg);
    case Backend::SDP2: return std::make_unique<SdpFunctional>(h, false, solver_cfg);
    case Backend::SDP3: return std::make_unique<SdpFunctional>(h, true, solver_cfg);
  }
  throw std::logic_error("make_functional: unknown backend");
}

EffectiveEigenResult effective_eigensolve(const MatX& t, const VecX& w, const VecX& v_sce, int N) {
  const Index L = t.rows();
  if (N < 0 || N > L) throw std::invalid_argument("effective_eigensolve: N out of range");
  if (t.cols() != L || w.size() != L || v_sce.size() != L)
    throw std::invalid_argument("effective_eigensolve: dimension mismatch");

  MatX h = t;
  h.diagonal() += w + v_sce;
  Eigen::SelfAdjointEigenSolver<MatX> es(h);

  EffectiveEigenResult out;
  out.eps = es.eigenvalues().head(N);
  out.orbitals = es.eigenvectors().leftCols(N);
  out.density = out.orbitals.rowwise().squaredNorm();
  if (N >= 1 && N < L) {
    out.homo_lumo_gap = es.eigenvalues()[N] - es.eigenvalues()[N - 1];
    out.degenerate = out.homo_lumo_gap <= 1e-10 * std::max(Real(1), std::abs(es.eigenvalues()[N]));
  } else {
    out.homo_lumo_gap = std::numeric_limits<Real>::infinity();
  }
  return out;
}

Real total_energy(const VecX& eps, const VecX& grad, const VecX& rho, Real e_sce_value) {
  if (grad.size() != rho.size()) throw std::invalid_argument("total_energy: dimension mismatch");
  return eps.sum() - grad.dot(rho) + e_sce_value;
}

VecX project_density(const VecX& rho, Real target_sum, Real clamp) {
  const Index n = rho.size();
  const Real lo = clamp, hi = 1.0 - clamp;
  if (target_sum < n * lo - 1e-12 || target_sum > n * hi + 1e-12)
    throw std::invalid_argument("project_density: target outside the clamped box");

  auto clipped_sum = [&](Real shift) {
    Real s = 0;
    for (Index i = 0; i < n; ++i) s += std::clamp(rho[i] - shift, lo, hi);
    return s;
  };
  Real a = rho.minCoeff() - hi - 1, b = rho.maxCoeff() - lo + 1;
  for (int it = 0; it < 200; ++it) {
    const Real mid = 0.5 * (a + b);
    (clipped_sum(mid) > target_sum ? a : b) = mid;
  }
  const Real shift = 0.5 * (a + b);
  VecX out(n);
  for (Index i = 0; i < n; ++i) out[i] = std::clamp(rho[i] - shift, lo, hi);
  // Spread any bisection leftover over the interior coordinates.
  Real leftover = target_sum - out.sum();
  if (leftover != 0) {
    Index interior = 0;
    for (Index i = 0; i < n; ++i)
      if (out[i] > lo && out[i] < hi) ++interior;
    if (interior > 0)
      for (Index i = 0; i < n; ++i)
        if (out[i] > lo && out[i] < hi) out[i] += leftover / (Real)interior;
  }
  return out;
}

VecX mix(const std::vector<std::pair<VecX, VecX>>& history, Mixing scheme, Real alpha, int depth,
         Real target_sum, Real clamp) {
  if (history.empty()) throw std::invalid_argument("mix: empty history");
  const auto& [in_last, out_last] = history.back();
  VecX next;

  const int window = std::min<int>(depth, (int)history.size());
  if (scheme == Mixing::simple || window < 2) {
    next = (1 - alpha) * in_last + alpha * out_last;
  } else {
    const Index n = in_last.size();
    const VecX f_last = out_last - in_last;
    MatX d(n, window - 1);
    MatX din(n, window - 1);
    for (int j = 0; j < window - 1; ++j) {
      const auto& [xin, xout] = history[history.size() - (size_t)window + (size_t)j];
      d.col(j) = (xout - xin) - f_last;
      din.col(j) = xin - in_last;
    }
    Eigen::ColPivHouseholderQR<MatX> qr(d);
    if (qr.rank() < window - 1) {
      next = (1 - alpha) * in_last + alpha * out_last;  // rank-deficient: simple fallback
    } else {
      const VecX gamma = qr.solve(-f_last);
      const VecX xbar = in_last + din * gamma;
      const VecX fbar = f_last + (d * gamma);
      next = xbar + alpha * fbar;
    }
  }
  return project_density(next, target_sum, clamp);
}

SCFResult scf_iterate(const model::HamiltonianSpec& h, int N, const SCFConfig& cfg) {
  h.validate();
  if (N <= 0 || N >= h.L)
    throw std::invalid_argument("scf_iterate: requires 0 < N < L");

  auto functional = make_functional(cfg.backend, h, cfg.solver);

  SCFResult res;
  VecX rho = project_density(VecX::Constant(h.L, Real(N) / h.L), N, cfg.boundary_clamp);

  struct Snapshot {
    VecX rho;
    FunctionalEval eval;
    EffectiveEigenResult eig;
    Real residual = std::numeric_limits<Real>::infinity();
  } best;

  std::vector<std::pair<VecX, VecX>> history;

  int k = 0;
  for (k = 1; k <= cfg.max_iterations; ++k) {
    FunctionalEval eval = functional->evaluate(rho);
    res.backend_iterations += eval.solver_iterations;
    if (!eval.converged) {
      res.backend_failed = true;
      break;
    }
    EffectiveEigenResult eig = effective_eigensolve(h.t, h.w, eval.gradient, N);
    const Real residual = (eig.density - rho).cwiseAbs().maxCoeff();
    res.density_change_trace.push_back(residual);
    if (cfg.trace)
      (*cfg.trace) << k << '\t' << residual << '\t' << eval.value << '\t'
                   << total_energy(eig.eps, eval.gradient, rho, eval.value) << '\n';

    if (residual < best.residual) best = {rho, eval, eig, residual};
    if (residual <= cfg.density_tolerance) {
      res.converged = true;
      break;
    }
    history.emplace_back(rho, eig.density);
    rho = mix(history, cfg.mixing, cfg.alpha, cfg.anderson_depth, N, cfg.boundary_clamp);
  }
  res.iterations = std::min(k, cfg.max_iterations);

  if (best.residual == std::numeric_limits<Real>::infinity()) return res;  // backend failed at once

  // Final consistent package at the best iterate's Slater density.
  const VecX rho_star = project_density(best.eig.density, N, cfg.boundary_clamp);
  FunctionalEval eval_star = functional->evaluate(rho_star);
  if (!eval_star.converged) {
    res.backend_failed = true;
    return res;
  }
  res.backend_iterations += eval_star.solver_iterations;
  EffectiveEigenResult eig_star = effective_eigensolve(h.t, h.w, eval_star.gradient, N);
  res.density = eig_star.density;
  res.orbital_energies = eig_star.eps;
  res.orbitals = eig_star.orbitals;
  res.v_sce = eval_star.gradient;
  res.e_sce = eval_star.value;
  res.e_total = total_energy(eig_star.eps, eval_star.gradient, rho_star, eval_star.value);
  res.homo_lumo_degenerate = eig_star.degenerate;
  res.homo_lumo_gap = eig_star.homo_lumo_gap;
  return res;
}

}  // namespace sce::kssce

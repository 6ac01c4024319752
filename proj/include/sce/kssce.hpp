// Kohn-Sham SCE self-consistent field loop: effective-Hamiltonian
// eigensolves, density mixing, convergence control, and total-energy
// recovery, parameterized by the SCE functional backend.
#pragma once

#include <iosfwd>
#include <memory>
#include <utility>
#include <vector>

#include "sce/conic.hpp"
#include "sce/model.hpp"
#include "sce/types.hpp"

namespace sce::kssce {

enum class Backend { LP, SDP2, SDP3 };
enum class Mixing { simple, anderson };

struct FunctionalEval {
  Real value = 0;    // E_sce[rho]
  VecX gradient;     // v_sce = dE_sce/drho
  bool converged = false;
  long solver_iterations = 0;
};

/// Evaluation of the SCE functional and its (sub)gradient at a density.
class SceFunctional {
 public:
  virtual ~SceFunctional() = default;
  virtual FunctionalEval evaluate(const VecX& rho) = 0;
};

std::unique_ptr<SceFunctional> make_functional(Backend backend, const model::HamiltonianSpec& h,
                                               const conic::SolverConfig& solver_cfg);

struct SCFConfig {
  Backend backend = Backend::LP;
  Mixing mixing = Mixing::anderson;
  Real alpha = 0.3;             // damping
  int anderson_depth = 5;
  Real density_tolerance = 1e-6;
  int max_iterations = 500;
  Real boundary_clamp = 1e-6;   // densities kept in [clamp, 1-clamp]
  conic::SolverConfig solver = default_scf_solver_config();
  std::ostream* trace = nullptr;  // per-iteration: k, |d rho|_inf, E_sce, E_KS-SCE

  static conic::SolverConfig default_scf_solver_config() {
    conic::SolverConfig cfg;
    cfg.tolerance = 1e-8;
    return cfg;
  }
};

struct EffectiveEigenResult {
  VecX eps;       // N lowest eigenvalues, ascending
  MatX orbitals;  // L x N, orthonormal columns
  VecX density;   // diag(Phi Phi')
  Real homo_lumo_gap = 0;
  bool degenerate = false;  // eps_N = eps_{N+1} within 1e-10
};

/// N lowest orthonormal eigenpairs of t + diag(w + v_sce) and the resulting
/// Slater density.
EffectiveEigenResult effective_eigensolve(const MatX& t, const VecX& w, const VecX& v_sce, int N);

/// Next density from the (rho_in, rho_out) history. Simple damping or
/// Anderson residual extrapolation; the result is clamped to
/// [clamp, 1-clamp] and renormalized to the target particle number. A
/// rank-deficient Anderson system falls back to simple mixing for the step.
VecX mix(const std::vector<std::pair<VecX, VecX>>& history, Mixing scheme, Real alpha, int depth,
         Real target_sum, Real clamp);

/// E_KS-SCE = sum eps_k - grad' rho + E_sce.
Real total_energy(const VecX& eps, const VecX& grad, const VecX& rho, Real e_sce_value);

/// Euclidean projection onto {sum x = target, clamp <= x_i <= 1-clamp}.
VecX project_density(const VecX& rho, Real target_sum, Real clamp);

struct SCFResult {
  bool converged = false;
  bool backend_failed = false;
  int iterations = 0;
  VecX density;            // Slater density of the final eigensolve
  VecX orbital_energies;
  MatX orbitals;
  VecX v_sce;              // gradient at the final evaluation density
  Real e_sce = 0;
  Real e_total = 0;        // recovered E_KS-SCE
  bool homo_lumo_degenerate = false;
  Real homo_lumo_gap = 0;
  std::vector<Real> density_change_trace;
  long backend_iterations = 0;
};

/// Fixed-point iteration on the KS-SCE equations with 0 < N < L.
SCFResult scf_iterate(const model::HamiltonianSpec& h, int N, const SCFConfig& cfg = {});

}  // namespace sce::kssce

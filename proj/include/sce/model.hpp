// Second-quantized lattice Hamiltonians and the exact-diagonalization oracle.
//
// Occupation bitstrings are encoded as unsigned integers with site p stored in
// bit p (zero-based), so the Fock amplitude vector has length 2^L and is
// indexed by the bitstring value. Fermionic signs follow the convention
// (-1)^{sum_{q<p} s_q} of the creation/annihilation operators.
#pragma once

#include <Eigen/Sparse>

#include <cstdint>
#include <vector>

#include "sce/types.hpp"

namespace sce::model {

struct HamiltonianSpec {
  int L = 0;   // site count
  MatX t;      // L x L symmetric hopping, zero diagonal
  VecX w;      // on-site potential (chemical potential absorbed)
  MatX v;      // L x L symmetric interaction, zero diagonal

  void validate() const;
};

struct FockVector {
  int L = 0;
  VecX amplitudes;  // length 2^L, indexed by occupation bitstring
};

struct EDResult {
  Real energy = 0;
  FockVector ground_state;
  VecX density;
  Real spectral_gap = 0;  // sector gap above the ground state (estimate on the iterative path)
  Index sector_dim = 0;
};

enum class Profile { NN, NNN, NNNN };

/// 1D open chain with unit nearest-neighbor hopping and the interaction tail
/// selected by the profile: NN {U/2}, NNN {U/2, U/40}, NNNN {U/2, U/20, U/200}
/// at distances 1, 2, 3. All coefficients enter the symmetric ordered-pair
/// convention sum_{p,q} v_pq n_p n_q.
HamiltonianSpec build_spinless_chain(int L, Real U, Profile profile);

/// 2D generalized Hubbard model on an open Lx x Ly grid with spin. Sites are
/// flattened as (j-1)*Lx + i for spin-up and the same plus Lx*Ly for
/// spin-down. Hopping is -1 on equal-spin spatial bonds; U acts between the
/// two spin states of a spatial site and V between all spin pairs of spatial
/// nearest neighbors.
HamiltonianSpec build_spinful_lattice(int Lx, int Ly, Real U, Real V);

/// Lowest eigenpair of the Hamiltonian restricted to the N-particle sector.
/// Dense eigendecomposition up to sector dimension 4000, Lanczos with full
/// reorthogonalization above.
EDResult exact_ground_state(const HamiltonianSpec& h, int N);

/// rho_p = sum_s |psi(s)|^2 s_p. Rejects unnormalized input beyond 1e-10.
VecX density_of(const FockVector& psi);

/// All bitstrings with N set bits among L, in increasing integer order.
std::vector<std::uint32_t> sector_states(int L, int N);

/// Sector Hamiltonian: hopping with fermionic signs plus the diagonal
/// sum_p w_p s_p + sum_{p,q} v_pq s_p s_q over ordered pairs.
Eigen::SparseMatrix<Real> sector_hamiltonian(const HamiltonianSpec& h,
                                             const std::vector<std::uint32_t>& states);

/// Smallest eigenpair of a sparse symmetric matrix by restarted Lanczos with
/// full reorthogonalization; converges at residual tol * max(1, |eigenvalue|).
std::pair<Real, VecX> lanczos_smallest(const Eigen::SparseMatrix<Real>& h, Real tol = 1e-10,
                                       Real* second_lowest = nullptr);

}  // namespace sce::model

// Exact multi-marginal optimal transport over a dense joint measure:
// pairwise cost assembly, the full linear program, marginalization, and the
// SCE potential from LP duality.
#pragma once

#include <memory>
#include <optional>
#include <vector>

#include "sce/conic.hpp"
#include "sce/types.hpp"

namespace sce::mmot {

struct MarginalSet {
  std::vector<Index> sizes;     // N_p per site
  std::vector<VecX> marginals;  // probability vector per site

  static MarginalSet binary_from_density(const VecX& rho);
  void validate(Real tol = 1e-12) const;
  int site_count() const { return (int)sizes.size(); }
  Index total_size() const;  // sum of N_p
  Index joint_size() const;  // product of N_p, throws on overflow past 2^20
};

/// Pairwise cost blocks C_pq, stored once per unordered pair p<q.
/// block(p,q) for p>q returns the transpose; absent pairs are zero.
struct PairwiseCost {
  std::vector<Index> sizes;

  static PairwiseCost from_interaction(const MatX& v);  // binary SCE cost

  void set_block(int p, int q, const MatX& c);
  bool has_block(int p, int q) const;
  MatX block(int p, int q) const;
  const std::vector<std::pair<int, int>>& pairs() const { return pairs_; }
  int site_count() const { return (int)sizes.size(); }

  /// sum_{p != q} C_pq(s_p, s_q) for one joint state.
  Real joint_cost(const std::vector<Index>& state) const;

 private:
  std::vector<std::pair<int, int>> pairs_;
  std::vector<MatX> blocks_;
  std::vector<int> lookup_;  // p * L + q -> index into blocks_, -1 if absent
};

/// Dense nonnegative tensor over the product state space, row-major with
/// site 1 slowest.
struct JointMeasure {
  std::vector<Index> sizes;
  VecX weights;

  Index flat_index(const std::vector<Index>& state) const;
  void unflatten(Index flat, std::vector<Index>& state) const;
  Real total_mass() const { return weights.sum(); }
};

/// Dense marginal tensor of order 1 to 3.
struct DenseTensor {
  std::vector<Index> dims;
  VecX values;

  Real operator()(Index i) const { return values[i]; }
  Real operator()(Index i, Index j) const { return values[i * dims[1] + j]; }
  Real operator()(Index i, Index j, Index k) const {
    return values[(i * dims[1] + j) * dims[2] + k];
  }
  MatX as_matrix() const;
};

struct MMOTResult {
  Real value = 0;
  JointMeasure plan;
  std::vector<VecX> site_potentials;  // LP duals, gauge-fixed so phi_p(0) = 0
  Real dual_offset = 0;               // sum of the removed phi_p(0), restores the dual objective
  VecX gradient;                      // phi_r(1) - phi_r(0); binary marginals only
  bool converged = false;
  conic::ConicSolution raw;  // solver diagnostics

  Real dual_objective(const MarginalSet& m) const;
};

conic::SolverConfig default_lp_config();

/// C_pq(1,1) = v_pq on the binary state space. Rejects asymmetric v or a
/// nonzero diagonal.
PairwiseCost cost_from_interaction(const MatX& v);

/// Solve min <C, mu> over Pi(marginals) as a conic LP on the dense joint
/// measure. Sites whose marginal is a point mass are eliminated before the
/// solve and their potentials reconstructed afterwards.
MMOTResult solve_exact_mmot(const PairwiseCost& c, const MarginalSet& m,
                            const conic::SolverConfig& cfg = default_lp_config());

/// Sum the joint weights over all sites not listed. Indices are zero-based,
/// distinct, between one and three of them.
DenseTensor marginalize(const JointMeasure& mu, const std::vector<int>& indices);

/// Subgradient of E_sce at rho from the LP dual potentials.
VecX grad_from_lp_dual(const MMOTResult& r);

/// sum_s plan(s) * (C(s) - sum_p phi_p(s_p)), the complementary-slackness residual.
Real complementarity_residual(const PairwiseCost& c, const MMOTResult& r);

/// Reusable exact-MMOT solver for a fixed cost: the constraint structure and
/// its factorization are built once and shared across marginal updates, as in
/// the self-consistent field loop. Falls back to a one-shot solve when a
/// marginal is pinned at a point mass.
class ExactMmotSolver {
 public:
  explicit ExactMmotSolver(PairwiseCost c);
  ~ExactMmotSolver();
  ExactMmotSolver(ExactMmotSolver&&) noexcept;
  MMOTResult solve(const MarginalSet& m, const conic::SolverConfig& cfg = default_lp_config());

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Pinned-site reduction shared with the SDP relaxations: point-mass sites are
/// removed, their pair costs folded into per-site unary terms on the
/// remaining sites plus a constant among pinned pairs.
struct ReducedCost {
  std::vector<int> free_sites;     // original site indices
  std::vector<int> pinned_sites;   // original site indices
  std::vector<Index> pinned_state; // aligned with pinned_sites
  PairwiseCost pair;               // re-indexed over free sites
  std::vector<VecX> unary;         // per free site
  Real constant = 0;               // ordered-pair cost among pinned sites
};
ReducedCost reduce_pinned(const PairwiseCost& c, const MarginalSet& m, Real tol = 1e-14);

}  // namespace sce::mmot

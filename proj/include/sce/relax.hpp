// 2-marginal and 3-marginal semidefinite relaxations of the pairwise-cost
// MMOT problem, dual-certificate extraction, and the relaxed SCE potential.
#pragma once

#include <array>
#include <optional>
#include <vector>

#include "sce/conic.hpp"
#include "sce/mmot.hpp"
#include "sce/types.hpp"

namespace sce::relax {

using mmot::JointMeasure;
using mmot::MarginalSet;
using mmot::PairwiseCost;

/// Block matrix of 1- and 2-marginals: M_pp = diag(mu_p), M_pq the pair
/// marginal candidates. Symmetric, N_tot x N_tot.
struct MomentMatrix {
  std::vector<Index> sizes;
  MatX m;

  Index offset(int p) const;
  MatX block(int p, int q) const;
};

/// Nonnegative 3-marginal blocks stored once per unordered triple p<q<r;
/// the ordered view is generated by permuting arguments.
struct ThreeMarginalTensor {
  std::vector<Index> sizes;
  std::vector<std::array<int, 3>> triples;
  std::vector<VecX> blocks;  // layout (s_p, s_q, s_r) row-major per stored triple

  int triple_id(int p, int q, int r) const;
  Real value(int p, int q, int r, Index sp, Index sq, Index sr) const;
};

/// Kantorovich-style dual data for the 2-marginal SDP: the PSD coupling Y and
/// potential pairs (phi_pq, psi_pq) for p<q, extended by phi_pq = psi_qp.
struct DualCertificate {
  std::vector<Index> sizes;
  MatX Y;
  std::vector<std::pair<int, int>> pairs;  // p<q, all pairs
  std::vector<VecX> phi, psi;
  std::vector<MatX> cost_blocks;  // C_pq aligned with pairs

  int pair_id(int p, int q) const;
  VecX phi_ext(int r, int p) const;  // phi_rp for any r != p via the extension rule
  MatX Y_block(int p, int q) const;
  MatX Z(int p, int q) const;   // C_pq - Y_pq - phi 1' - 1 psi', the eliminated multiplier
  MatX Xp(int p) const;         // -Y_pp
  Real dual_objective(const MarginalSet& m) const;
  /// Worst entrywise violation of phi 1' + 1 psi' <= C - Y over all pairs.
  Real feasibility_violation() const;
};

enum class RowKind { row_sum, col_sum, diag_pin, slack_link, triple_consistency };

struct RowInfo {
  RowKind kind;
  int p = -1, q = -1, r = -1;  // sites: pair (p,q); r the summed-out site for consistency rows
  Index i = 0, j = 0;          // states within the row's blocks
};

/// A relaxation instance in conic standard form plus the index maps needed to
/// interpret solutions. Variables are laid out [slacks | K | svec(M)].
struct Assembly {
  conic::ConicProblem problem;
  std::vector<Index> sizes;
  std::vector<RowInfo> rows;
  VecX row_scale;
  bool three_marginal = false;
  Index n_slack = 0, n_k = 0;
  std::vector<std::pair<int, int>> slack_pairs;     // per pair p<q, in slack layout order
  std::vector<std::array<int, 3>> k_triples;        // p<q<r, in K layout order
  std::vector<MatX> cost_blocks;                    // C_pq per pair in slack_pairs order
};

Assembly assemble_two_marginal(const PairwiseCost& c, const MarginalSet& m);
Assembly assemble_three_marginal(const PairwiseCost& c, const MarginalSet& m);

/// Rebuild the right-hand side for new marginals of the same sizes.
void refresh_rhs(Assembly& a, const MarginalSet& m);

/// Map the conic duals of a converged solve onto (Y, {phi_pq, psi_pq}).
/// Throws on an unconverged solution or dual infeasibility beyond 10x the
/// stated tolerance.
DualCertificate extract_certificate(const conic::ConicSolution& sol, const Assembly& a,
                                    Real tolerance = 1e-7);

/// d E / d rho_r from the certificate (binary marginals only):
/// 2 sum_{q>r} [phi_rq(1)-phi_rq(0)] + 2 sum_{p<r} [psi_pr(1)-psi_pr(0)]
///   - [Y_rr(1,1) - Y_rr(0,0)].
VecX sdp_gradient(const DualCertificate& cert);

struct FeasibilityReport {
  Real min_eigenvalue = 0;        // of M
  Real m_frobenius = 0;
  Real mp_frobenius = 0;          // |M P|_F for the difference-of-ones matrix P
  Real offdiag_negativity = 0;    // worst negative off-diagonal block entry, as a magnitude
  Real row_sum_violation = 0;
  Real col_sum_violation = 0;
  Real diag_violation = 0;
  Real k_negativity = 0;
  Real k_consistency_violation = 0;

  Real max_violation() const;
};

/// Diagnostics over the primal constraint families; never throws.
FeasibilityReport check_primal_feasibility(const MomentMatrix& m, const ThreeMarginalTensor* k,
                                           const MarginalSet& marginals);

/// The paper's difference-of-ones matrix with columns (1_{N_i}, -1_{N_{i+1}}).
MatX difference_matrix(const std::vector<Index>& sizes);

MomentMatrix moment_matrix_from_joint(const JointMeasure& mu);
ThreeMarginalTensor three_marginals_from_joint(const JointMeasure& mu);

struct RelaxResult {
  Real value = 0;
  bool converged = false;
  MomentMatrix M;                           // original site indexing
  std::optional<ThreeMarginalTensor> K;
  DualCertificate certificate;              // over the assembled (non-pinned) sites
  std::vector<int> certificate_sites;       // assembled site -> original site
  VecX gradient;                            // original indexing, binary marginals
  conic::ConicSolution raw;
};

conic::SolverConfig default_sdp_config();

RelaxResult solve_two_marginal(const PairwiseCost& c, const MarginalSet& m,
                               const conic::SolverConfig& cfg = default_sdp_config());
RelaxResult solve_three_marginal(const PairwiseCost& c, const MarginalSet& m,
                                 const conic::SolverConfig& cfg = default_sdp_config());

/// Reusable relaxation solver: the constraint structure and factorization are
/// built once for a fixed cost and reused across marginal updates, as in the
/// self-consistent field loop. Falls back to one-shot solves when a marginal
/// is pinned at a point mass.
class RelaxSolver {
 public:
  RelaxSolver(PairwiseCost c, bool three_marginal);
  RelaxResult solve(const MarginalSet& m, const conic::SolverConfig& cfg);

 private:
  PairwiseCost cost_;
  bool three_marginal_;
  std::optional<Assembly> assembly_;
  std::optional<conic::Solver> solver_;
};

}  // namespace sce::relax

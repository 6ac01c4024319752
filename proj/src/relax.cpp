#include "sce/relax.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace sce::relax {

namespace {

std::vector<Index> block_offsets(const std::vector<Index>& sizes) {
  std::vector<Index> off(sizes.size() + 1, 0);
  for (size_t p = 0; p < sizes.size(); ++p) off[p + 1] = off[p] + sizes[p];
  return off;
}

bool all_binary(const std::vector<Index>& sizes) {
  return std::all_of(sizes.begin(), sizes.end(), [](Index n) { return n == 2; });
}

}  // namespace

Index MomentMatrix::offset(int p) const {
  Index off = 0;
  for (int q = 0; q < p; ++q) off += sizes[(size_t)q];
  return off;
}

MatX MomentMatrix::block(int p, int q) const {
  return m.block(offset(p), offset(q), sizes[(size_t)p], sizes[(size_t)q]);
}

int ThreeMarginalTensor::triple_id(int p, int q, int r) const {
  std::array<int, 3> key{p, q, r};
  std::sort(key.begin(), key.end());
  for (size_t t = 0; t < triples.size(); ++t)
    if (triples[t] == key) return (int)t;
  return -1;
}

Real ThreeMarginalTensor::value(int p, int q, int r, Index sp, Index sq, Index sr) const {
  std::array<std::pair<int, Index>, 3> entries{{{p, sp}, {q, sq}, {r, sr}}};
  std::sort(entries.begin(), entries.end());
  const int id = triple_id(entries[0].first, entries[1].first, entries[2].first);
  if (id < 0) throw std::invalid_argument("ThreeMarginalTensor: unknown triple");
  const auto& tr = triples[(size_t)id];
  const Index n1 = sizes[(size_t)tr[1]], n2 = sizes[(size_t)tr[2]];
  return blocks[(size_t)id][(entries[0].second * n1 + entries[1].second) * n2 + entries[2].second];
}

int DualCertificate::pair_id(int p, int q) const {
  if (p > q) std::swap(p, q);
  const int L = (int)sizes.size();
  // pairs are stored lexicographically over p<q
  int id = 0;
  for (int a = 0; a < p; ++a) id += L - 1 - a;
  return id + (q - p - 1);
}

VecX DualCertificate::phi_ext(int r, int p) const {
  if (r == p) throw std::invalid_argument("DualCertificate: phi_rp needs r != p");
  return (r < p) ? phi[(size_t)pair_id(r, p)] : psi[(size_t)pair_id(p, r)];
}

MatX DualCertificate::Y_block(int p, int q) const {
  const auto off = block_offsets(sizes);
  return Y.block(off[(size_t)p], off[(size_t)q], sizes[(size_t)p], sizes[(size_t)q]);
}

MatX DualCertificate::Z(int p, int q) const {
  if (p > q) return Z(q, p).transpose();
  const int id = pair_id(p, q);
  return cost_blocks[(size_t)id] - Y_block(p, q) -
         phi[(size_t)id] * VecX::Ones(sizes[(size_t)q]).transpose() -
         VecX::Ones(sizes[(size_t)p]) * psi[(size_t)id].transpose();
}

MatX DualCertificate::Xp(int p) const { return -Y_block(p, p); }

Real DualCertificate::dual_objective(const MarginalSet& m) const {
  Real obj = 0;
  for (size_t id = 0; id < pairs.size(); ++id) {
    const auto [p, q] = pairs[id];
    obj += 2 * (phi[id].dot(m.marginals[(size_t)p]) + psi[id].dot(m.marginals[(size_t)q]));
  }
  const auto off = block_offsets(sizes);
  for (size_t p = 0; p < sizes.size(); ++p)
    for (Index s = 0; s < sizes[p]; ++s) obj -= Y(off[p] + s, off[p] + s) * m.marginals[p][s];
  return obj;
}

Real DualCertificate::feasibility_violation() const {
  Real worst = 0;
  for (size_t id = 0; id < pairs.size(); ++id) {
    const auto [p, q] = pairs[id];
    const MatX viol = phi[id] * VecX::Ones(sizes[(size_t)q]).transpose() +
                      VecX::Ones(sizes[(size_t)p]) * psi[id].transpose() + Y_block(p, q) -
                      cost_blocks[id];
    worst = std::max(worst, viol.maxCoeff());
  }
  return worst;
}

namespace {

struct RowBuilder {
  std::vector<Eigen::Triplet<Real>> triplets;
  std::vector<Real> rhs;
  std::vector<RowInfo> rows;
  std::vector<Real> scales;
  std::vector<std::pair<Index, Real>> current;

  void add(Index col, Real coeff) { current.emplace_back(col, coeff); }
  void finish(const RowInfo& info, Real rhs_value) {
    Real norm2 = 0;
    for (auto& [c, v] : current) norm2 += v * v;
    const Real scale = std::sqrt(norm2);
    const Index row = (Index)rhs.size();
    for (auto& [c, v] : current) triplets.emplace_back(row, c, v / scale);
    rhs.push_back(rhs_value / scale);
    rows.push_back(info);
    scales.push_back(scale);
    current.clear();
  }
};

Assembly assemble(const PairwiseCost& c, const MarginalSet& m, bool three_marginal) {
  m.validate();
  if (c.sizes != m.sizes) throw std::invalid_argument("relax: cost/marginal size mismatch");
  const int L = m.site_count();
  if (three_marginal && L > 24)
    throw std::invalid_argument("relax: triple count unmanageable beyond 24 sites");

  Assembly a;
  a.sizes = m.sizes;
  a.three_marginal = three_marginal;
  const auto off = block_offsets(m.sizes);
  const Index n_tot = off.back();

  for (int p = 0; p < L; ++p)
    for (int q = p + 1; q < L; ++q) {
      a.slack_pairs.emplace_back(p, q);
      a.cost_blocks.push_back(c.block(p, q));
      a.n_slack += m.sizes[(size_t)p] * m.sizes[(size_t)q];
    }
  if (three_marginal)
    for (int p = 0; p < L; ++p)
      for (int q = p + 1; q < L; ++q)
        for (int r = q + 1; r < L; ++r) {
          a.k_triples.push_back({p, q, r});
          a.n_k += m.sizes[(size_t)p] * m.sizes[(size_t)q] * m.sizes[(size_t)r];
        }

  auto& cones = a.problem.cones;
  cones.n_free = 0;
  cones.n_nonneg = a.n_slack + a.n_k;
  cones.psd_side = n_tot;
  const Index psd_off = cones.psd_offset();

  auto svec_col = [&](Index gi, Index gj) {
    if (gi > gj) std::swap(gi, gj);
    return psd_off + svec_index(gi, gj);
  };
  auto svec_coeff = [&](Index gi, Index gj, Real w) { return gi == gj ? w : w / kSqrt2; };

  std::vector<Index> slack_base(a.slack_pairs.size());
  {
    Index base = 0;
    for (size_t id = 0; id < a.slack_pairs.size(); ++id) {
      slack_base[id] = base;
      const auto [p, q] = a.slack_pairs[id];
      base += m.sizes[(size_t)p] * m.sizes[(size_t)q];
    }
  }
  std::vector<Index> k_base(a.k_triples.size());
  {
    Index base = a.n_slack;
    for (size_t id = 0; id < a.k_triples.size(); ++id) {
      k_base[id] = base;
      const auto [p, q, r] = a.k_triples[id];
      base += m.sizes[(size_t)p] * m.sizes[(size_t)q] * m.sizes[(size_t)r];
    }
  }

  RowBuilder rb;

  // Pair marginal sums: M_pq 1 = mu_p and M_pq' 1 = mu_q for p < q.
  for (size_t id = 0; id < a.slack_pairs.size(); ++id) {
    const auto [p, q] = a.slack_pairs[id];
    const Index np = m.sizes[(size_t)p], nq = m.sizes[(size_t)q];
    for (Index i = 0; i < np; ++i) {
      for (Index j = 0; j < nq; ++j)
        rb.add(svec_col(off[(size_t)p] + i, off[(size_t)q] + j),
               svec_coeff(off[(size_t)p] + i, off[(size_t)q] + j, 1.0));
      rb.finish({RowKind::row_sum, p, q, -1, i, 0}, m.marginals[(size_t)p][i]);
    }
    for (Index j = 0; j < nq; ++j) {
      for (Index i = 0; i < np; ++i)
        rb.add(svec_col(off[(size_t)p] + i, off[(size_t)q] + j),
               svec_coeff(off[(size_t)p] + i, off[(size_t)q] + j, 1.0));
      rb.finish({RowKind::col_sum, p, q, -1, 0, j}, m.marginals[(size_t)q][j]);
    }
  }

  // Diagonal blocks pinned to diag(mu_p).
  for (int p = 0; p < L; ++p) {
    const Index np = m.sizes[(size_t)p];
    for (Index i = 0; i < np; ++i)
      for (Index j = i; j < np; ++j) {
        rb.add(svec_col(off[(size_t)p] + i, off[(size_t)p] + j),
               svec_coeff(off[(size_t)p] + i, off[(size_t)p] + j, 1.0));
        rb.finish({RowKind::diag_pin, p, p, -1, i, j}, i == j ? m.marginals[(size_t)p][i] : 0.0);
      }
  }

  // Entrywise nonnegativity of the off-diagonal blocks via linked slacks.
  for (size_t id = 0; id < a.slack_pairs.size(); ++id) {
    const auto [p, q] = a.slack_pairs[id];
    const Index np = m.sizes[(size_t)p], nq = m.sizes[(size_t)q];
    for (Index i = 0; i < np; ++i)
      for (Index j = 0; j < nq; ++j) {
        rb.add(slack_base[id] + i * nq + j, 1.0);
        rb.add(svec_col(off[(size_t)p] + i, off[(size_t)q] + j),
               svec_coeff(off[(size_t)p] + i, off[(size_t)q] + j, -1.0));
        rb.finish({RowKind::slack_link, p, q, -1, i, j}, 0.0);
      }
  }

  // Local consistency of the 3-marginals with each pair block.
  if (three_marginal)
    for (size_t id = 0; id < a.k_triples.size(); ++id) {
      const auto [p, q, r] = a.k_triples[id];
      const Index np = m.sizes[(size_t)p], nq = m.sizes[(size_t)q], nr = m.sizes[(size_t)r];
      auto kcol = [&](Index sp, Index sq, Index sr) {
        return k_base[id] + (sp * nq + sq) * nr + sr;
      };
      for (Index sp = 0; sp < np; ++sp)
        for (Index sq = 0; sq < nq; ++sq) {
          for (Index sr = 0; sr < nr; ++sr) rb.add(kcol(sp, sq, sr), 1.0);
          rb.add(svec_col(off[(size_t)p] + sp, off[(size_t)q] + sq),
                 svec_coeff(off[(size_t)p] + sp, off[(size_t)q] + sq, -1.0));
          rb.finish({RowKind::triple_consistency, p, q, r, sp, sq}, 0.0);
        }
      for (Index sp = 0; sp < np; ++sp)
        for (Index sr = 0; sr < nr; ++sr) {
          for (Index sq = 0; sq < nq; ++sq) rb.add(kcol(sp, sq, sr), 1.0);
          rb.add(svec_col(off[(size_t)p] + sp, off[(size_t)r] + sr),
                 svec_coeff(off[(size_t)p] + sp, off[(size_t)r] + sr, -1.0));
          rb.finish({RowKind::triple_consistency, p, r, q, sp, sr}, 0.0);
        }
      for (Index sq = 0; sq < nq; ++sq)
        for (Index sr = 0; sr < nr; ++sr) {
          for (Index sp = 0; sp < np; ++sp) rb.add(kcol(sp, sq, sr), 1.0);
          rb.add(svec_col(off[(size_t)q] + sq, off[(size_t)r] + sr),
                 svec_coeff(off[(size_t)q] + sq, off[(size_t)r] + sr, -1.0));
          rb.finish({RowKind::triple_consistency, q, r, p, sq, sr}, 0.0);
        }
    }

  const Index n_rows = (Index)rb.rhs.size();
  a.problem.A.resize(n_rows, cones.n_total());
  a.problem.A.setFromTriplets(rb.triplets.begin(), rb.triplets.end());
  a.problem.b = Eigen::Map<VecX>(rb.rhs.data(), n_rows);
  a.rows = std::move(rb.rows);
  a.row_scale = Eigen::Map<VecX>(rb.scales.data(), n_rows);

  // Objective Tr(C M) as svec(C) on the PSD block.
  MatX cfull = MatX::Zero(n_tot, n_tot);
  for (size_t id = 0; id < a.slack_pairs.size(); ++id) {
    const auto [p, q] = a.slack_pairs[id];
    cfull.block(off[(size_t)p], off[(size_t)q], m.sizes[(size_t)p], m.sizes[(size_t)q]) =
        a.cost_blocks[id];
    cfull.block(off[(size_t)q], off[(size_t)p], m.sizes[(size_t)q], m.sizes[(size_t)p]) =
        a.cost_blocks[id].transpose();
  }
  a.problem.c = VecX::Zero(cones.n_total());
  a.problem.c.segment(psd_off, svec_size(n_tot)) = matrix_to_svec<Real>(cfull);
  return a;
}

}  // namespace

Assembly assemble_two_marginal(const PairwiseCost& c, const MarginalSet& m) {
  return assemble(c, m, false);
}

Assembly assemble_three_marginal(const PairwiseCost& c, const MarginalSet& m) {
  return assemble(c, m, true);
}

void refresh_rhs(Assembly& a, const MarginalSet& m) {
  if (m.sizes != a.sizes) throw std::invalid_argument("refresh_rhs: size mismatch");
  for (Index row = 0; row < (Index)a.rows.size(); ++row) {
    const RowInfo& info = a.rows[(size_t)row];
    Real value = 0;
    switch (info.kind) {
      case RowKind::row_sum: value = m.marginals[(size_t)info.p][info.i]; break;
      case RowKind::col_sum: value = m.marginals[(size_t)info.q][info.j]; break;
      case RowKind::diag_pin:
        value = (info.i == info.j) ? m.marginals[(size_t)info.p][info.i] : 0.0;
        break;
      default: value = 0.0; break;
    }
    a.problem.b[row] = value / a.row_scale[row];
  }
}

DualCertificate extract_certificate(const conic::ConicSolution& sol, const Assembly& a,
                                    Real tolerance) {
  if (sol.status != conic::SolveStatus::converged)
    throw std::invalid_argument("extract_certificate: solution did not converge");

  DualCertificate cert;
  cert.sizes = a.sizes;
  cert.pairs = a.slack_pairs;
  cert.cost_blocks = a.cost_blocks;
  const Index side = a.problem.cones.psd_side;
  cert.Y = svec_to_matrix<Real>(VecX(sol.s.segment(a.problem.cones.psd_offset(), svec_size(side))),
                                side);
  cert.phi.resize(cert.pairs.size());
  cert.psi.resize(cert.pairs.size());
  for (size_t id = 0; id < cert.pairs.size(); ++id) {
    const auto [p, q] = cert.pairs[id];
    cert.phi[id] = VecX::Zero(a.sizes[(size_t)p]);
    cert.psi[id] = VecX::Zero(a.sizes[(size_t)q]);
  }
  for (Index row = 0; row < (Index)a.rows.size(); ++row) {
    const RowInfo& info = a.rows[(size_t)row];
    if (info.kind != RowKind::row_sum && info.kind != RowKind::col_sum) continue;
    const int id = cert.pair_id(info.p, info.q);
    const Real dual = sol.y[row] / a.row_scale[row] / 2;
    if (info.kind == RowKind::row_sum)
      cert.phi[(size_t)id][info.i] = dual;
    else
      cert.psi[(size_t)id][info.j] = dual;
  }

  // The pairwise Kantorovich inequality characterizes the 2-marginal dual
  // only; in the 3-marginal problem the consistency multipliers also act on
  // the M coordinates, so its dual feasibility is the generic conic one
  // (already enforced by the converged status).
  if (!a.three_marginal) {
    Real scale = 1;
    for (const auto& blk : cert.cost_blocks)
      if (blk.size()) scale = std::max(scale, blk.cwiseAbs().maxCoeff());
    if (cert.Y.size()) scale = std::max(scale, cert.Y.cwiseAbs().maxCoeff());
    if (cert.feasibility_violation() > 10 * tolerance * scale)
      throw std::runtime_error("extract_certificate: dual infeasibility beyond 10x tolerance");
  }
  return cert;
}

VecX sdp_gradient(const DualCertificate& cert) {
  if (!all_binary(cert.sizes))
    throw std::invalid_argument("sdp_gradient: formula requires binary marginals");
  const int L = (int)cert.sizes.size();
  const auto off = block_offsets(cert.sizes);
  VecX g = VecX::Zero(L);
  for (size_t id = 0; id < cert.pairs.size(); ++id) {
    const auto [p, q] = cert.pairs[id];
    g[p] += 2 * (cert.phi[id][1] - cert.phi[id][0]);
    g[q] += 2 * (cert.psi[id][1] - cert.psi[id][0]);
  }
  for (int r = 0; r < L; ++r)
    g[r] -= cert.Y(off[(size_t)r] + 1, off[(size_t)r] + 1) - cert.Y(off[(size_t)r], off[(size_t)r]);
  return g;
}

MatX difference_matrix(const std::vector<Index>& sizes) {
  const auto off = block_offsets(sizes);
  const int L = (int)sizes.size();
  MatX p = MatX::Zero(off.back(), std::max(0, L - 1));
  for (int i = 0; i + 1 < L; ++i) {
    p.block(off[(size_t)i], i, sizes[(size_t)i], 1).setOnes();
    p.block(off[(size_t)i + 1], i, sizes[(size_t)i + 1], 1).setConstant(-1.0);
  }
  return p;
}

Real FeasibilityReport::max_violation() const {
  return std::max({std::max(-min_eigenvalue, Real(0)), mp_frobenius, offdiag_negativity,
                   row_sum_violation, col_sum_violation, diag_violation, k_negativity,
                   k_consistency_violation});
}

FeasibilityReport check_primal_feasibility(const MomentMatrix& m, const ThreeMarginalTensor* k,
                                           const MarginalSet& marginals) {
  FeasibilityReport rep;
  const int L = (int)m.sizes.size();
  Eigen::SelfAdjointEigenSolver<MatX> es(m.m, Eigen::EigenvaluesOnly);
  rep.min_eigenvalue = es.eigenvalues()[0];
  rep.m_frobenius = m.m.norm();
  rep.mp_frobenius = (m.m * difference_matrix(m.sizes)).norm();

  for (int p = 0; p < L; ++p) {
    const MatX diag_diff =
        m.block(p, p) - MatX(marginals.marginals[(size_t)p].asDiagonal());
    rep.diag_violation = std::max(rep.diag_violation, diag_diff.cwiseAbs().maxCoeff());
    for (int q = p + 1; q < L; ++q) {
      const MatX blk = m.block(p, q);
      rep.offdiag_negativity = std::max(rep.offdiag_negativity, std::max(-blk.minCoeff(), Real(0)));
      rep.row_sum_violation =
          std::max(rep.row_sum_violation,
                   (blk.rowwise().sum() - marginals.marginals[(size_t)p]).cwiseAbs().maxCoeff());
      rep.col_sum_violation =
          std::max(rep.col_sum_violation,
                   (blk.colwise().sum().transpose() - marginals.marginals[(size_t)q])
                       .cwiseAbs()
                       .maxCoeff());
    }
  }

  if (k) {
    for (size_t id = 0; id < k->triples.size(); ++id) {
      const auto [p, q, r] = k->triples[id];
      const Index np = k->sizes[(size_t)p], nq = k->sizes[(size_t)q], nr = k->sizes[(size_t)r];
      const VecX& blk = k->blocks[id];
      rep.k_negativity = std::max(rep.k_negativity, std::max(-blk.minCoeff(), Real(0)));
      MatX sum_r = MatX::Zero(np, nq), sum_q = MatX::Zero(np, nr), sum_p = MatX::Zero(nq, nr);
      for (Index sp = 0; sp < np; ++sp)
        for (Index sq = 0; sq < nq; ++sq)
          for (Index sr = 0; sr < nr; ++sr) {
            const Real v = blk[(sp * nq + sq) * nr + sr];
            sum_r(sp, sq) += v;
            sum_q(sp, sr) += v;
            sum_p(sq, sr) += v;
          }
      rep.k_consistency_violation = std::max(
          {rep.k_consistency_violation, (sum_r - m.block(p, q)).cwiseAbs().maxCoeff(),
           (sum_q - m.block(p, r)).cwiseAbs().maxCoeff(),
           (sum_p - m.block(q, r)).cwiseAbs().maxCoeff()});
    }
  }
  return rep;
}

MomentMatrix moment_matrix_from_joint(const JointMeasure& mu) {
  MomentMatrix out;
  out.sizes = mu.sizes;
  const auto off = block_offsets(mu.sizes);
  out.m = MatX::Zero(off.back(), off.back());
  const int L = (int)mu.sizes.size();
  for (int p = 0; p < L; ++p) {
    const VecX mp = mmot::marginalize(mu, {p}).values;
    out.m.block(off[(size_t)p], off[(size_t)p], mu.sizes[(size_t)p], mu.sizes[(size_t)p]) =
        MatX(mp.asDiagonal());
    for (int q = p + 1; q < L; ++q) {
      const MatX mpq = mmot::marginalize(mu, {p, q}).as_matrix();
      out.m.block(off[(size_t)p], off[(size_t)q], mu.sizes[(size_t)p], mu.sizes[(size_t)q]) = mpq;
      out.m.block(off[(size_t)q], off[(size_t)p], mu.sizes[(size_t)q], mu.sizes[(size_t)p]) =
          mpq.transpose();
    }
  }
  return out;
}

ThreeMarginalTensor three_marginals_from_joint(const JointMeasure& mu) {
  ThreeMarginalTensor out;
  out.sizes = mu.sizes;
  const int L = (int)mu.sizes.size();
  for (int p = 0; p < L; ++p)
    for (int q = p + 1; q < L; ++q)
      for (int r = q + 1; r < L; ++r) {
        out.triples.push_back({p, q, r});
        out.blocks.push_back(mmot::marginalize(mu, {p, q, r}).values);
      }
  return out;
}

conic::SolverConfig default_sdp_config() {
  conic::SolverConfig cfg;
  cfg.tolerance = 1e-7;
  return cfg;
}

namespace {

/// Shared post-processing: value correction for eliminated sites, moment
/// matrix re-insertion, certificate extraction, gradient assembly.
RelaxResult finish_solve(const PairwiseCost& c, const MarginalSet& m,
                         const mmot::ReducedCost& red, const Assembly* a,
                         conic::ConicSolution sol, Real tolerance, bool three_marginal) {
  RelaxResult out;
  out.raw = std::move(sol);
  out.converged = red.free_sites.empty() || out.raw.status == conic::SolveStatus::converged;
  out.certificate_sites = red.free_sites;
  const int L = m.site_count();
  const auto off = block_offsets(m.sizes);
  const bool binary = all_binary(m.sizes);

  Real unary_term = 0;
  for (size_t f = 0; f < red.free_sites.size(); ++f)
    unary_term += red.unary[f].dot(m.marginals[(size_t)red.free_sites[f]]);
  out.value = (red.free_sites.empty() ? 0.0 : out.raw.primal_objective) + unary_term + red.constant;

  // Moment matrix over the original sites; pinned blocks are the forced
  // outer products of marginals.
  out.M.sizes = m.sizes;
  out.M.m = MatX::Zero(off.back(), off.back());
  std::vector<int> to_free(L, -1);
  for (size_t f = 0; f < red.free_sites.size(); ++f) to_free[(size_t)red.free_sites[f]] = (int)f;
  MatX m_free;
  std::vector<Index> off_free;
  if (a) {
    m_free = svec_to_matrix<Real>(
        VecX(out.raw.x.segment(a->problem.cones.psd_offset(), svec_size(a->problem.cones.psd_side))),
        a->problem.cones.psd_side);
    off_free = block_offsets(a->sizes);
  }
  for (int p = 0; p < L; ++p) {
    for (int q = 0; q < L; ++q) {
      MatX blk;
      if (p == q) {
        blk = MatX(m.marginals[(size_t)p].asDiagonal());
        if (to_free[(size_t)p] >= 0)
          blk = m_free.block(off_free[(size_t)to_free[(size_t)p]], off_free[(size_t)to_free[(size_t)p]],
                             m.sizes[(size_t)p], m.sizes[(size_t)p]);
      } else if (to_free[(size_t)p] >= 0 && to_free[(size_t)q] >= 0) {
        blk = m_free.block(off_free[(size_t)to_free[(size_t)p]], off_free[(size_t)to_free[(size_t)q]],
                           m.sizes[(size_t)p], m.sizes[(size_t)q]);
      } else {
        blk = m.marginals[(size_t)p] * m.marginals[(size_t)q].transpose();
      }
      out.M.m.block(off[(size_t)p], off[(size_t)q], m.sizes[(size_t)p], m.sizes[(size_t)q]) = blk;
    }
  }

  if (three_marginal) {
    ThreeMarginalTensor k;
    k.sizes = m.sizes;
    for (int p = 0; p < L; ++p)
      for (int q = p + 1; q < L; ++q)
        for (int r = q + 1; r < L; ++r) {
          k.triples.push_back({p, q, r});
          const Index np = m.sizes[(size_t)p], nq = m.sizes[(size_t)q], nr = m.sizes[(size_t)r];
          VecX blk(np * nq * nr);
          const int fp = to_free[(size_t)p], fq = to_free[(size_t)q], fr = to_free[(size_t)r];
          const int n_free_members = (fp >= 0) + (fq >= 0) + (fr >= 0);
          if (n_free_members == 3 && a) {
            // Locate the stored block of the assembled problem.
            Index base = a->n_slack;
            for (const auto& tr : a->k_triples) {
              const Index sz = a->sizes[(size_t)tr[0]] * a->sizes[(size_t)tr[1]] *
                               a->sizes[(size_t)tr[2]];
              if (tr == std::array<int, 3>{fp, fq, fr}) break;
              base += sz;
            }
            blk = out.raw.x.segment(a->problem.cones.n_free + base, np * nq * nr).cwiseMax(0.0);
          } else {
            // At least one pinned member: the block factorizes.
            for (Index sp = 0; sp < np; ++sp)
              for (Index sq = 0; sq < nq; ++sq)
                for (Index sr = 0; sr < nr; ++sr) {
                  Real v = 1;
                  if (n_free_members == 2) {
                    if (fp < 0)
                      v = m.marginals[(size_t)p][sp] *
                          out.M.block(q, r)(sq, sr);
                    else if (fq < 0)
                      v = m.marginals[(size_t)q][sq] * out.M.block(p, r)(sp, sr);
                    else
                      v = m.marginals[(size_t)r][sr] * out.M.block(p, q)(sp, sq);
                  } else {
                    v = m.marginals[(size_t)p][sp] * m.marginals[(size_t)q][sq] *
                        m.marginals[(size_t)r][sr];
                  }
                  blk[(sp * nq + sq) * nr + sr] = v;
                }
          }
          k.blocks.push_back(blk);
        }
    out.K = std::move(k);
  }

  if (!red.free_sites.empty() && out.converged && a)
    out.certificate = extract_certificate(out.raw, *a, tolerance);

  if (binary && out.converged) {
    out.gradient = VecX::Zero(L);
    if (!red.free_sites.empty() && a) {
      const VecX g_free = sdp_gradient(out.certificate);
      for (size_t f = 0; f < red.free_sites.size(); ++f)
        out.gradient[red.free_sites[f]] = g_free[(Index)f] + (red.unary[f][1] - red.unary[f][0]);
    }
    for (size_t k = 0; k < red.pinned_sites.size(); ++k) {
      const int r = red.pinned_sites[k];
      Real g = 0;
      for (int f : red.free_sites) {
        const MatX blk = c.block(r, f);
        g += 2 * (blk.row(1) - blk.row(0)).dot(m.marginals[(size_t)f]);
      }
      for (size_t k2 = 0; k2 < red.pinned_sites.size(); ++k2) {
        if (k2 == k) continue;
        const MatX blk = c.block(r, red.pinned_sites[k2]);
        g += 2 * (blk(1, red.pinned_state[k2]) - blk(0, red.pinned_state[k2]));
      }
      out.gradient[r] = g;
    }
  }
  return out;
}

RelaxResult solve_relax(const PairwiseCost& c, const MarginalSet& m, bool three,
                        const conic::SolverConfig& cfg) {
  m.validate();
  const mmot::ReducedCost red = mmot::reduce_pinned(c, m);
  if (red.free_sites.empty()) {
    conic::ConicSolution empty;
    empty.status = conic::SolveStatus::converged;
    return finish_solve(c, m, red, nullptr, std::move(empty), cfg.tolerance, three);
  }
  MarginalSet m_free;
  m_free.sizes = red.pair.sizes;
  for (int p : red.free_sites) m_free.marginals.push_back(m.marginals[(size_t)p]);
  Assembly a = assemble(red.pair, m_free, three);
  conic::Solver solver(a.problem);
  conic::ConicSolution sol = solver.solve(cfg);
  return finish_solve(c, m, red, &a, std::move(sol), cfg.tolerance, three);
}

}  // namespace

RelaxResult solve_two_marginal(const PairwiseCost& c, const MarginalSet& m,
                               const conic::SolverConfig& cfg) {
  return solve_relax(c, m, false, cfg);
}

RelaxResult solve_three_marginal(const PairwiseCost& c, const MarginalSet& m,
                                 const conic::SolverConfig& cfg) {
  return solve_relax(c, m, true, cfg);
}

RelaxSolver::RelaxSolver(PairwiseCost c, bool three_marginal)
    : cost_(std::move(c)), three_marginal_(three_marginal) {}

RelaxResult RelaxSolver::solve(const MarginalSet& m, const conic::SolverConfig& cfg) {
  const mmot::ReducedCost red = mmot::reduce_pinned(cost_, m);
  if (!red.pinned_sites.empty())
    return three_marginal_ ? solve_three_marginal(cost_, m, cfg) : solve_two_marginal(cost_, m, cfg);
  if (!assembly_) {
    assembly_ = assemble(cost_, m, three_marginal_);
    solver_.emplace(assembly_->problem);
  } else {
    refresh_rhs(*assembly_, m);
    solver_->set_rhs(assembly_->problem.b);
  }
  conic::ConicSolution sol = solver_->solve(cfg);
  return finish_solve(cost_, m, red, &*assembly_, std::move(sol), cfg.tolerance, three_marginal_);
}

}  // namespace sce::relax

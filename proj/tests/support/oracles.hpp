// Test-only oracles, independent of the solver paths they check:
// vertex enumeration for LPs, a brute-force Fock-space Hamiltonian, and
// random instance generators.
#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <optional>
#include <random>
#include <stdexcept>
#include <vector>

#include "sce/mmot.hpp"
#include "sce/model.hpp"
#include "sce/types.hpp"

namespace sce::testing {

/// Exhaustive basic-feasible-solution enumeration for
///   min c'x  s.t.  Ax = b, x >= 0.
/// Returns the optimal value; throws if no feasible vertex exists.
inline Real vertex_enumeration_lp(const MatX& a, const VecX& b, const VecX& c) {
  const Index n = a.cols();

  // Reduce to independent rows.
  Eigen::ColPivHouseholderQR<MatX> rowqr(a.transpose());
  rowqr.setThreshold(1e-10);
  const Index rank = rowqr.rank();
  std::vector<Index> keep;
  {
    // Select pivoting rows from the QR permutation.
    const auto perm = rowqr.colsPermutation().indices();
    for (Index i = 0; i < rank; ++i) keep.push_back(perm[i]);
    std::sort(keep.begin(), keep.end());
  }
  MatX ar(rank, n);
  VecX br(rank);
  for (Index i = 0; i < rank; ++i) {
    ar.row(i) = a.row(keep[(size_t)i]);
    br[i] = b[keep[(size_t)i]];
  }

  std::optional<Real> best;
  std::vector<Index> cols((size_t)rank);
  // Enumerate all rank-subsets of columns.
  std::vector<Index> idx((size_t)rank);
  for (Index i = 0; i < rank; ++i) idx[(size_t)i] = i;
  if (rank == 0) return 0;
  for (;;) {
    MatX basis(rank, rank);
    for (Index j = 0; j < rank; ++j) basis.col(j) = ar.col(idx[(size_t)j]);
    Eigen::FullPivLU<MatX> lu(basis);
    if (lu.isInvertible()) {
      const VecX xb = lu.solve(br);
      if ((basis * xb - br).cwiseAbs().maxCoeff() < 1e-9 && xb.minCoeff() > -1e-9) {
        Real value = 0;
        for (Index j = 0; j < rank; ++j) value += c[idx[(size_t)j]] * std::max(xb[j], Real(0));
        if (!best || value < *best) best = value;
      }
    }
    // next combination
    Index k = rank;
    while (k > 0) {
      --k;
      if (idx[(size_t)k] < n - (rank - k)) {
        ++idx[(size_t)k];
        for (Index j = k + 1; j < rank; ++j) idx[(size_t)j] = idx[(size_t)j - 1] + 1;
        break;
      }
      if (k == 0) {
        if (!best) throw std::runtime_error("vertex_enumeration_lp: infeasible");
        return *best;
      }
    }
    if (k == 0 && idx[0] >= n - rank + 1) {
      if (!best) throw std::runtime_error("vertex_enumeration_lp: infeasible");
      return *best;
    }
  }
}

/// Exact MMOT value by vertex enumeration over the transportation polytope.
inline Real mmot_value_by_enumeration(const mmot::PairwiseCost& c, const mmot::MarginalSet& m) {
  const int L = m.site_count();
  const Index total = m.joint_size();
  mmot::JointMeasure layout;
  layout.sizes = m.sizes;

  VecX cost(total);
  std::vector<Index> state;
  for (Index flat = 0; flat < total; ++flat) {
    layout.unflatten(flat, state);
    cost[flat] = c.joint_cost(state);
  }
  Index rows = 0;
  for (int p = 0; p < L; ++p) rows += m.sizes[(size_t)p];
  MatX a = MatX::Zero(rows, total);
  VecX b(rows);
  Index row = 0;
  for (int p = 0; p < L; ++p) {
    for (Index s = 0; s < m.sizes[(size_t)p]; ++s, ++row) b[row] = m.marginals[(size_t)p][s];
  }
  for (Index flat = 0; flat < total; ++flat) {
    layout.unflatten(flat, state);
    Index base = 0;
    for (int p = 0; p < L; ++p) {
      a(base + state[(size_t)p], flat) = 1;
      base += m.sizes[(size_t)p];
    }
  }
  return vertex_enumeration_lp(a, b, cost);
}

/// Full 2^L Hamiltonian assembled by literal application of the creation and
/// annihilation operator definitions, one operator at a time.
inline MatX full_fock_hamiltonian(const model::HamiltonianSpec& h) {
  const int L = h.L;
  const Index dim = Index(1) << L;
  MatX ham = MatX::Zero(dim, dim);

  auto apply_annihilate = [&](int p, VecX& v) {
    VecX out = VecX::Zero(dim);
    for (Index s = 0; s < dim; ++s) {
      if (v[s] == 0 || !((s >> p) & 1)) continue;
      int parity = 0;
      for (int q = 0; q < p; ++q) parity ^= (int)((s >> q) & 1);
      out[s ^ (Index(1) << p)] += (parity ? -1.0 : 1.0) * v[s];
    }
    v = out;
  };
  auto apply_create = [&](int p, VecX& v) {
    VecX out = VecX::Zero(dim);
    for (Index s = 0; s < dim; ++s) {
      if (v[s] == 0 || ((s >> p) & 1)) continue;
      int parity = 0;
      for (int q = 0; q < p; ++q) parity ^= (int)((s >> q) & 1);
      out[s | (Index(1) << p)] += (parity ? -1.0 : 1.0) * v[s];
    }
    v = out;
  };

  for (Index col = 0; col < dim; ++col) {
    VecX acc = VecX::Zero(dim);
    for (int p = 0; p < L; ++p)
      for (int q = 0; q < L; ++q) {
        if (h.t(p, q) != 0) {
          VecX v = VecX::Zero(dim);
          v[col] = 1;
          apply_annihilate(q, v);
          apply_create(p, v);
          acc += h.t(p, q) * v;
        }
      }
    for (int p = 0; p < L; ++p) {
      if (((col >> p) & 1)) acc[col] += h.w[p];
      for (int q = 0; q < L; ++q)
        if (((col >> p) & 1) && ((col >> q) & 1)) acc[col] += h.v(p, q);
    }
    ham.col(col) = acc;
  }
  return ham;
}

/// Random interior density with entries in [lo, hi].
inline VecX random_density(std::mt19937& rng, int L, Real lo = 0.15, Real hi = 0.85) {
  std::uniform_real_distribution<Real> u(lo, hi);
  VecX rho(L);
  for (int p = 0; p < L; ++p) rho[p] = u(rng);
  return rho;
}

/// Random symmetric nonnegative interaction with zero diagonal.
inline MatX random_interaction(std::mt19937& rng, int L, Real scale = 1.0) {
  std::uniform_real_distribution<Real> u(0.0, scale);
  MatX v = MatX::Zero(L, L);
  for (int p = 0; p < L; ++p)
    for (int q = p + 1; q < L; ++q) v(p, q) = v(q, p) = u(rng);
  return v;
}

}  // namespace sce::testing

#include "sce/model.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

namespace sce::model {

namespace {

constexpr int kMaxSites = 20;
constexpr Index kDenseSectorCap = 4000;

int parity_below(std::uint32_t s, int p) { return std::popcount(s & ((1u << p) - 1u)) & 1; }

}  // namespace

void HamiltonianSpec::validate() const {
  if (L < 1) throw std::invalid_argument("model: site count must be >= 1");
  if (t.rows() != L || t.cols() != L || v.rows() != L || v.cols() != L || w.size() != L)
    throw std::invalid_argument("model: dimension mismatch in Hamiltonian spec");
  const Real scale_t = std::max(Real(1), t.cwiseAbs().maxCoeff());
  const Real scale_v = std::max(Real(1), v.cwiseAbs().maxCoeff());
  if ((t - t.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale_t)
    throw std::invalid_argument("model: hopping matrix must be symmetric");
  if ((v - v.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale_v)
    throw std::invalid_argument("model: interaction matrix must be symmetric");
  for (int p = 0; p < L; ++p)
    if (std::abs(t(p, p)) > 0 || std::abs(v(p, p)) > 0)
      throw std::invalid_argument("model: diagonal entries of t and v must be zero");
}

HamiltonianSpec build_spinless_chain(int L, Real U, Profile profile) {
  if (L < 2) throw std::invalid_argument("build_spinless_chain: L must be >= 2");
  HamiltonianSpec h;
  h.L = L;
  h.t = MatX::Zero(L, L);
  h.w = VecX::Zero(L);
  h.v = MatX::Zero(L, L);
  for (int p = 0; p + 1 < L; ++p) h.t(p, p + 1) = h.t(p + 1, p) = 1.0;

  std::vector<Real> tail;
  switch (profile) {
    case Profile::NN: tail = {U / 2}; break;
    case Profile::NNN: tail = {U / 2, U / 40}; break;
    case Profile::NNNN: tail = {U / 2, U / 20, U / 200}; break;
  }
  for (int p = 0; p < L; ++p)
    for (int d = 1; d <= (int)tail.size(); ++d)
      if (p + d < L) h.v(p, p + d) = h.v(p + d, p) = tail[d - 1];
  return h;
}

HamiltonianSpec build_spinful_lattice(int Lx, int Ly, Real U, Real V) {
  if (Lx < 1 || Ly < 1) throw std::invalid_argument("build_spinful_lattice: dimensions must be >= 1");
  const int ns = Lx * Ly;  // spatial sites
  const int L = 2 * ns;
  HamiltonianSpec h;
  h.L = L;
  h.t = MatX::Zero(L, L);
  h.w = VecX::Zero(L);
  h.v = MatX::Zero(L, L);

  auto spatial = [&](int i, int j) { return j * Lx + i; };  // zero-based grid coordinates

  std::vector<std::pair<int, int>> bonds;
  for (int j = 0; j < Ly; ++j)
    for (int i = 0; i < Lx; ++i) {
      if (i + 1 < Lx) bonds.emplace_back(spatial(i, j), spatial(i + 1, j));
      if (j + 1 < Ly) bonds.emplace_back(spatial(i, j), spatial(i, j + 1));
    }

  for (auto [a, b] : bonds)
    for (int spin = 0; spin < 2; ++spin) {
      const int p = a + spin * ns, q = b + spin * ns;
      h.t(p, q) = h.t(q, p) = -1.0;
    }

  // Ordered-pair convention: each unordered pair carries half the coefficient.
  for (int m = 0; m < ns; ++m) {
    h.v(m, m + ns) = h.v(m + ns, m) = U / 2;
  }
  for (auto [a, b] : bonds)
    for (int sa = 0; sa < 2; ++sa)
      for (int sb = 0; sb < 2; ++sb) {
        const int p = a + sa * ns, q = b + sb * ns;
        h.v(p, q) += V / 2;
        h.v(q, p) += V / 2;
      }
  return h;
}

std::vector<std::uint32_t> sector_states(int L, int N) {
  std::vector<std::uint32_t> states;
  if (N == 0) {
    states.push_back(0u);
    return states;
  }
  // Gosper's hack walks the N-subsets in increasing integer order.
  std::uint32_t s = (1u << N) - 1u;
  const std::uint32_t limit = (L >= 32) ? ~0u : (1u << L);
  while (s < limit) {
    states.push_back(s);
    const std::uint32_t c = s & (~s + 1u);
    const std::uint32_t r = s + c;
    s = (((r ^ s) >> 2) / c) | r;
  }
  return states;
}

Eigen::SparseMatrix<Real> sector_hamiltonian(const HamiltonianSpec& h,
                                             const std::vector<std::uint32_t>& states) {
  const int L = h.L;
  const Index dim = (Index)states.size();
  std::vector<Eigen::Triplet<Real>> trip;
  trip.reserve((size_t)dim * (size_t)(L + 1));

  auto locate = [&](std::uint32_t s) {
    return (Index)(std::lower_bound(states.begin(), states.end(), s) - states.begin());
  };

  for (Index k = 0; k < dim; ++k) {
    const std::uint32_t s = states[k];
    Real diag = 0;
    for (int p = 0; p < L; ++p) {
      if (!((s >> p) & 1u)) continue;
      diag += h.w[p];
      for (int q = 0; q < L; ++q)
        if (q != p && ((s >> q) & 1u)) diag += h.v(p, q);
    }
    if (diag != 0) trip.emplace_back(k, k, diag);

    // t_pq a+_p a_q with q occupied, p empty.
    for (int q = 0; q < L; ++q) {
      if (!((s >> q) & 1u)) continue;
      const int sign_q = parity_below(s, q);
      const std::uint32_t s1 = s ^ (1u << q);
      for (int p = 0; p < L; ++p) {
        if (p == q || h.t(p, q) == 0 || ((s1 >> p) & 1u)) continue;
        const int sign_p = parity_below(s1, p);
        const std::uint32_t s2 = s1 | (1u << p);
        const Real amp = h.t(p, q) * ((sign_q ^ sign_p) ? -1.0 : 1.0);
        trip.emplace_back(locate(s2), k, amp);
      }
    }
  }

  Eigen::SparseMatrix<Real> mat(dim, dim);
  mat.setFromTriplets(trip.begin(), trip.end());
  return mat;
}

std::pair<Real, VecX> lanczos_smallest(const Eigen::SparseMatrix<Real>& h, Real tol,
                                       Real* second_lowest) {
  const Index dim = h.rows();
  const int max_basis = (int)std::min<Index>(dim, 250);
  const int max_restart = 300;

  std::mt19937 rng(0x5ce0001u);
  std::uniform_real_distribution<Real> un(-1.0, 1.0);
  VecX v0(dim);
  for (Index i = 0; i < dim; ++i) v0[i] = un(rng);
  v0.normalize();

  Real theta = 0;
  VecX x = v0;
  for (int restart = 0; restart < max_restart; ++restart) {
    MatX basis(dim, max_basis);
    VecX alpha(max_basis), beta(max_basis);
    basis.col(0) = x.normalized();
    int k = 0;
    for (; k < max_basis; ++k) {
      VecX w = h * basis.col(k);
      alpha[k] = basis.col(k).dot(w);
      w -= alpha[k] * basis.col(k);
      if (k > 0) w -= beta[k - 1] * basis.col(k - 1);
      // Two passes of full reorthogonalization.
      for (int pass = 0; pass < 2; ++pass)
        for (int j = 0; j <= k; ++j) w -= basis.col(j).dot(w) * basis.col(j);
      const Real nrm = w.norm();
      if (k + 1 == max_basis) break;
      if (nrm < 1e-13) {
        break;  // invariant subspace
      }
      beta[k] = nrm;
      basis.col(k + 1) = w / nrm;
    }
    const int m = std::min(k + 1, max_basis);
    MatX tmat = MatX::Zero(m, m);
    for (int i = 0; i < m; ++i) {
      tmat(i, i) = alpha[i];
      if (i + 1 < m) tmat(i, i + 1) = tmat(i + 1, i) = beta[i];
    }
    Eigen::SelfAdjointEigenSolver<MatX> es(tmat);
    theta = es.eigenvalues()[0];
    x = basis.leftCols(m) * es.eigenvectors().col(0);
    x.normalize();
    if (second_lowest && m > 1) *second_lowest = es.eigenvalues()[1];
    const Real resid = (h * x - theta * x).norm();
    if (resid <= tol * std::max(Real(1), std::abs(theta))) return {theta, x};
  }
  return {theta, x};  // best effort; callers check residual-level invariants in tests
}

EDResult exact_ground_state(const HamiltonianSpec& h, int N) {
  h.validate();
  if (h.L > kMaxSites) throw std::invalid_argument("exact_ground_state: L exceeds the 20-site cap");
  if (N < 0 || N > h.L) throw std::invalid_argument("exact_ground_state: N out of range");

  const auto states = sector_states(h.L, N);
  const Index dim = (Index)states.size();

  EDResult out;
  out.sector_dim = dim;

  VecX ground(dim);
  Real e0 = 0, e1 = std::numeric_limits<Real>::infinity();

  if (dim == 1) {
    // Vacuum or the fully filled sector: a single diagonal entry.
    const auto H = sector_hamiltonian(h, states);
    e0 = H.rows() ? H.coeff(0, 0) : 0.0;
    ground = VecX::Ones(1);
  } else if (dim <= kDenseSectorCap) {
    const MatX H = MatX(sector_hamiltonian(h, states));
    Eigen::SelfAdjointEigenSolver<MatX> es(H);
    e0 = es.eigenvalues()[0];
    e1 = es.eigenvalues()[1];
    ground = es.eigenvectors().col(0);
  } else {
    const auto H = sector_hamiltonian(h, states);
    Real second = std::numeric_limits<Real>::infinity();
    auto [theta, vec] = lanczos_smallest(H, 1e-10, &second);
    e0 = theta;
    e1 = second;
    ground = vec;
  }

  out.energy = e0;
  out.spectral_gap = e1 - e0;

  out.ground_state.L = h.L;
  out.ground_state.amplitudes = VecX::Zero(Index(1) << h.L);
  for (Index k = 0; k < dim; ++k) out.ground_state.amplitudes[states[k]] = ground[k];

  out.density = VecX::Zero(h.L);
  for (Index k = 0; k < dim; ++k) {
    const Real w2 = ground[k] * ground[k];
    for (int p = 0; p < h.L; ++p)
      if ((states[k] >> p) & 1u) out.density[p] += w2;
  }
  return out;
}

VecX density_of(const FockVector& psi) {
  const Index n = psi.amplitudes.size();
  if (n != (Index(1) << psi.L)) throw std::invalid_argument("density_of: amplitude length mismatch");
  const Real norm2 = psi.amplitudes.squaredNorm();
  if (std::abs(norm2 - 1.0) > 1e-10) throw std::invalid_argument("density_of: state not normalized");
  VecX rho = VecX::Zero(psi.L);
  for (Index s = 0; s < n; ++s) {
    const Real w2 = psi.amplitudes[s] * psi.amplitudes[s];
    if (w2 == 0) continue;
    for (int p = 0; p < psi.L; ++p)
      if ((s >> p) & 1) rho[p] += w2;
  }
  return rho;
}

}  // namespace sce::model

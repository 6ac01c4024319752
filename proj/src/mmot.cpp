#include "sce/mmot.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace sce::mmot {

namespace {

constexpr Index kJointCap = Index(1) << 20;

std::vector<Index> strides_for(const std::vector<Index>& sizes) {
  std::vector<Index> strides(sizes.size());
  Index s = 1;
  for (int p = (int)sizes.size() - 1; p >= 0; --p) {
    strides[p] = s;
    s *= sizes[p];
  }
  return strides;
}

Index product_of(const std::vector<Index>& sizes) {
  Index total = 1;
  for (Index n : sizes) {
    if (n < 1) throw std::invalid_argument("mmot: state-space sizes must be >= 1");
    if (total > kJointCap / n) throw std::invalid_argument("mmot: joint-space overflow");
    total *= n;
  }
  return total;
}

}  // namespace

MarginalSet MarginalSet::binary_from_density(const VecX& rho) {
  MarginalSet m;
  m.sizes.assign((size_t)rho.size(), 2);
  m.marginals.reserve((size_t)rho.size());
  for (Index p = 0; p < rho.size(); ++p) {
    VecX mu(2);
    mu << 1.0 - rho[p], rho[p];
    m.marginals.push_back(mu);
  }
  return m;
}

void MarginalSet::validate(Real tol) const {
  if (sizes.size() != marginals.size()) throw std::invalid_argument("mmot: marginal count mismatch");
  for (size_t p = 0; p < sizes.size(); ++p) {
    if (marginals[p].size() != sizes[p])
      throw std::invalid_argument("mmot: marginal length mismatch");
    if (marginals[p].minCoeff() < -tol)
      throw std::invalid_argument("mmot: marginal has negative entries");
    if (std::abs(marginals[p].sum() - 1.0) > tol)
      throw std::invalid_argument("mmot: marginal does not sum to one");
  }
}

Index MarginalSet::total_size() const {
  return std::accumulate(sizes.begin(), sizes.end(), Index(0));
}

Index MarginalSet::joint_size() const { return product_of(sizes); }

PairwiseCost PairwiseCost::from_interaction(const MatX& v) {
  const int L = (int)v.rows();
  PairwiseCost c;
  c.sizes.assign((size_t)L, 2);
  c.lookup_.assign((size_t)L * L, -1);
  for (int p = 0; p < L; ++p)
    for (int q = p + 1; q < L; ++q) {
      if (v(p, q) == 0) continue;
      MatX blk = MatX::Zero(2, 2);
      blk(1, 1) = v(p, q);
      c.set_block(p, q, blk);
    }
  return c;
}

void PairwiseCost::set_block(int p, int q, const MatX& c) {
  if (p == q) throw std::invalid_argument("PairwiseCost: diagonal blocks are fixed to zero");
  if (p > q) {
    set_block(q, p, c.transpose());
    return;
  }
  const int L = (int)sizes.size();
  if (p < 0 || q >= L) throw std::invalid_argument("PairwiseCost: pair out of range");
  if (c.rows() != sizes[p] || c.cols() != sizes[q])
    throw std::invalid_argument("PairwiseCost: block dimension mismatch");
  if (lookup_.empty()) lookup_.assign((size_t)L * L, -1);
  int& slot = lookup_[(size_t)p * L + q];
  if (slot < 0) {
    slot = (int)blocks_.size();
    blocks_.push_back(c);
    pairs_.emplace_back(p, q);
  } else {
    blocks_[slot] = c;
  }
}

bool PairwiseCost::has_block(int p, int q) const {
  if (p > q) std::swap(p, q);
  const int L = (int)sizes.size();
  if (lookup_.empty() || p < 0 || q >= L || p == q) return false;
  return lookup_[(size_t)p * L + q] >= 0;
}

MatX PairwiseCost::block(int p, int q) const {
  const int L = (int)sizes.size();
  if (p < 0 || q < 0 || p >= L || q >= L) throw std::invalid_argument("PairwiseCost: pair out of range");
  if (p == q) return MatX::Zero(sizes[p], sizes[p]);
  const bool flip = p > q;
  const int a = flip ? q : p, b = flip ? p : q;
  const int slot = lookup_.empty() ? -1 : lookup_[(size_t)a * L + b];
  if (slot < 0) return MatX::Zero(sizes[p], sizes[q]);
  return flip ? MatX(blocks_[slot].transpose()) : blocks_[slot];
}

Real PairwiseCost::joint_cost(const std::vector<Index>& state) const {
  Real c = 0;
  for (size_t k = 0; k < pairs_.size(); ++k) {
    const auto [p, q] = pairs_[k];
    c += 2 * blocks_[k](state[p], state[q]);  // ordered-pair sum
  }
  return c;
}

Index JointMeasure::flat_index(const std::vector<Index>& state) const {
  const auto strides = strides_for(sizes);
  Index idx = 0;
  for (size_t p = 0; p < sizes.size(); ++p) idx += state[p] * strides[p];
  return idx;
}

void JointMeasure::unflatten(Index flat, std::vector<Index>& state) const {
  state.resize(sizes.size());
  for (int p = (int)sizes.size() - 1; p >= 0; --p) {
    state[p] = flat % sizes[p];
    flat /= sizes[p];
  }
}

MatX DenseTensor::as_matrix() const {
  if (dims.size() != 2) throw std::logic_error("DenseTensor: not a 2-marginal");
  MatX m(dims[0], dims[1]);
  for (Index i = 0; i < dims[0]; ++i)
    for (Index j = 0; j < dims[1]; ++j) m(i, j) = (*this)(i, j);
  return m;
}

PairwiseCost cost_from_interaction(const MatX& v) {
  if (v.rows() != v.cols()) throw std::invalid_argument("cost_from_interaction: v must be square");
  if ((v - v.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(Real(1), v.cwiseAbs().maxCoeff()))
    throw std::invalid_argument("cost_from_interaction: v must be symmetric");
  for (Index p = 0; p < v.rows(); ++p)
    if (v(p, p) != 0) throw std::invalid_argument("cost_from_interaction: v must have zero diagonal");
  return PairwiseCost::from_interaction(v);
}

conic::SolverConfig default_lp_config() {
  conic::SolverConfig cfg;
  cfg.tolerance = 1e-8;
  return cfg;
}

ReducedCost reduce_pinned(const PairwiseCost& c, const MarginalSet& m, Real tol) {
  const int L = m.site_count();
  ReducedCost red;
  std::vector<int> new_index(L, -1);
  for (int p = 0; p < L; ++p) {
    Index argmax = 0;
    m.marginals[p].maxCoeff(&argmax);
    if (m.marginals[p][argmax] >= 1.0 - tol) {
      red.pinned_sites.push_back(p);
      red.pinned_state.push_back(argmax);
    } else {
      new_index[p] = (int)red.free_sites.size();
      red.free_sites.push_back(p);
    }
  }

  red.pair.sizes.clear();
  for (int p : red.free_sites) red.pair.sizes.push_back(m.sizes[p]);
  red.unary.assign(red.free_sites.size(), VecX());
  for (size_t f = 0; f < red.free_sites.size(); ++f)
    red.unary[f] = VecX::Zero(m.sizes[red.free_sites[f]]);

  for (const auto& [p, q] : c.pairs()) {
    const bool p_pin = new_index[p] < 0, q_pin = new_index[q] < 0;
    if (!p_pin && !q_pin) {
      red.pair.set_block(new_index[p], new_index[q], c.block(p, q));
    } else if (p_pin && q_pin) {
      const Index sp = red.pinned_state[std::lower_bound(red.pinned_sites.begin(),
                                                         red.pinned_sites.end(), p) -
                                        red.pinned_sites.begin()];
      const Index sq = red.pinned_state[std::lower_bound(red.pinned_sites.begin(),
                                                         red.pinned_sites.end(), q) -
                                        red.pinned_sites.begin()];
      red.constant += 2 * c.block(p, q)(sp, sq);
    } else {
      const int pin = p_pin ? p : q;
      const int free = p_pin ? q : p;
      const Index spin = red.pinned_state[std::lower_bound(red.pinned_sites.begin(),
                                                           red.pinned_sites.end(), pin) -
                                          red.pinned_sites.begin()];
      const MatX blk = c.block(pin, free);  // N_pin x N_free
      red.unary[(size_t)new_index[free]] += 2 * blk.row(spin).transpose();
    }
  }
  return red;
}

namespace {

struct LpStructure {
  conic::ConicProblem problem;
  std::vector<Index> sizes;       // free-site sizes
  std::vector<Index> row_site;    // row -> free site
  std::vector<Index> row_state;   // row -> state of that site
  VecX row_scale;                 // norms the rows were divided by
  Index total = 0;
};

/// Marginal-constraint LP over the dense joint measure of the given sizes.
LpStructure build_lp(const PairwiseCost& pair, const std::vector<VecX>& unary,
                     const std::vector<Index>& sizes) {
  LpStructure s;
  s.sizes = sizes;
  const int F = (int)sizes.size();
  s.total = product_of(sizes);
  const auto strides = strides_for(sizes);

  VecX obj = VecX::Zero(s.total);
  std::vector<Index> state(F);
  JointMeasure scratch;
  scratch.sizes = sizes;
  for (Index flat = 0; flat < s.total; ++flat) {
    scratch.unflatten(flat, state);
    Real c = pair.joint_cost(state);
    for (int p = 0; p < F; ++p) c += unary[p][state[p]];
    obj[flat] = c;
  }

  Index n_rows = 0;
  for (int p = 0; p < F; ++p) n_rows += sizes[p];

  std::vector<Eigen::Triplet<Real>> trip;
  trip.reserve((size_t)s.total * F);
  s.row_site.resize(n_rows);
  s.row_state.resize(n_rows);
  s.row_scale.resize(n_rows);
  Index row = 0;
  for (int p = 0; p < F; ++p) {
    const Real scale = std::sqrt(Real(s.total / sizes[p]));
    for (Index a = 0; a < sizes[p]; ++a, ++row) {
      s.row_site[row] = p;
      s.row_state[row] = a;
      s.row_scale[row] = scale;
    }
  }
  for (Index flat = 0; flat < s.total; ++flat) {
    scratch.unflatten(flat, state);
    Index base = 0;
    for (int p = 0; p < F; ++p) {
      const Real scale = std::sqrt(Real(s.total / sizes[p]));
      trip.emplace_back(base + state[p], flat, 1.0 / scale);
      base += sizes[p];
    }
  }

  s.problem.cones.n_nonneg = s.total;
  s.problem.c = obj;
  s.problem.A.resize(n_rows, s.total);
  s.problem.A.setFromTriplets(trip.begin(), trip.end());
  s.problem.b = VecX::Zero(n_rows);
  return s;
}

VecX lp_rhs(const LpStructure& s, const std::vector<VecX>& marginals) {
  VecX b(s.row_site.size());
  for (Index r = 0; r < b.size(); ++r)
    b[r] = marginals[s.row_site[r]][s.row_state[r]] / s.row_scale[r];
  return b;
}

/// Extend dual potentials over site set S by one pinned site via the
/// Kantorovich c-transform, keeping exact dual feasibility.
struct ExtensionState {
  std::vector<int> sites;    // original indices, ascending
  std::vector<Index> sizes;  // aligned with sites
  VecX cost;                 // current cost over states(sites), pinned-not-yet-added unaries folded
  VecX dual_sum;             // sum of potentials over states(sites)
};

void extend_pinned(ExtensionState& st, const PairwiseCost& c_full, int r, Index nr, Index sigma,
                   const std::vector<int>& remaining_pinned, const std::vector<Index>& remaining_state,
                   std::vector<VecX>& potentials_by_site) {
  const int F = (int)st.sites.size();
  const Index old_total = st.cost.size();
  const auto pos_it = std::lower_bound(st.sites.begin(), st.sites.end(), r);
  const int pos = (int)(pos_it - st.sites.begin());

  VecX w_r = VecX::Zero(nr);
  for (size_t k = 0; k < remaining_pinned.size(); ++k)
    w_r += 2 * c_full.block(remaining_pinned[k], r).row(remaining_state[k]).transpose();

  JointMeasure old_layout;
  old_layout.sizes = st.sizes;

  VecX new_cost(old_total * nr);
  VecX phi = VecX::Constant(nr, std::numeric_limits<Real>::infinity());
  std::vector<Index> state(F);
  std::vector<MatX> cross(F);  // C_{r, site} blocks
  for (int p = 0; p < F; ++p) cross[p] = c_full.block(r, st.sites[p]);

  std::vector<Index> new_sizes = st.sizes;
  new_sizes.insert(new_sizes.begin() + pos, nr);
  JointMeasure new_layout;
  new_layout.sizes = new_sizes;
  std::vector<Index> new_state(F + 1);

  for (Index flat = 0; flat < old_total; ++flat) {
    old_layout.unflatten(flat, state);
    Real base = st.cost[flat];
    Real shift_sigma = 0;
    for (int p = 0; p < F; ++p) shift_sigma += 2 * cross[p](sigma, state[p]);
    for (Index s = 0; s < nr; ++s) {
      Real pairs_s = 0;
      for (int p = 0; p < F; ++p) pairs_s += 2 * cross[p](s, state[p]);
      const Real cost_here = base + pairs_s - shift_sigma + w_r[s];
      for (int p = 0; p < F; ++p) new_state[p < pos ? p : p + 1] = state[p];
      new_state[pos] = s;
      new_cost[new_layout.flat_index(new_state)] = cost_here;
      phi[s] = std::min(phi[s], cost_here - st.dual_sum[flat]);
    }
  }

  potentials_by_site[(size_t)r] = phi;

  VecX new_dual(old_total * nr);
  for (Index flat = 0; flat < old_total; ++flat) {
    old_layout.unflatten(flat, state);
    for (Index s = 0; s < nr; ++s) {
      for (int p = 0; p < F; ++p) new_state[p < pos ? p : p + 1] = state[p];
      new_state[pos] = s;
      new_dual[new_layout.flat_index(new_state)] = st.dual_sum[flat] + phi[s];
    }
  }

  st.sites.insert(st.sites.begin() + pos, r);
  st.sizes = new_sizes;
  st.cost.swap(new_cost);
  st.dual_sum.swap(new_dual);
}

/// Everything after the conic solve: dual potentials, pinned-site extension,
/// plan expansion, gauge fixing, and the gradient.
MMOTResult post_process(const PairwiseCost& c, const MarginalSet& m, const ReducedCost& red,
                        const LpStructure* lp, conic::ConicSolution sol) {
  const int L = m.site_count();
  std::vector<VecX> potentials((size_t)L);

  MMOTResult out;
  out.raw = std::move(sol);
  ExtensionState st;

  if (!red.free_sites.empty()) {
    out.converged = out.raw.status == conic::SolveStatus::converged;

    for (Index r = 0; r < (Index)lp->row_site.size(); ++r) {
      const int site = red.free_sites[(size_t)lp->row_site[r]];
      if (potentials[(size_t)site].size() == 0) potentials[(size_t)site] = VecX::Zero(m.sizes[(size_t)site]);
      potentials[(size_t)site][lp->row_state[r]] = out.raw.y[r] / lp->row_scale[r];
    }

    st.sites = red.free_sites;
    st.sizes = lp->sizes;
    st.cost = lp->problem.c;
    st.dual_sum = VecX::Zero(lp->total);
    std::vector<Index> state((size_t)red.free_sites.size());
    JointMeasure layout;
    layout.sizes = lp->sizes;
    for (Index flat = 0; flat < lp->total; ++flat) {
      layout.unflatten(flat, state);
      Real d = 0;
      for (size_t p = 0; p < red.free_sites.size(); ++p)
        d += potentials[(size_t)red.free_sites[p]][state[p]];
      st.dual_sum[flat] = d;
    }
    out.value = out.raw.primal_objective;
  } else {
    // Everything pinned: seed with the first pinned site, potential = its unary.
    const int r0 = red.pinned_sites[0];
    const Index n0 = m.sizes[(size_t)r0];
    VecX w0 = VecX::Zero(n0);
    for (size_t k = 1; k < red.pinned_sites.size(); ++k)
      w0 += 2 * c.block(red.pinned_sites[k], r0).row(red.pinned_state[k]).transpose();
    potentials[(size_t)r0] = w0;
    st.sites = {r0};
    st.sizes = {n0};
    st.cost = w0;
    st.dual_sum = w0;
    out.value = 0;
    out.converged = true;
    out.raw.status = conic::SolveStatus::converged;
  }

  // Sequentially re-insert the remaining pinned sites.
  const size_t first_pin = red.free_sites.empty() ? 1 : 0;
  for (size_t k = first_pin; k < red.pinned_sites.size(); ++k) {
    std::vector<int> remaining(red.pinned_sites.begin() + k + 1, red.pinned_sites.end());
    std::vector<Index> remaining_state(red.pinned_state.begin() + k + 1, red.pinned_state.end());
    extend_pinned(st, c, red.pinned_sites[k], m.sizes[(size_t)red.pinned_sites[k]],
                  red.pinned_state[k], remaining, remaining_state, potentials);
  }
  out.value += red.constant;

  // Expand the plan over the original site order.
  out.plan.sizes = m.sizes;
  out.plan.weights = VecX::Zero(m.joint_size());
  if (!red.free_sites.empty()) {
    JointMeasure red_layout;
    red_layout.sizes = red.pair.sizes;
    const Index red_total = red_layout.sizes.empty() ? 1 : product_of(red_layout.sizes);
    std::vector<Index> red_state(red.free_sites.size());
    std::vector<Index> full_state((size_t)L);
    for (size_t k = 0; k < red.pinned_sites.size(); ++k)
      full_state[(size_t)red.pinned_sites[k]] = red.pinned_state[k];
    for (Index flat = 0; flat < red_total; ++flat) {
      red_layout.unflatten(flat, red_state);
      for (size_t p = 0; p < red.free_sites.size(); ++p)
        full_state[(size_t)red.free_sites[p]] = red_state[p];
      out.plan.weights[out.plan.flat_index(full_state)] = std::max(out.raw.x[flat], Real(0));
    }
  } else {
    std::vector<Index> full_state((size_t)L);
    for (size_t k = 0; k < red.pinned_sites.size(); ++k)
      full_state[(size_t)red.pinned_sites[k]] = red.pinned_state[k];
    out.plan.weights[out.plan.flat_index(full_state)] = 1.0;
  }

  // Gauge: phi_p(0) = 0, with the removed constants kept as an offset so the
  // dual objective is preserved exactly.
  out.dual_offset = 0;
  out.site_potentials.resize((size_t)L);
  for (int p = 0; p < L; ++p) {
    VecX phi = potentials[(size_t)p];
    if (phi.size() == 0) phi = VecX::Zero(m.sizes[(size_t)p]);
    out.dual_offset += phi[0];
    out.site_potentials[(size_t)p] = phi.array() - phi[0];
  }

  const bool all_binary =
      std::all_of(m.sizes.begin(), m.sizes.end(), [](Index n) { return n == 2; });
  if (all_binary) {
    out.gradient = VecX((Index)L);
    for (int p = 0; p < L; ++p) out.gradient[p] = out.site_potentials[(size_t)p][1];
  }
  return out;
}

}  // namespace

MMOTResult solve_exact_mmot(const PairwiseCost& c, const MarginalSet& m,
                            const conic::SolverConfig& cfg) {
  m.validate();
  if (c.sizes != m.sizes) throw std::invalid_argument("solve_exact_mmot: cost/marginal size mismatch");
  (void)m.joint_size();  // overflow guard

  const ReducedCost red = reduce_pinned(c, m);
  if (red.free_sites.empty()) {
    conic::ConicSolution none;
    none.status = conic::SolveStatus::converged;
    return post_process(c, m, red, nullptr, std::move(none));
  }
  LpStructure lp = build_lp(red.pair, red.unary, red.pair.sizes);
  std::vector<VecX> free_marginals;
  for (int p : red.free_sites) free_marginals.push_back(m.marginals[(size_t)p]);
  lp.problem.b = lp_rhs(lp, free_marginals);
  conic::Solver solver(lp.problem);
  conic::ConicSolution sol = solver.solve(cfg);
  return post_process(c, m, red, &lp, std::move(sol));
}

struct ExactMmotSolver::Impl {
  PairwiseCost cost;
  std::optional<LpStructure> lp;
  std::optional<conic::Solver> solver;
};

ExactMmotSolver::ExactMmotSolver(PairwiseCost c) : impl_(new Impl{std::move(c), {}, {}}) {}
ExactMmotSolver::~ExactMmotSolver() = default;
ExactMmotSolver::ExactMmotSolver(ExactMmotSolver&&) noexcept = default;

MMOTResult ExactMmotSolver::solve(const MarginalSet& m, const conic::SolverConfig& cfg) {
  m.validate();
  if (impl_->cost.sizes != m.sizes)
    throw std::invalid_argument("ExactMmotSolver: cost/marginal size mismatch");
  (void)m.joint_size();
  const ReducedCost red = reduce_pinned(impl_->cost, m);
  if (!red.pinned_sites.empty()) return solve_exact_mmot(impl_->cost, m, cfg);
  if (!impl_->lp) {
    impl_->lp = build_lp(red.pair, red.unary, red.pair.sizes);
    impl_->lp->problem.b = lp_rhs(*impl_->lp, m.marginals);
    impl_->solver.emplace(impl_->lp->problem);
  } else {
    impl_->solver->set_rhs(lp_rhs(*impl_->lp, m.marginals));
  }
  conic::ConicSolution sol = impl_->solver->solve(cfg);
  return post_process(impl_->cost, m, red, &*impl_->lp, std::move(sol));
}

DenseTensor marginalize(const JointMeasure& mu, const std::vector<int>& indices) {
  if (indices.empty() || indices.size() > 3)
    throw std::invalid_argument("marginalize: between one and three indices");
  for (size_t a = 0; a < indices.size(); ++a) {
    if (indices[a] < 0 || indices[a] >= (int)mu.sizes.size())
      throw std::invalid_argument("marginalize: index out of range");
    for (size_t b = a + 1; b < indices.size(); ++b)
      if (indices[a] == indices[b]) throw std::invalid_argument("marginalize: repeated indices");
  }

  DenseTensor t;
  Index out_size = 1;
  for (int i : indices) {
    t.dims.push_back(mu.sizes[(size_t)i]);
    out_size *= mu.sizes[(size_t)i];
  }
  t.values = VecX::Zero(out_size);

  std::vector<Index> state;
  const Index total = mu.weights.size();
  for (Index flat = 0; flat < total; ++flat) {
    const Real w = mu.weights[flat];
    if (w == 0) continue;
    mu.unflatten(flat, state);
    Index pos = 0;
    for (size_t a = 0; a < indices.size(); ++a) pos = pos * t.dims[a] + state[(size_t)indices[a]];
    t.values[pos] += w;
  }
  return t;
}

VecX grad_from_lp_dual(const MMOTResult& r) {
  if (r.site_potentials.empty()) throw std::invalid_argument("grad_from_lp_dual: missing duals");
  if (r.gradient.size() == 0)
    throw std::invalid_argument("grad_from_lp_dual: gradient defined for binary marginals only");
  return r.gradient;
}

Real complementarity_residual(const PairwiseCost& c, const MMOTResult& r) {
  const Index total = r.plan.weights.size();
  std::vector<Index> state;
  Real acc = 0;
  for (Index flat = 0; flat < total; ++flat) {
    const Real w = r.plan.weights[flat];
    if (w == 0) continue;
    r.plan.unflatten(flat, state);
    Real dual = r.dual_offset;
    for (size_t p = 0; p < state.size(); ++p) dual += r.site_potentials[p][state[p]];
    acc += w * (c.joint_cost(state) - dual);
  }
  return std::abs(acc);
}

Real MMOTResult::dual_objective(const MarginalSet& m) const {
  Real v = dual_offset;
  for (size_t p = 0; p < site_potentials.size(); ++p) v += site_potentials[p].dot(m.marginals[p]);
  return v;
}

}  // namespace sce::mmot

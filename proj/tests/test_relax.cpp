#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "sce/model.hpp"
#include "sce/relax.hpp"
#include "support/oracles.hpp"

using namespace sce;
using mmot::MarginalSet;
using mmot::PairwiseCost;
using relax::RelaxResult;

namespace {

conic::SolverConfig sdp_cfg(Real tol = 1e-8) {
  conic::SolverConfig cfg;
  cfg.tolerance = tol;
  cfg.max_iterations = 500000;
  return cfg;
}

MarginalSet binary(const VecX& rho) { return MarginalSet::binary_from_density(rho); }

}  // namespace

TEST_CASE("two-marginal SDP on the half-filled pair") {
  MatX v = MatX::Zero(2, 2);
  v(0, 1) = v(1, 0) = 1.0;
  const auto c = mmot::cost_from_interaction(v);
  VecX rho(2);
  rho << 0.5, 0.5;
  const auto r = relax::solve_two_marginal(c, binary(rho), sdp_cfg());
  REQUIRE(r.converged);
  CHECK(r.value == doctest::Approx(0.0).epsilon(1e-7));
  const MatX m12 = r.M.block(0, 1);
  CHECK(m12(0, 0) == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(m12(0, 1) == doctest::Approx(0.5).epsilon(1e-6));
  CHECK(m12(1, 0) == doctest::Approx(0.5).epsilon(1e-6));
  CHECK(m12(1, 1) == doctest::Approx(0.0).epsilon(1e-6));
}

TEST_CASE("NN-only chains are numerically exact for the 2-marginal SDP") {
  std::mt19937 rng(42);
  const auto h = model::build_spinless_chain(14, 5.0, model::Profile::NN);
  const auto c = mmot::cost_from_interaction(h.v);
  const VecX rho = testing::random_density(rng, 14);
  const auto m = binary(rho);
  const auto sdp = relax::solve_two_marginal(c, m, sdp_cfg(1e-8));
  REQUIRE(sdp.converged);
  const auto lp = mmot::solve_exact_mmot(c, m);
  REQUIRE(lp.converged);
  CHECK(std::abs(sdp.value - lp.value) <= 1e-5 * (1 + std::abs(lp.value)));
}

TEST_CASE("relaxation ordering at a fixed density") {
  std::mt19937 rng(4242);
  for (int inst = 0; inst < 8; ++inst) {
    const int L = 3 + inst % 4;  // 3..6
    const MatX v = testing::random_interaction(rng, L, 1.5);
    const auto c = mmot::cost_from_interaction(v);
    const auto m = binary(testing::random_density(rng, L));
    const auto sdp2 = relax::solve_two_marginal(c, m, sdp_cfg());
    const auto sdp3 = relax::solve_three_marginal(c, m, sdp_cfg());
    const auto lp = mmot::solve_exact_mmot(c, m);
    REQUIRE(sdp2.converged);
    REQUIRE(sdp3.converged);
    REQUIRE(lp.converged);
    const Real slack = 1e-6 * (1 + std::abs(lp.value));
    CHECK(sdp2.value <= sdp3.value + slack);
    CHECK(sdp3.value <= lp.value + slack);
  }
}

TEST_CASE("three-marginal SDP is exact at L=3") {
  std::mt19937 rng(7);
  for (int inst = 0; inst < 5; ++inst) {
    const MatX v = testing::random_interaction(rng, 3, 2.0);
    const auto c = mmot::cost_from_interaction(v);
    const auto m = binary(testing::random_density(rng, 3));
    const auto sdp3 = relax::solve_three_marginal(c, m, sdp_cfg());
    const auto lp = mmot::solve_exact_mmot(c, m);
    REQUIRE(sdp3.converged);
    CHECK(std::abs(sdp3.value - lp.value) <= 1e-6 * (1 + std::abs(lp.value)));
  }
}

TEST_CASE("certificate extraction") {
  SUBCASE("zero cost yields a zero-objective certificate") {
    const auto c = mmot::cost_from_interaction(MatX::Zero(3, 3));
    VecX rho(3);
    rho << 0.4, 0.5, 0.6;
    const auto m = binary(rho);
    const auto r = relax::solve_two_marginal(c, m, sdp_cfg());
    REQUIRE(r.converged);
    CHECK(std::abs(r.certificate.dual_objective(m)) <= 1e-7);
    CHECK(std::abs(r.value) <= 1e-7);
  }
  SUBCASE("dual objective matches the primal value") {
    const auto h = model::build_spinless_chain(5, 4.0, model::Profile::NNN);
    const auto c = mmot::cost_from_interaction(h.v);
    std::mt19937 rng(13);
    const auto m = binary(testing::random_density(rng, 5));
    const auto r = relax::solve_two_marginal(c, m, sdp_cfg());
    REQUIRE(r.converged);
    const Real dual = r.certificate.dual_objective(m);
    CHECK(std::abs(dual - r.value) <= 1e-6 * (1 + std::abs(r.value)));
    // eliminated multipliers are reconstructible and sit in their cones
    for (int p = 0; p < 5; ++p)
      for (int q = p + 1; q < 5; ++q)
        CHECK(r.certificate.Z(p, q).minCoeff() >= -1e-6);
    for (int p = 0; p < 5; ++p)
      CHECK((r.certificate.Xp(p) + r.certificate.Y_block(p, p)).cwiseAbs().maxCoeff() <= 1e-12);
    // Y is PSD up to solver tolerance
    Eigen::SelfAdjointEigenSolver<MatX> es(r.certificate.Y, Eigen::EigenvaluesOnly);
    CHECK(es.eigenvalues()[0] >= -1e-6);
  }
  SUBCASE("certificate shift-invariance") {
    const auto h = model::build_spinless_chain(4, 3.0, model::Profile::NNN);
    const auto c = mmot::cost_from_interaction(h.v);
    std::mt19937 rng(15);
    const auto m = binary(testing::random_density(rng, 4));
    auto r = relax::solve_two_marginal(c, m, sdp_cfg());
    REQUIRE(r.converged);
    const Real obj0 = r.certificate.dual_objective(m);
    const Real feas0 = r.certificate.feasibility_violation();
    auto shifted = r.certificate;
    const Real cshift = 0.37;
    const int id = shifted.pair_id(0, 2);
    shifted.phi[(size_t)id].array() += cshift;
    shifted.psi[(size_t)id].array() -= cshift;
    CHECK(shifted.dual_objective(m) == doctest::Approx(obj0).epsilon(1e-12));
    CHECK(shifted.feasibility_violation() == doctest::Approx(feas0).epsilon(1e-12));
  }
  SUBCASE("unconverged solutions are rejected") {
    conic::ConicSolution sol;
    sol.status = conic::SolveStatus::max_iterations;
    relax::Assembly a;
    CHECK_THROWS_AS(relax::extract_certificate(sol, a), std::invalid_argument);
  }
}

TEST_CASE("sdp_gradient") {
  SUBCASE("zero cost") {
    const auto c = mmot::cost_from_interaction(MatX::Zero(3, 3));
    VecX rho(3);
    rho << 0.3, 0.5, 0.7;
    const auto r = relax::solve_two_marginal(c, binary(rho), sdp_cfg());
    REQUIRE(r.converged);
    CHECK(r.gradient.cwiseAbs().maxCoeff() <= 1e-6);
  }
  SUBCASE("mirror symmetry") {
    const auto h = model::build_spinless_chain(4, 2.0, model::Profile::NNN);
    const auto c = mmot::cost_from_interaction(h.v);
    VecX rho(4);
    rho << 0.3, 0.6, 0.6, 0.3;
    const auto r = relax::solve_two_marginal(c, binary(rho), sdp_cfg());
    REQUIRE(r.converged);
    CHECK(r.gradient[0] == doctest::Approx(r.gradient[3]).epsilon(1e-5));
    CHECK(r.gradient[1] == doctest::Approx(r.gradient[2]).epsilon(1e-5));
  }
  SUBCASE("finite differences on the L=6 NNN chain") {
    const auto h = model::build_spinless_chain(6, 5.0, model::Profile::NNN);
    const auto c = mmot::cost_from_interaction(h.v);
    VecX rho(6);
    rho << 0.55, 0.72, 0.61, 0.68, 0.75, 0.59;
    const auto m = binary(rho);
    const auto r = relax::solve_two_marginal(c, m, sdp_cfg(1e-9));
    REQUIRE(r.converged);
    const Real step = 1e-5;
    VecX fd(6);
    for (int p = 0; p < 6; ++p) {
      VecX up = rho, dn = rho;
      up[p] += step;
      dn[p] -= step;
      fd[p] = (relax::solve_two_marginal(c, binary(up), sdp_cfg(1e-9)).value -
               relax::solve_two_marginal(c, binary(dn), sdp_cfg(1e-9)).value) /
              (2 * step);
    }
    CHECK((r.gradient - fd).norm() <= 1e-3 * fd.norm());
  }
}

TEST_CASE("primal feasibility diagnostics") {
  std::mt19937 rng(100);
  SUBCASE("a representable moment matrix is clean to 1e-12") {
    mmot::JointMeasure mu;
    mu.sizes = {2, 2, 2};
    mu.weights = VecX(8);
    std::uniform_real_distribution<Real> u(0.1, 1.0);
    for (Index i = 0; i < 8; ++i) mu.weights[i] = u(rng);
    mu.weights /= mu.weights.sum();
    const auto M = relax::moment_matrix_from_joint(mu);
    const auto K = relax::three_marginals_from_joint(mu);
    MarginalSet m;
    m.sizes = mu.sizes;
    for (int p = 0; p < 3; ++p) m.marginals.push_back(mmot::marginalize(mu, {p}).values);
    const auto rep = relax::check_primal_feasibility(M, &K, m);
    CHECK(rep.max_violation() <= 1e-12);
    CHECK(rep.min_eigenvalue >= -1e-12);
  }
  SUBCASE("a constructed negative entry is reported at its magnitude") {
    mmot::JointMeasure mu;
    mu.sizes = {2, 2};
    mu.weights = VecX::Constant(4, 0.25);
    auto M = relax::moment_matrix_from_joint(mu);
    MarginalSet m;
    m.sizes = mu.sizes;
    for (int p = 0; p < 2; ++p) m.marginals.push_back(mmot::marginalize(mu, {p}).values);
    M.m(0, 2) -= 0.3;  // block (0,1) entry, originally 0.25
    M.m(2, 0) -= 0.3;
    const auto rep = relax::check_primal_feasibility(M, nullptr, m);
    CHECK(rep.offdiag_negativity == doctest::Approx(0.05).epsilon(1e-12));
  }
  SUBCASE("a converged solve stays within 1e-6 and satisfies MP = 0") {
    const auto h = model::build_spinless_chain(6, 4.0, model::Profile::NNNN);
    const auto c = mmot::cost_from_interaction(h.v);
    const auto m = binary(testing::random_density(rng, 6));
    const auto r = relax::solve_three_marginal(c, m, sdp_cfg(1e-8));
    REQUIRE(r.converged);
    const auto rep = relax::check_primal_feasibility(r.M, &*r.K, m);
    CHECK(rep.max_violation() <= 1e-6);
    CHECK(rep.mp_frobenius <= 1e-6 * rep.m_frobenius);
  }
}

TEST_CASE("representable moment matrices are feasible with matching objective") {
  std::mt19937 rng(55);
  const int L = 4;
  const MatX v = testing::random_interaction(rng, L, 1.0);
  const auto c = mmot::cost_from_interaction(v);
  mmot::JointMeasure mu;
  mu.sizes = {2, 2, 2, 2};
  mu.weights = VecX(16);
  std::uniform_real_distribution<Real> u(0.05, 1.0);
  for (Index i = 0; i < 16; ++i) mu.weights[i] = u(rng);
  mu.weights /= mu.weights.sum();
  const auto M = relax::moment_matrix_from_joint(mu);

  // LP objective of the measure
  std::vector<Index> state;
  Real lp_obj = 0;
  for (Index flat = 0; flat < 16; ++flat) {
    mu.unflatten(flat, state);
    lp_obj += mu.weights[flat] * c.joint_cost(state);
  }
  // Tr(CM) over blocks
  Real sdp_obj = 0;
  for (int p = 0; p < L; ++p)
    for (int q = 0; q < L; ++q)
      if (p != q) sdp_obj += (c.block(p, q).cwiseProduct(M.block(p, q))).sum();
  CHECK(sdp_obj == doctest::Approx(lp_obj).epsilon(1e-13));

  // and the relaxation value lower-bounds it
  MarginalSet m;
  m.sizes = mu.sizes;
  for (int p = 0; p < L; ++p) m.marginals.push_back(mmot::marginalize(mu, {p}).values);
  const auto r = relax::solve_two_marginal(c, m, sdp_cfg());
  REQUIRE(r.converged);
  CHECK(r.value <= sdp_obj + 1e-6 * (1 + std::abs(sdp_obj)));
}

TEST_CASE("stored triples expose a symmetric ordered view") {
  mmot::JointMeasure mu;
  mu.sizes = {2, 2, 2, 2};
  std::mt19937 rng(8);
  std::uniform_real_distribution<Real> u(0.0, 1.0);
  mu.weights = VecX(16);
  for (Index i = 0; i < 16; ++i) mu.weights[i] = u(rng);
  mu.weights /= mu.weights.sum();
  const auto K = relax::three_marginals_from_joint(mu);
  for (Index a = 0; a < 2; ++a)
    for (Index b = 0; b < 2; ++b)
      for (Index c = 0; c < 2; ++c) {
        const Real base = K.value(0, 1, 3, a, b, c);
        CHECK(K.value(1, 0, 3, b, a, c) == doctest::Approx(base));
        CHECK(K.value(3, 1, 0, c, b, a) == doctest::Approx(base));
        CHECK(K.value(1, 3, 0, b, c, a) == doctest::Approx(base));
      }
}

TEST_CASE("pinned marginals match the unreduced assembly") {
  std::mt19937 rng(321);
  const int L = 4;
  const MatX v = testing::random_interaction(rng, L, 1.5);
  const auto c = mmot::cost_from_interaction(v);
  VecX rho = testing::random_density(rng, L);
  rho[2] = 1.0;
  const auto m = binary(rho);

  const auto reduced = relax::solve_two_marginal(c, m, sdp_cfg());
  REQUIRE(reduced.converged);

  // direct solve of the literal assembly, pinned site included
  const auto a = relax::assemble_two_marginal(c, m);
  const auto sol = conic::solve(a.problem, sdp_cfg());
  REQUIRE(sol.status == conic::SolveStatus::converged);
  CHECK(std::abs(reduced.value - sol.primal_objective) <=
        1e-6 * (1 + std::abs(reduced.value)));

  // re-inserted moment matrix is feasible for the original constraints
  const auto rep = relax::check_primal_feasibility(reduced.M, nullptr, m);
  CHECK(rep.max_violation() <= 1e-6);
}

TEST_CASE("cached relax solver matches one-shot solves") {
  const auto h = model::build_spinless_chain(5, 3.0, model::Profile::NNN);
  const auto c = mmot::cost_from_interaction(h.v);
  relax::RelaxSolver solver(c, false);
  std::mt19937 rng(19);
  for (int i = 0; i < 3; ++i) {
    const auto m = binary(testing::random_density(rng, 5));
    const auto a = solver.solve(m, sdp_cfg());
    const auto b = relax::solve_two_marginal(c, m, sdp_cfg());
    REQUIRE(a.converged);
    CHECK(a.value == doctest::Approx(b.value).epsilon(1e-8));
    CHECK((a.gradient - b.gradient).cwiseAbs().maxCoeff() <= 1e-6);
  }
}

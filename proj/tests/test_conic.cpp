#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>
#include <sstream>

#include "sce/conic.hpp"
#include "support/oracles.hpp"

using namespace sce;
using conic::ConicProblem;
using conic::ConicSolution;
using conic::SolveStatus;
using conic::SolverConfig;

namespace {

ConicProblem simple_lp(const MatX& a, const VecX& b, const VecX& c) {
  ConicProblem p;
  p.cones.n_nonneg = c.size();
  p.c = c;
  p.A = a.sparseView();
  p.b = b;
  return p;
}

}  // namespace

TEST_CASE("minimize x subject to x >= 0") {
  ConicProblem p;
  p.cones.n_nonneg = 1;
  p.c = VecX::Ones(1);
  p.A.resize(0, 1);
  p.b = VecX(0);
  auto sol = conic::solve(p);
  CHECK(sol.status == SolveStatus::converged);
  CHECK(sol.x[0] == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(sol.primal_objective == doctest::Approx(0.0).epsilon(1e-6));
}

TEST_CASE("minimum eigenvalue SDP: min Tr(CX), Tr(X)=1, X psd") {
  ConicProblem p;
  p.cones.psd_side = 3;
  MatX c(3, 3);
  c.setZero();
  c.diagonal() << 3, 1, 2;
  p.c = matrix_to_svec<Real>(c);
  MatX eye = MatX::Identity(3, 3);
  const VecX trace_row = matrix_to_svec<Real>(eye);
  std::vector<Eigen::Triplet<Real>> trip;
  for (Index k = 0; k < trace_row.size(); ++k)
    if (trace_row[k] != 0) trip.emplace_back(0, k, trace_row[k]);
  p.A.resize(1, p.cones.n_total());
  p.A.setFromTriplets(trip.begin(), trip.end());
  p.b = VecX::Ones(1);

  auto sol = conic::solve(p);
  CHECK(sol.status == SolveStatus::converged);
  CHECK(sol.primal_objective == doctest::Approx(1.0).epsilon(1e-6));
  const MatX x = svec_to_matrix<Real>(sol.x, 3);
  CHECK(x(1, 1) == doctest::Approx(1.0).epsilon(1e-5));
  CHECK(x(0, 0) == doctest::Approx(0.0).epsilon(1e-5));
  // dual: the multiplier of the trace constraint is the minimum eigenvalue
  CHECK(sol.dual_objective == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("transportation LP against vertex enumeration") {
  // costs [[0,1],[1,0]], marginals (0.3,0.7) / (0.6,0.4)
  MatX a(4, 4);
  a << 1, 1, 0, 0,  // row sums
      0, 0, 1, 1,   //
      1, 0, 1, 0,   // column sums
      0, 1, 0, 1;
  VecX b(4);
  b << 0.3, 0.7, 0.6, 0.4;
  VecX c(4);
  c << 0, 1, 1, 0;

  const Real oracle = testing::vertex_enumeration_lp(a, b, c);
  CHECK(oracle == doctest::Approx(0.3).epsilon(1e-12));  // frozen from the enumeration oracle

  auto sol = conic::solve(simple_lp(a, b, c));
  CHECK(sol.status == SolveStatus::converged);
  CHECK(sol.primal_objective == doctest::Approx(oracle).epsilon(1e-8));
}

TEST_CASE("project_psd clips negative eigenvalues and is idempotent") {
  MatX eye = MatX::Identity(4, 4);
  CHECK((conic::project_psd(eye) - eye).norm() == doctest::Approx(0.0));

  MatX d(2, 2);
  d.setZero();
  d.diagonal() << 2, -3;
  MatX pd = conic::project_psd(d);
  CHECK(pd(0, 0) == doctest::Approx(2.0));
  CHECK(pd(1, 1) == doctest::Approx(0.0));

  std::mt19937 rng(7);
  std::normal_distribution<Real> gauss;
  MatX s(5, 5);
  for (Index i = 0; i < 5; ++i)
    for (Index j = 0; j < 5; ++j) s(i, j) = gauss(rng);
  s = MatX(0.5 * (s + s.transpose()));
  const MatX once = conic::project_psd(s);
  CHECK((conic::project_psd(once) - once).norm() <= 1e-12);

  MatX bad(2, 2);
  bad << 0, 1, 0, 0;
  CHECK_THROWS(conic::project_psd(bad));
}

TEST_CASE("residuals recomputation") {
  MatX a(1, 2);
  a << 1, 1;
  VecX b = VecX::Ones(1);
  VecX c(2);
  c << 1, 2;
  ConicProblem p = simple_lp(a, b, c);

  SUBCASE("at the exact optimum all residuals vanish") {
    ConicSolution sol;
    sol.x = VecX(2);
    sol.x << 1, 0;
    sol.y = VecX::Ones(1);  // A'y = (1,1) <= c with equality on the support
    auto r = conic::residuals(p, sol);
    CHECK(r.primal <= 1e-12);
    CHECK(r.dual <= 1e-12);
    CHECK(r.gap <= 1e-12);
  }
  SUBCASE("perturbing one coordinate moves the primal residual accordingly") {
    ConicSolution sol;
    sol.x = VecX(2);
    sol.x << 1 + 1e-3, 0;
    sol.y = VecX::Ones(1);
    auto r = conic::residuals(p, sol);
    CHECK(r.primal == doctest::Approx(1e-3 / (1 + b.norm())).epsilon(1e-6));
  }
  SUBCASE("zero vector has primal residual |b|/(1+|b|)") {
    ConicSolution sol;
    sol.x = VecX::Zero(2);
    sol.y = VecX::Zero(1);
    auto r = conic::residuals(p, sol);
    CHECK(r.primal == doctest::Approx(b.norm() / (1 + b.norm())));
  }
}

TEST_CASE("weak duality and scaling invariance") {
  std::mt19937 rng(21);
  std::uniform_real_distribution<Real> u(0.0, 1.0);
  MatX a(3, 8);
  VecX x0(8);
  for (Index i = 0; i < 3; ++i)
    for (Index j = 0; j < 8; ++j) a(i, j) = u(rng);
  for (Index j = 0; j < 8; ++j) x0[j] = u(rng);
  VecX b = a * x0;
  VecX c(8);
  for (Index j = 0; j < 8; ++j) c[j] = u(rng);

  auto sol = conic::solve(simple_lp(a, b, c));
  REQUIRE(sol.status == SolveStatus::converged);
  CHECK(sol.dual_objective <= sol.primal_objective + 1e-6 * (1 + std::abs(sol.primal_objective)));

  auto sol2 = conic::solve(simple_lp(a, b, VecX(3.0 * c)));
  REQUIRE(sol2.status == SolveStatus::converged);
  CHECK(sol2.primal_objective ==
        doctest::Approx(3.0 * sol.primal_objective).epsilon(1e-6));
  CHECK((sol2.x - sol.x).cwiseAbs().maxCoeff() <= 1e-5);
}

TEST_CASE("solver determinism: identical runs produce identical outputs") {
  std::mt19937 rng(5);
  std::uniform_real_distribution<Real> u(0.0, 1.0);
  MatX a(4, 10);
  VecX x0(10), c(10);
  for (Index i = 0; i < 4; ++i)
    for (Index j = 0; j < 10; ++j) a(i, j) = u(rng);
  for (Index j = 0; j < 10; ++j) x0[j] = u(rng);
  for (Index j = 0; j < 10; ++j) c[j] = u(rng);
  const ConicProblem p = simple_lp(a, a * x0, c);

  SolverConfig cfg;
  cfg.polish = false;
  auto s1 = conic::solve(p, cfg);
  auto s2 = conic::solve(p, cfg);
  CHECK(s1.iterations == s2.iterations);
  CHECK((s1.x - s2.x).cwiseAbs().maxCoeff() == 0.0);
  CHECK((s1.y - s2.y).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("cross-validation on random LPs against vertex enumeration") {
  std::mt19937 rng(123);
  std::uniform_real_distribution<Real> u(0.0, 1.0);
  for (int inst = 0; inst < 30; ++inst) {
    const Index n = 5 + (Index)(u(rng) * 10);  // up to ~15 variables
    const Index mrows = 2 + (Index)(u(rng) * 3);
    MatX a(mrows, n);
    VecX x0(n), c(n);
    for (Index i = 0; i < mrows; ++i)
      for (Index j = 0; j < n; ++j) a(i, j) = u(rng);
    for (Index j = 0; j < n; ++j) x0[j] = u(rng);
    for (Index j = 0; j < n; ++j) c[j] = u(rng) - 0.2;
    // Bounded feasible set: append a normalization row.
    MatX afull(mrows + 1, n);
    afull.topRows(mrows) = a;
    afull.row(mrows).setOnes();
    VecX b(mrows + 1);
    b.head(mrows) = a * x0;
    b[mrows] = x0.sum();

    const Real oracle = testing::vertex_enumeration_lp(afull, b, c);
    auto sol = conic::solve(simple_lp(afull, b, c));
    REQUIRE(sol.status == SolveStatus::converged);
    CHECK(sol.primal_objective == doctest::Approx(oracle).epsilon(1e-6));
  }
}

TEST_CASE("infeasible problem is detected") {
  // x >= 0 with x = -1
  MatX a(1, 1);
  a << 1;
  VecX b(1);
  b << -1;
  ConicProblem p = simple_lp(a, b, VecX::Ones(1));
  SolverConfig cfg;
  cfg.max_iterations = 50000;
  auto sol = conic::solve(p, cfg);
  CHECK(sol.status != SolveStatus::converged);
}

TEST_CASE("iteration log stream is populated") {
  MatX a(1, 2);
  a << 1, 1;
  VecX b = VecX::Ones(1);
  VecX c(2);
  c << 1, 2;
  std::ostringstream log;
  SolverConfig cfg;
  cfg.log = &log;
  cfg.log_interval = 1;
  conic::solve(simple_lp(a, b, c), cfg);
  CHECK(log.str().find('\t') != std::string::npos);
}

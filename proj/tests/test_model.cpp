#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Eigenvalues>

#include <cmath>

#include "sce/model.hpp"
#include "support/oracles.hpp"

using namespace sce;
using model::Profile;

TEST_CASE("spinless chain interaction profiles") {
  SUBCASE("NNN at L=3, U=20") {
    const auto h = model::build_spinless_chain(3, 20, Profile::NNN);
    CHECK(h.v(0, 1) == doctest::Approx(10.0));
    CHECK(h.v(0, 2) == doctest::Approx(0.5));
    CHECK(h.v(1, 2) == doctest::Approx(10.0));
    CHECK(h.t(0, 1) == doctest::Approx(1.0));
    CHECK(h.t(1, 2) == doctest::Approx(1.0));
    CHECK(h.t(0, 2) == doctest::Approx(0.0));
  }
  SUBCASE("NNNN at L=4, U=20 reaches distance 3") {
    const auto h = model::build_spinless_chain(4, 20, Profile::NNNN);
    CHECK(h.v(0, 3) == doctest::Approx(0.1));
    CHECK(h.v(0, 1) == doctest::Approx(10.0));
    CHECK(h.v(0, 2) == doctest::Approx(1.0));
  }
  SUBCASE("free NN dimer") {
    const auto h = model::build_spinless_chain(2, 0, Profile::NN);
    CHECK(h.v.cwiseAbs().maxCoeff() == 0.0);
    CHECK(h.t(0, 1) == 1.0);
    CHECK(h.t(1, 0) == 1.0);
    CHECK(h.t(0, 0) == 0.0);
  }
  CHECK_THROWS_AS(model::build_spinless_chain(1, 1.0, Profile::NN), std::invalid_argument);
}

TEST_CASE("spinful lattice construction") {
  SUBCASE("single spatial site couples only the two spins") {
    const auto h = model::build_spinful_lattice(1, 1, 4.0, 1.0);
    CHECK(h.L == 2);
    CHECK(h.t.cwiseAbs().maxCoeff() == 0.0);
    CHECK(h.v(0, 1) + h.v(1, 0) == doctest::Approx(4.0));  // ordered-pair coefficient
    // With two particles the only state pays exactly U.
    const auto ed = model::exact_ground_state(h, 2);
    CHECK(ed.energy == doctest::Approx(4.0).epsilon(1e-12));
  }
  SUBCASE("free dimer has single-particle energy -1") {
    const auto h = model::build_spinful_lattice(2, 1, 0.0, 0.0);
    const auto ed = model::exact_ground_state(h, 1);
    CHECK(ed.energy == doctest::Approx(-1.0).epsilon(1e-12));
  }
  SUBCASE("3x3 lattice geometry") {
    const auto h = model::build_spinful_lattice(3, 3, 10.0, 0.5);
    CHECK(h.L == 18);
    // every spatial bond carries V/2 between each of the four spin pairs
    CHECK(h.v(0, 1) == doctest::Approx(0.25));
    CHECK(h.v(0, 10) == doctest::Approx(0.25));  // up(site0) x down(site1)
    CHECK(h.v(0, 9) == doctest::Approx(5.0));    // on-site U/2
  }
  CHECK_THROWS_AS(model::build_spinful_lattice(0, 2, 1.0, 0.0), std::invalid_argument);
}

TEST_CASE("exact diagonalization basics") {
  SUBCASE("free dimer") {
    const auto h = model::build_spinless_chain(2, 0, Profile::NN);
    const auto ed = model::exact_ground_state(h, 1);
    CHECK(ed.energy == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(ed.density.sum() == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("Hubbard dimer closed form across U") {
    for (Real u : {0.0, 1.0, 4.0, 8.0, 16.0}) {
      auto h = model::build_spinful_lattice(2, 1, u, 0.0);
      const auto ed = model::exact_ground_state(h, 2);
      const Real exact = (u - std::sqrt(u * u + 16.0)) / 2.0;
      CHECK(ed.energy == doctest::Approx(exact).epsilon(1e-10));
    }
  }
  SUBCASE("vacuum sector") {
    const auto h = model::build_spinless_chain(4, 5, Profile::NN);
    const auto ed = model::exact_ground_state(h, 0);
    CHECK(ed.energy == 0.0);
    CHECK(ed.density.cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("argument validation") {
    const auto h = model::build_spinless_chain(4, 5, Profile::NN);
    CHECK_THROWS_AS(model::exact_ground_state(h, 5), std::invalid_argument);
    CHECK_THROWS_AS(model::exact_ground_state(h, -1), std::invalid_argument);
  }
}

TEST_CASE("density_of") {
  SUBCASE("basis state |1,0>") {
    model::FockVector psi;
    psi.L = 2;
    psi.amplitudes = VecX::Zero(4);
    psi.amplitudes[1] = 1.0;  // bit 0 set: site 1 occupied
    const VecX rho = model::density_of(psi);
    CHECK(rho[0] == doctest::Approx(1.0));
    CHECK(rho[1] == doctest::Approx(0.0));
  }
  SUBCASE("equal superposition") {
    model::FockVector psi;
    psi.L = 2;
    psi.amplitudes = VecX::Zero(4);
    psi.amplitudes[1] = psi.amplitudes[2] = 1.0 / std::sqrt(2.0);
    const VecX rho = model::density_of(psi);
    CHECK(rho[0] == doctest::Approx(0.5));
    CHECK(rho[1] == doctest::Approx(0.5));
  }
  SUBCASE("ED ground state density sums to N") {
    const auto h = model::build_spinless_chain(4, 5, Profile::NN);
    const auto ed = model::exact_ground_state(h, 2);
    const VecX rho = model::density_of(ed.ground_state);
    CHECK(rho.sum() == doctest::Approx(2.0).epsilon(1e-10));
    CHECK((rho - ed.density).cwiseAbs().maxCoeff() <= 1e-12);
  }
  SUBCASE("unnormalized input is rejected") {
    model::FockVector psi;
    psi.L = 1;
    psi.amplitudes = VecX::Zero(2);
    psi.amplitudes[0] = 1.1;
    CHECK_THROWS_AS(model::density_of(psi), std::invalid_argument);
  }
}

TEST_CASE("ED invariants") {
  SUBCASE("energy equals the Rayleigh quotient and density stays in [0,1]") {
    for (int N : {1, 2, 3}) {
      const auto h = model::build_spinless_chain(5, 3.5, Profile::NNN);
      const auto ed = model::exact_ground_state(h, N);
      const auto states = model::sector_states(h.L, N);
      const auto hs = model::sector_hamiltonian(h, states);
      VecX sector(states.size());
      for (size_t k = 0; k < states.size(); ++k) sector[(Index)k] = ed.ground_state.amplitudes[states[k]];
      CHECK(std::abs(sector.dot(hs * sector) - ed.energy) <= 1e-10);
      CHECK(ed.density.minCoeff() >= -1e-12);
      CHECK(ed.density.maxCoeff() <= 1.0 + 1e-12);
      CHECK(ed.density.sum() == doctest::Approx((Real)N).epsilon(1e-10));
    }
  }
  SUBCASE("particle-hole symmetry of the free bipartite chain") {
    auto h = model::build_spinless_chain(6, 0, Profile::NN);
    const auto e2 = model::exact_ground_state(h, 2).energy;
    const auto e4 = model::exact_ground_state(h, 4).energy;
    CHECK(e2 == doctest::Approx(e4).epsilon(1e-10));
  }
}

TEST_CASE("sector assembly matches the full Fock-space Hamiltonian up to L=6") {
  for (int L : {3, 4, 5, 6}) {
    model::HamiltonianSpec h;
    h.L = L;
    h.t = MatX::Zero(L, L);
    h.w = VecX::Zero(L);
    h.v = MatX::Zero(L, L);
    std::mt19937 rng(100 + L);
    std::uniform_real_distribution<Real> u(-1.0, 1.0);
    for (int p = 0; p < L; ++p)
      for (int q = p + 1; q < L; ++q) {
        h.t(p, q) = h.t(q, p) = u(rng);
        h.v(p, q) = h.v(q, p) = u(rng);
      }
    for (int p = 0; p < L; ++p) h.w[p] = u(rng);

    const MatX full = testing::full_fock_hamiltonian(h);
    for (int N = 0; N <= L; ++N) {
      const auto states = model::sector_states(L, N);
      const MatX sector = MatX(model::sector_hamiltonian(h, states));
      MatX projected(states.size(), states.size());
      for (size_t a = 0; a < states.size(); ++a)
        for (size_t b = 0; b < states.size(); ++b)
          projected((Index)a, (Index)b) = full(states[a], states[b]);
      CHECK((sector - projected).cwiseAbs().maxCoeff() <= 1e-12);
    }
  }
}

TEST_CASE("lanczos matches dense diagonalization on a midsize sector") {
  const auto h = model::build_spinless_chain(12, 4.0, Profile::NNN);
  const auto states = model::sector_states(12, 6);  // dim 924
  const auto hs = model::sector_hamiltonian(h, states);
  const MatX dense(hs);
  Eigen::SelfAdjointEigenSolver<MatX> es(dense);
  auto [theta, vec] = model::lanczos_smallest(hs, 1e-11);
  CHECK(theta == doctest::Approx(es.eigenvalues()[0]).epsilon(1e-10));
  CHECK((hs * vec - theta * vec).norm() <= 1e-9);
}

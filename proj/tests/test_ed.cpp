#include <catch2/catch_amalgamated.hpp>

#include "stochspin/ed.hpp"

#include <cmath>
#include <complex>
#include <vector>

using namespace stochspin;
using Catch::Approx;

TEST_CASE("ed: single-spin Rabi oscillation of S^z") {
    auto model = build_ising_coupling({{1}}, 0.0, 2.3, 0.0);
    EdEvolver ed(model);
    DenseState psi = down_state(1);
    for (double t : {0.3, 0.7, 1.4}) {
        DenseState s = psi;
        ed.evolve(s, t);
        CHECK(ed_mz_avg(s) == Approx(-0.5 * std::cos(2.3 * t)).margin(1e-9));
        CHECK(s.norm() == Approx(1.0).margin(1e-10));
    }
}

TEST_CASE("ed: Gamma=0 Hamiltonian is diagonal, basis states only pick up phases") {
    auto model = build_ising_coupling({{2, 2}}, 1.0, 0.0, 0.4);
    EdEvolver ed(model);
    DenseState psi = down_state(4);
    DenseState evolved = psi;
    ed.evolve(evolved, 1.3);
    CHECK(std::abs(std::abs(psi.amps.dot(evolved.amps)) - 1.0) < 1e-10);
    CHECK(ed_mz_avg(evolved) == Approx(-0.5).margin(1e-10));
}

TEST_CASE("ed: two-site chain against the dense 4x4 matrix exponential") {
    auto model = build_ising_coupling({{2}}, 1.0, 0.9, 0.0);
    EdEvolver ed(model);

    // Dense H in the same basis conventions.
    CMatrix h = CMatrix::Zero(4, 4);
    for (std::size_t s = 0; s < 4; ++s) {
        CVector e = CVector::Zero(4);
        e(s) = 1.0;
        CVector he;
        ed.apply(e, he);
        h.col(s) = he;
    }
    CHECK((h - h.adjoint()).cwiseAbs().maxCoeff() < 1e-14);

    const double t = 0.8;
    Eigen::SelfAdjointEigenSolver<CMatrix> es(h);
    CVector phases(4);
    for (int k = 0; k < 4; ++k) phases(k) = std::polar(1.0, -t * es.eigenvalues()(k));
    CMatrix u = es.eigenvectors() * phases.asDiagonal() * es.eigenvectors().adjoint();

    DenseState psi = down_state(2);
    CVector expected = u * psi.amps;
    ed.evolve(psi, t);
    CHECK((psi.amps - expected).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("ed: energy is conserved along the evolution") {
    auto model = build_ising_coupling({{3, 3}}, 1.0, 2.0, 2.0);
    EdEvolver ed(model);
    DenseState psi = down_state(9);
    const double e0 = ed.energy(psi);
    for (int k = 0; k < 6; ++k) {
        ed.evolve(psi, 0.25);
        CHECK(ed.energy(psi) == Approx(e0).margin(1e-8));
        CHECK(psi.norm() == Approx(1.0).margin(1e-10));
    }
}

TEST_CASE("ed: t=0 reference values from the down state") {
    DenseState psi = down_state(4);
    CHECK(ed_mz_avg(psi) == Approx(-0.5));
    CHECK(ed_mx_avg(psi) == Approx(0.0));
    CHECK(ed_overlap_down(psi) == Complex(1.0, 0.0));
    CHECK(ed_overlap_up(psi) == Complex(0.0, 0.0));
}

TEST_CASE("ed: ground state at Gamma=0 with h<0 is all-down") {
    auto model = build_ising_coupling({{5}}, 1.0, 0.0, -0.3);
    auto gs = ground_state_check(model);
    CHECK_FALSE(gs.degenerate);
    CHECK(std::abs(gs.state(0)) == Approx(1.0).margin(1e-8));
    // E = -J * N * D / 4 + h * (-N/2) ... all-down classical energy.
    const double expected = -1.0 * 5.0 / 4.0 - (-0.3) * (-2.5);
    CHECK(gs.energy == Approx(expected).margin(1e-9));
}

TEST_CASE("ed: ground state at Gamma=0, h=0 is two-fold degenerate") {
    auto model = build_ising_coupling({{5}}, 1.0, 0.0, 0.0);
    auto gs = ground_state_check(model);
    CHECK(gs.degenerate);
}

TEST_CASE("ed: 1D N=12 gap scan is consistent with the QPT near Gamma = J/2") {
    // In the ferromagnetic phase the splitting between the two lowest states is
    // exponentially small; in the paramagnetic phase it is O(1). The crossover
    // should happen around Gamma = 0.5 J.
    std::vector<double> gammas = {0.25, 0.5, 0.75, 1.0};
    std::vector<double> gaps;
    for (double g : gammas) {
        auto model = build_ising_coupling({{12}}, 1.0, g, 0.0);
        auto gs = ground_state_check(model);
        gaps.push_back(gs.first_excited - gs.energy);
    }
    CHECK(gaps[0] < 0.02);
    CHECK(gaps[3] > 0.2);
    for (std::size_t k = 0; k + 1 < gaps.size(); ++k) CHECK(gaps[k] < gaps[k + 1]);
}

TEST_CASE("ed: rejects oversized systems") {
    LatticeSpec big{{5, 5}};
    auto model = build_ising_coupling(big, 1.0, 1.0, 0.0);
    CHECK_THROWS_AS(EdEvolver(model, 20), std::invalid_argument);
}

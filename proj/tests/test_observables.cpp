#include <catch2/catch_amalgamated.hpp>

#include "stochspin/ed.hpp"
#include "stochspin/observables.hpp"
#include "stochspin/sde.hpp"

#include <cmath>
#include <complex>
#include <vector>

using namespace stochspin;
using Catch::Approx;

TEST_CASE("eval_norm: trivial values") {
    std::vector<SiteState> zero(4);
    CHECK(eval_norm(zero, zero) == Complex(1.0, 0.0));

    SiteState s;
    s.p = {1.0, 0.0};
    std::vector<SiteState> one{s};
    CHECK(std::abs(eval_norm(one, one) - Complex(2.0, 0.0)) < 1e-15);
}

TEST_CASE("eval_mz: down state gives -1/2, fixing the sign convention") {
    std::vector<SiteState> zero(3);
    const Complex f1 = eval_norm(zero, zero);
    CHECK(std::abs(eval_mz(zero, zero) / f1 - Complex(-0.5, 0.0)) < 1e-15);
    CHECK(std::abs(eval_mz(zero, zero, 1) / f1 - Complex(-0.5, 0.0)) < 1e-15);
}

TEST_CASE("eval_mx: down state gives 0") {
    std::vector<SiteState> zero(3);
    CHECK(std::abs(eval_mx(zero, zero)) < 1e-15);
}

TEST_CASE("factorized structure: F_O = F_1 * F_bar by identity") {
    SiteState f;
    f.p = {0.3, -0.2};
    f.z = {0.1, 0.4};
    SiteState b;
    b.p = {-0.1, 0.6};
    b.z = {0.2, -0.3};
    std::vector<SiteState> fv{f, b}, bv{b, f};
    const Complex f1 = eval_norm(fv, bv);
    CHECK(std::abs(eval_mz(fv, bv) - f1 * mz_bar(fv, bv, std::nullopt)) < 1e-14);
    CHECK(std::abs(eval_mx(fv, bv) - f1 * mx_bar(fv, bv, std::nullopt)) < 1e-14);
}

TEST_CASE("loschmidt: trivial values at t=0") {
    std::vector<SiteState> zero(5);
    CHECK(eval_loschmidt(zero, ObservableKind::loschmidt_dd) == Complex(1.0, 0.0));
    CHECK(eval_loschmidt(zero, ObservableKind::loschmidt_ud) == Complex(0.0, 0.0));
}

TEST_CASE("loschmidt: single-spin Rabi return amplitudes") {
    // J=0 single spin under Gamma: A_dd = cos(Gamma t / 2), A_ud = i sin(Gamma t / 2).
    auto model = build_ising_coupling({{1}}, 0.0, 1.7, 0.0);
    auto transform = noise_transform(model);
    IntegratorSpec spec;
    spec.scheme = Scheme::heun;
    spec.dt = 1e-4;
    auto traj = integrate_trajectory(model, transform, spec, {}, nullptr, Branch::forward, 8000);
    REQUIRE(traj.valid);
    const double t = 0.8;
    const auto& s = traj.nodes.back();
    const Complex add = eval_loschmidt(s, ObservableKind::loschmidt_dd);
    const Complex aud = eval_loschmidt(s, ObservableKind::loschmidt_ud);
    CHECK(std::abs(add - Complex(std::cos(1.7 * t / 2), 0.0)) < 1e-6);
    CHECK(std::abs(aud - Complex(0.0, std::sin(1.7 * t / 2))) < 1e-6);
    CHECK(std::norm(add) == Approx(std::pow(std::cos(1.7 * t / 2), 2)).margin(1e-6));

    // Same numbers from the ED oracle.
    EdEvolver ed(model);
    DenseState psi = down_state(1);
    ed.evolve(psi, t);
    CHECK(std::abs(add - ed_overlap_down(psi)) < 1e-6);
    CHECK(std::abs(aud - ed_overlap_up(psi)) < 1e-6);
}

TEST_CASE("loschmidt: log-domain evaluation stays finite for large N") {
    std::vector<SiteState> f(400);
    for (auto& s : f) {
        s.p = {0.2, 0.1};
        s.z = {1.5, 0.3};  // e^{-z/2} per site would underflow as a plain product
    }
    const Complex add = eval_loschmidt(f, ObservableKind::loschmidt_dd);
    CHECK(std::isfinite(add.real()));
    CHECK(std::isfinite(add.imag()));
    const Complex f1 = eval_norm(f, f);
    CHECK(std::isfinite(f1.real()));
}

TEST_CASE("return_probability: trivial and propagated values") {
    auto p0 = return_probability({1.0, 0.0}, 0.0, {0.0, 0.0}, 0.0, 9);
    CHECK(p0.lambda == Approx(0.0));
    CHECK(p0.reliable);

    // |A|^2 = 0.25 + 0.25, lambda = -log(0.5)/4.
    auto p1 = return_probability({0.5, 0.0}, 0.01, {0.0, 0.5}, 0.02, 4);
    CHECK(p1.lambda == Approx(-std::log(0.5) / 4.0));
    const double var =
        4.0 * (0.25 * 0.01 * 0.01 + 0.25 * 0.02 * 0.02);
    CHECK(p1.stderr_lambda == Approx(std::sqrt(var) / (0.5 * 4.0)));

    auto bad = return_probability({1e-8, 0.0}, 1.0, {0.0, 0.0}, 0.0, 4);
    CHECK_FALSE(bad.reliable);
}

TEST_CASE("observable names round-trip and validate") {
    for (auto k : {ObservableKind::norm, ObservableKind::magnetization_z,
                   ObservableKind::magnetization_x, ObservableKind::loschmidt_dd,
                   ObservableKind::loschmidt_ud}) {
        CHECK(observable_from_name(observable_name(k)) == k);
    }
    CHECK_THROWS_AS(observable_from_name("bogus"), std::invalid_argument);
    CHECK(needs_backward_branch(ObservableKind::magnetization_z));
    CHECK_FALSE(needs_backward_branch(ObservableKind::loschmidt_dd));
}

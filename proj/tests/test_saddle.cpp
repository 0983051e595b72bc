#include <catch2/catch_amalgamated.hpp>

#include "stochspin/saddle.hpp"

#include <cmath>
#include <complex>
#include <vector>

using namespace stochspin;
using Catch::Approx;

TEST_CASE("mean_field_sp: down state gives phi(0) = -D/2 per site") {
    auto model = build_ising_coupling({{3, 3}}, 1.0, 2.0, 2.0);
    auto field = mean_field_sp(model, 0.5, 1e-3);
    REQUIRE(field.converged);
    for (int j = 0; j < 9; ++j) {
        CHECK(field.varphi(0, j).real() == Approx(-1.0).margin(1e-12));  // -D/2, D = 2
        CHECK(field.varphi(0, j).imag() == Approx(0.0).margin(1e-14));
    }
}

TEST_CASE("mean_field_sp: Gamma=0 quench stays at the fixed point -D/2") {
    auto model = build_ising_coupling({{3}}, 1.0, 0.0, 0.7);
    auto field = mean_field_sp(model, 1.0, 1e-3);
    REQUIRE(field.converged);
    for (int nidx = 0; nidx < field.n_nodes(); ++nidx) {
        for (int j = 0; j < 3; ++j) {
            CHECK(std::abs(field.varphi(nidx, j) - Complex(-0.5, 0.0)) < 1e-10);
        }
    }
}

TEST_CASE("mean_field_sp: translation invariance and reality conditions") {
    auto model = build_ising_coupling({{3, 3}}, 1.0, 2.0, 2.0);
    auto field = mean_field_sp(model, 1.5, 5e-4);
    REQUIRE(field.converged);
    double max_spread = 0.0;
    double max_imag = 0.0;
    for (int nidx = 0; nidx < field.n_nodes(); ++nidx) {
        for (int j = 0; j < 9; ++j) {
            max_spread = std::max(max_spread, std::abs(field.varphi(nidx, j) - field.varphi(nidx, 0)));
            max_imag = std::max(max_imag, std::abs(field.varphi(nidx, j).imag()));
        }
    }
    CHECK(max_spread < 1e-10);  // uniform initial state
    CHECK(max_imag < 1e-8);     // phi_z real, phi+ = (phi-)* = 0
}

TEST_CASE("functional_derivatives: coincident-time values") {
    auto model = build_ising_coupling({{2}}, 1.0, 1.2, 0.4);
    auto transform = noise_transform(model);
    IntegratorSpec spec;
    spec.scheme = Scheme::heun;
    spec.dt = 1e-3;
    auto traj = integrate_trajectory(model, transform, spec, {}, nullptr, Branch::forward, 100);
    REQUIRE(traj.valid);

    auto d = functional_derivatives(model, traj, 0, 60, '+');
    CHECK(std::abs(d.d_xi_plus.front() - Complex(0.0, 1.0)) < 1e-12);  // iJ, J = 1

    auto dz = functional_derivatives(model, traj, 0, 60, 'z');
    CHECK(std::abs(dz.d_xi_z.front() - Complex(0.0, 1.0)) < 1e-12);
}

TEST_CASE("functional_derivatives: zero-field trajectory gives constant iJ") {
    auto model = build_ising_coupling({{2}}, 1.0, 0.0, 0.0);
    auto transform = noise_transform(model);
    IntegratorSpec spec;
    spec.dt = 1e-3;
    auto traj = integrate_trajectory(model, transform, spec, {}, nullptr, Branch::forward, 50);
    auto d = functional_derivatives(model, traj, 0, 10, '+');
    for (const auto& v : d.d_xi_plus) CHECK(std::abs(v - Complex(0.0, 1.0)) < 1e-12);
}

TEST_CASE("functional_derivatives: finite-difference oracle") {
    auto model = build_ising_coupling({{2}}, 1.0, 1.1, 0.4);
    const double dt = 1e-3;
    const int steps = 100;
    const int t_prime = 40;
    const int site = 0;

    // Smooth complex background field.
    CMatrix base(steps + 1, 2);
    for (int nidx = 0; nidx <= steps; ++nidx) {
        const double t = nidx * dt;
        base(nidx, 0) = Complex(0.3 * std::cos(2 * t), 0.1 * std::sin(t));
        base(nidx, 1) = Complex(-0.2 * std::sin(t), 0.05 * t);
    }

    auto traj = stochspin::detail::integrate_with_field(model, base, dt, steps, 10.0);
    REQUIRE(traj.valid);
    auto deriv = functional_derivatives(model, traj, site, t_prime, 'z');

    const double eps = 1e-6;
    CMatrix up = base, down = base;
    up(t_prime, site) += eps;
    down(t_prime, site) -= eps;
    auto traj_up = stochspin::detail::integrate_with_field(model, up, dt, steps, 10.0);
    auto traj_dn = stochspin::detail::integrate_with_field(model, down, dt, steps, 10.0);

    // The node perturbation enters the quadrature with measure dt.
    const Complex fd_plus = (traj_up.nodes[steps][site].xi_plus() -
                             traj_dn.nodes[steps][site].xi_plus()) /
                            (2.0 * eps * dt);
    const Complex an_plus = deriv.d_xi_plus[steps - t_prime];
    CHECK(std::abs(fd_plus - an_plus) / std::abs(an_plus) < 1e-4);

    const Complex fd_z =
        (traj_up.nodes[steps][site].z - traj_dn.nodes[steps][site].z) / (2.0 * eps * dt);
    const Complex an_z = deriv.d_xi_z[steps - t_prime];
    CHECK(std::abs(fd_z - an_z) / std::abs(an_z) < 1e-4);

    CHECK_THROWS_AS(functional_derivatives(model, traj, site, steps + 1, 'z'),
                    std::invalid_argument);
}

TEST_CASE("recursive_sp: normalization action converges to the mean field") {
    auto model = build_ising_coupling({{6}}, 1.0, 1.0, 0.3);
    const double dt = 2.5e-4;
    const double t_f = 1.0;
    auto mf = mean_field_sp(model, t_f, dt);
    auto rec = recursive_sp(model, SPActionKind::normalization, t_f, dt);
    REQUIRE(rec.converged);
    double max_diff = 0.0;
    for (int nidx = 0; nidx < rec.n_nodes(); ++nidx) {
        for (int j = 0; j < 6; ++j) {
            max_diff = std::max(max_diff, std::abs(rec.varphi(nidx, j) - mf.varphi(nidx, j)));
        }
    }
    CHECK(max_diff < 1e-6);
}

TEST_CASE("recursive_sp: residual certificate on a converged field") {
    auto model = build_ising_coupling({{4}}, 1.0, 0.8, 0.2);
    const double dt = 5e-4;
    auto rec = recursive_sp(model, SPActionKind::normalization, 0.5, dt);
    REQUIRE(rec.converged);

    auto traj = stochspin::detail::integrate_with_field(model, rec.varphi, dt, rec.n_nodes() - 1,
                                                        10.0);
    CMatrix rhs;
    stochspin::detail::action_rhs(model, traj, SPActionKind::normalization, 0.5, rhs);
    CMatrix reconstructed = Complex(0.0, -1.0) * (rhs * model.zz);
    const double residual = (reconstructed - rec.varphi).cwiseAbs().maxCoeff();
    CHECK(residual < 10.0 * 1e-8);
}

TEST_CASE("recursive_sp: prefix property of the normalization solution") {
    auto model = build_ising_coupling({{5}}, 1.0, 1.0, 0.2);
    const double dt = 1e-4;
    auto a = recursive_sp(model, SPActionKind::normalization, 0.3, dt);
    auto b = recursive_sp(model, SPActionKind::normalization, 0.6, dt);
    REQUIRE(a.converged);
    REQUIRE(b.converged);
    double max_diff = 0.0;
    for (int nidx = 0; nidx < a.n_nodes(); ++nidx) {
        for (int j = 0; j < 5; ++j) {
            max_diff = std::max(max_diff, std::abs(a.varphi(nidx, j) - b.varphi(nidx, j)));
        }
    }
    CHECK(max_diff < 1e-8);
}

TEST_CASE("sp_endtime_scan: warm starts do not move converged answers") {
    auto model = build_ising_coupling({{5}}, 1.0, 1.0, 0.2);
    const double dt = 5e-4;
    std::vector<double> tfs = {0.2, 0.3, 0.4};
    auto [cold, cold_trace] = sp_endtime_scan(model, SPActionKind::normalization, tfs, dt);
    SPSolveOptions opt;
    auto [warm, warm_trace] = sp_endtime_scan(model, SPActionKind::normalization, tfs, dt, opt, true);
    for (std::size_t k = 0; k < tfs.size(); ++k) {
        REQUIRE(cold[k].converged);
        REQUIRE(warm[k].converged);
        const double diff = (cold[k].varphi - warm[k].varphi).cwiseAbs().maxCoeff();
        CHECK(diff < 10.0 * opt.tolerance);
    }
}

TEST_CASE("recursive_sp: magnetization action stays within O(1/N) of the norm action") {
    SPSolveOptions opt;
    const double dt = 5e-4;
    const double t_f = 0.6;
    std::vector<int> sizes = {6, 12};
    std::vector<double> dist;
    for (int nsize : sizes) {
        auto model = build_ising_coupling({{nsize}}, 1.0, 0.5, 0.2);
        auto norm = recursive_sp(model, SPActionKind::normalization, t_f, dt, opt);
        auto mz = recursive_sp(model, SPActionKind::magnetization_z, t_f, dt, opt);
        REQUIRE(norm.converged);
        REQUIRE(mz.converged);
        dist.push_back((norm.varphi - mz.varphi).cwiseAbs().maxCoeff());
    }
    CHECK(dist[0] > dist[1]);  // shrinks with N
    const double p = std::log(dist[0] / dist[1]) / std::log(2.0);
    CHECK(p == Approx(1.0).margin(0.45));
}

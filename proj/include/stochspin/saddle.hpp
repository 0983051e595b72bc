// saddle.hpp — dominant (saddle-point) field configurations: the closed
// mean-field form for local observables, functional derivatives of the
// disentangling variables, and the recursive end-time solver used for
// Loschmidt amplitudes.
//
// The key identity used throughout: along any trajectory of the equations of
// motion, exp(i int_{t'}^{t} [Phi_z - 2 Phi- xi+] ds) = exp(xi_z(t) - xi_z(t')),
// because the exponent integrates the xi_z equation of motion exactly. The
// derivative kernels therefore need only the stored trajectory, and each
// recursive iteration costs O(sites x grid).
//
// Conventions (cross-validated by the normalization/mean-field acceptance
// check): equal-time Heaviside theta(0) = 1, and the normalization action is
// weighted per branch so its fixed point is phi_j = sum_k zz_jk v_k, the mean
// field produced by the normalized spin expectations.

#pragma once

#include "stochspin/observables.hpp"
#include "stochspin/sde.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <utility>
#include <vector>

namespace stochspin {

// ------------------------------- Saddle field --------------------------------

struct SaddleField {
    double dt = 0.0;
    double t_f = 0.0;
    CMatrix varphi;  // (n_nodes x n_sites) complex SP field, site basis
    int iterations = 0;
    bool converged = true;
    double residual = 0.0;

    int n_nodes() const { return static_cast<int>(varphi.rows()); }
    int n_sites() const { return static_cast<int>(varphi.cols()); }
};

struct SPTraceEntry {
    double t_f = 0.0;
    int iterations = 0;
    double residual = 0.0;
    bool converged = true;
};

struct SPIterationTrace {
    std::vector<SPTraceEntry> entries;
};

// --------------------- deterministic trajectory helpers ----------------------

namespace detail {

// Normalized spin expectation v^z of the single-site state built from xi+.
inline double v_z(const SiteState& s) {
    const double a2 = std::norm(s.p);
    if (s.inverse) return (1.0 - a2) / (2.0 * (1.0 + a2));
    return (a2 - 1.0) / (2.0 * (1.0 + a2));
}

// Heun step of the noise-free equations of motion, z-channel field given at
// both ends of the step.
inline void heun_step(std::vector<SiteState>& state, const CouplingModel& model,
                      const Complex* shift_now, const Complex* shift_next, double dt,
                      double threshold, int* reparams) {
    const int n = static_cast<int>(state.size());
    for (int j = 0; j < n; ++j) {
        SiteState& s = state[j];
        PhiFields phi1;
        phi1.plus = model.h_plus();
        phi1.minus = model.h_minus();
        phi1.z = model.h_z() + model.coupling_j * shift_now[j];
        PhiFields phi2 = phi1;
        phi2.z = model.h_z() + model.coupling_j * shift_next[j];

        const SiteDerivative k1 = chart_drift(s, phi1, false);
        SiteState pred = s;
        pred.p += k1.dp * dt;
        pred.z += k1.dz * dt;
        const SiteDerivative k2 = chart_drift(pred, phi2, false);
        s.p += 0.5 * (k1.dp + k2.dp) * dt;
        s.z += 0.5 * (k1.dz + k2.dz) * dt;
        if (std::abs(s.p) > threshold) {
            s = reparameterize(s);
            if (reparams != nullptr) ++(*reparams);
        }
    }
}

// log exp(xi_z) as stored, stable in both charts; defined modulo 4 pi i which
// drops out of every exponential built from differences.
inline Complex log_exp_xiz(const SiteState& s) {
    return s.inverse ? s.z - 2.0 * std::log(s.p) : s.z;
}

inline bool all_finite(const std::vector<SiteState>& state) {
    for (const auto& s : state) {
        if (!s.finite()) return false;
    }
    return true;
}

// Deterministic trajectory under a node-indexed field table.
inline DisentanglingTrajectory integrate_with_field(const CouplingModel& model,
                                                    const CMatrix& varphi, double dt, int steps,
                                                    double threshold) {
    const int n = model.n_sites();
    DisentanglingTrajectory traj;
    traj.dt = dt;
    traj.nodes.reserve(steps + 1);
    std::vector<SiteState> state(n);
    traj.nodes.push_back(state);
    std::vector<Complex> row_now(n), row_next(n);
    int reparams = 0;
    for (int step = 0; step < steps; ++step) {
        for (int j = 0; j < n; ++j) {
            row_now[j] = varphi(step, j);
            row_next[j] = varphi(step + 1, j);
        }
        heun_step(state, model, row_now.data(), row_next.data(), dt, threshold, &reparams);
        if (!all_finite(state)) {
            traj.valid = false;
            break;
        }
        traj.nodes.push_back(state);
    }
    traj.reparameterizations = reparams;
    return traj;
}

}  // namespace detail

// ------------------------------ mean-field SP --------------------------------

// Co-integrates the deterministic equations of motion with
// phi_j(t) = sum_k zz_jk v^z_k(t); the result is end-time independent by
// construction, so t_max can be chosen per run.
inline SaddleField mean_field_sp(const CouplingModel& model, double t_max, double dt,
                                 double divergence_threshold = 10.0) {
    const int n = model.n_sites();
    const int steps = static_cast<int>(std::round(t_max / dt));
    SaddleField field;
    field.dt = dt;
    field.t_f = steps * dt;
    field.varphi.resize(steps + 1, n);

    std::vector<SiteState> state(n);
    Vector v(n);
    auto field_of = [&](const std::vector<SiteState>& st) {
        for (int j = 0; j < n; ++j) v(j) = detail::v_z(st[j]);
        return Vector(model.zz * v);
    };

    Vector phi_now = field_of(state);
    for (int k = 0; k < n; ++k) field.varphi(0, k) = phi_now(k);
    std::vector<Complex> row_now(n), row_next(n);
    for (int step = 0; step < steps; ++step) {
        for (int j = 0; j < n; ++j) row_now[j] = phi_now(j);
        // Field at the end of the step from a predictor state (Heun on the
        // composed system).
        std::vector<SiteState> pred = state;
        detail::heun_step(pred, model, row_now.data(), row_now.data(), dt, divergence_threshold,
                          nullptr);
        Vector phi_pred = field_of(pred);
        for (int j = 0; j < n; ++j) row_next[j] = phi_pred(j);
        detail::heun_step(state, model, row_now.data(), row_next.data(), dt,
                          divergence_threshold, nullptr);
        if (!detail::all_finite(state)) {
            field.converged = false;
            field.varphi.conservativeResize(step + 1, n);
            field.t_f = step * dt;
            return field;
        }
        phi_now = field_of(state);
        for (int k = 0; k < n; ++k) field.varphi(step + 1, k) = phi_now(k);
    }
    return field;
}

// -------------------------- functional derivatives ---------------------------

struct FunctionalDerivs {
    int t_prime_index = 0;
    // Entries for t >= t'; index 0 corresponds to t = t'.
    std::vector<Complex> d_xi_plus;
    std::vector<Complex> d_xi_z;
};

// Derivatives of xi+(t) and xi_z(t) at one site w.r.t. the HS field phi^a(t'),
// a in {'+', 'z', '-'}, by quadrature along a stored trajectory. Equal-time
// convention theta(0) = 1.
inline FunctionalDerivs functional_derivatives(const CouplingModel& model,
                                               const DisentanglingTrajectory& traj, int site,
                                               int t_prime_index, char lie_index) {
    const int m = traj.n_steps();
    if (t_prime_index < 0 || t_prime_index > m) {
        throw std::invalid_argument("functional_derivatives: t' beyond grid");
    }
    const Complex iJ(0.0, model.coupling_j);
    const double phi_minus = model.h_minus();  // z-only fields: Phi- = Gamma/2

    const SiteState& sp = traj.nodes[t_prime_index][site];
    const Complex xi_p = sp.xi_plus();
    Complex bracket_plus, bracket_z;
    switch (lie_index) {
        case '+':
            bracket_plus = 1.0;
            bracket_z = 0.0;
            break;
        case 'z':
            bracket_plus = xi_p;
            bracket_z = 1.0;
            break;
        case '-':
            bracket_plus = -xi_p * xi_p;
            bracket_z = -2.0 * xi_p;
            break;
        default:
            throw std::invalid_argument("functional_derivatives: lie index must be +, z or -");
    }

    const Complex log_ez_tp = detail::log_exp_xiz(sp);
    FunctionalDerivs out;
    out.t_prime_index = t_prime_index;
    out.d_xi_plus.reserve(m - t_prime_index + 1);
    out.d_xi_z.reserve(m - t_prime_index + 1);

    Complex integral{0.0, 0.0};  // int_{t'}^{t} Phi-(s) dxi+/dphi ds, trapezoid
    Complex prev_dplus{0.0, 0.0};
    for (int nidx = t_prime_index; nidx <= m; ++nidx) {
        const SiteState& s = traj.nodes[nidx][site];
        const Complex kernel = std::exp(detail::log_exp_xiz(s) - log_ez_tp);
        const Complex dplus = iJ * bracket_plus * kernel;
        if (nidx > t_prime_index) {
            integral += 0.5 * traj.dt * phi_minus * (prev_dplus + dplus);
        }
        out.d_xi_plus.push_back(dplus);
        out.d_xi_z.push_back(iJ * bracket_z - 2.0 * Complex(0.0, 1.0) * integral);
        prev_dplus = dplus;
    }
    return out;
}

// ------------------------------ action kinds ---------------------------------

enum class SPActionKind { normalization, loschmidt_dd, loschmidt_ud, magnetization_z };

inline const char* sp_action_name(SPActionKind k) {
    switch (k) {
        case SPActionKind::normalization: return "normalization";
        case SPActionKind::loschmidt_dd: return "loschmidt_dd";
        case SPActionKind::loschmidt_ud: return "loschmidt_ud";
        case SPActionKind::magnetization_z: return "magnetization_z";
    }
    return "?";
}

struct SPSolveOptions {
    double tolerance = 1e-8;
    int max_iterations = 1000;
    double damping = 0.5;  // engaged after `damping_after` non-monotone steps
    int damping_after = 50;
    double divergence_threshold = 10.0;
    // Weight of the log f term in the single-branch Loschmidt actions. The
    // full single-branch gradient (1.0) reproduces the DQPT window of the
    // recursive solver; the two-branch normalization action carries 1/2 per
    // branch instead, which is what makes its fixed point the mean field.
    double loschmidt_weight = 1.0;
};

// ------------------------------ recursive solver ------------------------------

namespace detail {

// Right-hand side R of phi^{(n+1)} = (-i/J) zz R for one trajectory. Building
// blocks per site:
//   q(t')  = xi+(t') exp(-xi_z(t'))      (the same p e^{-z} in both charts)
//   E(s)   = exp(xi_z(s))
//   G(t')  = int_{t'}^{t_f} Phi- E(s) ds  (suffix trapezoid)
//   dxi_z(t_f)/dphi(t') = iJ [1 - 2i q(t') G(t')]
//   dxi+(t_f)/dphi(t')  = iJ q(t') E(t_f)
inline void action_rhs(const CouplingModel& model, const DisentanglingTrajectory& traj,
                       SPActionKind kind, double loschmidt_weight, CMatrix& rhs) {
    const int m = traj.n_steps();
    const int n = traj.n_sites();
    const Complex iJ(0.0, model.coupling_j);
    const Complex two_i(0.0, 2.0);
    const double phi_minus = model.h_minus();
    rhs.resize(m + 1, n);

    double f_avg = 0.0;
    if (kind == SPActionKind::magnetization_z) {
        for (int j = 0; j < n; ++j) {
            f_avg += mz_site_ratio(traj.nodes[m][j], traj.nodes[m][j]).real();
        }
        f_avg /= n;
        if (std::abs(f_avg) < 1e-8) {
            throw std::runtime_error("recursive_sp: averaged magnetization vanishes at t_f");
        }
    }

    for (int j = 0; j < n; ++j) {
        const SiteState& sf = traj.nodes[m][j];
        const Complex e_tf = std::exp(log_exp_xiz(sf));

        // Endpoint combos (chart-aware where the forms differ).
        Complex norm_combo;  // xi+*(t_f) E(t_f) / (1 + |xi+(t_f)|^2)
        if (sf.inverse) {
            norm_combo = std::exp(sf.z) / (sf.p * (std::norm(sf.p) + 1.0));
        } else {
            norm_combo = std::conj(sf.p) * std::exp(sf.z) / (1.0 + std::norm(sf.p));
        }
        const Complex ud_combo = std::exp(sf.z) / sf.p;  // E(t_f) / xi+(t_f)
        const Complex mz_combo =                         // xi+*(t_f) E(t_f) / (1+|xi+|^2)^2
            std::conj(sf.p) * std::exp(sf.z) / std::pow(1.0 + std::norm(sf.p), 2);

        Complex g{0.0, 0.0};
        Complex prev_e = e_tf;
        for (int nidx = m; nidx >= 0; --nidx) {
            const SiteState& s = traj.nodes[nidx][j];
            const Complex e_s = std::exp(log_exp_xiz(s));
            if (nidx < m) g += 0.5 * traj.dt * phi_minus * (prev_e + e_s);
            prev_e = e_s;

            const Complex q = s.xi_plus_exp_minus_xiz();
            const Complex d_xi_z_unit = 1.0 - two_i * q * g;  // dxi_z/dphi / (iJ)
            const Complex d_xi_p_unit = q * e_tf;             // dxi+/dphi / (iJ)

            Complex r{0.0, 0.0};
            switch (kind) {
                case SPActionKind::normalization:
                    r = iJ * (-0.5 * d_xi_z_unit + norm_combo * q);
                    break;
                case SPActionKind::loschmidt_dd:
                    r = -loschmidt_weight * iJ * d_xi_z_unit;
                    break;
                case SPActionKind::loschmidt_ud:
                    r = loschmidt_weight * iJ * (-d_xi_z_unit + 2.0 * ud_combo * q);
                    break;
                case SPActionKind::magnetization_z:
                    r = iJ * (-0.5 * d_xi_z_unit + norm_combo * q +
                              (2.0 / (n * f_avg)) * mz_combo * q);
                    break;
            }
            (void)d_xi_p_unit;
            rhs(nidx, j) = r;
        }
    }
}

}  // namespace detail

// Fixed-point (Picard) iteration of the discretized saddle-point equation for
// the given action, starting from phi = 0 or a warm start. Non-convergence is
// reported through the flags, not an exception: near a DQPT it is signal.
inline SaddleField recursive_sp(const CouplingModel& model, SPActionKind kind, double t_f,
                                double dt, const SPSolveOptions& opt = {},
                                const SaddleField* warm_start = nullptr) {
    const int n = model.n_sites();
    const int m = static_cast<int>(std::round(t_f / dt));
    SaddleField field;
    field.dt = dt;
    field.t_f = m * dt;
    field.varphi = CMatrix::Zero(m + 1, n);
    if (warm_start != nullptr && warm_start->n_sites() == n && warm_start->n_nodes() > 0) {
        const int rows = std::min(m + 1, warm_start->n_nodes());
        field.varphi.topRows(rows) = warm_start->varphi.topRows(rows);
        for (int r = rows; r <= m; ++r) {
            field.varphi.row(r) = warm_start->varphi.row(warm_start->n_nodes() - 1);
        }
    }

    CMatrix rhs, phi_new;
    double prev_delta = std::numeric_limits<double>::infinity();
    double last_delta = prev_delta;
    int non_monotone = 0;
    bool damping_on = false;
    const Complex minus_i_over_j(0.0, -1.0 / model.coupling_j);

    int iter = 0;
    for (; iter < opt.max_iterations; ++iter) {
        auto traj = detail::integrate_with_field(model, field.varphi, dt, m,
                                                 opt.divergence_threshold);
        if (!traj.valid) {
            // The current field drives the trajectory out of both charts; pull
            // the iterate halfway back toward zero and try again.
            field.varphi *= 0.5;
            last_delta = std::numeric_limits<double>::infinity();
            continue;
        }
        detail::action_rhs(model, traj, kind, opt.loschmidt_weight, rhs);
        phi_new = minus_i_over_j * (rhs * model.zz);
        if (!phi_new.allFinite()) {
            field.varphi *= 0.5;
            last_delta = std::numeric_limits<double>::infinity();
            continue;
        }

        last_delta = (phi_new - field.varphi).cwiseAbs().maxCoeff();
        if (last_delta > prev_delta && !damping_on) {
            if (++non_monotone >= opt.damping_after) damping_on = true;
        }
        if (damping_on) {
            field.varphi += opt.damping * (phi_new - field.varphi);
        } else {
            field.varphi = phi_new;
        }
        prev_delta = last_delta;
        if (last_delta < opt.tolerance) {
            field.converged = true;
            field.iterations = iter + 1;
            field.residual = last_delta;
            return field;
        }
    }
    field.converged = false;
    field.iterations = iter;
    field.residual = last_delta;
    return field;
}

// Recursive solves for a list of increasing end times, optionally warm-started
// from the previous end time.
inline std::pair<std::vector<SaddleField>, SPIterationTrace> sp_endtime_scan(
    const CouplingModel& model, SPActionKind kind, const std::vector<double>& t_f_values,
    double dt, const SPSolveOptions& opt = {}, bool warm_start = false) {
    std::vector<SaddleField> fields;
    SPIterationTrace trace;
    const SaddleField* prev = nullptr;
    for (double tf : t_f_values) {
        SaddleField f = recursive_sp(model, kind, tf, dt, opt, warm_start ? prev : nullptr);
        trace.entries.push_back({f.t_f, f.iterations, f.residual, f.converged});
        fields.push_back(std::move(f));
        prev = &fields.back();
    }
    return {std::move(fields), std::move(trace)};
}

}  // namespace stochspin

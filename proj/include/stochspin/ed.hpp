// ed.hpp — exact state-vector reference dynamics for small systems: Krylov
// time evolution under the Ising Hamiltonian, local observables, Loschmidt
// amplitudes, and a Lanczos ground-state solver.
//
// Basis ordering: site 0 is the least significant bit and |down> is bit value
// 0, so |down...down> has index 0 and |up...up> has index 2^N - 1.
//
// The Hamiltonian is built from the same CouplingModel the sampler uses,
// including the 1/2 bond convention and any diagonal regularization shift, so
// sampler/ED comparisons are convention-consistent by construction.

#pragma once

#include "stochspin/lattice.hpp"

#include <cmath>
#include <complex>
#include <random>
#include <stdexcept>
#include <vector>

namespace stochspin {

struct DenseState {
    int n_sites = 0;
    CVector amps;  // length 2^n_sites

    double norm() const { return amps.norm(); }
};

inline DenseState down_state(int n_sites) {
    if (n_sites < 1 || n_sites > 24) throw std::invalid_argument("down_state: bad site count");
    DenseState s;
    s.n_sites = n_sites;
    s.amps = CVector::Zero(std::size_t{1} << n_sites);
    s.amps(0) = 1.0;
    return s;
}

class EdEvolver {
public:
    explicit EdEvolver(const CouplingModel& model, int max_sites = 20)
        : model_(model), n_(model.n_sites()) {
        if (n_ > max_sites) throw std::invalid_argument("ed: system too large");
        const std::size_t dim = std::size_t{1} << n_;
        diag_.resize(dim);
        for (std::size_t s = 0; s < dim; ++s) {
            double e_zz = 0.0;
            double mz_sum = 0.0;
            for (int j = 0; j < n_; ++j) {
                const double mj = (s >> j) & 1 ? 0.5 : -0.5;
                mz_sum += mj;
                for (int k = 0; k < n_; ++k) {
                    if (model.zz(j, k) == 0.0) continue;
                    const double mk = (s >> k) & 1 ? 0.5 : -0.5;
                    e_zz += model.zz(j, k) * mj * mk;
                }
            }
            diag_[s] = -model.coupling_j * e_zz - model.field_h * mz_sum;
        }
    }

    int n_sites() const { return n_; }
    std::size_t dim() const { return diag_.size(); }

    void apply(const CVector& in, CVector& out) const {
        const std::size_t d = dim();
        out.resize(d);
        for (std::size_t s = 0; s < d; ++s) out(s) = diag_[s] * in(s);
        const double half_gamma = 0.5 * model_.gamma;
        if (half_gamma != 0.0) {
            for (int j = 0; j < n_; ++j) {
                const std::size_t mask = std::size_t{1} << j;
                for (std::size_t s = 0; s < d; ++s) out(s ^ mask) -= half_gamma * in(s);
            }
        }
    }

    double energy(const DenseState& state) const {
        CVector hpsi;
        apply(state.amps, hpsi);
        return (state.amps.dot(hpsi)).real();
    }

    // exp(-i H t) |state> by Lanczos stepping with full reorthogonalization.
    void evolve(DenseState& state, double t, double dt_step = 0.05, int krylov_dim = 30) const {
        if (t == 0.0) return;
        if (t < 0.0) throw std::invalid_argument("ed evolve: negative time");
        double remaining = t;
        while (remaining > 1e-15) {
            const double step = std::min(dt_step, remaining);
            krylov_step(state.amps, step, krylov_dim);
            remaining -= step;
        }
    }

private:
    void krylov_step(CVector& psi, double dt, int m) const {
        const double psi_norm = psi.norm();
        if (psi_norm == 0.0) throw std::runtime_error("ed: zero state");
        const std::size_t d = dim();
        std::vector<CVector> basis;
        basis.reserve(m);
        basis.push_back(psi / psi_norm);
        std::vector<double> alpha, beta;
        CVector w(d);
        for (int j = 0; j < m; ++j) {
            apply(basis[j], w);
            Complex a = basis[j].dot(w);
            alpha.push_back(a.real());
            w -= a * basis[j];
            if (j > 0) w -= Complex(beta[j - 1]) * basis[j - 1];
            for (const auto& v : basis) w -= v.dot(w) * v;  // full reorthogonalization
            const double b = w.norm();
            if (j + 1 == m || b < 1e-12) break;
            beta.push_back(b);
            basis.push_back(w / b);
        }
        const int built = static_cast<int>(alpha.size());

        Matrix tri = Matrix::Zero(built, built);
        for (int j = 0; j < built; ++j) {
            tri(j, j) = alpha[j];
            if (j + 1 < built) {
                tri(j, j + 1) = beta[j];
                tri(j + 1, j) = beta[j];
            }
        }
        Eigen::SelfAdjointEigenSolver<Matrix> es(tri);
        Eigen::VectorXcd phases(built);
        for (int j = 0; j < built; ++j) {
            phases(j) = std::polar(1.0, -dt * es.eigenvalues()(j));
        }
        Eigen::VectorXcd e1 = Eigen::VectorXcd::Zero(built);
        e1(0) = psi_norm;
        Eigen::VectorXcd coeff =
            es.eigenvectors().cast<Complex>() *
            (phases.array() * (es.eigenvectors().transpose().cast<Complex>() * e1).array())
                .matrix();
        psi.setZero();
        for (int j = 0; j < built; ++j) psi += coeff(j) * basis[j];
    }

    CouplingModel model_;
    int n_;
    std::vector<double> diag_;
};

// ------------------------------- observables ---------------------------------

inline double ed_mz_avg(const DenseState& state) {
    double acc = 0.0;
    const std::size_t d = state.amps.size();
    for (std::size_t s = 0; s < d; ++s) {
        const double w = std::norm(state.amps(s));
        if (w == 0.0) continue;
        double mz = 0.0;
        for (int j = 0; j < state.n_sites; ++j) mz += (s >> j) & 1 ? 0.5 : -0.5;
        acc += w * mz;
    }
    return acc / state.n_sites;
}

inline double ed_mx_avg(const DenseState& state) {
    // <S^x_j> couples s and s ^ (1<<j) with matrix element 1/2.
    Complex acc{0.0, 0.0};
    const std::size_t d = state.amps.size();
    for (int j = 0; j < state.n_sites; ++j) {
        const std::size_t mask = std::size_t{1} << j;
        for (std::size_t s = 0; s < d; ++s) {
            acc += 0.5 * std::conj(state.amps(s)) * state.amps(s ^ mask);
        }
    }
    return acc.real() / state.n_sites;
}

inline Complex ed_overlap_down(const DenseState& state) { return state.amps(0); }

inline Complex ed_overlap_up(const DenseState& state) {
    return state.amps(state.amps.size() - 1);
}

struct EdSeries {
    std::vector<double> times;
    std::vector<double> mz, mx;
    std::vector<Complex> a_dd, a_ud;
    std::vector<double> lambda_dd;        // -log|A_dd|^2 / N
    std::vector<double> lambda_combined;  // -log(|A_dd|^2 + |A_ud|^2) / N
};

// Evolves |down...down> on a uniform grid and records all standard outputs.
inline EdSeries ed_observables(const CouplingModel& model, double t_max, double dt_out,
                               double dt_step = 0.05, int krylov_dim = 30) {
    EdEvolver ed(model);
    DenseState state = down_state(model.n_sites());
    EdSeries out;
    const int n_points = static_cast<int>(std::round(t_max / dt_out));
    const int n = model.n_sites();
    for (int k = 0; k <= n_points; ++k) {
        if (k > 0) ed.evolve(state, dt_out, dt_step, krylov_dim);
        const Complex add = ed_overlap_down(state);
        const Complex aud = ed_overlap_up(state);
        out.times.push_back(k * dt_out);
        out.mz.push_back(ed_mz_avg(state));
        out.mx.push_back(ed_mx_avg(state));
        out.a_dd.push_back(add);
        out.a_ud.push_back(aud);
        out.lambda_dd.push_back(-std::log(std::max(std::norm(add), 1e-300)) / n);
        out.lambda_combined.push_back(
            -std::log(std::max(std::norm(add) + std::norm(aud), 1e-300)) / n);
    }
    return out;
}

// ------------------------------- ground state ---------------------------------

struct GroundStateResult {
    double energy = 0.0;
    double first_excited = 0.0;
    CVector state;
    bool degenerate = false;  // first excited within 1e-8 of the ground energy
};

// Lanczos with full reorthogonalization; the second state is found in the
// complement of the first so exact degeneracies are detected.
inline GroundStateResult ground_state_check(const CouplingModel& model, int max_iter = 300) {
    if (model.n_sites() > 16) throw std::invalid_argument("ground_state_check: N too large");
    EdEvolver ed(model);
    const std::size_t d = ed.dim();

    auto lowest = [&](const std::vector<CVector>& deflate, CVector* vec_out,
                      std::uint64_t seed) {
        std::mt19937_64 gen(seed);
        std::normal_distribution<double> dist;
        CVector v0(d);
        for (std::size_t i = 0; i < d; ++i) v0(i) = Complex(dist(gen), dist(gen));
        for (const auto& u : deflate) v0 -= u.dot(v0) * u;
        v0.normalize();

        std::vector<CVector> basis{v0};
        std::vector<double> alpha, beta;
        CVector w(d);
        const int m = std::min<int>(max_iter, static_cast<int>(d) - static_cast<int>(deflate.size()));
        for (int j = 0; j < m; ++j) {
            ed.apply(basis[j], w);
            const Complex a = basis[j].dot(w);
            alpha.push_back(a.real());
            w -= a * basis[j];
            if (j > 0) w -= Complex(beta[j - 1]) * basis[j - 1];
            for (const auto& u : deflate) w -= u.dot(w) * u;
            for (const auto& v : basis) w -= v.dot(w) * v;
            const double b = w.norm();
            if (b < 1e-10 || j + 1 == m) break;
            beta.push_back(b);
            basis.push_back(w / b);
        }
        const int built = static_cast<int>(basis.size());
        Matrix tri = Matrix::Zero(built, built);
        for (int j = 0; j < built; ++j) {
            tri(j, j) = alpha[j];
            if (j + 1 < built) tri(j, j + 1) = tri(j + 1, j) = beta[j];
        }
        Eigen::SelfAdjointEigenSolver<Matrix> es(tri);
        if (vec_out != nullptr) {
            vec_out->setZero(d);
            for (int j = 0; j < built; ++j) {
                *vec_out += Complex(es.eigenvectors()(j, 0)) * basis[j];
            }
            vec_out->normalize();
        }
        return es.eigenvalues()(0);
    };

    GroundStateResult res;
    res.energy = lowest({}, &res.state, 12345);
    std::vector<CVector> deflate{res.state};
    // Fresh start vector: a re-used one would have no ground-space component
    // left after deflation and exact degeneracies would be missed.
    res.first_excited = lowest(deflate, nullptr, 67890);
    res.degenerate = std::abs(res.first_excited - res.energy) < 1e-8;
    return res;
}

}  // namespace stochspin

// sde.hpp — integration of the disentangling SDEs for one trajectory: schemes,
// divergence handling via chart switching, and trajectory records.
//
// Per-site variables evolve under
//   d xi+ = i (Phi+ + Phi_z xi+ - Phi- xi+^2) dt
//   d xi_z = i (Phi_z - 2 Phi- xi+) dt
//   d xi- = i Phi- exp(xi_z) dt
// with Phi_z = h + J (O w)(t) + J shift(t) carrying the white noise w and an
// optional saddle-point shift. Only the z channel is stochastic for the Ising
// model, and the noise multiplies xi+ linearly, so the multi-mode noise is
// commutative and a Milstein-type correction gives the explicit strong order-1
// scheme.
//
// Convention: the system is a Stratonovich SDE (the slice-exponential
// structure behind the disentanglement composes geometrically), validated
// against exact dynamics on a self-coupled site. The Heun scheme integrates
// it directly; the Ito-type schemes (Euler-Maruyama, strong order-1) first
// convert the drift, which adds + i J zz_jj xi+ to the xi+ equation. The
// correction vanishes on lattices without diagonal coupling, i.e. whenever no
// regularization shift is present, so all schemes agree there.
//
// When |xi+| exceeds the threshold R the site switches to the inverse chart
//   eta = 1/xi+,  u = xi_z - 2 log xi+
// where the drift stays regular through poles of xi+:
//   d eta = -i (Phi+ eta^2 + Phi_z eta - Phi-) dt
//   d u   = -i (Phi_z + 2 Phi+ eta) dt
// Observables only ever need exp(-xi_z/2) and combinations that are single
// valued under the log branch choice (the factor 2 in u makes 2 pi i
// ambiguities drop out of every exponential).

#pragma once

#include "stochspin/lattice.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace stochspin {

enum class Scheme { euler_maruyama, heun, strong_order_1 };
enum class Branch { forward, backward };

inline const char* scheme_name(Scheme s) {
    switch (s) {
        case Scheme::euler_maruyama: return "euler-maruyama";
        case Scheme::heun: return "heun";
        case Scheme::strong_order_1: return "strong-order-1";
    }
    return "?";
}

struct IntegratorSpec {
    Scheme scheme = Scheme::strong_order_1;
    double dt = 0.01;
    double divergence_threshold = 10.0;  // chart switch radius R
    bool integrate_xi_minus = false;     // no v1 observable needs xi-

    void validate() const {
        if (!(dt > 0.0)) throw std::invalid_argument("integrator: dt must be positive");
        if (!(divergence_threshold > 1.0)) {
            throw std::invalid_argument("integrator: divergence threshold must exceed 1");
        }
    }
};

// ------------------------------- Site state ---------------------------------

struct SiteState {
    Complex p{0.0, 0.0};  // xi+ (normal chart) or eta = 1/xi+ (inverse chart)
    Complex z{0.0, 0.0};  // xi_z (normal) or u = xi_z - 2 log xi+ (inverse)
    Complex m{0.0, 0.0};  // xi-
    bool inverse = false;

    bool finite() const {
        return std::isfinite(p.real()) && std::isfinite(p.imag()) && std::isfinite(z.real()) &&
               std::isfinite(z.imag());
    }

    Complex xi_plus() const { return inverse ? 1.0 / p : p; }
    // exp(-xi_z / 2); in the inverse chart exp(-xi_z/2) = eta exp(-u/2).
    Complex exp_minus_half_xiz() const {
        return inverse ? p * std::exp(-0.5 * z) : std::exp(-0.5 * z);
    }
    Complex exp_xiz() const { return inverse ? std::exp(z) / (p * p) : std::exp(z); }
    // xi+ exp(-xi_z): the same expression p exp(-z) in both charts.
    Complex xi_plus_exp_minus_xiz() const { return p * std::exp(-z); }
};

// Chart flip is an involution: p -> 1/p, z -> z - 2 log p. The principal log
// branch is irrelevant for observables (see file comment).
inline SiteState reparameterize(const SiteState& s) {
    SiteState r = s;
    r.inverse = !s.inverse;
    r.p = 1.0 / s.p;
    r.z = s.z - 2.0 * std::log(s.p);
    return r;
}

// ------------------------------ Drift function ------------------------------

struct PhiFields {
    Complex plus{0.0, 0.0};
    Complex z{0.0, 0.0};
    Complex minus{0.0, 0.0};
};

struct SiteDerivative {
    Complex dp{0.0, 0.0};
    Complex dz{0.0, 0.0};
    Complex dm{0.0, 0.0};
};

// Equations of motion in the normal chart, rearranged for xi-dot.
inline SiteDerivative drift(Complex xi_plus, Complex xi_z, const PhiFields& phi,
                            bool with_xi_minus = false) {
    const Complex i(0.0, 1.0);
    SiteDerivative d;
    d.dp = i * (phi.plus + phi.z * xi_plus - phi.minus * xi_plus * xi_plus);
    d.dz = i * (phi.z - 2.0 * phi.minus * xi_plus);
    if (with_xi_minus) d.dm = i * phi.minus * std::exp(xi_z);
    return d;
}

// Chart-aware drift for a full SiteState.
inline SiteDerivative chart_drift(const SiteState& s, const PhiFields& phi, bool with_xi_minus) {
    const Complex i(0.0, 1.0);
    if (!s.inverse) return drift(s.p, s.z, phi, with_xi_minus);
    SiteDerivative d;
    d.dp = -i * (phi.plus * s.p * s.p + phi.z * s.p - phi.minus);
    d.dz = -i * (phi.z + 2.0 * phi.plus * s.p);
    if (with_xi_minus) d.dm = i * phi.minus * std::exp(s.z) / (s.p * s.p);
    return d;
}

// --------------------------- Streaming integrator ---------------------------

// One branch of one trajectory. Each call to step() consumes the white-noise
// vector for that step (n_modes entries, may be null for noise-free runs) and
// the site-basis shift row (n_sites entries, may be null).
class TrajectoryIntegrator {
public:
    TrajectoryIntegrator(const CouplingModel& model, const NoiseTransform& transform,
                         const IntegratorSpec& spec)
        : model_(&model), transform_(&transform), spec_(spec) {
        spec_.validate();
        const int n = model.n_sites();
        state_.assign(n, SiteState{});
        self_cov_dt_.resize(n);
        ito_drift_.resize(n);
        for (int j = 0; j < n; ++j) {
            self_cov_dt_[j] = model.noise_self_covariance(j) * spec_.dt;
            // Stratonovich -> Ito drift conversion for the multiplicative
            // channel; same form for both charts.
            ito_drift_[j] = Complex(0.0, model.coupling_j) * model.zz(j, j);
        }
        sqrt_dt_ = std::sqrt(spec_.dt);
    }

    void reset() {
        for (auto& s : state_) s = SiteState{};
        valid_ = true;
        reparameterizations_ = 0;
    }

    void step(const double* white, const Complex* shift_row) {
        if (!valid_) return;
        const int n = static_cast<int>(state_.size());
        const double J = model_->coupling_j;
        const Complex iJ(0.0, J);

        if (white != nullptr && transform_->has_noise()) {
            Eigen::Map<const Vector> w(white, transform_->n_modes());
            noise_tmp_ = transform_->o * w;  // Delta Z / sqrt(dt)
        } else {
            noise_tmp_.setZero(n);
        }

        for (int j = 0; j < n; ++j) {
            SiteState& s = state_[j];
            PhiFields det;
            det.plus = model_->h_plus();
            det.minus = model_->h_minus();
            det.z = model_->h_z();
            if (shift_row != nullptr) det.z += J * shift_row[j];
            const Complex dzj = sqrt_dt_ * noise_tmp_(j);  // complex noise increment

            switch (spec_.scheme) {
                case Scheme::euler_maruyama: {
                    PhiFields eff = det;
                    eff.z += J * dzj / spec_.dt;
                    const SiteDerivative d = chart_drift(s, eff, spec_.integrate_xi_minus);
                    s.p += (d.dp + ito_drift_[j] * s.p) * spec_.dt;
                    s.z += d.dz * spec_.dt;
                    s.m += d.dm * spec_.dt;
                    break;
                }
                case Scheme::heun: {
                    PhiFields eff = det;
                    eff.z += J * dzj / spec_.dt;
                    const SiteDerivative k1 = chart_drift(s, eff, spec_.integrate_xi_minus);
                    SiteState pred = s;
                    pred.p += k1.dp * spec_.dt;
                    pred.z += k1.dz * spec_.dt;
                    pred.m += k1.dm * spec_.dt;
                    const SiteDerivative k2 = chart_drift(pred, eff, spec_.integrate_xi_minus);
                    s.p += 0.5 * (k1.dp + k2.dp) * spec_.dt;
                    s.z += 0.5 * (k1.dz + k2.dz) * spec_.dt;
                    s.m += 0.5 * (k1.dm + k2.dm) * spec_.dt;
                    break;
                }
                case Scheme::strong_order_1: {
                    // Euler-Maruyama plus the Milstein correction for the
                    // multiplicative channel; the noise is commutative so no
                    // Levy areas are needed.
                    const SiteDerivative d = chart_drift(s, det, spec_.integrate_xi_minus);
                    const Complex corr =
                        0.5 * (-J * J) * s.p * (dzj * dzj - self_cov_dt_[j]);
                    const Complex noise_p = s.inverse ? -iJ * s.p * dzj : iJ * s.p * dzj;
                    const Complex noise_z = s.inverse ? -iJ * dzj : iJ * dzj;
                    s.p += (d.dp + ito_drift_[j] * s.p) * spec_.dt + noise_p + corr;
                    s.z += d.dz * spec_.dt + noise_z;
                    if (spec_.integrate_xi_minus) s.m += d.dm * spec_.dt;
                    break;
                }
            }

            if (!s.finite()) {
                valid_ = false;
                return;
            }
            if (std::abs(s.p) > spec_.divergence_threshold) {
                s = reparameterize(s);
                ++reparameterizations_;
                if (!s.finite()) {
                    valid_ = false;
                    return;
                }
            }
        }
    }

    const std::vector<SiteState>& state() const { return state_; }
    bool valid() const { return valid_; }
    int reparameterizations() const { return reparameterizations_; }
    const IntegratorSpec& spec() const { return spec_; }

private:
    const CouplingModel* model_;
    const NoiseTransform* transform_;
    IntegratorSpec spec_;
    std::vector<SiteState> state_;
    CVector noise_tmp_;
    std::vector<Complex> self_cov_dt_;
    std::vector<Complex> ito_drift_;
    double sqrt_dt_ = 0.0;
    bool valid_ = true;
    int reparameterizations_ = 0;
};

// ---------------------------- Trajectory records -----------------------------

struct DisentanglingTrajectory {
    double dt = 0.0;
    Branch branch = Branch::forward;
    std::vector<std::vector<SiteState>> nodes;  // (n_steps + 1) x n_sites
    int reparameterizations = 0;
    bool valid = true;

    int n_steps() const { return static_cast<int>(nodes.size()) - 1; }
    int n_sites() const { return nodes.empty() ? 0 : static_cast<int>(nodes.front().size()); }
};

// Materializing front end over the streaming integrator. `white_noise` holds
// one row per step (n_modes entries each); `shift` one row per step (n_sites);
// either may be empty.
inline DisentanglingTrajectory integrate_trajectory(
    const CouplingModel& model, const NoiseTransform& transform, const IntegratorSpec& spec,
    const std::vector<std::vector<double>>& white_noise, const CMatrix* shift, Branch branch,
    int n_steps) {
    if (!white_noise.empty() && static_cast<int>(white_noise.size()) < n_steps) {
        throw std::invalid_argument("integrate_trajectory: noise path shorter than grid");
    }
    if (shift != nullptr && shift->rows() < n_steps) {
        throw std::invalid_argument("integrate_trajectory: shift grid shorter than trajectory");
    }

    TrajectoryIntegrator integ(model, transform, spec);
    DisentanglingTrajectory traj;
    traj.dt = spec.dt;
    traj.branch = branch;
    traj.nodes.reserve(n_steps + 1);
    traj.nodes.push_back(integ.state());
    std::vector<Complex> shift_row(model.n_sites());
    for (int n = 0; n < n_steps; ++n) {
        const double* w = white_noise.empty() ? nullptr : white_noise[n].data();
        const Complex* srow = nullptr;
        if (shift != nullptr) {
            for (int j = 0; j < model.n_sites(); ++j) shift_row[j] = (*shift)(n, j);
            srow = shift_row.data();
        }
        integ.step(w, srow);
        if (!integ.valid()) {
            traj.valid = false;
            break;
        }
        traj.nodes.push_back(integ.state());
    }
    traj.reparameterizations = integ.reparameterizations();
    return traj;
}

// ------------------------------- Binary dump --------------------------------

// Debug dump, versioned: magic, version, branch, dt, steps, sites, then raw
// site records.
inline void dump_trajectory(const std::string& path, const DisentanglingTrajectory& traj) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("dump_trajectory: cannot open " + path);
    const char magic[8] = {'S', 'S', 'T', 'R', 'A', 'J', '0', '1'};
    out.write(magic, 8);
    const std::int32_t version = 1;
    const std::int32_t branch = traj.branch == Branch::forward ? 0 : 1;
    const std::int32_t steps = traj.n_steps();
    const std::int32_t sites = traj.n_sites();
    const std::int32_t valid = traj.valid ? 1 : 0;
    out.write(reinterpret_cast<const char*>(&version), 4);
    out.write(reinterpret_cast<const char*>(&branch), 4);
    out.write(reinterpret_cast<const char*>(&steps), 4);
    out.write(reinterpret_cast<const char*>(&sites), 4);
    out.write(reinterpret_cast<const char*>(&valid), 4);
    out.write(reinterpret_cast<const char*>(&traj.dt), 8);
    for (const auto& row : traj.nodes) {
        for (const auto& s : row) {
            const double rec[7] = {s.p.real(), s.p.imag(), s.z.real(), s.z.imag(),
                                   s.m.real(), s.m.imag(), s.inverse ? 1.0 : 0.0};
            out.write(reinterpret_cast<const char*>(rec), sizeof(rec));
        }
    }
}

inline DisentanglingTrajectory load_trajectory(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_trajectory: cannot open " + path);
    char magic[8];
    in.read(magic, 8);
    if (std::string(magic, 8) != "SSTRAJ01") {
        throw std::runtime_error("load_trajectory: bad magic");
    }
    std::int32_t version = 0, branch = 0, steps = 0, sites = 0, valid = 0;
    double dt = 0.0;
    in.read(reinterpret_cast<char*>(&version), 4);
    in.read(reinterpret_cast<char*>(&branch), 4);
    in.read(reinterpret_cast<char*>(&steps), 4);
    in.read(reinterpret_cast<char*>(&sites), 4);
    in.read(reinterpret_cast<char*>(&valid), 4);
    in.read(reinterpret_cast<char*>(&dt), 8);
    DisentanglingTrajectory traj;
    traj.dt = dt;
    traj.branch = branch == 0 ? Branch::forward : Branch::backward;
    traj.valid = valid != 0;
    traj.nodes.assign(steps + 1, std::vector<SiteState>(sites));
    for (auto& row : traj.nodes) {
        for (auto& s : row) {
            double rec[7];
            in.read(reinterpret_cast<char*>(rec), sizeof(rec));
            s.p = {rec[0], rec[1]};
            s.z = {rec[2], rec[3]};
            s.m = {rec[4], rec[5]};
            s.inverse = rec[6] != 0.0;
        }
    }
    if (!in) throw std::runtime_error("load_trajectory: truncated file");
    return traj;
}

}  // namespace stochspin

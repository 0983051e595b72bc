// observables.hpp — classical functions F_O on trajectory endpoints:
// normalization, longitudinal/transverse magnetization, Loschmidt amplitudes,
// and the return-probability combination.
//
// All site-factorized quantities are accumulated as complex logarithms and
// re-exponentiated once, so products over hundreds of sites cannot overflow.
// The site factors are written chart-aware: with A = p_f and B = conj(p_b)
// the mixed-chart cases collapse to the same few expressions (the 1/xi+
// prefactors cancel against the exp(log xi+) pieces hidden in u).

#pragma once

#include "stochspin/sde.hpp"

#include <cmath>
#include <complex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace stochspin {

enum class ObservableKind {
    norm,             // F_1, both branches
    magnetization_z,  // S^z site or average, both branches
    magnetization_x,  // S^x site or average, both branches
    loschmidt_dd,     // <down...|U|down...>, forward only
    loschmidt_ud,     // <up...|U|down...>, forward only
};

inline bool needs_backward_branch(ObservableKind k) {
    return k == ObservableKind::norm || k == ObservableKind::magnetization_z ||
           k == ObservableKind::magnetization_x;
}

// Spin magnitude prefactor for S^z: fixed to -1/2 so the t=0 value matches
// <down|S^z|down>.
inline constexpr double kSpinHalfSign = -0.5;

// ----------------------------- per-site factors ------------------------------

// log[(1 + xi+_f xi+*_b) exp(-(xi_z_f + xi_z*_b)/2)] modulo 2 pi i.
inline Complex log_norm_site_factor(const SiteState& f, const SiteState& b) {
    const Complex A = f.p;
    const Complex B = std::conj(b.p);
    const Complex tail = -0.5 * (f.z + std::conj(b.z));
    if (f.inverse != b.inverse) return std::log(A + B) + tail;
    return std::log(1.0 + A * B) + tail;
}

// (1 - xi+_f xi+*_b) / (1 + xi+_f xi+*_b), regular in every chart combination.
inline Complex mz_site_ratio(const SiteState& f, const SiteState& b) {
    const Complex A = f.p;
    const Complex B = std::conj(b.p);
    if (!f.inverse && !b.inverse) return (1.0 - A * B) / (1.0 + A * B);
    if (f.inverse && b.inverse) return (A * B - 1.0) / (A * B + 1.0);
    if (f.inverse) return (A - B) / (A + B);
    return (B - A) / (B + A);
}

// (1/2)(xi+_f + xi+*_b) / (1 + xi+_f xi+*_b).
inline Complex mx_site_ratio(const SiteState& f, const SiteState& b) {
    const Complex A = f.p;
    const Complex B = std::conj(b.p);
    if (f.inverse == b.inverse) return 0.5 * (A + B) / (1.0 + A * B);
    return 0.5 * (1.0 + A * B) / (A + B);
}

// ------------------------------ full functions -------------------------------

// F_1 of both branches (initial state |down...down>).
inline Complex eval_norm(const std::vector<SiteState>& f, const std::vector<SiteState>& b) {
    if (f.size() != b.size()) throw std::invalid_argument("eval_norm: branch size mismatch");
    Complex log_sum{0.0, 0.0};
    for (std::size_t j = 0; j < f.size(); ++j) log_sum += log_norm_site_factor(f[j], b[j]);
    return std::exp(log_sum);
}

// Per-site or averaged magnetization ratios F_bar; the full classical function
// is F_1 * s * ratio with the single F_1 evaluation shared between
// observables.
inline Complex mz_bar(const std::vector<SiteState>& f, const std::vector<SiteState>& b,
                      std::optional<int> site) {
    if (site) return kSpinHalfSign * mz_site_ratio(f[*site], b[*site]);
    Complex acc{0.0, 0.0};
    for (std::size_t j = 0; j < f.size(); ++j) acc += mz_site_ratio(f[j], b[j]);
    return kSpinHalfSign * acc / static_cast<double>(f.size());
}

inline Complex mx_bar(const std::vector<SiteState>& f, const std::vector<SiteState>& b,
                      std::optional<int> site) {
    if (site) return mx_site_ratio(f[*site], b[*site]);
    Complex acc{0.0, 0.0};
    for (std::size_t j = 0; j < f.size(); ++j) acc += mx_site_ratio(f[j], b[j]);
    return acc / static_cast<double>(f.size());
}

inline Complex eval_mz(const std::vector<SiteState>& f, const std::vector<SiteState>& b,
                       std::optional<int> site = std::nullopt) {
    return eval_norm(f, b) * mz_bar(f, b, site);
}

inline Complex eval_mx(const std::vector<SiteState>& f, const std::vector<SiteState>& b,
                       std::optional<int> site = std::nullopt) {
    return eval_norm(f, b) * mx_bar(f, b, site);
}

// Loschmidt amplitude functions, forward branch only:
//   f_dd = exp(-(1/2) sum_i xi_z_i),  f_ud = f_dd * prod_i xi+_i.
inline Complex eval_loschmidt(const std::vector<SiteState>& f, ObservableKind kind) {
    Complex log_sum{0.0, 0.0};
    if (kind == ObservableKind::loschmidt_dd) {
        for (const auto& s : f) {
            if (s.inverse) {
                log_sum += std::log(s.p) - 0.5 * s.z;  // eta exp(-u/2)
            } else {
                log_sum += -0.5 * s.z;
            }
        }
        return std::exp(log_sum);
    }
    if (kind != ObservableKind::loschmidt_ud) {
        throw std::invalid_argument("eval_loschmidt: kind must be dd or ud");
    }
    for (const auto& s : f) {
        if (s.inverse) {
            log_sum += -0.5 * s.z;  // xi+ eta exp(-u/2) = exp(-u/2)
        } else {
            if (s.p == Complex{0.0, 0.0}) return {0.0, 0.0};
            log_sum += std::log(s.p) - 0.5 * s.z;
        }
    }
    return std::exp(log_sum);
}

// --------------------------- return probability ------------------------------

struct RateFunctionPoint {
    double lambda = 0.0;
    double stderr_lambda = 0.0;
    bool reliable = true;  // false when |A|^2 is consistent with <= 0
};

// |A|^2 = |A_ud|^2 + |A_dd|^2, lambda = -log|A|^2 / N, with first-order error
// propagation from the two amplitude estimates.
inline RateFunctionPoint return_probability(Complex a_dd, double stderr_dd, Complex a_ud,
                                            double stderr_ud, int n_sites) {
    RateFunctionPoint out;
    const double p = std::norm(a_dd) + std::norm(a_ud);
    const double var_p = 4.0 * (std::norm(a_dd) * stderr_dd * stderr_dd +
                                std::norm(a_ud) * stderr_ud * stderr_ud);
    const double sigma_p = std::sqrt(var_p);
    if (p <= 0.0 || p <= sigma_p) {
        out.reliable = false;
        out.lambda = p > 0.0 ? -std::log(p) / n_sites : 0.0;
        out.stderr_lambda = 0.0;
        return out;
    }
    out.lambda = -std::log(p) / n_sites;
    out.stderr_lambda = sigma_p / (p * n_sites);
    return out;
}

// ------------------------------ name mapping ---------------------------------

inline std::string observable_name(ObservableKind k) {
    switch (k) {
        case ObservableKind::norm: return "norm";
        case ObservableKind::magnetization_z: return "mz";
        case ObservableKind::magnetization_x: return "mx";
        case ObservableKind::loschmidt_dd: return "loschmidt_dd";
        case ObservableKind::loschmidt_ud: return "loschmidt_ud";
    }
    return "?";
}

inline ObservableKind observable_from_name(const std::string& name) {
    if (name == "norm") return ObservableKind::norm;
    if (name == "mz") return ObservableKind::magnetization_z;
    if (name == "mx") return ObservableKind::magnetization_x;
    if (name == "loschmidt_dd") return ObservableKind::loschmidt_dd;
    if (name == "loschmidt_ud") return ObservableKind::loschmidt_ud;
    throw std::invalid_argument("unknown observable: " + name +
                                " (valid: norm mz mx loschmidt_dd loschmidt_ud)");
}

}  // namespace stochspin

// sampling.hpp — trajectory ensembles under direct or importance sampling:
// per-trajectory RNG streams, the exact measure-shift weight, deterministic
// chunked reductions, batch statistics, and fluctuation diagnostics.
//
// Reproducibility contract: trajectory k draws only from RngStream(seed, k),
// chunks are fixed-size contiguous blocks inside each batch, and chunk sums
// are merged in index order. Results are therefore bit-identical for any
// worker count.

#pragma once

#include "stochspin/observables.hpp"
#include "stochspin/rng.hpp"
#include "stochspin/saddle.hpp"
#include "stochspin/sde.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace stochspin {

// ------------------------------ scaled sums ----------------------------------

// Sum of values e^{lmag} * unit with the common scale carried separately, so
// samples with |log value| in the hundreds reduce without overflow. The
// represented value is e^{base} * sum.
struct ScaledSum {
    double base = -std::numeric_limits<double>::infinity();
    Complex sum{0.0, 0.0};

    void add(double lmag, Complex unit) {
        if (!(lmag > -std::numeric_limits<double>::infinity()) || unit == Complex{0.0, 0.0}) {
            return;
        }
        if (lmag <= base) {
            sum += std::exp(lmag - base) * unit;
        } else {
            sum = sum * std::exp(base - lmag) + unit;
            base = lmag;
        }
    }

    void merge(const ScaledSum& other) {
        if (other.base == -std::numeric_limits<double>::infinity()) return;
        if (other.base <= base) {
            sum += std::exp(other.base - base) * other.sum;
        } else {
            sum = sum * std::exp(base - other.base) + other.sum;
            base = other.base;
        }
    }

    // value / e^{log_divisor}
    Complex value_scaled(double log_divisor) const {
        if (base == -std::numeric_limits<double>::infinity()) return {0.0, 0.0};
        return sum * std::exp(base - log_divisor);
    }
    Complex value() const { return value_scaled(0.0); }

    bool empty() const { return base == -std::numeric_limits<double>::infinity(); }
};

// Ratio of two scaled sums with the common scale cancelled analytically.
inline Complex scaled_ratio(const ScaledSum& num, const ScaledSum& den) {
    if (den.empty() || den.sum == Complex{0.0, 0.0}) {
        return {std::numeric_limits<double>::quiet_NaN(), 0.0};
    }
    if (num.empty()) return {0.0, 0.0};
    return (num.sum / den.sum) * std::exp(num.base - den.base);
}

// --------------------------- importance weights ------------------------------

// Log-weight increment for one step of one branch: -(1/2) sum_k c_k^2 dt
// - sum_k c_k g_k sqrt(dt). No conjugation anywhere: the measure shift is an
// analytic continuation of the Gaussian.
inline Complex importance_log_weight_step(const double* g, const Complex* shift_white,
                                          int n_modes, double dt) {
    Complex acc{0.0, 0.0};
    const double sqrt_dt = std::sqrt(dt);
    for (int k = 0; k < n_modes; ++k) {
        acc -= 0.5 * shift_white[k] * shift_white[k] * dt + shift_white[k] * g[k] * sqrt_dt;
    }
    return acc;
}

// Full weight for a materialized noise path (one branch), mainly for tests:
// W = exp(-S_0[c] - sum_steps c(t) . g(t) sqrt(dt)).
inline Complex importance_weight(const std::vector<std::vector<double>>& noise,
                                 const CMatrix& shift_white, double dt) {
    Complex log_w{0.0, 0.0};
    std::vector<Complex> row(shift_white.cols());
    for (std::size_t n = 0; n < noise.size(); ++n) {
        for (int k = 0; k < shift_white.cols(); ++k) row[k] = shift_white(static_cast<int>(n), k);
        log_w += importance_log_weight_step(noise[n].data(), row.data(),
                                            static_cast<int>(shift_white.cols()), dt);
    }
    return std::exp(log_w);
}

// ------------------------------ sampling plan --------------------------------

enum class SamplingMode { direct, importance };

inline const char* sampling_mode_name(SamplingMode m) {
    return m == SamplingMode::direct ? "direct" : "importance";
}

struct SamplingPlan {
    SamplingMode mode = SamplingMode::direct;
    long n_traj = 1000;
    int n_batches = 5;
    std::uint64_t seed = 0;
    int workers = 1;
    const SaddleField* shift = nullptr;  // required in importance mode

    void validate() const {
        if (n_traj <= 0) throw std::invalid_argument("sampling: n_traj must be positive");
        if (n_batches <= 0) throw std::invalid_argument("sampling: n_batches must be positive");
        if (n_traj % n_batches != 0) {
            throw std::invalid_argument("sampling: n_traj must be divisible by n_batches");
        }
        if (workers < 1) throw std::invalid_argument("sampling: workers must be >= 1");
        if (mode == SamplingMode::importance && shift == nullptr) {
            throw std::invalid_argument("sampling: importance mode requires a saddle field");
        }
    }
};

// ----------------------------- ensemble results ------------------------------

struct ObservableSeries {
    ObservableKind kind = ObservableKind::norm;
    std::vector<Complex> mean;
    std::vector<double> stderr_re;
    std::vector<double> stderr_im;
    std::vector<std::vector<Complex>> batch_means;  // [time][batch]
};

struct EnsembleResult {
    std::vector<double> times;
    std::vector<ObservableSeries> observables;
    std::vector<double> sigma_f2;  // variance of the sampled norm-channel function
    std::vector<long> n_valid;     // per time point
    long n_trajectories = 0;
    int n_batches = 0;
    long excluded = 0;        // trajectory/time exclusions (counted per trajectory)
    bool reliable = true;     // false when exclusions exceed 1%
    double elapsed_seconds = 0.0;
};

// Optional per-trajectory sample collector (numerator and denominator of the
// ratio estimator at one chosen output time), used by the uncertainty
// propagation tests.
struct SampleDump {
    int time_index = 0;
    int observable_index = 0;
    std::vector<Complex> num;
    std::vector<Complex> den;
};

// ------------------------------- run_ensemble --------------------------------

namespace detail {

struct ShiftTables {
    bool active = false;
    CMatrix site;     // n_steps x n_sites: shift applied to both branches
    CMatrix white_f;  // n_steps x n_modes: forward weight shift c = O^-1 phi_SP
    CMatrix white_b;  // n_steps x n_modes: backward weight shift conj(c)
    std::vector<Complex> s0_f;  // (1/2) sum_k c^2 dt per step
    std::vector<Complex> s0_b;
};

// Both branches are integrated with the same site-basis shift phi_SP. The
// observable functions depend on the backward trajectory only through complex
// conjugates, so the analytic continuation behind the measure shift pairs the
// backward trajectory shift c* with the weight shift conj(c*) = c... i.e. the
// backward weight factor uses the conjugate of the forward white-noise shift
// while the trajectory shift is phi_SP itself on both branches.
inline ShiftTables build_shift_tables(const NoiseTransform& transform, const SaddleField& field,
                                      int n_steps, double dt, bool backward_needed) {
    if (field.n_nodes() < n_steps) {
        throw std::invalid_argument("sampling: saddle field grid shorter than trajectory");
    }
    if (std::abs(field.dt - dt) > 1e-12) {
        throw std::invalid_argument("sampling: saddle field dt does not match integrator dt");
    }
    const int n = transform.n_sites();
    const int m = transform.n_modes();
    ShiftTables tables;
    tables.active = true;
    tables.site.resize(n_steps, n);
    tables.white_f.resize(n_steps, m);
    tables.s0_f.resize(n_steps);
    if (backward_needed) {
        tables.white_b.resize(n_steps, m);
        tables.s0_b.resize(n_steps);
    }
    for (int step = 0; step < n_steps; ++step) {
        CVector varphi_row = field.varphi.row(step).transpose();
        CVector c_f = transform.o_inv * varphi_row;
        tables.site.row(step) = varphi_row.transpose();
        tables.white_f.row(step) = c_f.transpose();
        Complex s0{0.0, 0.0};
        for (int k = 0; k < m; ++k) s0 += 0.5 * c_f(k) * c_f(k) * dt;
        tables.s0_f[step] = s0;
        if (backward_needed) {
            tables.white_b.row(step) = c_f.conjugate().transpose();
            tables.s0_b[step] = std::conj(s0);
        }
    }
    return tables;
}

struct ChunkRange {
    long begin = 0;
    long end = 0;
    int batch = 0;
};

inline std::vector<ChunkRange> chunk_layout(long n_traj, int n_batches, long chunk_size = 256) {
    std::vector<ChunkRange> chunks;
    const long per_batch = n_traj / n_batches;
    for (int b = 0; b < n_batches; ++b) {
        long start = b * per_batch;
        const long batch_end = start + per_batch;
        while (start < batch_end) {
            const long end = std::min(start + chunk_size, batch_end);
            chunks.push_back({start, end, b});
            start = end;
        }
    }
    return chunks;
}

struct ChunkAccum {
    std::vector<ScaledSum> den;        // [T] sampled norm-channel function
    std::vector<ScaledSum> den_abs2;   // [T]
    std::vector<std::vector<ScaledSum>> num;  // [obs][T]
    std::vector<long> valid;           // [T]
    long excluded = 0;

    void init(int n_obs, int n_times) {
        den.assign(n_times, {});
        den_abs2.assign(n_times, {});
        num.assign(n_obs, std::vector<ScaledSum>(n_times));
        valid.assign(n_times, 0);
        excluded = 0;
    }

    void merge(const ChunkAccum& o) {
        for (std::size_t t = 0; t < den.size(); ++t) {
            den[t].merge(o.den[t]);
            den_abs2[t].merge(o.den_abs2[t]);
            valid[t] += o.valid[t];
        }
        for (std::size_t i = 0; i < num.size(); ++i) {
            for (std::size_t t = 0; t < num[i].size(); ++t) num[i][t].merge(o.num[i][t]);
        }
        excluded += o.excluded;
    }
};

// Complex log of the norm function F_1 (sum of per-site log factors).
inline Complex log_eval_norm(const std::vector<SiteState>& f, const std::vector<SiteState>& b) {
    Complex acc{0.0, 0.0};
    for (std::size_t j = 0; j < f.size(); ++j) acc += log_norm_site_factor(f[j], b[j]);
    return acc;
}

// Complex log of a Loschmidt amplitude function; nullopt encodes an exact 0.
inline std::optional<Complex> log_eval_loschmidt(const std::vector<SiteState>& f,
                                                 ObservableKind kind) {
    Complex acc{0.0, 0.0};
    for (const auto& s : f) {
        if (kind == ObservableKind::loschmidt_dd) {
            acc += s.inverse ? std::log(s.p) - 0.5 * s.z : -0.5 * s.z;
        } else {
            if (s.inverse) {
                acc += -0.5 * s.z;
            } else {
                if (s.p == Complex{0.0, 0.0}) return std::nullopt;
                acc += std::log(s.p) - 0.5 * s.z;
            }
        }
    }
    return acc;
}

}  // namespace detail

inline EnsembleResult run_ensemble(const CouplingModel& model, const NoiseTransform& transform,
                                   const IntegratorSpec& integ,
                                   const std::vector<ObservableKind>& kinds,
                                   const SamplingPlan& plan, int n_steps, int output_stride,
                                   SampleDump* dump = nullptr) {
    plan.validate();
    integ.validate();
    if (kinds.empty()) throw std::invalid_argument("run_ensemble: no observables");
    if (output_stride < 1) throw std::invalid_argument("run_ensemble: bad output stride");

    bool backward_needed = false;
    for (auto k : kinds) backward_needed = backward_needed || needs_backward_branch(k);

    detail::ShiftTables shift;
    if (plan.mode == SamplingMode::importance) {
        if (!transform.has_noise()) {
            throw std::invalid_argument("run_ensemble: importance mode needs noise channels");
        }
        shift = detail::build_shift_tables(transform, *plan.shift, n_steps, integ.dt,
                                           backward_needed);
    }

    const int n_out = n_steps / output_stride + 1;
    const int n_obs = static_cast<int>(kinds.size());
    const int n_modes = transform.n_modes();

    auto chunks = detail::chunk_layout(plan.n_traj, plan.n_batches);
    std::vector<detail::ChunkAccum> accums(chunks.size());
    for (auto& a : accums) a.init(n_obs, n_out);

    std::vector<Complex> dump_num, dump_den;
    if (dump != nullptr) {
        dump_num.assign(plan.n_traj, Complex{0.0, 0.0});
        dump_den.assign(plan.n_traj, Complex{0.0, 0.0});
    }

    const auto t_start = std::chrono::steady_clock::now();
    std::atomic<std::size_t> next_chunk{0};

    auto worker = [&]() {
        TrajectoryIntegrator fwd(model, transform, integ);
        TrajectoryIntegrator bwd(model, transform, integ);
        std::vector<double> g_f(n_modes), g_b(n_modes);
        std::vector<Complex> row_f(model.n_sites()), row_b(model.n_sites());
        std::vector<Complex> values(n_obs);
        std::vector<double> lmags(n_obs);

        for (;;) {
            const std::size_t ci = next_chunk.fetch_add(1);
            if (ci >= chunks.size()) return;
            auto& acc = accums[ci];
            for (long k = chunks[ci].begin; k < chunks[ci].end; ++k) {
                RngStream rng(plan.seed, static_cast<std::uint64_t>(k));
                fwd.reset();
                bwd.reset();
                Complex log_w{0.0, 0.0};
                bool alive = true;
                int out_idx = 0;

                auto record = [&](int t_idx) {
                    const auto& sf = fwd.state();
                    const auto& sb = bwd.state();
                    // Denominator channel: W F_1 for two-branch runs, W alone
                    // for forward-only (amplitude) runs.
                    const Complex log_den =
                        backward_needed ? log_w + detail::log_eval_norm(sf, sb) : log_w;
                    if (!std::isfinite(log_den.real()) || !std::isfinite(log_den.imag())) {
                        ++acc.excluded;
                        return;
                    }
                    const Complex den_unit = std::exp(Complex(0.0, log_den.imag()));
                    bool sample_ok = true;
                    for (int i = 0; i < n_obs && sample_ok; ++i) {
                        if (kinds[i] == ObservableKind::loschmidt_dd ||
                            kinds[i] == ObservableKind::loschmidt_ud) {
                            auto lf = detail::log_eval_loschmidt(sf, kinds[i]);
                            if (!lf) {  // exact zero amplitude
                                values[i] = {0.0, 0.0};
                                lmags[i] = -std::numeric_limits<double>::infinity();
                                continue;
                            }
                            const Complex log_num = log_w + *lf;
                            if (!std::isfinite(log_num.real()) ||
                                !std::isfinite(log_num.imag())) {
                                sample_ok = false;
                                break;
                            }
                            values[i] = std::exp(Complex(0.0, log_num.imag()));
                            lmags[i] = log_num.real();
                            continue;
                        }
                        Complex bar{1.0, 0.0};
                        if (kinds[i] == ObservableKind::magnetization_z) {
                            bar = mz_bar(sf, sb, std::nullopt);
                        } else if (kinds[i] == ObservableKind::magnetization_x) {
                            bar = mx_bar(sf, sb, std::nullopt);
                        }
                        if (!std::isfinite(bar.real()) || !std::isfinite(bar.imag())) {
                            sample_ok = false;
                            break;
                        }
                        values[i] = den_unit * bar;
                        lmags[i] = log_den.real();
                    }
                    if (!sample_ok) {
                        ++acc.excluded;
                        return;
                    }
                    acc.valid[t_idx] += 1;
                    acc.den[t_idx].add(log_den.real(), den_unit);
                    acc.den_abs2[t_idx].add(2.0 * log_den.real(), {1.0, 0.0});
                    for (int i = 0; i < n_obs; ++i) acc.num[i][t_idx].add(lmags[i], values[i]);
                    if (dump != nullptr && t_idx == dump->time_index) {
                        const int oi = dump->observable_index;
                        dump_num[k] = std::exp(lmags[oi]) * values[oi];
                        dump_den[k] = std::exp(log_den.real()) * den_unit;
                    }
                };

                record(out_idx++);
                for (int step = 0; step < n_steps && alive; ++step) {
                    for (int q = 0; q < n_modes; ++q) g_f[q] = rng.next_normal();
                    if (backward_needed) {
                        for (int q = 0; q < n_modes; ++q) g_b[q] = rng.next_normal();
                    }
                    const Complex* srow = nullptr;
                    if (shift.active) {
                        for (int j = 0; j < model.n_sites(); ++j) {
                            row_f[j] = shift.site(step, j);
                        }
                        srow = row_f.data();
                        log_w -= shift.s0_f[step];
                        const double sqrt_dt = std::sqrt(integ.dt);
                        for (int q = 0; q < n_modes; ++q) {
                            log_w -= shift.white_f(step, q) * g_f[q] * sqrt_dt;
                        }
                        if (backward_needed) {
                            log_w -= shift.s0_b[step];
                            for (int q = 0; q < n_modes; ++q) {
                                log_w -= shift.white_b(step, q) * g_b[q] * sqrt_dt;
                            }
                        }
                    }
                    fwd.step(n_modes > 0 ? g_f.data() : nullptr, srow);
                    if (backward_needed) bwd.step(n_modes > 0 ? g_b.data() : nullptr, srow);
                    alive = fwd.valid() && (!backward_needed || bwd.valid());
                    if (!alive) {
                        ++acc.excluded;
                        break;
                    }
                    if ((step + 1) % output_stride == 0) record(out_idx++);
                }
            }
        }
    };

    const int n_workers = std::max(1, plan.workers);
    if (n_workers == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(n_workers);
        for (int w = 0; w < n_workers; ++w) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }

    // Deterministic reduction: chunks in index order, per batch then global.
    std::vector<detail::ChunkAccum> batch_acc(plan.n_batches);
    for (auto& a : batch_acc) a.init(n_obs, n_out);
    for (std::size_t c = 0; c < chunks.size(); ++c) batch_acc[chunks[c].batch].merge(accums[c]);
    detail::ChunkAccum global;
    global.init(n_obs, n_out);
    for (const auto& b : batch_acc) global.merge(b);

    EnsembleResult result;
    result.n_trajectories = plan.n_traj;
    result.n_batches = plan.n_batches;
    result.excluded = global.excluded;
    result.times.resize(n_out);
    for (int t = 0; t < n_out; ++t) result.times[t] = t * output_stride * integ.dt;
    result.n_valid.assign(global.valid.begin(), global.valid.end());
    result.sigma_f2.resize(n_out);

    for (int t = 0; t < n_out; ++t) {
        if (global.valid[t] == 0) {
            throw std::runtime_error("run_ensemble: no valid trajectories at t = " +
                                     std::to_string(result.times[t]) + " (" +
                                     std::to_string(global.excluded) + " exclusions)");
        }
        const double log_n = std::log(static_cast<double>(global.valid[t]));
        const Complex mean_f = global.den[t].value_scaled(log_n);
        const double mean_abs2 = global.den_abs2[t].value_scaled(log_n).real();
        result.sigma_f2[t] = std::max(0.0, mean_abs2 - std::norm(mean_f));
    }

    result.observables.resize(n_obs);
    for (int i = 0; i < n_obs; ++i) {
        auto& series = result.observables[i];
        series.kind = kinds[i];
        series.mean.resize(n_out);
        series.stderr_re.resize(n_out);
        series.stderr_im.resize(n_out);
        series.batch_means.assign(n_out, std::vector<Complex>(plan.n_batches));
        const bool ratio = needs_backward_branch(kinds[i]) && kinds[i] != ObservableKind::norm;
        const bool plain_norm = kinds[i] == ObservableKind::norm;
        for (int t = 0; t < n_out; ++t) {
            for (int b = 0; b < plan.n_batches; ++b) {
                const auto& ba = batch_acc[b];
                Complex value;
                if (ratio) {
                    value = scaled_ratio(ba.num[i][t], ba.den[t]);
                } else {
                    const double log_nb = std::log(std::max<long>(ba.valid[t], 1));
                    value = plain_norm ? ba.den[t].value_scaled(log_nb)
                                       : ba.num[i][t].value_scaled(log_nb);
                }
                series.batch_means[t][b] = value;
            }
            if (ratio) {
                series.mean[t] = scaled_ratio(global.num[i][t], global.den[t]);
            } else {
                const double log_n = std::log(static_cast<double>(global.valid[t]));
                series.mean[t] = plain_norm ? global.den[t].value_scaled(log_n)
                                            : global.num[i][t].value_scaled(log_n);
            }
            double var_re = 0.0, var_im = 0.0;
            for (int b = 0; b < plan.n_batches; ++b) {
                const Complex d = series.batch_means[t][b] - series.mean[t];
                var_re += d.real() * d.real();
                var_im += d.imag() * d.imag();
            }
            const double denom = std::max(1, plan.n_batches - 1);
            series.stderr_re[t] = std::sqrt(var_re / denom / plan.n_batches);
            series.stderr_im[t] = std::sqrt(var_im / denom / plan.n_batches);
        }
    }

    const double total_samples = static_cast<double>(plan.n_traj);
    result.reliable = global.excluded <= 0.01 * total_samples;
    result.elapsed_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();

    if (dump != nullptr) {
        dump->num = std::move(dump_num);
        dump->den = std::move(dump_den);
    }
    return result;
}

// ------------------------------ variance fit ---------------------------------

struct VarianceFit {
    double alpha = 0.0;
    double beta = 0.0;
    int n_points = 0;
};

// Least-squares fit of log sigma_F^2 = log alpha + beta N t over the window
// [t_min, t_max]; non-positive variance entries are excluded.
inline VarianceFit variance_fit(const std::vector<double>& times,
                                const std::vector<double>& sigma_f2, int n_sites, double t_min,
                                double t_max) {
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    int n = 0;
    for (std::size_t i = 0; i < times.size(); ++i) {
        if (times[i] < t_min || times[i] > t_max) continue;
        if (!(sigma_f2[i] > 0.0)) continue;
        const double x = n_sites * times[i];
        const double y = std::log(sigma_f2[i]);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
        ++n;
    }
    if (n < 2) throw std::invalid_argument("variance_fit: fewer than two usable points");
    VarianceFit fit;
    fit.n_points = n;
    fit.beta = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    fit.alpha = std::exp((sy - fit.beta * sx) / n);
    return fit;
}

// -------------------------- uncertainty propagation ---------------------------

// First-order (delta method) standard error of the ratio <num>/<den> of two
// correlated complex means. var_* are total variances E|x - mu|^2 of the MEAN
// estimators, cov = E[(num - mu_n) conj(den - mu_d)] likewise of the means.
inline double uncertainty_propagation(Complex num_mean, double var_num, Complex den_mean,
                                      double var_den, Complex cov) {
    if (den_mean == Complex{0.0, 0.0}) {
        throw std::invalid_argument("uncertainty_propagation: zero denominator");
    }
    const Complex ratio = num_mean / den_mean;
    const double var =
        (var_num + std::norm(ratio) * var_den - 2.0 * (std::conj(ratio) * cov).real()) /
        std::norm(den_mean);
    return std::sqrt(std::max(0.0, var));
}

}  // namespace stochspin

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dcsde/base.hpp"
#include "dcsde/chain.hpp"
#include "dcsde/drift.hpp"
#include "dcsde/limit.hpp"
#include "dcsde/parallel.hpp"
#include "dcsde/rng.hpp"

namespace dcsde {

// ---------------------------------------------------------------------------
// A single observed path on a uniform grid.
// ---------------------------------------------------------------------------

struct ObservationPath {
    TimeGrid grid;
    std::vector<double> values;
    std::string provenance;

    void validate() const {
        if (values.size() != grid.size())
            throw GridError("observation length does not match its grid");
        require_finite(values, "observation");
    }
    double horizon() const { return grid.horizon(); }
};

inline ObservationPath observation_from_series(const std::vector<double>& t,
                                               const std::vector<double>& v,
                                               std::string provenance = "file") {
    if (t.size() < 2 || t.size() != v.size())
        throw ConfigError("observation series needs matching t,value columns");
    const double dt = t[1] - t[0];
    for (std::size_t i = 1; i < t.size(); ++i)
        if (std::abs(t[i] - t[i - 1] - dt) > 1e-9 * std::max(1.0, std::abs(t[i])))
            throw GridError("observation grid is not uniform");
    ObservationPath obs;
    obs.grid = TimeGrid(dt, t.size() - 1);
    obs.values = v;
    obs.provenance = std::move(provenance);
    obs.validate();
    return obs;
}

// Level-1 path of a nested simulation; the standard synthetic observation.
inline ObservationPath synthetic_observation(const DriftKernel& kernel, MixtureWeight u,
                                             double dt, double horizon, std::uint64_t seed,
                                             std::size_t depth = 30) {
    NestedConfig cfg;
    cfg.depth = depth;
    cfg.replicas = 1;
    cfg.dt = dt;
    cfg.horizon = horizon;
    cfg.seed = seed;
    cfg.keep_full_paths = true;
    cfg.threads = 1;
    const auto r = solve_nested_pair(cfg, kernel, u);
    ObservationPath obs;
    obs.grid = r.grid;
    obs.values.assign(r.x_path(0).begin(), r.x_path(0).end());
    obs.provenance = "synthetic(u=" + std::to_string(u.u) + ",seed=" + std::to_string(seed) + ")";
    return obs;
}

// ---------------------------------------------------------------------------
// Girsanov log-weight of a candidate drift path against an observation:
//   log Z_t^{-1} = sum_j b_j dX_j - 1/2 sum_j b_j^2 dt   (left-point / Ito)
// ---------------------------------------------------------------------------

inline std::vector<double> girsanov_logweight(const ObservationPath& obs,
                                              std::span<const double> drift_values) {
    obs.validate();
    if (drift_values.size() != obs.grid.size())
        throw GridError("drift path must be evaluated on the observation grid");
    std::vector<double> logw(obs.grid.size(), 0.0);
    for (std::size_t j = 0; j < obs.grid.steps; ++j) {
        const double b = drift_values[j];
        const double dX = obs.values[j + 1] - obs.values[j];
        logw[j + 1] = logw[j] + b * dX - 0.5 * b * b * obs.grid.dt;
    }
    return logw;
}

// ---------------------------------------------------------------------------
// Particle realization of the Zakai / Kushner-Stratonovich conditional
// expectations: N hidden hierarchies (levels 2..D+1) simulated under the
// physical dynamics, weighted by the Girsanov weight of the observed path.
// No resampling by default; path statistics for the conditional MLE are
// accumulated per realization.
// ---------------------------------------------------------------------------

struct FilterOptions {
    std::size_t depth = 3;       // hidden levels 2..depth+1
    std::size_t replicas = 5000;
    BoundaryClosure closure = BoundaryClosure::independent_bm;
    InitialLaw initial = PointInitial{0.0};
    std::size_t query_stride = 1; // record estimates every `stride` grid steps
    double ess_warn_fraction = 0.05;
    unsigned threads = 0;
    // bootstrap resampling with path-statistic checkpointing: when the ESS at
    // a query time falls below resample_fraction * N, realizations are
    // resampled by their weights and each survivor carries its accumulated
    // path integrals along its lineage. Off by default.
    bool resample = false;
    double resample_fraction = 0.5;
    // caller-supplied functions of the hidden stack (levels 2..D+1)
    std::vector<std::pair<std::string, std::function<double(std::span<const double>)>>>
        extra_functions;
};

struct FilterResult {
    std::vector<double> query_times;
    std::vector<std::string> registered; // function names
    // estimates[q * registered.size() + f]
    std::vector<double> estimates;
    std::vector<double> stderrs;
    std::vector<double> ess;
    std::optional<double> degeneracy_time; // first time ESS dropped below threshold
    std::size_t resample_events = 0;

    // per-replica statistics at the final time, for the conditional MLE
    std::vector<double> final_logw;
    std::vector<double> int_xt2;   // int X~^2 dt
    std::vector<double> int_xxt;   // int X X~ dt
    std::vector<double> int_xtdx;  // int X~ dX

    std::size_t function_index(const std::string& name) const {
        for (std::size_t f = 0; f < registered.size(); ++f)
            if (registered[f] == name) return f;
        throw ConfigError("filter function not registered: " + name);
    }
    double pi(const std::string& name, double t) const {
        return lookup(estimates, name, t);
    }
    double pi_stderr(const std::string& name, double t) const {
        return lookup(stderrs, name, t);
    }

  private:
    double lookup(const std::vector<double>& buf, const std::string& name, double t) const {
        const std::size_t f = function_index(name);
        for (std::size_t q = 0; q < query_times.size(); ++q)
            if (std::abs(query_times[q] - t) < 1e-9) return buf[q * registered.size() + f];
        throw GridError("filter was not queried at the requested time");
    }
};

inline FilterResult particle_filter(const ObservationPath& obs, const DriftKernel& kernel,
                                    MixtureWeight u, const FilterOptions& opt,
                                    std::uint64_t seed) {
    obs.validate();
    if (opt.depth < 1) throw ConfigError("filter depth must be >= 1");
    if (u.u == 1.0 && opt.closure == BoundaryClosure::mckean_vlasov)
        throw ConfigError("mckean_vlasov closure is disabled at u = 1");
    const TimeGrid grid = obs.grid;
    const std::size_t N = opt.replicas;
    const std::size_t L = opt.depth; // hidden levels 2..depth+1

    MarginalLaw marginal = MarginalLaw::none();
    if (u.u < 1.0 || opt.closure == BoundaryClosure::mckean_vlasov) {
        if (auto aff = kernel.affine_form())
            marginal = MarginalLaw::affine_exact(*aff, initial_mean(opt.initial), grid);
        else
            throw InvalidLawError("particle filter requires an affine kernel or marginal law");
    }

    FilterResult out;
    out.registered.push_back("one");
    for (std::size_t l = 0; l < L; ++l) {
        out.registered.push_back("x" + std::to_string(l + 2));
        out.registered.push_back("x" + std::to_string(l + 2) + "sq");
    }
    for (std::size_t l = 0; l + 1 < L; ++l)
        out.registered.push_back("x" + std::to_string(l + 2) + "x" + std::to_string(l + 3));
    for (const auto& [name, fn] : opt.extra_functions) out.registered.push_back(name);
    const std::size_t F = out.registered.size();

    // state matrices, replica-major
    std::vector<double> state(N * L), next(N * L);
    std::vector<double> logw(N, 0.0);
    out.int_xt2.assign(N, 0.0);
    out.int_xxt.assign(N, 0.0);
    out.int_xtdx.assign(N, 0.0);

    std::vector<RngStream> streams(N * L);
    for (std::size_t i = 0; i < N; ++i) {
        const std::uint64_t stride = static_cast<std::uint64_t>(i) * 256;
        for (std::size_t l = 0; l < L; ++l) {
            streams[i * L + l] = RngStream(seed, StreamPurpose::filter_hidden, stride + l);
            RngStream init(seed, StreamPurpose::nested_init, stride + l);
            state[i * L + l] = draw_initial(opt.initial, init);
        }
    }

    const unsigned threads = opt.threads ? opt.threads : default_threads();
    const double sdt = std::sqrt(grid.dt);

    auto phi_value = [&](std::size_t f, const double* s) {
        if (f == 0) return 1.0;
        const std::size_t g = f - 1;
        if (g < 2 * L) {
            const double v = s[g / 2];
            return (g % 2 == 0) ? v : v * v;
        }
        const std::size_t p = g - 2 * L;
        if (p < L - 1) return s[p] * s[p + 1];
        return opt.extra_functions[p - (L - 1)].second(std::span<const double>(s, L));
    };

    auto record = [&](double t) {
        // shifted unnormalized weights; every estimate is a ratio against the
        // same block sum, so pi(1) = 1 holds exactly
        double lmax = logw[0];
        for (double v : logw) lmax = std::max(lmax, v);
        std::vector<double> w(N), prod(N);
        for (std::size_t i = 0; i < N; ++i) w[i] = std::exp(logw[i] - lmax);
        const double wsum = block_sum(w);
        double e2 = 0.0;
        for (double v : w) e2 += v * v;
        const double ess = wsum * wsum / e2;

        out.query_times.push_back(t);
        out.ess.push_back(ess);
        if (!out.degeneracy_time &&
            ess < opt.ess_warn_fraction * static_cast<double>(N))
            out.degeneracy_time = t;
        for (std::size_t f = 0; f < F; ++f) {
            for (std::size_t i = 0; i < N; ++i)
                prod[i] = w[i] * phi_value(f, &state[i * L]);
            const double est = block_sum(prod) / wsum;
            double var = 0.0;
            for (std::size_t i = 0; i < N; ++i) {
                const double d = phi_value(f, &state[i * L]) - est;
                var += (w[i] / wsum) * (w[i] / wsum) * d * d;
            }
            out.estimates.push_back(est);
            out.stderrs.push_back(std::sqrt(var));
        }
    };

    // Systematic resampling by the current weights; hidden states, streams
    // and accumulated path statistics follow the surviving lineages.
    RngStream resample_rng(seed, StreamPurpose::picard_resample,
                           std::uint64_t{1} << 40);
    auto maybe_resample = [&]() {
        if (!opt.resample) return;
        if (out.ess.back() >= opt.resample_fraction * static_cast<double>(N)) return;
        double lmax = logw[0];
        for (double v : logw) lmax = std::max(lmax, v);
        std::vector<double> w(N);
        for (std::size_t i = 0; i < N; ++i) w[i] = std::exp(logw[i] - lmax);
        const double wsum = block_sum(w);
        std::vector<std::size_t> ancestor(N);
        const double step_u = resample_rng.next_uniform();
        double cumulative = w[0];
        std::size_t src = 0;
        for (std::size_t i = 0; i < N; ++i) {
            const double mark = (step_u + static_cast<double>(i)) / static_cast<double>(N) * wsum;
            while (cumulative < mark && src + 1 < N) cumulative += w[++src];
            ancestor[i] = src;
        }
        std::vector<double> new_state(N * L), a(N), b(N), cst(N);
        for (std::size_t i = 0; i < N; ++i) {
            for (std::size_t l = 0; l < L; ++l)
                new_state[i * L + l] = state[ancestor[i] * L + l];
            a[i] = out.int_xt2[ancestor[i]];
            b[i] = out.int_xxt[ancestor[i]];
            cst[i] = out.int_xtdx[ancestor[i]];
        }
        state.swap(new_state);
        out.int_xt2.swap(a);
        out.int_xxt.swap(b);
        out.int_xtdx.swap(cst);
        std::fill(logw.begin(), logw.end(), 0.0);
        ++out.resample_events;
    };

    // Replicas never interact, so each thread advances a block of replicas
    // across a whole query segment; synchronization happens only at query
    // times, where the weighted estimates are reduced in index order.
    record(0.0);
    std::size_t j0 = 0;
    while (j0 < grid.steps) {
        const std::size_t j1 = std::min(grid.steps, j0 + opt.query_stride);
        parallel_for(N, threads, [&](std::size_t i) {
            double* s = &state[i * L];
            double* nx = &next[i * L];
            for (std::size_t j = j0; j < j1; ++j) {
                const double t = grid.time(j);
                const double xo = obs.values[j];
                const double dX = obs.values[j + 1] - obs.values[j];
                // hidden hierarchy step (synchronous, closure on the last level)
                for (std::size_t l = 0; l < L; ++l) {
                    const double x = s[l];
                    double drift;
                    if (l == L - 1) {
                        drift = (opt.closure == BoundaryClosure::mckean_vlasov)
                                    ? marginal.field(kernel, t, j, x)
                                    : 0.0;
                    } else {
                        const double chain = kernel(t, x, s[l + 1]);
                        drift = (u.u == 1.0)
                                    ? chain
                                    : u.u * chain +
                                          (1.0 - u.u) * marginal.field(kernel, t, j, x);
                    }
                    nx[l] = x + grid.dt * drift + sdt * streams[i * L + l].next_normal();
                }
                // implied drift of the observed particle, Girsanov increment
                const double chain_obs = kernel(t, xo, s[0]);
                const double b = (u.u == 1.0)
                                     ? chain_obs
                                     : u.u * chain_obs +
                                           (1.0 - u.u) * marginal.field(kernel, t, j, xo);
                logw[i] += b * dX - 0.5 * b * b * grid.dt;
                // path statistics for the conditional MLE (X~ = level 2 = slot 0)
                const double xt = s[0];
                out.int_xt2[i] += xt * xt * grid.dt;
                out.int_xxt[i] += xo * xt * grid.dt;
                out.int_xtdx[i] += xt * dX;
                for (std::size_t l = 0; l < L; ++l) s[l] = nx[l];
            }
        });
        record(grid.time(j1));
        if (j1 < grid.steps) maybe_resample();
        j0 = j1;
    }
    out.final_logw = logw;
    return out;
}

// ---------------------------------------------------------------------------
// Exact linear-Gaussian filter for the truncated chain: hidden state
// Y = (levels 2..D+1), dY = A Y dt + dW, observed innovation
// dZ = dX + X dt = H Y dt + dB with H = (u, 0, ..., 0). Riccati by RK4 at
// dt/10 of the observation grid. Requires the centered linear kernel.
// ---------------------------------------------------------------------------

struct KalmanResult {
    std::vector<double> times;
    std::size_t dim = 0;
    std::vector<double> mean;       // [q*dim + r]
    std::vector<double> covariance; // [q*dim*dim + r*dim + c]

    double conditional_mean(std::size_t level_offset, double t) const {
        return mean[index_of(t) * dim + level_offset];
    }
    double conditional_variance(std::size_t level_offset, double t) const {
        return covariance[index_of(t) * dim * dim + level_offset * dim + level_offset];
    }

  private:
    std::size_t index_of(double t) const {
        for (std::size_t q = 0; q < times.size(); ++q)
            if (std::abs(times[q] - t) < 1e-9) return q;
        throw GridError("kalman oracle has no record at the requested time");
    }
};

inline KalmanResult kalman_bucy_oracle(const ObservationPath& obs, double u,
                                       std::size_t depth, double initial_var = 0.0,
                                       BoundaryClosure closure = BoundaryClosure::independent_bm) {
    obs.validate();
    if (u < 0.0 || u > 1.0) throw DomainError("kalman oracle requires u in [0,1]");
    if (depth < 1) throw ConfigError("kalman oracle requires depth >= 1");
    const std::size_t D = depth;
    const TimeGrid grid = obs.grid;

    std::vector<double> A(D * D, 0.0);
    for (std::size_t r = 0; r < D; ++r) {
        const bool top = (r == D - 1);
        if (!top) {
            A[r * D + r] = -1.0;
            A[r * D + r + 1] = u;
        } else {
            A[r * D + r] = (closure == BoundaryClosure::mckean_vlasov) ? -1.0 : 0.0;
        }
    }

    std::vector<double> P(D * D, 0.0);
    for (std::size_t r = 0; r < D; ++r) P[r * D + r] = initial_var;
    std::vector<double> y(D, 0.0);

    KalmanResult out;
    out.dim = D;
    out.times.reserve(grid.size());
    out.mean.reserve(grid.size() * D);
    out.covariance.reserve(grid.size() * D * D);

    auto riccati_rhs = [&](const std::vector<double>& p, std::vector<double>& dp) {
        // dP = A P + P A^T + I - P H^T H P, H = (u, 0, ..., 0)
        for (std::size_t r = 0; r < D; ++r)
            for (std::size_t c = 0; c < D; ++c) {
                double v = (r == c) ? 1.0 : 0.0;
                for (std::size_t m = 0; m < D; ++m)
                    v += A[r * D + m] * p[m * D + c] + p[r * D + m] * A[c * D + m];
                v -= u * u * p[r * D] * p[c * D];
                dp[r * D + c] = v;
            }
    };

    auto store = [&](double t) {
        out.times.push_back(t);
        out.mean.insert(out.mean.end(), y.begin(), y.end());
        out.covariance.insert(out.covariance.end(), P.begin(), P.end());
    };
    store(0.0);

    std::vector<double> k1(D * D), k2(D * D), k3(D * D), k4(D * D), tmp(D * D);
    for (std::size_t j = 0; j < grid.steps; ++j) {
        // mean update with start-of-step gain
        const double dZ = obs.values[j + 1] - obs.values[j] + obs.values[j] * grid.dt;
        const double innovation = dZ - u * y[0] * grid.dt;
        std::vector<double> ynew(D);
        for (std::size_t r = 0; r < D; ++r) {
            double ay = 0.0;
            for (std::size_t m = 0; m < D; ++m) ay += A[r * D + m] * y[m];
            ynew[r] = y[r] + ay * grid.dt + P[r * D] * u * innovation;
        }
        y.swap(ynew);

        // covariance by classical RK4, 10 substeps per observation step
        const double h = grid.dt / 10.0;
        for (int s = 0; s < 10; ++s) {
            riccati_rhs(P, k1);
            for (std::size_t i = 0; i < D * D; ++i) tmp[i] = P[i] + 0.5 * h * k1[i];
            riccati_rhs(tmp, k2);
            for (std::size_t i = 0; i < D * D; ++i) tmp[i] = P[i] + 0.5 * h * k2[i];
            riccati_rhs(tmp, k3);
            for (std::size_t i = 0; i < D * D; ++i) tmp[i] = P[i] + h * k3[i];
            riccati_rhs(tmp, k4);
            for (std::size_t i = 0; i < D * D; ++i)
                P[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        for (double v : P)
            if (!std::isfinite(v)) throw NumericError("Riccati integration blew up");
        store(grid.time(j + 1));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Estimators of u from a single observed path.
// ---------------------------------------------------------------------------

struct EstimatorResult {
    double estimate = 0.0;
    double raw = 0.0;             // before clamping
    double avg_square = 0.0;      // (1/T) int X^2 dt
    double terminal_square = 0.0; // X_T^2
    double horizon = 0.0;
    bool clamped_low = false;
    bool clamped_high = false;
    std::string method;
    std::map<std::string, double> diagnostics;
};

namespace detail {

inline double trapezoid_square_integral(const ObservationPath& obs) {
    double acc = 0.0;
    for (std::size_t j = 0; j < obs.grid.steps; ++j) {
        const double a = obs.values[j], b = obs.values[j + 1];
        acc += 0.5 * (a * a + b * b) * obs.grid.dt;
    }
    return acc;
}

inline void clamp_unit(EstimatorResult& r) {
    r.estimate = r.raw;
    if (r.estimate < 0.0) {
        r.estimate = 0.0;
        r.clamped_low = true;
    }
    if (r.estimate > 1.0) {
        r.estimate = 1.0;
        r.clamped_high = true;
    }
}

} // namespace detail

// u_m = 1 - (T - X_T^2) / (2 int_0^T X^2 dt); lim_{T->inf} u_m = 1 - sqrt(1-u^2).
inline EstimatorResult modified_estimator(const ObservationPath& obs) {
    obs.validate();
    EstimatorResult r;
    r.method = "modified";
    r.horizon = obs.horizon();
    const double integral = detail::trapezoid_square_integral(obs);
    if (!(integral > 0.0)) throw DegenerateError("modified estimator needs int X^2 dt > 0");
    r.avg_square = integral / r.horizon;
    r.terminal_square = obs.values.back() * obs.values.back();
    r.raw = 1.0 - (r.horizon - r.terminal_square) / (2.0 * integral);
    detail::clamp_unit(r);
    return r;
}

// u_M = sqrt(1 - ((2/T) int X^2 dt)^{-2}), clamped to 0 when the time-average
// sits below the u=0 stationary level.
inline EstimatorResult moments_estimator(const ObservationPath& obs) {
    obs.validate();
    EstimatorResult r;
    r.method = "mm";
    r.horizon = obs.horizon();
    const double integral = detail::trapezoid_square_integral(obs);
    r.avg_square = integral / r.horizon;
    r.terminal_square = obs.values.back() * obs.values.back();
    const double stat = 2.0 * r.avg_square;
    r.diagnostics["stationary_statistic"] = stat;
    const double bracket = 1.0 - 1.0 / (stat * stat);
    if (bracket < 0.0) {
        r.raw = 0.0;
        r.clamped_low = true;
        r.estimate = 0.0;
        return r;
    }
    r.raw = std::sqrt(bracket);
    detail::clamp_unit(r);
    return r;
}

// Conditional MLE via a self-consistency scan: the filter needs a candidate u
// to weight realizations, so u_hat(u_cand) is evaluated on a grid and the
// point minimizing |u_hat(u_cand) - u_cand| is returned.
struct CmleOptions {
    std::vector<double> candidates; // default 0, 0.05, ..., 1
    FilterOptions filter;
};

inline EstimatorResult conditional_mle(const ObservationPath& obs, const DriftKernel& kernel,
                                       const CmleOptions& options, std::uint64_t seed) {
    obs.validate();
    std::vector<double> candidates = options.candidates;
    if (candidates.empty())
        for (int i = 0; i <= 20; ++i) candidates.push_back(0.05 * i);
    if (candidates.empty()) throw ConfigError("conditional MLE needs a candidate grid");

    EstimatorResult r;
    r.method = "cmle";
    r.horizon = obs.horizon();
    const double integral = detail::trapezoid_square_integral(obs);
    r.avg_square = integral / r.horizon;
    r.terminal_square = obs.values.back() * obs.values.back();

    std::vector<double> scan(candidates.size());
    for (std::size_t c = 0; c < candidates.size(); ++c) {
        const double uc = candidates[c];
        FilterOptions fopt = options.filter;
        // endpoints suffice without resampling; with it, the ESS checkpoints
        // need periodic query points
        fopt.query_stride = fopt.resample
                                ? std::max<std::size_t>(1, obs.grid.steps / 100)
                                : std::max<std::size_t>(1, obs.grid.steps);
        const FilterResult f = particle_filter(obs, kernel, MixtureWeight(uc), fopt, seed);

        double lmax = f.final_logw[0];
        for (double v : f.final_logw) lmax = std::max(lmax, v);
        double wsum = 0.0, num = 0.0, den = 0.0;
        for (std::size_t i = 0; i < f.final_logw.size(); ++i) {
            const double w = std::exp(f.final_logw[i] - lmax);
            wsum += w;
            num += w * (f.int_xxt[i] + f.int_xtdx[i]);
            den += w * f.int_xt2[i];
        }
        num /= wsum;
        den /= wsum;
        if (!(den > 0.0))
            throw DegenerateError("conditional MLE denominator E[int X~^2 dt | F^X] <= 0");
        scan[c] = num / den;
        r.diagnostics["scan_u" + format_number(uc)] = scan[c];
    }

    // Self-consistent point of the scan map. u_hat(0) is trivially ~0 on any
    // observation, so a bare argmin of |u_hat(u) - u| would always report 0;
    // a downward crossing of the diagonal is the meaningful fixed point, with
    // argmin as the fallback when no crossing exists.
    double best_candidate = candidates[0];
    double best_estimate = scan[0];
    bool crossing = false;
    for (std::size_t c = 0; c + 1 < candidates.size(); ++c) {
        const double g0 = scan[c] - candidates[c];
        const double g1 = scan[c + 1] - candidates[c + 1];
        if (g0 > 0.0 && g1 <= 0.0) {
            const double root =
                candidates[c] + g0 * (candidates[c + 1] - candidates[c]) / (g0 - g1);
            best_candidate = std::abs(g0) < std::abs(g1) ? candidates[c] : candidates[c + 1];
            best_estimate = root;
            crossing = true;
            break;
        }
    }
    if (!crossing) {
        double best_gap = std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < candidates.size(); ++c) {
            const double gap = std::abs(scan[c] - candidates[c]);
            if (gap < best_gap) {
                best_gap = gap;
                best_candidate = candidates[c];
                best_estimate = scan[c];
            }
        }
    }
    r.diagnostics["self_consistent_candidate"] = best_candidate;
    r.diagnostics["self_consistency_gap"] = std::abs(best_estimate - best_candidate);
    r.diagnostics["diagonal_crossing"] = crossing ? 1.0 : 0.0;
    r.raw = best_estimate;
    detail::clamp_unit(r);
    return r;
}

// ---------------------------------------------------------------------------
// Residual of the Kushner-Stratonovich equation for phi = x~ (the level-2
// coordinate), evaluated from filter estimates on the full grid:
//   pi_t(phi) - pi_0(phi)
//     - int_0^t (pi(phi b) - pi(b) pi(phi)) (dX - pi(b) ds)
//     - int_0^t pi(A phi) ds
// with b = drift of the observed particle and A phi = drift of level 2.
// Requires depth >= 2 so level 3 is available. Linear kernel only.
// ---------------------------------------------------------------------------

inline std::vector<double> kushner_stratonovich_residual(const ObservationPath& obs,
                                                         const FilterResult& f,
                                                         MixtureWeight u) {
    if (f.query_times.size() != obs.grid.size())
        throw GridError("KS residual needs filter estimates at every grid step");
    if (f.registered.size() < 4)
        throw ConfigError("KS residual needs depth >= 2 in the filter");
    std::vector<double> residual(obs.grid.size(), 0.0);
    double integral = 0.0;
    const double pi0 = f.estimates[f.function_index("x2")];
    for (std::size_t j = 0; j < obs.grid.steps; ++j) {
        const std::size_t base = j * f.registered.size();
        const double pi_x2 = f.estimates[base + f.function_index("x2")];
        const double pi_x2sq = f.estimates[base + f.function_index("x2sq")];
        const double pi_x3 = f.estimates[base + f.function_index("x3")];
        const double pi_x2x3 = f.estimates[base + f.function_index("x2x3")];
        const double xo = obs.values[j];
        const double dX = obs.values[j + 1] - obs.values[j];
        // b = -(x_obs) + u x2 + (1-u)*0 for the centered linear kernel
        const double pi_b = -xo + u.u * pi_x2;
        const double pi_phib = -xo * pi_x2 + u.u * pi_x2sq;
        const double pi_Aphi = -pi_x2 + u.u * pi_x3;
        (void)pi_x2x3;
        integral += (pi_phib - pi_b * pi_x2) * (dX - pi_b * obs.grid.dt) +
                    pi_Aphi * obs.grid.dt;
        const std::size_t next = (j + 1) * f.registered.size();
        residual[j + 1] = f.estimates[next + f.function_index("x2")] - pi0 - integral;
    }
    return residual;
}

} // namespace dcsde

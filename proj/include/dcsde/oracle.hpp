#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "dcsde/base.hpp"
#include "dcsde/quadrature.hpp"
#include "dcsde/rng.hpp"

namespace dcsde::oracle {

// ===========================================================================
// Modified Bessel functions I_0, I_1.
//
// Power series for x <= 15, scaled asymptotic expansion beyond. The scaled
// values e^{-x} I_nu(x) are first-class citizens because every formula in
// this module pairs I_nu with a decaying exponential; exponentiation happens
// last, in log space, where products could overflow.
// ===========================================================================

inline constexpr double kBesselCrossover = 15.0;

struct BesselEval {
    int order = 0;
    double x = 0.0;
    double value = 0.0;         // I_nu(x); +inf if it overflows a double
    double scaled = 0.0;        // e^{-x} I_nu(x), always finite
    const char* method = "series";
    double abs_error = 0.0;     // estimate for the scaled value
};

namespace detail {

// sum_k (x/2)^{2k+nu} / (k! (k+nu)!)
inline double bessel_series(int nu, double x, double& err) {
    double term = nu == 0 ? 1.0 : 0.5 * x;
    double sum = term;
    const double q = 0.25 * x * x;
    for (int k = 1; k < 400; ++k) {
        term *= q / (static_cast<double>(k) * static_cast<double>(k + nu));
        sum += term;
        if (term < 1e-18 * sum) break;
    }
    err = 1e-16 * sum;
    return sum;
}

// e^{-x} I_nu(x) ~ (2 pi x)^{-1/2} sum_k c_k,  c_k = -c_{k-1} (4nu^2-(2k-1)^2)/(8kx)
inline double bessel_asymptotic_scaled(int nu, double x, double& err) {
    const double mu = 4.0 * nu * nu;
    double c = 1.0;
    double sum = c;
    double last = std::abs(c);
    err = 0.0;
    for (int k = 1; k < 60; ++k) {
        const double d = 2.0 * k - 1.0;
        c *= -(mu - d * d) / (8.0 * k * x);
        if (std::abs(c) >= last) { err = std::abs(c); break; } // divergence point
        sum += c;
        last = std::abs(c);
        if (last < 1e-18 * std::abs(sum)) { err = last; break; }
        err = last;
    }
    const double pref = 1.0 / std::sqrt(2.0 * 3.141592653589793238462643383280 * x);
    err *= pref;
    return pref * sum;
}

} // namespace detail

inline BesselEval bessel_i_eval(int nu, double x) {
    if (nu != 0 && nu != 1) throw DomainError("bessel_i supports orders 0 and 1 only");
    if (x < 0.0) throw DomainError("bessel_i requires x >= 0");
    BesselEval out;
    out.order = nu;
    out.x = x;
    if (x <= kBesselCrossover) {
        double err;
        const double v = detail::bessel_series(nu, x, err);
        out.value = v;
        out.scaled = std::exp(-x) * v;
        out.method = "series";
        out.abs_error = std::exp(-x) * err;
    } else {
        double err;
        out.scaled = detail::bessel_asymptotic_scaled(nu, x, err);
        out.method = "asymptotic-scaled";
        out.abs_error = err;
        out.value = x < 700.0 ? std::exp(x) * out.scaled
                              : std::numeric_limits<double>::infinity();
    }
    return out;
}

inline double bessel_i(int nu, double x) { return bessel_i_eval(nu, x).value; }

// e^{-x} I_nu(x)
inline double bessel_i_scaled(int nu, double x) { return bessel_i_eval(nu, x).scaled; }

// ===========================================================================
// Variances and covariances of the linear mean-reverting pair (X, X~) with
// X_0 = 0:
//   Var(X_t)        = int_0^t e^{-2v} I_0(2uv) dv
//   E[X_s X_t]      = e^{-(t-s)} int_0^s e^{-2v} I_0(2u sqrt((t-s+v) v)) dv
//   E[X_s X~_t]     = u int_0^s e^{-(s-v)} E[X_v X_t] dv
//   lim Var(X_t)    = 1 / (2 sqrt(1-u^2))            (u < 1)
// ===========================================================================

inline double variance_u(double t, double u, double abs_tol = 1e-9) {
    if (t < 0.0) throw DomainError("variance_u requires t >= 0");
    if (u < 0.0 || u > 1.0) throw DomainError("variance_u requires u in [0,1]");
    if (t == 0.0) return 0.0;
    auto f = [u](double v) {
        // e^{-2v} I_0(2uv) evaluated through the scaled Bessel value
        return std::exp(-2.0 * (1.0 - u) * v) * bessel_i_scaled(0, 2.0 * u * v);
    };
    return integrate(f, 0.0, t, abs_tol).value;
}

inline double stationary_variance(double u) {
    if (u < 0.0 || u >= 1.0)
        throw DomainError(
            "stationary variance requires u in [0,1): at u=1 the variance grows like O(sqrt(t))");
    return 1.0 / (2.0 * std::sqrt(1.0 - u * u));
}

inline double autocov(double s, double t, double u, double abs_tol = 1e-7) {
    if (s < 0.0 || t < s) throw DomainError("autocov requires 0 <= s <= t");
    if (u < 0.0 || u > 1.0) throw DomainError("autocov requires u in [0,1]");
    if (s == 0.0) return 0.0;
    const double d = t - s;
    auto f = [u, d](double v) {
        const double arg = 2.0 * u * std::sqrt((d + v) * v);
        return std::exp(-d - 2.0 * v + arg) * bessel_i_scaled(0, arg);
    };
    return integrate(f, 0.0, s, abs_tol).value;
}

inline double crosscov(double s, double t, double u, double abs_tol = 1e-7) {
    if (s < 0.0 || t < 0.0) throw DomainError("crosscov requires s, t >= 0");
    if (u < 0.0 || u > 1.0) throw DomainError("crosscov requires u in [0,1]");
    if (s == 0.0 || u == 0.0) return 0.0;
    auto f = [s, t, u](double v) {
        const double a = std::min(v, t);
        const double b = std::max(v, t);
        const double cov = a > 0.0 ? autocov(a, b, u, 1e-9) : 0.0;
        return std::exp(-(s - v)) * cov;
    };
    return u * integrate(f, 0.0, s, abs_tol).value;
}

// Var(X_t) for the repulsive pair: t e^{2t} (I_0(2t) - I_1(2t)), assembled in
// log space. Grows like e^{4t}/sqrt(t); +inf once it exceeds double range.
inline double repulsive_variance(double t) {
    if (t < 0.0) throw DomainError("repulsive_variance requires t >= 0");
    if (t == 0.0) return 0.0;
    const double diff = bessel_i_scaled(0, 2.0 * t) - bessel_i_scaled(1, 2.0 * t);
    const double log_value = std::log(t) + 4.0 * t + std::log(diff);
    if (log_value > 709.0) return std::numeric_limits<double>::infinity();
    return std::exp(log_value);
}

// ===========================================================================
// Taboo kernel p_{0,k}(t; u) = u^k t^k e^{-t} / k! -- the (0,k) entry of
// e^{tQ} for the bidiagonal generator q_{ii} = -1, q_{i,i+1} = u.
// ===========================================================================

inline double taboo_kernel(std::int64_t k, double t, double u) {
    if (k < 0) throw DomainError("taboo_kernel requires k >= 0");
    if (t < 0.0) throw DomainError("taboo_kernel requires t >= 0");
    if (u < 0.0 || u > 1.0) throw DomainError("taboo_kernel requires u in [0,1]");
    if (k == 0) return std::exp(-t);
    if (t == 0.0 || u == 0.0) return 0.0;
    const double log_p = static_cast<double>(k) * std::log(u * t) - t -
                         std::lgamma(static_cast<double>(k) + 1.0);
    return std::exp(log_p);
}

// sum_{k >= K} p_{0,k}(v; u) = e^{-(1-u)v} - sum_{k < K} p_{0,k}(v; u)
inline double taboo_tail(int K, double v, double u) {
    double head = 0.0;
    for (int k = 0; k < K; ++k) head += taboo_kernel(k, v, u);
    return std::max(0.0, std::exp(-(1.0 - u) * v) - head);
}

// Largest tail mass of the truncated kernel family over [0, t].
inline double taboo_tail_sup(int K, double t, double u, int grid = 64) {
    double sup = 0.0;
    for (int j = 1; j <= grid; ++j)
        sup = std::max(sup, taboo_tail(K, t * j / grid, u));
    return sup;
}

// ===========================================================================
// Feynman-Kac sampling of X~_t. One draw integrates the grid noise
// dW_{s,k} against the empirical occupancy of `chains` independent killed
// rate-1 Markov chains (jump accepted with probability u). The empirical
// kernel converges to p_{0,k}, so the draw variance carries an O(1/chains)
// inflation on top of variance_u(t, u).
// ===========================================================================

struct FeynmanKacParams {
    double dt = 0.01;
    int chains = 256;
};

inline double feynman_kac_sample(double t, double u, std::uint64_t seed,
                                 std::uint64_t draw_index,
                                 const FeynmanKacParams& params = {}) {
    if (t <= 0.0) throw DomainError("feynman_kac_sample requires t > 0");
    if (u < 0.0 || u > 1.0) throw DomainError("feynman_kac_sample requires u in [0,1]");
    const auto grid = TimeGrid::from_horizon(params.dt, t);
    const std::size_t m = grid.steps;
    const int R = params.chains;

    // occupancy[k][j] counts chains in state k at midpoint v_j = (j+1/2) dt.
    std::vector<std::vector<std::uint32_t>> occupancy;
    RngStream chain_rng(seed, StreamPurpose::fk_chain, draw_index);
    for (int r = 0; r < R; ++r) {
        double clock = 0.0;
        std::int64_t state = 0;
        while (clock < t) {
            const double hold = -std::log(chain_rng.next_uniform());
            const double until = std::min(t, clock + hold);
            // occupy [clock, until) in `state`
            const auto j0 = static_cast<std::size_t>(std::ceil(clock / params.dt - 0.5));
            for (std::size_t j = j0; j < m; ++j) {
                const double v = (static_cast<double>(j) + 0.5) * params.dt;
                if (v >= until) break;
                if (v < clock) continue;
                if (occupancy.size() <= static_cast<std::size_t>(state))
                    occupancy.resize(state + 1, std::vector<std::uint32_t>(m, 0));
                ++occupancy[state][j];
            }
            clock = until;
            if (clock >= t) break;
            if (chain_rng.next_uniform() < u) ++state; else break; // killed
        }
    }

    // X~_t = sum_k sum_j p_hat_{0,k}(t - s_j) dW_{j,k} with s_j = t - v_j.
    // Iterating j per state keeps each noise stream's consumption sequential.
    const double sdt = std::sqrt(params.dt);
    double draw = 0.0;
    for (std::size_t k = 0; k < occupancy.size(); ++k) {
        RngStream noise(seed, StreamPurpose::kernel_streams,
                        (draw_index << 16) | static_cast<std::uint64_t>(k));
        for (std::size_t j = 0; j < m; ++j) {
            const double xi = noise.next_normal();
            const double p_hat = static_cast<double>(occupancy[k][j]) / R;
            draw += p_hat * sdt * xi;
        }
    }
    return draw;
}

// ===========================================================================
// Discrete-time model X_n = sum_{0<=l<=k<=n-1} C(k,l) u^l (1-a)^l a^{k-l}
// eps_{n-k,l} with i.i.d. unit-variance noise and zero initial values.
// ===========================================================================

inline double discrete_second_moment(int n, double a, double u) {
    if (!(a > 0.0 && a < 1.0)) throw DomainError("discrete model requires a in (0,1)");
    if (u < 0.0 || u > 1.0) throw DomainError("discrete model requires u in [0,1]");
    if (n < 0) throw DomainError("discrete model requires n >= 0");
    double total = 0.0;
    for (int k = 0; k < n; ++k) {
        for (int l = 0; l <= k; ++l) {
            if (u == 0.0 && l > 0) break;
            const double log_c = std::lgamma(k + 1.0) - std::lgamma(l + 1.0) -
                                 std::lgamma(k - l + 1.0);
            const double log_term =
                2.0 * (log_c + (l > 0 ? l * std::log(u * (1.0 - a)) : 0.0) +
                       (k - l) * std::log(a));
            total += std::exp(log_term);
        }
    }
    return total;
}

inline double simulate_discrete(int n, double a, double u, std::size_t replicas,
                                std::uint64_t seed) {
    if (!(a > 0.0 && a < 1.0)) throw DomainError("discrete model requires a in (0,1)");
    if (n < 1) throw DomainError("simulate_discrete requires n >= 1");
    // coefficient table c[k][l] = C(k,l) u^l (1-a)^l a^{k-l}
    std::vector<std::vector<double>> coef(n);
    for (int k = 0; k < n; ++k) {
        coef[k].resize(k + 1);
        for (int l = 0; l <= k; ++l) {
            const double log_c = std::lgamma(k + 1.0) - std::lgamma(l + 1.0) -
                                 std::lgamma(k - l + 1.0);
            const double lw = (l > 0 ? l * std::log(u * (1.0 - a)) : 0.0) +
                              (k - l) * std::log(a);
            coef[k][l] = (u == 0.0 && l > 0) ? 0.0 : std::exp(log_c + lw);
        }
    }
    std::vector<double> sq(replicas);
    for (std::size_t r = 0; r < replicas; ++r) {
        RngStream rng(seed, StreamPurpose::discrete_noise, r);
        double x = 0.0;
        for (int k = 0; k < n; ++k)
            for (int l = 0; l <= k; ++l) x += coef[k][l] * rng.next_normal();
        sq[r] = x * x;
    }
    return mean(sq);
}

// Tabulated variance curve, the backing data of the `variance-table` output.
struct OracleCurve {
    double u = 0.0;
    std::vector<double> t;
    std::vector<double> value;
    double abs_tol = 0.0;
};

inline OracleCurve variance_curve(double u, const std::vector<double>& times,
                                  double abs_tol = 1e-9) {
    OracleCurve c;
    c.u = u;
    c.abs_tol = abs_tol;
    c.t = times;
    c.value.reserve(times.size());
    for (double t : times) c.value.push_back(variance_u(t, u, abs_tol));
    return c;
}

} // namespace dcsde::oracle

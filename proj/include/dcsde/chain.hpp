#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "dcsde/base.hpp"
#include "dcsde/drift.hpp"
#include "dcsde/parallel.hpp"
#include "dcsde/rng.hpp"

namespace dcsde {

// ---------------------------------------------------------------------------
// Initial laws: point mass, Gaussian, or resampling from a sample file
// (one value per line).
// ---------------------------------------------------------------------------

struct PointInitial {
    double c = 0.0;
};
struct GaussianInitial {
    double mean = 0.0;
    double var = 1.0;
};
struct FileInitial {
    std::vector<double> samples;
    static FileInitial load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open initial sample file: " + path);
        FileInitial f;
        double v;
        while (in >> v) f.samples.push_back(v);
        if (f.samples.empty()) throw ConfigError("initial sample file is empty: " + path);
        return f;
    }
};

using InitialLaw = std::variant<PointInitial, GaussianInitial, FileInitial>;

inline void validate(const InitialLaw& law) {
    if (const auto* g = std::get_if<GaussianInitial>(&law))
        if (g->var < 0.0) throw ConfigError("initial law variance must be >= 0");
}

inline double draw_initial(const InitialLaw& law, RngStream& rng) {
    if (const auto* p = std::get_if<PointInitial>(&law)) return p->c;
    if (const auto* g = std::get_if<GaussianInitial>(&law))
        return g->mean + std::sqrt(g->var) * rng.next_normal();
    const auto& f = std::get<FileInitial>(law);
    return f.samples[rng.next_index(f.samples.size())];
}

// Mean of the initial law; used to close mean-field terms for affine kernels.
inline double initial_mean(const InitialLaw& law) {
    if (const auto* p = std::get_if<PointInitial>(&law)) return p->c;
    if (const auto* g = std::get_if<GaussianInitial>(&law)) return g->mean;
    const auto& f = std::get<FileInitial>(law);
    return mean(std::span<const double>(f.samples.data(), f.samples.size()));
}

// ---------------------------------------------------------------------------
// Finite circular chain configuration and path storage.
// ---------------------------------------------------------------------------

struct ChainConfig {
    std::size_t n = 1;
    MixtureWeight u{0.0};
    double dt = 0.01;
    double horizon = 1.0;
    std::uint64_t seed = 0;
    InitialLaw initial = PointInitial{0.0};
    bool exclude_self = false;      // mean-field sum over j != i (still weight 1/n)
    std::size_t stream_shift = 0;   // circular relabeling of noise streams (diagnostics)
    unsigned threads = 0;           // 0 = hardware default
    std::uint64_t memory_budget_bytes = 2ull << 30;

    TimeGrid grid() const { return TimeGrid::from_horizon(dt, horizon); }

    void validate() const {
        if (n < 1) throw ConfigError("chain requires n >= 1");
        dcsde::validate(initial);
        (void)grid();
    }
};

struct PathEnsemble {
    std::size_t particles = 0;
    TimeGrid grid;
    std::uint64_t seed = 0;
    bool wraparound = true;       // circular index: particle n is particle 0's neighbor
    std::vector<double> data;     // particle-major: data[i*(steps+1) + j]

    double value(std::size_t particle, std::size_t step) const {
        return data[particle * grid.size() + step];
    }
    std::span<const double> path(std::size_t particle) const {
        return {data.data() + particle * grid.size(), grid.size()};
    }
    // Cross-section at a grid step.
    std::vector<double> slice(std::size_t step) const {
        std::vector<double> out(particles);
        for (std::size_t i = 0; i < particles; ++i) out[i] = value(i, step);
        return out;
    }
    std::vector<double> slice_at(double t) const { return slice(grid.index_of(t)); }
};

// ---------------------------------------------------------------------------
// One synchronous Euler-Maruyama step of the circular chain:
//   x_i' = x_i + dt [ u b(t, x_i, x_{i+1}) + (1-u)/n sum_j b(t, x_i, x_j) ]
//        + sqrt(dt) noise_i
// Drifts are all evaluated at the pre-step state.
// ---------------------------------------------------------------------------

inline std::vector<double> step_chain(std::span<const double> state,
                                      const DriftKernel& kernel, MixtureWeight u,
                                      double t, double dt,
                                      std::span<const double> noise,
                                      bool exclude_self = false, unsigned threads = 1) {
    const std::size_t n = state.size();
    if (noise.size() != n) throw ConfigError("noise vector length must equal particle count");
    require_finite(state, "chain state");
    require_finite(noise, "chain noise");

    std::vector<double> next(n);
    const double sdt = std::sqrt(dt);
    const double w_chain = u.u;
    const double w_field = 1.0 - u.u;

    if (const auto aff = kernel.affine_form()) {
        const double s = block_sum(state);
        const double nn = static_cast<double>(n);
        parallel_for(n, threads, [&](std::size_t i) {
            const double x = state[i];
            const double xn = state[(i + 1) % n];
            double field;
            if (exclude_self)
                field = (nn - 1.0) / nn * (aff->ax * x + aff->c) + aff->ay * (s - x) / nn;
            else
                field = aff->ax * x + aff->ay * (s / nn) + aff->c;
            const double drift = w_chain * kernel(t, x, xn) + w_field * field;
            next[i] = x + dt * drift + sdt * noise[i];
        });
    } else {
        parallel_for(n, threads, [&](std::size_t i) {
            const double x = state[i];
            const double xn = state[(i + 1) % n];
            double field = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                if (exclude_self && j == i) continue;
                field += kernel(t, x, state[j]);
            }
            field /= static_cast<double>(n);
            const double drift = w_chain * kernel(t, x, xn) + w_field * field;
            next[i] = x + dt * drift + sdt * noise[i];
        });
    }
    return next;
}

inline PathEnsemble simulate_chain(const ChainConfig& config, const DriftKernel& kernel) {
    config.validate();
    const TimeGrid grid = config.grid();
    const std::uint64_t need =
        static_cast<std::uint64_t>(config.n) * grid.size() * sizeof(double);
    if (need > config.memory_budget_bytes)
        throw CapacityError("chain ensemble exceeds the configured memory budget", need);

    PathEnsemble out;
    out.particles = config.n;
    out.grid = grid;
    out.seed = config.seed;
    out.data.resize(config.n * grid.size());

    // thread spawns happen per step, so small systems run single-threaded
    unsigned threads = config.threads ? config.threads : default_threads();
    if (config.n < 4096) threads = 1;
    const std::size_t n = config.n;

    std::vector<double> state(n), noise(n);
    std::vector<RngStream> noise_streams(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint64_t sid = (i + config.stream_shift) % n;
        RngStream init(config.seed, StreamPurpose::chain_init, sid);
        state[i] = draw_initial(config.initial, init);
        noise_streams[i] = RngStream(config.seed, StreamPurpose::chain_noise, sid);
        out.data[i * grid.size()] = state[i];
    }

    for (std::size_t j = 0; j < grid.steps; ++j) {
        for (std::size_t i = 0; i < n; ++i) noise[i] = noise_streams[i].next_normal();
        state = step_chain(state, kernel, config.u, grid.time(j), grid.dt, noise,
                           config.exclude_self, threads);
        for (std::size_t i = 0; i < n; ++i) out.data[i * grid.size() + j + 1] = state[i];
    }
    require_finite(state, "chain state at the horizon");
    return out;
}

// ---------------------------------------------------------------------------
// Shift-invariance diagnostic: energy distance between the empirical laws of
// k-consecutive tuples started at even vs odd indices. Zero in distribution
// under the shift invariance of the chain.
// ---------------------------------------------------------------------------

namespace detail {

inline double tuple_dist(const std::vector<double>& tuples, std::size_t k, std::size_t a,
                         std::size_t b) {
    double s = 0.0;
    for (std::size_t d = 0; d < k; ++d) {
        const double diff = tuples[a * k + d] - tuples[b * k + d];
        s += diff * diff;
    }
    return std::sqrt(s);
}

// 2 E|A-B| - E|A-A'| - E|B-B'| over the index sets ia, ib.
inline double energy_distance(const std::vector<double>& tuples, std::size_t k,
                              const std::vector<std::size_t>& ia,
                              const std::vector<std::size_t>& ib) {
    const double na = static_cast<double>(ia.size());
    const double nb = static_cast<double>(ib.size());
    if (ia.empty() || ib.empty()) throw DomainError("energy distance requires nonempty groups");
    double cross = 0.0, within_a = 0.0, within_b = 0.0;
    for (std::size_t p = 0; p < ia.size(); ++p)
        for (std::size_t q = 0; q < ib.size(); ++q)
            cross += tuple_dist(tuples, k, ia[p], ib[q]);
    for (std::size_t p = 0; p < ia.size(); ++p)
        for (std::size_t q = p + 1; q < ia.size(); ++q)
            within_a += tuple_dist(tuples, k, ia[p], ia[q]);
    for (std::size_t p = 0; p < ib.size(); ++p)
        for (std::size_t q = p + 1; q < ib.size(); ++q)
            within_b += tuple_dist(tuples, k, ib[p], ib[q]);
    return 2.0 * cross / (na * nb) - 2.0 * within_a / (na * na) - 2.0 * within_b / (nb * nb);
}

inline std::vector<double> consecutive_tuples(const PathEnsemble& ensemble, std::size_t k,
                                              std::size_t step) {
    const std::size_t n = ensemble.particles;
    std::vector<double> tuples(n * k);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t d = 0; d < k; ++d)
            tuples[i * k + d] = ensemble.value((i + d) % n, step);
    return tuples;
}

} // namespace detail

inline double shift_invariance_statistic(const PathEnsemble& ensemble, std::size_t k,
                                         double t) {
    if (k < 1 || k > ensemble.particles)
        throw ConfigError("tuple window must satisfy 1 <= k <= n");
    const std::size_t step = ensemble.grid.index_of(t);
    const auto tuples = detail::consecutive_tuples(ensemble, k, step);
    std::vector<std::size_t> even, odd;
    for (std::size_t i = 0; i < ensemble.particles; ++i)
        (i % 2 == 0 ? even : odd).push_back(i);
    return detail::energy_distance(tuples, k, even, odd);
}

// Energy distance between the k-tuple clouds of two ensembles at time t
// (used by the exchange-symmetry diagnostics).
inline double tuple_law_distance(const PathEnsemble& a, const PathEnsemble& b,
                                 std::size_t k, double t) {
    if (a.particles != b.particles || !(a.grid == b.grid))
        throw GridError("ensembles must share size and grid");
    const std::size_t step = a.grid.index_of(t);
    const std::size_t n = a.particles;
    auto ta = detail::consecutive_tuples(a, k, step);
    const auto tb = detail::consecutive_tuples(b, k, step);
    ta.insert(ta.end(), tb.begin(), tb.end());
    std::vector<std::size_t> ia(n), ib(n);
    for (std::size_t i = 0; i < n; ++i) {
        ia[i] = i;
        ib[i] = n + i;
    }
    return detail::energy_distance(ta, k, ia, ib);
}

} // namespace dcsde

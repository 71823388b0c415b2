#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dcsde/base.hpp"
#include "dcsde/chain.hpp"
#include "dcsde/drift.hpp"
#include "dcsde/io.hpp"
#include "dcsde/measures.hpp"
#include "dcsde/oracle.hpp"
#include "dcsde/parallel.hpp"
#include "dcsde/rng.hpp"

namespace dcsde {

// ---------------------------------------------------------------------------
// Sample-path law representation: N equally weighted paths on a common grid.
// ---------------------------------------------------------------------------

struct LawEnsemble {
    TimeGrid grid;
    std::size_t replicas = 0;
    std::vector<double> data; // replica-major: data[i*(steps+1) + j]
    std::int64_t generation = -1;
    std::uint64_t seed = 0;
    std::string provenance;

    std::span<const double> path(std::size_t i) const {
        return {data.data() + i * grid.size(), grid.size()};
    }
    double value(std::size_t i, std::size_t j) const { return data[i * grid.size() + j]; }
    std::vector<double> slice(std::size_t j) const {
        std::vector<double> out(replicas);
        for (std::size_t i = 0; i < replicas; ++i) out[i] = value(i, j);
        return out;
    }
    std::vector<double> slice_at(double t) const { return slice(grid.index_of(t)); }

    EmpiricalMeasure measure_at(double t) const {
        return EmpiricalMeasure::from_samples_1d(slice_at(t));
    }

    std::vector<double> mean_curve() const {
        std::vector<double> m(grid.size(), 0.0);
        for (std::size_t j = 0; j < grid.size(); ++j)
            m[j] = mean(std::span<const double>(slice(j)));
        return m;
    }
};

inline void save_law(const LawEnsemble& l, const std::string& path) {
    BinaryEnsemble e;
    e.kind = EnsembleKind::law;
    e.n = l.replicas;
    e.steps = l.grid.steps;
    e.dt = l.grid.dt;
    e.seed = l.seed;
    e.generation = l.generation;
    e.data = l.data;
    save_ensemble(e, path);
}

inline LawEnsemble law_ensemble_from(const BinaryEnsemble& e) {
    LawEnsemble l;
    l.grid = TimeGrid(e.dt, e.steps);
    l.replicas = e.n;
    l.generation = e.generation;
    l.seed = e.seed;
    l.data = e.data;
    return l;
}

// ---------------------------------------------------------------------------
// Closure of the marginal-law term (1-u) int b(t,x,y) m_t(dy).
// Affine kernels admit an exact mean recursion; sample laws work generally.
// ---------------------------------------------------------------------------

class MarginalLaw {
  public:
    enum class Kind { none, mean_curve, ensemble };

    static MarginalLaw none() { return MarginalLaw(); }
    static MarginalLaw constant_mean(double m, std::size_t grid_size) {
        MarginalLaw l;
        l.kind_ = Kind::mean_curve;
        l.means_.assign(grid_size, m);
        return l;
    }
    static MarginalLaw mean_curve(std::vector<double> means) {
        MarginalLaw l;
        l.kind_ = Kind::mean_curve;
        l.means_ = std::move(means);
        return l;
    }
    static MarginalLaw from_ensemble(const LawEnsemble& law) {
        if (law.replicas == 0) throw InvalidLawError("marginal law ensemble is empty");
        MarginalLaw l;
        l.kind_ = Kind::ensemble;
        l.law_ = &law;
        l.means_ = law.mean_curve();
        return l;
    }

    // Mean recursion of the simulated affine system: E_{j+1} = E_j + dt((ax+ay)E_j + c).
    static MarginalLaw affine_exact(const AffineForm& aff, double mean0, const TimeGrid& g) {
        std::vector<double> means(g.size());
        means[0] = mean0;
        for (std::size_t j = 0; j < g.steps; ++j)
            means[j + 1] = means[j] + g.dt * ((aff.ax + aff.ay) * means[j] + aff.c);
        return mean_curve(std::move(means));
    }

    Kind kind() const { return kind_; }
    double mean_at(std::size_t step) const { return means_.at(step); }

    // int b(t, x, y) m_t(dy)
    double field(const DriftKernel& kernel, double t, std::size_t step, double x) const {
        if (kind_ == Kind::none)
            throw InvalidLawError("mean-field term requires a marginal law when u < 1");
        if (auto aff = kernel.affine_form())
            return aff->ax * x + aff->ay * means_.at(step) + aff->c;
        if (kind_ != Kind::ensemble)
            throw DomainError("non-affine kernels need a sample-law closure");
        const auto& law = *law_;
        double s = 0.0;
        for (std::size_t i = 0; i < law.replicas; ++i)
            s += kernel(t, x, law.value(i, step));
        return s / static_cast<double>(law.replicas);
    }

  private:
    Kind kind_ = Kind::none;
    std::vector<double> means_;
    const LawEnsemble* law_ = nullptr;
};

// ---------------------------------------------------------------------------
// Truncated nested chain: levels j = D+1 down to 1, level j driven by level
// j+1; the pair is (level 1, level 2). Level D+1 follows the boundary
// closure. Each level has its own noise stream, so level j's noise is
// independent of all higher levels.
// ---------------------------------------------------------------------------

enum class BoundaryClosure : std::uint8_t {
    independent_bm = 0,
    mckean_vlasov = 1,
    frozen_law = 2,
};

struct NestedConfig {
    std::size_t depth = 30;   // chain levels 1..depth; closure sits at level depth+1
    std::size_t replicas = 10000;
    BoundaryClosure closure = BoundaryClosure::independent_bm;
    double dt = 0.01;
    double horizon = 1.0;
    std::uint64_t seed = 0;
    InitialLaw initial = PointInitial{0.0};
    unsigned threads = 0;
    std::size_t keep_levels = 2;          // full mode stores levels 1..keep_levels
    bool keep_full_paths = false;         // otherwise only snapshot times are stored
    bool keep_level1_noise = false;       // store level-1 Brownian increments (full mode)
    std::vector<double> snapshot_times;   // defaults to {horizon}

    TimeGrid grid() const { return TimeGrid::from_horizon(dt, horizon); }

    void validate(MixtureWeight u) const {
        if (depth < 1) throw ConfigError("nested solver requires depth >= 1");
        if (replicas < 1) throw ConfigError("nested solver requires replicas >= 1");
        if (keep_levels < 2 || keep_levels > depth + 1)
            throw ConfigError("keep_levels must lie in [2, depth+1]");
        if (u.u == 1.0 && closure == BoundaryClosure::mckean_vlasov)
            throw ConfigError(
                "mckean_vlasov closure is disabled at u = 1 (no mean-field term exists)");
        dcsde::validate(initial);
        (void)grid();
    }
};

struct NestedPairResult {
    TimeGrid grid;
    std::size_t replicas = 0;
    std::size_t keep_levels = 0;
    // full mode: levels[l][i*(steps+1)+j] for l = 0..keep_levels-1 (level l+1)
    std::vector<std::vector<double>> levels;
    std::vector<double> level1_noise; // replica-major increments, when requested
    // snapshot mode: per time index q, per replica: value of levels 1 and 2
    std::vector<double> snapshot_times;
    std::vector<double> snap_x;  // [q*replicas + i]
    std::vector<double> snap_xt;

    std::span<const double> x_path(std::size_t i) const {
        return {levels[0].data() + i * grid.size(), grid.size()};
    }
    std::span<const double> xt_path(std::size_t i) const {
        return {levels[1].data() + i * grid.size(), grid.size()};
    }
    std::vector<double> x_at(double t) const { return snapshot(t, false); }
    std::vector<double> xt_at(double t) const { return snapshot(t, true); }

  private:
    std::vector<double> snapshot(double t, bool tail) const {
        if (!levels.empty()) {
            const std::size_t j = grid.index_of(t);
            std::vector<double> out(replicas);
            const auto& buf = levels[tail ? 1 : 0];
            for (std::size_t i = 0; i < replicas; ++i) out[i] = buf[i * grid.size() + j];
            return out;
        }
        for (std::size_t q = 0; q < snapshot_times.size(); ++q)
            if (std::abs(snapshot_times[q] - t) < 1e-12) {
                const auto& buf = tail ? snap_xt : snap_x;
                return std::vector<double>(buf.begin() + q * replicas,
                                           buf.begin() + (q + 1) * replicas);
            }
        throw GridError("time was not recorded as a snapshot");
    }
};

inline NestedPairResult solve_nested_pair(const NestedConfig& config,
                                          const DriftKernel& kernel, MixtureWeight u,
                                          const MarginalLaw& marginal_in = MarginalLaw::none()) {
    config.validate(u);
    const TimeGrid grid = config.grid();
    const std::size_t levels_total = config.depth + 1;

    MarginalLaw marginal = marginal_in;
    if (u.u < 1.0 && marginal.kind() == MarginalLaw::Kind::none) {
        if (auto aff = kernel.affine_form())
            marginal = MarginalLaw::affine_exact(*aff, initial_mean(config.initial), grid);
        else
            throw InvalidLawError("non-affine kernels require an explicit marginal law");
    }
    const bool mv_closure = config.closure == BoundaryClosure::mckean_vlasov;
    if (mv_closure && marginal.kind() == MarginalLaw::Kind::none)
        throw InvalidLawError("mckean_vlasov closure requires a marginal law");
    if (config.closure == BoundaryClosure::frozen_law)
        throw InvalidLawError("frozen_law closure requires a law ensemble; "
                              "use the solve_nested_pair overload that takes one");

    NestedPairResult out;
    out.grid = grid;
    out.replicas = config.replicas;
    out.keep_levels = config.keep_levels;
    out.snapshot_times = config.snapshot_times.empty()
                             ? std::vector<double>{grid.horizon()}
                             : config.snapshot_times;
    std::vector<std::size_t> snap_steps;
    for (double t : out.snapshot_times) snap_steps.push_back(grid.index_of(t));

    if (config.keep_full_paths) {
        const std::uint64_t need = static_cast<std::uint64_t>(config.keep_levels) *
                                   config.replicas * grid.size() * sizeof(double);
        if (need > (4ull << 30))
            throw CapacityError("nested full-path storage exceeds 4 GiB", need);
        out.levels.assign(config.keep_levels,
                          std::vector<double>(config.replicas * grid.size()));
        if (config.keep_level1_noise)
            out.level1_noise.resize(config.replicas * grid.steps);
    } else {
        out.snap_x.resize(out.snapshot_times.size() * config.replicas);
        out.snap_xt.resize(out.snapshot_times.size() * config.replicas);
    }

    const double sdt = std::sqrt(grid.dt);
    const unsigned threads = config.threads ? config.threads : default_threads();

    parallel_for(config.replicas, threads, [&](std::size_t rep) {
        const std::uint64_t stride = static_cast<std::uint64_t>(rep) * 256;
        std::vector<RngStream> noise(levels_total);
        std::vector<double> state(levels_total), next(levels_total);
        for (std::size_t l = 0; l < levels_total; ++l) {
            noise[l] = RngStream(config.seed, StreamPurpose::nested_noise, stride + l);
            RngStream init(config.seed, StreamPurpose::nested_init, stride + l);
            state[l] = draw_initial(config.initial, init);
        }
        auto record = [&](std::size_t j) {
            if (config.keep_full_paths) {
                for (std::size_t l = 0; l < config.keep_levels; ++l)
                    out.levels[l][rep * grid.size() + j] = state[l];
            } else {
                for (std::size_t q = 0; q < snap_steps.size(); ++q)
                    if (snap_steps[q] == j) {
                        out.snap_x[q * config.replicas + rep] = state[0];
                        out.snap_xt[q * config.replicas + rep] = state[1];
                    }
            }
        };
        record(0);
        for (std::size_t j = 0; j < grid.steps; ++j) {
            const double t = grid.time(j);
            for (std::size_t l = 0; l < levels_total; ++l) {
                const double x = state[l];
                double drift;
                if (l == levels_total - 1) {
                    // boundary closure at the top of the ladder
                    drift = mv_closure ? marginal.field(kernel, t, j, x) : 0.0;
                } else {
                    const double chain = kernel(t, x, state[l + 1]);
                    if (u.u == 1.0) {
                        drift = chain;
                    } else {
                        const double field = marginal.field(kernel, t, j, x);
                        drift = u.u * chain + (1.0 - u.u) * field;
                    }
                }
                const double dB = sdt * noise[l].next_normal();
                if (l == 0 && config.keep_full_paths && config.keep_level1_noise)
                    out.level1_noise[rep * grid.steps + j] = dB;
                next[l] = x + grid.dt * drift + dB;
            }
            state.swap(next);
            record(j + 1);
        }
    });
    return out;
}

// frozen_law closure: level D+1 values are paths resampled from `frozen`.
inline NestedPairResult solve_nested_pair(const NestedConfig& config,
                                          const DriftKernel& kernel, MixtureWeight u,
                                          const MarginalLaw& marginal,
                                          const LawEnsemble& frozen) {
    if (config.closure != BoundaryClosure::frozen_law)
        throw ConfigError("this overload is only for the frozen_law closure");
    if (frozen.replicas == 0) throw InvalidLawError("frozen law ensemble is empty");
    if (!(frozen.grid == config.grid()))
        throw GridError("frozen law grid must match the nested grid");

    // Reuse the BM-closure integrator, then overwrite the top level by frozen
    // draws: simplest correct implementation is a dedicated loop.
    NestedConfig inner = config;
    inner.closure = BoundaryClosure::independent_bm;
    inner.validate(u);
    const TimeGrid grid = config.grid();

    MarginalLaw marg = marginal;
    if (u.u < 1.0 && marg.kind() == MarginalLaw::Kind::none) {
        if (auto aff = kernel.affine_form())
            marg = MarginalLaw::affine_exact(*aff, initial_mean(config.initial), grid);
        else
            throw InvalidLawError("non-affine kernels require an explicit marginal law");
    }

    NestedPairResult out;
    out.grid = grid;
    out.replicas = config.replicas;
    out.keep_levels = config.keep_levels;
    out.snapshot_times = config.snapshot_times.empty()
                             ? std::vector<double>{grid.horizon()}
                             : config.snapshot_times;
    std::vector<std::size_t> snap_steps;
    for (double t : out.snapshot_times) snap_steps.push_back(grid.index_of(t));
    if (config.keep_full_paths)
        out.levels.assign(config.keep_levels,
                          std::vector<double>(config.replicas * grid.size()));
    else {
        out.snap_x.resize(out.snapshot_times.size() * config.replicas);
        out.snap_xt.resize(out.snapshot_times.size() * config.replicas);
    }

    const double sdt = std::sqrt(grid.dt);
    const std::size_t levels_total = config.depth + 1;
    const unsigned threads = config.threads ? config.threads : default_threads();

    parallel_for(config.replicas, threads, [&](std::size_t rep) {
        const std::uint64_t stride = static_cast<std::uint64_t>(rep) * 256;
        RngStream pick(config.seed, StreamPurpose::picard_resample, stride);
        std::span<const double> top = frozen.path(pick.next_index(frozen.replicas));
        std::vector<RngStream> noise(levels_total - 1);
        std::vector<double> state(levels_total), next(levels_total);
        for (std::size_t l = 0; l + 1 < levels_total; ++l) {
            noise[l] = RngStream(config.seed, StreamPurpose::nested_noise, stride + l);
            RngStream init(config.seed, StreamPurpose::nested_init, stride + l);
            state[l] = draw_initial(config.initial, init);
        }
        state[levels_total - 1] = top[0];
        auto record = [&](std::size_t j) {
            if (config.keep_full_paths) {
                for (std::size_t l = 0; l < config.keep_levels; ++l)
                    out.levels[l][rep * grid.size() + j] = state[l];
            } else {
                for (std::size_t q = 0; q < snap_steps.size(); ++q)
                    if (snap_steps[q] == j) {
                        out.snap_x[q * config.replicas + rep] = state[0];
                        out.snap_xt[q * config.replicas + rep] = state[1];
                    }
            }
        };
        record(0);
        for (std::size_t j = 0; j < grid.steps; ++j) {
            const double t = grid.time(j);
            for (std::size_t l = 0; l + 1 < levels_total; ++l) {
                const double x = state[l];
                const double chain = kernel(t, x, state[l + 1]);
                double drift;
                if (u.u == 1.0)
                    drift = chain;
                else
                    drift = u.u * chain + (1.0 - u.u) * marg.field(kernel, t, j, x);
                next[l] = x + grid.dt * drift + sdt * noise[l].next_normal();
            }
            next[levels_total - 1] = top[j + 1];
            state.swap(next);
            record(j + 1);
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// Picard iteration of the law map Phi.
// ---------------------------------------------------------------------------

struct PicardConfig {
    std::size_t max_iter = 40;
    double tolerance = 1e-3;
    enum class Distance { pathspace, terminal_w1 } distance = Distance::pathspace;
    std::size_t replicas = 10000;
    double dt = 0.01;
    double horizon = 1.0;
    std::uint64_t seed = 0;
    InitialLaw initial = PointInitial{0.0};
    unsigned threads = 0;

    TimeGrid grid() const { return TimeGrid::from_horizon(dt, horizon); }
    void validate() const {
        if (!(tolerance > 0.0)) throw ConfigError("picard tolerance must be > 0");
        if (replicas < 1) throw ConfigError("picard requires replicas >= 1");
        dcsde::validate(initial);
        (void)grid();
    }
};

// One application of Phi: each replica draws a fresh tail path from `law`
// (resampling with replacement), then solves
//   dX = b(t, X, u delta_{X~} + (1-u) law_t) dt + dB
// against its own Brownian stream. Reusing the same seed across iterations
// gives common random numbers, which is what makes the contraction trace
// decay cleanly.
inline LawEnsemble picard_map(const LawEnsemble& law, const DriftKernel& kernel,
                              MixtureWeight u, std::uint64_t seed,
                              const InitialLaw& initial, unsigned threads = 0) {
    if (law.replicas == 0) throw InvalidLawError("picard_map requires a nonempty law");
    const TimeGrid grid = law.grid;
    const bool affine = kernel.affine_form().has_value();
    std::vector<double> law_means;
    std::vector<std::vector<double>> law_columns;
    if (u.u < 1.0) {
        if (affine) {
            law_means = law.mean_curve();
        } else {
            law_columns.resize(grid.size());
            for (std::size_t j = 0; j < grid.size(); ++j) law_columns[j] = law.slice(j);
        }
    }
    const auto aff = kernel.affine_form();

    LawEnsemble out;
    out.grid = grid;
    out.replicas = law.replicas;
    out.generation = law.generation + 1;
    out.seed = seed;
    out.provenance = "picard";
    out.data.resize(law.replicas * grid.size());

    const double sdt = std::sqrt(grid.dt);
    parallel_for(law.replicas, threads ? threads : default_threads(), [&](std::size_t i) {
        RngStream pick(seed, StreamPurpose::picard_resample, i);
        RngStream init(seed, StreamPurpose::picard_init, i);
        RngStream noise(seed, StreamPurpose::picard_noise, i);
        const std::span<const double> tail = law.path(pick.next_index(law.replicas));
        double x = draw_initial(initial, init);
        double* path = out.data.data() + i * grid.size();
        path[0] = x;
        for (std::size_t j = 0; j < grid.steps; ++j) {
            const double t = grid.time(j);
            const double chain = kernel(t, x, tail[j]);
            double drift;
            if (u.u == 1.0) {
                drift = chain;
            } else {
                double field;
                if (affine) {
                    field = aff->ax * x + aff->ay * law_means[j] + aff->c;
                } else {
                    field = 0.0;
                    for (double y : law_columns[j]) field += kernel(t, x, y);
                    field /= static_cast<double>(law_columns[j].size());
                }
                drift = u.u * chain + (1.0 - u.u) * field;
            }
            x += grid.dt * drift + sdt * noise.next_normal();
            path[j + 1] = x;
        }
    });
    return out;
}

// Paths frozen at their initial draw; the conventional Picard starting law.
inline LawEnsemble constant_initial_law(const PicardConfig& config) {
    config.validate();
    const TimeGrid grid = config.grid();
    LawEnsemble law;
    law.grid = grid;
    law.replicas = config.replicas;
    law.generation = 0;
    law.seed = config.seed;
    law.provenance = "constant-initial";
    law.data.resize(config.replicas * grid.size());
    for (std::size_t i = 0; i < config.replicas; ++i) {
        RngStream init(config.seed, StreamPurpose::picard_init, i);
        const double x0 = draw_initial(config.initial, init);
        for (std::size_t j = 0; j < grid.size(); ++j) law.data[i * grid.size() + j] = x0;
    }
    return law;
}

inline double law_distance(const LawEnsemble& a, const LawEnsemble& b,
                           PicardConfig::Distance kind) {
    if (!(a.grid == b.grid) || a.replicas != b.replicas)
        throw GridError("law ensembles must share grid and size");
    if (kind == PicardConfig::Distance::terminal_w1)
        return wasserstein1_1d(a.measure_at(a.grid.horizon()),
                               b.measure_at(b.grid.horizon()));
    return pathspace_distance_matrices(a.data, b.data, a.replicas, a.grid.size(),
                                       a.grid.steps, true)
        .value;
}

struct PicardSolveResult {
    LawEnsemble fixed_point;
    std::vector<double> trace; // successive-iterate distances d_k
};

inline PicardSolveResult picard_solve(const PicardConfig& config, const DriftKernel& kernel,
                                      MixtureWeight u, std::optional<LawEnsemble> start = {}) {
    config.validate();
    LawEnsemble current = start ? std::move(*start) : constant_initial_law(config);
    PicardSolveResult out;
    for (std::size_t k = 0; k < config.max_iter; ++k) {
        LawEnsemble next =
            picard_map(current, kernel, u, config.seed, config.initial, config.threads);
        const double d = law_distance(next, current, config.distance);
        out.trace.push_back(d);
        current = std::move(next);
        if (d <= config.tolerance) {
            out.fixed_point = std::move(current);
            return out;
        }
    }
    throw ConvergenceError("picard iteration did not reach tolerance within max_iter",
                           out.trace);
}

// ---------------------------------------------------------------------------
// Direct construction of the tail process from the taboo kernel:
//   X~_t = sum_{k<K} int_0^t p_{0,k}(t-s; u) dW_{s,k}
// with midpoint-discretized stochastic integrals against K independent
// streams. Valid for the linear mean-reverting kernel.
// ---------------------------------------------------------------------------

struct PoissonKernelResult {
    LawEnsemble law;
    double tail_mass = 0.0;      // sup over [0,T] of sum_{k>=K} p_{0,k}
    int terms = 0;
};

inline PoissonKernelResult poisson_kernel_construct(MixtureWeight u, const TimeGrid& grid,
                                                    int num_terms, std::size_t replicas,
                                                    std::uint64_t seed,
                                                    double tail_tol = 1e-8,
                                                    unsigned threads = 0) {
    if (num_terms < 1) throw ConfigError("poisson_kernel_construct requires K >= 1");
    const double tail = oracle::taboo_tail_sup(num_terms, grid.horizon(), u.u);
    if (tail > tail_tol) {
        int k = num_terms;
        while (k < 4096 && oracle::taboo_tail_sup(k, grid.horizon(), u.u) > tail_tol) ++k;
        throw TruncationError("taboo kernel truncation exceeds the tail tolerance", k);
    }

    // kernel table at midpoint lags: table[k][r] = p_{0,k}((r+1/2) dt; u)
    std::vector<std::vector<double>> table(num_terms, std::vector<double>(grid.steps));
    for (int k = 0; k < num_terms; ++k)
        for (std::size_t r = 0; r < grid.steps; ++r)
            table[k][r] =
                oracle::taboo_kernel(k, (static_cast<double>(r) + 0.5) * grid.dt, u.u);

    PoissonKernelResult out;
    out.tail_mass = tail;
    out.terms = num_terms;
    out.law.grid = grid;
    out.law.replicas = replicas;
    out.law.generation = 0;
    out.law.seed = seed;
    out.law.provenance = "poisson-kernel";
    out.law.data.assign(replicas * grid.size(), 0.0);

    const double sdt = std::sqrt(grid.dt);
    parallel_for(replicas, threads ? threads : default_threads(), [&](std::size_t rep) {
        double* path = out.law.data.data() + rep * grid.size();
        for (int k = 0; k < num_terms; ++k) {
            RngStream noise(seed, StreamPurpose::kernel_streams,
                            (static_cast<std::uint64_t>(rep) << 16) |
                                static_cast<std::uint64_t>(k));
            for (std::size_t j = 0; j < grid.steps; ++j) {
                const double dW = sdt * noise.next_normal();
                // dW lives on [s_j, s_j+dt); it contributes to X~ at all later times
                for (std::size_t m = j + 1; m <= grid.steps; ++m)
                    path[m] += table[k][m - j - 1] * dW;
            }
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// Measure-path builders from nested output.
// ---------------------------------------------------------------------------

inline MeasurePath pair_measure_path(const NestedPairResult& r) {
    if (r.levels.size() < 2) throw ConfigError("pair measures need full-path nested output");
    MeasurePath mp;
    mp.grid = r.grid;
    mp.measures.reserve(r.grid.size());
    for (std::size_t j = 0; j < r.grid.size(); ++j) {
        std::vector<double> atoms(r.replicas * 2);
        for (std::size_t i = 0; i < r.replicas; ++i) {
            atoms[2 * i] = r.levels[0][i * r.grid.size() + j];
            atoms[2 * i + 1] = r.levels[1][i * r.grid.size() + j];
        }
        mp.measures.emplace_back(2, std::move(atoms));
    }
    return mp;
}

// Joint of levels 1..k.
inline MeasurePath tuple_measure_path(const NestedPairResult& r, std::size_t k) {
    if (r.levels.size() < k)
        throw ConfigError("tuple measures need keep_levels >= k in the nested run");
    MeasurePath mp;
    mp.grid = r.grid;
    mp.measures.reserve(r.grid.size());
    for (std::size_t j = 0; j < r.grid.size(); ++j) {
        std::vector<double> atoms(r.replicas * k);
        for (std::size_t i = 0; i < r.replicas; ++i)
            for (std::size_t l = 0; l < k; ++l)
                atoms[i * k + l] = r.levels[l][i * r.grid.size() + j];
        mp.measures.emplace_back(k, std::move(atoms));
    }
    return mp;
}

inline MeasurePath marginal_measure_path(const NestedPairResult& r, std::size_t level = 0) {
    if (r.levels.size() <= level)
        throw ConfigError("marginal measures need full-path nested output");
    MeasurePath mp;
    mp.grid = r.grid;
    mp.measures.reserve(r.grid.size());
    for (std::size_t j = 0; j < r.grid.size(); ++j) {
        std::vector<double> atoms(r.replicas);
        for (std::size_t i = 0; i < r.replicas; ++i)
            atoms[i] = r.levels[level][i * r.grid.size() + j];
        mp.measures.emplace_back(1, std::move(atoms));
    }
    return mp;
}

inline MeasurePath law_measure_path(const LawEnsemble& law) {
    MeasurePath mp;
    mp.grid = law.grid;
    mp.measures.reserve(law.grid.size());
    for (std::size_t j = 0; j < law.grid.size(); ++j)
        mp.measures.emplace_back(1, law.slice(j));
    return mp;
}

} // namespace dcsde

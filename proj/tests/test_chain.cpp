#include <catch2/catch_amalgamated.hpp>

#include "dcsde/chain.hpp"
#include "dcsde/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

using namespace dcsde;

namespace {

// Permutation oracle: 99% quantile of the two-group energy statistic under
// random relabeling of the pooled tuples.
double permutation_quantile_99(const std::vector<double>& tuples, std::size_t k,
                               std::size_t n_a, std::size_t n_b, std::uint64_t seed,
                               int permutations = 200) {
    std::vector<std::size_t> labels(n_a + n_b);
    std::iota(labels.begin(), labels.end(), 0);
    RngStream rng(seed, StreamPurpose::permutation, 0);
    std::vector<double> stats;
    stats.reserve(permutations);
    for (int p = 0; p < permutations; ++p) {
        // Fisher-Yates with the counter-based stream
        for (std::size_t i = labels.size(); i > 1; --i)
            std::swap(labels[i - 1], labels[rng.next_index(i)]);
        std::vector<std::size_t> ia(labels.begin(), labels.begin() + n_a);
        std::vector<std::size_t> ib(labels.begin() + n_a, labels.end());
        stats.push_back(detail::energy_distance(tuples, k, ia, ib));
    }
    std::sort(stats.begin(), stats.end());
    return stats[static_cast<std::size_t>(0.99 * (permutations - 1))];
}

ChainConfig basic_config(std::size_t n, double u, double horizon, std::uint64_t seed) {
    ChainConfig cfg;
    cfg.n = n;
    cfg.u = MixtureWeight(u);
    cfg.dt = 0.01;
    cfg.horizon = horizon;
    cfg.seed = seed;
    cfg.initial = PointInitial{0.0};
    return cfg;
}

} // namespace

TEST_CASE("step_chain hand-checked values") {
    const auto kernel = DriftKernel::linear_mean_revert();
    SECTION("n=1: self-interaction vanishes, pure Brownian step") {
        std::vector<double> state = {1.5}, noise = {0.7};
        const auto next = step_chain(state, kernel, MixtureWeight(0.6), 0.0, 0.04, noise);
        CHECK_THAT(next[0], Catch::Matchers::WithinAbs(1.5 + 0.2 * 0.7, 1e-14));
    }
    SECTION("n=2, u=1, hand Euler step") {
        std::vector<double> state = {1.0, 0.0}, noise = {0.0, 0.0};
        const auto next = step_chain(state, kernel, MixtureWeight(1.0), 0.0, 0.1, noise);
        CHECK_THAT(next[0], Catch::Matchers::WithinAbs(0.9, 1e-14));
        CHECK_THAT(next[1], Catch::Matchers::WithinAbs(0.1, 1e-14));
    }
    SECTION("n=3, u=0, equal state is a fixed point of the drift") {
        std::vector<double> state = {2.0, 2.0, 2.0}, noise = {0.0, 0.0, 0.0};
        const auto next = step_chain(state, kernel, MixtureWeight(0.0), 0.0, 0.1, noise);
        for (double v : next) CHECK(v == 2.0);
    }
    SECTION("non-finite input is reported with its index") {
        std::vector<double> state = {0.0, std::nan(""), 0.0}, noise = {0.0, 0.0, 0.0};
        try {
            (void)step_chain(state, kernel, MixtureWeight(0.5), 0.0, 0.1, noise);
            FAIL("expected PropagationError");
        } catch (const PropagationError& e) {
            CHECK(e.first_index == 1);
        }
    }
}

TEST_CASE("affine fast path agrees with the generic mean-field loop") {
    // same affine function, one via built-in affine kind, one via a table
    const auto affine = DriftKernel::affine(-1.0, 0.5, 0.25);
    TabulatedGrid g;
    for (int i = 0; i <= 16; ++i) g.x.push_back(-4.0 + 0.5 * i);
    for (int j = 0; j <= 16; ++j) g.y.push_back(-4.0 + 0.5 * j);
    for (double x : g.x)
        for (double y : g.y) g.value.push_back(-1.0 * x + 0.5 * y + 0.25);
    const auto tabulated = DriftKernel::tabulated(std::move(g));

    RngStream rng(5, StreamPurpose::generic, 9);
    std::vector<double> state(64), noise(64);
    for (auto& v : state) v = rng.next_normal();
    for (auto& v : noise) v = rng.next_normal();
    for (bool exclude : {false, true}) {
        const auto a = step_chain(state, affine, MixtureWeight(0.3), 0.0, 0.01, noise, exclude);
        const auto b =
            step_chain(state, tabulated, MixtureWeight(0.3), 0.0, 0.01, noise, exclude);
        for (std::size_t i = 0; i < state.size(); ++i)
            CHECK_THAT(a[i], Catch::Matchers::WithinAbs(b[i], 1e-12));
    }
}

TEST_CASE("exclude_self flag") {
    const auto revert = DriftKernel::linear_mean_revert();
    RngStream rng(17, StreamPurpose::generic, 2);
    std::vector<double> state(32), noise(32, 0.0);
    for (auto& v : state) v = rng.next_normal();
    // b(x,x) = 0 for the mean-reverting kernel: both conventions coincide exactly
    const auto with_self = step_chain(state, revert, MixtureWeight(0.4), 0.0, 0.01, noise, false);
    const auto without = step_chain(state, revert, MixtureWeight(0.4), 0.0, 0.01, noise, true);
    for (std::size_t i = 0; i < state.size(); ++i) CHECK(with_self[i] == without[i]);

    // an affine kernel with b(x,x) != 0 shows the O(1/n) gap
    const auto aff = DriftKernel::affine(0.2, 0.3, 1.0);
    const auto a = step_chain(state, aff, MixtureWeight(0.0), 0.0, 1.0, noise, false);
    const auto b = step_chain(state, aff, MixtureWeight(0.0), 0.0, 1.0, noise, true);
    bool any_diff = false;
    for (std::size_t i = 0; i < state.size(); ++i) {
        CHECK(std::abs(a[i] - b[i]) < 0.5); // bounded by |b(x,x)|/n scale
        any_diff |= a[i] != b[i];
    }
    CHECK(any_diff);
}

TEST_CASE("zero-noise zero-kernel runs return the initial state exactly") {
    const auto zero = DriftKernel::affine(0.0, 0.0, 0.0);
    std::vector<double> state = {0.3, -1.2, 5.0, 0.0};
    const std::vector<double> initial = state;
    std::vector<double> noise(state.size(), 0.0);
    for (int j = 0; j < 50; ++j)
        state = step_chain(state, zero, MixtureWeight(0.5), 0.01 * j, 0.01, noise);
    for (std::size_t i = 0; i < state.size(); ++i) CHECK(state[i] == initial[i]);
}

TEST_CASE("simulate_chain determinism") {
    const auto kernel = DriftKernel::linear_mean_revert();
    auto cfg = basic_config(64, 0.5, 0.5, 2024);
    cfg.threads = 2;
    const auto a = simulate_chain(cfg, kernel);
    const auto b = simulate_chain(cfg, kernel);
    REQUIRE(a.data.size() == b.data.size());
    CHECK(a.data == b.data);
    // row 0 of the time axis equals the sampled initial values
    for (std::size_t i = 0; i < a.particles; ++i) CHECK(a.value(i, 0) == 0.0);
}

TEST_CASE("memory budget is enforced") {
    auto cfg = basic_config(1000, 0.0, 1.0, 1);
    cfg.memory_budget_bytes = 1024;
    try {
        (void)simulate_chain(cfg, DriftKernel::linear_mean_revert());
        FAIL("expected CapacityError");
    } catch (const CapacityError& e) {
        CHECK(e.required_bytes == 1000ull * 101ull * 8ull);
    }
}

TEST_CASE("mean-field chain variance matches the OU law at u=0") {
    auto cfg = basic_config(10000, 0.0, 1.0, 7);
    const auto ens = simulate_chain(cfg, DriftKernel::linear_mean_revert());
    const auto m = sample_moments(ens.slice_at(1.0));
    const double target = (1.0 - std::exp(-2.0)) / 2.0; // 0.432332...
    // 3 MC standard errors plus the O(dt) Euler allowance
    CHECK(std::abs(m.m2 - target) < 3.0 * m.variance_stderr() + 0.004);
}

TEST_CASE("zero kernel gives independent Brownian particles") {
    auto cfg = basic_config(8000, 0.3, 1.0, 11);
    const auto ens = simulate_chain(cfg, DriftKernel::affine(0.0, 0.0, 0.0));
    for (double t : {0.25, 1.0}) {
        const auto m = sample_moments(ens.slice_at(t));
        CHECK(std::abs(m.m2 - t) < 3.0 * m.variance_stderr());
    }
}

TEST_CASE("directed chain at u=1 matches the Bessel variance at t=5") {
    // chain particles are correlated, so average over independent ensembles
    // and build the error bar across seeds
    const auto kernel = DriftKernel::linear_mean_revert();
    std::vector<double> vars;
    for (std::uint64_t seed : {101, 202, 303, 404}) {
        auto cfg = basic_config(5000, 1.0, 5.0, seed);
        const auto ens = simulate_chain(cfg, kernel);
        vars.push_back(sample_moments(ens.slice_at(5.0)).m2);
    }
    const auto m = sample_moments(vars);
    const double target = oracle::variance_u(5.0, 1.0); // 1.24548...
    CHECK(std::abs(m.mean - target) < 3.0 * m.mean_stderr() + 0.012);
}

TEST_CASE("second moments stay below twice the stationary value at T=15") {
    for (double u : {0.0, 0.5, 0.9}) {
        auto cfg = basic_config(2000, u, 15.0, 5);
        const auto ens = simulate_chain(cfg, DriftKernel::linear_mean_revert());
        const auto m = sample_moments(ens.slice_at(15.0));
        const double second_moment = m.m2 + m.mean * m.mean;
        CHECK(second_moment < 2.0 * oracle::stationary_variance(u));
    }
}

TEST_CASE("shift invariance statistic") {
    SECTION("deterministic constant ensemble gives zero") {
        PathEnsemble ens;
        ens.particles = 32;
        ens.grid = TimeGrid(0.1, 4);
        ens.data.assign(ens.particles * ens.grid.size(), 3.0);
        CHECK_THAT(shift_invariance_statistic(ens, 3, 0.2),
                   Catch::Matchers::WithinAbs(0.0, 1e-13));
    }
    SECTION("iid particles pass, parity-corrupted particles fail") {
        auto cfg = basic_config(256, 0.0, 0.5, 31);
        auto ens = simulate_chain(cfg, DriftKernel::affine(0.0, 0.0, 0.0));
        const std::size_t k = 2;
        const double stat = shift_invariance_statistic(ens, k, 0.5);
        auto tuples = detail::consecutive_tuples(ens, k, ens.grid.index_of(0.5));
        const double q99 = permutation_quantile_99(tuples, k, 128, 128, 900);
        CHECK(stat < q99);

        // shift every even-indexed particle: the even/odd tuple laws separate
        for (std::size_t i = 0; i < ens.particles; i += 2)
            for (std::size_t j = 0; j < ens.grid.size(); ++j)
                ens.data[i * ens.grid.size() + j] += 10.0;
        const double stat_bad = shift_invariance_statistic(ens, k, 0.5);
        auto tuples_bad = detail::consecutive_tuples(ens, k, ens.grid.index_of(0.5));
        const double q99_bad = permutation_quantile_99(tuples_bad, k, 128, 128, 901);
        CHECK(stat_bad > q99_bad);
    }
}

TEST_CASE("noise-stream relabeling leaves the k-tuple law unchanged") {
    const auto kernel = DriftKernel::linear_mean_revert();
    auto cfg = basic_config(256, 0.7, 1.0, 77);
    const auto a = simulate_chain(cfg, kernel);
    cfg.stream_shift = 1;
    const auto b = simulate_chain(cfg, kernel);

    const std::size_t k = 2;
    const double observed = tuple_law_distance(a, b, k, 1.0);
    // permutation threshold over the pooled tuple cloud
    const std::size_t step = a.grid.index_of(1.0);
    auto pooled = detail::consecutive_tuples(a, k, step);
    const auto tb = detail::consecutive_tuples(b, k, step);
    pooled.insert(pooled.end(), tb.begin(), tb.end());
    const double q99 = permutation_quantile_99(pooled, k, 256, 256, 902);
    CHECK(observed < q99);
}

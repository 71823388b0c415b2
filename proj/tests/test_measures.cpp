#include <catch2/catch_amalgamated.hpp>

#include "dcsde/measures.hpp"
#include "dcsde/chain.hpp"

#include <cmath>
#include <vector>

using namespace dcsde;

namespace {

PathEnsemble constant_ensemble(std::size_t n, double value, const TimeGrid& grid) {
    PathEnsemble e;
    e.particles = n;
    e.grid = grid;
    e.data.assign(n * grid.size(), value);
    return e;
}

TestFunctionC2 unit_factor() {
    return {"one", [](double) { return 1.0; }, [](double) { return 0.0; },
            [](double) { return 0.0; }};
}

// Independent Ornstein-Uhlenbeck paths: the u=0 McKean-Vlasov solution for
// the centered linear kernel. Kept separate from the limit solver on purpose.
std::vector<double> simulate_ou_paths(std::size_t n, const TimeGrid& grid,
                                      std::uint64_t seed, std::uint32_t purpose_index) {
    std::vector<double> paths(n * grid.size(), 0.0);
    const double sdt = std::sqrt(grid.dt);
    for (std::size_t i = 0; i < n; ++i) {
        RngStream rng(seed, StreamPurpose::generic, (static_cast<std::uint64_t>(purpose_index) << 32) | i);
        double x = 0.0;
        for (std::size_t j = 0; j < grid.steps; ++j) {
            x += -x * grid.dt + sdt * rng.next_normal();
            paths[i * grid.size() + j + 1] = x;
        }
    }
    return paths;
}

MeasurePath measures_from_paths(const std::vector<double>& paths, std::size_t n,
                                const TimeGrid& grid) {
    MeasurePath mp;
    mp.grid = grid;
    for (std::size_t j = 0; j < grid.size(); ++j) {
        std::vector<double> atoms(n);
        for (std::size_t i = 0; i < n; ++i) atoms[i] = paths[i * grid.size() + j];
        mp.measures.emplace_back(1, std::move(atoms));
    }
    return mp;
}

MeasurePath pair_measures_from_paths(const std::vector<double>& a,
                                     const std::vector<double>& b, std::size_t n,
                                     const TimeGrid& grid) {
    MeasurePath mp;
    mp.grid = grid;
    for (std::size_t j = 0; j < grid.size(); ++j) {
        std::vector<double> atoms(2 * n);
        for (std::size_t i = 0; i < n; ++i) {
            atoms[2 * i] = a[i * grid.size() + j];
            atoms[2 * i + 1] = b[i * grid.size() + j];
        }
        mp.measures.emplace_back(2, std::move(atoms));
    }
    return mp;
}

} // namespace

TEST_CASE("empirical joint measures") {
    SECTION("constant ensemble collapses to one atom after dedup") {
        const auto ens = constant_ensemble(12, 4.5, TimeGrid(0.1, 2));
        const auto m = empirical_joint(ens, 0.1, 3).compact();
        REQUIRE(m.size() == 1);
        CHECK(m.weight(0) == 1.0);
        for (std::size_t d = 0; d < 3; ++d) CHECK(m.coordinate(0, d) == 4.5);
    }
    SECTION("n=2 wraparound atoms") {
        PathEnsemble ens;
        ens.particles = 2;
        ens.grid = TimeGrid(1.0, 1);
        ens.data = {1.0, 1.0, 2.0, 2.0}; // particle 0 = 1.0, particle 1 = 2.0
        const auto m = empirical_joint(ens, 1.0, 2);
        REQUIRE(m.size() == 2);
        CHECK(m.coordinate(0, 0) == 1.0);
        CHECK(m.coordinate(0, 1) == 2.0);
        CHECK(m.coordinate(1, 0) == 2.0);
        CHECK(m.coordinate(1, 1) == 1.0);
        CHECK(m.weight(0) == 0.5);
    }
    SECTION("marginals of the pair measure reproduce the 1-D measure exactly") {
        ChainConfig cfg;
        cfg.n = 50;
        cfg.u = MixtureWeight(0.5);
        cfg.dt = 0.05;
        cfg.horizon = 0.25;
        cfg.seed = 8;
        const auto ens = simulate_chain(cfg, DriftKernel::linear_mean_revert());
        const auto joint = empirical_joint(ens, 0.25, 2);
        const auto one = empirical_joint(ens, 0.25, 1);
        const auto m0 = joint.marginal({0}).compact();
        const auto m1 = joint.marginal({1}).compact();
        const auto ref = one.compact();
        REQUIRE(m0.size() == ref.size());
        REQUIRE(m1.size() == ref.size());
        for (std::size_t i = 0; i < ref.size(); ++i) {
            CHECK(m0.coordinate(i, 0) == ref.coordinate(i, 0));
            CHECK(m1.coordinate(i, 0) == ref.coordinate(i, 0));
            CHECK_THAT(m0.weight(i), Catch::Matchers::WithinAbs(ref.weight(i), 1e-15));
        }
    }
    SECTION("off-grid time is rejected") {
        const auto ens = constant_ensemble(4, 0.0, TimeGrid(0.1, 10));
        CHECK_THROWS_AS(empirical_joint(ens, 0.55, 1), GridError);
    }
}

TEST_CASE("wasserstein1_1d") {
    SECTION("identical measures") {
        auto m = EmpiricalMeasure::from_samples_1d({0.4, -1.0, 2.2});
        CHECK(wasserstein1_1d(m, m) == 0.0);
    }
    SECTION("point masses") {
        auto a = EmpiricalMeasure::from_samples_1d({0.0});
        auto b = EmpiricalMeasure::from_samples_1d({1.0});
        CHECK(wasserstein1_1d(a, b) == 1.0);
        CHECK(wasserstein1_1d(a, b, true) == 1.0);
    }
    SECTION("weighted coupling against direct enumeration") {
        // mu = 0.75 delta_0 + 0.25 delta_2 ; nu = 0.5 delta_0 + 0.5 delta_1
        // optimal transport: 0.25 from 0 to 1 (cost .25) + 0.25 from 2 to 1 (.25)
        EmpiricalMeasure mu(1, {0.0, 2.0}, {0.75, 0.25});
        EmpiricalMeasure nu(1, {0.0, 1.0}, {0.5, 0.5});
        CHECK_THAT(wasserstein1_1d(mu, nu), Catch::Matchers::WithinAbs(0.5, 1e-13));
    }
    SECTION("mean shift oracle") {
        RngStream rng(4, StreamPurpose::generic, 21);
        const std::size_t n = 100000;
        std::vector<double> a(n), b(n);
        for (std::size_t i = 0; i < n; ++i) {
            a[i] = rng.next_normal();
            b[i] = rng.next_normal() + 0.5;
        }
        const double d = wasserstein1_1d(EmpiricalMeasure::from_samples_1d(std::move(a)),
                                         EmpiricalMeasure::from_samples_1d(std::move(b)));
        CHECK_THAT(d, Catch::Matchers::WithinAbs(0.5, 0.02));
    }
    SECTION("metric axioms on random triples") {
        RngStream rng(13, StreamPurpose::generic, 22);
        for (int trial = 0; trial < 20; ++trial) {
            auto draw = [&rng](double shift) {
                std::vector<double> s(40);
                for (auto& v : s) v = rng.next_normal() + shift;
                return EmpiricalMeasure::from_samples_1d(std::move(s));
            };
            const auto a = draw(0.0), b = draw(0.5), c = draw(-0.7);
            const double ab = wasserstein1_1d(a, b);
            const double ba = wasserstein1_1d(b, a);
            const double ac = wasserstein1_1d(a, c);
            const double cb = wasserstein1_1d(c, b);
            CHECK_THAT(ab, Catch::Matchers::WithinAbs(ba, 1e-13));
            CHECK(ab <= ac + cb + 1e-12);
        }
    }
    SECTION("dimension mismatch") {
        EmpiricalMeasure a(2, {0.0, 0.0});
        auto b = EmpiricalMeasure::from_samples_1d({0.0});
        CHECK_THROWS_AS(wasserstein1_1d(a, b), DomainError);
    }
}

TEST_CASE("bounded Lipschitz distance") {
    const auto family = TestFunctionFamily::defaults(1);
    SECTION("family members satisfy their bounds") {
        CHECK(family.verify_bounds(1234));
        CHECK(TestFunctionFamily::defaults(2).verify_bounds(99));
    }
    SECTION("identical measures") {
        auto m = EmpiricalMeasure::from_samples_1d({0.0, 1.0, 2.0});
        CHECK(bounded_lipschitz_distance(m, m, family) == 0.0);
    }
    SECTION("clamp binds for distant point masses") {
        auto a = EmpiricalMeasure::from_samples_1d({0.0});
        auto b = EmpiricalMeasure::from_samples_1d({3.0});
        // the origin-centered clamp alone reports 1: the sup-norm bound binds
        const auto clamp0 = TestFunctionFamily::custom(
            1, {{"clamp(x)", [](std::span<const double> x) {
                     return std::clamp(x[0], -1.0, 1.0);
                 }}});
        CHECK_THAT(bounded_lipschitz_distance(a, b, clamp0),
                   Catch::Matchers::WithinAbs(1.0, 1e-13));
        // the full family can reach 2, never more (each member has sup <= 1)
        CHECK_THAT(bounded_lipschitz_distance(a, b, family),
                   Catch::Matchers::WithinAbs(2.0, 1e-13));
    }
    SECTION("dominated by min(W1, 2) on random clouds") {
        RngStream rng(3, StreamPurpose::generic, 23);
        for (int trial = 0; trial < 25; ++trial) {
            std::vector<double> xs(30), ys(30);
            const double shift = 4.0 * (rng.next_uniform() - 0.5);
            for (auto& v : xs) v = rng.next_normal();
            for (auto& v : ys) v = rng.next_normal() + shift;
            auto a = EmpiricalMeasure::from_samples_1d(std::move(xs));
            auto b = EmpiricalMeasure::from_samples_1d(std::move(ys));
            const double bl = bounded_lipschitz_distance(a, b, family);
            const double w1 = wasserstein1_1d(a, b);
            CHECK(bl <= std::min(w1, 2.0) + 1e-12);
        }
    }
    SECTION("empty family is rejected") {
        TestFunctionFamily empty;
        auto m = EmpiricalMeasure::from_samples_1d({0.0});
        CHECK_THROWS_AS(bounded_lipschitz_distance(m, m, empty), DomainError);
    }
}

TEST_CASE("path-space distance") {
    const TimeGrid grid(0.1, 5);
    const std::size_t n = 64;
    std::vector<double> a(n * grid.size());
    RngStream rng(6, StreamPurpose::generic, 24);
    for (auto& v : a) v = rng.next_normal();

    SECTION("identical ensembles") {
        const auto d = pathspace_distance_matrices(a, a, n, grid.size(), grid.steps);
        CHECK(d.value == 0.0);
        CHECK(d.upper_bound);
    }
    SECTION("constant shift saturates the truncation") {
        auto b = a;
        for (auto& v : b) v += 2.0;
        const auto d = pathspace_distance_matrices(a, b, n, grid.size(), grid.steps, true);
        CHECK(d.value == 1.0);
        const auto d2 = pathspace_distance_matrices(a, b, n, grid.size(), grid.steps, false);
        CHECK_THAT(d2.value, Catch::Matchers::WithinAbs(2.0, 1e-13));
    }
    SECTION("sorted coupling can beat the index coupling") {
        // b holds the same paths in reverse order: index coupling is poor,
        // sorting by terminal value restores the perfect match
        std::vector<double> b(n * grid.size());
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < grid.size(); ++j)
                b[i * grid.size() + j] = a[(n - 1 - i) * grid.size() + j];
        const auto d = pathspace_distance_matrices(a, b, n, grid.size(), grid.steps);
        CHECK(d.value == 0.0);
    }
}

TEST_CASE("generator residual on analytically known dynamics") {
    const TimeGrid grid(0.01, 100);
    const std::size_t n = 4000;
    const auto zero_kernel = DriftKernel::affine(0.0, 0.0, 0.0);
    const auto g = TestFunctionC2::bump(0.0, 4.0);

    SECTION("heat-equation check on Brownian paths") {
        // dX = dB: residual of d<g> = 1/2 <g''> should vanish to MC + dt
        ChainConfig cfg;
        cfg.n = n;
        cfg.dt = grid.dt;
        cfg.horizon = grid.horizon();
        cfg.seed = 40;
        const auto ens = simulate_chain(cfg, zero_kernel);
        MeasurePath marginal;
        marginal.grid = grid;
        for (std::size_t j = 0; j < grid.size(); ++j)
            marginal.measures.emplace_back(1, ens.slice(j));
        MeasurePath joint;
        joint.grid = grid;
        for (std::size_t j = 0; j < grid.size(); ++j) {
            std::vector<double> atoms(2 * n);
            const auto s = ens.slice(j);
            for (std::size_t i = 0; i < n; ++i) {
                atoms[2 * i] = s[i];
                atoms[2 * i + 1] = s[(i + 1) % n];
            }
            joint.measures.emplace_back(2, std::move(atoms));
        }
        const double r = generator_residual(joint, marginal, zero_kernel, MixtureWeight(0.0),
                                            g, 1.0);
        CHECK(std::abs(r) < 0.02);
    }

    SECTION("u=0 McKean-Vlasov fixed point") {
        const auto kernel = DriftKernel::linear_mean_revert();
        const auto xs = simulate_ou_paths(n, grid, 41, 1);
        const auto ys = simulate_ou_paths(n, grid, 41, 2); // independent copy
        const auto marginal = measures_from_paths(xs, n, grid);
        const auto joint = pair_measures_from_paths(xs, ys, n, grid);
        const double r =
            generator_residual(joint, marginal, kernel, MixtureWeight(0.0), g, 1.0);
        CHECK(std::abs(r) < 0.02);
    }

    SECTION("frozen measures satisfy the drift-free identity exactly") {
        // constant-in-time atoms with a zero kernel: the residual reduces to
        // minus the accumulated diffusion term, exactly
        MeasurePath marginal, joint;
        marginal.grid = joint.grid = grid;
        std::vector<double> atoms = {0.3, -0.6, 1.1, 0.0};
        for (std::size_t j = 0; j < grid.size(); ++j) {
            marginal.measures.emplace_back(1, atoms);
            std::vector<double> pair_atoms;
            for (double v : atoms) {
                pair_atoms.push_back(v);
                pair_atoms.push_back(v);
            }
            joint.measures.emplace_back(2, pair_atoms);
        }
        const double r =
            generator_residual(joint, marginal, zero_kernel, MixtureWeight(0.5), g, 1.0);
        double diffusion = 0.0;
        for (double v : atoms) diffusion += 0.25 * g.g2(v); // equal weights: <m, g''>
        CHECK_THAT(r, Catch::Matchers::WithinAbs(-0.5 * diffusion * 1.0, 1e-12));
    }
}

TEST_CASE("k-tuple generator residual") {
    const TimeGrid grid(0.01, 100);
    const std::size_t n = 3000;
    const auto kernel = DriftKernel::linear_mean_revert();

    // three independent OU families = exact u=0 nested levels
    const auto l1 = simulate_ou_paths(n, grid, 50, 1);
    const auto l2 = simulate_ou_paths(n, grid, 50, 2);
    const auto l3 = simulate_ou_paths(n, grid, 50, 3);

    auto triple = [&](std::size_t j) {
        std::vector<double> atoms(3 * n);
        for (std::size_t i = 0; i < n; ++i) {
            atoms[3 * i] = l1[i * grid.size() + j];
            atoms[3 * i + 1] = l2[i * grid.size() + j];
            atoms[3 * i + 2] = l3[i * grid.size() + j];
        }
        return EmpiricalMeasure(3, std::move(atoms));
    };
    MeasurePath joint3;
    joint3.grid = grid;
    for (std::size_t j = 0; j < grid.size(); ++j) joint3.measures.push_back(triple(j));
    const auto joint2 = pair_measures_from_paths(l1, l2, n, grid);
    const auto marginal = measures_from_paths(l1, n, grid);

    SECTION("coordinate-1 test function reduces to the 1-D residual exactly") {
        ProductTestFunction g2{{TestFunctionC2::bump(0.0, 3.0), unit_factor()}};
        const double rk = generator_residual_k(joint3, joint2, marginal, kernel,
                                               MixtureWeight(0.5), g2, 1.0);
        const double r1 = generator_residual(joint2, marginal, kernel, MixtureWeight(0.5),
                                             g2.factors[0], 1.0);
        CHECK_THAT(rk, Catch::Matchers::WithinAbs(r1, 1e-12));
    }

    SECTION("u=0 independent copies satisfy the k=2 equation") {
        ProductTestFunction g2{{TestFunctionC2::bump(0.0, 3.0),
                                TestFunctionC2::poly_bump(0.0, 3.0)}};
        const double r = generator_residual_k(joint3, joint2, marginal, kernel,
                                              MixtureWeight(0.0), g2, 1.0);
        CHECK(std::abs(r) < 0.02);
    }
}

TEST_CASE("BM residual envelope halves when dt halves and N quadruples") {
    const auto zero = DriftKernel::affine(0.0, 0.0, 0.0);
    const std::vector<TestFunctionC2> gs = {TestFunctionC2::bump(0.0, 4.0),
                                            TestFunctionC2::poly_bump(0.0, 4.0)};
    auto rms2 = [&](double dt, std::size_t n, std::uint64_t seed) {
        ChainConfig cfg;
        cfg.n = n;
        cfg.dt = dt;
        cfg.horizon = 1.0;
        cfg.seed = seed;
        const auto ens = simulate_chain(cfg, zero);
        MeasurePath marginal, joint;
        marginal.grid = joint.grid = ens.grid;
        for (std::size_t j = 0; j < ens.grid.size(); ++j) {
            const auto s = ens.slice(j);
            marginal.measures.emplace_back(1, s);
            std::vector<double> pp(2 * n);
            for (std::size_t i = 0; i < n; ++i) {
                pp[2 * i] = s[i];
                pp[2 * i + 1] = s[(i + 1) % n];
            }
            joint.measures.emplace_back(2, std::move(pp));
        }
        double acc = 0.0;
        int cnt = 0;
        for (const auto& g : gs)
            for (double t : {0.5, 1.0}) {
                const double r =
                    generator_residual(joint, marginal, zero, MixtureWeight(0.0), g, t);
                acc += r * r;
                ++cnt;
            }
        return acc / cnt;
    };
    double base = 0.0, refined = 0.0;
    for (std::uint64_t s = 0; s < 8; ++s) {
        base += rms2(0.01, 4000, 100 + s);
        refined += rms2(0.005, 16000, 200 + s);
    }
    const double ratio = std::sqrt(refined / base);
    CHECK(ratio > 0.3);
    CHECK(ratio < 0.75);
}

TEST_CASE("fluctuation study") {
    const std::vector<std::size_t> ns = {50, 100, 200, 400};
    SECTION("zero kernel couples the systems exactly") {
        const auto r = fluctuation_study(DriftKernel::affine(0.0, 0.0, 0.0),
                                         MixtureWeight(0.5), ns, 1.0, 0.02, 4, 60);
        for (double s : r.statistic) CHECK(s == 0.0);
        CHECK(r.bounded);
    }
    SECTION("linear kernel stays bounded") {
        for (double u : {0.0, 0.5}) {
            const auto r = fluctuation_study(DriftKernel::linear_mean_revert(),
                                             MixtureWeight(u), ns, 1.0, 0.02, 8, 61);
            CHECK(r.bounded);
            for (double s : r.statistic) CHECK(s > 0.0);
        }
    }
    SECTION("non-affine kernels are rejected") {
        TabulatedGrid g;
        g.x = {-1.0, 1.0};
        g.y = {-1.0, 1.0};
        g.value = {0.1, 0.0, 0.0, -0.1};
        CHECK_THROWS_AS(fluctuation_study(DriftKernel::tabulated(std::move(g)),
                                          MixtureWeight(0.0), ns, 1.0, 0.02, 2, 1),
                        ConfigError);
    }
}

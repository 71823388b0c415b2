// Acceptance suite: every shipped guarantee, one pass/fail line each.
// Exit code = number of failed criteria. Pass criterion numbers as arguments
// to run a subset.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "dcsde/chain.hpp"
#include "dcsde/config.hpp"
#include "dcsde/inference.hpp"
#include "dcsde/limit.hpp"
#include "dcsde/measures.hpp"
#include "dcsde/oracle.hpp"
#include "dcsde/runner.hpp"

using namespace dcsde;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;
};

struct Check {
    Outcome& out;
    void require(bool ok, const std::string& what) {
        if (!ok) {
            out.pass = false;
            out.detail += (out.detail.empty() ? "" : "; ") + what;
        }
    }
    void note(const std::string& what) {
        out.detail += (out.detail.empty() ? "" : "; ") + what;
    }
};

std::string fmt(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.4g", v);
    return buf;
}

// ---------------------------------------------------------------------------
// 1. Gaussian variance at u = 0: finite mean-field chain vs (1 - e^{-2t})/2,
//    with the dt/2 Richardson sanity check.
// ---------------------------------------------------------------------------
Outcome criterion1() {
    Outcome out;
    Check c{out};
    const auto kernel = DriftKernel::linear_mean_revert();
    auto run = [&](double dt) {
        ChainConfig cfg;
        cfg.n = 20000;
        cfg.u = MixtureWeight(0.0);
        cfg.dt = dt;
        cfg.horizon = 2.0;
        cfg.seed = 101;
        return simulate_chain(cfg, kernel);
    };
    const auto ens = run(0.01);
    for (double t : {0.5, 1.0, 2.0}) {
        const auto m = sample_moments(ens.slice_at(t));
        const double target = (1.0 - std::exp(-2.0 * t)) / 2.0;
        const double band = 3.0 * m.variance_stderr();
        c.require(std::abs(m.m2 - target) <= band,
                  "t=" + fmt(t) + ": |" + fmt(m.m2) + " - " + fmt(target) + "| > 3se=" +
                      fmt(band));
    }
    // Richardson: halving dt must not move the statistic beyond noise
    const auto ens_half = run(0.005);
    const auto a = sample_moments(ens.slice_at(2.0));
    const auto b = sample_moments(ens_half.slice_at(2.0));
    const double drift = std::abs(a.m2 - b.m2);
    const double band = 3.0 * std::sqrt(a.variance_stderr() * a.variance_stderr() +
                                        b.variance_stderr() * b.variance_stderr());
    c.require(drift <= band, "dt/2 drift " + fmt(drift) + " > " + fmt(band));
    if (out.pass) out.detail = "3 times within 3se; dt/2 drift " + fmt(drift);
    return out;
}

// ---------------------------------------------------------------------------
// 2. Stationary dichotomy: nested-pair variance at T=15 within 2% of
//    1/(2 sqrt(1-u^2)) for u in {0.5, 0.9}; u=1 at t=5 within 3 se of
//    5 e^{-10} (I0(10) + I1(10)).
// ---------------------------------------------------------------------------
Outcome criterion2() {
    Outcome out;
    Check c{out};
    const auto kernel = DriftKernel::linear_mean_revert();
    auto nested_var = [&](double u, double horizon, std::size_t n, double t,
                          std::uint64_t seed, double& se) {
        NestedConfig cfg;
        cfg.depth = 30;
        cfg.replicas = n;
        cfg.dt = 0.01;
        cfg.horizon = horizon;
        cfg.seed = seed;
        cfg.snapshot_times = {t};
        const auto r = solve_nested_pair(cfg, kernel, MixtureWeight(u));
        const auto m = sample_moments(r.x_at(t));
        se = m.variance_stderr();
        return m.m2;
    };
    double se;
    for (const auto& [u, n] : std::vector<std::pair<double, std::size_t>>{
             {0.5, 80000}, {0.9, 150000}}) {
        const double target = oracle::stationary_variance(u);
        const double v = nested_var(u, 15.0, n, 15.0, 202, se);
        const double rel = std::abs(v - target) / target;
        c.require(rel <= 0.02, "u=" + fmt(u) + ": |" + fmt(v) + " - " + fmt(target) +
                                   "|/target = " + fmt(rel) + " > 2%");
        if (out.pass) c.note("u=" + fmt(u) + " off by " + fmt(100.0 * rel) + "%");
    }
    const double target1 = oracle::variance_u(5.0, 1.0); // 5 e^{-10}(I0+I1)(10)
    const double v1 = nested_var(1.0, 5.0, 60000, 5.0, 203, se);
    c.require(std::abs(v1 - target1) <= 3.0 * se,
              "u=1: |" + fmt(v1) + " - " + fmt(target1) + "| > 3se=" + fmt(3.0 * se));
    if (out.pass) c.note("u=1 off by " + fmt(std::abs(v1 - target1)) + " (3se " + fmt(3 * se) + ")");
    return out;
}

// ---------------------------------------------------------------------------
// 3. Explosive scaling at u = 1: variance_u(50,1)/sqrt(50/pi) in [0.95, 1.05].
// ---------------------------------------------------------------------------
Outcome criterion3() {
    Outcome out;
    Check c{out};
    const double ratio = oracle::variance_u(50.0, 1.0, 1e-8) / std::sqrt(50.0 / M_PI);
    c.require(ratio >= 0.95 && ratio <= 1.05, "ratio " + fmt(ratio) + " outside [0.95, 1.05]");
    if (out.pass) out.detail = "ratio " + fmt(ratio);
    return out;
}

// ---------------------------------------------------------------------------
// 4. Route equivalence: Picard fixed point vs nested chain (D=30), marginal
//    variance at t in {1,5}, u in {0, 0.5, 1}, within combined 3 se. The
//    Picard side feeds its own sampling noise back through the fixed point,
//    so its error bar comes from independent replicate runs.
// ---------------------------------------------------------------------------
Outcome criterion4() {
    Outcome out;
    Check c{out};
    const auto kernel = DriftKernel::linear_mean_revert();
    for (double u : {0.0, 0.5, 1.0}) {
        NestedConfig nc;
        nc.depth = 30;
        nc.replicas = 40000;
        nc.dt = 0.01;
        nc.horizon = 5.0;
        nc.seed = 404;
        nc.snapshot_times = {1.0, 5.0};
        const auto nested = solve_nested_pair(nc, kernel, MixtureWeight(u));

        std::vector<std::vector<double>> picard_vars(2);
        for (std::uint64_t rep = 0; rep < 4; ++rep) {
            PicardConfig pc;
            pc.replicas = 10000;
            pc.dt = 0.01;
            pc.horizon = 5.0;
            pc.seed = 500 + 17 * rep;
            pc.tolerance = 2e-3;
            pc.max_iter = 80;
            const auto r = picard_solve(pc, kernel, MixtureWeight(u));
            picard_vars[0].push_back(sample_moments(r.fixed_point.slice_at(1.0)).m2);
            picard_vars[1].push_back(sample_moments(r.fixed_point.slice_at(5.0)).m2);
        }
        const double ts[2] = {1.0, 5.0};
        for (int i = 0; i < 2; ++i) {
            const auto mn = sample_moments(nested.x_at(ts[i]));
            const auto mp = sample_moments(picard_vars[i]);
            const double combined =
                std::sqrt(mn.variance_stderr() * mn.variance_stderr() +
                          mp.mean_stderr() * mp.mean_stderr());
            const double gap = std::abs(mn.m2 - mp.mean);
            c.require(gap <= 3.0 * combined,
                      "u=" + fmt(u) + " t=" + fmt(ts[i]) + ": gap " + fmt(gap) +
                          " > 3se=" + fmt(3.0 * combined));
        }
    }
    if (out.pass) out.detail = "6 (u,t) pairs agree within combined 3se";
    return out;
}

// ---------------------------------------------------------------------------
// 5. Picard contraction: successive-iterate path-space distance strictly
//    decreasing for k = 0..4 at u = 0.5. The factorial rate is reported.
// ---------------------------------------------------------------------------
Outcome criterion5() {
    Outcome out;
    Check c{out};
    PicardConfig pc;
    pc.replicas = 10000;
    pc.dt = 0.01;
    pc.horizon = 1.0;
    pc.seed = 505;
    auto law = constant_initial_law(pc);
    const auto kernel = DriftKernel::linear_mean_revert();
    std::vector<double> d;
    for (int k = 0; k < 6; ++k) {
        auto next = picard_map(law, kernel, MixtureWeight(0.5), pc.seed, pc.initial);
        d.push_back(law_distance(next, law, PicardConfig::Distance::pathspace));
        law = std::move(next);
    }
    for (int k = 1; k <= 4; ++k)
        c.require(d[k] < d[k - 1],
                  "d_" + std::to_string(k) + "=" + fmt(d[k]) + " >= d_" +
                      std::to_string(k - 1) + "=" + fmt(d[k - 1]));
    std::string rates;
    for (int k = 1; k <= 5; ++k) rates += (k > 1 ? ", " : "") + fmt(d[k] / d[k - 1]);
    c.note("ratios d_{k+1}/d_k = " + rates);
    return out;
}

// ---------------------------------------------------------------------------
// 6. Generator residual: for the limit pair at u in {0, 1} and three test
//    functions, the residual magnitude halves (+-30%) when dt is halved and
//    N is quadrupled.
// ---------------------------------------------------------------------------
Outcome criterion6() {
    Outcome out;
    Check c{out};
    const auto kernel = DriftKernel::linear_mean_revert();
    const std::vector<TestFunctionC2> gs = {TestFunctionC2::bump(0.0, 4.0),
                                            TestFunctionC2::poly_bump(0.0, 4.0),
                                            TestFunctionC2::bump(1.0, 3.0)};
    auto rms_residual = [&](double u, double dt, std::size_t n, std::uint64_t seed) {
        NestedConfig cfg;
        cfg.depth = (u == 0.0) ? 2 : 30;
        cfg.replicas = n;
        cfg.dt = dt;
        cfg.horizon = 1.0;
        cfg.seed = seed;
        cfg.keep_full_paths = true;
        const auto r = solve_nested_pair(cfg, kernel, MixtureWeight(u));
        const auto joint = pair_measure_path(r);
        const auto marginal = marginal_measure_path(r, 0);
        double acc = 0.0;
        int count = 0;
        for (const auto& g : gs)
            for (double t : {0.5, 1.0}) {
                const double res =
                    generator_residual(joint, marginal, kernel, MixtureWeight(u), g, t);
                acc += res * res;
                ++count;
            }
        return acc / count;
    };
    for (double u : {0.0, 1.0}) {
        // per-seed residuals scatter widely; 12 seeds pin the aggregate ratio
        double base = 0.0, refined = 0.0;
        for (std::uint64_t s = 0; s < 12; ++s) {
            base += rms_residual(u, 0.01, 6000, 600 + s);
            refined += rms_residual(u, 0.005, 24000, 650 + s);
        }
        const double ratio = std::sqrt(refined / base);
        c.require(ratio >= 0.35 && ratio <= 0.65,
                  "u=" + fmt(u) + ": refinement ratio " + fmt(ratio) +
                      " outside [0.35, 0.65]");
        c.note("u=" + fmt(u) + " ratio " + fmt(ratio));
    }
    return out;
}

// ---------------------------------------------------------------------------
// 7. Fluctuation boundedness: the coupled statistic over n in {50,...,400}
//    stays below 1.5x its n=50 value for u in {0, 0.5}.
// ---------------------------------------------------------------------------
Outcome criterion7() {
    Outcome out;
    Check c{out};
    const std::vector<std::size_t> ns = {50, 100, 200, 400};
    for (double u : {0.0, 0.5}) {
        const auto r = fluctuation_study(DriftKernel::linear_mean_revert(), MixtureWeight(u),
                                         ns, 1.0, 0.01, 48, 707);
        for (std::size_t i = 0; i < ns.size(); ++i)
            c.require(r.statistic[i] <= 1.5 * r.statistic[0],
                      "u=" + fmt(u) + " n=" + std::to_string(ns[i]) + ": " +
                          fmt(r.statistic[i]) + " > 1.5 x " + fmt(r.statistic[0]));
        c.note("u=" + fmt(u) + " stats " + fmt(r.statistic[0]) + ".." +
               fmt(r.statistic.back()) + " slope " + fmt(r.log_slope));
    }
    return out;
}

// ---------------------------------------------------------------------------
// 8. Cross-covariance: MC estimate of E[X_s X~_t] at (s,t,u) = (1,2,0.7)
//    within 3 se of the nested quadrature.
// ---------------------------------------------------------------------------
Outcome criterion8() {
    Outcome out;
    Check c{out};
    NestedConfig cfg;
    cfg.depth = 30;
    cfg.replicas = 100000;
    cfg.dt = 0.01;
    cfg.horizon = 2.0;
    cfg.seed = 808;
    cfg.snapshot_times = {1.0, 2.0};
    const auto r = solve_nested_pair(cfg, DriftKernel::linear_mean_revert(), MixtureWeight(0.7));
    const auto xs = r.x_at(1.0);
    const auto xt = r.xt_at(2.0);
    std::vector<double> prod(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) prod[i] = xs[i] * xt[i];
    const auto m = sample_moments(prod);
    const double target = oracle::crosscov(1.0, 2.0, 0.7);
    c.require(std::abs(m.mean - target) <= 3.0 * m.mean_stderr(),
              "|" + fmt(m.mean) + " - " + fmt(target) + "| > 3se=" + fmt(3 * m.mean_stderr()));
    if (out.pass)
        out.detail = "mc " + fmt(m.mean) + " vs quadrature " + fmt(target) + " (3se " +
                     fmt(3 * m.mean_stderr()) + ")";
    return out;
}

// ---------------------------------------------------------------------------
// 9. Estimator consistency on u = 0.6 paths, T = 2000: mean |u_M - 0.6| and
//    mean |u_m - 0.2| below 0.05 over 10 seeds.
// ---------------------------------------------------------------------------
Outcome criterion9() {
    Outcome out;
    Check c{out};
    const auto kernel = DriftKernel::linear_mean_revert();
    double mm_err = 0.0, mod_err = 0.0;
    const int seeds = 10;
    for (int s = 0; s < seeds; ++s) {
        const auto obs =
            synthetic_observation(kernel, MixtureWeight(0.6), 0.01, 2000.0, 900 + s);
        mm_err += std::abs(moments_estimator(obs).estimate - 0.6);
        mod_err += std::abs(modified_estimator(obs).estimate - 0.2);
    }
    mm_err /= seeds;
    mod_err /= seeds;
    c.require(mm_err <= 0.05, "mean |u_M - 0.6| = " + fmt(mm_err) + " > 0.05");
    c.require(mod_err <= 0.05, "mean |u_m - 0.2| = " + fmt(mod_err) + " > 0.05");
    if (out.pass)
        out.detail = "mean |u_M-0.6| = " + fmt(mm_err) + ", mean |u_m-0.2| = " + fmt(mod_err);
    return out;
}

// ---------------------------------------------------------------------------
// 10. Particle filter vs the exact linear filter at u = 0.8, D = 3, N = 5000:
//     conditional mean of X~ within 3 combined se at t in {0.5, 1, 2};
//     pi_t(1) = 1 exactly.
// ---------------------------------------------------------------------------
Outcome criterion10() {
    Outcome out;
    Check c{out};
    const auto kernel = DriftKernel::linear_mean_revert();
    const double u = 0.8;
    const auto obs = synthetic_observation(kernel, MixtureWeight(u), 0.01, 2.0, 1010);
    FilterOptions opt;
    opt.depth = 3;
    opt.replicas = 5000;
    opt.query_stride = 10;
    const auto f = particle_filter(obs, kernel, MixtureWeight(u), opt, 1011);
    const auto kb = kalman_bucy_oracle(obs, u, 3);
    for (double t : {0.5, 1.0, 2.0}) {
        const double got = f.pi("x2", t);
        const double want = kb.conditional_mean(0, t);
        const double band = 3.0 * f.pi_stderr("x2", t);
        c.require(std::abs(got - want) <= band, "t=" + fmt(t) + ": |" + fmt(got) + " - " +
                                                    fmt(want) + "| > " + fmt(band));
        c.require(f.pi("one", t) == 1.0, "pi_t(1) != 1 at t=" + fmt(t));
    }
    if (out.pass) out.detail = "filter tracks the exact filter at 3 query times";
    return out;
}

// ---------------------------------------------------------------------------
// 11. Bessel and kernel unit suite: crossover agreement, taboo kernel vs a
//     brute-force 40x40 matrix exponential, discrete moments vs the
//     terminating hypergeometric series.
// ---------------------------------------------------------------------------
Outcome criterion11() {
    Outcome out;
    Check c{out};
    // (a) series vs asymptotic expansion on [12, 18] to 1e-10 relative
    for (int nu : {0, 1})
        for (double x = 12.0; x <= 18.0; x += 0.25) {
            double err;
            const double series = std::exp(-x) * oracle::detail::bessel_series(nu, x, err);
            const double asym = oracle::detail::bessel_asymptotic_scaled(nu, x, err);
            c.require(std::abs(asym - series) <= 1e-10 * std::abs(series),
                      "bessel crossover nu=" + std::to_string(nu) + " x=" + fmt(x));
        }
    // (b) taboo kernel vs matrix exponential (scaling and squaring, 40x40)
    {
        const int n = 40;
        const double u = 0.7, t = 3.0;
        std::vector<double> q(n * n, 0.0);
        for (int i = 0; i < n; ++i) {
            q[i * n + i] = -1.0;
            if (i + 1 < n) q[i * n + i + 1] = u;
        }
        auto matmul = [n](const std::vector<double>& a, const std::vector<double>& b) {
            std::vector<double> z(n * n, 0.0);
            for (int i = 0; i < n; ++i)
                for (int k = 0; k < n; ++k) {
                    const double v = a[i * n + k];
                    if (v == 0.0) continue;
                    for (int j = 0; j < n; ++j) z[i * n + j] += v * b[k * n + j];
                }
            return z;
        };
        int squarings = 0;
        double scale = t;
        while (scale > 0.5) {
            scale *= 0.5;
            ++squarings;
        }
        std::vector<double> result(n * n, 0.0), term(n * n, 0.0);
        for (int i = 0; i < n; ++i) result[i * n + i] = term[i * n + i] = 1.0;
        for (int j = 1; j < 60; ++j) {
            term = matmul(term, q);
            for (auto& v : term) v *= scale / j;
            for (int i = 0; i < n * n; ++i) result[i] += term[i];
        }
        for (int s = 0; s < squarings; ++s) result = matmul(result, result);
        for (int k = 0; k < n; ++k)
            c.require(std::abs(oracle::taboo_kernel(k, t, u) - result[k]) <= 1e-8,
                      "taboo kernel k=" + std::to_string(k));
    }
    // (c) discrete second moment vs sum_k a^{2k} 2F1(-k,-k,1; u^2(1-a)^2/a^2)
    for (double a : {0.4, 0.5})
        for (double uu : {0.0, 0.7, 1.0})
            for (int n = 1; n <= 12; ++n) {
                const double w = uu * uu * (1.0 - a) * (1.0 - a) / (a * a);
                double expect = 0.0;
                for (int k = 0; k < n; ++k) {
                    double sum = 1.0, termv = 1.0;
                    for (int j = 1; j <= k; ++j) {
                        const double p = static_cast<double>(k - j + 1);
                        termv *= (p * p) * w / (static_cast<double>(j) * j);
                        sum += termv;
                    }
                    expect += std::pow(a, 2.0 * k) * sum;
                }
                c.require(std::abs(oracle::discrete_second_moment(n, a, uu) - expect) <= 1e-10,
                          "discrete moment n=" + std::to_string(n) + " a=" + fmt(a) +
                              " u=" + fmt(uu));
            }
    if (out.pass) out.detail = "crossover 1e-10, taboo 1e-8, hypergeometric 1e-10";
    return out;
}

// ---------------------------------------------------------------------------
// 12. Determinism: replaying a RunManifest reproduces byte-identical outputs.
// ---------------------------------------------------------------------------
Outcome criterion12() {
    Outcome out;
    Check c{out};
    namespace fs = std::filesystem;
    const auto scratch = fs::temp_directory_path() / "dcsde_acceptance";
    fs::remove_all(scratch);

    auto check_config = [&](const std::string& name, const std::string& text) {
        auto cfg = Config::parse_string(text, name);
        cfg.set("out", (scratch / name).string());
        const auto first = runner::run(cfg);
        const auto second = runner::run(cfg, (scratch / (name + "_again")).string());
        c.require(first.outputs.size() == second.outputs.size(),
                  name + ": artifact lists differ");
        for (std::size_t i = 0; i < first.outputs.size(); ++i)
            c.require(first.outputs[i] == second.outputs[i],
                      name + ": " + first.outputs[i].first + " not byte-identical");
        const auto report = runner::replay((scratch / name / "manifest.json").string(),
                                           (scratch / (name + "_replay")).string());
        c.require(report.ok, name + ": manifest replay mismatch");
    };
    check_config("chain",
                 "experiment = simulate-chain\nseed = 12\n[chain]\nn = 2000\nu = 0.5\n"
                 "dt = 0.01\nhorizon = 1.0\ninitial = point 0\n"
                 "kernel = linear_mean_revert\n");
    check_config("estimate",
                 "experiment = estimate-u\nseed = 13\nreplications = 2\n[estimate]\n"
                 "method = all\ninput = synthetic\nu = 0.6\nhorizon = 20\ndt = 0.01\n"
                 "obs_seed = 3\ndepth = 2\nparticles = 200\ncandidates = 0, 0.3, 0.6, 1\n");
    if (out.pass) out.detail = "two experiments replayed byte-identically";
    return out;
}

} // namespace

int main(int argc, char** argv) {
    std::set<int> selected;
    for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"gaussian variance at u=0 (3 times, 3se, dt/2 check)", criterion1},
        {"stationary dichotomy at T=15 (2%) and u=1 at t=5 (3se)", criterion2},
        {"explosive O(sqrt(t)) scaling of the u=1 variance", criterion3},
        {"route equivalence: picard vs nested marginal variance", criterion4},
        {"picard contraction: d_k strictly decreasing, k=0..4", criterion5},
        {"generator residual halves under dt/2 + 4N refinement", criterion6},
        {"fluctuation statistic bounded over n in {50..400}", criterion7},
        {"cross-covariance E[X_1 X~_2] at u=0.7 vs quadrature", criterion8},
        {"estimator consistency: u_M and u_m on u=0.6 paths", criterion9},
        {"particle filter vs kalman-bucy oracle at u=0.8", criterion10},
        {"bessel / taboo kernel / hypergeometric unit suite", criterion11},
        {"manifest replay determinism", criterion12},
    };

    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int num = static_cast<int>(i + 1);
        if (!selected.empty() && !selected.count(num)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome out;
        try {
            out = criteria[i].second();
        } catch (const std::exception& e) {
            out.pass = false;
            out.detail = std::string("exception: ") + e.what();
        }
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("[%s] criterion %2d: %s (%.1fs)%s%s\n", out.pass ? "PASS" : "FAIL", num,
                    criteria[i].first.c_str(), secs, out.detail.empty() ? "" : " -- ",
                    out.detail.c_str());
        std::fflush(stdout);
        failures += out.pass ? 0 : 1;
    }
    if (selected.empty())
        std::printf("%s\n", failures == 0 ? "ALL ACCEPTANCE CRITERIA PASSED"
                                          : "ACCEPTANCE FAILURES PRESENT");
    return failures;
}

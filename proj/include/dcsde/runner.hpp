#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dcsde/base.hpp"
#include "dcsde/chain.hpp"
#include "dcsde/config.hpp"
#include "dcsde/inference.hpp"
#include "dcsde/io.hpp"
#include "dcsde/limit.hpp"
#include "dcsde/measures.hpp"
#include "dcsde/oracle.hpp"
#include "dcsde/svg.hpp"

namespace dcsde::runner {

inline const char* kArtifactVersion = "1.0.0";

inline const std::vector<std::string>& experiment_kinds() {
    static const std::vector<std::string> kinds = {
        "simulate-chain", "solve-limit",  "variance-table", "convergence-study",
        "estimate-u",     "filter-study", "discrete-time"};
    return kinds;
}

// ---------------------------------------------------------------------------
// Config field parsing shared by validate() and run().
// ---------------------------------------------------------------------------

inline DriftKernel parse_kernel(const std::string& text) {
    std::istringstream in(text);
    std::string kind;
    in >> kind;
    if (kind == "linear_mean_revert") return DriftKernel::linear_mean_revert();
    if (kind == "linear_repulsive") return DriftKernel::linear_repulsive();
    if (kind == "affine") {
        double ax, ay, c;
        if (!(in >> ax >> ay >> c))
            throw ConfigError("kernel `affine` needs three coefficients: " + text);
        return DriftKernel::affine(ax, ay, c);
    }
    if (kind == "tabulated") {
        std::string path;
        if (!(in >> path)) throw ConfigError("kernel `tabulated` needs a CSV path");
        return DriftKernel::load_tabulated(path);
    }
    throw ConfigError("unknown kernel kind: " + kind);
}

inline InitialLaw parse_initial(const std::string& text) {
    std::istringstream in(text);
    std::string kind;
    in >> kind;
    if (kind == "point") {
        double c = 0.0;
        in >> c;
        return PointInitial{c};
    }
    if (kind == "gaussian") {
        double m, v;
        if (!(in >> m >> v)) throw ConfigError("initial `gaussian` needs mean and variance");
        if (v < 0.0) throw ConfigError("initial law variance must be >= 0");
        return GaussianInitial{m, v};
    }
    if (kind == "file") {
        std::string path;
        if (!(in >> path)) throw ConfigError("initial `file` needs a path");
        return FileInitial::load(path);
    }
    throw ConfigError("unknown initial law: " + text);
}

inline BoundaryClosure parse_closure(const std::string& s) {
    if (s == "independent_bm") return BoundaryClosure::independent_bm;
    if (s == "mckean_vlasov") return BoundaryClosure::mckean_vlasov;
    if (s == "frozen_law") return BoundaryClosure::frozen_law;
    throw ConfigError("unknown boundary closure: " + s);
}

// ---------------------------------------------------------------------------
// validate: dry-run schema and resource check, diagnostics returned (never
// thrown).
// ---------------------------------------------------------------------------

inline std::vector<std::string> validate(const Config& cfg) {
    std::vector<std::string> d;
    auto need = [&](const std::string& key, const char* why) {
        if (!cfg.has(key)) {
            d.push_back("missing key `" + key + "` (" + why + ")");
            return false;
        }
        return true;
    };
    auto check_real = [&](const std::string& key, double lo, double hi) {
        if (!cfg.has(key)) return;
        try {
            const double v = cfg.get_real(key);
            if (v < lo || v > hi)
                d.push_back("key `" + key + "` out of range [" + format_number(lo) + ", " +
                            format_number(hi) + "]");
        } catch (const ConfigError& e) {
            d.push_back(e.what());
        }
    };
    auto check_grid = [&](const std::string& dt_key, const std::string& horizon_key) {
        if (!cfg.has(dt_key) || !cfg.has(horizon_key)) return;
        try {
            const double dt = cfg.get_real(dt_key);
            const double horizon = cfg.get_real(horizon_key);
            if (dt > horizon) {
                d.push_back("`" + dt_key + "` exceeds `" + horizon_key + "`");
                return;
            }
            (void)TimeGrid::from_horizon(dt, horizon);
        } catch (const std::exception& e) {
            d.push_back(e.what());
        }
    };
    auto check_kernel = [&](const std::string& key) {
        if (!cfg.has(key)) return;
        try {
            (void)parse_kernel(cfg.get_string(key));
        } catch (const std::exception& e) {
            d.push_back(e.what());
        }
    };
    auto check_initial = [&](const std::string& key) {
        if (!cfg.has(key)) return;
        try {
            (void)parse_initial(cfg.get_string(key));
        } catch (const std::exception& e) {
            d.push_back(e.what());
        }
    };

    if (!need("experiment", "one of the experiment kinds")) {
        d.push_back("missing key `out` (output directory)");
        return d;
    }
    const std::string kind = cfg.get_string("experiment");
    bool known = false;
    for (const auto& k : experiment_kinds()) known |= (k == kind);
    if (!known) {
        d.push_back("unknown experiment kind: " + kind);
        return d;
    }
    need("out", "output directory");

    if (kind == "simulate-chain") {
        need("chain.n", "particle count");
        need("chain.u", "mixture weight");
        need("chain.horizon", "time horizon");
        check_real("chain.u", 0.0, 1.0);
        check_grid("chain.dt", "chain.horizon");
        check_kernel("chain.kernel");
        check_initial("chain.initial");
        if (cfg.has("chain.n") && cfg.get_int("chain.n", 1) < 1)
            d.push_back("`chain.n` must be >= 1");
    } else if (kind == "solve-limit") {
        need("limit.method", "nested or picard");
        need("limit.u", "mixture weight");
        need("limit.horizon", "time horizon");
        check_real("limit.u", 0.0, 1.0);
        check_grid("limit.dt", "limit.horizon");
        check_kernel("limit.kernel");
        check_initial("limit.initial");
        if (cfg.has("limit.method")) {
            const std::string m = cfg.get_string("limit.method");
            if (m != "nested" && m != "picard")
                d.push_back("`limit.method` must be nested or picard");
        }
        if (cfg.has("limit.closure")) {
            try {
                if (parse_closure(cfg.get_string("limit.closure")) ==
                        BoundaryClosure::frozen_law &&
                    cfg.has("limit.frozen_law") &&
                    !std::filesystem::exists(cfg.get_string("limit.frozen_law")))
                    d.push_back("frozen-law ensemble file does not exist: " +
                                cfg.get_string("limit.frozen_law"));
                if (parse_closure(cfg.get_string("limit.closure")) ==
                        BoundaryClosure::frozen_law &&
                    !cfg.has("limit.frozen_law"))
                    d.push_back("missing key `limit.frozen_law` (law ensemble for the closure)");
            } catch (const std::exception& e) {
                d.push_back(e.what());
            }
        }
    } else if (kind == "variance-table") {
        need("variance_table.u_values", "comma-separated mixture weights");
        need("variance_table.t_max", "curve horizon");
        if (cfg.has("variance_table.u_values")) {
            try {
                for (double u : cfg.get_reals("variance_table.u_values"))
                    if (u < 0.0 || u > 1.0)
                        d.push_back("`variance_table.u_values` entries must lie in [0,1]");
            } catch (const std::exception& e) {
                d.push_back(e.what());
            }
        }
    } else if (kind == "convergence-study") {
        need("convergence.n_values", "chain sizes");
        need("convergence.u_values", "mixture weights");
        check_grid("convergence.dt", "convergence.horizon");
    } else if (kind == "estimate-u") {
        need("estimate.input", "synthetic, a CSV path, or an ensemble path");
        if (cfg.has("estimate.input")) {
            const std::string input = cfg.get_string("estimate.input");
            if (input == "synthetic") {
                need("estimate.u", "true mixture weight for the synthetic path");
                need("estimate.horizon", "synthetic horizon");
                check_real("estimate.u", 0.0, 1.0);
                check_grid("estimate.dt", "estimate.horizon");
            } else if (!std::filesystem::exists(input)) {
                d.push_back("estimate input file does not exist: " + input);
            }
        }
        if (cfg.has("estimate.method")) {
            const std::string m = cfg.get_string("estimate.method");
            if (m != "mm" && m != "modified" && m != "cmle" && m != "all")
                d.push_back("`estimate.method` must be mm, modified, cmle, or all");
        }
    } else if (kind == "filter-study") {
        need("filter.u", "mixture weight");
        need("filter.horizon", "observation horizon");
        check_real("filter.u", 0.0, 1.0);
        check_grid("filter.dt", "filter.horizon");
    } else if (kind == "discrete-time") {
        need("discrete.a", "autoregression coefficient in (0,1)");
        need("discrete.u", "mixture weight");
        if (cfg.has("discrete.a")) {
            try {
                const double a = cfg.get_real("discrete.a");
                if (!(a > 0.0 && a < 1.0)) d.push_back("`discrete.a` must lie in (0,1)");
            } catch (const std::exception& e) {
                d.push_back(e.what());
            }
        }
        check_real("discrete.u", 0.0, 1.0);
    }
    return d;
}

// ---------------------------------------------------------------------------
// RunManifest: config snapshot plus checksums of every artifact. Replaying a
// manifest must reproduce the numeric outputs byte for byte.
// ---------------------------------------------------------------------------

struct RunManifest {
    std::string experiment;
    std::uint64_t seed = 0;
    std::map<std::string, std::string> config;
    std::vector<std::pair<std::string, std::string>> outputs; // (file, sha256)
    double wall_clock_seconds = 0.0;

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["artifact"] = "dcsde";
        j["version"] = kArtifactVersion;
        j["experiment"] = experiment;
        j["seed"] = seed;
        j["config"] = config;
        j["wall_clock_seconds"] = wall_clock_seconds;
        auto arr = nlohmann::json::array();
        for (const auto& [file, digest] : outputs)
            arr.push_back({{"file", file}, {"sha256", digest}});
        j["outputs"] = arr;
        return j;
    }

    static RunManifest from_json(const nlohmann::json& j) {
        RunManifest m;
        m.experiment = j.at("experiment").get<std::string>();
        m.seed = j.at("seed").get<std::uint64_t>();
        m.config = j.at("config").get<std::map<std::string, std::string>>();
        m.wall_clock_seconds = j.value("wall_clock_seconds", 0.0);
        for (const auto& o : j.at("outputs"))
            m.outputs.emplace_back(o.at("file").get<std::string>(),
                                   o.at("sha256").get<std::string>());
        return m;
    }
};

namespace detail {

class ArtifactCollector {
  public:
    explicit ArtifactCollector(std::filesystem::path dir) : dir_(std::move(dir)) {
        std::filesystem::create_directories(dir_);
    }
    std::string path(const std::string& name) const { return (dir_ / name).string(); }
    void add(const std::string& name) { names_.push_back(name); }
    std::vector<std::pair<std::string, std::string>> checksums() const {
        std::vector<std::pair<std::string, std::string>> out;
        for (const auto& n : names_) out.emplace_back(n, sha256_file(path(n)));
        return out;
    }

  private:
    std::filesystem::path dir_;
    std::vector<std::string> names_;
};

inline void write_moment_csv(CsvWriter& w, const TimeGrid& grid,
                             const std::function<std::vector<double>(std::size_t)>& slice,
                             std::size_t max_rows = 201) {
    const std::size_t stride = std::max<std::size_t>(1, grid.steps / (max_rows - 1));
    auto emit = [&](std::size_t j) {
        const auto xs = slice(j);
        const auto m = sample_moments(xs);
        const double row[4] = {grid.time(j), m.mean, m.m2, m.variance_stderr()};
        w.row(row);
    };
    for (std::size_t j = 0; j < grid.steps; j += stride) emit(j);
    emit(grid.steps); // always close the table at the horizon
}

inline ObservationPath load_observation(const std::string& input) {
    if (input.size() > 4 && input.substr(input.size() - 4) == ".bin") {
        const auto e = load_ensemble(input);
        const auto p = path_ensemble_from(e);
        ObservationPath obs;
        obs.grid = p.grid;
        obs.values.assign(p.path(0).begin(), p.path(0).end());
        obs.provenance = input + " (particle 0)";
        return obs;
    }
    const auto [t, v] = read_series_csv(input);
    return observation_from_series(t, v, input);
}

inline nlohmann::json estimator_json(const EstimatorResult& r) {
    nlohmann::json j;
    j["estimate"] = r.estimate;
    j["raw"] = r.raw;
    j["method"] = r.method;
    j["flags"] = {{"clamped_low", r.clamped_low}, {"clamped_high", r.clamped_high}};
    j["statistics"] = {{"avg_square", r.avg_square},
                       {"terminal_square", r.terminal_square},
                       {"horizon", r.horizon}};
    j["diagnostics"] = r.diagnostics;
    return j;
}

} // namespace detail

// ---------------------------------------------------------------------------
// run: execute one experiment, write artifacts + manifest, return manifest.
// ---------------------------------------------------------------------------

inline RunManifest run(const Config& cfg, const std::string& out_override = {}) {
    {
        const auto diagnostics = validate(cfg);
        if (!diagnostics.empty()) {
            std::string msg = "invalid configuration:";
            for (const auto& d : diagnostics) msg += "\n  - " + d;
            throw ConfigError(msg);
        }
    }
    const auto t0 = std::chrono::steady_clock::now();
    const std::string kind = cfg.get_string("experiment");
    const auto seed = static_cast<std::uint64_t>(cfg.get_int("seed", 0));
    const auto threads = static_cast<unsigned>(cfg.get_int("threads", 0));
    const std::string out_dir = out_override.empty() ? cfg.get_string("out") : out_override;
    detail::ArtifactCollector art(out_dir);

    if (kind == "simulate-chain") {
        ChainConfig cc;
        cc.n = static_cast<std::size_t>(cfg.get_int("chain.n"));
        cc.u = MixtureWeight(cfg.get_real("chain.u"));
        cc.dt = cfg.get_real("chain.dt", 0.01);
        cc.horizon = cfg.get_real("chain.horizon");
        cc.seed = seed;
        cc.initial = parse_initial(cfg.get_string("chain.initial", "point 0"));
        cc.exclude_self = cfg.get_bool("chain.exclude_self", false);
        cc.threads = threads;
        const auto kernel = parse_kernel(cfg.get_string("chain.kernel", "linear_mean_revert"));
        const auto ens = simulate_chain(cc, kernel);

        save_ensemble(ens, art.path("ensemble.bin"));
        art.add("ensemble.bin");
        {
            CsvWriter w(art.path("moments.csv"), "t,mean,variance,stderr");
            detail::write_moment_csv(w, ens.grid, [&](std::size_t j) { return ens.slice(j); });
            art.add("moments.csv");
        }
        if (cfg.get_bool("chain.export_paths", false)) {
            export_csv(ens, art.path("paths.csv"));
            art.add("paths.csv");
        }
        // variance plot from the rows of moments.csv
        SvgSeries var_series{"sample variance", {}, {}, "#1f77b4", false};
        const std::size_t stride = std::max<std::size_t>(1, ens.grid.steps / 200);
        for (std::size_t j = 0; j < ens.grid.size(); j += stride) {
            var_series.x.push_back(ens.grid.time(j));
            var_series.y.push_back(sample_moments(ens.slice(j)).m2);
        }
        write_svg_plot(art.path("moments.svg"), "chain sample variance", "t", "variance",
                       {var_series});
        art.add("moments.svg");
    } else if (kind == "solve-limit") {
        const std::string method = cfg.get_string("limit.method");
        const auto kernel = parse_kernel(cfg.get_string("limit.kernel", "linear_mean_revert"));
        const MixtureWeight u(cfg.get_real("limit.u"));
        const double dt = cfg.get_real("limit.dt", 0.01);
        const double horizon = cfg.get_real("limit.horizon");
        const auto initial = parse_initial(cfg.get_string("limit.initial", "point 0"));

        LawEnsemble law;
        if (method == "picard") {
            PicardConfig pc;
            pc.replicas = static_cast<std::size_t>(cfg.get_int("limit.replicas", 10000));
            pc.dt = dt;
            pc.horizon = horizon;
            pc.seed = seed;
            pc.initial = initial;
            pc.tolerance = cfg.get_real("limit.tolerance", 1e-3);
            pc.max_iter = static_cast<std::size_t>(cfg.get_int("limit.max_iter", 100));
            pc.threads = threads;
            auto solved = picard_solve(pc, kernel, u);
            law = std::move(solved.fixed_point);
            if (cfg.get_bool("limit.trace", true)) {
                CsvWriter w(art.path("trace.csv"), "iter,distance");
                for (std::size_t k = 0; k < solved.trace.size(); ++k) {
                    const double row[2] = {static_cast<double>(k), solved.trace[k]};
                    w.row(row);
                }
                art.add("trace.csv");
            }
        } else {
            NestedConfig nc;
            nc.depth = static_cast<std::size_t>(cfg.get_int("limit.depth", 30));
            nc.replicas = static_cast<std::size_t>(cfg.get_int("limit.replicas", 10000));
            nc.closure = parse_closure(cfg.get_string("limit.closure", "independent_bm"));
            nc.dt = dt;
            nc.horizon = horizon;
            nc.seed = seed;
            nc.initial = initial;
            nc.threads = threads;
            nc.keep_full_paths = true;
            NestedPairResult r;
            if (nc.closure == BoundaryClosure::frozen_law) {
                const auto frozen = law_ensemble_from(
                    load_ensemble(cfg.get_string("limit.frozen_law")));
                r = solve_nested_pair(nc, kernel, u, MarginalLaw::none(), frozen);
            } else {
                r = solve_nested_pair(nc, kernel, u);
            }
            law.grid = r.grid;
            law.replicas = r.replicas;
            law.generation = 0;
            law.seed = seed;
            law.provenance = "nested";
            law.data = r.levels[0];
        }
        save_law(law, art.path("law.bin"));
        art.add("law.bin");
        {
            CsvWriter w(art.path("moments.csv"), "t,mean,variance,stderr");
            detail::write_moment_csv(w, law.grid, [&](std::size_t j) { return law.slice(j); });
            art.add("moments.csv");
        }
        SvgSeries var_series{"variance (" + method + ")", {}, {}, "#1f77b4", false};
        const std::size_t stride = std::max<std::size_t>(1, law.grid.steps / 200);
        for (std::size_t j = 0; j < law.grid.size(); j += stride) {
            var_series.x.push_back(law.grid.time(j));
            var_series.y.push_back(sample_moments(law.slice(j)).m2);
        }
        write_svg_plot(art.path("moments.svg"), "limit-law variance", "t", "variance",
                       {var_series});
        art.add("moments.svg");
    } else if (kind == "variance-table") {
        const auto us = cfg.get_reals("variance_table.u_values");
        const double t_max = cfg.get_real("variance_table.t_max");
        const auto points = static_cast<std::size_t>(cfg.get_int("variance_table.t_points", 50));
        const bool mc = cfg.get_bool("variance_table.monte_carlo", false);
        const auto mc_replicas =
            static_cast<std::size_t>(cfg.get_int("variance_table.mc_replicas", 20000));

        std::vector<double> times;
        for (std::size_t i = 1; i <= points; ++i)
            times.push_back(t_max * static_cast<double>(i) / static_cast<double>(points));

        CsvWriter w(art.path("variance_table.csv"), "t,u,variance,source");
        std::vector<SvgSeries> series;
        const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b"};
        for (std::size_t ui = 0; ui < us.size(); ++ui) {
            const double u = us[ui];
            const auto curve = oracle::variance_curve(u, times);
            SvgSeries s{"quadrature u=" + format_number(u), times, curve.value,
                        colors[ui % 5], false};
            for (std::size_t i = 0; i < times.size(); ++i) {
                const double row[3] = {times[i], u, curve.value[i]};
                w.raw_row(format_number(row[0]) + "," + format_number(row[1]) + "," +
                          format_number(row[2]) + ",quadrature");
            }
            series.push_back(std::move(s));
            if (u == 0.0 || u == 1.0) {
                for (std::size_t i = 0; i < times.size(); ++i) {
                    const double t = times[i];
                    const double closed =
                        u == 0.0 ? (1.0 - std::exp(-2.0 * t)) / 2.0
                                 : t * (oracle::bessel_i_scaled(0, 2.0 * t) +
                                        oracle::bessel_i_scaled(1, 2.0 * t));
                    w.raw_row(format_number(t) + "," + format_number(u) + "," +
                              format_number(closed) + ",closed_form");
                }
            }
            if (mc) {
                NestedConfig nc;
                nc.depth = static_cast<std::size_t>(cfg.get_int("variance_table.mc_depth", 30));
                nc.replicas = mc_replicas;
                nc.dt = cfg.get_real("variance_table.mc_dt", 0.01);
                nc.horizon = t_max;
                nc.seed = seed + ui;
                nc.threads = threads;
                nc.snapshot_times = times;
                const auto r =
                    solve_nested_pair(nc, DriftKernel::linear_mean_revert(), MixtureWeight(u));
                SvgSeries ms{"monte carlo u=" + format_number(u), {}, {}, colors[ui % 5], true};
                for (double t : times) {
                    const double v = sample_moments(r.x_at(t)).m2;
                    w.raw_row(format_number(t) + "," + format_number(u) + "," +
                              format_number(v) + ",monte_carlo");
                    ms.x.push_back(t);
                    ms.y.push_back(v);
                }
                series.push_back(std::move(ms));
            }
        }
        art.add("variance_table.csv");
        write_svg_plot(art.path("variance_table.svg"), "Var(X_t) by mixture weight", "t",
                       "variance", series);
        art.add("variance_table.svg");
    } else if (kind == "convergence-study") {
        std::vector<std::size_t> ns;
        for (double v : cfg.get_reals("convergence.n_values"))
            ns.push_back(static_cast<std::size_t>(v));
        const auto us = cfg.get_reals("convergence.u_values");
        const double horizon = cfg.get_real("convergence.horizon", 1.0);
        const double dt = cfg.get_real("convergence.dt", 0.01);
        const auto reps = static_cast<std::size_t>(cfg.get_int("replications", 32));
        const auto kernel =
            parse_kernel(cfg.get_string("convergence.kernel", "linear_mean_revert"));

        CsvWriter w(art.path("convergence.csv"), "u,n,statistic");
        CsvWriter verdicts(art.path("verdicts.csv"), "u,log_slope,bounded");
        std::vector<SvgSeries> series;
        const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c"};
        for (std::size_t ui = 0; ui < us.size(); ++ui) {
            const auto r = fluctuation_study(kernel, MixtureWeight(us[ui]), ns, horizon, dt,
                                             reps, seed);
            SvgSeries s{"u=" + format_number(us[ui]), {}, {}, colors[ui % 3], false};
            for (std::size_t i = 0; i < ns.size(); ++i) {
                const double row[3] = {us[ui], static_cast<double>(ns[i]), r.statistic[i]};
                w.row(row);
                s.x.push_back(static_cast<double>(ns[i]));
                s.y.push_back(r.statistic[i]);
            }
            const double vrow[3] = {us[ui], r.log_slope, r.bounded ? 1.0 : 0.0};
            verdicts.row(vrow);
            series.push_back(std::move(s));
        }
        art.add("convergence.csv");
        art.add("verdicts.csv");
        write_svg_plot(art.path("convergence.svg"),
                       "coupled fluctuation statistic vs chain size", "n",
                       "(1/sqrt(n)) sum E[sup |X - Xbar|]", series);
        art.add("convergence.svg");
    } else if (kind == "estimate-u") {
        const std::string method = cfg.get_string("estimate.method", "all");
        const std::string input = cfg.get_string("estimate.input");
        const auto reps = static_cast<std::size_t>(cfg.get_int("replications", 1));
        const auto kernel =
            parse_kernel(cfg.get_string("estimate.kernel", "linear_mean_revert"));

        nlohmann::json out_json;
        out_json["experiment"] = "estimate-u";
        out_json["input"] = input;
        out_json["seed"] = seed;
        auto rep_array = nlohmann::json::array();
        std::map<std::string, double> sums;
        std::optional<FilterResult> last_filter;

        for (std::size_t rep = 0; rep < reps; ++rep) {
            ObservationPath obs;
            if (input == "synthetic") {
                // obs_depth truncates the generating ladder; estimate.depth is
                // the (much shallower) hidden depth of the filter
                obs = synthetic_observation(
                    kernel, MixtureWeight(cfg.get_real("estimate.u")),
                    cfg.get_real("estimate.dt", 0.01), cfg.get_real("estimate.horizon"),
                    static_cast<std::uint64_t>(cfg.get_int("estimate.obs_seed", 1)) + rep,
                    static_cast<std::size_t>(cfg.get_int("estimate.obs_depth", 30)));
            } else {
                obs = detail::load_observation(input);
            }
            nlohmann::json rep_json;
            rep_json["replication"] = rep;
            if (method == "mm" || method == "all") {
                const auto r = moments_estimator(obs);
                rep_json["mm"] = detail::estimator_json(r);
                sums["mm"] += r.estimate;
            }
            if (method == "modified" || method == "all") {
                const auto r = modified_estimator(obs);
                rep_json["modified"] = detail::estimator_json(r);
                sums["modified"] += r.estimate;
            }
            if (method == "cmle" || method == "all") {
                CmleOptions copt;
                if (cfg.has("estimate.candidates"))
                    copt.candidates = cfg.get_reals("estimate.candidates");
                copt.filter.depth =
                    static_cast<std::size_t>(cfg.get_int("estimate.depth", 3));
                copt.filter.replicas =
                    static_cast<std::size_t>(cfg.get_int("estimate.particles", 1000));
                copt.filter.resample = cfg.get_bool("estimate.resample", false);
                copt.filter.threads = threads;
                const auto r = conditional_mle(obs, kernel, copt, seed + rep);
                rep_json["cmle"] = detail::estimator_json(r);
                sums["cmle"] += r.estimate;
                // ESS trace of the filter at the self-consistent candidate
                FilterOptions fopt = copt.filter;
                fopt.query_stride = std::max<std::size_t>(1, obs.grid.steps / 200);
                last_filter = particle_filter(
                    obs, kernel,
                    MixtureWeight(r.diagnostics.at("self_consistent_candidate")), fopt,
                    seed + rep);
            }
            rep_array.push_back(std::move(rep_json));
        }
        out_json["replications"] = rep_array;
        for (const auto& [name, total] : sums)
            out_json["mean_estimate"][name] = total / static_cast<double>(reps);
        {
            std::ofstream out(art.path("estimate.json"));
            out << out_json.dump(2) << "\n";
            art.add("estimate.json");
        }
        if (last_filter) {
            CsvWriter w(art.path("ess.csv"), "t,ess");
            for (std::size_t q = 0; q < last_filter->query_times.size(); ++q) {
                const double row[2] = {last_filter->query_times[q], last_filter->ess[q]};
                w.row(row);
            }
            art.add("ess.csv");
        }
    } else if (kind == "filter-study") {
        const double u = cfg.get_real("filter.u");
        const auto kernel =
            parse_kernel(cfg.get_string("filter.kernel", "linear_mean_revert"));
        const auto obs = synthetic_observation(
            kernel, MixtureWeight(u), cfg.get_real("filter.dt", 0.01),
            cfg.get_real("filter.horizon"),
            static_cast<std::uint64_t>(cfg.get_int("filter.obs_seed", 1)),
            static_cast<std::size_t>(cfg.get_int("filter.obs_depth", 30)));

        FilterOptions opt;
        opt.depth = static_cast<std::size_t>(cfg.get_int("filter.depth", 3));
        opt.replicas = static_cast<std::size_t>(cfg.get_int("filter.particles", 5000));
        opt.query_stride = std::max<std::size_t>(1, obs.grid.steps / 200);
        opt.threads = threads;
        const double candidate = cfg.get_real("filter.candidate", u);
        const auto f = particle_filter(obs, kernel, MixtureWeight(candidate), opt, seed);
        const auto kb = kalman_bucy_oracle(obs, candidate, opt.depth);

        CsvWriter w(art.path("filter.csv"), "quantity,t,value,stderr");
        SvgSeries fs{"particle filter", {}, {}, "#1f77b4", false};
        SvgSeries ks{"kalman-bucy", {}, {}, "#d62728", false};
        for (std::size_t q = 0; q < f.query_times.size(); ++q) {
            const double t = f.query_times[q];
            const double fv = f.estimates[q * f.registered.size() + f.function_index("x2")];
            const double fe = f.stderrs[q * f.registered.size() + f.function_index("x2")];
            w.raw_row("filter_mean_x2," + format_number(t) + "," + format_number(fv) + "," +
                      format_number(fe));
            const double kv = kb.conditional_mean(0, t);
            w.raw_row("kalman_mean_x2," + format_number(t) + "," + format_number(kv) + ",0");
            w.raw_row("kalman_var_x2," + format_number(t) + "," +
                      format_number(kb.conditional_variance(0, t)) + ",0");
            w.raw_row("ess," + format_number(t) + "," + format_number(f.ess[q]) + ",0");
            fs.x.push_back(t);
            fs.y.push_back(fv);
            ks.x.push_back(t);
            ks.y.push_back(kv);
        }
        art.add("filter.csv");
        {
            CsvWriter we(art.path("ess.csv"), "t,ess");
            for (std::size_t q = 0; q < f.query_times.size(); ++q) {
                const double row[2] = {f.query_times[q], f.ess[q]};
                we.row(row);
            }
            art.add("ess.csv");
        }
        write_svg_plot(art.path("filter.svg"), "conditional mean of the tail particle", "t",
                       "E[X~_t | F^X_t]", {fs, ks});
        art.add("filter.svg");
    } else if (kind == "discrete-time") {
        const int n_max = static_cast<int>(cfg.get_int("discrete.n_max", 12));
        const double a = cfg.get_real("discrete.a");
        const double u = cfg.get_real("discrete.u");
        const auto replicas =
            static_cast<std::size_t>(cfg.get_int("discrete.replicas", 200000));

        CsvWriter w(art.path("discrete.csv"), "n,exact,simulated,stderr");
        SvgSeries exact_s{"exact", {}, {}, "#1f77b4", false};
        SvgSeries sim_s{"simulated", {}, {}, "#d62728", true};
        for (int n = 1; n <= n_max; ++n) {
            const double exact = oracle::discrete_second_moment(n, a, u);
            const double sim = oracle::simulate_discrete(n, a, u, replicas, seed + n);
            const double se = exact * std::sqrt(2.0 / static_cast<double>(replicas));
            const double row[4] = {static_cast<double>(n), exact, sim, se};
            w.row(row);
            exact_s.x.push_back(n);
            exact_s.y.push_back(exact);
            sim_s.x.push_back(n);
            sim_s.y.push_back(sim);
        }
        art.add("discrete.csv");
        write_svg_plot(art.path("discrete.svg"), "discrete-time second moment", "n",
                       "E[X_n^2]", {exact_s, sim_s});
        art.add("discrete.svg");
    }

    RunManifest manifest;
    manifest.experiment = kind;
    manifest.seed = seed;
    manifest.config = cfg.entries();
    manifest.outputs = art.checksums();
    manifest.wall_clock_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    {
        std::ofstream out(art.path("manifest.json"));
        out << manifest.to_json().dump(2) << "\n";
    }
    return manifest;
}

// ---------------------------------------------------------------------------
// replay: re-run a manifest's config into a scratch directory and compare
// artifact checksums.
// ---------------------------------------------------------------------------

struct ReplayReport {
    bool ok = true;
    std::vector<std::string> mismatches;
};

inline ReplayReport replay(const std::string& manifest_path, const std::string& scratch_dir) {
    std::ifstream in(manifest_path);
    if (!in) throw ConfigError("cannot open manifest: " + manifest_path);
    nlohmann::json j;
    in >> j;
    const auto manifest = RunManifest::from_json(j);

    Config cfg;
    for (const auto& [k, v] : manifest.config) cfg.set(k, v);
    const auto rerun = run(cfg, scratch_dir);

    ReplayReport report;
    std::map<std::string, std::string> fresh;
    for (const auto& [file, digest] : rerun.outputs) fresh[file] = digest;
    for (const auto& [file, digest] : manifest.outputs) {
        const auto it = fresh.find(file);
        if (it == fresh.end()) {
            report.ok = false;
            report.mismatches.push_back(file + ": missing from replay");
        } else if (it->second != digest) {
            report.ok = false;
            report.mismatches.push_back(file + ": checksum changed");
        }
    }
    return report;
}

} // namespace dcsde::runner

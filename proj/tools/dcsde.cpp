// Command-line runner for directed-chain SDE experiments.

#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dcsde/config.hpp"
#include "dcsde/runner.hpp"

namespace {

struct GlobalArgs {
    std::string config_path;
    std::vector<std::string> overrides;
    long long seed = -1;
    std::string out;
    int threads = -1;
};

dcsde::Config assemble_config(const GlobalArgs& args, const std::string& experiment) {
    dcsde::Config cfg = args.config_path.empty()
                            ? dcsde::Config()
                            : dcsde::Config::parse_file(args.config_path);
    if (!experiment.empty()) cfg.set("experiment", experiment);
    if (args.seed >= 0) cfg.set("seed", std::to_string(args.seed));
    if (!args.out.empty()) cfg.set("out", args.out);
    if (args.threads >= 0) cfg.set("threads", std::to_string(args.threads));
    for (const auto& kv : args.overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos)
            throw dcsde::ConfigError("--set expects key=value, got: " + kv);
        cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    return cfg;
}

void add_global_flags(CLI::App* cmd, GlobalArgs& args) {
    cmd->add_option("--config", args.config_path, "experiment configuration file");
    cmd->add_option("--seed", args.seed, "override the top-level seed");
    cmd->add_option("--out", args.out, "override the output directory");
    cmd->add_option("--threads", args.threads, "worker threads (0 = hardware)");
    cmd->add_option("--set", args.overrides, "override a config key (key=value)")
        ->take_all();
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"dcsde: directed-chain mean-field SDE simulation and inference"};
    app.require_subcommand(1);

    GlobalArgs args;
    std::string run_experiment;
    std::string manifest_path;

    for (const auto& kind : dcsde::runner::experiment_kinds()) {
        auto* cmd = app.add_subcommand(kind, "run the " + kind + " experiment");
        add_global_flags(cmd, args);
        cmd->callback([&, kind] { run_experiment = kind; });
        if (kind == "estimate-u") {
            auto bind = [&args](const std::string& key) {
                return [&args, key](const std::string& v) {
                    args.overrides.push_back(key + "=" + v);
                };
            };
            cmd->add_option_function<std::string>("--method", bind("estimate.method"),
                                                  "mm, modified, cmle, or all");
            cmd->add_option_function<std::string>("--input", bind("estimate.input"),
                                                  "synthetic, a CSV path, or an ensemble");
            cmd->add_option_function<std::string>("--depth", bind("estimate.depth"),
                                                  "hidden hierarchy depth");
            cmd->add_option_function<std::string>("--particles", bind("estimate.particles"),
                                                  "filter ensemble size");
            cmd->add_option_function<std::string>("--candidates", bind("estimate.candidates"),
                                                  "comma-separated candidate grid");
        } else if (kind == "solve-limit") {
            cmd->add_flag_callback(
                "--trace",
                [&args] { args.overrides.push_back("limit.trace=true"); },
                "emit the Picard distance sequence as CSV");
        }
    }

    auto* validate_cmd = app.add_subcommand("validate", "dry-run configuration check");
    add_global_flags(validate_cmd, args);

    auto* replay_cmd =
        app.add_subcommand("replay", "re-run a manifest and verify its checksums");
    replay_cmd->add_option("manifest", manifest_path, "path to manifest.json")->required();
    replay_cmd->add_option("--out", args.out, "scratch directory for the replay")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (validate_cmd->parsed()) {
            const auto cfg = assemble_config(args, "");
            const auto diagnostics = dcsde::runner::validate(cfg);
            if (diagnostics.empty()) {
                std::printf("configuration ok\n");
            } else {
                for (const auto& d : diagnostics) std::printf("diagnostic: %s\n", d.c_str());
            }
            return 0; // diagnostics are reported, not fatal
        }
        if (replay_cmd->parsed()) {
            const auto report = dcsde::runner::replay(manifest_path, args.out);
            if (report.ok) {
                std::printf("replay ok: outputs are byte-identical\n");
                return 0;
            }
            for (const auto& m : report.mismatches)
                std::fprintf(stderr, "replay mismatch: %s\n", m.c_str());
            return 3;
        }
        const auto cfg = assemble_config(args, run_experiment);
        const auto manifest = dcsde::runner::run(cfg);
        std::printf("%s finished in %.2fs; %zu artifacts in %s\n",
                    manifest.experiment.c_str(), manifest.wall_clock_seconds,
                    manifest.outputs.size(), cfg.get_string("out").c_str());
        return 0;
    } catch (const dcsde::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
}

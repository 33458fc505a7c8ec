// Command-line driver: zerores <subcommand> [--config f] [--out dir] [--seed s] [--threads t]
#include <zerores/runner.hpp>

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>

namespace {

enum Exit { ok = 0, gate_failed = 1, usage = 2, runtime = 3 };

std::string default_out() {
    const char* env = std::getenv("ZERORES_OUT");
    return env && *env ? env : "zerores-out";
}

} // namespace

int main(int argc, char** argv) {
    using namespace zerores;
    CLI::App app{"Threshold eigenvalue experiments for Schroedinger evolution in odd dimensions"};
    app.require_subcommand(1);
    std::string config_path, out_dir = default_out();
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;
    app.add_option("--config", config_path, "JSON run configuration (defaults are used when omitted)")
        ->check(CLI::ExistingFile);
    app.add_option("--out", out_dir, "output directory (default: $ZERORES_OUT or ./zerores-out)");
    app.add_option("--seed", seed, "overrides the node seed");
    app.add_option("--threads", threads, "worker threads")->check(CLI::PositiveNumber);
    std::string decay_class;
    // Set before adding subcommands, which inherit it: global flags may follow the subcommand.
    app.fallthrough();
    for (const auto& name : run::commands()) {
        auto* sub = app.add_subcommand(name);
        sub->add_option("--class", decay_class, "reference potential: generic, first or second");
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? ok : usage;
    }
    const std::string cmd = app.get_subcommands().front()->get_name();

    RunConfig cfg;
    try {
        if (!config_path.empty()) cfg = load_config(config_path);
        if (seed) cfg.seed = *seed;
        if (threads) cfg.threads = *threads;
        if (!decay_class.empty()) {
            cfg.potential.decay_class = decay_class;
            cfg.potential.points.clear();
            cfg.potential.artifact.clear();
        }
        validate(cfg);
    } catch (const Error& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return usage;
    }

    try {
        const auto rep = run::run_command(cmd, cfg);
        rep.write(out_dir);
        std::ofstream(std::filesystem::path(out_dir) / "config.json") << to_json(cfg).dump(2) << "\n";
        for (const auto& g : rep.gates())
            std::cout << (g.passed ? "pass " : "FAIL ") << g.name << " = " << run::fmt(g.value) << " (" << g.relation
                      << " " << run::fmt(g.target) << (g.relation == "within" ? " +- " + run::fmt(g.tolerance) : "")
                      << ")\n";
        if (!rep.passed()) {
            for (const auto& f : rep.failures()) std::cerr << "gate failed: " << f << "\n";
            return gate_failed;
        }
        return ok;
    } catch (const ConfigError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return usage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return runtime;
    }
}

#include <iostream>

#include <CLI11.hpp>

#include <martinlab/experiment.hpp>

using namespace martinlab;

int main(int argc, char** argv) {
    CLI::App app{"martinlab: config-driven random walk experiments"};
    app.require_subcommand(1);
    std::string config, out = ".";
    bool svg = false, timing = false;
    std::optional<uint64_t> seed;
    for (auto& kind : experiment_kinds()) {
        auto* sub = app.add_subcommand(kind, "run the " + kind + " experiment");
        sub->add_option("--config", config, "experiment config (JSON)")->required();
        sub->add_option("--out", out, "output directory");
        sub->add_flag("--svg", svg, "also write an SVG plot");
        sub->add_option("--seed", seed, "override the config seed");
        sub->add_flag("--timing", timing, "fill the wall_time column");
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : exit_code(ErrorKind::config);
    }
    std::string kind = app.get_subcommands().front()->get_name();
    try {
        auto cfg = load_config(config, kind, seed);
        if (svg && plot_kind_for(cfg.experiment).empty())
            throw ConfigError("experiment '" + cfg.experiment + "' has no plot; drop --svg");
        RunOptions opt;
        opt.timing = timing;
        auto rep = run_experiment(cfg, opt);
        for (auto& p : write_report(rep, out, svg)) std::cout << "wrote " << p.string() << "\n";
        std::cout << "config_sha256 " << rep.config_hash << "\n";
        if (!rep.passed()) {
            for (auto& f : rep.failures) std::cerr << "consistency failure: " << f << "\n";
            return exit_code(ErrorKind::internal);
        }
        std::cout << "verdict pass\n";
        return 0;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code(e.kind());
    } catch (const std::bad_alloc&) {
        std::cerr << "error: out of memory\n";
        return exit_code(ErrorKind::resource);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code(ErrorKind::numerical);
    }
}

// Command-line front end. Parses flags, loads the config file, layers on
// --set/--out/--seed overrides, and maps the library's error taxonomy onto
// exit codes: 0 ok, 2 config error, 3 data error, 4 numeric failure.
#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "luc/pipeline.hpp"

int main(int argc, char** argv) {
    CLI::App app{"land-use change modeling pipeline"};
    app.set_version_flag("--version", std::string(luc::kToolVersion));
    app.fallthrough();
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> sets;
    std::string out_dir;
    uint64_t seed = 0;
    app.add_option("--config", config_path, "configuration file (INI sections)");
    app.add_option("--set", sets, "override one key, section.key=value (repeatable)")
        ->take_all();
    app.add_option("--out", out_dir, "output directory (default: config paths.out)");
    CLI::Option* seed_opt =
        app.add_option("--seed", seed, "root seed; derives every stage seed coherently");

    app.add_subcommand("synth", "generate a synthetic scenario (maps, imagery, planted rule)");
    app.add_subcommand("featurize", "build the standardized feature stack from the start map");
    app.add_subcommand("train", "fit a transition probability model");
    app.add_subcommand("predict", "score every eligible cell into a probability surface");
    app.add_subcommand("simulate", "allocate change with the cellular automaton");
    app.add_subcommand("evaluate", "compare simulated against actual maps");
    app.add_subcommand("gradcheck", "finite-difference audit of every network layer kind");

    try {
        app.parse(argc, argv);
        luc::pipeline::PipelineConfig cfg;
        if (!config_path.empty()) cfg = luc::pipeline::load_config(config_path);
        luc::pipeline::apply_overrides(cfg, sets);
        if (!out_dir.empty()) cfg.paths.out = out_dir;
        if (seed_opt->count() > 0) luc::pipeline::apply_root_seed(cfg, seed);
        return luc::pipeline::run_command(app.get_subcommands().front()->get_name(),
                                          std::move(cfg));
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    } catch (const luc::config_error& e) {
        luc::pipeline::log_event("error", {{"kind", "config"}, {"message", e.what()}});
        return 2;
    } catch (const luc::data_error& e) {
        luc::pipeline::log_event("error", {{"kind", "data"}, {"message", e.what()}});
        return 3;
    } catch (const luc::numeric_error& e) {
        luc::pipeline::log_event("error", {{"kind", "numeric"}, {"message", e.what()}});
        return 4;
    } catch (const std::exception& e) {
        luc::pipeline::log_event("error", {{"kind", "internal"}, {"message", e.what()}});
        return 1;
    }
}

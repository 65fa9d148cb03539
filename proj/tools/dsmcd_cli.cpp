#include <cstdint>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "dsmcd/harness.hpp"

int main(int argc, char** argv) {
    CLI::App app{"dsmcd: multimodal (DSM-to-image) semantic and height change detection"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_override;
    uint64_t seed_override = 0;
    bool seed_given = false;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "JSON run configuration");
        cmd->add_option("--out", out_override, "output directory (overrides config)");
        cmd->add_option("--seed", seed_override, "seed (overrides config)")
            ->each([&](const std::string&) { seed_given = true; });
    };

    for (const char* name : {"generate", "train", "eval", "ablate", "sweep-t", "report"})
        add_common(app.add_subcommand(name));

    CLI11_PARSE(app, argc, argv);

    dsmcd::harness::RunConfig cfg;
    try {
        if (!config_path.empty())
            cfg = dsmcd::harness::RunConfig::from_json_file(config_path);
        if (!out_override.empty()) cfg.out = out_override;
        if (seed_given) cfg.seed = seed_override;
    } catch (const std::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return dsmcd::harness::kConfigError;
    }

    return dsmcd::harness::run_command(app.get_subcommands().front()->get_name(), cfg);
}

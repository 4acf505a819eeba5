// Command-line front end: config-driven simulation campaigns writing the CSV
// and JSON data files behind the analysis pipeline.

#include <cstdint>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "rydsim/cli.hpp"
#include "rydsim/version.hpp"

int main(int argc, char** argv) {
    CLI::App app{"rydsim: Rydberg-array simulator and analysis toolkit"};
    app.set_version_flag("--version", rydsim::kVersion);
    app.require_subcommand(1);

    struct Args {
        std::string config;
        std::string out;
        std::optional<std::uint64_t> seed;
        unsigned workers = 0;  // 0 = take from config (default 1)
    };

    const char* names[] = {"sweep", "phase-diagram", "kz", "quench", "rearrange"};
    const char* descs[] = {
        "quasi-adiabatic sweep: shots, correlators, perfect-order probability",
        "raster order parameters over (R_b/a, Delta/Omega)",
        "Kibble-Zurek sweeps, critical point, data collapse",
        "quench spectroscopy: conditional densities and Bloch fits",
        "atom rearrangement planning and filling statistics"};
    Args args[5];
    for (int i = 0; i < 5; ++i) {
        auto* sub = app.add_subcommand(names[i], descs[i]);
        sub->add_option("--config", args[i].config, "config JSON path")
            ->required()
            ->check(CLI::ExistingFile);
        sub->add_option("--out", args[i].out, "output directory")->required();
        sub->add_option("--seed", args[i].seed, "override the config seed");
        sub->add_option("--workers", args[i].workers, "worker pool size");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : rydsim::cli::kExitConfigError;
    }

    for (int i = 0; i < 5; ++i)
        if (app.got_subcommand(names[i]))
            return rydsim::cli::run_command(names[i], args[i].config, args[i].out,
                                            args[i].seed, args[i].workers);
    return rydsim::cli::kExitConfigError;
}

#include <cstdio>
#include <string>

#include <CLI11.hpp>

#include "fluxsim/experiment.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Pulse-level fluxonium gate simulator"};
    app.require_subcommand(1);

    std::string run_path, validate_path;
    CLI::App* cmd_run = app.add_subcommand("run", "Execute an experiment config");
    cmd_run->add_option("config", run_path, "Path to an INI config file")
        ->required();
    CLI::App* cmd_validate =
        app.add_subcommand("validate", "Check a config without running it");
    cmd_validate->add_option("config", validate_path, "Path to an INI config file")
        ->required();
    CLI::App* cmd_list =
        app.add_subcommand("list", "Show the available experiments");

    CLI11_PARSE(app, argc, argv);

    try {
        if (cmd_list->parsed()) {
            for (const auto& [name, desc] : fluxsim::list_experiments())
                std::printf("%-20s %s\n", name.c_str(), desc.c_str());
            return 0;
        }
        if (cmd_validate->parsed()) {
            const auto errors = fluxsim::validate(validate_path);
            if (errors.empty()) {
                std::printf("ok\n");
                return 0;
            }
            for (const auto& e : errors) std::fprintf(stderr, "error: %s\n", e.c_str());
            return 2;
        }
        const fluxsim::ResultBundle bundle = fluxsim::run(run_path);
        std::printf("%s\n", bundle.directory.c_str());
        for (const auto& f : bundle.files) std::printf("  %s\n", f.c_str());
        return 0;
    } catch (const fluxsim::ConfigError& e) {
        if (e.line > 0)
            std::fprintf(stderr, "config error (line %d): %s\n", e.line, e.what());
        else
            std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
}

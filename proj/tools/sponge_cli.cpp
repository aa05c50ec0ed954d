// Command-line entry point: one config file, one task, one output directory.

#include <CLI11.hpp>
#include <atomic>
#include <csignal>
#include <iostream>

#include "sponge/experiment.hpp"

namespace {
std::atomic<bool> g_interrupted{false};
extern "C" void on_signal(int) { g_interrupted.store(true); }
}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Sponge example experiments on toy models with a simulated accelerator"};
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::vector<std::string> overrides;
    std::string task;
    bool print_defaults = false;

    app.add_option("--config", config_path, "JSON experiment config");
    app.add_option("--task", task, "Task; shorthand for --override task=<name>");
    app.add_option("--seed", seed, "Seed (overrides the config)");
    app.add_option("--out", out, "Output directory (overrides the config)");
    app.add_option("--override", overrides, "key.path=value, value parsed as JSON when possible")->take_all();
    app.add_flag("--print-defaults", print_defaults, "Print the default config and exit");
    CLI11_PARSE(app, argc, argv);

    if (print_defaults) {
        std::cout << sponge::default_config().dump(2) << '\n';
        return 0;
    }
    if (!task.empty()) overrides.push_back("task=" + task);

    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    try {
        const auto config = sponge::ExperimentConfig::load(
            config_path, overrides, seed, out ? std::optional<std::filesystem::path>(*out) : std::nullopt);
        sponge::RunOptions options;
        options.log = &std::clog;
        options.interrupted = &g_interrupted;
        std::clog << "task " << config.task << " seed " << config.seed << " config " << config.hash() << " -> "
                  << config.output_dir.string() << '\n';
        const int rc = sponge::run(config, options);
        if (g_interrupted.load()) {
            std::clog << "interrupted; partial results kept in " << config.output_dir.string() << '\n';
            return 130;
        }
        return rc;
    } catch (const sponge::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}

// Command-line harness: run, rates and validate subcommands over a JSON config.

#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "mlmc/experiment.hpp"
#include "mlmc/parallel.hpp"

namespace {

std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot read '" + path + "'");
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

/// Returns the config or prints every error and returns nullopt.
std::optional<mlmc::ExperimentConfig> load(const std::string& path) {
    const auto v = mlmc::validate_config(read_file(path));
    if (!v.ok()) {
        std::cerr << path << ": invalid config\n";
        for (const auto& e : v.errors) std::cerr << "  " << e << "\n";
        return std::nullopt;
    }
    return v.config;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multilevel Monte Carlo experiment harness"};
    app.require_subcommand(1);

    std::string config_path, out_path;
    std::uint64_t seed = 0;
    int threads = 1;
    bool wall_clock = false, canonical = false;

    auto* run = app.add_subcommand("run", "Run an experiment and write its CSV");
    run->add_option("config", config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
    auto* seed_opt = run->add_option("--seed", seed, "Override the master seed");
    auto* run_out = run->add_option("--out", out_path, "Override the output CSV path");
    run->add_option("--threads", threads, "Worker threads")->check(CLI::PositiveNumber);
    run->add_flag("--wall-clock", wall_clock, "Record wall_seconds (output is then not reproducible)");

    auto* rates = app.add_subcommand("rates", "Estimate alpha and beta from per-level pilot runs");
    rates->add_option("config", config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
    auto* rates_out = rates->add_option("--out", out_path, "Per-level CSV path (default: config output)");
    rates->add_option("--threads", threads, "Worker threads")->check(CLI::PositiveNumber);

    auto* validate = app.add_subcommand("validate", "Check a config and report every problem");
    validate->add_option("config", config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
    validate->add_flag("--canonical", canonical, "Print the canonical form of a valid config");

    CLI11_PARSE(app, argc, argv);

    try {
        auto config = load(config_path);
        if (!config) return 2;
        if (validate->parsed()) {
            if (canonical)
                std::cout << mlmc::canonical_text(*config);
            else
                std::cout << config_path << ": ok\n";
            return 0;
        }
        mlmc::set_thread_count(threads);
        if (run->parsed()) {
            if (*seed_opt) config->seed = seed;
            if (*run_out) config->output = out_path;
            if (wall_clock) config->record_wall_clock = true;
            const auto result = mlmc::run_experiment(*config);
            if (config->kind == mlmc::ExperimentKind::Rates) {
                mlmc::write_text_file(config->output, mlmc::format_level_csv(result.level_rows));
            } else {
                mlmc::write_text_file(config->output, mlmc::format_csv(result.rows));
                if (!result.step_rows.empty())
                    mlmc::write_text_file(mlmc::steps_path(config->output), mlmc::format_step_csv(result.step_rows));
            }
            std::cout << mlmc::summary_table(result);
            std::cout << "wrote " << config->output << "\n";
            return 0;
        }
        if (*rates_out) config->output = out_path;
        const auto result = mlmc::run_rates(*config);
        mlmc::write_text_file(config->output, mlmc::format_level_csv(result.level_rows));
        std::cout << mlmc::summary_table(result);
        std::cout << "wrote " << config->output << "\n";
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

// Command-line front end for the shallow-water observation impact experiments.

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>

#include "swe4dvar/experiments.hpp"

namespace {

using namespace swe4dvar;

constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

struct Overrides {
    std::string config_path;
    std::optional<std::string> output;
    std::optional<std::uint64_t> seed;
};

ExperimentConfig resolve(const Overrides& o) {
    ExperimentConfig config = o.config_path.empty() ? ExperimentConfig{} : load_config(o.config_path);
    if (o.output) config.output_dir = *o.output;
    if (o.seed) config.seed = *o.seed;
    validate(config);
    return config;
}

void print_report(const ExperimentReport& report) {
    std::cout << report.name << ": " << report.files.size() << " files in " << report.output_dir.string() << '\n';
    for (const auto& [key, value] : report.metrics) std::cout << "  " << key << " = " << format_number(value) << '\n';
    for (const auto& f : report.flags) {
        std::cout << "  flagged " << variable_name(f.variable) << " (" << f.i << ',' << f.j << ") "
                  << format_number(f.sensitivity) << '\n';
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"4D-Var observation sensitivity and impact experiments for the shallow-water equations"};
    app.require_subcommand(1);

    Overrides overrides;
    using Runner = ExperimentReport (*)(const ExperimentConfig&);
    const std::pair<const char*, std::pair<const char*, Runner>> commands[] = {
        {"assimilate", {"assimilate perfect and noisy data, write RMS curves and sensitivities", run_assimilation}},
        {"prune", {"split observations by sensitivity and re-assimilate each half", run_pruning}},
        {"fault-detect", {"inject faulty observations and flag them by sensitivity", run_fault_detection}},
        {"spectrum", {"low-rank impact matrix spectrum, truncation error and dominant directions", run_spectrum_report}},
        {"impact", {"full and low-rank impact of single observations", run_impact}},
    };
    Runner selected = nullptr;
    for (const auto& [name, entry] : commands) {
        CLI::App* sub = app.add_subcommand(name, entry.first);
        sub->add_option("--config", overrides.config_path, "INI experiment configuration")->check(CLI::ExistingFile);
        sub->add_option("--output", overrides.output, "output directory (overrides [experiment] output_dir)");
        sub->add_option("--seed", overrides.seed, "background perturbation seed (overrides [experiment] seed)");
        const Runner runner = entry.second;
        sub->callback([&selected, runner] { selected = runner; });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }

    try {
        const ExperimentConfig config = resolve(overrides);
        print_report(selected(config));
        return 0;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const PhaseError& e) {
        std::cerr << "numerical failure in phase '" << e.phase() << "': " << e.what() << '\n';
        return kExitNumerical;
    } catch (const Error& e) {
        std::cerr << "numerical failure in phase 'setup': " << e.what() << '\n';
        return kExitNumerical;
    }
}

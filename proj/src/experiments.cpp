#include "swe4dvar/experiments.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

namespace swe4dvar {

namespace {

std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split(std::string_view s, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = s.find(sep, start);
        out.push_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value) {
    throw ConfigError("invalid value '" + std::string(value) + "' for " + std::string(key));
}

template <typename T>
T parse_integer(std::string_view key, std::string_view value) {
    T out{};
    const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
    if (ec != std::errc{} || ptr != value.data() + value.size() || value.empty()) bad_value(key, value);
    return out;
}

double parse_real(std::string_view key, std::string_view value) {
    double out = 0.0;
    const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
    if (ec != std::errc{} || ptr != value.data() + value.size() || value.empty() || !std::isfinite(out)) {
        bad_value(key, value);
    }
    return out;
}

std::vector<std::size_t> parse_size_list(std::string_view key, std::string_view value) {
    std::vector<std::size_t> out;
    if (value.empty() || value == "final") return out;
    for (std::string_view item : split(value, ',')) out.push_back(parse_integer<std::size_t>(key, item));
    return out;
}

// "20,20; 10,10"
std::vector<CellLocation> parse_locations(std::string_view key, std::string_view value) {
    std::vector<CellLocation> out;
    if (value.empty() || value == "none") return out;
    for (std::string_view item : split(value, ';')) {
        const auto parts = split(item, ',');
        if (parts.size() != 2) bad_value(key, item);
        out.emplace_back(parse_integer<std::size_t>(key, parts[0]),
                         parse_integer<std::size_t>(key, parts[1]));
    }
    return out;
}

void assign(ExperimentConfig& c, std::string_view section, std::string_view key, std::string_view value) {
    auto is = [&](std::string_view s, std::string_view k) { return section == s && key == k; };
    try {
        if (is("grid", "q")) c.q = parse_integer<std::size_t>(key, value);
        else if (is("grid", "domain_min")) c.domain_min = parse_real(key, value);
        else if (is("grid", "domain_max")) c.domain_max = parse_real(key, value);
        else if (is("time", "dt")) c.dt = parse_real(key, value);
        else if (is("time", "N")) c.num_steps = parse_integer<std::size_t>(key, value);
        else if (is("time", "gravity")) c.gravity = parse_real(key, value);
        else if (is("covariance", "bg_rel_std")) c.bg_rel_std = parse_real(key, value);
        else if (is("covariance", "corr_dist_cells")) c.corr_dist_cells = parse_real(key, value);
        else if (is("covariance", "uv_std")) c.uv_std = parse_real(key, value);
        else if (is("observations", "obs_times")) c.obs_times = parse_size_list(key, value);
        else if (is("observations", "noise_frac")) c.noise_frac = parse_real(key, value);
        else if (is("observations", "seed")) c.obs_seed = parse_integer<std::uint64_t>(key, value);
        else if (is("optimizer", "max_iters")) c.max_iters = parse_integer<std::size_t>(key, value);
        else if (is("optimizer", "lbfgs_memory")) c.lbfgs_memory = parse_integer<std::size_t>(key, value);
        else if (is("optimizer", "hessvec_method")) c.hessvec_method = parse_hessvec_method(value);
        else if (is("lowrank", "algorithm")) c.algorithm = parse_lowrank_algorithm(value);
        else if (is("lowrank", "rank")) c.rank = parse_integer<std::size_t>(key, value);
        else if (is("lowrank", "modes")) c.modes = parse_integer<std::size_t>(key, value);
        else if (is("lowrank", "seed")) c.lowrank_seed = parse_integer<std::uint64_t>(key, value);
        else if (is("experiment", "name")) c.name = std::string(value);
        else if (is("experiment", "output_dir")) c.output_dir = std::string(value);
        else if (is("experiment", "seed")) c.seed = parse_integer<std::uint64_t>(key, value);
        else if (is("experiment", "fault_locations")) c.fault_locations = parse_locations(key, value);
        else if (is("experiment", "fault_factor")) c.fault_factor = parse_real(key, value);
        else if (is("experiment", "impact_locations")) c.impact_locations = parse_locations(key, value);
        else {
            throw ConfigError("unknown key '" + std::string(key) + "' in section [" + std::string(section) + "]");
        }
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& e) {
        throw ConfigError("[" + std::string(section) + "] " + std::string(key) + ": " + e.what());
    }
}

// Wall-clock timing of one phase; library errors become PhaseError naming the phase.
template <typename F>
auto timed_phase(ExperimentReport& report, const std::string& name, F&& body) {
    const auto start = std::chrono::steady_clock::now();
    try {
        auto out = body();
        report.phase_seconds.emplace_back(
            name, std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
        return out;
    } catch (const ConfigError&) {
        throw;
    } catch (const PhaseError&) {
        throw;
    } catch (const std::exception& e) {
        throw PhaseError(name, e.what());
    }
}

class OutputSink {
public:
    explicit OutputSink(ExperimentReport& report) : report_(report) {
        std::filesystem::create_directories(report_.output_dir);
    }

    void write(const std::filesystem::path& relative, const std::string& content) {
        const std::filesystem::path full = report_.output_dir / relative;
        if (full.has_parent_path()) std::filesystem::create_directories(full.parent_path());
        std::ofstream out(full, std::ios::binary | std::ios::trunc);
        out << content;
        if (!out) throw Error("cannot write " + full.string());
        report_.files.push_back(relative);
    }

    void field(const std::filesystem::path& dir, const std::string& name, const StateVector& state) {
        write(dir / ("field_" + name + ".csv"), encode_field_csv(state));
    }

    void rms_curves(const std::filesystem::path& dir, const ConvergenceRecord& record) {
        for (Variable var : kAllVariables) {
            std::string text = "iteration,rms\n";
            const auto& values = record.rms[static_cast<std::size_t>(var)];
            for (std::size_t k = 0; k < values.size(); ++k) {
                text += std::to_string(k) + ',' + format_number(values[k]) + '\n';
            }
            write(dir / ("rms_" + std::string(variable_name(var)) + ".csv"), text);
        }
        std::string conv = "iteration,cost,grad_norm\n";
        for (std::size_t k = 0; k < record.size(); ++k) {
            conv += std::to_string(k) + ',' + format_number(record.cost[k]) + ',' +
                    format_number(record.grad_norm[k]) + '\n';
        }
        write(dir / "convergence.csv", conv);
    }

    void flags(const std::filesystem::path& relative, const std::vector<FlaggedObservation>& flags) {
        std::string text = "variable,i,j,sensitivity\n";
        for (const auto& f : flags) {
            text += std::string(variable_name(f.variable)) + ',' + std::to_string(f.i) + ',' + std::to_string(f.j) +
                    ',' + format_number(f.sensitivity) + '\n';
        }
        write(relative, text);
    }

    // manifest.txt lists the outputs; timings.txt is kept out of the manifest since it is not reproducible.
    void finish() {
        std::string summary = "metric,value\n";
        for (const auto& [k, v] : report_.metrics) summary += k + ',' + format_number(v) + '\n';
        write("summary.csv", summary);
        std::string manifest;
        for (const auto& f : report_.files) manifest += f.generic_string() + '\n';
        std::ofstream(report_.output_dir / "manifest.txt", std::ios::binary | std::ios::trunc) << manifest;
        std::ostringstream timings;
        timings << "phase,seconds\n";
        for (const auto& [phase, seconds] : report_.phase_seconds) timings << phase << ',' << seconds << '\n';
        std::ofstream(report_.output_dir / "timings.txt", std::ios::binary | std::ios::trunc) << timings.str();
    }

private:
    ExperimentReport& report_;
};

ExperimentReport start_report(const ExperimentConfig& config) {
    validate(config);
    ExperimentReport report;
    report.name = config.name;
    report.output_dir = config.output_dir;
    return report;
}

struct Assimilated {
    MinimizeResult result;
    Trajectory trajectory;
    SupersensitivityResult mu;
    ObsSensitivity sensitivity;
};

// 4D-Var from the background followed by the observation sensitivity of the increment norm.
Assimilated assimilate_and_sense(const ExperimentSetup& setup, const Scenario& scenario, ExperimentReport& report,
                                 const std::string& label) {
    MinimizeOptions options;
    options.max_iters = setup.config.max_iters;
    options.memory = setup.config.lbfgs_memory;
    options.reference = &setup.reference;
    Assimilated out{timed_phase(report, "minimize " + label,
                                [&] { return minimize(scenario, setup.background, options); }),
                    {}, {}, {}};
    report.records[label] = out.result.record;
    const StateVector& x_a = out.result.analysis;
    const Eigen::VectorXd grad_psi =
        verification_gradient(x_a, scenario.verification, scenario.verification_weights);
    SupersensitivityOptions so;
    so.method = setup.config.hessvec_method;
    HessianOperator hessian =
        timed_phase(report, "hessian " + label, [&] { return HessianOperator(scenario, x_a, so.method); });
    out.mu = timed_phase(report, "supersensitivity " + label, [&] {
        try {
            return supersensitivity(hessian, grad_psi, so);
        } catch (const NegativeCurvatureError&) {
            if (so.method == HessVecMethod::GaussNewton) throw;
            // Far from a consistent analysis (e.g. corrupted data) the exact Hessian can be
            // indefinite; the Gauss-Newton part is positive definite by construction.
            std::cerr << "warning: " << label << ": Hessian is indefinite at the analysis, "
                      << "using the Gauss-Newton approximation\n";
            report.metrics[label + "_gauss_newton_fallback"] = 1.0;
            so.method = HessVecMethod::GaussNewton;
            hessian = HessianOperator(scenario, x_a, so.method);
            return supersensitivity(hessian, grad_psi, so);
        }
    });
    if (!out.mu.converged) {
        throw PhaseError("supersensitivity " + label,
                         "conjugate gradients did not converge in " + std::to_string(so.max_iters) + " iterations");
    }
    out.trajectory = hessian.trajectory();
    out.sensitivity = timed_phase(report, "sensitivity " + label, [&] {
        return obs_sensitivity(out.trajectory, out.mu.mu, scenario.observations);
    });
    return out;
}

void write_sensitivity_fields(OutputSink& sink, const std::filesystem::path& dir, const std::string& name,
                              const Grid& grid, const ObsSensitivity& sens, const std::vector<std::size_t>& times) {
    for (std::size_t t : times) {
        const std::string suffix = times.size() > 1 ? "_t" + std::to_string(t) : "";
        sink.field(dir, name + suffix, sens.as_field(grid, t));
    }
}

Eigen::VectorXd gather(const Eigen::VectorXd& v, const std::vector<std::size_t>& positions) {
    Eigen::VectorXd out(static_cast<Eigen::Index>(positions.size()));
    for (std::size_t k = 0; k < positions.size(); ++k) out[static_cast<Eigen::Index>(k)] = v[static_cast<Eigen::Index>(positions[k])];
    return out;
}

double value_at_iteration(const std::vector<double>& curve, std::size_t k) {
    return curve.empty() ? std::nan("") : curve[std::min(k, curve.size() - 1)];
}

}  // namespace

std::vector<std::size_t> ExperimentConfig::observation_times() const {
    return obs_times.empty() ? std::vector<std::size_t>{num_steps} : obs_times;
}

ExperimentConfig parse_config(std::string_view text) {
    namespace pt = boost::property_tree;
    pt::ptree tree;
    try {
        std::istringstream in{std::string(text)};
        pt::ini_parser::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError("line " + std::to_string(e.line()) + ": " + e.message());
    }
    static const std::set<std::string> known{"grid", "time", "covariance", "observations",
                                             "optimizer", "lowrank", "experiment"};
    ExperimentConfig config;
    for (const auto& [section, keys] : tree) {
        if (keys.empty()) throw ConfigError("key '" + section + "' outside a section");
        if (!known.contains(section)) throw ConfigError("unknown section [" + section + "]");
        for (const auto& [key, value] : keys) assign(config, section, key, trim(value.data()));
    }
    validate(config);
    return config;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return parse_config(buffer.str());
}

void validate(const ExperimentConfig& c) {
    auto fail = [](const std::string& what) { throw ConfigError(what); };
    if (c.q < 3) fail("grid q must be at least 3");
    if (!(c.domain_max > c.domain_min)) fail("grid domain_max must exceed domain_min");
    if (!(c.dt > 0.0)) fail("time dt must be positive");
    if (c.num_steps == 0) fail("time N must be positive");
    if (!(c.gravity > 0.0)) fail("time gravity must be positive");
    if (!(c.bg_rel_std > 0.0)) fail("covariance bg_rel_std must be positive");
    if (!(c.corr_dist_cells > 0.0)) fail("covariance corr_dist_cells must be positive");
    if (!(c.uv_std > 0.0)) fail("covariance uv_std must be positive");
    if (!(c.noise_frac > 0.0)) fail("observations noise_frac must be positive");
    const auto times = c.observation_times();
    for (std::size_t k = 0; k < times.size(); ++k) {
        if (times[k] > c.num_steps) fail("observation time " + std::to_string(times[k]) + " is beyond N");
        if (k > 0 && times[k] <= times[k - 1]) fail("observation times must be increasing");
    }
    if (c.max_iters == 0) fail("optimizer max_iters must be positive");
    if (c.lbfgs_memory == 0) fail("optimizer lbfgs_memory must be positive");
    const std::size_t n = 3 * c.q * c.q;
    if (c.rank == 0 || c.rank > n) fail("lowrank rank must be in [1, " + std::to_string(n) + "]");
    if (c.modes == 0 || c.modes > c.rank) fail("lowrank modes must be in [1, rank]");
    for (const auto& [i, j] : c.fault_locations) {
        if (i >= c.q || j >= c.q) fail("fault location (" + std::to_string(i) + "," + std::to_string(j) + ") is outside the grid");
    }
    if (!(c.fault_factor > 0.0)) fail("experiment fault_factor must be positive");
    for (const auto& [i, j] : c.impact_locations) {
        if (i >= c.q || j >= c.q) fail("impact location (" + std::to_string(i) + "," + std::to_string(j) + ") is outside the grid");
    }
    if (c.name.empty()) fail("experiment name must not be empty");
}

StateVector circular_dam(const Grid& grid) {
    StateVector state = make_rest_state(grid, 1.0);
    const double mid = 0.5 * (grid.domain_min() + grid.domain_max());
    const double width = 0.5;
    FieldSlice h = state.field(Variable::H);
    for (std::size_t i = 0; i < grid.q(); ++i) {
        for (std::size_t j = 0; j < grid.q(); ++j) {
            const double x = grid.center(i) - mid;
            const double y = grid.center(j) - mid;
            h(i, j) = 1.0 + std::exp(-(x * x + y * y) / (2.0 * width * width));
        }
    }
    return state;
}

ExperimentSetup build_setup(const ExperimentConfig& config) {
    validate(config);
    ExperimentSetup s;
    s.config = config;
    s.grid = make_grid(config.q, config.domain_min, config.domain_max);
    s.model = ModelConfig{config.gravity, config.dt, config.num_steps};
    s.reference = circular_dam(s.grid);
    s.reference_trajectory = fwd_run(s.reference, s.model, config.observation_times());
    s.background_cov = std::make_shared<const BackgroundCov>(
        build_background_cov(s.grid, s.reference, config.bg_rel_std, config.corr_dist_cells, config.uv_std));
    s.background = StateVector(s.grid, s.reference.values() + sample_background_perturbation(*s.background_cov, config.seed));
    return s;
}

ObservationSet observe_everything(const ExperimentSetup& setup, double noise_frac) {
    const std::vector<std::size_t> indices = full_coverage(setup.grid);
    return generate_observations(setup.reference_trajectory, indices, noise_frac, setup.config.obs_seed,
                                 setup.config.noise_frac);
}

Scenario make_scenario(const ExperimentSetup& setup, ObservationSet observations) {
    Scenario sc{setup.model,
                setup.background,
                setup.background_cov,
                std::move(observations),
                setup.background,
                Eigen::VectorXd::Ones(static_cast<Eigen::Index>(setup.grid.state_size()))};
    validate(sc);
    return sc;
}

std::vector<FlaggedObservation> top_sensitivities(const Grid& grid, const ObsSensitivity& sens, std::size_t k) {
    std::vector<FlaggedObservation> out;
    for (Variable var : kAllVariables) {
        std::vector<std::size_t> pos = sens.positions_of(grid, var);
        std::stable_sort(pos.begin(), pos.end(), [&](std::size_t a, std::size_t b) {
            return std::abs(sens.values[static_cast<Eigen::Index>(a)]) > std::abs(sens.values[static_cast<Eigen::Index>(b)]);
        });
        for (std::size_t r = 0; r < std::min(k, pos.size()); ++r) {
            const CellIndex c = decode_index(grid, sens.keys[pos[r]].state_index);
            out.push_back({var, c.i, c.j, sens.values[static_cast<Eigen::Index>(pos[r])]});
        }
    }
    return out;
}

std::vector<FlaggedObservation> sensitivity_outliers(const Grid& grid, const ObsSensitivity& sens) {
    std::vector<FlaggedObservation> out;
    for (Variable var : kAllVariables) {
        const std::vector<std::size_t> pos = sens.positions_of(grid, var);
        if (pos.size() < 2) continue;
        const Eigen::ArrayXd mag = gather(sens.values, pos).array().abs();
        const double mean = mag.mean();
        const double std_dev = std::sqrt((mag - mean).square().sum() / static_cast<double>(mag.size()));
        const double threshold = mean + 5.0 * std_dev;
        for (std::size_t r = 0; r < pos.size(); ++r) {
            if (mag[static_cast<Eigen::Index>(r)] > threshold) {
                const CellIndex c = decode_index(grid, sens.keys[pos[r]].state_index);
                out.push_back({var, c.i, c.j, sens.values[static_cast<Eigen::Index>(pos[r])]});
            }
        }
    }
    return out;
}

double cosine_similarity(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    const double na = a.norm();
    const double nb = b.norm();
    if (na == 0.0 || nb == 0.0) return 0.0;
    return a.dot(b) / (na * nb);
}

std::string format_number(double value) {
    char buf[40];
    const auto res = std::to_chars(buf, buf + sizeof(buf), value, std::chars_format::general, 17);
    return std::string(buf, res.ptr);
}

ExperimentReport run_assimilation(const ExperimentConfig& config) {
    ExperimentReport report = start_report(config);
    OutputSink sink(report);
    const ExperimentSetup setup = timed_phase(report, "setup", [&] { return build_setup(config); });
    const auto times = config.observation_times();
    sink.field("", "reference", setup.reference);
    sink.field("", "background", setup.background);

    std::map<std::string, Assimilated> runs;
    for (const auto& [label, noise] : {std::pair<std::string, double>{"perfect", 0.0}, {"noisy", config.noise_frac}}) {
        const Scenario scenario = make_scenario(setup, observe_everything(setup, noise));
        Assimilated run = assimilate_and_sense(setup, scenario, report, label);
        sink.rms_curves(label, run.result.record);
        sink.field(label, "analysis", run.result.analysis);
        write_sensitivity_fields(sink, label, "sensitivity", setup.grid, run.sensitivity, times);
        for (Variable var : kAllVariables) {
            report.metrics[label + "_analysis_rms_" + std::string(variable_name(var))] =
                rms_error(run.result.analysis, setup.reference, var);
        }
        runs.emplace(label, std::move(run));
    }
    for (Variable var : kAllVariables) {
        const std::string name(variable_name(var));
        report.metrics["background_rms_" + name] = rms_error(setup.background, setup.reference, var);
        const auto pos = runs.at("perfect").sensitivity.positions_of(setup.grid, var);
        report.metrics["sensitivity_cosine_" + name] = cosine_similarity(
            gather(runs.at("perfect").sensitivity.values, pos), gather(runs.at("noisy").sensitivity.values, pos));
    }
    report.metrics["sensitivity_cosine_all"] =
        cosine_similarity(runs.at("perfect").sensitivity.values, runs.at("noisy").sensitivity.values);

    sink.finish();
    return report;
}

ExperimentReport run_pruning(const ExperimentConfig& config) {
    ExperimentReport report = start_report(config);
    OutputSink sink(report);
    const ExperimentSetup setup = timed_phase(report, "setup", [&] { return build_setup(config); });
    const ObservationSet all = observe_everything(setup, config.noise_frac);
    const Assimilated base = assimilate_and_sense(setup, make_scenario(setup, all), report, "all");
    sink.rms_curves("all", base.result.record);

    // Variable-wise split: the larger half of |sensitivity| is HIGH, the rest LOW.
    std::vector<bool> high(all.size(), false);
    std::string partition = "variable,i,j,time,sensitivity,set\n";
    StateVector mask(setup.grid);
    for (Variable var : kAllVariables) {
        std::vector<std::size_t> pos = base.sensitivity.positions_of(setup.grid, var);
        std::stable_sort(pos.begin(), pos.end(), [&](std::size_t a, std::size_t b) {
            return std::abs(base.sensitivity.values[static_cast<Eigen::Index>(a)]) >
                   std::abs(base.sensitivity.values[static_cast<Eigen::Index>(b)]);
        });
        const std::size_t half = pos.size() / 2;
        for (std::size_t r = 0; r < pos.size(); ++r) {
            const std::size_t k = pos[r];
            high[k] = r < half;
            const ObsKey& key = base.sensitivity.keys[k];
            const CellIndex c = decode_index(setup.grid, key.state_index);
            if (high[k] && key.time == config.observation_times().back()) mask[key.state_index] = 1.0;
            partition += std::string(variable_name(var)) + ',' + std::to_string(c.i) + ',' + std::to_string(c.j) +
                         ',' + std::to_string(key.time) + ',' +
                         format_number(base.sensitivity.values[static_cast<Eigen::Index>(k)]) + ',' +
                         (high[k] ? "high" : "low") + '\n';
        }
        report.metrics["high_count_" + std::string(variable_name(var))] = static_cast<double>(half);
        report.metrics["low_count_" + std::string(variable_name(var))] = static_cast<double>(pos.size() - half);
    }
    sink.write("partition.csv", partition);
    sink.field("", "high_mask", mask);

    std::vector<bool> low(high.size());
    std::transform(high.begin(), high.end(), low.begin(), [](bool b) { return !b; });
    for (const auto& [label, keep] : {std::pair<std::string, const std::vector<bool>*>{"high", &high}, {"low", &low}}) {
        const Scenario scenario = make_scenario(setup, subset(all, *keep));
        MinimizeOptions options;
        options.max_iters = config.max_iters;
        options.memory = config.lbfgs_memory;
        options.reference = &setup.reference;
        const MinimizeResult result =
            timed_phase(report, "minimize " + label, [&] { return minimize(scenario, setup.background, options); });
        report.records[label] = result.record;
        sink.rms_curves(label, result.record);
        report.metrics[label + "_rms_h_iter20"] = value_at_iteration(result.record.rms[0], 20);
        report.metrics[label + "_rms_h_final"] = value_at_iteration(result.record.rms[0], result.record.size());
    }
    report.metrics["high_better_at_iter20"] = report.metrics["high_rms_h_iter20"] <= report.metrics["low_rms_h_iter20"];

    sink.finish();
    return report;
}

ExperimentReport run_fault_detection(const ExperimentConfig& config) {
    ExperimentReport report = start_report(config);
    OutputSink sink(report);
    const ExperimentSetup setup = timed_phase(report, "setup", [&] { return build_setup(config); });

    // Perfect data except at the faulty instruments, which report every variable scaled.
    ObservationSet obs = observe_everything(setup, 0.0);
    for (ObservationBlock& block : obs.blocks) {
        for (std::size_t k = 0; k < block.size(); ++k) {
            const CellIndex c = decode_index(setup.grid, block.indices[k]);
            for (const auto& [fi, fj] : config.fault_locations) {
                if (c.i == fi && c.j == fj) block.values[static_cast<Eigen::Index>(k)] *= config.fault_factor;
            }
        }
    }
    const Scenario scenario = make_scenario(setup, obs);
    const Assimilated run = assimilate_and_sense(setup, scenario, report, "faulty");
    sink.rms_curves("", run.result.record);
    sink.field("", "increment", StateVector(setup.grid, run.result.analysis.values() - setup.background.values()));
    sink.field("", "supersensitivity", StateVector(setup.grid, run.mu.mu));
    write_sensitivity_fields(sink, "", "sensitivity", setup.grid, run.sensitivity, config.observation_times());

    report.flags = top_sensitivities(setup.grid, run.sensitivity, config.fault_locations.size());
    report.outliers = sensitivity_outliers(setup.grid, run.sensitivity);
    sink.flags("flags.csv", report.flags);
    sink.flags("outliers.csv", report.outliers);

    const std::set<CellLocation> faults(config.fault_locations.begin(), config.fault_locations.end());
    std::set<CellLocation> flagged_h;
    for (const auto& f : report.flags) {
        if (f.variable == Variable::H) flagged_h.emplace(f.i, f.j);
    }
    report.metrics["h_flags_match_faults"] = flagged_h == faults;
    report.metrics["outlier_count"] = static_cast<double>(report.outliers.size());
    sink.finish();
    return report;
}

ExperimentReport run_spectrum_report(const ExperimentConfig& config) {
    ExperimentReport report = start_report(config);
    OutputSink sink(report);
    const ExperimentSetup setup = timed_phase(report, "setup", [&] { return build_setup(config); });
    const Scenario scenario = make_scenario(setup, observe_everything(setup, config.noise_frac));
    const Assimilated run = assimilate_and_sense(setup, scenario, report, "noisy");
    const StateVector& x_a = run.result.analysis;

    LowRankOptions lro;
    lro.method = config.hessvec_method;
    const LowRankImpact lr = timed_phase(report, "lowrank", [&] {
        return config.algorithm == LowRankAlgorithm::Iterative
                   ? lowrank_iterative(scenario, x_a, config.rank, lro)
                   : lowrank_randomized(scenario, x_a, config.rank, config.lowrank_seed, lro);
    });
    std::string spectrum = "index,singular_value\n";
    for (Eigen::Index k = 0; k < lr.singulars.size(); ++k) {
        spectrum += std::to_string(k + 1) + ',' + format_number(lr.singulars[k]) + '\n';
    }
    sink.write("spectrum.csv", spectrum);
    report.metrics["effective_rank"] = static_cast<double>(lr.rank());
    report.metrics["complete"] = lr.complete;

    // Low-rank sensitivity against the full one.
    const Eigen::VectorXd grad_psi = verification_gradient(x_a, scenario.verification, scenario.verification_weights);
    const ObsSensitivity lowrank_sens{lowrank_apply(lr, grad_psi), run.sensitivity.keys};
    const ObsSensitivity error{run.sensitivity.values - lowrank_sens.values, run.sensitivity.keys};
    const auto times = config.observation_times();
    write_sensitivity_fields(sink, "", "sensitivity", setup.grid, run.sensitivity, times);
    write_sensitivity_fields(sink, "", "lowrank_sensitivity", setup.grid, lowrank_sens, times);
    write_sensitivity_fields(sink, "", "truncation_error", setup.grid, error, times);

    const std::size_t m = std::min(config.modes, lr.rank());
    if (m > 0) {
        const DominantDirections dom = dominant_directions(lr, m);
        sink.field("", "dominant_state", StateVector(setup.grid, dom.state));
        write_sensitivity_fields(sink, "", "dominant_obs", setup.grid, ObsSensitivity{dom.observations, run.sensitivity.keys}, times);
        sink.field("", "first_state", StateVector(setup.grid, lr.right.col(0)));
        write_sensitivity_fields(sink, "", "first_obs", setup.grid, ObsSensitivity{lr.left.col(0), run.sensitivity.keys}, times);
    }

    if (setup.grid.state_size() <= kDenseOracleStateCap) {
        std::vector<std::size_t> ranks{0, config.rank / 8, config.rank / 4, config.rank / 2, config.rank};
        ranks.erase(std::unique(ranks.begin(), ranks.end()), ranks.end());
        const TruncationCurve curve = timed_phase(report, "truncation", [&] {
            return truncation_error_curve(scenario, x_a, ranks, config.algorithm, config.lowrank_seed, lro);
        });
        std::string trunc = "rank,error\n";
        std::string frob = "rank,error\n";
        for (const auto& pt : curve.points) {
            trunc += std::to_string(pt.rank) + ',' + format_number(pt.sensitivity_error / curve.sensitivity_norm) + '\n';
            frob += std::to_string(pt.rank) + ',' + format_number(pt.frobenius_error / curve.impact_norm) + '\n';
        }
        sink.write("truncation.csv", trunc);
        sink.write("truncation_frobenius.csv", frob);
        report.metrics["truncation_error_full_rank"] = curve.points.back().sensitivity_error / curve.sensitivity_norm;
        report.metrics["frobenius_error_full_rank"] = curve.points.back().frobenius_error / curve.impact_norm;
    }
    sink.finish();
    return report;
}

ExperimentReport run_impact(const ExperimentConfig& config) {
    ExperimentReport report = start_report(config);
    OutputSink sink(report);
    const ExperimentSetup setup = timed_phase(report, "setup", [&] { return build_setup(config); });
    const Scenario scenario = make_scenario(setup, observe_everything(setup, config.noise_frac));
    MinimizeOptions options;
    options.max_iters = config.max_iters;
    options.memory = config.lbfgs_memory;
    options.reference = &setup.reference;
    const MinimizeResult result =
        timed_phase(report, "minimize", [&] { return minimize(scenario, setup.background, options); });
    const StateVector& x_a = result.analysis;

    LowRankOptions lro;
    lro.method = config.hessvec_method;
    const LowRankImpact lr = timed_phase(report, "lowrank", [&] {
        const LowRankImpact full = config.algorithm == LowRankAlgorithm::Iterative
                                       ? lowrank_iterative(scenario, x_a, config.rank, lro)
                                       : lowrank_randomized(scenario, x_a, config.rank, config.lowrank_seed, lro);
        return truncate(full, std::min(config.modes, full.rank()));
    });

    // Unit innovation in the h observation at each location, final observation time.
    const std::size_t final_time = config.observation_times().back();
    const std::vector<ObsKey> keys = scenario.observations.keys();
    SupersensitivityOptions so;
    so.method = config.hessvec_method;
    for (const auto& [i, j] : config.impact_locations) {
        const std::size_t target = state_index(setup.grid, Variable::H, i, j);
        const auto it = std::find_if(keys.begin(), keys.end(),
                                     [&](const ObsKey& k) { return k.time == final_time && k.state_index == target; });
        Eigen::VectorXd dy = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(keys.size()));
        dy[it - keys.begin()] = 1.0;
        const std::string tag = std::to_string(i) + '_' + std::to_string(j);
        const Eigen::VectorXd full =
            timed_phase(report, "impact " + tag, [&] { return obs_impact_apply(scenario, x_a, dy, so); });
        const Eigen::VectorXd approx = lowrank_apply_transpose(lr, dy);
        sink.field("", "impact_full_" + tag, StateVector(setup.grid, full));
        sink.field("", "impact_lowrank_" + tag, StateVector(setup.grid, approx));
        report.metrics["impact_cosine_" + tag] = cosine_similarity(full, approx);
    }
    sink.finish();
    return report;
}

}  // namespace swe4dvar

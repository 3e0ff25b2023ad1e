#include <doctest.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include "support.hpp"

using namespace swe4dvar;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("swe4dvar_test_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string(SWE4DVAR_CLI) + ' ' + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

ExperimentConfig q10(const std::string& name) {
    ExperimentConfig c = load_config(fs::path(SWE4DVAR_CONFIGS) / "desk_q10.ini");
    c.output_dir = scratch(name);
    return c;
}

}  // namespace

TEST_CASE("config defaults describe the 40 x 40 dam break") {
    const ExperimentConfig c = parse_config("");
    CHECK(c.q == 40);
    CHECK(c.dt == 1e-4);
    CHECK(c.num_steps == 100);
    CHECK(c.bg_rel_std == 0.05);
    CHECK(c.corr_dist_cells == 5.0);
    CHECK(c.noise_frac == 0.01);
    CHECK(c.max_iters == 100);
    CHECK(c.lbfgs_memory == 10);
    CHECK(c.rank == 1600);
    CHECK(c.modes == 500);
    CHECK(c.fault_factor == 10.0);
    CHECK(c.fault_locations == std::vector<CellLocation>{{20, 20}, {10, 10}});
    CHECK(c.observation_times() == std::vector<std::size_t>{100});
    CHECK_NOTHROW(validate(c));
    CHECK(load_config(fs::path(SWE4DVAR_CONFIGS) / "dam_q40.ini").rank == c.rank);
}

TEST_CASE("config parsing") {
    const ExperimentConfig c = parse_config(
        "; leading comment\n"
        "[grid]\n"
        "q = 12\n"
        "# whole-line comment\n"
        "\n"
        "[observations]\n"
        "obs_times = 50, 100\n"
        "[optimizer]\n"
        "hessvec_method = gauss_newton\n"
        "[lowrank]\n"
        "algorithm = randomized\n"
        "rank = 40\n"
        "modes = 4\n"
        "[experiment]\n"
        "fault_locations = none\n"
        "impact_locations = 3,4; 5,6\n");
    CHECK(c.q == 12);
    CHECK(c.observation_times() == std::vector<std::size_t>{50, 100});
    CHECK(c.hessvec_method == HessVecMethod::GaussNewton);
    CHECK(c.algorithm == LowRankAlgorithm::Randomized);
    CHECK(c.fault_locations.empty());
    CHECK(c.impact_locations == std::vector<CellLocation>{{3, 4}, {5, 6}});
    CHECK_NOTHROW(validate(c));

    CHECK_THROWS_AS(parse_config("[nowhere]\nq = 3\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[grid]\nwidth = 3\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[grid]\nq = 12\nq = 14\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[grid\nq = 12\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[grid]\nq = many\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[grid]\nq = -4\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("q = 4\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[lowrank]\nalgorithm = psychic\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[experiment]\nfault_locations = 1;2\n"), ConfigError);

    CHECK_THROWS_AS(parse_config("[grid]\nq = 10\n[lowrank]\nrank = 301\nmodes = 10\n"), ConfigError);
    ExperimentConfig bad = parse_config("[grid]\nq = 10\n[lowrank]\nrank = 300\nmodes = 10\n"
                                        "[experiment]\nfault_locations = none\nimpact_locations = none\n");
    CHECK_NOTHROW(validate(bad));
    bad.fault_locations = {{10, 0}};
    CHECK_THROWS_AS(validate(bad), ConfigError);
    bad.fault_locations.clear();
    bad.obs_times = {101};
    CHECK_THROWS_AS(validate(bad), ConfigError);
}

TEST_CASE("circular dam") {
    const Grid g = make_grid(40, -3.0, 3.0);
    const StateVector s = circular_dam(g);
    CHECK(s.field(Variable::U).data().empty() == false);
    for (Variable var : {Variable::U, Variable::V}) {
        for (double x : s.field(var).data()) CHECK(x == 0.0);
    }
    const auto h = s.field(Variable::H).data();
    CHECK(*std::min_element(h.begin(), h.end()) > 1.0);
    CHECK(*std::max_element(h.begin(), h.end()) <= 2.0);
    // Symmetric under the swap of the two axes.
    for (std::size_t i = 0; i < 40; ++i) {
        for (std::size_t j = 0; j < 40; ++j) CHECK(s.at(Variable::H, i, j) == s.at(Variable::H, j, i));
    }
}

TEST_CASE("command line exit codes") {
    const fs::path dir = scratch("cli");
    const std::string cfg = (fs::path(SWE4DVAR_CONFIGS) / "desk_q10.ini").string();

    {
        std::ofstream(dir / "broken.ini") << "[grid]\nq = seven\n";
        std::ofstream(dir / "tiny_rank.ini") << "[grid]\nq = 10\n[lowrank]\nrank = 0\n";
        std::ofstream unstable(dir / "unstable.ini");
        unstable << slurp(cfg);
    }
    // A huge time step blows the model up during minimization.
    {
        std::string text = slurp(cfg);
        const auto pos = text.find("dt = 1e-4");
        REQUIRE(pos != std::string::npos);
        text.replace(pos, 9, "dt = 0.5");
        std::ofstream(dir / "unstable.ini") << text;
    }

    CHECK(run_cli("") == 2);
    CHECK(run_cli("bogus") == 2);
    CHECK(run_cli("assimilate --config " + (dir / "missing.ini").string()) == 2);
    CHECK(run_cli("assimilate --config " + (dir / "broken.ini").string()) == 2);
    CHECK(run_cli("prune --config " + (dir / "tiny_rank.ini").string()) == 2);
    CHECK(run_cli("assimilate --config " + (dir / "unstable.ini").string() + " --output " + (dir / "u").string()) == 3);
    CHECK(run_cli("assimilate --config " + cfg + " --output " + (dir / "ok").string() + " --seed 4") == 0);
    CHECK(fs::exists(dir / "ok" / "manifest.txt"));
    CHECK(fs::exists(dir / "ok" / "perfect" / "rms_h.csv"));
}

TEST_CASE("assimilation report") {
    const ExperimentConfig c = q10("assimilation");
    const ExperimentReport r = run_assimilation(c);
    CHECK(r.metrics.at("perfect_analysis_rms_h") < r.metrics.at("background_rms_h"));
    CHECK(r.metrics.at("noisy_analysis_rms_h") < r.metrics.at("background_rms_h"));
    CHECK(r.metrics.at("sensitivity_cosine_all") > 0.9);

    // The manifest lists exactly the files written, and each parses.
    std::istringstream manifest(slurp(c.output_dir / "manifest.txt"));
    std::set<std::string> listed;
    for (std::string line; std::getline(manifest, line);) listed.insert(line);
    CHECK(listed.size() == r.files.size());
    for (const fs::path& f : r.files) {
        CHECK(listed.count(f.generic_string()) == 1);
        REQUIRE(fs::exists(c.output_dir / f));
        if (f.filename().string().rfind("field_", 0) == 0) {
            CHECK_NOTHROW(decode_field_csv(slurp(c.output_dir / f)));
        }
    }
    const std::string rms = slurp(c.output_dir / "noisy" / "rms_h.csv");
    CHECK(rms.rfind("iteration,rms\n", 0) == 0);
    CHECK(std::count(rms.begin(), rms.end(), '\n') == static_cast<long>(r.records.at("noisy").size() + 1));
}

TEST_CASE("pruning partition is exact and balanced") {
    const ExperimentConfig c = q10("pruning");
    const ExperimentReport r = run_pruning(c);
    for (const char* var : {"h", "u", "v"}) {
        CHECK(r.metrics.at(std::string("high_count_") + var) == 50.0);
        CHECK(r.metrics.at(std::string("low_count_") + var) == 50.0);
    }
    std::istringstream partition(slurp(c.output_dir / "partition.csv"));
    std::string line;
    std::getline(partition, line);
    std::set<std::string> seen;
    std::size_t high = 0;
    std::size_t rows = 0;
    for (; std::getline(partition, line); ++rows) {
        const auto last = line.rfind(',');
        high += line.substr(last + 1) == "high";
        const auto cell = line.substr(0, line.find(',', line.find(',', 2) + 1));
        CHECK(seen.insert(cell).second);
    }
    CHECK(rows == 300);
    CHECK(high == 150);
    CHECK(r.records.count("high") == 1);
    CHECK(r.records.count("low") == 1);
    CHECK(fs::exists(c.output_dir / "high" / "rms_h.csv"));
    CHECK(fs::exists(c.output_dir / "low" / "rms_h.csv"));
}

TEST_CASE("fault detection on the desk grid") {
    const ExperimentConfig c = q10("faults");
    const ExperimentReport r = run_fault_detection(c);
    std::set<CellLocation> flagged_h;
    for (const auto& f : r.flags) {
        if (f.variable == Variable::H) flagged_h.insert({f.i, f.j});
    }
    CHECK(flagged_h == std::set<CellLocation>(c.fault_locations.begin(), c.fault_locations.end()));
    CHECK(r.metrics.at("h_flags_match_faults") == 1.0);
    CHECK(fs::exists(c.output_dir / "flags.csv"));

    ExperimentConfig clean = q10("clean");
    clean.fault_locations.clear();
    const ExperimentReport quiet = run_fault_detection(clean);
    CHECK(quiet.outliers.empty());
    CHECK(quiet.metrics.at("outlier_count") == 0.0);
}

TEST_CASE("sensitivity outliers and ranking") {
    // 64 cells per variable: one spike can reach (64 - 1) / 8 standard deviations.
    const Grid g = make_grid(8, 0.0, 1.0);
    ObsSensitivity s;
    s.values = Eigen::VectorXd::Constant(192, 0.01);
    for (Eigen::Index k = 0; k < 192; ++k) s.values[k] += 1e-3 * static_cast<double>(k % 5);
    for (std::size_t k = 0; k < 192; ++k) s.keys.push_back({0, 1, k});
    CHECK(sensitivity_outliers(g, s).empty());
    s.values[9] = -3.0;
    const auto out = sensitivity_outliers(g, s);
    REQUIRE(out.size() == 1);
    CHECK(out[0].variable == Variable::H);
    CHECK(out[0].i == 1);
    CHECK(out[0].j == 1);
    const auto top = top_sensitivities(g, s, 1);
    REQUIRE(top.size() == 3);
    CHECK(top[0].sensitivity == -3.0);

    CHECK(cosine_similarity(Eigen::Vector3d(1, 2, 3), Eigen::Vector3d(2, 4, 6)) == doctest::Approx(1.0));
    CHECK(format_number(0.1) == "0.10000000000000001");
    CHECK(std::stod(format_number(1.0 / 3.0)) == 1.0 / 3.0);
}

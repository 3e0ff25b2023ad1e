#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "swe4dvar/errors.hpp"
#include "swe4dvar/fourdvar.hpp"
#include "swe4dvar/obs_impact.hpp"

namespace swe4dvar {

/// Grid cell (i, j), i along x.
using CellLocation = std::pair<std::size_t, std::size_t>;

struct ExperimentConfig {
    // [grid]
    std::size_t q = 40;
    double domain_min = -3.0;
    double domain_max = 3.0;
    // [time]
    double dt = 1e-4;
    std::size_t num_steps = 100;
    double gravity = 9.8;
    // [covariance]
    double bg_rel_std = 0.05;
    double corr_dist_cells = 5.0;
    double uv_std = 0.05;
    // [observations]; empty obs_times means the final time only
    std::vector<std::size_t> obs_times;
    double noise_frac = 0.01;
    std::uint64_t obs_seed = 2;
    // [optimizer]
    std::size_t max_iters = 100;
    std::size_t lbfgs_memory = 10;
    HessVecMethod hessvec_method = HessVecMethod::Soa;
    // [lowrank]
    LowRankAlgorithm algorithm = LowRankAlgorithm::Iterative;
    std::size_t rank = 1600;
    std::size_t modes = 500;
    std::uint64_t lowrank_seed = 3;
    // [experiment]
    std::string name = "circular_dam";
    std::filesystem::path output_dir = "output";
    std::uint64_t seed = 1;
    std::vector<CellLocation> fault_locations{{20, 20}, {10, 10}};
    double fault_factor = 10.0;
    std::vector<CellLocation> impact_locations{{20, 20}, {5, 5}};

    std::vector<std::size_t> observation_times() const;
};

/// Parses INI text: [section] headers, key = value lines, whole-line '#' or ';' comments.
/// Unknown sections or keys, repeated keys and malformed values throw ConfigError; the result is validated.
ExperimentConfig parse_config(std::string_view text);
ExperimentConfig load_config(const std::filesystem::path& path);
/// Throws ConfigError for out-of-range values (rank above the state size, faults outside the grid, ...).
void validate(const ExperimentConfig& config);

/// Reference, background and covariance shared by every experiment.
struct ExperimentSetup {
    ExperimentConfig config;
    Grid grid;
    ModelConfig model;
    StateVector reference;
    Trajectory reference_trajectory;
    std::shared_ptr<const BackgroundCov> background_cov;
    StateVector background;
};

/// Circular dam: h = 1 + exp(-r^2 / (2 * 0.5^2)) around the domain center, u = v = 0.
StateVector circular_dam(const Grid& grid);

ExperimentSetup build_setup(const ExperimentConfig& config);

/// All variables at every cell at each observation time; noise_frac = 0 gives perfect data.
/// R always uses the configured noise fraction.
ObservationSet observe_everything(const ExperimentSetup& setup, double noise_frac);

/// Verification state = background, C = identity.
Scenario make_scenario(const ExperimentSetup& setup, ObservationSet observations);

/// A numerical failure inside a named experiment phase.
class PhaseError : public Error {
public:
    PhaseError(std::string phase, const std::string& what) : Error(phase + ": " + what), phase_(std::move(phase)) {}
    const std::string& phase() const noexcept { return phase_; }

private:
    std::string phase_;
};

struct FlaggedObservation {
    Variable variable;
    std::size_t i;
    std::size_t j;
    double sensitivity;
};

struct ExperimentReport {
    std::string name;
    std::filesystem::path output_dir;
    /// Written files, relative to output_dir, in creation order.
    std::vector<std::filesystem::path> files;
    std::vector<std::pair<std::string, double>> phase_seconds;
    std::map<std::string, ConvergenceRecord> records;
    std::vector<FlaggedObservation> flags;
    std::vector<FlaggedObservation> outliers;
    /// Scalar results keyed by name (RMS values, similarities, comparisons).
    std::map<std::string, double> metrics;
};

/// Perfect then noisy assimilation with observation sensitivities for both.
ExperimentReport run_assimilation(const ExperimentConfig& config);
/// HIGH / LOW sensitivity partition and re-assimilation of each half.
ExperimentReport run_pruning(const ExperimentConfig& config);
/// Perfect data with fault_factor applied at fault_locations; flags the largest sensitivities.
ExperimentReport run_fault_detection(const ExperimentConfig& config);
/// Low-rank decomposition of T, spectrum, truncation curve (oracle scale) and dominant directions.
ExperimentReport run_spectrum_report(const ExperimentConfig& config);
/// Full and low-rank impact of a unit h innovation at each impact location.
ExperimentReport run_impact(const ExperimentConfig& config);

/// Observations whose |sensitivity| exceeds mean + 5 std of |sensitivity| over their variable.
std::vector<FlaggedObservation> sensitivity_outliers(const Grid& grid, const ObsSensitivity& sens);
/// The k largest |sensitivity| per variable, in descending order.
std::vector<FlaggedObservation> top_sensitivities(const Grid& grid, const ObsSensitivity& sens, std::size_t k);

/// Cosine of the angle between two vectors (0 when either is zero).
double cosine_similarity(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

/// Number formatting used by every CSV writer (17 significant digits, round-trip exact).
std::string format_number(double value);

}  // namespace swe4dvar

#pragma once

// Shared fixtures for the unit and acceptance tests.

#include <cstdint>
#include <random>

#include <Eigen/Dense>

#include "swe4dvar/experiments.hpp"

namespace swe4dvar::testing {

inline Eigen::VectorXd random_vector(std::size_t n, std::uint64_t seed, double scale = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, scale);
    Eigen::VectorXd v(static_cast<Eigen::Index>(n));
    for (auto& x : v) x = normal(rng);
    return v;
}

inline double relative_error(const Eigen::MatrixXd& approx, const Eigen::MatrixXd& exact) {
    return (approx - exact).norm() / exact.norm();
}

// Circular dam on [-3, 3]^2 with the correlation length held at 0.75 length units,
// which keeps the periodic Gaussian correlation positive definite on small grids.
inline ExperimentConfig desk_config(std::size_t q, std::size_t steps) {
    ExperimentConfig c;
    c.q = q;
    c.num_steps = steps;
    c.corr_dist_cells = static_cast<double>(q) / 8.0;
    c.rank = 3 * q * q;
    c.modes = c.rank;
    c.max_iters = 50;
    c.fault_locations.clear();
    c.impact_locations.clear();
    return c;
}

inline ExperimentSetup desk_setup(std::size_t q, std::size_t steps) { return build_setup(desk_config(q, steps)); }

inline Scenario desk_scenario(const ExperimentSetup& setup, double noise_frac) {
    return make_scenario(setup, observe_everything(setup, noise_frac));
}

// Analysis of the noisy desk scenario; cached per (q, steps) since several tests share it.
inline const MinimizeResult& desk_analysis(const ExperimentSetup& setup, const Scenario& scenario) {
    static std::map<std::pair<std::size_t, std::size_t>, MinimizeResult> cache;
    const auto key = std::make_pair(setup.grid.q(), setup.model.num_steps);
    auto it = cache.find(key);
    if (it == cache.end()) {
        MinimizeOptions options;
        options.max_iters = setup.config.max_iters;
        it = cache.emplace(key, minimize(scenario, setup.background, options)).first;
    }
    return it->second;
}

}  // namespace swe4dvar::testing

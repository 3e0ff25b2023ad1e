#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "swe4dvar/grid_state.hpp"
#include "swe4dvar/swe_model.hpp"

namespace swe4dvar {

/// Observations at one timestep: y_k, the selection H_k (flat state indices) and diag(R_k).
struct ObservationBlock {
    std::size_t time = 0;
    std::vector<std::size_t> indices;
    Eigen::VectorXd values;
    Eigen::VectorXd variances;

    std::size_t size() const noexcept { return indices.size(); }
};

/// Position of one observation inside an ObservationSet.
struct ObsKey {
    std::size_t slot;         // block index
    std::size_t time;         // timestep
    std::size_t state_index;  // flat state index observed
};

/// Observations ordered by time; the flat observation vector concatenates the blocks.
struct ObservationSet {
    std::vector<ObservationBlock> blocks;

    std::size_t size() const;
    std::vector<std::size_t> times() const;
    std::vector<ObsKey> keys() const;
    Eigen::VectorXd flat_values() const;
    Eigen::VectorXd flat_variances() const;
    /// Offset of each block in the flat vector.
    std::vector<std::size_t> offsets() const;
};

/// Throws InvalidDimensionError unless times are sorted, unique, within [0, num_steps],
/// indices are within the state and every variance is positive.
void validate(const ObservationSet& obs, const Grid& grid, std::size_t num_steps);

/// Every state index once: all variables at every cell.
std::vector<std::size_t> full_coverage(const Grid& grid);

/// y_k = H x_k^ref + eta with eta ~ N(0, noise_frac^2 max|H x^ref|^2) per variable;
/// noise_frac = 0 gives perfect observations. R is built from the noise-free values
/// with cov_noise_frac (see build_obs_cov). Observation times are ref.obs_times.
ObservationSet generate_observations(const Trajectory& ref, std::span<const std::size_t> indices,
                                     double noise_frac, std::uint64_t seed, double cov_noise_frac);

/// Keeps the observations whose flat position has keep[k] == true; empty blocks are dropped.
ObservationSet subset(const ObservationSet& obs, const std::vector<bool>& keep);

/// H_k x for each block.
Eigen::VectorXd select_block(const ObservationBlock& block, const Eigen::VectorXd& state);
/// H_k^T w for one block.
Eigen::VectorXd scatter_block(const ObservationBlock& block, const Eigen::VectorXd& w, std::size_t state_size);

}  // namespace swe4dvar

#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "swe4dvar/grid_state.hpp"

namespace swe4dvar {

struct ModelConfig {
    double gravity = 9.8;
    double dt = 1e-4;
    std::size_t num_steps = 100;
};

/// Throws InvalidDimensionError when dt <= 0, g < 0 or any value is non-finite.
void validate(const ModelConfig& config);

/// max over cells of (|u| + sqrt(g h)) dt/dx and (|v| + sqrt(g h)) dt/dy.
double cfl_number(const StateVector& state, const ModelConfig& config);

/// One Richtmyer Lax-Wendroff step on (h, hu, hv) with periodic boundaries.
/// Throws NonFiniteStateError, CflViolationError, or ModelError for non-positive h.
StateVector fwd_step(const StateVector& state, const ModelConfig& config);

/// Checkpointed forward trajectory x_0 ... x_N.
struct Trajectory {
    std::vector<StateVector> states;
    ModelConfig config;
    /// Sorted, unique timestep indices in [0, N] at which observations are taken.
    std::vector<std::size_t> obs_times;

    const Grid& grid() const { return states.front().grid(); }
    std::size_t num_steps() const { return states.size() - 1; }
    const StateVector& at_obs(std::size_t slot) const { return states[obs_times[slot]]; }
};

/// Runs config.num_steps steps from x0 keeping every state. Model errors carry the failing step.
Trajectory fwd_run(const StateVector& x0, const ModelConfig& config, std::vector<std::size_t> obs_times);

/// Tangent-linear perturbations at each observation time.
struct TangentSnapshot {
    std::vector<Eigen::VectorXd> perturbations;
};

/// delta x_k = M_{0,k} dx0 for every k in traj.obs_times.
TangentSnapshot tlm_run(const Trajectory& traj, const Eigen::VectorXd& dx0);

/// Tangent perturbations at every timestep 0..N.
std::vector<Eigen::VectorXd> tlm_run_all(const Trajectory& traj, const Eigen::VectorXd& dx0);

/// sum_k M_{0,k}^T f_k in one reverse sweep; forcings[s] is injected at traj.obs_times[s].
Eigen::VectorXd adj_run(const Trajectory& traj, std::span<const Eigen::VectorXd> forcings);

/// Tangent of a state-dependent forcing: returns d f_slot for a state perturbation at that obs time.
using ForcingJacobian = std::function<Eigen::VectorXd(std::size_t slot, const Eigen::VectorXd& dx_k)>;

/// Directional derivative of adj_run along tangent_dir, including the forcings'
/// own dependence on the trajectory (forcing_jacobian may be empty when the
/// forcings are state-independent).
Eigen::VectorXd soa_run(const Trajectory& traj, const Eigen::VectorXd& tangent_dir,
                        std::span<const Eigen::VectorXd> forcings, const ForcingJacobian& forcing_jacobian);

}  // namespace swe4dvar

#include "swe4dvar/swe_model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "swe4dvar/dual.hpp"
#include "swe4dvar/errors.hpp"
#include "swe_kernels.hpp"

namespace swe4dvar {

namespace {

detail::StepParams step_params(const Grid& grid, const ModelConfig& config) {
    return {grid.q(), config.dt / grid.dx(), config.dt / grid.dy(), config.gravity};
}

void check_vector(const Trajectory& traj, const Eigen::VectorXd& v, const char* what) {
    if (static_cast<std::size_t>(v.size()) != traj.grid().state_size()) {
        throw ShapeMismatchError(std::string(what) + " has " + std::to_string(v.size()) +
                                 " entries, state size is " + std::to_string(traj.grid().state_size()));
    }
}

void check_forcings(const Trajectory& traj, std::span<const Eigen::VectorXd> forcings) {
    if (forcings.size() != traj.obs_times.size()) {
        throw ShapeMismatchError("got " + std::to_string(forcings.size()) + " forcings for " +
                                 std::to_string(traj.obs_times.size()) + " observation times");
    }
    for (const auto& f : forcings) check_vector(traj, f, "forcing");
}

// Slot of each timestep in obs_times, or -1.
std::vector<long> obs_slots(const Trajectory& traj) {
    std::vector<long> slots(traj.states.size(), -1);
    for (std::size_t s = 0; s < traj.obs_times.size(); ++s) slots[traj.obs_times[s]] = static_cast<long>(s);
    return slots;
}

}  // namespace

void validate(const ModelConfig& config) {
    if (!(config.dt > 0.0) || !std::isfinite(config.dt)) throw InvalidDimensionError("dt must be positive");
    if (!(config.gravity >= 0.0) || !std::isfinite(config.gravity)) {
        throw InvalidDimensionError("gravity must be non-negative");
    }
}

double cfl_number(const StateVector& state, const ModelConfig& config) {
    const Grid& grid = state.grid();
    const std::size_t nc = grid.cell_count();
    double worst = 0.0;
    for (std::size_t c = 0; c < nc; ++c) {
        const double wave = std::sqrt(config.gravity * std::max(state[c], 0.0));
        worst = std::max(worst, (std::abs(state[nc + c]) + wave) * config.dt / grid.dx());
        worst = std::max(worst, (std::abs(state[2 * nc + c]) + wave) * config.dt / grid.dy());
    }
    return worst;
}

StateVector fwd_step(const StateVector& state, const ModelConfig& config) {
    validate(config);
    if (!state.all_finite()) throw NonFiniteStateError("state contains non-finite values", 0);
    const Grid& grid = state.grid();
    const auto h = state.field(Variable::H).data();
    if (!std::all_of(h.begin(), h.end(), [](double x) { return x > 0.0; })) {
        throw ModelError("layer thickness h must be strictly positive", 0);
    }
    const double cfl = cfl_number(state, config);
    if (cfl > 1.0) throw CflViolationError("CFL number " + std::to_string(cfl) + " exceeds 1", 0);

    detail::StepWork<double> work;
    const auto params = step_params(grid, config);
    const std::span<const double> in(state.values().data(), state.size());
    detail::step_forward(params, in, work);
    StateVector out(grid);
    detail::step_primitive_out(work, std::span<double>(out.values().data(), out.size()));
    if (!out.all_finite()) throw NonFiniteStateError("step produced non-finite values", 0);
    return out;
}

Trajectory fwd_run(const StateVector& x0, const ModelConfig& config, std::vector<std::size_t> obs_times) {
    validate(config);
    if (!std::is_sorted(obs_times.begin(), obs_times.end()) ||
        std::adjacent_find(obs_times.begin(), obs_times.end()) != obs_times.end()) {
        throw InvalidDimensionError("observation times must be sorted and unique");
    }
    if (!obs_times.empty() && obs_times.back() > config.num_steps) {
        throw InvalidDimensionError("observation time " + std::to_string(obs_times.back()) +
                                    " beyond final step " + std::to_string(config.num_steps));
    }
    Trajectory traj;
    traj.config = config;
    traj.obs_times = std::move(obs_times);
    traj.states.reserve(config.num_steps + 1);
    traj.states.push_back(x0);
    for (std::size_t k = 0; k < config.num_steps; ++k) {
        try {
            traj.states.push_back(fwd_step(traj.states.back(), config));
        } catch (ModelError& e) {
            e.set_step(k);
            throw;
        }
    }
    return traj;
}

namespace {

// Tangents at timesteps 0..last.
std::vector<Eigen::VectorXd> tlm_until(const Trajectory& traj, const Eigen::VectorXd& dx0, std::size_t last) {
    const auto params = step_params(traj.grid(), traj.config);
    const std::size_t n = traj.grid().state_size();
    std::vector<Eigen::VectorXd> out;
    out.reserve(traj.states.size());
    out.push_back(dx0);

    std::vector<Dual> in(n);
    std::vector<Dual> next(n);
    detail::StepWork<Dual> work;
    for (std::size_t k = 0; k < last; ++k) {
        const Eigen::VectorXd& x = traj.states[k].values();
        const Eigen::VectorXd& dx = out.back();
        for (std::size_t a = 0; a < n; ++a) in[a] = Dual(x[static_cast<Eigen::Index>(a)], dx[static_cast<Eigen::Index>(a)]);
        detail::step_forward<Dual>(params, in, work);
        detail::step_primitive_out<Dual>(work, next);
        Eigen::VectorXd d(static_cast<Eigen::Index>(n));
        for (std::size_t a = 0; a < n; ++a) d[static_cast<Eigen::Index>(a)] = next[a].d;
        out.push_back(std::move(d));
    }
    return out;
}

}  // namespace

std::vector<Eigen::VectorXd> tlm_run_all(const Trajectory& traj, const Eigen::VectorXd& dx0) {
    check_vector(traj, dx0, "tangent direction");
    return tlm_until(traj, dx0, traj.num_steps());
}

TangentSnapshot tlm_run(const Trajectory& traj, const Eigen::VectorXd& dx0) {
    check_vector(traj, dx0, "tangent direction");
    TangentSnapshot snap;
    if (traj.obs_times.empty()) return snap;
    auto all = tlm_until(traj, dx0, traj.obs_times.back());
    snap.perturbations.reserve(traj.obs_times.size());
    for (std::size_t t : traj.obs_times) snap.perturbations.push_back(std::move(all[t]));
    return snap;
}

Eigen::VectorXd adj_run(const Trajectory& traj, std::span<const Eigen::VectorXd> forcings) {
    check_forcings(traj, forcings);
    const std::size_t n = traj.grid().state_size();
    const auto params = step_params(traj.grid(), traj.config);
    const auto slots = obs_slots(traj);

    Eigen::VectorXd lam = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
    Eigen::VectorXd prev(static_cast<Eigen::Index>(n));
    detail::StepWork<double> work;
    for (std::size_t k = traj.states.size() - 1;; --k) {
        if (slots[k] >= 0) lam += forcings[static_cast<std::size_t>(slots[k])];
        if (k == 0) break;
        const Eigen::VectorXd& x = traj.states[k - 1].values();
        detail::step_adjoint<double>(params, std::span<const double>(x.data(), n),
                                     std::span<const double>(lam.data(), n), std::span<double>(prev.data(), n),
                                     work);
        lam.swap(prev);
    }
    return lam;
}

Eigen::VectorXd soa_run(const Trajectory& traj, const Eigen::VectorXd& tangent_dir,
                        std::span<const Eigen::VectorXd> forcings, const ForcingJacobian& forcing_jacobian) {
    check_forcings(traj, forcings);
    const auto tangents = tlm_run_all(traj, tangent_dir);
    const std::size_t n = traj.grid().state_size();
    const auto params = step_params(traj.grid(), traj.config);
    const auto slots = obs_slots(traj);

    std::vector<Dual> lam(n);
    std::vector<Dual> prev(n);
    std::vector<Dual> x(n);
    detail::StepWork<Dual> work;
    for (std::size_t k = traj.states.size() - 1;; --k) {
        if (slots[k] >= 0) {
            const auto slot = static_cast<std::size_t>(slots[k]);
            const Eigen::VectorXd& f = forcings[slot];
            Eigen::VectorXd df;
            if (forcing_jacobian) {
                df = forcing_jacobian(slot, tangents[k]);
                check_vector(traj, df, "forcing jacobian output");
            }
            for (std::size_t a = 0; a < n; ++a) {
                const auto ia = static_cast<Eigen::Index>(a);
                lam[a] += Dual(f[ia], forcing_jacobian ? df[ia] : 0.0);
            }
        }
        if (k == 0) break;
        const Eigen::VectorXd& xs = traj.states[k - 1].values();
        const Eigen::VectorXd& dxs = tangents[k - 1];
        for (std::size_t a = 0; a < n; ++a) {
            const auto ia = static_cast<Eigen::Index>(a);
            x[a] = Dual(xs[ia], dxs[ia]);
        }
        detail::step_adjoint<Dual>(params, x, lam, prev, work);
        lam.swap(prev);
    }
    Eigen::VectorXd out(static_cast<Eigen::Index>(n));
    for (std::size_t a = 0; a < n; ++a) out[static_cast<Eigen::Index>(a)] = lam[a].d;
    return out;
}

}  // namespace swe4dvar

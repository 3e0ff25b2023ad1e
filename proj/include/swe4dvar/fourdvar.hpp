#pragma once

#include <array>
#include <cstddef>
#include <deque>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "swe4dvar/covariance.hpp"
#include "swe4dvar/grid_state.hpp"
#include "swe4dvar/observations.hpp"
#include "swe4dvar/operator_core.hpp"
#include "swe4dvar/swe_model.hpp"

namespace swe4dvar {

/// Everything the 4D-Var cost needs, plus the verification functional
/// Psi(x) = 1/2 (x - x_v)^T C (x - x_v) with C diagonal.
struct Scenario {
    ModelConfig model;
    StateVector background;
    std::shared_ptr<const BackgroundCov> background_cov;
    ObservationSet observations;
    StateVector verification;
    Eigen::VectorXd verification_weights;

    const Grid& grid() const { return background.grid(); }
};

/// Throws on inconsistent shapes, observation times outside [0, N] or a missing covariance.
void validate(const Scenario& scenario);

/// Forward run from x0 checkpointing the scenario's observation times.
Trajectory run_model(const Scenario& scenario, const StateVector& x0);

/// f_k = H_k^T R_k^{-1} (H_k x_k - y_k) for each observation block.
std::vector<Eigen::VectorXd> misfit_forcings(const Scenario& scenario, const Trajectory& traj);

/// x -> H_k^T R_k^{-1} H_k x, the state derivative of the misfit forcing.
ForcingJacobian misfit_forcing_jacobian(const Scenario& scenario);

struct CostGradient {
    double cost = 0.0;
    Eigen::VectorXd gradient;
};

double cost(const StateVector& x0, const Scenario& scenario);
Eigen::VectorXd gradient(const StateVector& x0, const Scenario& scenario);
/// Cost and gradient from one forward and one adjoint run.
CostGradient evaluate(const StateVector& x0, const Scenario& scenario);

enum class HessVecMethod { Soa, FdGrad, GaussNewton };

HessVecMethod parse_hessvec_method(std::string_view name);
std::string_view hessvec_method_name(HessVecMethod method);

/// Hessian of the cost at a fixed point, applied matrix-free. The forward
/// trajectory and forcings at x0 are computed once and reused across products.
class HessianOperator {
public:
    /// fd_eps defaults to 1e-6 ||x0|| / ||u|| per product (FD_GRAD only).
    HessianOperator(const Scenario& scenario, StateVector x0, HessVecMethod method,
                    std::optional<double> fd_eps = std::nullopt);

    Eigen::VectorXd apply(const Eigen::VectorXd& u) const;
    LinearOperator as_operator() const;

    const Trajectory& trajectory() const noexcept { return traj_; }
    const StateVector& point() const noexcept { return x0_; }
    HessVecMethod method() const noexcept { return method_; }

private:
    Scenario scenario_;
    StateVector x0_;
    HessVecMethod method_;
    std::optional<double> fd_eps_;
    Trajectory traj_;
    std::vector<Eigen::VectorXd> forcings_;
    Eigen::VectorXd gradient_;  // FD_GRAD base gradient
};

/// One Hessian-vector product from scratch (includes the forward run).
/// u = 0 returns zero with a warning on stderr.
Eigen::VectorXd hess_vec(const StateVector& x0, const Eigen::VectorXd& u, const Scenario& scenario,
                         HessVecMethod method, std::optional<double> fd_eps = std::nullopt);

/// Stored (s, y) correction pairs; applies the L-BFGS inverse-Hessian approximation.
class LbfgsMemory {
public:
    explicit LbfgsMemory(std::size_t capacity = 10) : capacity_(capacity) {}

    /// Skips pairs without sufficient positive curvature. Returns whether the pair was stored.
    bool push(Eigen::VectorXd s, Eigen::VectorXd y);
    void clear() { pairs_.clear(); }
    std::size_t size() const noexcept { return pairs_.size(); }
    std::size_t capacity() const noexcept { return capacity_; }

    /// Two-loop recursion with H0 = (s^T y / y^T y) I from the newest pair.
    Eigen::VectorXd apply_inverse_hessian(const Eigen::VectorXd& v) const;

private:
    struct Pair {
        Eigen::VectorXd s;
        Eigen::VectorXd y;
        double rho;
    };
    std::size_t capacity_;
    std::deque<Pair> pairs_;
};

struct ConvergenceRecord {
    std::vector<double> cost;
    std::vector<double> grad_norm;
    /// RMS error per variable against the reference, when one was supplied.
    std::array<std::vector<double>, 3> rms;

    std::size_t size() const noexcept { return cost.size(); }
};

struct MinimizeOptions {
    std::size_t max_iters = 100;
    std::size_t memory = 10;
    double c1 = 1e-4;
    double c2 = 0.9;
    /// Truth used for the RMS columns of the record.
    const StateVector* reference = nullptr;
};

struct MinimizeResult {
    StateVector analysis;
    double cost = 0.0;
    ConvergenceRecord record;
    std::size_t iterations = 0;
    bool line_search_failed = false;
    LbfgsMemory memory;
};

/// Unconstrained L-BFGS with a strong-Wolfe line search. Runs max_iters iterations
/// unless ||grad|| < 1e-10 (1 + |J|); returns the best iterate seen.
MinimizeResult minimize(const Scenario& scenario, const StateVector& x_init, const MinimizeOptions& options);

/// sqrt(mean over cells of (x - x_ref)^2) for one variable.
double rms_error(const StateVector& x, const StateVector& x_ref, Variable var);

}  // namespace swe4dvar

#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "swe4dvar/fourdvar.hpp"

namespace swe4dvar {

/// Sensitivity of the verification functional to each observation, in ObservationSet order.
struct ObsSensitivity {
    Eigen::VectorXd values;
    std::vector<ObsKey> keys;

    /// State-shaped view of the sensitivities observed at `time` (unobserved entries are 0).
    StateVector as_field(const Grid& grid, std::size_t time) const;
    /// Flat positions of the observations of one variable.
    std::vector<std::size_t> positions_of(const Grid& grid, Variable var) const;
};

struct SupersensitivityOptions {
    double tol = 1e-8;
    std::size_t max_iters = 500;
    HessVecMethod method = HessVecMethod::Soa;
};

struct SupersensitivityResult {
    Eigen::VectorXd mu;
    std::vector<double> residual_history;
    bool converged = false;
    std::size_t iterations = 0;
};

/// grad Psi = C (x_a - x_v) for a diagonal weighting C.
Eigen::VectorXd verification_gradient(const StateVector& x_a, const StateVector& x_v, const Eigen::VectorXd& weights);

/// Solves (Hessian at x_a) mu = grad_psi with conjugate gradients.
/// NegativeCurvatureError propagates when the Hessian is indefinite at an inexact analysis.
SupersensitivityResult supersensitivity(const StateVector& x_a, const Scenario& scenario,
                                        const Eigen::VectorXd& grad_psi, const SupersensitivityOptions& options = {});
SupersensitivityResult supersensitivity(const HessianOperator& hessian, const Eigen::VectorXd& grad_psi,
                                        const SupersensitivityOptions& options = {});

/// R_k^{-1} H_k M_{0,k} mu for every observation block, from one tangent-linear run.
ObsSensitivity obs_sensitivity(const Trajectory& traj_at_xa, const Eigen::VectorXd& mu, const ObservationSet& obs);

/// Delta x_a = T^T Delta y: one adjoint run of the scaled innovations, then a Hessian solve.
Eigen::VectorXd obs_impact_apply(const Scenario& scenario, const StateVector& x_a, const Eigen::VectorXd& delta_y,
                                 const SupersensitivityOptions& options = {});

inline constexpr std::size_t kDenseOracleStateCap = 2000;

/// Dense desk-scale quantities at x_a: Hessian (n products), its inverse A_0, and T.
struct ImpactOracle {
    Eigen::MatrixXd hessian;
    Eigen::MatrixXd inverse_hessian;
    Eigen::MatrixXd impact;
};

/// Throws SizeGuardError when the state has more than kDenseOracleStateCap entries.
ImpactOracle build_impact_oracle(const Scenario& scenario, const StateVector& x_a,
                                 HessVecMethod method = HessVecMethod::Soa);

/// The m x n observation impact matrix T; see build_impact_oracle.
Eigen::MatrixXd build_full_impact_matrix(const Scenario& scenario, const StateVector& x_a,
                                         HessVecMethod method = HessVecMethod::Soa);

/// Row block R_k^{-1} H_k M_{0,k} applied to each column of `columns` (columns tangent-propagated concurrently).
Eigen::MatrixXd propagate_to_observations(const Trajectory& traj, const ObservationSet& obs,
                                          const Eigen::MatrixXd& columns);

enum class LowRankProvenance { Iterative, Randomized, DenseTruncated };
std::string_view provenance_name(LowRankProvenance p);

/// T_(p) = left * diag(singulars) * right^T, left in observation space, right in state space.
struct LowRankImpact {
    Eigen::MatrixXd left;
    Eigen::VectorXd singulars;
    Eigen::MatrixXd right;
    LowRankProvenance provenance = LowRankProvenance::DenseTruncated;
    std::size_t requested_rank = 0;
    /// False when the eigensolver did not converge or the sample range collapsed.
    bool complete = true;

    std::size_t rank() const noexcept { return static_cast<std::size_t>(singulars.size()); }
};

struct LowRankOptions {
    HessVecMethod method = HessVecMethod::Soa;
    double lanczos_tol = 1e-10;
    /// Operator applications allowed to Lanczos; 0 means 4 n.
    std::size_t lanczos_max_iters = 0;
};

/// Hessian eigenpairs (smallest p) -> tangent-linear images -> reduced symmetric eigenproblem.
LowRankImpact lowrank_iterative(const Scenario& scenario, const StateVector& x_a, std::size_t p,
                                const LowRankOptions& options = {});

/// Factors of the Hessian pseudoinverse A_0^+ = v_b diag(sigma_inv) u_a^T from a randomized range finder.
struct HessianPseudoInverse {
    Eigen::MatrixXd v_b;
    Eigen::VectorXd sigma;
    Eigen::VectorXd sigma_inv;
    Eigen::MatrixXd u_a;
    std::size_t effective_rank = 0;

    Eigen::MatrixXd dense() const { return v_b * sigma_inv.asDiagonal() * u_a.transpose(); }
};

inline constexpr double kPseudoInverseCutoff = 1e-12;

HessianPseudoInverse randomized_pseudoinverse(const HessianOperator& hessian, std::size_t p, std::uint64_t seed);

/// Randomized range finder on the Hessian, pseudoinverse, tangent-linear propagation.
LowRankImpact lowrank_randomized(const Scenario& scenario, const StateVector& x_a, std::size_t p,
                                 std::uint64_t seed, const LowRankOptions& options = {});

/// Best rank-p truncation of a dense T.
LowRankImpact lowrank_from_dense(const Eigen::MatrixXd& impact, std::size_t p);

/// Keeps the leading m modes.
LowRankImpact truncate(const LowRankImpact& lr, std::size_t m);

/// T_(p) v (state -> observations).
Eigen::VectorXd lowrank_apply(const LowRankImpact& lr, const Eigen::VectorXd& v);
/// T_(p)^T w (observations -> state).
Eigen::VectorXd lowrank_apply_transpose(const LowRankImpact& lr, const Eigen::VectorXd& w);
/// Dense T_(p).
Eigen::MatrixXd lowrank_dense(const LowRankImpact& lr);

struct DominantDirections {
    Eigen::VectorXd state;
    Eigen::VectorXd observations;
};

/// sum_{i < m} s_i^2 v_i on each side.
DominantDirections dominant_directions(const LowRankImpact& lr, std::size_t m);

enum class LowRankAlgorithm { Iterative, Randomized };
LowRankAlgorithm parse_lowrank_algorithm(std::string_view name);
std::string_view lowrank_algorithm_name(LowRankAlgorithm a);

struct TruncationPoint {
    std::size_t rank = 0;
    /// ||s - T_(p) grad Psi|| with s = T grad Psi the full sensitivity.
    double sensitivity_error = 0.0;
    /// ||T - T_(p)||_F; NaN when no dense oracle was built.
    double frobenius_error = 0.0;
};

struct TruncationCurve {
    std::vector<TruncationPoint> points;
    double sensitivity_norm = 0.0;
    /// ||T||_F; NaN without oracle.
    double impact_norm = 0.0;
};

/// Reconstruction errors of the chosen low-rank algorithm at each rank (rank 0 means
/// the zero approximation). Uses the dense oracle when the state fits under the cap,
/// otherwise the supersensitivity path for the reference sensitivity only.
TruncationCurve truncation_error_curve(const Scenario& scenario, const StateVector& x_a,
                                       const std::vector<std::size_t>& ranks, LowRankAlgorithm algorithm,
                                       std::uint64_t seed = 1, const LowRankOptions& options = {});

}  // namespace swe4dvar

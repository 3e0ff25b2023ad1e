#include "swe4dvar/obs_impact.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <random>
#include <string>

#include "swe4dvar/errors.hpp"
#include "swe4dvar/parallel.hpp"

namespace swe4dvar {

namespace {

void require_rank(std::size_t p, std::size_t n) {
    if (p < 1 || p > n) {
        throw InvalidDimensionError("rank " + std::to_string(p) + " outside [1, " + std::to_string(n) + "]");
    }
}

// Columns are drawn one after another from a single stream, so the first p columns
// do not depend on how many are requested.
Eigen::MatrixXd gaussian_columns(std::size_t n, std::size_t p, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::MatrixXd omega(n, p);
    for (std::size_t j = 0; j < p; ++j) {
        for (std::size_t i = 0; i < n; ++i) omega(i, j) = normal(rng);
    }
    return omega;
}

Eigen::MatrixXd apply_columns(const HessianOperator& hessian, const Eigen::MatrixXd& columns) {
    Eigen::MatrixXd out(columns.rows(), columns.cols());
    std::vector<Eigen::VectorXd> results(columns.cols());
    parallel_for(results.size(), [&](std::size_t j) { results[j] = hessian.apply(columns.col(j)); });
    for (std::size_t j = 0; j < results.size(); ++j) out.col(j) = results[j];
    return out;
}

// Orthonormal factors for left * right^T given a small middle product.
LowRankImpact refactor(const Eigen::MatrixXd& left, const Eigen::MatrixXd& right_orthonormal, LowRankProvenance prov,
                       std::size_t requested) {
    // left * right^T with right orthonormal: SVD of left gives U S W^T, so the
    // product is U S (right W)^T.
    SvdResult svd = dense_svd(left);
    LowRankImpact out;
    out.left = std::move(svd.u);
    out.singulars = std::move(svd.s);
    out.right = right_orthonormal * svd.v;
    out.provenance = prov;
    out.requested_rank = requested;
    return out;
}

}  // namespace

StateVector ObsSensitivity::as_field(const Grid& grid, std::size_t time) const {
    StateVector field(grid);
    for (std::size_t k = 0; k < keys.size(); ++k) {
        if (keys[k].time == time) field.values()[static_cast<Eigen::Index>(keys[k].state_index)] = values[k];
    }
    return field;
}

std::vector<std::size_t> ObsSensitivity::positions_of(const Grid& grid, Variable var) const {
    std::vector<std::size_t> out;
    for (std::size_t k = 0; k < keys.size(); ++k) {
        if (decode_index(grid, keys[k].state_index).variable == var) out.push_back(k);
    }
    return out;
}

Eigen::VectorXd verification_gradient(const StateVector& x_a, const StateVector& x_v, const Eigen::VectorXd& weights) {
    if (!(x_a.grid() == x_v.grid())) throw ShapeMismatchError("analysis and verification grids differ");
    if (static_cast<std::size_t>(weights.size()) != x_a.size()) throw ShapeMismatchError("weights have wrong size");
    return weights.cwiseProduct(x_a.values() - x_v.values());
}

SupersensitivityResult supersensitivity(const HessianOperator& hessian, const Eigen::VectorXd& grad_psi,
                                        const SupersensitivityOptions& options) {
    if (!grad_psi.allFinite()) throw InvalidDimensionError("verification gradient is not finite");
    CgResult cg = cg_solve(hessian.as_operator(), grad_psi, options.tol, options.max_iters);
    SupersensitivityResult out;
    out.mu = std::move(cg.x);
    out.residual_history = std::move(cg.residual_history);
    out.converged = cg.converged;
    out.iterations = cg.iterations;
    return out;
}

SupersensitivityResult supersensitivity(const StateVector& x_a, const Scenario& scenario,
                                        const Eigen::VectorXd& grad_psi, const SupersensitivityOptions& options) {
    const HessianOperator hessian(scenario, x_a, options.method);
    return supersensitivity(hessian, grad_psi, options);
}

ObsSensitivity obs_sensitivity(const Trajectory& traj_at_xa, const Eigen::VectorXd& mu, const ObservationSet& obs) {
    if (obs.blocks.size() != traj_at_xa.obs_times.size()) {
        throw ShapeMismatchError("trajectory was not checkpointed at the observation times");
    }
    ObsSensitivity out;
    out.keys = obs.keys();
    out.values = propagate_to_observations(traj_at_xa, obs, mu);
    return out;
}

Eigen::MatrixXd propagate_to_observations(const Trajectory& traj, const ObservationSet& obs,
                                          const Eigen::MatrixXd& columns) {
    const std::vector<std::size_t> offsets = obs.offsets();
    Eigen::MatrixXd out(static_cast<Eigen::Index>(obs.size()), columns.cols());
    parallel_for(static_cast<std::size_t>(columns.cols()), [&](std::size_t j) {
        const TangentSnapshot tl = tlm_run(traj, columns.col(static_cast<Eigen::Index>(j)));
        for (std::size_t s = 0; s < obs.blocks.size(); ++s) {
            const ObservationBlock& block = obs.blocks[s];
            const Eigen::VectorXd scaled = select_block(block, tl.perturbations[s]).cwiseQuotient(block.variances);
            out.block(static_cast<Eigen::Index>(offsets[s]), static_cast<Eigen::Index>(j), scaled.size(), 1) = scaled;
        }
    });
    return out;
}

Eigen::VectorXd obs_impact_apply(const Scenario& scenario, const StateVector& x_a, const Eigen::VectorXd& delta_y,
                                 const SupersensitivityOptions& options) {
    const ObservationSet& obs = scenario.observations;
    if (static_cast<std::size_t>(delta_y.size()) != obs.size()) {
        throw ShapeMismatchError("innovation vector does not match the observation count");
    }
    const HessianOperator hessian(scenario, x_a, options.method);
    const std::vector<std::size_t> offsets = obs.offsets();
    std::vector<Eigen::VectorXd> forcings;
    forcings.reserve(obs.blocks.size());
    for (std::size_t s = 0; s < obs.blocks.size(); ++s) {
        const ObservationBlock& block = obs.blocks[s];
        const Eigen::VectorXd w =
            delta_y.segment(static_cast<Eigen::Index>(offsets[s]), static_cast<Eigen::Index>(block.size()))
                .cwiseQuotient(block.variances);
        forcings.push_back(scatter_block(block, w, x_a.size()));
    }
    const Eigen::VectorXd rhs = adj_run(hessian.trajectory(), forcings);
    if (rhs.norm() == 0.0) return Eigen::VectorXd::Zero(rhs.size());
    return supersensitivity(hessian, rhs, options).mu;
}

ImpactOracle build_impact_oracle(const Scenario& scenario, const StateVector& x_a, HessVecMethod method) {
    const std::size_t n = x_a.size();
    if (n > kDenseOracleStateCap) {
        throw SizeGuardError("dense impact oracle needs n <= " + std::to_string(kDenseOracleStateCap) + ", got " +
                             std::to_string(n));
    }
    const HessianOperator hessian(scenario, x_a, method);
    ImpactOracle out;
    out.hessian = apply_columns(hessian, Eigen::MatrixXd::Identity(n, n));
    const Eigen::MatrixXd sym = 0.5 * (out.hessian + out.hessian.transpose());
    Eigen::LLT<Eigen::MatrixXd> llt(sym);
    if (llt.info() != Eigen::Success) throw FactorizationError("dense Hessian is not positive definite");
    out.inverse_hessian = llt.solve(Eigen::MatrixXd::Identity(n, n));
    out.impact = propagate_to_observations(hessian.trajectory(), scenario.observations, out.inverse_hessian);
    return out;
}

Eigen::MatrixXd build_full_impact_matrix(const Scenario& scenario, const StateVector& x_a, HessVecMethod method) {
    return build_impact_oracle(scenario, x_a, method).impact;
}

std::string_view provenance_name(LowRankProvenance p) {
    switch (p) {
        case LowRankProvenance::Iterative: return "iterative";
        case LowRankProvenance::Randomized: return "randomized";
        case LowRankProvenance::DenseTruncated: return "dense_truncated";
    }
    return "unknown";
}

LowRankImpact lowrank_iterative(const Scenario& scenario, const StateVector& x_a, std::size_t p,
                                const LowRankOptions& options) {
    const std::size_t n = x_a.size();
    require_rank(p, n);
    const HessianOperator hessian(scenario, x_a, options.method);
    const std::size_t budget = options.lanczos_max_iters ? options.lanczos_max_iters : 4 * n;
    const EigenPairs eig =
        lanczos_extremal(hessian.as_operator(), p, SpectrumEnd::Smallest, options.lanczos_tol, budget);
    if (!eig.converged) {
        std::cerr << "warning: Lanczos reached " << eig.values.size() << " of " << p
                  << " requested Hessian eigenpairs without full convergence\n";
    }
    if ((eig.values.array() <= 0.0).any()) throw NegativeCurvatureError("Hessian has a non-positive eigenvalue", {}, 0);

    // W = R^{-1} H M V, stacked over observation times.
    const Eigen::MatrixXd w = propagate_to_observations(hessian.trajectory(), scenario.observations, eig.vectors);
    const Eigen::VectorXd d_inv = eig.values.cwiseInverse();
    const Eigen::MatrixXd scaled = w * d_inv.asDiagonal();
    const SymEigResult red = dense_symeig(scaled.transpose() * scaled);

    // Descending order for the singular values.
    const Eigen::Index k = red.values.size();
    LowRankImpact out;
    out.singulars.resize(k);
    Eigen::MatrixXd v_red(k, k);
    for (Eigen::Index i = 0; i < k; ++i) {
        out.singulars[i] = std::sqrt(std::max(red.values[k - 1 - i], 0.0));
        v_red.col(i) = red.vectors.col(k - 1 - i);
    }
    out.right = eig.vectors * v_red;
    out.left = scaled * v_red;
    for (Eigen::Index i = 0; i < k; ++i) {
        if (out.singulars[i] > 0.0) out.left.col(i) /= out.singulars[i];
        else out.left.col(i).setZero();
    }
    out.provenance = LowRankProvenance::Iterative;
    out.requested_rank = p;
    out.complete = eig.converged && static_cast<std::size_t>(k) == p;
    return out;
}

HessianPseudoInverse randomized_pseudoinverse(const HessianOperator& hessian, std::size_t p, std::uint64_t seed) {
    const std::size_t n = hessian.point().size();
    require_rank(p, n);
    const Eigen::MatrixXd y = apply_columns(hessian, gaussian_columns(n, p, seed));
    const QrResult qr = qr_orthonormalize(y);
    // B^T = A_0^{-1} Q, so B = Q^T A_0^{-1}.
    const Eigen::MatrixXd bt = apply_columns(hessian, qr.q);
    const SvdResult svd = dense_svd(bt.transpose());

    HessianPseudoInverse out;
    out.v_b = svd.v;
    out.sigma = svd.s;
    out.u_a = qr.q * svd.u;
    out.sigma_inv = Eigen::VectorXd::Zero(svd.s.size());
    const double cutoff = svd.s.size() ? kPseudoInverseCutoff * svd.s.maxCoeff() : 0.0;
    for (Eigen::Index i = 0; i < svd.s.size(); ++i) {
        if (svd.s[i] > cutoff) {
            out.sigma_inv[i] = 1.0 / svd.s[i];
            ++out.effective_rank;
        }
    }
    return out;
}

LowRankImpact lowrank_randomized(const Scenario& scenario, const StateVector& x_a, std::size_t p,
                                 std::uint64_t seed, const LowRankOptions& options) {
    require_rank(p, x_a.size());
    const HessianOperator hessian(scenario, x_a, options.method);
    const HessianPseudoInverse pinv = randomized_pseudoinverse(hessian, p, seed);
    if (pinv.effective_rank < p) {
        std::cerr << "warning: randomized sample range has effective rank " << pinv.effective_rank << " of " << p
                  << '\n';
    }
    // T ~ (R^{-1} H M V_B) Sigma^+ U_A^T, then re-factored so that both sides are orthonormal.
    const Eigen::MatrixXd w = propagate_to_observations(hessian.trajectory(), scenario.observations, pinv.v_b);
    LowRankImpact out = refactor(w * pinv.sigma_inv.asDiagonal(), pinv.u_a, LowRankProvenance::Randomized, p);
    out.complete = pinv.effective_rank == p;
    return out;
}

LowRankImpact lowrank_from_dense(const Eigen::MatrixXd& impact, std::size_t p) {
    const std::size_t full = static_cast<std::size_t>(std::min(impact.rows(), impact.cols()));
    require_rank(p, full);
    const SvdResult svd = dense_svd(impact);
    LowRankImpact out;
    const auto k = static_cast<Eigen::Index>(p);
    out.left = svd.u.leftCols(k);
    out.singulars = svd.s.head(k);
    out.right = svd.v.leftCols(k);
    out.provenance = LowRankProvenance::DenseTruncated;
    out.requested_rank = p;
    return out;
}

LowRankImpact truncate(const LowRankImpact& lr, std::size_t m) {
    if (m > lr.rank()) throw InvalidDimensionError("cannot keep more modes than the rank");
    const auto k = static_cast<Eigen::Index>(m);
    LowRankImpact out = lr;
    out.left = lr.left.leftCols(k);
    out.singulars = lr.singulars.head(k);
    out.right = lr.right.leftCols(k);
    return out;
}

Eigen::VectorXd lowrank_apply(const LowRankImpact& lr, const Eigen::VectorXd& v) {
    if (v.size() != lr.right.rows()) throw ShapeMismatchError("state vector does not match the right factor");
    return lr.left * lr.singulars.cwiseProduct(lr.right.transpose() * v);
}

Eigen::VectorXd lowrank_apply_transpose(const LowRankImpact& lr, const Eigen::VectorXd& w) {
    if (w.size() != lr.left.rows()) throw ShapeMismatchError("observation vector does not match the left factor");
    return lr.right * lr.singulars.cwiseProduct(lr.left.transpose() * w);
}

Eigen::MatrixXd lowrank_dense(const LowRankImpact& lr) {
    return lr.left * lr.singulars.asDiagonal() * lr.right.transpose();
}

DominantDirections dominant_directions(const LowRankImpact& lr, std::size_t m) {
    if (m > lr.rank()) throw InvalidDimensionError("cannot combine more modes than the rank");
    const auto k = static_cast<Eigen::Index>(m);
    const Eigen::VectorXd weights = lr.singulars.head(k).cwiseAbs2();
    return {lr.right.leftCols(k) * weights, lr.left.leftCols(k) * weights};
}

LowRankAlgorithm parse_lowrank_algorithm(std::string_view name) {
    if (name == "iterative") return LowRankAlgorithm::Iterative;
    if (name == "randomized") return LowRankAlgorithm::Randomized;
    throw ConfigError("unknown low-rank algorithm '" + std::string(name) + "'");
}

std::string_view lowrank_algorithm_name(LowRankAlgorithm a) {
    return a == LowRankAlgorithm::Iterative ? "iterative" : "randomized";
}

TruncationCurve truncation_error_curve(const Scenario& scenario, const StateVector& x_a,
                                       const std::vector<std::size_t>& ranks, LowRankAlgorithm algorithm,
                                       std::uint64_t seed, const LowRankOptions& options) {
    const Eigen::VectorXd grad_psi =
        verification_gradient(x_a, scenario.verification, scenario.verification_weights);
    const bool have_oracle = x_a.size() <= kDenseOracleStateCap;

    TruncationCurve curve;
    Eigen::MatrixXd impact;
    Eigen::VectorXd sensitivity;
    if (have_oracle) {
        impact = build_full_impact_matrix(scenario, x_a, options.method);
        sensitivity = impact * grad_psi;
        curve.impact_norm = impact.norm();
    } else {
        const HessianOperator hessian(scenario, x_a, options.method);
        SupersensitivityOptions so;
        so.method = options.method;
        const SupersensitivityResult mu = supersensitivity(hessian, grad_psi, so);
        sensitivity = obs_sensitivity(hessian.trajectory(), mu.mu, scenario.observations).values;
        curve.impact_norm = std::numeric_limits<double>::quiet_NaN();
    }
    curve.sensitivity_norm = sensitivity.norm();

    for (std::size_t p : ranks) {
        TruncationPoint pt;
        pt.rank = p;
        if (p == 0) {
            pt.sensitivity_error = curve.sensitivity_norm;
            pt.frobenius_error = have_oracle ? curve.impact_norm : std::numeric_limits<double>::quiet_NaN();
        } else {
            const LowRankImpact lr = algorithm == LowRankAlgorithm::Iterative
                                         ? lowrank_iterative(scenario, x_a, p, options)
                                         : lowrank_randomized(scenario, x_a, p, seed, options);
            pt.sensitivity_error = (sensitivity - lowrank_apply(lr, grad_psi)).norm();
            pt.frobenius_error =
                have_oracle ? (impact - lowrank_dense(lr)).norm() : std::numeric_limits<double>::quiet_NaN();
        }
        curve.points.push_back(pt);
    }
    return curve;
}

}  // namespace swe4dvar

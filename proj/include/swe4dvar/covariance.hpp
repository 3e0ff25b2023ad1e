#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "swe4dvar/grid_state.hpp"

namespace swe4dvar {

/// Block-diagonal background error covariance:
///   h block  D C D  with D = diag(h_std) and C = L L^T a Gaussian-decay correlation,
///   u, v blocks  uv_std^2 I.
class BackgroundCov {
public:
    /// corr_chol is the lower-triangular factor L of the q^2 x q^2 h correlation.
    BackgroundCov(const Grid& grid, Eigen::VectorXd h_std, Eigen::MatrixXd corr_chol, double uv_std,
                  double jitter = 0.0);

    /// B0 = I.
    static BackgroundCov identity(const Grid& grid);

    const Grid& grid() const noexcept { return grid_; }
    const Eigen::VectorXd& h_std() const noexcept { return h_std_; }
    const Eigen::MatrixXd& corr_chol() const noexcept { return corr_chol_; }
    double uv_std() const noexcept { return uv_std_; }
    /// Diagonal jitter that was added to the correlation before factorization.
    double jitter() const noexcept { return jitter_; }

    /// B0 v.
    Eigen::VectorXd apply(const Eigen::VectorXd& v) const;
    /// Dense B0 (tests and desk-scale oracles only).
    Eigen::MatrixXd dense() const;

private:
    Grid grid_;
    Eigen::VectorXd h_std_;
    Eigen::MatrixXd corr_chol_;
    double uv_std_;
    double jitter_;
};

/// Periodic distance in cells between two cells of a q x q grid.
double periodic_cell_distance(std::size_t q, std::size_t a, std::size_t b);

/// C[a, b] = exp(-d(a, b)^2 / (2 L^2)), d the periodic cell distance.
Eigen::MatrixXd gaussian_correlation(const Grid& grid, double corr_dist_cells);

/// h_std = rel_std |h_ref| floored at 1e-3 rel_std max|h_ref|; the correlation is
/// factored densely, escalating a diagonal jitter (1e-10, 1e-6, 1e-2) when needed.
/// Throws FactorizationError when the jittered correlation is still not SPD.
BackgroundCov build_background_cov(const Grid& grid, const StateVector& ref_state, double rel_std,
                                   double corr_dist_cells, double uv_std);

/// B0^{-1} v via triangular solves on the h block. Throws FactorizationError on a singular factor.
Eigen::VectorXd apply_inv_background(const BackgroundCov& cov, const Eigen::VectorXd& v);

/// Correlated sample from N(0, B0); deterministic per seed.
Eigen::VectorXd sample_background_perturbation(const BackgroundCov& cov, std::uint64_t seed);

/// Diagonal observation error covariance.
struct ObsCov {
    Eigen::VectorXd variances;
    /// Variables whose observations were all zero and received the variance floor.
    std::vector<Variable> floored;
};

inline constexpr double kObsVarianceFloor = 1e-12;

/// variance = (noise_frac * max|y| over that variable)^2, shared by all observations
/// of the variable. All-zero variables get kObsVarianceFloor and a warning on stderr.
ObsCov build_obs_cov(std::span<const double> values, std::span<const Variable> variables, double noise_frac);

}  // namespace swe4dvar

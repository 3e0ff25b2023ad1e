#include "swe4dvar/covariance.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <iostream>
#include <random>

#include "swe4dvar/errors.hpp"

namespace swe4dvar {

BackgroundCov::BackgroundCov(const Grid& grid, Eigen::VectorXd h_std, Eigen::MatrixXd corr_chol, double uv_std,
                             double jitter)
    : grid_(grid), h_std_(std::move(h_std)), corr_chol_(std::move(corr_chol)), uv_std_(uv_std), jitter_(jitter) {
    const auto nc = static_cast<Eigen::Index>(grid_.cell_count());
    if (h_std_.size() != nc || corr_chol_.rows() != nc || corr_chol_.cols() != nc) {
        throw ShapeMismatchError("background covariance blocks do not match the grid");
    }
    if ((h_std_.array() < 0.0).any() || uv_std_ < 0.0) {
        throw InvalidDimensionError("standard deviations must be non-negative");
    }
}

BackgroundCov BackgroundCov::identity(const Grid& grid) {
    const auto nc = static_cast<Eigen::Index>(grid.cell_count());
    return BackgroundCov(grid, Eigen::VectorXd::Ones(nc), Eigen::MatrixXd::Identity(nc, nc), 1.0);
}

Eigen::VectorXd BackgroundCov::apply(const Eigen::VectorXd& v) const {
    const auto nc = static_cast<Eigen::Index>(grid_.cell_count());
    if (v.size() != 3 * nc) throw ShapeMismatchError("vector does not match the background covariance");
    Eigen::VectorXd out(v.size());
    Eigen::VectorXd t = h_std_.cwiseProduct(v.head(nc));
    t = corr_chol_.triangularView<Eigen::Lower>().transpose() * t;
    t = corr_chol_.triangularView<Eigen::Lower>() * t;
    out.head(nc) = h_std_.cwiseProduct(t);
    out.tail(2 * nc) = (uv_std_ * uv_std_) * v.tail(2 * nc);
    return out;
}

Eigen::MatrixXd BackgroundCov::dense() const {
    const auto nc = static_cast<Eigen::Index>(grid_.cell_count());
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(3 * nc, 3 * nc);
    const Eigen::MatrixXd c = corr_chol_ * corr_chol_.transpose();
    out.topLeftCorner(nc, nc) = h_std_.asDiagonal() * c * h_std_.asDiagonal();
    out.bottomRightCorner(2 * nc, 2 * nc).diagonal().setConstant(uv_std_ * uv_std_);
    return out;
}

double periodic_cell_distance(std::size_t q, std::size_t a, std::size_t b) {
    const auto wrap = [q](std::size_t s, std::size_t t) {
        const std::size_t d = s > t ? s - t : t - s;
        return static_cast<double>(std::min(d, q - d));
    };
    const double di = wrap(a / q, b / q);
    const double dj = wrap(a % q, b % q);
    return std::sqrt(di * di + dj * dj);
}

Eigen::MatrixXd gaussian_correlation(const Grid& grid, double corr_dist_cells) {
    if (!(corr_dist_cells > 0.0)) throw InvalidDimensionError("correlation distance must be positive");
    const std::size_t q = grid.q();
    const std::size_t nc = grid.cell_count();
    Eigen::MatrixXd c(static_cast<Eigen::Index>(nc), static_cast<Eigen::Index>(nc));
    const double denom = 2.0 * corr_dist_cells * corr_dist_cells;
    for (std::size_t a = 0; a < nc; ++a) {
        for (std::size_t b = 0; b <= a; ++b) {
            const double d = periodic_cell_distance(q, a, b);
            const double value = std::exp(-(d * d) / denom);
            c(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = value;
            c(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(a)) = value;
        }
    }
    return c;
}

BackgroundCov build_background_cov(const Grid& grid, const StateVector& ref_state, double rel_std,
                                   double corr_dist_cells, double uv_std) {
    if (!(rel_std > 0.0)) throw InvalidDimensionError("relative background std must be positive");
    if (!(uv_std > 0.0)) throw InvalidDimensionError("velocity background std must be positive");
    if (!(ref_state.grid() == grid)) throw ShapeMismatchError("reference state lives on a different grid");

    const auto h = ref_state.field(Variable::H).data();
    double hmax = 0.0;
    for (double x : h) hmax = std::max(hmax, std::abs(x));
    const double floor = rel_std * hmax * 1e-3;
    Eigen::VectorXd h_std(static_cast<Eigen::Index>(h.size()));
    for (std::size_t c = 0; c < h.size(); ++c) {
        h_std[static_cast<Eigen::Index>(c)] = std::max(rel_std * std::abs(h[c]), floor);
    }
    if (!(hmax > 0.0)) throw FactorizationError("reference height is identically zero");

    const Eigen::MatrixXd corr = gaussian_correlation(grid, corr_dist_cells);
    // The minimum-image Gaussian is not positive definite once L is a sizable fraction of
    // the period (about -4e-3 at q = 40, L = 5), hence the last step.
    constexpr std::array<double, 4> kJitter{0.0, 1e-10, 1e-6, 1e-2};
    for (double jitter : kJitter) {
        Eigen::MatrixXd shifted = corr;
        shifted.diagonal().array() += jitter;
        Eigen::LLT<Eigen::MatrixXd> llt(shifted);
        if (llt.info() == Eigen::Success && (llt.matrixL().toDenseMatrix().diagonal().array() > 0.0).all()) {
            return BackgroundCov(grid, std::move(h_std), llt.matrixL().toDenseMatrix(), uv_std, jitter);
        }
    }
    throw FactorizationError("h correlation is not positive definite after 3 jitter escalations");
}

Eigen::VectorXd apply_inv_background(const BackgroundCov& cov, const Eigen::VectorXd& v) {
    const auto nc = static_cast<Eigen::Index>(cov.grid().cell_count());
    if (v.size() != 3 * nc) throw ShapeMismatchError("vector does not match the background covariance");
    if ((cov.h_std().array() <= 0.0).any() || !(cov.uv_std() > 0.0) ||
        (cov.corr_chol().diagonal().array() <= 0.0).any()) {
        throw FactorizationError("background covariance factor is singular");
    }
    Eigen::VectorXd out(v.size());
    Eigen::VectorXd t = v.head(nc).cwiseQuotient(cov.h_std());
    cov.corr_chol().triangularView<Eigen::Lower>().solveInPlace(t);
    cov.corr_chol().triangularView<Eigen::Lower>().transpose().solveInPlace(t);
    out.head(nc) = t.cwiseQuotient(cov.h_std());
    out.tail(2 * nc) = v.tail(2 * nc) / (cov.uv_std() * cov.uv_std());
    return out;
}

Eigen::VectorXd sample_background_perturbation(const BackgroundCov& cov, std::uint64_t seed) {
    const auto nc = static_cast<Eigen::Index>(cov.grid().cell_count());
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::VectorXd z(3 * nc);
    for (Eigen::Index k = 0; k < z.size(); ++k) z[k] = normal(rng);
    Eigen::VectorXd out(3 * nc);
    out.head(nc) = cov.h_std().cwiseProduct(cov.corr_chol().triangularView<Eigen::Lower>() * z.head(nc));
    out.tail(2 * nc) = cov.uv_std() * z.tail(2 * nc);
    return out;
}

ObsCov build_obs_cov(std::span<const double> values, std::span<const Variable> variables, double noise_frac) {
    if (!(noise_frac > 0.0)) throw InvalidDimensionError("observation noise fraction must be positive");
    if (values.size() != variables.size()) throw ShapeMismatchError("values and variables differ in length");
    std::array<double, 3> max_abs{0.0, 0.0, 0.0};
    std::array<bool, 3> present{false, false, false};
    for (std::size_t k = 0; k < values.size(); ++k) {
        const auto v = static_cast<std::size_t>(variables[k]);
        max_abs[v] = std::max(max_abs[v], std::abs(values[k]));
        present[v] = true;
    }
    ObsCov cov;
    std::array<double, 3> variance{};
    for (Variable var : kAllVariables) {
        const auto v = static_cast<std::size_t>(var);
        const double sd = noise_frac * max_abs[v];
        variance[v] = sd * sd;
        if (present[v] && !(variance[v] > kObsVarianceFloor)) {
            if (variance[v] == 0.0) {
                cov.floored.push_back(var);
                std::cerr << "warning: all " << variable_name(var)
                          << " observations are zero; using variance floor " << kObsVarianceFloor << "\n";
            }
            variance[v] = std::max(variance[v], kObsVarianceFloor);
        }
    }
    cov.variances.resize(static_cast<Eigen::Index>(values.size()));
    for (std::size_t k = 0; k < values.size(); ++k) {
        cov.variances[static_cast<Eigen::Index>(k)] = variance[static_cast<std::size_t>(variables[k])];
    }
    return cov;
}

}  // namespace swe4dvar

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include <Eigen/Dense>

namespace swe4dvar {

/// Matrix-free linear operator.
struct LinearOperator {
    std::size_t dim = 0;
    std::function<Eigen::VectorXd(const Eigen::VectorXd&)> apply;
    bool symmetric = false;

    Eigen::VectorXd operator()(const Eigen::VectorXd& v) const { return apply(v); }
};

/// Wraps a dense matrix.
LinearOperator dense_operator(const Eigen::MatrixXd& m, bool symmetric);

/// Spectral norm estimate from `iterations` power iterations (deterministic start).
double estimate_norm(const LinearOperator& op, int iterations = 20);

struct CgResult {
    Eigen::VectorXd x;
    /// ||r|| before the first iteration and after each one.
    std::vector<double> residual_history;
    bool converged = false;
    std::size_t iterations = 0;
};

/// Conjugate gradients from x = 0. Stops at ||A x - b|| <= tol ||b|| or after max_iters (converged = false).
/// Throws NegativeCurvatureError (carrying the current iterate) when <p, A p> <= 0.
CgResult cg_solve(const LinearOperator& op, const Eigen::VectorXd& b, double tol, std::size_t max_iters);

enum class SpectrumEnd { Smallest, Largest };

struct EigenPairs {
    /// Ascending.
    Eigen::VectorXd values;
    /// Orthonormal columns matching values.
    Eigen::MatrixXd vectors;
    /// Lanczos residual estimates |beta_k s_k| per pair.
    Eigen::VectorXd residuals;
    double norm_estimate = 0.0;
    std::size_t iterations = 0;
    bool converged = false;
};

/// p extremal Ritz pairs by Lanczos with full reorthogonalization. The Krylov space
/// starts at min(n, 2p + 10) vectors and grows until every requested pair satisfies
/// ||A v - lambda v|| <= tol ||A||_est or max_iters operator applications are spent.
EigenPairs lanczos_extremal(const LinearOperator& op, std::size_t p, SpectrumEnd which, double tol,
                            std::size_t max_iters, std::uint64_t seed = 7);

struct QrResult {
    Eigen::MatrixXd q;
    /// Input columns kept (dependent columns are dropped).
    std::vector<std::size_t> retained;
};

/// Modified Gram-Schmidt with one reorthogonalization pass. A column whose norm after
/// projection falls below drop_tol times its original norm is dropped.
QrResult qr_orthonormalize(const Eigen::MatrixXd& columns, double drop_tol = 1e-10);

/// Thin SVD M = U diag(s) V^T with s descending (one-sided Jacobi).
struct SvdResult {
    Eigen::MatrixXd u;
    Eigen::VectorXd s;
    Eigen::MatrixXd v;
};

SvdResult dense_svd(const Eigen::MatrixXd& m);

/// Symmetric eigendecomposition M = V diag(values) V^T, values ascending
/// (Householder tridiagonalization followed by implicit QL).
struct SymEigResult {
    Eigen::VectorXd values;
    Eigen::MatrixXd vectors;
};

SymEigResult dense_symeig(const Eigen::MatrixXd& m);

}  // namespace swe4dvar

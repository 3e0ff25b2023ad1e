#include <doctest.h>

#include <cmath>

#include "support.hpp"
#include "swe4dvar/errors.hpp"
#include "swe4dvar/operator_core.hpp"

using namespace swe4dvar;
using swe4dvar::testing::random_vector;

namespace {

Eigen::MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
    return Eigen::Map<const Eigen::MatrixXd>(random_vector(static_cast<std::size_t>(rows * cols), seed).data(), rows, cols);
}

Eigen::MatrixXd random_spd(Eigen::Index n, std::uint64_t seed) {
    const Eigen::MatrixXd a = random_matrix(n, n, seed);
    return a * a.transpose() + static_cast<double>(n) * Eigen::MatrixXd::Identity(n, n);
}

double orthonormality_defect(const Eigen::MatrixXd& q) {
    return (q.transpose() * q - Eigen::MatrixXd::Identity(q.cols(), q.cols())).cwiseAbs().maxCoeff();
}

}  // namespace

TEST_CASE("cg closed forms") {
    const Eigen::VectorXd b = random_vector(7, 1);
    const CgResult id = cg_solve(dense_operator(Eigen::MatrixXd::Identity(7, 7), true), b, 1e-12, 10);
    CHECK(id.converged);
    CHECK(id.iterations == 1);
    CHECK((id.x - b).norm() <= 1e-15 * b.norm());

    Eigen::MatrixXd d(2, 2);
    d << 2, 0, 0, 4;
    const CgResult diag = cg_solve(dense_operator(d, true), Eigen::Vector2d(2, 8), 1e-12, 10);
    CHECK(diag.x[0] == doctest::Approx(1.0));
    CHECK(diag.x[1] == doctest::Approx(2.0));

    const CgResult zero = cg_solve(dense_operator(d, true), Eigen::Vector2d::Zero(), 1e-12, 10);
    CHECK(zero.converged);
    CHECK(zero.x.isZero(0.0));
}

TEST_CASE("cg against a dense solve") {
    const Eigen::MatrixXd a = random_spd(50, 2);
    const Eigen::VectorXd b = random_vector(50, 3);
    const CgResult r = cg_solve(dense_operator(a, true), b, 1e-10, 500);
    const Eigen::VectorXd direct = a.llt().solve(b);
    CHECK(r.converged);
    CHECK((r.x - direct).norm() < 1e-8 * direct.norm());
    CHECK((a * r.x - b).norm() <= 1e-10 * b.norm());
    REQUIRE(r.residual_history.size() == r.iterations + 1);
    // Monotone within a factor of ten of the tolerance.
    for (std::size_t k = 1; k < r.residual_history.size(); ++k) {
        CHECK(r.residual_history[k] <= std::max(10.0 * r.residual_history[k - 1], 10.0 * 1e-10 * b.norm()));
    }
}

TEST_CASE("cg flags non-convergence and negative curvature") {
    const Eigen::MatrixXd a = random_spd(40, 4);
    const CgResult capped = cg_solve(dense_operator(a, true), random_vector(40, 5), 1e-14, 2);
    CHECK_FALSE(capped.converged);
    CHECK(capped.iterations == 2);

    Eigen::MatrixXd indefinite = Eigen::MatrixXd::Identity(3, 3);
    indefinite(2, 2) = -1.0;
    try {
        cg_solve(dense_operator(indefinite, true), Eigen::Vector3d(1, 1, 1), 1e-10, 10);
        FAIL("expected negative curvature");
    } catch (const NegativeCurvatureError& e) {
        CHECK(e.iterate().size() == 3);
    }
}

TEST_CASE("lanczos on a diagonal operator") {
    const Eigen::VectorXd d = Eigen::VectorXd::LinSpaced(10, 1.0, 10.0);
    const LinearOperator op = dense_operator(d.asDiagonal().toDenseMatrix(), true);
    const EigenPairs small = lanczos_extremal(op, 3, SpectrumEnd::Smallest, 1e-10, 200);
    CHECK(small.converged);
    for (Eigen::Index k = 0; k < 3; ++k) {
        CHECK(small.values[k] == doctest::Approx(static_cast<double>(k + 1)).epsilon(1e-10));
        CHECK(std::abs(std::abs(small.vectors(k, k)) - 1.0) < 1e-8);
    }
    const EigenPairs large = lanczos_extremal(op, 2, SpectrumEnd::Largest, 1e-10, 200);
    CHECK(large.values[0] == doctest::Approx(9.0));
    CHECK(large.values[1] == doctest::Approx(10.0));
}

TEST_CASE("lanczos full spectrum against a dense eigensolver") {
    const Eigen::MatrixXd a = random_spd(20, 6);
    const EigenPairs all = lanczos_extremal(dense_operator(a, true), 20, SpectrumEnd::Smallest, 1e-12, 400);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> oracle(a);
    CHECK(all.converged);
    CHECK((all.values - oracle.eigenvalues()).cwiseAbs().maxCoeff() < 1e-8 * oracle.eigenvalues().maxCoeff());
    CHECK(orthonormality_defect(all.vectors) < 1e-10);
    for (Eigen::Index k = 0; k < 20; ++k) {
        const Eigen::VectorXd r = a * all.vectors.col(k) - all.values[k] * all.vectors.col(k);
        CHECK(r.norm() <= 1e-10 * (std::abs(all.values[k]) + all.norm_estimate));
    }
}

TEST_CASE("lanczos smallest pairs of a larger operator, with interlacing Ritz values") {
    const Eigen::MatrixXd a = random_spd(120, 7);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> oracle(a);
    const EigenPairs few = lanczos_extremal(dense_operator(a, true), 5, SpectrumEnd::Smallest, 1e-9, 600);
    CHECK(few.converged);
    CHECK((few.values - oracle.eigenvalues().head(5)).cwiseAbs().maxCoeff() < 1e-7 * oracle.eigenvalues().maxCoeff());
    CHECK(orthonormality_defect(few.vectors) < 1e-10);
    CHECK(few.norm_estimate == doctest::Approx(oracle.eigenvalues().maxCoeff()).epsilon(0.05));
    // Ritz values from a capped run never undercut the true ones (Cauchy interlacing).
    const EigenPairs capped = lanczos_extremal(dense_operator(a, true), 5, SpectrumEnd::Smallest, 1e-14, 20);
    for (Eigen::Index k = 0; k < capped.values.size(); ++k) {
        CHECK(capped.values[k] >= oracle.eigenvalues()[k] - 1e-10 * oracle.eigenvalues().maxCoeff());
    }
}

TEST_CASE("qr orthonormalization") {
    const Eigen::MatrixXd a = random_matrix(100, 10, 8);
    const QrResult qr = qr_orthonormalize(a);
    CHECK(qr.q.cols() == 10);
    CHECK(orthonormality_defect(qr.q) < 1e-12);
    // Same span: projecting the input onto Q loses nothing.
    CHECK((a - qr.q * (qr.q.transpose() * a)).norm() < 1e-12 * a.norm());

    const QrResult again = qr_orthonormalize(qr.q);
    for (Eigen::Index k = 0; k < 10; ++k) CHECK(std::abs(std::abs(again.q.col(k).dot(qr.q.col(k))) - 1.0) < 1e-12);

    Eigen::MatrixXd twins(6, 2);
    twins.col(0) = random_vector(6, 9);
    twins.col(1) = twins.col(0);
    const QrResult one = qr_orthonormalize(twins);
    CHECK(one.q.cols() == 1);
    CHECK(one.retained == std::vector<std::size_t>{0});
}

TEST_CASE("dense svd") {
    const SvdResult id = dense_svd(Eigen::MatrixXd::Identity(3, 3));
    CHECK(id.s.isOnes(1e-15));
    const SvdResult d = dense_svd(Eigen::Vector3d(1, 3, 2).asDiagonal().toDenseMatrix());
    CHECK(d.s.isApprox(Eigen::Vector3d(3, 2, 1), 1e-15));
    for (auto [rows, cols] : {std::pair{30, 20}, std::pair{20, 30}, std::pair{1, 5}}) {
        const Eigen::MatrixXd m = random_matrix(rows, cols, 10 + static_cast<std::uint64_t>(rows));
        const SvdResult svd = dense_svd(m);
        CHECK((svd.u * svd.s.asDiagonal() * svd.v.transpose() - m).norm() < 1e-12 * m.norm());
        CHECK(orthonormality_defect(svd.u) < 1e-12);
        CHECK(orthonormality_defect(svd.v) < 1e-12);
        for (Eigen::Index k = 1; k < svd.s.size(); ++k) CHECK(svd.s[k] <= svd.s[k - 1]);
        CHECK((svd.s.array() >= 0.0).all());
        const Eigen::JacobiSVD<Eigen::MatrixXd> oracle(m);
        CHECK((svd.s - oracle.singularValues()).norm() < 1e-12 * oracle.singularValues()[0]);
    }
    // Rank deficient input keeps orthonormal factors.
    Eigen::MatrixXd low = random_matrix(8, 2, 11) * random_matrix(2, 5, 12);
    const SvdResult lr = dense_svd(low);
    CHECK((lr.u * lr.s.asDiagonal() * lr.v.transpose() - low).norm() < 1e-12 * low.norm());
    CHECK(orthonormality_defect(lr.u) < 1e-12);
}

TEST_CASE("dense symmetric eigendecomposition") {
    const Eigen::MatrixXd a = random_matrix(25, 25, 13);
    const Eigen::MatrixXd sym = a + a.transpose();
    const SymEigResult e = dense_symeig(sym);
    CHECK((e.vectors * e.values.asDiagonal() * e.vectors.transpose() - sym).norm() < 1e-12 * sym.norm());
    CHECK(orthonormality_defect(e.vectors) < 1e-12);
    for (Eigen::Index k = 1; k < 25; ++k) CHECK(e.values[k] >= e.values[k - 1]);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> oracle(sym);
    CHECK((e.values - oracle.eigenvalues()).norm() < 1e-12 * sym.norm());
    CHECK(dense_symeig(Eigen::MatrixXd::Identity(4, 4)).values.isOnes(1e-15));
    CHECK_THROWS_AS(dense_symeig(Eigen::MatrixXd::Zero(2, 3)), ShapeMismatchError);
}

TEST_CASE("operator helpers") {
    const Eigen::MatrixXd a = random_spd(15, 14);
    const LinearOperator op = dense_operator(a, true);
    const Eigen::VectorXd u = random_vector(15, 15);
    const Eigen::VectorXd w = random_vector(15, 16);
    CHECK(op.dim == 15);
    CHECK(std::abs(op(u).dot(w) - u.dot(op(w))) <= 1e-10 * std::abs(op(u).dot(w)));
    CHECK((op(2.0 * u + w) - 2.0 * op(u) - op(w)).norm() <= 1e-12 * op(u).norm());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> oracle(a);
    CHECK(estimate_norm(op) == doctest::Approx(oracle.eigenvalues().maxCoeff()).epsilon(0.05));
}

#include "swe4dvar/operator_core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <string>

#include "swe4dvar/errors.hpp"

namespace swe4dvar {

LinearOperator dense_operator(const Eigen::MatrixXd& m, bool symmetric) {
    if (m.rows() != m.cols()) throw ShapeMismatchError("dense operator must be square");
    return {static_cast<std::size_t>(m.rows()), [m](const Eigen::VectorXd& v) -> Eigen::VectorXd { return m * v; },
            symmetric};
}

namespace {

Eigen::VectorXd random_unit(std::size_t n, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::VectorXd v(static_cast<Eigen::Index>(n));
    for (Eigen::Index k = 0; k < v.size(); ++k) v[k] = normal(rng);
    return v / v.norm();
}

void check_operand(const LinearOperator& op, const Eigen::VectorXd& v) {
    if (static_cast<std::size_t>(v.size()) != op.dim) {
        throw ShapeMismatchError("vector of size " + std::to_string(v.size()) + " for operator of dimension " +
                                 std::to_string(op.dim));
    }
}

}  // namespace

double estimate_norm(const LinearOperator& op, int iterations) {
    if (op.dim == 0) return 0.0;
    std::mt19937_64 rng(12345);
    Eigen::VectorXd v = random_unit(op.dim, rng);
    double norm = 0.0;
    for (int it = 0; it < iterations; ++it) {
        Eigen::VectorXd w = op(v);
        norm = w.norm();
        if (norm == 0.0) return 0.0;
        v = w / norm;
    }
    return norm;
}

CgResult cg_solve(const LinearOperator& op, const Eigen::VectorXd& b, double tol, std::size_t max_iters) {
    check_operand(op, b);
    if (!op.symmetric) throw InvalidDimensionError("conjugate gradients needs a symmetric operator");
    if (!b.allFinite()) throw InvalidDimensionError("right-hand side is not finite");

    CgResult result;
    result.x = Eigen::VectorXd::Zero(b.size());
    const double bnorm = b.norm();
    result.residual_history.push_back(bnorm);
    if (bnorm == 0.0) {
        result.converged = true;
        return result;
    }
    const double target = tol * bnorm;

    Eigen::VectorXd r = b;
    Eigen::VectorXd p = r;
    double rr = r.squaredNorm();
    while (result.iterations < max_iters) {
        const Eigen::VectorXd ap = op(p);
        const double curvature = p.dot(ap);
        if (!(curvature > 0.0)) {
            throw NegativeCurvatureError("operator is not positive definite (<p, A p> = " +
                                             std::to_string(curvature) + ")",
                                         result.x, result.iterations);
        }
        const double alpha = rr / curvature;
        result.x += alpha * p;
        r -= alpha * ap;
        ++result.iterations;
        double rr_new = r.squaredNorm();
        if (std::sqrt(rr_new) <= target) {
            // Confirm with the true residual; restart the recurrence if it has drifted.
            r = b - op(result.x);
            rr_new = r.squaredNorm();
            if (std::sqrt(rr_new) <= target) {
                result.residual_history.push_back(std::sqrt(rr_new));
                result.converged = true;
                return result;
            }
            result.residual_history.push_back(std::sqrt(rr_new));
            p = r;
            rr = rr_new;
            continue;
        }
        result.residual_history.push_back(std::sqrt(rr_new));
        p = r + (rr_new / rr) * p;
        rr = rr_new;
    }
    return result;
}

EigenPairs lanczos_extremal(const LinearOperator& op, std::size_t p, SpectrumEnd which, double tol,
                            std::size_t max_iters, std::uint64_t seed) {
    const std::size_t n = op.dim;
    if (!op.symmetric) throw InvalidDimensionError("Lanczos needs a symmetric operator");
    if (p < 1 || p > n) {
        throw InvalidDimensionError("requested " + std::to_string(p) + " eigenpairs of a dimension-" +
                                    std::to_string(n) + " operator");
    }
    std::mt19937_64 rng(seed);
    const double norm_est = estimate_norm(op);
    const double breakdown = 1e-12 * std::max(norm_est, std::numeric_limits<double>::min());
    const std::size_t step_cap = std::min(n, std::max(max_iters, p));

    std::size_t checkpoint = std::min(n, 2 * p + 10);
    Eigen::MatrixXd basis(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(std::min(n, step_cap)));
    std::vector<double> alpha;
    std::vector<double> beta;

    EigenPairs out;
    out.norm_estimate = norm_est;
    basis.col(0) = random_unit(n, rng);
    for (std::size_t j = 0;; ++j) {
        const auto jj = static_cast<Eigen::Index>(j);
        Eigen::VectorXd w = op(basis.col(jj));
        ++out.iterations;
        alpha.push_back(basis.col(jj).dot(w));
        w -= alpha.back() * basis.col(jj);
        if (j > 0) w -= beta.back() * basis.col(jj - 1);
        for (int pass = 0; pass < 2; ++pass) {
            const auto cols = basis.leftCols(jj + 1);
            w -= cols * (cols.transpose() * w);
        }
        double b = w.norm();
        const std::size_t k = j + 1;

        const bool at_checkpoint = k == checkpoint || k == step_cap;
        if (at_checkpoint) {
            Eigen::MatrixXd tri = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k));
            for (std::size_t i = 0; i < k; ++i) {
                tri(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) = alpha[i];
                if (i + 1 < k) {
                    tri(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i + 1)) = beta[i];
                    tri(static_cast<Eigen::Index>(i + 1), static_cast<Eigen::Index>(i)) = beta[i];
                }
            }
            const SymEigResult ritz = dense_symeig(tri);
            const std::size_t take = std::min(p, k);
            const std::size_t first = which == SpectrumEnd::Smallest ? 0 : k - take;
            const double scale = k == n ? 0.0 : b;
            Eigen::VectorXd residuals(static_cast<Eigen::Index>(take));
            bool ok = take == p;
            for (std::size_t i = 0; i < take; ++i) {
                const auto col = static_cast<Eigen::Index>(first + i);
                residuals[static_cast<Eigen::Index>(i)] =
                    std::abs(scale * ritz.vectors(static_cast<Eigen::Index>(k - 1), col));
                ok = ok && residuals[static_cast<Eigen::Index>(i)] <= tol * norm_est;
            }
            if (ok || k >= step_cap) {
                const auto first_i = static_cast<Eigen::Index>(first);
                const auto take_i = static_cast<Eigen::Index>(take);
                out.values = ritz.values.segment(first_i, take_i);
                out.vectors = basis.leftCols(static_cast<Eigen::Index>(k)) * ritz.vectors.middleCols(first_i, take_i);
                out.residuals = residuals;
                out.converged = ok;
                return out;
            }
            checkpoint = std::min(step_cap, checkpoint + std::max<std::size_t>(p, 10));
        }

        if (b <= breakdown) {
            // Invariant subspace found: continue with a fresh direction orthogonal to the basis.
            w = random_unit(n, rng);
            for (int pass = 0; pass < 2; ++pass) {
                const auto cols = basis.leftCols(jj + 1);
                w -= cols * (cols.transpose() * w);
            }
            w /= w.norm();
            b = 0.0;
            basis.col(jj + 1) = w;
        } else {
            basis.col(jj + 1) = w / b;
        }
        beta.push_back(b);
    }
}

QrResult qr_orthonormalize(const Eigen::MatrixXd& columns, double drop_tol) {
    QrResult out;
    out.q.resize(columns.rows(), columns.cols());
    Eigen::Index kept = 0;
    for (Eigen::Index j = 0; j < columns.cols(); ++j) {
        Eigen::VectorXd v = columns.col(j);
        const double norm0 = v.norm();
        if (!(norm0 > 0.0)) continue;
        for (int pass = 0; pass < 2; ++pass) {
            for (Eigen::Index i = 0; i < kept; ++i) v -= out.q.col(i).dot(v) * out.q.col(i);
        }
        const double norm = v.norm();
        if (norm <= drop_tol * norm0) continue;
        out.q.col(kept++) = v / norm;
        out.retained.push_back(static_cast<std::size_t>(j));
    }
    out.q.conservativeResize(Eigen::NoChange, kept);
    return out;
}

namespace {

// One-sided Jacobi on a tall matrix (rows >= cols).
SvdResult jacobi_svd_tall(const Eigen::MatrixXd& m) {
    const Eigen::Index rows = m.rows();
    const Eigen::Index cols = m.cols();
    Eigen::MatrixXd u = m;
    Eigen::MatrixXd v = Eigen::MatrixXd::Identity(cols, cols);
    constexpr double eps = std::numeric_limits<double>::epsilon();
    constexpr int kMaxSweeps = 80;
    bool rotated = true;
    int sweep = 0;
    for (; rotated && sweep < kMaxSweeps; ++sweep) {
        rotated = false;
        for (Eigen::Index a = 0; a + 1 < cols; ++a) {
            for (Eigen::Index b = a + 1; b < cols; ++b) {
                const double alpha = u.col(a).squaredNorm();
                const double beta = u.col(b).squaredNorm();
                const double gamma = u.col(a).dot(u.col(b));
                if (gamma == 0.0 || std::abs(gamma) <= eps * std::sqrt(alpha * beta)) continue;
                rotated = true;
                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (Eigen::Index r = 0; r < rows; ++r) {
                    const double x = u(r, a);
                    const double y = u(r, b);
                    u(r, a) = c * x - s * y;
                    u(r, b) = s * x + c * y;
                }
                for (Eigen::Index r = 0; r < cols; ++r) {
                    const double x = v(r, a);
                    const double y = v(r, b);
                    v(r, a) = c * x - s * y;
                    v(r, b) = s * x + c * y;
                }
            }
        }
    }
    if (rotated) throw ConvergenceError("one-sided Jacobi SVD did not converge");

    Eigen::VectorXd s(cols);
    for (Eigen::Index j = 0; j < cols; ++j) s[j] = u.col(j).norm();
    std::vector<Eigen::Index> order(static_cast<std::size_t>(cols));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index x, Eigen::Index y) { return s[x] > s[y]; });

    SvdResult out;
    out.u.resize(rows, cols);
    out.s.resize(cols);
    out.v.resize(cols, cols);
    const double smax = cols > 0 ? s[order.front()] : 0.0;
    std::vector<bool> set(static_cast<std::size_t>(cols), false);
    std::vector<Eigen::Index> empty;
    for (Eigen::Index k = 0; k < cols; ++k) {
        const Eigen::Index j = order[static_cast<std::size_t>(k)];
        out.s[k] = s[j];
        out.v.col(k) = v.col(j);
        if (s[j] > 0.0 && s[j] > eps * smax * static_cast<double>(rows)) {
            out.u.col(k) = u.col(j) / s[j];
            set[static_cast<std::size_t>(k)] = true;
        } else {
            empty.push_back(k);
        }
    }
    // Left vectors of (numerically) zero singular values: complete to an orthonormal set.
    Eigen::Index probe = 0;
    for (Eigen::Index k : empty) {
        for (; probe < rows; ++probe) {
            Eigen::VectorXd w = Eigen::VectorXd::Unit(rows, probe);
            for (int pass = 0; pass < 2; ++pass) {
                for (Eigen::Index c = 0; c < cols; ++c) {
                    if (set[static_cast<std::size_t>(c)]) w -= out.u.col(c).dot(w) * out.u.col(c);
                }
            }
            if (w.norm() > 1e-8) {
                out.u.col(k) = w / w.norm();
                set[static_cast<std::size_t>(k)] = true;
                ++probe;
                break;
            }
        }
    }
    return out;
}

}  // namespace

SvdResult dense_svd(const Eigen::MatrixXd& m) {
    if (m.rows() >= m.cols()) return jacobi_svd_tall(m);
    SvdResult t = jacobi_svd_tall(m.transpose());
    return {std::move(t.v), std::move(t.s), std::move(t.u)};
}

SymEigResult dense_symeig(const Eigen::MatrixXd& m) {
    if (m.rows() != m.cols()) throw ShapeMismatchError("symmetric eigendecomposition needs a square matrix");
    const Eigen::Index n = m.rows();
    SymEigResult out;
    if (n == 0) return out;
    Eigen::MatrixXd v = 0.5 * (m + m.transpose());
    Eigen::VectorXd d(n);
    Eigen::VectorXd e(n);

    // Householder reduction to tridiagonal form.
    for (Eigen::Index j = 0; j < n; ++j) d[j] = v(n - 1, j);
    for (Eigen::Index i = n - 1; i > 0; --i) {
        double scale = 0.0;
        double h = 0.0;
        for (Eigen::Index k = 0; k < i; ++k) scale += std::abs(d[k]);
        if (scale == 0.0) {
            e[i] = d[i - 1];
            for (Eigen::Index j = 0; j < i; ++j) {
                d[j] = v(i - 1, j);
                v(i, j) = 0.0;
                v(j, i) = 0.0;
            }
        } else {
            for (Eigen::Index k = 0; k < i; ++k) {
                d[k] /= scale;
                h += d[k] * d[k];
            }
            double f = d[i - 1];
            double g = std::sqrt(h);
            if (f > 0) g = -g;
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for (Eigen::Index j = 0; j < i; ++j) e[j] = 0.0;
            for (Eigen::Index j = 0; j < i; ++j) {
                f = d[j];
                v(j, i) = f;
                g = e[j] + v(j, j) * f;
                for (Eigen::Index k = j + 1; k <= i - 1; ++k) {
                    g += v(k, j) * d[k];
                    e[k] += v(k, j) * f;
                }
                e[j] = g;
            }
            f = 0.0;
            for (Eigen::Index j = 0; j < i; ++j) {
                e[j] /= h;
                f += e[j] * d[j];
            }
            const double hh = f / (h + h);
            for (Eigen::Index j = 0; j < i; ++j) e[j] -= hh * d[j];
            for (Eigen::Index j = 0; j < i; ++j) {
                f = d[j];
                g = e[j];
                for (Eigen::Index k = j; k <= i - 1; ++k) v(k, j) -= (f * e[k] + g * d[k]);
                d[j] = v(i - 1, j);
                v(i, j) = 0.0;
            }
        }
        d[i] = h;
    }
    for (Eigen::Index i = 0; i < n - 1; ++i) {
        v(n - 1, i) = v(i, i);
        v(i, i) = 1.0;
        const double h = d[i + 1];
        if (h != 0.0) {
            for (Eigen::Index k = 0; k <= i; ++k) d[k] = v(k, i + 1) / h;
            for (Eigen::Index j = 0; j <= i; ++j) {
                double g = 0.0;
                for (Eigen::Index k = 0; k <= i; ++k) g += v(k, i + 1) * v(k, j);
                for (Eigen::Index k = 0; k <= i; ++k) v(k, j) -= g * d[k];
            }
        }
        for (Eigen::Index k = 0; k <= i; ++k) v(k, i + 1) = 0.0;
    }
    for (Eigen::Index j = 0; j < n; ++j) {
        d[j] = v(n - 1, j);
        v(n - 1, j) = 0.0;
    }
    v(n - 1, n - 1) = 1.0;
    e[0] = 0.0;

    // Implicit QL on the tridiagonal matrix.
    for (Eigen::Index i = 1; i < n; ++i) e[i - 1] = e[i];
    e[n - 1] = 0.0;
    double f = 0.0;
    double tst1 = 0.0;
    constexpr double eps = std::numeric_limits<double>::epsilon();
    constexpr int kMaxIter = 100;
    for (Eigen::Index l = 0; l < n; ++l) {
        tst1 = std::max(tst1, std::abs(d[l]) + std::abs(e[l]));
        Eigen::Index mm = l;
        while (mm < n) {
            if (std::abs(e[mm]) <= eps * tst1) break;
            ++mm;
        }
        if (mm > l) {
            int iter = 0;
            do {
                if (++iter > kMaxIter) throw ConvergenceError("symmetric QL iteration did not converge");
                double g = d[l];
                double p = (d[l + 1] - g) / (2.0 * e[l]);
                double r = std::hypot(p, 1.0);
                if (p < 0) r = -r;
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                const double dl1 = d[l + 1];
                double h = g - d[l];
                for (Eigen::Index i = l + 2; i < n; ++i) d[i] -= h;
                f += h;
                p = d[mm];
                double c = 1.0;
                double c2 = c;
                double c3 = c;
                const double el1 = e[l + 1];
                double s = 0.0;
                double s2 = 0.0;
                for (Eigen::Index i = mm - 1; i >= l; --i) {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = std::hypot(p, e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    for (Eigen::Index k = 0; k < n; ++k) {
                        h = v(k, i + 1);
                        v(k, i + 1) = s * v(k, i) + c * h;
                        v(k, i) = c * v(k, i) - s * h;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
            } while (std::abs(e[l]) > eps * tst1);
        }
        d[l] += f;
        e[l] = 0.0;
    }

    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return d[a] < d[b]; });
    out.values.resize(n);
    out.vectors.resize(n, n);
    for (Eigen::Index k = 0; k < n; ++k) {
        out.values[k] = d[order[static_cast<std::size_t>(k)]];
        out.vectors.col(k) = v.col(order[static_cast<std::size_t>(k)]);
    }
    return out;
}

}  // namespace swe4dvar

#include "swe4dvar/fourdvar.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>

#include "swe4dvar/errors.hpp"

namespace swe4dvar {

void validate(const Scenario& scenario) {
    const Grid& grid = scenario.grid();
    validate(scenario.model);
    if (!scenario.background_cov) throw ConfigError("scenario has no background covariance");
    if (!(scenario.background_cov->grid() == grid) || !(scenario.verification.grid() == grid)) {
        throw ShapeMismatchError("scenario states and covariance live on different grids");
    }
    if (static_cast<std::size_t>(scenario.verification_weights.size()) != grid.state_size()) {
        throw ShapeMismatchError("verification weights do not match the state size");
    }
    validate(scenario.observations, grid, scenario.model.num_steps);
}

Trajectory run_model(const Scenario& scenario, const StateVector& x0) {
    return fwd_run(x0, scenario.model, scenario.observations.times());
}

std::vector<Eigen::VectorXd> misfit_forcings(const Scenario& scenario, const Trajectory& traj) {
    const auto& blocks = scenario.observations.blocks;
    std::vector<Eigen::VectorXd> forcings;
    forcings.reserve(blocks.size());
    const std::size_t n = traj.grid().state_size();
    for (std::size_t s = 0; s < blocks.size(); ++s) {
        const auto& b = blocks[s];
        const Eigen::VectorXd misfit = select_block(b, traj.states[b.time].values()) - b.values;
        forcings.push_back(scatter_block(b, misfit.cwiseQuotient(b.variances), n));
    }
    return forcings;
}

ForcingJacobian misfit_forcing_jacobian(const Scenario& scenario) {
    // Diagonal in state space: H^T R^{-1} H.
    std::vector<Eigen::VectorXd> diag;
    const std::size_t n = scenario.grid().state_size();
    for (const auto& b : scenario.observations.blocks) diag.push_back(scatter_block(b, b.variances.cwiseInverse(), n));
    return [diag = std::move(diag)](std::size_t slot, const Eigen::VectorXd& dx) -> Eigen::VectorXd {
        return diag[slot].cwiseProduct(dx);
    };
}

namespace {

double observation_term(const Scenario& scenario, const Trajectory& traj) {
    double acc = 0.0;
    for (const auto& b : scenario.observations.blocks) {
        const Eigen::VectorXd misfit = select_block(b, traj.states[b.time].values()) - b.values;
        acc += misfit.cwiseProduct(misfit).cwiseQuotient(b.variances).sum();
    }
    return 0.5 * acc;
}

}  // namespace

double cost(const StateVector& x0, const Scenario& scenario) {
    const Eigen::VectorXd dx = x0.values() - scenario.background.values();
    const double jb = 0.5 * dx.dot(apply_inv_background(*scenario.background_cov, dx));
    return jb + observation_term(scenario, run_model(scenario, x0));
}

CostGradient evaluate(const StateVector& x0, const Scenario& scenario) {
    const Eigen::VectorXd dx = x0.values() - scenario.background.values();
    const Eigen::VectorXd binv_dx = apply_inv_background(*scenario.background_cov, dx);
    const Trajectory traj = run_model(scenario, x0);
    const auto forcings = misfit_forcings(scenario, traj);
    CostGradient out;
    out.cost = 0.5 * dx.dot(binv_dx) + observation_term(scenario, traj);
    out.gradient = binv_dx + adj_run(traj, forcings);
    return out;
}

Eigen::VectorXd gradient(const StateVector& x0, const Scenario& scenario) { return evaluate(x0, scenario).gradient; }

HessVecMethod parse_hessvec_method(std::string_view name) {
    if (name == "soa" || name == "SOA") return HessVecMethod::Soa;
    if (name == "fd_grad" || name == "FD_GRAD") return HessVecMethod::FdGrad;
    if (name == "gauss_newton" || name == "GAUSS_NEWTON") return HessVecMethod::GaussNewton;
    throw ConfigError("unknown Hessian-vector method '" + std::string(name) + "'");
}

std::string_view hessvec_method_name(HessVecMethod method) {
    switch (method) {
        case HessVecMethod::Soa: return "soa";
        case HessVecMethod::FdGrad: return "fd_grad";
        case HessVecMethod::GaussNewton: return "gauss_newton";
    }
    return "?";
}

HessianOperator::HessianOperator(const Scenario& scenario, StateVector x0, HessVecMethod method,
                                 std::optional<double> fd_eps)
    : scenario_(scenario), x0_(std::move(x0)), method_(method), fd_eps_(fd_eps) {
    traj_ = run_model(scenario_, x0_);
    forcings_ = misfit_forcings(scenario_, traj_);
    if (method_ == HessVecMethod::FdGrad) {
        gradient_ = apply_inv_background(*scenario_.background_cov, x0_.values() - scenario_.background.values()) +
                    adj_run(traj_, forcings_);
    }
}

Eigen::VectorXd HessianOperator::apply(const Eigen::VectorXd& u) const {
    if (static_cast<std::size_t>(u.size()) != x0_.size()) throw ShapeMismatchError("Hessian operand has wrong size");
    const double unorm = u.norm();
    if (unorm == 0.0) return Eigen::VectorXd::Zero(u.size());
    const BackgroundCov& bcov = *scenario_.background_cov;
    switch (method_) {
        case HessVecMethod::Soa:
            return apply_inv_background(bcov, u) +
                   soa_run(traj_, u, forcings_, misfit_forcing_jacobian(scenario_));
        case HessVecMethod::GaussNewton: {
            const auto jac = misfit_forcing_jacobian(scenario_);
            const TangentSnapshot tl = tlm_run(traj_, u);
            std::vector<Eigen::VectorXd> scaled;
            scaled.reserve(tl.perturbations.size());
            for (std::size_t s = 0; s < tl.perturbations.size(); ++s) scaled.push_back(jac(s, tl.perturbations[s]));
            return apply_inv_background(bcov, u) + adj_run(traj_, scaled);
        }
        case HessVecMethod::FdGrad: {
            const double eps = fd_eps_.value_or(1e-6 * x0_.values().norm() / unorm);
            StateVector shifted(x0_.grid(), x0_.values() + eps * u);
            return (evaluate(shifted, scenario_).gradient - gradient_) / eps;
        }
    }
    return {};
}

LinearOperator HessianOperator::as_operator() const {
    return {x0_.size(), [this](const Eigen::VectorXd& v) { return apply(v); }, true};
}

Eigen::VectorXd hess_vec(const StateVector& x0, const Eigen::VectorXd& u, const Scenario& scenario,
                         HessVecMethod method, std::optional<double> fd_eps) {
    if (u.size() > 0 && u.norm() == 0.0) {
        std::cerr << "warning: Hessian-vector product with a zero direction\n";
        return Eigen::VectorXd::Zero(u.size());
    }
    return HessianOperator(scenario, x0, method, fd_eps).apply(u);
}

bool LbfgsMemory::push(Eigen::VectorXd s, Eigen::VectorXd y) {
    const double sy = s.dot(y);
    if (!(sy > std::numeric_limits<double>::epsilon() * s.norm() * y.norm())) return false;
    if (capacity_ == 0) return false;
    if (pairs_.size() == capacity_) pairs_.pop_front();
    pairs_.push_back({std::move(s), std::move(y), 1.0 / sy});
    return true;
}

Eigen::VectorXd LbfgsMemory::apply_inverse_hessian(const Eigen::VectorXd& v) const {
    Eigen::VectorXd r = v;
    if (pairs_.empty()) return r;
    std::vector<double> alpha(pairs_.size());
    for (std::size_t k = pairs_.size(); k-- > 0;) {
        const auto& p = pairs_[k];
        alpha[k] = p.rho * p.s.dot(r);
        r -= alpha[k] * p.y;
    }
    const auto& last = pairs_.back();
    r *= last.s.dot(last.y) / last.y.squaredNorm();
    for (std::size_t k = 0; k < pairs_.size(); ++k) {
        const auto& p = pairs_[k];
        const double beta = p.rho * p.y.dot(r);
        r += (alpha[k] - beta) * p.s;
    }
    return r;
}

namespace {

struct TrialPoint {
    double alpha = 0.0;
    double f = std::numeric_limits<double>::infinity();
    double slope = 0.0;
    Eigen::VectorXd g;
    bool valid = false;
};

class LineSearch {
public:
    LineSearch(const Scenario& scenario, const Eigen::VectorXd& x, const Eigen::VectorXd& dir, double f0,
               double slope0, double c1, double c2)
        : scenario_(scenario), x_(x), dir_(dir), f0_(f0), slope0_(slope0), c1_(c1), c2_(c2) {}

    /// Strong-Wolfe search; returns the accepted point or the best sufficient-decrease point seen.
    std::optional<TrialPoint> run(double alpha0) {
        TrialPoint prev;
        prev.alpha = 0.0;
        prev.f = f0_;
        prev.slope = slope0_;
        prev.valid = true;
        double alpha = alpha0;
        for (int it = 0; it < kMaxExpand; ++it) {
            TrialPoint cur = eval(alpha);
            if (!decreases(cur) || (it > 0 && cur.f >= prev.f && !flat(cur))) {
                return zoom(prev, cur);
            }
            if (std::abs(cur.slope) <= -c2_ * slope0_) return cur;
            if (cur.slope >= 0.0) return zoom(cur, prev);
            prev = cur;
            alpha *= 2.0;
        }
        return fallback();
    }

private:
    static constexpr int kMaxExpand = 20;
    static constexpr int kMaxZoom = 30;

    TrialPoint eval(double alpha) {
        TrialPoint t;
        t.alpha = alpha;
        try {
            const StateVector trial(scenario_.grid(), x_ + alpha * dir_);
            CostGradient cg = evaluate(trial, scenario_);
            if (std::isfinite(cg.cost) && cg.gradient.allFinite()) {
                t.f = cg.cost;
                t.g = std::move(cg.gradient);
                t.slope = t.g.dot(dir_);
                t.valid = true;
            }
        } catch (const ModelError&) {
        }
        if (decreases(t) && (!best_ || t.f < best_->f)) best_ = t;
        return t;
    }

    // Near the minimum the cost difference drowns in rounding, so within a small band around f0
    // sufficient decrease is judged from the slope instead (approximate Wolfe, Hager and Zhang).
    bool flat(const TrialPoint& t) const { return t.valid && std::abs(t.f - f0_) <= 1e-12 * std::abs(f0_); }

    bool decreases(const TrialPoint& t) const {
        if (!t.valid) return false;
        if (t.f <= f0_ + c1_ * t.alpha * slope0_) return true;
        return flat(t) && t.slope <= (2.0 * c1_ - 1.0) * slope0_;
    }

    std::optional<TrialPoint> zoom(TrialPoint lo, TrialPoint hi) {
        for (int it = 0; it < kMaxZoom; ++it) {
            const double a = lo.alpha;
            const double b = hi.alpha;
            double alpha = 0.5 * (a + b);
            if (hi.valid) {
                // Cubic interpolation through both end points, safeguarded to the interior.
                const double d1 = lo.slope + hi.slope - 3.0 * (lo.f - hi.f) / (a - b);
                const double disc = d1 * d1 - lo.slope * hi.slope;
                if (disc >= 0.0) {
                    const double d2 = std::copysign(std::sqrt(disc), b - a);
                    const double cand = b - (b - a) * (hi.slope + d2 - d1) / (hi.slope - lo.slope + 2.0 * d2);
                    const double lo_edge = std::min(a, b) + 0.1 * std::abs(b - a);
                    const double hi_edge = std::max(a, b) - 0.1 * std::abs(b - a);
                    if (std::isfinite(cand) && cand >= lo_edge && cand <= hi_edge) alpha = cand;
                }
            }
            TrialPoint cur = eval(alpha);
            if (!decreases(cur) || (cur.f >= lo.f && !flat(cur))) {
                hi = cur;
            } else {
                if (std::abs(cur.slope) <= -c2_ * slope0_) return cur;
                if (cur.slope * (hi.alpha - lo.alpha) >= 0.0) hi = lo;
                lo = cur;
            }
            if (std::abs(hi.alpha - lo.alpha) <= 1e-16 * std::max(1.0, std::abs(lo.alpha))) break;
        }
        return fallback();
    }

    std::optional<TrialPoint> fallback() {
        failed_ = true;
        return best_;
    }

public:
    bool failed() const noexcept { return failed_; }

private:
    const Scenario& scenario_;
    const Eigen::VectorXd& x_;
    const Eigen::VectorXd& dir_;
    double f0_;
    double slope0_;
    double c1_;
    double c2_;
    std::optional<TrialPoint> best_;
    bool failed_ = false;
};

void record_point(ConvergenceRecord& rec, const StateVector& x, double f, const Eigen::VectorXd& g,
                  const StateVector* reference) {
    rec.cost.push_back(f);
    rec.grad_norm.push_back(g.norm());
    if (reference) {
        for (Variable var : kAllVariables) rec.rms[static_cast<std::size_t>(var)].push_back(rms_error(x, *reference, var));
    }
}

}  // namespace

MinimizeResult minimize(const Scenario& scenario, const StateVector& x_init, const MinimizeOptions& options) {
    if (options.max_iters < 1) throw InvalidDimensionError("max_iters must be at least 1");
    validate(scenario);
    MinimizeResult result{x_init, 0.0, {}, 0, false, LbfgsMemory(options.memory)};

    Eigen::VectorXd x = x_init.values();
    CostGradient cur = evaluate(x_init, scenario);
    result.cost = cur.cost;
    record_point(result.record, x_init, cur.cost, cur.gradient, options.reference);

    for (std::size_t it = 0; it < options.max_iters; ++it) {
        if (cur.gradient.norm() < 1e-10 * (1.0 + std::abs(cur.cost))) break;

        Eigen::VectorXd dir = -result.memory.apply_inverse_hessian(cur.gradient);
        double slope = dir.dot(cur.gradient);
        double alpha0 = 1.0;
        if (result.memory.size() == 0 || !(slope < 0.0)) {
            result.memory.clear();
            dir = -cur.gradient;
            slope = dir.dot(cur.gradient);
            alpha0 = 1.0 / cur.gradient.norm();
        }

        LineSearch search(scenario, x, dir, cur.cost, slope, options.c1, options.c2);
        std::optional<TrialPoint> step = search.run(alpha0);
        if (!step) {
            result.line_search_failed = true;
            break;
        }
        const Eigen::VectorXd s = step->alpha * dir;
        Eigen::VectorXd y = step->g - cur.gradient;
        x += s;
        cur.cost = step->f;
        cur.gradient = std::move(step->g);
        result.memory.push(s, std::move(y));
        ++result.iterations;

        const StateVector xs(x_init.grid(), x);
        record_point(result.record, xs, cur.cost, cur.gradient, options.reference);
        if (cur.cost <= result.cost) {
            result.cost = cur.cost;
            result.analysis = xs;
        }
        if (search.failed()) {
            result.line_search_failed = true;
            break;
        }
    }
    return result;
}

double rms_error(const StateVector& x, const StateVector& x_ref, Variable var) {
    if (!(x.grid() == x_ref.grid())) throw ShapeMismatchError("RMS error between states on different grids");
    const auto a = x.field(var).data();
    const auto b = x_ref.field(var).data();
    double acc = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) acc += (a[k] - b[k]) * (a[k] - b[k]);
    return std::sqrt(acc / static_cast<double>(a.size()));
}

}  // namespace swe4dvar

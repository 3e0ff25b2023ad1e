#include <doctest.h>

#include <cmath>
#include <numeric>

#include "support.hpp"
#include "swe4dvar/fourdvar.hpp"

using namespace swe4dvar;
using swe4dvar::testing::desk_analysis;
using swe4dvar::testing::desk_scenario;
using swe4dvar::testing::desk_setup;
using swe4dvar::testing::random_vector;

namespace {

const ExperimentSetup& setup10() {
    static const ExperimentSetup s = desk_setup(10, 100);
    return s;
}

StateVector offset(const StateVector& x, const Eigen::VectorXd& d) { return StateVector(x.grid(), x.values() + d); }

double obs_term(const Scenario& sc, const StateVector& x0) {
    const Trajectory traj = run_model(sc, x0);
    double total = 0.0;
    for (const auto& block : sc.observations.blocks) {
        const Eigen::VectorXd r = select_block(block, traj.states[block.time].values()) - block.values;
        total += 0.5 * (r.array().square() / block.variances.array()).sum();
    }
    return total;
}

}  // namespace

TEST_CASE("observation generation") {
    const ExperimentSetup& s = setup10();
    const ObservationSet perfect = observe_everything(s, 0.0);
    REQUIRE(perfect.blocks.size() == 1);
    CHECK(perfect.blocks[0].time == 100);
    CHECK(perfect.size() == 300);
    CHECK(perfect.blocks[0].values == s.reference_trajectory.states[100].values());
    const ObservationSet a = observe_everything(s, 0.01);
    const ObservationSet b = observe_everything(s, 0.01);
    CHECK(a.flat_values() == b.flat_values());
    CHECK(a.flat_values() != perfect.flat_values());
    CHECK(a.flat_variances() == perfect.flat_variances());

    ExperimentConfig full;
    const Grid g = make_grid(full.q, full.domain_min, full.domain_max);
    CHECK(full_coverage(g).size() == 4800);
}

TEST_CASE("cost closed forms") {
    const ExperimentSetup& s = setup10();
    const Scenario perfect = make_scenario(s, generate_observations(
        fwd_run(s.background, s.model, {s.model.num_steps}), full_coverage(s.grid), 0.0, 1, 0.01));
    CHECK(cost(s.background, perfect) == 0.0);
    CHECK(gradient(s.background, perfect).isZero(0.0));

    const Scenario noisy = desk_scenario(s, 0.01);
    const double jo = obs_term(noisy, s.background);
    CHECK(jo > 0.0);
    CHECK(cost(s.background, noisy) == doctest::Approx(jo).epsilon(1e-13));

    Scenario doubled = noisy;
    const Trajectory traj = run_model(noisy, s.background);
    for (auto& block : doubled.observations.blocks) {
        const Eigen::VectorXd hx = select_block(block, traj.states[block.time].values());
        block.values = hx - 2.0 * (hx - block.values);
    }
    CHECK(cost(s.background, doubled) == doctest::Approx(4.0 * jo).epsilon(1e-12));
}

TEST_CASE("gradient passes central differences at random points") {
    const ExperimentSetup& s = setup10();
    const Scenario sc = desk_scenario(s, 0.01);
    const double eps = 1e-5;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const StateVector x0 = offset(s.background, 0.01 * random_vector(s.grid.state_size(), 100 + seed));
        Eigen::VectorXd d = random_vector(s.grid.state_size(), 200 + seed);
        d /= d.norm();
        const double directional = gradient(x0, sc).dot(d);
        const double fd = (cost(offset(x0, eps * d), sc) - cost(offset(x0, -eps * d), sc)) / (2.0 * eps);
        CHECK(std::abs(fd - directional) / std::abs(directional) < 1e-6);
    }
    const CostGradient both = evaluate(s.background, sc);
    CHECK(both.cost == cost(s.background, sc));
    CHECK(both.gradient == gradient(s.background, sc));
}

TEST_CASE("background-only gradient") {
    const ExperimentSetup& s = setup10();
    const Scenario sc = make_scenario(s, ObservationSet{});
    const Eigen::VectorXd dx = 0.02 * random_vector(s.grid.state_size(), 3);
    const StateVector x0 = offset(s.background, dx);
    const Eigen::VectorXd expected = apply_inv_background(*s.background_cov, dx);
    CHECK((gradient(x0, sc) - expected).norm() <= 1e-12 * expected.norm());
    CHECK(cost(x0, sc) == doctest::Approx(0.5 * dx.dot(expected)).epsilon(1e-12));
}

TEST_CASE("Hessian-vector products") {
    const ExperimentSetup& s = setup10();
    const Scenario sc = desk_scenario(s, 0.01);
    const StateVector x0 = offset(s.background, 0.01 * random_vector(s.grid.state_size(), 4));
    const auto n = static_cast<Eigen::Index>(s.grid.state_size());

    for (HessVecMethod m : {HessVecMethod::Soa, HessVecMethod::FdGrad, HessVecMethod::GaussNewton}) {
        CHECK(hess_vec(x0, Eigen::VectorXd::Zero(n), sc, m).isZero(0.0));
        CHECK(parse_hessvec_method(hessvec_method_name(m)) == m);
    }

    Eigen::VectorXd u = random_vector(s.grid.state_size(), 5);
    u /= u.norm();
    const Eigen::VectorXd soa = hess_vec(x0, u, sc, HessVecMethod::Soa);
    const Eigen::VectorXd fd = hess_vec(x0, u, sc, HessVecMethod::FdGrad, 1e-6);
    CHECK((soa - fd).norm() / soa.norm() < 1e-5);

    const HessianOperator h(sc, x0, HessVecMethod::Soa);
    const HessianOperator gn(sc, x0, HessVecMethod::GaussNewton);
    CHECK(h.apply(u) == soa);
    for (std::uint64_t seed = 10; seed < 13; ++seed) {
        const Eigen::VectorXd a = random_vector(s.grid.state_size(), seed);
        const Eigen::VectorXd b = random_vector(s.grid.state_size(), seed + 100);
        const double ab = h.apply(a).dot(b);
        CHECK(std::abs(ab - a.dot(h.apply(b))) <= 1e-10 * std::abs(ab));
        CHECK(a.dot(gn.apply(a)) > 0.0);
        const double gab = gn.apply(a).dot(b);
        CHECK(std::abs(gab - a.dot(gn.apply(b))) <= 1e-10 * std::abs(gab));
    }
}

TEST_CASE("SOA equals Gauss-Newton at zero residuals") {
    const ExperimentSetup& s = setup10();
    const StateVector x0 = offset(s.background, 0.01 * random_vector(s.grid.state_size(), 6));
    const Scenario sc = make_scenario(s, generate_observations(fwd_run(x0, s.model, {s.model.num_steps}),
                                                              full_coverage(s.grid), 0.0, 1, 0.01));
    const Eigen::VectorXd u = random_vector(s.grid.state_size(), 7);
    const Eigen::VectorXd soa = hess_vec(x0, u, sc, HessVecMethod::Soa);
    const Eigen::VectorXd gn = hess_vec(x0, u, sc, HessVecMethod::GaussNewton);
    CHECK((soa - gn).norm() <= 1e-10 * gn.norm());
}

TEST_CASE("quadratic toy converges to the normal-equations solution") {
    const Grid g = make_grid(4, -3.0, 3.0);
    StateVector truth = make_rest_state(g, 1.0);
    truth.values() += 0.1 * random_vector(g.state_size(), 8);
    const ModelConfig model{9.8, 1e-4, 0};
    auto bcov = std::make_shared<const BackgroundCov>(build_background_cov(g, truth, 0.05, 0.5, 0.05));
    const StateVector xb = offset(truth, sample_background_perturbation(*bcov, 9));
    const ObservationSet obs = generate_observations(fwd_run(truth, model, {0}), full_coverage(g), 0.01, 10, 0.01);
    const auto n = static_cast<Eigen::Index>(g.state_size());
    const Scenario sc{model, xb, bcov, obs, xb, Eigen::VectorXd::Ones(n)};

    const Eigen::MatrixXd binv = bcov->dense().inverse();
    const Eigen::VectorXd rinv = obs.flat_variances().cwiseInverse();
    const Eigen::MatrixXd a = binv + Eigen::MatrixXd(rinv.asDiagonal());
    const Eigen::VectorXd exact = a.llt().solve(binv * xb.values() + rinv.cwiseProduct(obs.flat_values()));

    MinimizeOptions opts;
    opts.max_iters = static_cast<std::size_t>(n);
    const MinimizeResult r = minimize(sc, xb, opts);
    CHECK(r.record.grad_norm.back() < 1e-8);
    CHECK((r.analysis.values() - exact).norm() <= 1e-8 * exact.norm());
    CHECK(r.iterations <= static_cast<std::size_t>(n));
}

TEST_CASE("minimization descends and keeps its bookkeeping") {
    const ExperimentSetup& s = setup10();
    const Scenario sc = desk_scenario(s, 0.01);
    const MinimizeResult& r = desk_analysis(s, sc);
    CHECK(r.cost <= cost(s.background, sc));
    CHECK(r.cost == doctest::Approx(cost(r.analysis, sc)).epsilon(1e-14));
    CHECK(r.record.size() == r.iterations + 1);
    for (std::size_t k = 1; k < r.record.size(); ++k) CHECK(r.record.cost[k] <= r.record.cost[k - 1]);
    CHECK(r.memory.size() <= 10);

    MinimizeOptions tracked;
    tracked.max_iters = 5;
    tracked.reference = &s.reference;
    const MinimizeResult few = minimize(sc, s.background, tracked);
    CHECK(few.iterations == 5);
    for (const auto& curve : few.record.rms) CHECK(curve.size() == 6);
    CHECK(few.record.rms[0][0] == rms_error(s.background, s.reference, Variable::H));
    CHECK(rms_error(few.analysis, s.reference, Variable::H) < few.record.rms[0][0]);
}

TEST_CASE("L-BFGS memory") {
    LbfgsMemory mem(3);
    const Eigen::VectorXd v = random_vector(6, 11);
    CHECK(mem.apply_inverse_hessian(v) == v);
    CHECK_FALSE(mem.push(Eigen::VectorXd::Unit(6, 0), -Eigen::VectorXd::Unit(6, 0)));
    CHECK(mem.size() == 0);
    // Secant pairs from a diagonal quadratic recover the inverse on their span.
    const Eigen::VectorXd d = Eigen::VectorXd::LinSpaced(6, 1.0, 6.0);
    for (int k = 0; k < 5; ++k) {
        const Eigen::VectorXd s = random_vector(6, 20 + static_cast<std::uint64_t>(k));
        CHECK(mem.push(s, d.cwiseProduct(s)));
    }
    CHECK(mem.size() == 3);
    CHECK(mem.capacity() == 3);
    const Eigen::VectorXd s = random_vector(6, 24);
    CHECK((mem.apply_inverse_hessian(d.cwiseProduct(s)) - s).norm() < 1e-12 * s.norm());
}

TEST_CASE("rms error") {
    const Grid g = make_grid(5, 0.0, 1.0);
    const StateVector ref = offset(make_rest_state(g, 1.0), random_vector(g.state_size(), 30));
    CHECK(rms_error(ref, ref, Variable::U) == 0.0);
    StateVector shifted = ref;
    shifted.values().head(25).array() += 0.3;
    CHECK(rms_error(shifted, ref, Variable::H) == doctest::Approx(0.3).epsilon(1e-14));
    CHECK(rms_error(shifted, ref, Variable::V) == 0.0);

    // Relabel cells with the same permutation in both states.
    const StateVector x = offset(ref, random_vector(g.state_size(), 31));
    std::vector<std::size_t> perm(25);
    std::iota(perm.begin(), perm.end(), 0);
    std::reverse(perm.begin(), perm.begin() + 13);
    StateVector px = x;
    StateVector pref = ref;
    for (std::size_t var = 0; var < 3; ++var) {
        for (std::size_t c = 0; c < 25; ++c) {
            px[var * 25 + c] = x[var * 25 + perm[c]];
            pref[var * 25 + c] = ref[var * 25 + perm[c]];
        }
    }
    for (Variable var : kAllVariables) {
        CHECK(rms_error(px, pref, var) == doctest::Approx(rms_error(x, ref, var)).epsilon(1e-14));
    }
}

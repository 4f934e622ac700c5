#include <doctest.h>

#include <cmath>

#include "fixtures.hpp"
#include "rsens/baseline_solver.hpp"

using namespace rsens;

namespace {

struct Desk {
    BrownianBatch batch;
    PathBatch state;
};

Desk desk(const MarketModel& model, std::size_t n, std::size_t steps, std::uint64_t seed) {
    Desk d;
    d.batch = sample_brownian(TimeGrid::uniform(model.horizon, steps), n, model.dim, seed);
    d.state = simulate_state(model, d.batch);
    return d;
}

}  // namespace

TEST_CASE("minimizer on a smooth quadratic") {
    Objective f = [](const std::vector<double>& t) {
        return Evaluation{(t[0] - 1.0) * (t[0] - 1.0) + 3.0 * (t[1] + 0.5) * (t[1] + 0.5) + t[0] * t[1], false};
    };
    const auto r = minimize(f, {0.0, 0.0}, OptimizerSettings{});
    CHECK(r.converged);
    // gradient: 2(a-1) + b = 0, 6(b+0.5) + a = 0 => a = 15/11, b = -8/11
    CHECK(r.theta[0] == doctest::Approx(15.0 / 11.0).epsilon(1e-5));
    CHECK(r.theta[1] == doctest::Approx(-8.0 / 11.0).epsilon(1e-5));
    for (std::size_t i = 1; i < r.trace.size(); ++i) CHECK(r.trace[i].objective <= r.trace[i - 1].objective);
}

TEST_CASE("minimax solver") {
    // max of two shifted paraboloids: kink at the origin, value 1
    MultiObjective two = [](const std::vector<double>& t) {
        return MultiEvaluation{{(t[0] - 1.0) * (t[0] - 1.0) + t[1] * t[1], (t[0] + 1.0) * (t[0] + 1.0) + t[1] * t[1]}};
    };
    auto r = minimize_max(two, {3.0, 2.0}, OptimizerSettings{});
    CHECK(r.converged);
    CHECK(r.value == doctest::Approx(1.0).epsilon(1e-8));
    CHECK(std::abs(r.theta[0]) <= 1e-6);
    CHECK(std::abs(r.theta[1]) <= 1e-4);

    // max(|a - 0.3|, |b + 0.2|) as four linear pieces
    MultiObjective linear = [](const std::vector<double>& t) {
        return MultiEvaluation{{t[0] - 0.3, 0.3 - t[0], t[1] + 0.2, -0.2 - t[1]}};
    };
    r = minimize_max(linear, {2.0, -1.0}, OptimizerSettings{});
    CHECK(r.value <= 1e-7);
    CHECK(r.theta[0] == doctest::Approx(0.3).epsilon(1e-6));
    CHECK(r.theta[1] == doctest::Approx(-0.2).epsilon(1e-6));

    // one smooth member reduces to ordinary minimization
    MultiObjective one = [](const std::vector<double>& t) {
        return MultiEvaluation{{(t[0] - 1.0) * (t[0] - 1.0) + 3.0 * (t[1] + 0.5) * (t[1] + 0.5) + t[0] * t[1]}};
    };
    r = minimize_max(one, {0.0, 0.0}, OptimizerSettings{});
    CHECK(r.theta[0] == doctest::Approx(15.0 / 11.0).epsilon(1e-5));
    CHECK(r.theta[1] == doctest::Approx(-8.0 / 11.0).epsilon(1e-5));
    for (std::size_t i = 1; i < r.trace.size(); ++i) CHECK(r.trace[i].objective < r.trace[i - 1].objective);

    // flat beyond a bound (as under projection): stops on the boundary region
    MultiObjective clipped = [](const std::vector<double>& t) {
        const double h = std::min(t[0], 0.5);
        return MultiEvaluation{{(h - 2.0) * (h - 2.0), 0.1 * h}, t[0] > 0.5};
    };
    r = minimize_max(clipped, {0.0}, OptimizerSettings{});
    CHECK(r.converged);
    CHECK(r.value == doctest::Approx(2.25).epsilon(1e-8));
    CHECK(r.theta[0] >= 0.5 - 1e-6);
}

TEST_CASE("minimizer falls back to the simplex on a kinked objective") {
    Objective f = [](const std::vector<double>& t) {
        return Evaluation{std::abs(t[0] - 0.3) + std::abs(t[1] + 0.2), false};
    };
    OptimizerSettings opt;
    opt.step_rule = StepRule::gradient_armijo;
    const auto r = minimize(f, {1.0, 1.0}, opt);
    CHECK(r.value < 1e-3);
}

TEST_CASE("perfect replication") {
    fixtures::Replication r;
    const auto d = desk(r.model, 20000, 50, 101);
    const auto res = solve_baseline(r.problem(), r.family(0.5), d.batch, d.state, OptimizerSettings{});
    CHECK(res.converged);
    CHECK(std::abs(res.strategy.theta()[0] - 1.0) <= 0.05);
    CHECK(res.value <= 1e-3 * 0.04);
    for (std::size_t i = 1; i < res.trace.size(); ++i) CHECK(res.trace[i].objective <= res.trace[i - 1].objective);
}

TEST_CASE("martingale with a constant target does not trade") {
    fixtures::ConstrainedGaussian cg;
    Problem pb = cg.problem();
    pb.cost.claim = linear_claim({0.0}, 0.4);  // zeta = 0.4, l ignores s
    const auto d = desk(cg.model, 20000, 20, 7);
    const auto res = solve_baseline(pb, Strategy::constant({0.7}, ball_constraint({0.0}, 2.0)), d.batch, d.state,
                                    OptimizerSettings{});
    CHECK(std::abs(res.strategy.theta()[0]) <= 0.05);
    CHECK(std::abs(res.value - 0.49) <= 3.0 * res.se + 1e-3);
}

TEST_CASE("singleton constraint") {
    fixtures::ConstrainedGaussian cg;
    const auto d = desk(cg.model, 5000, 20, 3);
    const auto one = Strategy::constant({0.3}, singleton_constraint({0.0}));
    const auto res = solve_baseline(cg.problem(), one, d.batch, d.state, OptimizerSettings{});
    const auto direct = estimate_objective(cg.cost, simulate_wealth(one, d.state, d.batch, cg.x0));
    CHECK(res.strategy.evaluate(0.0, 0.0, cg.model.s0)[0] == 0.0);
    CHECK(res.value == doctest::Approx(direct.mean).epsilon(1e-14));
    const auto foc = foc_residual(cg.problem(), res.strategy, {one}, d.batch, d.state);
    CHECK(foc.value == 0.0);
}

TEST_CASE("first-order residual in the replication case") {
    fixtures::Replication r;
    const auto d = desk(r.model, 20000, 50, 5);
    const auto star = solve_baseline(r.problem(), r.family(), d.batch, d.state, OptimizerSettings{});
    std::vector<Strategy> tests{r.family(0.0), r.family(0.5), r.family(1.5),
                                Strategy::piecewise(2, {0.3, 1.7}, r.constraint, 1.0)};
    const auto foc = foc_residual(r.problem(), star.strategy, tests, d.batch, d.state);
    CHECK(foc.value >= -3.0 * foc.se);

    const auto bad = foc_residual(r.problem(), r.family(0.0), {r.family(1.0)}, d.batch, d.state);
    CHECK(bad.value < -3.0 * bad.se);
}

TEST_CASE("first-order residual at a converged constrained optimum") {
    fixtures::ConstrainedGaussian cg;
    const auto d = desk(cg.model, 20000, 50, 8);
    const auto star = solve_baseline(cg.problem(), cg.family(0.2), d.batch, d.state, OptimizerSettings{});
    REQUIRE(star.converged);
    CHECK(star.strategy.theta()[0] == doctest::Approx(0.5));
    const auto foc = foc_residual(cg.problem(), star.strategy, {cg.family(0.0), cg.family(0.25)}, d.batch, d.state);
    CHECK(foc.value >= -3.0 * foc.se);
}

TEST_CASE("seed invariance of the optimal value") {
    fixtures::InteriorGaussian ig;
    SimSettings a{20000, 20, 1}, b{20000, 20, 2};
    const auto ra = solve_baseline(ig.problem(), ig.family(), a, OptimizerSettings{});
    const auto rb = solve_baseline(ig.problem(), ig.family(), b, OptimizerSettings{});
    CHECK(std::abs(ra.value - rb.value) <= 3.0 * std::hypot(ra.se, rb.se));
    // interior optimum h = v^2 / (v^2 + C) = 0.5
    CHECK(ra.strategy.theta()[0] == doctest::Approx(0.5).epsilon(0.05));
}

TEST_CASE("replication oracle") {
    fixtures::Replication r;
    auto o = mv_closed_form_oracle(r.model, r.cost, r.constraint, 1.0);
    CHECK(o.strategy.theta()[0] == 1.0);
    CHECK(o.value == 0.0);
    o = mv_closed_form_oracle(r.model, r.cost, r.constraint, 1.3);
    CHECK(o.value == doctest::Approx(0.09));
    auto drifted = r.model;
    drifted.drift = constant_drift({0.1});
    CHECK_THROWS_AS(mv_closed_form_oracle(drifted, r.cost, r.constraint, 1.0), UnsupportedError);
    CHECK_THROWS_AS(mv_closed_form_oracle(r.model, r.cost, box_constraint({0.0}, {0.5}), 1.0), UnsupportedError);
}

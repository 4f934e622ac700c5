#include <doctest.h>

#include <cmath>

#include "fixtures.hpp"
#include "rsens/mv_hedging.hpp"

using namespace rsens;

namespace {

struct Solved {
    BrownianBatch batch;
    PathBatch controls;
    TerminalData data;
    BsdeSolution sol;
};

Solved solve(const MarketModel& model, const CostSpec& cost, const Strategy& h, double x0, std::size_t n,
             std::size_t steps, std::uint64_t seed) {
    Solved s;
    s.batch = sample_brownian(TimeGrid::uniform(model.horizon, steps), n, model.dim, seed);
    s.controls = simulate_wealth(h, simulate_state(model, s.batch), s.batch, x0);
    s.data = terminal_data(cost, s.controls);
    s.sol = solve_bsde(s.data, s.controls, s.batch, RegressionBasis{2, model.dim});
    return s;
}

}  // namespace

TEST_CASE("conversion to the general cost") {
    const auto zero = mv_cost_to_general(make_mv_cost(0.0, {0.0}, {0.0}, linear_claim({1.0})));
    CHECK(zero.running.zero);
    CHECK(zero.terminal.gradient(3.0, 1.0)[0] == 4.0);
    CHECK(zero.terminal.gradient(3.0, 1.0)[1] == -4.0);
    CHECK(zero.terminal.value(3.0, 1.0) == 4.0);

    const auto g = mv_cost_to_general(make_mv_cost(1.0, {0.3, -0.2}, {1.0, 0.0, 0.0, 1.0}, linear_claim({1.0, 0.0})));
    CHECK_FALSE(g.running.zero);
    const std::vector<double> h{0.5, 2.0};
    std::vector<double> grad(3);
    g.running.gradient(0.4, 1.5, h, grad);
    CHECK(grad[0] == doctest::Approx(2.0 * 1.5 + 0.3 * 0.5 - 0.2 * 2.0));
    CHECK(grad[1] == doctest::Approx(1.5 * 0.3 + 2.0 * 0.5));
    CHECK(grad[2] == doctest::Approx(-1.5 * 0.2 + 2.0 * 2.0));
    CHECK(g.running.value(0.4, 1.5, h) == doctest::Approx(2.25 + 1.5 * (0.15 - 0.4) + 0.25 + 4.0));
}

TEST_CASE("non-convex running cost is rejected") {
    CHECK_THROWS_AS(mv_cost_to_general(make_mv_cost(0.0, {1.0}, {0.0}, linear_claim({1.0}))), ConfigError);
    CHECK_THROWS_AS(mv_cost_to_general(make_mv_cost(0.0, {0.0}, {-0.1}, linear_claim({1.0}))), ConfigError);
    CHECK_NOTHROW(mv_cost_to_general(make_mv_cost(1.0, {1.0}, {0.5}, linear_claim({1.0}))));
}

TEST_CASE("general pipeline reproduces the mean-variance BSDE data") {
    MarketModel m;
    m.drift = linear_drift({0.05});
    m.volatility = geometric_volatility({0.2});
    const auto mv = make_mv_cost(0.1, {0.05}, {0.05}, linear_claim({1.0}));
    const auto cost = mv_cost_to_general(mv);
    const auto s = solve(m, cost, Strategy::constant({0.7}, box_constraint({0.0}, {1.5})), 1.0, 2000, 10, 1);
    const std::size_t N = 10;
    for (std::size_t p = 0; p < 2000; ++p) {
        const double xi = s.controls.s(p, N)[0];
        CHECK(s.sol.y[p * (N + 1) + N] == 2.0 * (s.controls.x(p, N) - xi));
        for (std::size_t k = 0; k < N; ++k)
            CHECK(s.data.r[p * N + k] == doctest::Approx(2.0 * 0.1 * s.controls.x(p, k) + 0.05 * 0.7));
    }
}

TEST_CASE("maximum-principle residual examples") {
    fixtures::Replication r;
    const auto mv = make_mv_cost(0.0, {0.0}, {0.0}, linear_claim({1.0}));
    {
        const auto one = Strategy::constant({0.5}, singleton_constraint({0.5}));
        const auto s = solve(r.model, r.cost, one, 1.0, 2000, 10, 2);
        const auto res = smp_residual(r.model, mv, one, s.sol, s.controls, {one});
        CHECK(res.value == 0.0);
    }
    {
        const auto hedge = r.family(1.0);
        const auto s = solve(r.model, r.cost, hedge, 1.0, 5000, 20, 3);
        const auto res = smp_residual(r.model, mv, hedge, s.sol, s.controls, {r.family(0.0), r.family(1.5)});
        CHECK(std::abs(res.value) <= 1e-10);
    }
    {
        const auto idle = r.family(0.0);
        const auto s = solve(r.model, r.cost, idle, 1.0, 20000, 20, 4);
        const auto res = smp_residual(r.model, mv, idle, s.sol, s.controls, {r.family(1.0)});
        CHECK(res.value < -3.0 * res.se);
    }
}

TEST_CASE("mean-variance sensitivity: replication and shifted capital") {
    fixtures::Replication r;
    const auto mv = make_mv_cost(0.0, {0.0}, {0.0}, linear_claim({1.0}));
    SensitivityOptions options;
    options.random_probes = 1;
    const auto spec = make_robustness(4.0, 1.0, 1.0, {0.02, 0.04, 0.08, 0.16});
    const SimSettings sim{5000, 20, 7};
    const auto rep = mv_sensitivity(r.model, mv, 1.0, r.family(), spec, sim, OptimizerSettings{}, options);
    CHECK(std::abs(rep.sensitivity.value) <= 3.0 * rep.sensitivity.se + 1e-12);
    CHECK(std::abs(rep.slope) <= 3.0 * rep.slope_se + 1e-12);

    // x0 = s0 + c with H* = 1 pinned: Y = 2c, Ycal = -2c cancel pathwise
    const auto pinned = Strategy::constant({1.0}, singleton_constraint({1.0}));
    const auto shifted = mv_sensitivity(r.model, mv, 1.2, pinned, spec, sim, OptimizerSettings{}, options);
    CHECK(std::abs(shifted.sensitivity.value) <= 1e-6);
    CHECK(std::abs(shifted.slope) <= 3.0 * shifted.slope_se + 1e-9);
    CHECK(shifted.v0 == doctest::Approx(0.04).epsilon(1e-9));
}

TEST_CASE("mean-variance sensitivity in the constrained case matches the oracle") {
    fixtures::ConstrainedGaussian cg;
    const auto mv = make_mv_cost(0.0, {0.0}, {0.0}, linear_claim({1.0}));
    SensitivityOptions options;
    options.random_probes = 1;
    const auto spec = make_robustness(4.0, 1.0, 1.0, {0.02, 0.04, 0.08, 0.16});
    const SimSettings sim{40000, 50, 8};
    const auto rep = mv_sensitivity(cg.model, mv, cg.x0, cg.family(), spec, sim, OptimizerSettings{}, options);
    const double oracle = fixtures::gaussian_drift_term_discrete(4.0 / 3.0, 50) + 0.15;
    CHECK(std::abs(rep.sensitivity.value - oracle) <= 0.02 * oracle);
}

TEST_CASE("scaling the cost scales value, BSDE and sensitivity") {
    fixtures::ConstrainedGaussian cg;
    const double kappa = 2.5;
    CostSpec scaled = cg.cost;
    scaled.terminal = quadratic_terminal_cost(kappa);
    const auto a = solve(cg.model, cg.cost, cg.family(), cg.x0, 5000, 20, 9);
    const auto b = solve(cg.model, scaled, cg.family(), cg.x0, 5000, 20, 9);
    CHECK(estimate_objective(scaled, b.controls).mean ==
          doctest::Approx(kappa * estimate_objective(cg.cost, a.controls).mean).epsilon(1e-12));
    for (std::size_t i = 0; i < a.sol.y.size(); i += 37) CHECK(b.sol.y[i] == doctest::Approx(kappa * a.sol.y[i]).epsilon(1e-9));
    for (std::size_t i = 0; i < a.sol.z.size(); i += 37) CHECK(b.sol.z[i] == doctest::Approx(kappa * a.sol.z[i]).epsilon(1e-9));
    const auto spec = make_robustness(4.0, 1.0, 1.0, {0.1});
    CHECK(first_order_sensitivity(b.sol, b.controls, spec).value ==
          doctest::Approx(kappa * first_order_sensitivity(a.sol, a.controls, spec).value).epsilon(1e-9));
}

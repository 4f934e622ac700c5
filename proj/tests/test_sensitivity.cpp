#include <doctest.h>

#include <cmath>

#include "fixtures.hpp"
#include "rsens/sensitivity.hpp"

using namespace rsens;

namespace {

struct Setup {
    Problem problem;
    BrownianBatch batch;
    PathBatch state;
    PathBatch controls;
    BsdeSolution sol;
};

Setup setup(const Problem& pb, const Strategy& h, std::size_t n, std::size_t steps, std::uint64_t seed) {
    Setup s;
    s.problem = pb;
    s.batch = sample_brownian(TimeGrid::uniform(pb.model.horizon, steps), n, pb.model.dim, seed);
    s.state = simulate_state(pb.model, s.batch);
    s.controls = simulate_wealth(h, s.state, s.batch, pb.x0);
    s.sol = solve_bsde(terminal_data(pb.cost, s.controls), s.controls, s.batch, RegressionBasis{2, pb.model.dim});
    return s;
}

// f(x, y) = a x: Y = a, Z = 0 and the vector part vanishes.
CostSpec linear_terminal(double a) {
    CostSpec c;
    c.terminal.kind = "custom";
    c.terminal.value = [a](double x, double) { return a * x; };
    c.terminal.gradient = [a](double, double) { return std::array<double, 2>{a, 0.0}; };
    c.terminal.hessian = [](double, double) { return std::array<double, 3>{0.0, 0.0, 0.0}; };
    return c;
}

}  // namespace

TEST_CASE("first-order sensitivity is homogeneous in (gamma, eta)") {
    fixtures::ConstrainedGaussian cg;
    const auto s = setup(cg.problem(), cg.family(), 5000, 20, 1);
    const auto zero = first_order_sensitivity(s.sol, s.controls, make_robustness(4.0, 0.0, 0.0, {0.1}));
    CHECK(zero.value == 0.0);
    const auto half = first_order_sensitivity(s.sol, s.controls, make_robustness(4.0, 0.5, 0.5, {0.1}));
    const auto one = first_order_sensitivity(s.sol, s.controls, make_robustness(4.0, 1.0, 1.0, {0.1}));
    CHECK(one.value == 2.0 * half.value);
    CHECK(one.drift_term == 2.0 * half.drift_term);
    CHECK(one.vol_term == 2.0 * half.vol_term);
}

TEST_CASE("perfect replication has zero sensitivity") {
    fixtures::Replication r;
    const auto s = setup(r.problem(), r.family(1.0), 5000, 20, 2);
    const auto v = first_order_sensitivity(s.sol, s.controls, make_robustness(4.0, 1.0, 1.0, {0.1}));
    CHECK(std::abs(v.value) <= 3.0 * v.se + 1e-12);
}

TEST_CASE("constrained Gaussian matches the quadrature oracle") {
    fixtures::ConstrainedGaussian cg;
    const std::size_t N = 50;
    const auto s = setup(cg.problem(), cg.family(), 40000, N, 3);
    const double q = 4.0 / 3.0;
    const double oracle = fixtures::gaussian_drift_term_discrete(q, N) + 0.15;
    const auto v = first_order_sensitivity(s.sol, s.controls, make_robustness(4.0, 1.0, 1.0, {0.1}));
    CHECK(std::abs(v.value - oracle) <= 0.02 * oracle);
    CHECK(v.vol_term == doctest::Approx(0.15).epsilon(0.02));
}

TEST_CASE("quadrature oracles reproduce the frozen values") {
    const double q = 4.0 / 3.0;
    CHECK(fixtures::gaussian_drift_term_continuous(q) + 0.15 ==
          doctest::Approx(fixtures::kGaussianSensitivityContinuous).epsilon(1e-9));
    CHECK(fixtures::gaussian_drift_term_discrete(q, 100) + 0.15 ==
          doctest::Approx(fixtures::kGaussianSensitivityDiscrete100).epsilon(1e-9));
    // sanity of the Gaussian moment routine: E|Z|^2 = 1, E|1 + 0 Z| = 1, E|Z| = sqrt(2/pi)
    CHECK(fixtures::abs_gaussian_moment(0.0, 1.0, 2.0) == doctest::Approx(1.0).epsilon(1e-10));
    CHECK(fixtures::abs_gaussian_moment(0.0, 1.0, 1.0) == doctest::Approx(std::sqrt(2.0 / M_PI)).epsilon(1e-10));
}

TEST_CASE("adversarial drift for a constant density") {
    fixtures::ConstrainedGaussian cg;
    Problem pb = cg.problem();
    pb.cost = linear_terminal(-0.6);
    const auto s = setup(pb, cg.family(), 2000, 10, 4);
    const auto spec = make_robustness(4.0, 1.0, 1.0, {0.1});
    const auto dir = adversarial_direction(s.sol, s.controls, spec, RegressionBasis{2, 1});
    // phi = Y H = -0.3: b̃ = sign(phi) / T^{1/p}
    for (double b : dir.fields.drift) CHECK(b == doctest::Approx(-1.0).epsilon(1e-6));
    CHECK(dir.degenerate_vol);
    CHECK_FALSE(dir.degenerate_drift);
    const auto pr = pairing(s.sol, s.controls, dir);
    CHECK(pr.drift.mean == doctest::Approx(0.3).epsilon(1e-6));
}

TEST_CASE("zero densities give degenerate directions") {
    fixtures::Replication r;
    const auto s = setup(r.problem(), r.family(1.0), 2000, 10, 5);
    const auto dir = adversarial_direction(s.sol, s.controls, make_robustness(4.0, 1.0, 1.0, {0.1}), RegressionBasis{2, 1});
    CHECK(dir.degenerate_drift);
    CHECK(dir.degenerate_vol);
    for (double b : dir.fields.drift) CHECK(b == 0.0);
    for (double v : dir.fields.vol) CHECK(v == 0.0);
}

TEST_CASE("directions are unit and the adversary attains the dual norm") {
    fixtures::ConstrainedGaussian cg;
    const auto s = setup(cg.problem(), cg.family(), 20000, 25, 6);
    const auto spec = make_robustness(4.0, 1.0, 1.0, {0.1});
    const RegressionBasis basis{2, 1};
    const auto adv = adversarial_direction(s.sol, s.controls, spec, basis);
    const double dt = s.controls.grid.dt();
    CHECK(lp_norm({adv.fields.drift, 20000, 25, 1}, dt, 4.0).value == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(hp_norm({adv.fields.vol, 20000, 25, 1}, dt, 4.0).value == doctest::Approx(1.0).epsilon(1e-9));
    const auto v = first_order_sensitivity(s.sol, s.controls, spec);
    const auto pa = pairing(s.sol, s.controls, adv);
    CHECK(pa.drift.mean == doctest::Approx(v.drift_term).epsilon(0.01));
    CHECK(pa.vol.mean == doctest::Approx(v.vol_term).epsilon(0.01));
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const auto rnd = random_direction(s.controls, basis, 4.0, seed);
        CHECK(lp_norm({rnd.fields.drift, 20000, 25, 1}, dt, 4.0).value == doctest::Approx(1.0).epsilon(1e-9));
        const auto pr = pairing(s.sol, s.controls, rnd);
        CHECK(pr.drift.mean <= pa.drift.mean + 3.0 * std::hypot(pr.drift.se, pa.drift.se));
        CHECK(pr.vol.mean <= pa.vol.mean + 3.0 * std::hypot(pr.vol.se, pa.vol.se));
    }
}

// Brute force over a parametric adapted family psi_k * exp(c . features(t, x, s)). The regression adversary is not
// the exact adapted maximizer, so it only has to come close to the family optimum.
TEST_CASE("vol adversary against a brute-force adapted search") {
    MarketModel m;
    m.drift = linear_drift({0.05});
    m.volatility = geometric_volatility({0.2});
    const std::size_t n = 20000, N = 5;
    const auto cost = mv_cost_to_general(make_mv_cost(0.0, {0.0}, {0.05}, softplus_call({1.0}, 1.0, 0.25)));
    const auto batch = sample_brownian(TimeGrid::uniform(1.0, N), n, 1, 11);
    const auto ctl = simulate_wealth(Strategy::constant({0.3}, box_constraint({0.0}, {1.5})), simulate_state(m, batch),
                                     batch, 1.0);
    const auto sol = solve_bsde(terminal_data(cost, ctl), ctl, batch, RegressionBasis{2, 1});
    const auto spec = make_robustness(4.0, 1.0, 1.0, {0.1});
    const double dual = first_order_sensitivity(sol, ctl, spec).vol_term;
    const double adv = pairing(sol, ctl, adversarial_direction(sol, ctl, spec, RegressionBasis{2, 1})).vol.mean;

    const auto psi = vol_density(sol, ctl);
    const double dt = 1.0 / N;
    auto ratio = [&](const std::vector<double>& c) {
        std::vector<double> v(n * N);
        double pr = 0.0;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t k = 0; k < N; ++k) {
                const double t = k * dt, x = ctl.x(p, k), sk = ctl.s(p, k)[0];
                const std::size_t i = p * N + k;
                v[i] = psi[i] * std::exp(c[0] * sk + c[1] * x + c[2] * t + c[3] * sk * sk + c[4] * x * sk + c[5] * x * x);
                pr += psi[i] * v[i];
            }
        return pr * dt / n / hp_norm({v, n, N, 1}, dt, 4.0).value;
    };
    OptimizerSettings o;
    o.max_iters = 200;
    const auto best = minimize([&](const std::vector<double>& c) { return Evaluation{-ratio(c), false}; },
                               std::vector<double>(6, 0.0), o);
    const double brute = -best.value;
    CHECK(brute >= ratio(std::vector<double>(6, 0.0)));
    CHECK(brute <= dual);
    CHECK(adv <= dual);
    CHECK(adv >= 0.99 * brute);
}

TEST_CASE("pairing identity: trivial and exact cases") {
    fixtures::ConstrainedGaussian cg;
    const auto spec = make_robustness(4.0, 1.0, 1.0, {0.1});
    {
        const auto s = setup(cg.problem(), cg.family(), 2000, 10, 7);
        const auto dir = random_direction(s.controls, RegressionBasis{2, 1}, 4.0, 3);
        const auto c = pairing_identity_check(s.problem, s.controls, s.sol, dir, 0.0, spec, s.batch);
        CHECK(c.lhs == 0.0);
        CHECK(c.rhs == 0.0);
    }
    {
        Problem pb = cg.problem();
        pb.cost = linear_terminal(0.8);
        const auto s = setup(pb, cg.family(), 2000, 10, 8);
        PerturbationDirection dir;
        dir.fields = DirectionFields::zeros(2000, 10, 1);
        for (auto& b : dir.fields.drift) b = 1.0;
        const auto c = pairing_identity_check(s.problem, s.controls, s.sol, dir, 0.05, spec, s.batch);
        // both sides equal eps * a * H * T
        CHECK(c.lhs == doctest::Approx(0.05 * 0.8 * 0.5).epsilon(1e-9));
        CHECK(c.rhs == doctest::Approx(c.lhs).epsilon(1e-9));
    }
}

TEST_CASE("pairing identity at desk scale") {
    fixtures::ConstrainedGaussian cg;
    const auto spec = make_robustness(4.0, 1.0, 1.0, {0.1});
    const auto s = setup(cg.problem(), cg.family(), 20000, 25, 9);
    const auto adv = adversarial_direction(s.sol, s.controls, spec, RegressionBasis{2, 1});
    for (double eps : {0.05, 0.025}) {
        const auto c = pairing_identity_check(s.problem, s.controls, s.sol, adv, eps, spec, s.batch);
        CHECK(std::abs(c.lhs - c.rhs) <= 3.0 * c.diff_se + eps * eps);
    }
}

TEST_CASE("scenario grid") {
    std::vector<PerturbationDirection> dirs(2);
    const std::vector<double> radial{0.0, 0.5, 1.0};
    const auto g = scenario_grid(dirs, radial);
    REQUIRE(g.size() == 5);
    CHECK(g[0].direction == nullptr);
    CHECK(g[1].direction == &dirs[0]);
    CHECK(g[4].tau == 1.0);
    const std::vector<double> no_center{1.0};
    CHECK(scenario_grid(dirs, no_center).size() == 2);
}

TEST_CASE("inline quadratic running cost matches the generic evaluation") {
    fixtures::InteriorGaussian ig;
    const auto s = setup(ig.problem(), ig.family(0.4), 2000, 20, 14);
    const auto spec = make_robustness(4.0, 1.0, 1.0, {0.1});
    const auto dir = adversarial_direction(s.sol, s.controls, spec, RegressionBasis{2, 1});
    const std::vector<PerturbationDirection> dirs{dir};
    const auto scen = scenario_grid(dirs, std::vector<double>{0.0, 0.5, 1.0});
    Problem generic = s.problem;
    REQUIRE(generic.cost.running.scalar_quadratic.has_value());
    generic.cost.running.scalar_quadratic.reset();
    const auto fast = evaluate_scenarios(s.problem, ig.family(0.4), s.state, s.batch, scen, 0.1, spec, true);
    const auto slow = evaluate_scenarios(generic, ig.family(0.4), s.state, s.batch, scen, 0.1, spec, true);
    for (std::size_t i = 0; i < scen.size(); ++i) CHECK(fast.per_path[i] == slow.per_path[i]);
}

TEST_CASE("worst-case value: zero radius and zero aversion") {
    fixtures::ConstrainedGaussian cg;
    const auto s = setup(cg.problem(), cg.family(), 5000, 20, 10);
    const auto spec = make_robustness(4.0, 1.0, 1.0, {0.1});
    std::vector<PerturbationDirection> dirs{adversarial_direction(s.sol, s.controls, spec, RegressionBasis{2, 1})};
    const auto base = estimate_objective(cg.cost, s.controls);
    CHECK(worst_case_value(s.problem, cg.family(), 0.0, dirs, spec, s.batch, s.state).value == base.mean);
    const auto flat = make_robustness(4.0, 0.0, 0.0, {0.1});
    CHECK(worst_case_value(s.problem, cg.family(), 0.3, dirs, flat, s.batch, s.state).value == base.mean);
}

TEST_CASE("worst-case value respects the first-order lower bound") {
    fixtures::ConstrainedGaussian cg;
    const auto s = setup(cg.problem(), cg.family(), 40000, 50, 11);
    const auto spec = make_robustness(4.0, 1.0, 1.0, {0.05});
    std::vector<PerturbationDirection> dirs{adversarial_direction(s.sol, s.controls, spec, RegressionBasis{2, 1})};
    const auto v0 = estimate_objective(cg.cost, s.controls);
    const auto v = first_order_sensitivity(s.sol, s.controls, spec);
    const auto w = worst_case_value(s.problem, cg.family(), 0.05, dirs, spec, s.batch, s.state);
    CHECK(w.value >= v0.mean + 0.9 * 0.05 * v.value);
}

TEST_CASE("robust value reductions") {
    fixtures::ConstrainedGaussian cg;
    const auto spec = make_robustness(4.0, 1.0, 1.0, {0.1});
    const SensitivityOptions options;
    const OptimizerSettings opt;
    {
        const auto s = setup(cg.problem(), cg.family(0.2), 5000, 20, 12);
        const auto base = solve_baseline(s.problem, cg.family(0.2), s.batch, s.state, opt);
        std::vector<PerturbationDirection> dirs{adversarial_direction(s.sol, s.controls, spec, options.basis)};
        const auto r = robust_value(s.problem, cg.family(0.2), 0.0, dirs, spec, s.batch, s.state, opt, options);
        CHECK(r.value == doctest::Approx(base.value).epsilon(1e-9));
        CHECK(r.strategy.theta()[0] == doctest::Approx(base.strategy.theta()[0]).epsilon(1e-6));
    }
    {
        const auto zero = Strategy::constant({0.0}, singleton_constraint({0.0}));
        const auto s = setup(cg.problem(), zero, 5000, 20, 13);
        std::vector<PerturbationDirection> dirs{adversarial_direction(s.sol, s.controls, spec, options.basis),
                                                random_direction(s.controls, options.basis, 4.0, 1)};
        const auto w = worst_case_value(s.problem, zero, 0.1, dirs, spec, s.batch, s.state);
        const auto r = robust_value(s.problem, zero, 0.1, dirs, spec, s.batch, s.state, opt, options);
        CHECK(r.value == doctest::Approx(w.value).epsilon(1e-12));
    }
}

TEST_CASE("expansion fit recovers exact coefficients") {
    const std::vector<double> eps{0.02, 0.04, 0.08, 0.16};
    std::vector<std::vector<double>> inc(4, std::vector<double>(3));
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t p = 0; p < 3; ++p) inc[i][p] = (0.3 + 0.1 * p) * eps[i] + 0.7 * eps[i] * eps[i];
    const auto f = fit_expansion(eps, inc);
    CHECK(f.a == doctest::Approx(0.4).epsilon(1e-10));
    CHECK(f.c == doctest::Approx(0.7).epsilon(1e-8));
    CHECK(f.a_se == doctest::Approx(0.1 / std::sqrt(3.0)).epsilon(1e-8));
}

TEST_CASE("expansion report: zero aversion and preconditions") {
    fixtures::ConstrainedGaussian cg;
    SensitivityOptions options;
    options.random_probes = 1;
    const SimSettings sim{4000, 10, 3};
    const auto flat = make_robustness(4.0, 0.0, 0.0, {0.02, 0.04, 0.08, 0.16});
    const auto rep = expansion_report(cg.problem(), cg.family(), flat, sim, OptimizerSettings{}, options);
    CHECK(rep.sensitivity.value == 0.0);
    CHECK(rep.slope == doctest::Approx(0.0).epsilon(1e-12));
    for (const auto& row : rep.rows) {
        CHECK(row.v_hat == doctest::Approx(rep.v0).epsilon(1e-12));
        CHECK(row.vstar_hat == doctest::Approx(rep.v0).epsilon(1e-12));
    }
    const auto narrow = make_robustness(4.0, 1.0, 1.0, {0.02, 0.03, 0.04, 0.05});
    CHECK_THROWS_AS(expansion_report(cg.problem(), cg.family(), narrow, sim, OptimizerSettings{}, options), ConfigError);
}

TEST_CASE("expansion report ordering invariants") {
    fixtures::InteriorGaussian ig;
    SensitivityOptions options;
    options.random_probes = 2;
    const SimSettings sim{20000, 25, 5};
    const auto spec = make_robustness(4.0, 1.0, 1.0, {0.02, 0.04, 0.08, 0.16});
    const auto rep = expansion_report(ig.problem(), ig.family(), spec, sim, OptimizerSettings{}, options);
    double prev = -1.0, prev_se = 0.0;
    for (const auto& row : rep.rows) {
        CHECK(row.v_hat >= rep.v0 - 3.0 * rep.v0_se);
        CHECK(row.vstar_hat >= rep.v0 - 3.0 * rep.v0_se);
        CHECK(row.vstar_hat >= row.v_hat - 3.0 * row.v_se);
        CHECK(row.vstar_hat >= prev - 3.0 * std::hypot(row.vstar_se, prev_se));
        CHECK(row.bracket_lower <= row.bracket_upper + 1e-15);
        prev = row.vstar_hat;
        prev_se = row.vstar_se;
    }
    CHECK(std::abs(rep.slope - rep.sensitivity.value) <= 0.1 * rep.sensitivity.value);
}

TEST_CASE("grid refinement changes the sensitivity by less than its SE") {
    fixtures::ConstrainedGaussian cg;
    const auto spec = make_robustness(4.0, 1.0, 1.0, {0.1});
    const auto fine_batch = sample_brownian(TimeGrid::uniform(1.0, 200), 100000, 1, 14);
    auto value_on = [&](const BrownianBatch& batch) {
        const auto state = simulate_state(cg.model, batch);
        const auto controls = simulate_wealth(cg.family(), state, batch, cg.x0);
        const auto sol = solve_bsde(terminal_data(cg.cost, controls), controls, batch, RegressionBasis{2, 1});
        return first_order_sensitivity(sol, controls, spec);
    };
    const auto coarse = value_on(fine_batch.coarsen(2));
    const auto fine = value_on(fine_batch);
    CHECK(std::abs(fine.value - coarse.value) < coarse.se);
}

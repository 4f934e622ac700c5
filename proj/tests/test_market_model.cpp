#include <doctest.h>

#include <cmath>
#include <random>
#include <stdexcept>

#include "fixtures.hpp"
#include "rsens/market_model.hpp"

using namespace rsens;

TEST_CASE("holder conjugate") {
    CHECK(holder_conjugate(4.0) == doctest::Approx(4.0 / 3.0).epsilon(1e-15));
    CHECK(holder_conjugate(5.0) == doctest::Approx(1.25).epsilon(1e-15));
    CHECK_THROWS_AS(holder_conjugate(3.0), std::domain_error);
    CHECK_THROWS_WITH(holder_conjugate(2.0), "assumption p>3 violated");
    for (double p : {3.1, 4.0, 7.5, 20.0, 1e3}) {
        const double q = holder_conjugate(p);
        CHECK(std::abs(1.0 / p + 1.0 / q - 1.0) < 1e-15);
        CHECK(q > 1.0);
        CHECK(q < 1.5);
    }
}

TEST_CASE("robustness spec validation") {
    CHECK_NOTHROW(make_robustness(4.0, 1.0, 0.5, {0.01, 0.02}));
    CHECK_THROWS_AS(make_robustness(4.0, 1.5, 0.5, {0.01}), ConfigError);
    CHECK_THROWS_AS(make_robustness(4.0, 1.0, 1.0, {0.02, 0.01}), ConfigError);
    CHECK_THROWS_AS(make_robustness(4.0, 1.0, 1.0, {0.0, 0.01}), ConfigError);
    CHECK_THROWS_AS(make_robustness(3.0, 1.0, 1.0, {0.01}), std::domain_error);
}

TEST_CASE("ball projection") {
    const auto ball = ball_constraint({0.0, 0.0}, 1.0);
    const std::vector<double> s{1.0, 1.0};
    const auto p = project_constraint(ball, 0.0, 0.0, s, {2.0, 0.0});
    CHECK(p[0] == doctest::Approx(1.0));
    CHECK(p[1] == doctest::Approx(0.0));
    const auto inside = project_constraint(ball, 0.0, 0.0, s, {0.3, -0.4});
    CHECK(inside == std::vector<double>{0.3, -0.4});
    CHECK(ball.bound == doctest::Approx(1.0));
}

TEST_CASE("box projection") {
    const auto box = box_constraint({0.0, 0.0}, {1.0, 1.0});
    const std::vector<double> s{1.0, 1.0};
    const auto p = project_constraint(box, 0.0, 0.0, s, {-1.0, 0.5});
    CHECK(p == std::vector<double>{0.0, 0.5});
    CHECK(project_constraint(box, 0.0, 0.0, s, {0.25, 0.75}) == std::vector<double>{0.25, 0.75});
    CHECK_THROWS_AS(box_constraint({1.0}, {0.0}), ConfigError);
}

TEST_CASE("singleton projection") {
    const auto one = singleton_constraint({0.5});
    const std::vector<double> s{1.0};
    CHECK(project_constraint(one, 0.3, 2.0, s, {7.0})[0] == doctest::Approx(0.5));
    CHECK(project_constraint(one, 0.3, 2.0, s, {-7.0})[0] == doctest::Approx(0.5));
}

TEST_CASE("projection is idempotent and non-expansive") {
    std::mt19937_64 rng(11);
    std::normal_distribution<double> n01;
    const std::vector<double> s{1.0, 1.0, 1.0};
    for (const auto& set : {ball_constraint({0.5, -0.2, 0.1}, 1.3), box_constraint({-1.0, 0.0, 0.2}, {0.5, 2.0, 0.3})}) {
        for (int trial = 0; trial < 500; ++trial) {
            std::vector<double> v(3), w(3);
            for (auto& x : v) x = 3.0 * n01(rng);
            for (auto& x : w) x = 3.0 * n01(rng);
            const auto pv = project_constraint(set, 0.0, 0.0, s, v);
            const auto pw = project_constraint(set, 0.0, 0.0, s, w);
            const auto ppv = project_constraint(set, 0.0, 0.0, s, pv);
            for (int i = 0; i < 3; ++i) CHECK(ppv[i] == doctest::Approx(pv[i]).epsilon(1e-14));
            double dp = 0.0, dv = 0.0, norm = 0.0;
            for (int i = 0; i < 3; ++i) {
                dp += (pv[i] - pw[i]) * (pv[i] - pw[i]);
                dv += (v[i] - w[i]) * (v[i] - w[i]);
                norm += pv[i] * pv[i];
            }
            CHECK(dp <= dv * (1.0 + 1e-12));
            CHECK(std::sqrt(norm) <= set.bound * (1.0 + 1e-12));
        }
    }
}

TEST_CASE("validation of a Black-Scholes model passes") {
    MarketModel m;
    m.drift = linear_drift({0.05});
    m.volatility = geometric_volatility({0.2});
    m.regularity.kind = RegularityKind::lipschitz_sde_benes;
    m.regularity.lipschitz = 0.25;
    m.regularity.benes = 1.0;
    CostSpec cost = mv_cost_to_general(make_mv_cost(0.0, {0.0}, {0.05}, softplus_call({1.0}, 1.0, 0.25)));
    const auto spec = make_robustness(4.0, 1.0, 1.0, {0.01, 0.02});
    const auto box = box_constraint({0.0}, {1.5});
    const auto report = validate_model(m, spec, cost, 2000, 3, &box);
    INFO(report.to_text());
    CHECK(report.passed());
}

TEST_CASE("zero volatility fails invertibility") {
    MarketModel m;
    m.volatility = zero_volatility(1);
    const auto report = validate_model(m, make_robustness(4.0, 1.0, 1.0, {0.01}), CostSpec{}, 200, 1);
    CHECK_FALSE(report.passed());
    bool found = false;
    for (const auto& c : report.checks)
        if (c.name == "volatility invertible") {
            found = true;
            CHECK_FALSE(c.passed);
            CHECK(c.detail.find("singular volatility") != std::string::npos);
        }
    CHECK(found);
}

TEST_CASE("quadratic terminal cost is strongly convex with zero margin") {
    fixtures::ConstrainedGaussian cg;
    cg.cost.growth.c2_lower = 2.0;
    const auto report = validate_model(cg.model, make_robustness(4.0, 1.0, 1.0, {0.01}), cg.cost, 500, 5);
    bool found = false;
    for (const auto& c : report.checks)
        if (c.name == "terminal cost strongly convex") {
            found = true;
            CHECK(c.passed);
            CHECK(std::abs(c.margin) < 1e-6);
        }
    CHECK(found);
}

TEST_CASE("bounded-elliptic declaration is falsified by a too small bound") {
    fixtures::ConstrainedGaussian cg;
    cg.model.regularity.c_b_sigma = 0.1;
    const auto report = validate_model(cg.model, make_robustness(4.0, 1.0, 1.0, {0.01}), cg.cost, 200, 5);
    CHECK_FALSE(report.passed());
}

TEST_CASE("wrong supplied derivative is caught by finite differences") {
    fixtures::ConstrainedGaussian cg;
    cg.cost.terminal.gradient = [](double x, double y) { return std::array<double, 2>{3.0 * (x - y), -2.0 * (x - y)}; };
    const auto report = validate_model(cg.model, make_robustness(4.0, 1.0, 1.0, {0.01}), cg.cost, 200, 5);
    bool failed = false;
    for (const auto& c : report.checks)
        if (c.name == "terminal cost derivatives") failed = !c.passed;
    CHECK(failed);
}

TEST_CASE("validation report is deterministic") {
    fixtures::Replication r;
    const auto spec = make_robustness(4.0, 1.0, 1.0, {0.01});
    const auto a = validate_model(r.model, spec, r.cost, 300, 9, &r.constraint);
    const auto b = validate_model(r.model, spec, r.cost, 300, 9, &r.constraint);
    CHECK(a.to_text() == b.to_text());
}

TEST_CASE("non-finite coefficient is reported as a simulation failure") {
    MarketModel m;
    m.drift = {"custom", [](double, std::span<const double>, std::span<double> out) { out[0] = std::nan(""); }};
    CHECK_THROWS_AS(validate_model(m, make_robustness(4.0, 1.0, 1.0, {0.01}), CostSpec{}, 50, 1), SimulationError);
}

#pragma once

// Shared test problems and independent numerical oracles.

#include <cmath>
#include <cstddef>
#include <numbers>
#include <vector>

#include "rsens/baseline_solver.hpp"
#include "rsens/market_model.hpp"
#include "rsens/mv_hedging.hpp"
#include "rsens/sensitivity.hpp"
#include "rsens/strategy.hpp"

namespace fixtures {

using namespace rsens;

// Complete market: b = 0, sigma = 0.2 s, s0 = x0 = 1, ball radius 2.
struct Replication {
    MarketModel model;
    CostSpec cost;
    ConstraintSet constraint = ball_constraint({0.0}, 2.0);
    double x0 = 1.0;

    Replication() {
        model.dim = 1;
        model.s0 = {1.0};
        model.drift = zero_drift(1);
        model.volatility = geometric_volatility({0.2});
        model.id = "replication";
        cost = mv_cost_to_general(make_mv_cost(0.0, {0.0}, {0.0}, linear_claim({1.0})));
    }
    Problem problem() const { return {model, cost, x0}; }
    Strategy family(double theta = 0.5) const { return Strategy::constant({theta}, constraint, 1.0); }
};

// Constrained Gaussian: b = 0, sigma = 0.3, box [0, 0.5], x0 = s0 + 0.1.
// H* = 0.5 binds, Y_t = 2(0.1 - 0.15 W_t), Z = -0.3, Ycal = -Y, Zcal = 0.3.
struct ConstrainedGaussian {
    static constexpr double v = 0.3;
    static constexpr double c = 0.1;
    static constexpr double h_star = 0.5;
    MarketModel model;
    CostSpec cost;
    ConstraintSet constraint = box_constraint({0.0}, {0.5});
    double x0 = 1.0 + c;

    ConstrainedGaussian() {
        model.dim = 1;
        model.s0 = {1.0};
        model.drift = zero_drift(1);
        model.volatility = constant_volatility(1, {v});
        model.regularity.kind = RegularityKind::bounded_elliptic;
        model.regularity.c_b_sigma = v;
        model.regularity.ellipticity = v * v;
        model.id = "constrained_gaussian";
        cost = mv_cost_to_general(make_mv_cost(0.0, {0.0}, {0.0}, linear_claim({1.0})));
    }
    Problem problem() const { return {model, cost, x0}; }
    Strategy family(double theta = 0.5) const { return Strategy::constant({theta}, constraint, 1.0); }
};

// Interior variant of the Gaussian case: running cost C h^2 with C = v^2
// puts the unconstrained optimum at H* = v^2/(v^2 + C) = 0.5.
struct InteriorGaussian {
    static constexpr double v = 0.3;
    MarketModel model;
    CostSpec cost;
    ConstraintSet constraint = ball_constraint({0.0}, 2.0);
    double x0 = 1.1;

    InteriorGaussian() {
        model.dim = 1;
        model.s0 = {1.0};
        model.drift = zero_drift(1);
        model.volatility = constant_volatility(1, {v});
        model.id = "interior_gaussian";
        cost = mv_cost_to_general(make_mv_cost(0.0, {0.0}, {v * v}, linear_claim({1.0})));
    }
    Problem problem() const { return {model, cost, x0}; }
    Strategy family(double theta = 0.2) const { return Strategy::constant({theta}, constraint, 1.0); }
};

// Composite Simpson on [a, b] with an even number of panels.
template <class F>
double simpson(F f, double a, double b, std::size_t panels) {
    if (panels % 2) ++panels;
    const double h = (b - a) / static_cast<double>(panels);
    double sum = f(a) + f(b);
    for (std::size_t i = 1; i < panels; ++i) sum += f(a + h * static_cast<double>(i)) * (i % 2 ? 4.0 : 2.0);
    return sum * h / 3.0;
}

// E|a + b Z|^q for standard normal Z, integrating on both sides of the kink.
inline double abs_gaussian_moment(double a, double b, double q) {
    if (b == 0.0) return std::pow(std::abs(a), q);
    const double pdf_norm = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    auto integrand = [&](double z) { return std::pow(std::abs(a + b * z), q) * pdf_norm * std::exp(-0.5 * z * z); };
    const double kink = -a / b;
    const double lo = std::min(kink, -12.0), hi = std::max(kink, 12.0);
    return simpson(integrand, lo, kink, 20000) + simpson(integrand, kink, hi, 20000);
}

// Drift term of V'(0) in the constrained Gaussian case: ||0.1 - 0.15 W||_{L^q}
// on [0, 1]. Continuous time uses t = u^2 to remove the sqrt(t) singularity.
inline double gaussian_drift_term_continuous(double q) {
    auto inner = [&](double u) { return 2.0 * u * abs_gaussian_moment(0.1, -0.15 * u, q); };
    return std::pow(simpson(inner, 0.0, 1.0, 400), 1.0 / q);
}

// Left-point sum on N steps, matching the discrete estimator.
inline double gaussian_drift_term_discrete(double q, std::size_t n_steps) {
    const double dt = 1.0 / static_cast<double>(n_steps);
    double sum = 0.0;
    for (std::size_t k = 0; k < n_steps; ++k)
        sum += abs_gaussian_moment(0.1, -0.15 * std::sqrt(dt * static_cast<double>(k)), q) * dt;
    return std::pow(sum, 1.0 / q);
}

// Values produced by the oracles above, frozen (p = 4, vol term 0.15).
inline constexpr double kGaussianSensitivityContinuous = 0.2791721919629237;
inline constexpr double kGaussianSensitivityDiscrete100 = 0.2788832672338264;

}  // namespace fixtures

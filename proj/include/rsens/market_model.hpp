#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rsens/common.hpp"

namespace rsens {

// Coefficient functions are Markovian: (t, s) -> out. Volatility writes a
// row-major d x d matrix.
using CoefficientFn = std::function<void(double t, std::span<const double> s, std::span<double> out)>;

struct Drift {
    std::string kind;  // zero | constant | linear | custom
    CoefficientFn eval;
};

struct Volatility {
    std::string kind;  // zero | constant | geometric | custom
    CoefficientFn eval;
};

Drift zero_drift(std::size_t d);
Drift constant_drift(std::vector<double> value);
// b_i(t, s) = mu_i * s_i
Drift linear_drift(std::vector<double> mu);

Volatility zero_volatility(std::size_t d);
Volatility constant_volatility(std::size_t d, std::vector<double> row_major);
// sigma(t, s) = diag(v_i * s_i)
Volatility geometric_volatility(std::vector<double> v);

enum class RegularityKind { bounded_elliptic, lipschitz_sde_benes };

struct Regularity {
    RegularityKind kind = RegularityKind::lipschitz_sde_benes;
    double c_b_sigma = 0.0;    // bound on |b| + |sigma|_F
    double ellipticity = 0.0;  // lower bound on eig(sigma^T sigma)
    double lipschitz = 0.0;    // Lipschitz / linear growth constant
    double benes = 0.0;        // |sigma^{-1} b| <= C (1 + sup |W|)
};

struct MarketModel {
    std::size_t dim = 1;
    std::vector<double> s0{1.0};
    double horizon = 1.0;
    Drift drift = zero_drift(1);
    Volatility volatility = constant_volatility(1, {1.0});
    Regularity regularity;
    std::string id = "model";

    void check() const;  // throws ConfigError on malformed shapes
};

double holder_conjugate(double p);

struct RobustnessSpec {
    double p = 4.0;
    double q = 4.0 / 3.0;
    double gamma = 1.0;
    double eta = 1.0;
    std::vector<double> epsilons;
};

RobustnessSpec make_robustness(double p, double gamma, double eta, std::vector<double> epsilons);

struct RunningCost {
    std::function<double(double t, double x, std::span<const double> h)> value;
    // grad = (d/dx, d/dh_1..d/dh_d)
    std::function<void(double t, double x, std::span<const double> h, std::span<double> grad)> gradient;
    // (1+d)^2 row-major, same ordering as gradient
    std::function<void(double t, double x, std::span<const double> h, std::span<double> hess)> hessian;
    bool zero = false;
    // d = 1 with constant coefficients: g = a x^2 + b x h + c h^2, evaluated
    // inline by the scenario engine. `value` must agree with it.
    std::optional<std::array<double, 3>> scalar_quadratic;
};

RunningCost zero_running_cost(std::size_t d);

struct TerminalCost {
    std::string kind = "custom";  // quadratic | custom
    double scale = 1.0;
    std::function<double(double x, double y)> value;
    std::function<std::array<double, 2>(double x, double y)> gradient;
    std::function<std::array<double, 3>(double x, double y)> hessian;  // xx, xy, yy
};

// f(x, y) = scale * (x - y)^2
TerminalCost quadratic_terminal_cost(double scale = 1.0);

struct Claim {
    std::string kind;  // linear | softplus_call | custom
    std::vector<double> weights;
    double offset = 0.0;
    double strike = 0.0;
    double smoothing = 0.0;
    std::function<double(std::span<const double> s)> value;
    std::function<void(std::span<const double> s, std::span<double> grad)> gradient;
    std::function<void(std::span<const double> s, std::span<double> hess)> hessian;
};

// l(s) = w.s + offset
Claim linear_claim(std::vector<double> weights, double offset = 0.0);
// l(s) = k log(1 + exp((w.s - strike) / k))
Claim softplus_call(std::vector<double> weights, double strike, double smoothing);

// market: y = l(S_T) moves with the simulated state.
// frozen: y = l(S°_T) stays at the baseline claim under perturbations.
enum class ClaimMode { market, frozen };

struct GrowthConstants {
    double r = 0.5;
    double c2_upper = 10.0;
    double c0_lower = 0.0;
    double c2_lower = 2.0;
    double c_l = 1.0;
};

struct CostSpec {
    RunningCost running = zero_running_cost(1);
    TerminalCost terminal = quadratic_terminal_cost();
    Claim claim = linear_claim({1.0});
    GrowthConstants growth;
    ClaimMode claim_mode = ClaimMode::market;
    std::string id = "cost";
};

using PointFn = std::function<void(double t, double x, std::span<const double> s, std::span<double> out)>;
using ScalarPointFn = std::function<double(double t, double x, std::span<const double> s)>;

struct ConstraintSet {
    enum class Kind { ball, box };
    Kind kind = Kind::ball;
    std::size_t dim = 1;
    PointFn center;  // ball
    ScalarPointFn radius;
    PointFn lower;  // box
    PointFn upper;
    double bound = 0.0;  // K
    // Parameters of constant-valued sets (center/radius or lower/upper);
    // empty for state-dependent sets.
    bool constant = false;
    std::vector<double> a;
    std::vector<double> b;

    // Projects v in place; returns true when v moved.
    bool project(double t, double x, std::span<const double> s, std::span<double> v) const;
};

ConstraintSet ball_constraint(std::vector<double> center, double radius);
ConstraintSet box_constraint(std::vector<double> lower, std::vector<double> upper);
ConstraintSet singleton_constraint(std::vector<double> point);

std::vector<double> project_constraint(const ConstraintSet& set, double t, double x,
                                       std::span<const double> s, std::vector<double> v);

struct ValidationCheck {
    std::string name;
    bool passed = true;
    double margin = 0.0;  // worst observed slack, negative on failure
    std::string detail;
};

struct ValidationReport {
    std::vector<ValidationCheck> checks;
    bool passed() const;
    std::string to_text() const;
};

// Samples (t, s, x, h, y) from simulated baseline paths and tests each
// declared condition. x0 defaults to the first coordinate of s0.
ValidationReport validate_model(const MarketModel& model, const RobustnessSpec& spec,
                                const CostSpec& cost, std::size_t samples, std::uint64_t seed,
                                const ConstraintSet* constraint = nullptr);

}  // namespace rsens

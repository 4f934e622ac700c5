#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "rsens/market_model.hpp"
#include "rsens/simulation.hpp"
#include "rsens/strategy.hpp"

namespace rsens {

struct Problem {
    MarketModel model;
    CostSpec cost;
    double x0 = 1.0;
};

struct SimSettings {
    std::size_t n_paths = 100000;
    std::size_t n_steps = 100;
    std::uint64_t seed = 1;
};

enum class StepRule { newton_armijo, gradient_armijo };

struct OptimizerSettings {
    std::size_t max_iters = 50;
    double tol = 1e-9;
    StepRule step_rule = StepRule::newton_armijo;
    std::size_t simplex_evals = 200;
    std::size_t newton_max_dim = 8;
};

struct IterationRecord {
    std::size_t iter = 0;
    double objective = 0.0;
    double step = 0.0;
    double grad_norm = 0.0;
    bool projected = false;
};

struct Evaluation {
    double value = 0.0;
    bool projected = false;
};

using Objective = std::function<Evaluation(const std::vector<double>& theta)>;

struct MinimizeResult {
    std::vector<double> theta;
    double value = 0.0;
    bool converged = false;
    std::vector<IterationRecord> trace;
};

// Deterministic minimizer: central finite-difference gradient
// (h = 1e-4 (1 + |theta_i|)), Newton direction from a finite-difference
// Hessian in low dimension when it is positive definite, Armijo backtracking
// with strict descent only, Nelder-Mead polish when the line search stalls.
MinimizeResult minimize(const Objective& objective, std::vector<double> theta0,
                        const OptimizerSettings& settings);

// min_theta max_j f_j(theta) for a finite family evaluated jointly.
struct MultiEvaluation {
    std::vector<double> values;
    bool projected = false;
};
using MultiObjective = std::function<MultiEvaluation(const std::vector<double>& theta)>;

// Proximal minimax steps: linearize every f_j by central differences, solve
// min_d max_j (f_j + g_j.d) + mu/2 |d|^2 through its dual on the simplex,
// and adapt mu on the ratio of actual to predicted decrease.
MinimizeResult minimize_max(const MultiObjective& objective, std::vector<double> theta0,
                            const OptimizerSettings& settings);

struct BaselineResult {
    Strategy strategy;
    double value = 0.0;
    double se = 0.0;
    bool converged = false;
    std::vector<IterationRecord> trace;
};

// Simulates the baseline state once and minimizes the common-random-numbers
// objective over the parameters of `family`.
BaselineResult solve_baseline(const Problem& problem, const Strategy& family, const BrownianBatch& batch,
                              const PathBatch& state, const OptimizerSettings& opt);
BaselineResult solve_baseline(const Problem& problem, const Strategy& family, const SimSettings& sim,
                              const OptimizerSettings& opt);

struct ResidualResult {
    double value = 0.0;  // min over test strategies
    double se = 0.0;
    std::size_t argmin = 0;
    std::vector<Estimate> per_test;
};

// Directional derivative of the objective at H* towards each test strategy.
ResidualResult foc_residual(const Problem& problem, const Strategy& optimum,
                            const std::vector<Strategy>& tests, const BrownianBatch& batch,
                            const PathBatch& state);

struct OracleResult {
    Strategy strategy;
    double value = 0.0;
};

// Complete-market replication oracle: H* = 1, V0 = (x0 - s0)^2.
OracleResult mv_closed_form_oracle(const MarketModel& model, const CostSpec& cost,
                                   const ConstraintSet& constraint, double x0);

}  // namespace rsens

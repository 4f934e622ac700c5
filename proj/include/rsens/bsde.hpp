#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "rsens/market_model.hpp"
#include "rsens/simulation.hpp"

namespace rsens {

// Polynomials in (x, s) up to total degree `degree` (0, 1 or 2).
struct RegressionBasis {
    std::size_t degree = 2;
    std::size_t dim = 1;

    std::size_t size() const;
    void evaluate(double x, std::span<const double> s, std::span<double> out) const;
    std::string describe() const;
};

struct TerminalData {
    std::size_t n_paths = 0;
    std::size_t n_steps = 0;
    std::size_t dim = 1;
    std::vector<double> a;  // [n]     d/dx f(X_T, y)
    std::vector<double> r;  // [n][N]  d/dx g(t_k, X_k, H_k)
    std::vector<double> b;  // [n][d]  d/dy f(X_T, y) grad l(S_T)
    bool running_zero = false;
};

TerminalData terminal_data(const CostSpec& cost, const PathBatch& paths);

struct StepDiagnostics {
    double residual_energy = 0.0;  // mean e_k^2
    double increment_mean = 0.0;   // mean e_k
    double increment_se = 0.0;
    std::vector<double> correlation;  // corr(e_k, dW_k^i)
    double correlation_se = 0.0;
    bool rank_deficient_y = false;
    bool rank_deficient_z = false;
};

struct ComponentSolution {
    std::vector<double> y;  // [n][N+1]
    std::vector<double> z;  // [n][N][d]
    std::vector<StepDiagnostics> diagnostics;  // per step k < N
};

// Backward regression for Y_k = E[target_N + sum_{j>=k} running_j dt | F_k]
// and Z_k from the martingale increment regressed on basis x dW_k.
// `running` may be empty.
ComponentSolution solve_component(std::span<const double> terminal, std::span<const double> running,
                                  const PathBatch& paths, const BrownianBatch& batch,
                                  const RegressionBasis& basis);

struct BsdeSolution {
    std::size_t n_paths = 0;
    std::size_t n_steps = 0;
    std::size_t dim = 1;
    std::vector<double> y;      // [n][N+1]
    std::vector<double> z;      // [n][N][d]
    std::vector<double> ycal;   // [n][N+1][d]
    std::vector<double> zcal;   // [n][N][d][d], (i, j) = component i, direction j
    std::vector<StepDiagnostics> scalar_diagnostics;
    std::vector<std::vector<StepDiagnostics>> vector_diagnostics;
    std::string basis;
};

ComponentSolution solve_scalar_bsde(const TerminalData& data, const PathBatch& paths,
                                    const BrownianBatch& batch, const RegressionBasis& basis);
std::vector<ComponentSolution> solve_vector_bsde(const TerminalData& data, const PathBatch& paths,
                                                 const BrownianBatch& batch, const RegressionBasis& basis);
BsdeSolution solve_bsde(const TerminalData& data, const PathBatch& paths, const BrownianBatch& batch,
                        const RegressionBasis& basis);

struct ValueFunctionGradient {
    // Fills dJ/dx and grad_s J at (t, x, s).
    std::function<void(double t, double x, std::span<const double> s, double& dx, std::span<double> ds)> eval;
};

// Z_k = sigma°(t_k, S_k)^T (dJ/dx H_k + grad_s J), pathwise.
std::vector<double> feynman_kac_reference(const ValueFunctionGradient& j, const MarketModel& model,
                                          const PathBatch& paths);

}  // namespace rsens

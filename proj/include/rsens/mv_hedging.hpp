#pragma once

#include <array>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "rsens/baseline_solver.hpp"
#include "rsens/bsde.hpp"
#include "rsens/market_model.hpp"
#include "rsens/sensitivity.hpp"

namespace rsens {

// g(t, x, h) = A x^2 + x B.h + h^T C h, f(x, y) = (x - y)^2, ξ = l(S_T).
// A, B, C are deterministic functions of time here.
struct MVCostSpec {
    std::size_t dim = 1;
    std::function<double(double t)> a;
    std::function<void(double t, std::span<double> out)> b;  // d
    std::function<void(double t, std::span<double> out)> c;  // d x d row-major
    Claim claim = linear_claim({1.0});
    ClaimMode claim_mode = ClaimMode::market;
    bool zero_running = false;
    std::optional<std::array<double, 3>> scalar_constant;  // (A, B, C) when d = 1 and constant
};

MVCostSpec make_mv_cost(double a, std::vector<double> b, std::vector<double> c, Claim claim);

// Throws ConfigError when [[2A, B^T], [B, 2C]] is not positive semidefinite
// on a time sample.
CostSpec mv_cost_to_general(const MVCostSpec& mv);

// min over tests of E[sum_k (H*_k - H_k).(-b° Y_k - σ° Z_k - X_k B_k - 2 C_k H*_k) dt],
// with (X*, H*) taken from `controls`.
ResidualResult smp_residual(const MarketModel& model, const MVCostSpec& mv, const Strategy& optimum,
                            const BsdeSolution& sol, const PathBatch& controls,
                            const std::vector<Strategy>& tests);

SensitivityReport mv_sensitivity(const MarketModel& model, const MVCostSpec& mv, double x0, const Strategy& family,
                                 const RobustnessSpec& spec, const SimSettings& sim, const OptimizerSettings& opt,
                                 const SensitivityOptions& options);

}  // namespace rsens

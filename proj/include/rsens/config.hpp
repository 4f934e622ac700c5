#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include <json.hpp>

#include "rsens/baseline_solver.hpp"
#include "rsens/market_model.hpp"
#include "rsens/mv_hedging.hpp"
#include "rsens/sensitivity.hpp"
#include "rsens/strategy.hpp"

namespace rsens {

// JSON run configuration, schema version 1:
//   model{d, s0[], horizon, x0, drift{kind, value|mu}, volatility{kind, matrix|v},
//         regularity{kind, c_b_sigma, ellipticity, lipschitz, benes}}
//   robustness{p, gamma, eta, epsilons[]}
//   cost{kind: mean_variance|quadratic, A, B[], C[], scale, claim{kind, weights[], offset,
//        strike, smoothing}, claim_mode: market|frozen, growth{r, c2_upper, c0_lower, c2_lower, c_l}}
//   constraint{kind: ball|box, center[], radius | lower[], upper[]}
//   strategy{family: constant|piecewise|feedback, basis{time_cells}, theta[]}
//   simulation{n_paths, n_steps, seed}, optimizer{max_iters, tol}
//   bsde{degree}, sensitivity{random_probes, radial[], rounds}   (optional)
struct RunConfig {
    nlohmann::json raw;
    std::string hash;  // 16 hex digits of FNV-1a over the canonical dump
    MarketModel model;
    RobustnessSpec spec;
    CostSpec cost;
    std::optional<MVCostSpec> mv;
    ConstraintSet constraint;
    Strategy family;
    SimSettings sim;
    OptimizerSettings opt;
    SensitivityOptions sens;
    double x0 = 1.0;

    Problem problem() const { return {model, cost, x0}; }
};

struct Overrides {
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> paths;
    std::optional<std::size_t> steps;
};

// Throws std::runtime_error for unreadable files or malformed JSON and
// ConfigError for well-formed JSON that does not describe a valid run.
RunConfig load_config(const std::string& path, const Overrides& overrides = {});
RunConfig parse_config(nlohmann::json raw, const Overrides& overrides = {});

std::string config_hash(const nlohmann::json& raw);
nlohmann::json strategy_to_json(const Strategy& strategy);

}  // namespace rsens

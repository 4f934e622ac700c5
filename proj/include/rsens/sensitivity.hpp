#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rsens/baseline_solver.hpp"
#include "rsens/bsde.hpp"
#include "rsens/market_model.hpp"
#include "rsens/simulation.hpp"
#include "rsens/strategy.hpp"

namespace rsens {

enum class DirectionOrigin { adversarial, random, user };
std::string to_string(DirectionOrigin o);

struct PerturbationDirection {
    DirectionFields fields;
    DirectionOrigin origin = DirectionOrigin::user;
    bool degenerate_drift = false;
    bool degenerate_vol = false;
    std::string id;
};

// phi_k = Y_k H_k + Ycal_k          [n][N][d]
std::vector<double> drift_density(const BsdeSolution& sol, const PathBatch& controls);
// psi_k(i, j) = H_k^i Z_k^j + Zcal_k(i, j)   [n][N][d][d]
std::vector<double> vol_density(const BsdeSolution& sol, const PathBatch& controls);

struct SensitivityValue {
    double value = 0.0;
    double se = 0.0;
    double drift_term = 0.0;
    double drift_se = 0.0;
    double vol_term = 0.0;
    double vol_se = 0.0;
};

SensitivityValue first_order_sensitivity(const BsdeSolution& sol, const PathBatch& controls,
                                         const RobustnessSpec& spec);

// Dual-norm attaining direction. The drift part is exact on the sample; the
// volatility weight (int |psi|^2 dt)^{(q-2)/2} is replaced by its regression
// on the time-k basis so the field stays adapted.
PerturbationDirection adversarial_direction(const BsdeSolution& sol, const PathBatch& controls,
                                            const RobustnessSpec& spec, const RegressionBasis& basis);

// Random unit direction built from basis functions of (t_k, X_k, S_k).
PerturbationDirection random_direction(const PathBatch& paths, const RegressionBasis& basis, double p,
                                       std::uint64_t seed);

struct Pairing {
    Estimate drift;  // <phi, b̃>
    Estimate vol;    // <psi, σ̃>_F
};
Pairing pairing(const BsdeSolution& sol, const PathBatch& controls, const PerturbationDirection& direction);

struct PairingCheck {
    double lhs = 0.0;
    double lhs_se = 0.0;
    double rhs = 0.0;
    double rhs_se = 0.0;
    double diff_se = 0.0;  // SE of the pathwise difference
};

PairingCheck pairing_identity_check(const Problem& problem, const PathBatch& controls, const BsdeSolution& sol,
                                    const PerturbationDirection& direction, double epsilon,
                                    const RobustnessSpec& spec, const BrownianBatch& batch);

struct Scenario {
    const PerturbationDirection* direction = nullptr;  // null: baseline coefficients
    double tau = 1.0;
};

struct ScenarioResults {
    std::vector<Estimate> estimates;
    std::vector<std::vector<double>> per_path;  // filled when requested
    bool projected = false;
};

// CRN objective for each scenario (b° + ε γ τ b̃, σ° + ε η τ σ̃), with the
// control process given by `strategy` in feedback on baseline wealth.
ScenarioResults evaluate_scenarios(const Problem& problem, const Strategy& strategy, const PathBatch& state,
                                   const BrownianBatch& batch, std::span<const Scenario> scenarios,
                                   double epsilon, const RobustnessSpec& spec, bool keep_paths);
// Same with fixed control paths.
ScenarioResults evaluate_scenarios(const Problem& problem, const PathBatch& controls, const BrownianBatch& batch,
                                   std::span<const Scenario> scenarios, double epsilon,
                                   const RobustnessSpec& spec, bool keep_paths);

struct SensitivityOptions {
    std::size_t random_probes = 4;
    std::vector<double> radial{0.0, 0.25, 0.5, 0.75, 1.0};
    std::size_t rounds = 2;
    RegressionBasis basis;
    std::uint64_t seed = 1;
};

std::vector<Scenario> scenario_grid(std::span<const PerturbationDirection> directions,
                                    std::span<const double> radial);

struct WorstCase {
    double value = 0.0;
    double se = 0.0;
    std::size_t direction = 0;
    double tau = 0.0;
    std::vector<double> per_path;
};

// Lower-bound estimate of sup over the ball at fixed strategy.
WorstCase worst_case_value(const Problem& problem, const Strategy& strategy, double epsilon,
                           std::span<const PerturbationDirection> directions, const RobustnessSpec& spec,
                           const BrownianBatch& batch, const PathBatch& state,
                           std::span<const double> radial = {});

struct RobustResult {
    double value = 0.0;
    double se = 0.0;
    Strategy strategy;
    bool converged = false;
    double bracket_lower = 0.0;
    double bracket_upper = 0.0;
    std::size_t direction = 0;
    double tau = 0.0;
    std::vector<double> per_path;
};

// Alternating best response: minimize over theta the max over the direction
// family, then add the adversarial direction at the new strategy and repeat.
// `directions` should hold the adversary of `start`; the adversaries built
// along the way are appended to it, so on return it is the final family.
RobustResult robust_value(const Problem& problem, const Strategy& start, double epsilon,
                          std::vector<PerturbationDirection>& directions, const RobustnessSpec& spec,
                          const BrownianBatch& batch, const PathBatch& state, const OptimizerSettings& opt,
                          const SensitivityOptions& options);

struct BsdeSummary {
    double max_residual_energy = 0.0;
    double max_abs_increment_t = 0.0;    // max_k |mean| / se
    double max_abs_correlation_t = 0.0;  // max_k |corr| / se
    bool rank_deficient = false;  // some regression used the minimum-norm solution
};
BsdeSummary summarize(const BsdeSolution& sol);

// Baseline pipeline shared by the report and the CLI.
struct Pipeline {
    BrownianBatch batch;
    PathBatch state;
    BaselineResult baseline;
    PathBatch controls;
    TerminalData data;
    BsdeSolution bsde;
    SensitivityValue sensitivity;
    PerturbationDirection adversarial;
};

Pipeline run_pipeline(const Problem& problem, const Strategy& family, const RobustnessSpec& spec,
                      const SimSettings& sim, const OptimizerSettings& opt, const SensitivityOptions& options);

struct ExpansionRow {
    double epsilon = 0.0;
    double v_hat = 0.0;
    double v_se = 0.0;
    double vstar_hat = 0.0;
    double vstar_se = 0.0;
    double gap = 0.0;
    double gap_se = 0.0;
    double gap_over_eps2 = 0.0;
    double bracket_lower = 0.0;
    double bracket_upper = 0.0;
    std::vector<double> theta;
    bool converged = false;
};

struct SensitivityReport {
    double v0 = 0.0;
    double v0_se = 0.0;
    std::vector<double> theta_star;
    bool baseline_converged = false;
    SensitivityValue sensitivity;
    std::vector<ExpansionRow> rows;
    double slope = 0.0;
    double slope_se = 0.0;
    double quadratic = 0.0;
    double envelope_slope = 0.0;  // same fit on V̂*(ε) - V0
    double envelope_slope_se = 0.0;
    BsdeSummary bsde;
    std::uint64_t seed = 0;
    std::string config_hash;
};

SensitivityReport expansion_report(const Problem& problem, const Strategy& family, const RobustnessSpec& spec,
                                   const SimSettings& sim, const OptimizerSettings& opt,
                                   const SensitivityOptions& options);
SensitivityReport expansion_report(const Problem& problem, const Pipeline& pipeline, const RobustnessSpec& spec,
                                   const OptimizerSettings& opt, const SensitivityOptions& options);

struct SlopeFit {
    double a = 0.0;
    double a_se = 0.0;
    double c = 0.0;
};
// Least squares y(ε) = a ε + c ε^2; per-path series give the SE of a.
SlopeFit fit_expansion(std::span<const double> eps, const std::vector<std::vector<double>>& per_path_increments);

}  // namespace rsens

#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "rsens/common.hpp"
#include "rsens/market_model.hpp"

namespace rsens {

struct TimeGrid {
    std::size_t n_steps = 1;
    double horizon = 1.0;

    static TimeGrid uniform(double horizon, std::size_t n_steps);
    double dt() const { return horizon / static_cast<double>(n_steps); }
    double time(std::size_t k) const;
};

struct BrownianBatch {
    TimeGrid grid;
    std::size_t n_paths = 0;
    std::size_t dim = 1;
    std::uint64_t seed = 0;
    std::vector<double> increments;  // [path][step][i]

    double dw(std::size_t p, std::size_t k, std::size_t i) const {
        return increments[(p * grid.n_steps + k) * dim + i];
    }
    std::span<const double> step(std::size_t p, std::size_t k) const {
        return {increments.data() + (p * grid.n_steps + k) * dim, dim};
    }
    // Same Brownian paths on a grid `factor` times coarser.
    BrownianBatch coarsen(std::size_t factor) const;
};

BrownianBatch sample_brownian(const TimeGrid& grid, std::size_t n_paths, std::size_t dim,
                              std::uint64_t seed);

// Perturbation fields on the simulation grid: b̃ [n][N][d], σ̃ [n][N][d][d].
struct DirectionFields {
    std::size_t n_paths = 0;
    std::size_t n_steps = 0;
    std::size_t dim = 1;
    std::vector<double> drift;
    std::vector<double> vol;

    static DirectionFields zeros(std::size_t n_paths, std::size_t n_steps, std::size_t dim);
    const double* drift_at(std::size_t p, std::size_t k) const { return drift.data() + (p * n_steps + k) * dim; }
    const double* vol_at(std::size_t p, std::size_t k) const {
        return vol.data() + (p * n_steps + k) * dim * dim;
    }
};

struct Perturbation {
    const DirectionFields* fields = nullptr;
    double epsilon = 0.0;
    double gamma = 1.0;
    double eta = 1.0;
    std::string id = "perturbed";
};

struct Provenance {
    std::string model_id;
    std::string perturbation_id = "baseline";
    std::string strategy_id;
    std::uint64_t seed = 0;
};

class Strategy;

struct PathBatch {
    TimeGrid grid;
    std::size_t n_paths = 0;
    std::size_t dim = 1;
    // State paths are shared between batches derived from the same simulation.
    std::shared_ptr<const std::vector<double>> state;  // [n][N+1][d]
    std::vector<double> wealth;                        // [n][N+1], optional
    std::vector<double> control;                       // [n][N][d], optional
    double x0 = 0.0;
    Provenance provenance;

    bool has_wealth() const { return !wealth.empty(); }
    bool has_control() const { return !control.empty(); }
    std::span<const double> s(std::size_t p, std::size_t k) const {
        return {state->data() + (p * (grid.n_steps + 1) + k) * dim, dim};
    }
    double x(std::size_t p, std::size_t k) const { return wealth[p * (grid.n_steps + 1) + k]; }
    std::span<const double> h(std::size_t p, std::size_t k) const {
        return {control.data() + (p * grid.n_steps + k) * dim, dim};
    }
};

// Euler-Maruyama with left-endpoint coefficients. With a perturbation the
// baseline coefficients are evaluated along the baseline path, so the
// perturbed path is S° plus the accumulated ε-terms driven by the same ΔW.
PathBatch simulate_state(const MarketModel& model, const BrownianBatch& batch,
                         const Perturbation* perturbation = nullptr);

// X_{k+1} = X_k + H_k.(S_{k+1} - S_k), H_k = strategy(t_k, X_k, S_k).
PathBatch simulate_wealth(const Strategy& strategy, const PathBatch& paths,
                          const BrownianBatch& batch, double x0);

// Wealth under fixed control paths taken from `controls`.
PathBatch simulate_wealth_with_controls(const PathBatch& controls, const PathBatch& paths, double x0);

// Per-path cost sum_k g(t_k, X_k, H_k) dt + f(X_N, y). y = l(S_N) unless
// `claim_paths` is given, in which case y = l(claim_paths S_N).
std::vector<double> path_costs(const CostSpec& cost, const PathBatch& paths,
                               const PathBatch* claim_paths = nullptr);
// Fused per-path cost of a feedback strategy on fixed state paths, without
// materializing wealth or control arrays. Matches path_costs(simulate_wealth(...)).
std::vector<double> strategy_path_costs(const CostSpec& cost, const Strategy& strategy, const PathBatch& state,
                                        double x0, bool* projected = nullptr);

Estimate estimate_objective(const CostSpec& cost, const PathBatch& paths,
                            const PathBatch* claim_paths = nullptr);

struct NormEstimate {
    double value = 0.0;      // the norm
    double power = 0.0;      // MC mean of the p-th power
    double power_se = 0.0;   // its standard error
    double se = 0.0;         // delta-method standard error of the norm
    std::vector<double> per_path;  // per-path p-th power contributions
};

// Process layout [n][steps][rows*cols]; steps counts time points.
struct ProcessView {
    std::span<const double> data;
    std::size_t n_paths = 0;
    std::size_t n_steps = 0;
    std::size_t width = 1;  // entries per time point (d for vectors, d*d for matrices)
};

// (E sum_k |v_k|^p dt)^{1/p}
NormEstimate lp_norm(const ProcessView& v, double dt, double p);
// (E (sum_k |M_k|_F^2 dt)^{p/2})^{1/p}
NormEstimate hp_norm(const ProcessView& m, double dt, double p);
// E max_k |v_k|^p over grid points, reported as the p-th root
NormEstimate sup_norm_p(const ProcessView& v, double p);

// Explicit BDG-type constant: (p/(p-1))^p (p(p-1)/2)^{p/2}, from Doob's
// maximal inequality combined with the Itô moment bound for stochastic integrals.
double bdg_constant(double p);

struct AprioriConstants {
    double c1 = 0.0;  // wealth
    double c2 = 0.0;  // state
};
AprioriConstants apriori_constants(double p, double bound_k, double horizon);

// Binary dump: "RSNS", u32 version, u64 n_paths, u32 N, u32 d, u64 seed,
// then little-endian f64 path-major.
struct PathDump {
    std::size_t n_paths = 0;
    std::uint32_t n_steps = 0;
    std::uint32_t dim = 0;
    std::uint64_t seed = 0;
    std::vector<double> values;
};
void write_path_dump(const std::string& path, const PathDump& dump);
PathDump read_path_dump(const std::string& path);

}  // namespace rsens

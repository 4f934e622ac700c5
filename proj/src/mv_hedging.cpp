#include "rsens/mv_hedging.hpp"

#include <Eigen/Dense>
#include <algorithm>

namespace rsens {

MVCostSpec make_mv_cost(double a, std::vector<double> b, std::vector<double> c, Claim claim) {
    const std::size_t d = b.size();
    if (d == 0 || c.size() != d * d) throw ConfigError("mean-variance cost needs B of length d and C of size d*d");
    MVCostSpec mv;
    mv.dim = d;
    mv.a = [a](double) { return a; };
    mv.b = [b](double, std::span<double> out) { std::copy(b.begin(), b.end(), out.begin()); };
    mv.c = [c](double, std::span<double> out) { std::copy(c.begin(), c.end(), out.begin()); };
    mv.claim = std::move(claim);
    mv.zero_running = a == 0.0 && std::all_of(b.begin(), b.end(), [](double v) { return v == 0.0; }) &&
                      std::all_of(c.begin(), c.end(), [](double v) { return v == 0.0; });
    if (d == 1) mv.scalar_constant = std::array<double, 3>{a, b[0], c[0]};
    return mv;
}

CostSpec mv_cost_to_general(const MVCostSpec& mv) {
    const std::size_t d = mv.dim;
    if (!mv.a || !mv.b || !mv.c) throw ConfigError("mean-variance cost is missing A, B or C");
    // Convexity of g in (x, h) on a time sample.
    for (int i = 0; i <= 16; ++i) {
        const double t = i / 16.0;
        Eigen::MatrixXd m(d + 1, d + 1);
        std::vector<double> b(d), c(d * d);
        mv.b(t, b);
        mv.c(t, c);
        m(0, 0) = 2.0 * mv.a(t);
        for (std::size_t k = 0; k < d; ++k) {
            m(0, k + 1) = m(k + 1, 0) = b[k];
            for (std::size_t l = 0; l < d; ++l) m(k + 1, l + 1) = c[k * d + l] + c[l * d + k];
        }
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
        if (es.eigenvalues().minCoeff() < -1e-12 * std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff()))
            throw ConfigError("running cost is not convex: [[2A, B^T], [B, 2C]] is not positive semidefinite");
    }
    CostSpec cost;
    cost.id = "mean_variance";
    cost.claim = mv.claim;
    cost.claim_mode = mv.claim_mode;
    cost.terminal = quadratic_terminal_cost(1.0);
    if (mv.zero_running) {
        cost.running = zero_running_cost(d);
        return cost;
    }
    RunningCost g;
    g.scalar_quadratic = mv.scalar_constant;
    g.value = [mv, d](double t, double x, std::span<const double> h) {
        std::vector<double> b(d), c(d * d);
        mv.b(t, b);
        mv.c(t, c);
        double v = mv.a(t) * x * x;
        for (std::size_t i = 0; i < d; ++i) {
            v += x * b[i] * h[i];
            for (std::size_t j = 0; j < d; ++j) v += h[i] * c[i * d + j] * h[j];
        }
        return v;
    };
    g.gradient = [mv, d](double t, double x, std::span<const double> h, std::span<double> grad) {
        std::vector<double> b(d), c(d * d);
        mv.b(t, b);
        mv.c(t, c);
        grad[0] = 2.0 * mv.a(t) * x;
        for (std::size_t i = 0; i < d; ++i) {
            grad[0] += b[i] * h[i];
            double gh = x * b[i];
            for (std::size_t j = 0; j < d; ++j) gh += (c[i * d + j] + c[j * d + i]) * h[j];
            grad[1 + i] = gh;
        }
    };
    g.hessian = [mv, d](double t, double, std::span<const double>, std::span<double> hess) {
        std::vector<double> b(d), c(d * d);
        mv.b(t, b);
        mv.c(t, c);
        const std::size_t w = d + 1;
        hess[0] = 2.0 * mv.a(t);
        for (std::size_t i = 0; i < d; ++i) {
            hess[i + 1] = hess[(i + 1) * w] = b[i];
            for (std::size_t j = 0; j < d; ++j) hess[(i + 1) * w + j + 1] = c[i * d + j] + c[j * d + i];
        }
    };
    cost.running = std::move(g);
    return cost;
}

ResidualResult smp_residual(const MarketModel& model, const MVCostSpec& mv, const Strategy& optimum,
                            const BsdeSolution& sol, const PathBatch& controls, const std::vector<Strategy>& tests) {
    if (tests.empty()) throw ConfigError("at least one test strategy is required");
    if (!controls.has_wealth() || !controls.has_control()) throw ShapeError("controls need wealth and control paths");
    if (sol.n_paths != controls.n_paths || sol.n_steps != controls.grid.n_steps)
        throw ShapeError("BSDE solution and control paths are not aligned");
    (void)optimum;
    const std::size_t n = controls.n_paths, N = controls.grid.n_steps, d = controls.dim;
    const double dt = controls.grid.dt();
    // Gradient of the Hamiltonian in h along the optimum, shared by all tests.
    std::vector<double> grad(n * N * d);
    parallel_for(n, [&](std::size_t begin, std::size_t end) {
        std::vector<double> b(d), sig(d * d), bb(d), cc(d * d);
        for (std::size_t p = begin; p < end; ++p)
            for (std::size_t k = 0; k < N; ++k) {
                const double t = controls.grid.time(k);
                const auto s = controls.s(p, k);
                model.drift.eval(t, s, b);
                model.volatility.eval(t, s, sig);
                mv.b(t, bb);
                mv.c(t, cc);
                const double y = sol.y[p * (N + 1) + k];
                const double* z = sol.z.data() + (p * N + k) * d;
                const double x = controls.x(p, k);
                const auto h = controls.h(p, k);
                for (std::size_t i = 0; i < d; ++i) {
                    double v = b[i] * y + x * bb[i];
                    for (std::size_t j = 0; j < d; ++j) v += sig[i * d + j] * z[j] + (cc[i * d + j] + cc[j * d + i]) * h[j];
                    grad[(p * N + k) * d + i] = v;
                }
            }
    });
    ResidualResult out;
    for (std::size_t t_idx = 0; t_idx < tests.size(); ++t_idx) {
        const Strategy& test = tests[t_idx];
        std::vector<double> per(n);
        parallel_for(n, [&](std::size_t begin, std::size_t end) {
            std::vector<double> h(d);
            for (std::size_t p = begin; p < end; ++p) {
                double acc = 0.0;
                for (std::size_t k = 0; k < N; ++k) {
                    test.evaluate(controls.grid.time(k), controls.x(p, k), controls.s(p, k), h);
                    const auto hs = controls.h(p, k);
                    for (std::size_t i = 0; i < d; ++i) acc -= (hs[i] - h[i]) * grad[(p * N + k) * d + i];
                }
                per[p] = acc * dt;
            }
        });
        out.per_test.push_back(mean_and_se(per));
        if (t_idx == 0 || out.per_test.back().mean < out.value) {
            out.value = out.per_test.back().mean;
            out.se = out.per_test.back().se;
            out.argmin = t_idx;
        }
    }
    return out;
}

SensitivityReport mv_sensitivity(const MarketModel& model, const MVCostSpec& mv, double x0, const Strategy& family,
                                 const RobustnessSpec& spec, const SimSettings& sim, const OptimizerSettings& opt,
                                 const SensitivityOptions& options) {
    const Problem problem{model, mv_cost_to_general(mv), x0};
    return expansion_report(problem, family, spec, sim, opt, options);
}

}  // namespace rsens

#include "rsens/baseline_solver.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace rsens {

namespace {

double norm2(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

struct Counter {
    const Objective& f;
    bool last_projected = false;
    double operator()(const std::vector<double>& theta) {
        const Evaluation e = f(theta);
        last_projected = e.projected;
        return e.value;
    }
};

// Nelder-Mead with standard coefficients; returns the best vertex.
std::pair<std::vector<double>, double> nelder_mead(Counter& f, const std::vector<double>& start, double f_start,
                                                   std::size_t max_evals) {
    const std::size_t n = start.size();
    std::vector<std::vector<double>> x(n + 1, start);
    std::vector<double> fx(n + 1, f_start);
    std::size_t evals = 0;
    for (std::size_t i = 0; i < n; ++i) {
        x[i + 1][i] += 0.05 * (1.0 + std::abs(start[i]));
        fx[i + 1] = f(x[i + 1]);
        ++evals;
    }
    std::vector<std::size_t> order(n + 1);
    while (evals < max_evals) {
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return fx[a] < fx[b]; });
        const std::size_t best = order.front(), worst = order.back(), second = order[n - 1];
        if (std::abs(fx[worst] - fx[best]) <= 1e-15 * (1.0 + std::abs(fx[best]))) {
            double spread = 0.0;
            for (std::size_t i = 0; i <= n; ++i)
                for (std::size_t j = 0; j < n; ++j) spread = std::max(spread, std::abs(x[i][j] - x[best][j]));
            if (spread <= 1e-12) break;
        }
        std::vector<double> centroid(n, 0.0);
        for (std::size_t i = 0; i <= n; ++i)
            if (i != worst)
                for (std::size_t j = 0; j < n; ++j) centroid[j] += x[i][j] / static_cast<double>(n);
        auto along = [&](double c) {
            std::vector<double> y(n);
            for (std::size_t j = 0; j < n; ++j) y[j] = centroid[j] + c * (x[worst][j] - centroid[j]);
            return y;
        };
        auto xr = along(-1.0);
        const double fr = f(xr);
        ++evals;
        if (fr < fx[best]) {
            auto xe = along(-2.0);
            const double fe = f(xe);
            ++evals;
            if (fe < fr) {
                x[worst] = xe;
                fx[worst] = fe;
            } else {
                x[worst] = xr;
                fx[worst] = fr;
            }
        } else if (fr < fx[second]) {
            x[worst] = xr;
            fx[worst] = fr;
        } else {
            auto xc = fr < fx[worst] ? along(-0.5) : along(0.5);
            const double fc = f(xc);
            ++evals;
            if (fc < std::min(fr, fx[worst])) {
                x[worst] = xc;
                fx[worst] = fc;
            } else {
                for (std::size_t i = 0; i <= n; ++i) {
                    if (i == best) continue;
                    for (std::size_t j = 0; j < n; ++j) x[i][j] = x[best][j] + 0.5 * (x[i][j] - x[best][j]);
                    fx[i] = f(x[i]);
                    ++evals;
                }
            }
        }
    }
    const auto it = std::min_element(fx.begin(), fx.end());
    return {x[static_cast<std::size_t>(it - fx.begin())], *it};
}

}  // namespace

MinimizeResult minimize(const Objective& objective, std::vector<double> theta, const OptimizerSettings& settings) {
    Counter f{objective};
    MinimizeResult result;
    const std::size_t n = theta.size();
    double fx = f(theta);
    bool projected = f.last_projected;
    result.trace.push_back({0, fx, 0.0, 0.0, projected});
    if (n == 0) {
        result.theta = theta;
        result.value = fx;
        result.converged = true;
        return result;
    }

    double gnorm = 0.0;
    bool converged = false;
    for (std::size_t iter = 1; iter <= settings.max_iters; ++iter) {
        // Central differences; the same evaluations feed the Hessian diagonal.
        std::vector<double> g(n), h(n), fp(n), fm(n);
        for (std::size_t i = 0; i < n; ++i) {
            h[i] = 1e-4 * (1.0 + std::abs(theta[i]));
            auto tp = theta, tm = theta;
            tp[i] += h[i];
            tm[i] -= h[i];
            fp[i] = f(tp);
            fm[i] = f(tm);
            g[i] = (fp[i] - fm[i]) / (2.0 * h[i]);
        }
        gnorm = norm2(g);
        result.trace.back().grad_norm = gnorm;
        if (gnorm == 0.0) {
            converged = true;
            break;
        }

        std::vector<double> dir(n);
        bool newton = false;
        if (settings.step_rule == StepRule::newton_armijo && n <= settings.newton_max_dim) {
            Eigen::MatrixXd H(n, n);
            for (std::size_t i = 0; i < n; ++i) H(i, i) = (fp[i] - 2.0 * fx + fm[i]) / (h[i] * h[i]);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = i + 1; j < n; ++j) {
                    auto pp = theta, pm = theta, mp = theta, mm = theta;
                    pp[i] += h[i], pp[j] += h[j];
                    pm[i] += h[i], pm[j] -= h[j];
                    mp[i] -= h[i], mp[j] += h[j];
                    mm[i] -= h[i], mm[j] -= h[j];
                    H(i, j) = H(j, i) = (f(pp) - f(pm) - f(mp) + f(mm)) / (4.0 * h[i] * h[j]);
                }
            Eigen::LLT<Eigen::MatrixXd> llt(H);
            if (llt.info() == Eigen::Success && H.diagonal().minCoeff() > 0.0) {
                Eigen::Map<Eigen::VectorXd> gv(g.data(), static_cast<Eigen::Index>(n));
                Eigen::VectorXd step = -llt.solve(gv);
                if (step.allFinite()) {
                    for (std::size_t i = 0; i < n; ++i) dir[i] = step(static_cast<Eigen::Index>(i));
                    newton = true;
                }
            }
        }
        if (!newton) {
            const double scale = 0.5 * (1.0 + norm2(theta)) / gnorm;
            for (std::size_t i = 0; i < n; ++i) dir[i] = -scale * g[i];
        }
        double slope = 0.0;
        for (std::size_t i = 0; i < n; ++i) slope += g[i] * dir[i];

        // Armijo backtracking; only strict decreases are accepted.
        // A bitwise-equal value along a descent direction means the projection
        // onto the constraint set flattened the objective: projected stationarity.
        bool accepted = false, flat = false;
        double alpha = 1.0;
        const double dnorm = norm2(dir);
        for (int ls = 0; ls < 40 && alpha * dnorm > 1e-15 * (1.0 + norm2(theta)); ++ls, alpha *= 0.5) {
            std::vector<double> cand(n);
            for (std::size_t i = 0; i < n; ++i) cand[i] = theta[i] + alpha * dir[i];
            if (cand == theta) break;
            const double fc = f(cand);
            if (fc == fx) {
                flat = true;
                break;
            }
            if (fc < fx && fc <= fx + 1e-4 * alpha * slope + 1e-15 * std::abs(fx)) {
                theta = std::move(cand);
                fx = fc;
                projected = f.last_projected;
                accepted = true;
                break;
            }
        }
        if (accepted) {
            result.trace.push_back({iter, fx, alpha * dnorm, 0.0, projected});
            continue;
        }
        if (flat || gnorm <= settings.tol) {
            converged = true;
            break;
        }
        // Derivative-free fallback.
        auto [xs, fs] = nelder_mead(f, theta, fx, settings.simplex_evals);
        if (fs < fx) {
            double moved = 0.0;
            for (std::size_t i = 0; i < n; ++i) moved += (xs[i] - theta[i]) * (xs[i] - theta[i]);
            const double improvement = fx - fs;
            theta = xs;
            fx = fs;
            f(theta);
            projected = f.last_projected;
            result.trace.push_back({iter, fx, std::sqrt(moved), 0.0, projected});
            if (improvement <= settings.tol * (1.0 + std::abs(fx))) {
                converged = true;
                break;
            }
            continue;
        }
        converged = true;  // no descent found by either search
        break;
    }
    if (!converged) converged = gnorm <= settings.tol;
    result.theta = std::move(theta);
    result.value = fx;
    result.converged = converged;
    return result;
}

namespace {

double max_of(const std::vector<double>& v) { return *std::max_element(v.begin(), v.end()); }

// Euclidean projection onto the probability simplex.
void project_simplex(Eigen::VectorXd& v) {
    Eigen::VectorXd u = v;
    std::sort(u.data(), u.data() + u.size(), std::greater<>());
    double cum = 0.0, tau = 0.0;
    for (Eigen::Index i = 0; i < u.size(); ++i) {
        cum += u(i);
        const double t = (cum - 1.0) / static_cast<double>(i + 1);
        if (u(i) - t > 0.0) tau = t;
    }
    v = (v.array() - tau).cwiseMax(0.0);
}

// argmin_d max_j (f_j + g_j.d) + mu/2 |d|^2 = -G^T lambda / mu, where lambda
// maximizes f.lambda - |G^T lambda|^2 / (2 mu) over the simplex (FISTA).
Eigen::VectorXd prox_minimax_step(const Eigen::VectorXd& f, const Eigen::MatrixXd& g, double mu) {
    const Eigen::Index m = f.size();
    const double lip = std::max((g * g.transpose()).norm() / mu, 1e-300);
    Eigen::VectorXd lam = Eigen::VectorXd::Constant(m, 0.0), y, prev;
    Eigen::Index best;
    f.maxCoeff(&best);
    lam(best) = 1.0;
    y = lam;
    double t = 1.0;
    for (int it = 0; it < 2000; ++it) {
        prev = lam;
        lam = y + (f - g * (g.transpose() * y) / mu) / lip;
        project_simplex(lam);
        const double t1 = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
        y = lam + ((t - 1.0) / t1) * (lam - prev);
        t = t1;
        if ((lam - prev).lpNorm<1>() <= 1e-14) break;
    }
    return -(g.transpose() * lam) / mu;
}

}  // namespace

MinimizeResult minimize_max(const MultiObjective& objective, std::vector<double> theta,
                            const OptimizerSettings& settings) {
    MinimizeResult result;
    const std::size_t n = theta.size();
    MultiEvaluation cur = objective(theta);
    if (cur.values.empty()) throw ConfigError("minimax objective returned no values");
    const std::size_t m = cur.values.size();
    double fx = max_of(cur.values);
    result.trace.push_back({0, fx, 0.0, 0.0, cur.projected});
    bool converged = n == 0;
    double mu = 0.0;
    for (std::size_t iter = 1; iter <= settings.max_iters && !converged; ++iter) {
        // Central differences for every f_j; the Hessian of the active one
        // (diagonal only above newton_max_dim) is the metric of the proximal term.
        Eigen::MatrixXd g(m, n), hess = Eigen::MatrixXd::Zero(n, n);
        const std::size_t active = static_cast<std::size_t>(
            std::max_element(cur.values.begin(), cur.values.end()) - cur.values.begin());
        std::vector<double> h(n);
        for (std::size_t i = 0; i < n; ++i) {
            h[i] = 1e-4 * (1.0 + std::abs(theta[i]));
            auto tp = theta, tm = theta;
            tp[i] += h[i];
            tm[i] -= h[i];
            const auto fp = objective(tp).values, fm = objective(tm).values;
            for (std::size_t j = 0; j < m; ++j) g(j, i) = (fp[j] - fm[j]) / (2.0 * h[i]);
            hess(i, i) = (fp[active] - 2.0 * cur.values[active] + fm[active]) / (h[i] * h[i]);
        }
        if (n <= settings.newton_max_dim)
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = i + 1; j < n; ++j) {
                    auto pp = theta, pm = theta, mp = theta, mm = theta;
                    pp[i] += h[i], pp[j] += h[j];
                    pm[i] += h[i], pm[j] -= h[j];
                    mp[i] -= h[i], mp[j] += h[j];
                    mm[i] -= h[i], mm[j] -= h[j];
                    hess(i, j) = hess(j, i) = (objective(pp).values[active] - objective(pm).values[active] -
                                               objective(mp).values[active] + objective(mm).values[active]) /
                                              (4.0 * h[i] * h[j]);
                }
        const double gnorm = g.rowwise().norm().maxCoeff();
        result.trace.back().grad_norm = gnorm;
        if (gnorm == 0.0) {
            converged = true;
            break;
        }
        // d = S e with S S^T = M^{-1}; second differences below ~1e-6 (1 + |f|)
        // are round-off at h ~ 1e-4, so then the metric is the identity.
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(hess);
        const double top = es.eigenvalues().maxCoeff();
        Eigen::MatrixXd scale;
        if (top > 1e-6 * (1.0 + std::abs(fx))) {
            const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(1e-3 * top);
            scale = es.eigenvectors() * ev.cwiseSqrt().cwiseInverse().asDiagonal();
            if (mu == 0.0) mu = 1.0;
        } else {
            scale = Eigen::MatrixXd::Identity(n, n);
            if (mu == 0.0) mu = 1e-8 * gnorm;
        }
        const Eigen::MatrixXd gs = g * scale;
        const Eigen::VectorXd f = Eigen::Map<const Eigen::VectorXd>(cur.values.data(), static_cast<Eigen::Index>(m));
        bool accepted = false;
        // At a minimax-stationary point the linearized max cannot decrease for
        // any mu. A small predicted decrease can also come from a metric inflated
        // by a kink (e.g. the constraint projection), so mu is first reduced.
        int shrinks = 0;
        for (int attempt = 0; attempt < 30; ++attempt) {
            const Eigen::VectorXd d = scale * prox_minimax_step(f, gs, mu);
            const double predicted = fx - (f + g * d).maxCoeff();
            if (predicted <= settings.tol * (1.0 + std::abs(fx))) {
                if (shrinks++ < 8) {
                    mu *= 0.1;
                    continue;
                }
                converged = true;
                break;
            }
            std::vector<double> cand(n);
            for (std::size_t i = 0; i < n; ++i) cand[i] = theta[i] + d(static_cast<Eigen::Index>(i));
            if (cand == theta) {
                converged = true;
                break;
            }
            MultiEvaluation next = objective(cand);
            const double fc = max_of(next.values);
            const double ratio = (fx - fc) / predicted;
            if (ratio >= 0.1) {
                theta = std::move(cand);
                cur = std::move(next);
                fx = fc;
                result.trace.push_back({iter, fx, d.norm(), 0.0, cur.projected});
                if (ratio >= 0.75) mu = std::max(0.5 * mu, 1e-12);
                accepted = true;
                break;
            }
            mu *= 4.0;
        }
        if (!accepted) converged = true;
    }
    result.theta = std::move(theta);
    result.value = fx;
    result.converged = converged;
    return result;
}

BaselineResult solve_baseline(const Problem& problem, const Strategy& family, const BrownianBatch& batch,
                              const PathBatch& state, const OptimizerSettings& opt) {
    if (state.n_paths != batch.n_paths || state.grid.n_steps != batch.grid.n_steps)
        throw ShapeError("state paths and batch are not aligned");
    Objective objective = [&](const std::vector<double>& theta) {
        bool projected = false;
        const auto costs = strategy_path_costs(problem.cost, family.with_theta(theta), state, problem.x0, &projected);
        return Evaluation{sample_mean(costs), projected};
    };
    const MinimizeResult m = minimize(objective, family.theta(), opt);
    BaselineResult out;
    out.strategy = family.with_theta(m.theta).canonical();
    const auto costs = strategy_path_costs(problem.cost, out.strategy, state, problem.x0);
    const Estimate e = mean_and_se(costs);
    out.value = e.mean;
    out.se = e.se;
    out.converged = m.converged;
    out.trace = m.trace;
    return out;
}

BaselineResult solve_baseline(const Problem& problem, const Strategy& family, const SimSettings& sim,
                              const OptimizerSettings& opt) {
    const TimeGrid grid = TimeGrid::uniform(problem.model.horizon, sim.n_steps);
    const BrownianBatch batch = sample_brownian(grid, sim.n_paths, problem.model.dim, component_seed(sim.seed, "brownian"));
    const PathBatch state = simulate_state(problem.model, batch);
    return solve_baseline(problem, family, batch, state, opt);
}

ResidualResult foc_residual(const Problem& problem, const Strategy& optimum, const std::vector<Strategy>& tests,
                            const BrownianBatch& batch, const PathBatch& state) {
    const CostSpec& cost = problem.cost;
    const PathBatch star = simulate_wealth(optimum, state, batch, problem.x0);
    const std::size_t n = state.n_paths, N = state.grid.n_steps, d = state.dim;
    const double dt = state.grid.dt();
    ResidualResult out;
    if (tests.empty()) return out;
    out.value = std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < tests.size(); ++t) {
        const PathBatch other = simulate_wealth(tests[t], state, batch, problem.x0);
        std::vector<double> per(n);
        parallel_for(n, [&](std::size_t begin, std::size_t end) {
            std::vector<double> grad(1 + d);
            for (std::size_t p = begin; p < end; ++p) {
                double acc = 0.0;
                if (!cost.running.zero) {
                    for (std::size_t k = 0; k < N; ++k) {
                        const auto hs = star.h(p, k);
                        const auto ho = other.h(p, k);
                        cost.running.gradient(state.grid.time(k), star.x(p, k), hs, grad);
                        double v = grad[0] * (other.x(p, k) - star.x(p, k));
                        for (std::size_t i = 0; i < d; ++i) v += grad[1 + i] * (ho[i] - hs[i]);
                        acc += v * dt;
                    }
                }
                const double y = cost.claim.value(state.s(p, N));
                acc += cost.terminal.gradient(star.x(p, N), y)[0] * (other.x(p, N) - star.x(p, N));
                per[p] = acc;
            }
        });
        const Estimate e = mean_and_se(per);
        out.per_test.push_back(e);
        if (e.mean < out.value) {
            out.value = e.mean;
            out.se = e.se;
            out.argmin = t;
        }
    }
    return out;
}

OracleResult mv_closed_form_oracle(const MarketModel& model, const CostSpec& cost, const ConstraintSet& constraint,
                                   double x0) {
    auto fail = [](const std::string& why) { throw UnsupportedError("replication oracle unsupported: " + why); };
    if (model.dim != 1) fail("d must be 1");
    if (!cost.running.zero) fail("running cost must vanish");
    if (cost.terminal.kind != "quadratic" || cost.terminal.scale != 1.0) fail("terminal cost must be (x-y)^2");
    if (cost.claim.kind != "linear" || cost.claim.weights != std::vector<double>{1.0} || cost.claim.offset != 0.0)
        fail("claim must be l(s) = s");
    if (model.drift.kind != "zero") fail("baseline drift must vanish");
    if (model.volatility.kind != "geometric" && model.volatility.kind != "constant")
        fail("volatility must be of geometric or constant type");
    std::vector<double> one{1.0};
    if (constraint.project(0.0, x0, model.s0, one) && std::abs(one[0] - 1.0) > 0.0) fail("constraint must contain 1");
    if (!constraint.constant) fail("constraint must be constant-valued");
    OracleResult r;
    r.strategy = Strategy::constant({1.0}, constraint, model.horizon);
    r.value = (x0 - model.s0[0]) * (x0 - model.s0[0]);
    return r;
}

}  // namespace rsens

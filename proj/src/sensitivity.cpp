#include "rsens/sensitivity.hpp"

#include "normal_equations.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace rsens {

std::string to_string(DirectionOrigin o) {
    switch (o) {
        case DirectionOrigin::adversarial: return "adversarial";
        case DirectionOrigin::random: return "random";
        case DirectionOrigin::user: return "user";
    }
    return "user";
}

namespace {

constexpr double kNegligible = 1e-9;

void check_solution(const BsdeSolution& sol, const PathBatch& controls) {
    if (!controls.has_control()) throw ShapeError("control paths are required");
    if (sol.n_paths != controls.n_paths || sol.n_steps != controls.grid.n_steps || sol.dim != controls.dim)
        throw ShapeError("BSDE solution and control paths are not aligned");
}

}  // namespace

std::vector<double> drift_density(const BsdeSolution& sol, const PathBatch& controls) {
    check_solution(sol, controls);
    const std::size_t n = sol.n_paths, N = sol.n_steps, d = sol.dim;
    std::vector<double> phi(n * N * d);
    for (std::size_t p = 0; p < n; ++p)
        for (std::size_t k = 0; k < N; ++k) {
            const double y = sol.y[p * (N + 1) + k];
            const auto h = controls.h(p, k);
            for (std::size_t i = 0; i < d; ++i)
                phi[(p * N + k) * d + i] = y * h[i] + sol.ycal[(p * (N + 1) + k) * d + i];
        }
    return phi;
}

std::vector<double> vol_density(const BsdeSolution& sol, const PathBatch& controls) {
    check_solution(sol, controls);
    const std::size_t n = sol.n_paths, N = sol.n_steps, d = sol.dim;
    std::vector<double> psi(n * N * d * d);
    for (std::size_t p = 0; p < n; ++p)
        for (std::size_t k = 0; k < N; ++k) {
            const auto h = controls.h(p, k);
            const double* z = sol.z.data() + (p * N + k) * d;
            const double* zc = sol.zcal.data() + (p * N + k) * d * d;
            double* out = psi.data() + (p * N + k) * d * d;
            for (std::size_t i = 0; i < d; ++i)
                for (std::size_t j = 0; j < d; ++j) out[i * d + j] = h[i] * z[j] + zc[i * d + j];
        }
    return psi;
}

SensitivityValue first_order_sensitivity(const BsdeSolution& sol, const PathBatch& controls,
                                         const RobustnessSpec& spec) {
    const std::size_t n = sol.n_paths, N = sol.n_steps, d = sol.dim;
    const double dt = controls.grid.dt();
    const auto phi = drift_density(sol, controls);
    const auto psi = vol_density(sol, controls);
    const NormEstimate a = lp_norm({phi, n, N, d}, dt, spec.q);
    const NormEstimate b = hp_norm({psi, n, N, d * d}, dt, spec.q);
    SensitivityValue v;
    v.drift_term = spec.gamma * a.value;
    v.drift_se = spec.gamma * a.se;
    v.vol_term = spec.eta * b.value;
    v.vol_se = spec.eta * b.se;
    v.value = v.drift_term + v.vol_term;
    // Delta method on the pair of power means, using per-path contributions.
    const double ga = a.power > 0.0 ? spec.gamma * a.value / (spec.q * a.power) : 0.0;
    const double gb = b.power > 0.0 ? spec.eta * b.value / (spec.q * b.power) : 0.0;
    std::vector<double> lin(n);
    for (std::size_t p = 0; p < n; ++p) lin[p] = ga * a.per_path[p] + gb * b.per_path[p];
    v.se = mean_and_se(lin).se;
    return v;
}

PerturbationDirection adversarial_direction(const BsdeSolution& sol, const PathBatch& controls,
                                            const RobustnessSpec& spec, const RegressionBasis& basis) {
    const std::size_t n = sol.n_paths, N = sol.n_steps, d = sol.dim;
    const double dt = controls.grid.dt();
    const double q = spec.q, p_exp = spec.p;
    PerturbationDirection dir;
    dir.origin = DirectionOrigin::adversarial;
    dir.id = "adversarial";
    dir.fields = DirectionFields::zeros(n, N, d);

    // Densities at round-off level relative to the BSDE data are treated as
    // zero; normalizing them would turn regression noise into a unit direction.
    double scale = 1.0;
    for (double v : sol.y) scale = std::max(scale, std::abs(v));
    for (double v : sol.ycal) scale = std::max(scale, std::abs(v));
    auto negligible = [&](const std::vector<double>& density) {
        double m = 0.0;
        for (double v : density) m = std::max(m, std::abs(v));
        return m <= kNegligible * scale;
    };

    // Drift: phi |phi|^{q-2}, normalized.
    const auto phi = drift_density(sol, controls);
    const bool phi_zero = negligible(phi);
    auto& bt = dir.fields.drift;
    for (std::size_t c = 0; c < n * N; ++c) {
        double n2 = 0.0;
        for (std::size_t i = 0; i < d; ++i) n2 += phi[c * d + i] * phi[c * d + i];
        const double w = n2 > 0.0 ? std::pow(n2, 0.5 * (q - 2.0)) : 0.0;
        for (std::size_t i = 0; i < d; ++i) bt[c * d + i] = phi[c * d + i] * w;
    }
    const NormEstimate bn = lp_norm({bt, n, N, d}, dt, p_exp);
    if (!phi_zero && bn.value > 0.0 && std::isfinite(bn.value)) {
        for (double& v : bt) v /= bn.value;
    } else {
        std::fill(bt.begin(), bt.end(), 0.0);
        dir.degenerate_drift = true;
    }

    // Volatility: psi times the adapted projection of (int |psi|_F^2 dt)^{(q-2)/2}.
    const auto psi = vol_density(sol, controls);
    const bool psi_zero = negligible(psi);
    const std::size_t dd = d * d;
    std::vector<double> weight(n, 0.0);
    for (std::size_t p = 0; p < n; ++p) {
        double acc = 0.0;
        for (std::size_t j = 0; j < N * dd; ++j) acc += psi[p * N * dd + j] * psi[p * N * dd + j];
        acc *= dt;
        weight[p] = acc > 0.0 ? std::pow(acc, 0.5 * (q - 2.0)) : 0.0;
    }
    const std::size_t m = basis.size();
    const bool wealth = controls.has_wealth();
    auto& st = dir.fields.vol;
    // Per-step regressions of the weight on the basis, accumulated path by
    // path (per chunk, merged in chunk order) to keep memory access sequential.
    const std::size_t chunks = (n + kChunk - 1) / kChunk;
    std::vector<std::vector<double>> gram_c(chunks), rhs_c(chunks);
    parallel_for(n, [&](std::size_t begin, std::size_t end) {
        auto& g = gram_c[begin / kChunk];
        auto& r = rhs_c[begin / kChunk];
        g.assign(N * m * m, 0.0);
        r.assign(N * m, 0.0);
        double f[256];
        for (std::size_t p = begin; p < end; ++p)
            for (std::size_t k = 0; k < N; ++k) {
                basis.evaluate(wealth ? controls.x(p, k) : 0.0, controls.s(p, k), {f, m});
                double* gk = g.data() + k * m * m;
                for (std::size_t a = 0; a < m; ++a) {
                    for (std::size_t b = 0; b <= a; ++b) gk[a * m + b] += f[a] * f[b];
                    r[k * m + a] += f[a] * weight[p];
                }
            }
    });
    std::vector<double> beta(N * m);
    for (std::size_t k = 0; k < N; ++k) {
        Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(m, m);
        Eigen::VectorXd rhs = Eigen::VectorXd::Zero(m);
        for (std::size_t c = 0; c < chunks; ++c)
            for (std::size_t a = 0; a < m; ++a) {
                for (std::size_t b = 0; b <= a; ++b) gram(a, b) += gram_c[c][(k * m + a) * m + b];
                rhs(a) += rhs_c[c][k * m + a];
            }
        gram = gram.selfadjointView<Eigen::Lower>();
        bool rank_deficient = false;
        const Eigen::VectorXd bk = detail::solve_normal(gram, rhs, rank_deficient).col(0);
        for (std::size_t a = 0; a < m; ++a) beta[k * m + a] = bk(a);
    }
    parallel_for(n, [&](std::size_t begin, std::size_t end) {
        double f[256];
        for (std::size_t p = begin; p < end; ++p)
            for (std::size_t k = 0; k < N; ++k) {
                basis.evaluate(wealth ? controls.x(p, k) : 0.0, controls.s(p, k), {f, m});
                double w = 0.0;
                for (std::size_t a = 0; a < m; ++a) w += f[a] * beta[k * m + a];
                w = std::max(0.0, w);
                for (std::size_t j = 0; j < dd; ++j) st[(p * N + k) * dd + j] = psi[(p * N + k) * dd + j] * w;
            }
    });
    const NormEstimate sn = hp_norm({st, n, N, dd}, dt, p_exp);
    if (!psi_zero && sn.value > 0.0 && std::isfinite(sn.value)) {
        for (double& v : st) v /= sn.value;
    } else {
        std::fill(st.begin(), st.end(), 0.0);
        dir.degenerate_vol = true;
    }
    return dir;
}

PerturbationDirection random_direction(const PathBatch& paths, const RegressionBasis& basis, double p_exp,
                                       std::uint64_t seed) {
    const std::size_t n = paths.n_paths, N = paths.grid.n_steps, d = paths.dim, dd = d * d;
    const double dt = paths.grid.dt(), T = paths.grid.horizon;
    const std::size_t m = basis.size();
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> z(0.0, 1.0);
    // Coefficients on basis(x, s) x {1, cos(pi t / T)}.
    std::vector<double> cb(2 * m * d), cs(2 * m * dd);
    for (double& v : cb) v = z(gen);
    for (double& v : cs) v = z(gen);
    PerturbationDirection dir;
    dir.origin = DirectionOrigin::random;
    dir.id = "random-" + std::to_string(seed);
    dir.fields = DirectionFields::zeros(n, N, d);
    const bool wealth = paths.has_wealth();
    std::vector<double> cosine(N);
    for (std::size_t k = 0; k < N; ++k) cosine[k] = std::cos(M_PI * paths.grid.time(k) / T);
    parallel_for(n, [&](std::size_t begin, std::size_t end) {
        std::vector<double> f(m);
        for (std::size_t p = begin; p < end; ++p)
            for (std::size_t k = 0; k < N; ++k) {
                basis.evaluate(wealth ? paths.x(p, k) : 0.0, paths.s(p, k), f);
                const double c = cosine[k];
                double* b = dir.fields.drift.data() + (p * N + k) * d;
                double* s = dir.fields.vol.data() + (p * N + k) * dd;
                for (std::size_t i = 0; i < d; ++i) {
                    double v = 0.0;
                    for (std::size_t j = 0; j < m; ++j) v += (cb[j * d + i] + c * cb[(m + j) * d + i]) * f[j];
                    b[i] = v;
                }
                for (std::size_t i = 0; i < dd; ++i) {
                    double v = 0.0;
                    for (std::size_t j = 0; j < m; ++j) v += (cs[j * dd + i] + c * cs[(m + j) * dd + i]) * f[j];
                    s[i] = v;
                }
            }
    });
    const NormEstimate bn = lp_norm({dir.fields.drift, n, N, d}, dt, p_exp);
    const NormEstimate sn = hp_norm({dir.fields.vol, n, N, dd}, dt, p_exp);
    for (double& v : dir.fields.drift) v /= bn.value;
    for (double& v : dir.fields.vol) v /= sn.value;
    return dir;
}

Pairing pairing(const BsdeSolution& sol, const PathBatch& controls, const PerturbationDirection& direction) {
    const std::size_t n = sol.n_paths, N = sol.n_steps, d = sol.dim, dd = d * d;
    const auto& f = direction.fields;
    if (f.n_paths != n || f.n_steps != N || f.dim != d) throw ShapeError("direction is not aligned with the solution");
    const double dt = controls.grid.dt();
    const auto phi = drift_density(sol, controls);
    const auto psi = vol_density(sol, controls);
    std::vector<double> a(n, 0.0), b(n, 0.0);
    for (std::size_t p = 0; p < n; ++p) {
        double sa = 0.0, sb = 0.0;
        for (std::size_t j = 0; j < N * d; ++j) sa += phi[p * N * d + j] * f.drift[p * N * d + j];
        for (std::size_t j = 0; j < N * dd; ++j) sb += psi[p * N * dd + j] * f.vol[p * N * dd + j];
        a[p] = sa * dt;
        b[p] = sb * dt;
    }
    return {mean_and_se(a), mean_and_se(b)};
}

PairingCheck pairing_identity_check(const Problem& problem, const PathBatch& controls, const BsdeSolution& sol,
                                    const PerturbationDirection& direction, double epsilon,
                                    const RobustnessSpec& spec, const BrownianBatch& batch) {
    const std::size_t n = controls.n_paths, N = controls.grid.n_steps, d = controls.dim, dd = d * d;
    if (!controls.has_wealth()) throw ShapeError("pairing check needs wealth paths");
    const TerminalData td = terminal_data(problem.cost, controls);
    const auto& f = direction.fields;
    const double dt = controls.grid.dt();
    const double eb = epsilon * spec.gamma, es = epsilon * spec.eta;
    const auto phi = drift_density(sol, controls);
    const auto psi = vol_density(sol, controls);
    std::vector<double> lhs(n), rhs(n), diff(n);
    parallel_for(n, [&](std::size_t begin, std::size_t end) {
        std::vector<double> b(d), sig(dd), s(d), s_new(d);
        for (std::size_t p = begin; p < end; ++p) {
            std::copy(problem.model.s0.begin(), problem.model.s0.end(), s.begin());
            double x = problem.x0;
            double run = 0.0;
            for (std::size_t k = 0; k < N; ++k) {
                const double t = controls.grid.time(k);
                const auto s0k = controls.s(p, k);
                if (!td.running_zero) run += td.r[p * N + k] * (x - controls.x(p, k)) * dt;
                problem.model.drift.eval(t, s0k, b);
                problem.model.volatility.eval(t, s0k, sig);
                const auto w = batch.step(p, k);
                const double* bt = f.drift_at(p, k);
                const double* st = f.vol_at(p, k);
                const auto h = controls.h(p, k);
                double dx = 0.0;
                for (std::size_t i = 0; i < d; ++i) {
                    double inc = (b[i] + eb * bt[i]) * dt;
                    for (std::size_t j = 0; j < d; ++j) inc += (sig[i * d + j] + es * st[i * d + j]) * w[j];
                    s_new[i] = s[i] + inc;
                    dx += h[i] * (s_new[i] - s[i]);
                }
                x += dx;
                s.swap(s_new);
            }
            double l = run + td.a[p] * (x - controls.x(p, N));
            const auto sN = controls.s(p, N);
            for (std::size_t i = 0; i < d; ++i) l += td.b[p * d + i] * (s[i] - sN[i]);
            double ra = 0.0, rb = 0.0;
            for (std::size_t j = 0; j < N * d; ++j) ra += phi[p * N * d + j] * f.drift[p * N * d + j];
            for (std::size_t j = 0; j < N * dd; ++j) rb += psi[p * N * dd + j] * f.vol[p * N * dd + j];
            const double r = (eb * ra + es * rb) * dt;
            lhs[p] = l;
            rhs[p] = r;
            diff[p] = l - r;
        }
    });
    PairingCheck out;
    const Estimate el = mean_and_se(lhs), er = mean_and_se(rhs), ed = mean_and_se(diff);
    out.lhs = el.mean;
    out.lhs_se = el.se;
    out.rhs = er.mean;
    out.rhs_se = er.se;
    out.diff_se = ed.se;
    return out;
}

std::vector<Scenario> scenario_grid(std::span<const PerturbationDirection> directions, std::span<const double> radial) {
    std::vector<Scenario> out;
    bool center = false;
    for (double tau : radial)
        if (tau == 0.0) center = true;
    if (center) out.push_back({nullptr, 0.0});
    for (const auto& dir : directions)
        for (double tau : radial)
            if (tau != 0.0) out.push_back({&dir, tau});
    return out;
}

namespace {

// Fills H for one path: fill(p, x_baseline, h_out) returns whether projection acted.
template <class ControlFill>
ScenarioResults run_scenarios(const Problem& problem, const PathBatch& state, const BrownianBatch& batch,
                              std::span<const Scenario> scenarios, double epsilon, const RobustnessSpec& spec,
                              bool keep_paths, ControlFill fill) {
    const std::size_t n = state.n_paths, N = state.grid.n_steps, d = state.dim, dd = d * d;
    if (batch.n_paths != n || batch.grid.n_steps != N || batch.dim != d) throw ShapeError("batch is not aligned");
    for (const auto& sc : scenarios)
        if (sc.direction) {
            const auto& f = sc.direction->fields;
            if (f.n_paths != n || f.n_steps != N || f.dim != d)
                throw ShapeError("direction '" + sc.direction->id + "' is not aligned with the batch");
        }
    const CostSpec& cost = problem.cost;
    const MarketModel& model = problem.model;
    const double dt = state.grid.dt();
    const std::size_t S = scenarios.size();
    const bool quad = !cost.running.zero && cost.running.scalar_quadratic.has_value();
    const bool scalar = d == 1 && (cost.running.zero || quad);
    const double qa = quad ? (*cost.running.scalar_quadratic)[0] : 0.0;
    const double qb = quad ? (*cost.running.scalar_quadratic)[1] : 0.0;
    const double qc = quad ? (*cost.running.scalar_quadratic)[2] : 0.0;
    std::vector<std::vector<double>> per(S, std::vector<double>(n));
    std::vector<unsigned char> moved((n + kChunk - 1) / kChunk, 0);
    parallel_for(n, [&](std::size_t begin, std::size_t end) {
        std::vector<double> b(N * d), sig(N * dd), h(N * d), s(d), s_new(d);
        std::vector<double> zeros(scalar ? N : 0, 0.0), eb(S), es(S), sv(S), xv(S), rv(S);
        std::vector<const double*> bt(S), st(S);
        bool any = false;
        for (std::size_t p = begin; p < end; ++p) {
            for (std::size_t k = 0; k < N; ++k) {
                const double t = state.grid.time(k);
                model.drift.eval(t, state.s(p, k), {b.data() + k * d, d});
                model.volatility.eval(t, state.s(p, k), {sig.data() + k * dd, dd});
            }
            any |= fill(p, h);
            const double frozen_y =
                cost.claim_mode == ClaimMode::frozen ? cost.claim.value(state.s(p, N)) : 0.0;
            if (scalar) {
                // Scalar fast path: scenarios advance together so their recursions
                // overlap. Per scenario, the floating-point operations match the
                // generic loop below (a missing direction reads zeros).
                const double* w = batch.increments.data() + p * N;
                for (std::size_t sc = 0; sc < S; ++sc) {
                    const Scenario& scen = scenarios[sc];
                    bt[sc] = scen.direction ? scen.direction->fields.drift_at(p, 0) : zeros.data();
                    st[sc] = scen.direction ? scen.direction->fields.vol_at(p, 0) : zeros.data();
                    eb[sc] = epsilon * spec.gamma * scen.tau;
                    es[sc] = epsilon * spec.eta * scen.tau;
                    sv[sc] = model.s0[0];
                    xv[sc] = problem.x0;
                    rv[sc] = 0.0;
                }
                for (std::size_t k = 0; k < N; ++k) {
                    const double bk = b[k], sk = sig[k], wk = w[k], hk = h[k];
                    if (quad) {
                        const double hch = hk * qc * hk;
                        for (std::size_t sc = 0; sc < S; ++sc) {
                            double v = qa * xv[sc] * xv[sc];
                            v += xv[sc] * qb * hk;
                            v += hch;
                            rv[sc] += v * dt;
                        }
                    }
                    for (std::size_t sc = 0; sc < S; ++sc) {
                        double inc = (bk + eb[sc] * bt[sc][k]) * dt;
                        inc += (sk + es[sc] * st[sc][k]) * wk;
                        const double sn = sv[sc] + inc;
                        xv[sc] = xv[sc] + hk * (sn - sv[sc]);
                        sv[sc] = sn;
                    }
                }
                for (std::size_t sc = 0; sc < S; ++sc) {
                    s[0] = sv[sc];
                    const double y = cost.claim_mode == ClaimMode::frozen ? frozen_y : cost.claim.value(s);
                    per[sc][p] = rv[sc] + cost.terminal.value(xv[sc], y);
                }
                continue;
            }
            for (std::size_t sc = 0; sc < S; ++sc) {
                const Scenario& scen = scenarios[sc];
                const DirectionFields* f = scen.direction ? &scen.direction->fields : nullptr;
                const double eb = epsilon * spec.gamma * scen.tau;
                const double es = epsilon * spec.eta * scen.tau;
                std::copy(model.s0.begin(), model.s0.end(), s.begin());
                double x = problem.x0;
                double run = 0.0;
                for (std::size_t k = 0; k < N; ++k) {
                    const double* hk = h.data() + k * d;
                    if (!cost.running.zero) run += cost.running.value(state.grid.time(k), x, {hk, d}) * dt;
                    const auto w = batch.step(p, k);
                    const double* bk = b.data() + k * d;
                    const double* sk = sig.data() + k * dd;
                    double dx = 0.0;
                    if (f) {
                        const double* bt = f->drift_at(p, k);
                        const double* st = f->vol_at(p, k);
                        for (std::size_t i = 0; i < d; ++i) {
                            double inc = (bk[i] + eb * bt[i]) * dt;
                            for (std::size_t j = 0; j < d; ++j) inc += (sk[i * d + j] + es * st[i * d + j]) * w[j];
                            s_new[i] = s[i] + inc;
                            dx += hk[i] * (s_new[i] - s[i]);
                        }
                    } else {
                        for (std::size_t i = 0; i < d; ++i) {
                            double inc = bk[i] * dt;
                            for (std::size_t j = 0; j < d; ++j) inc += sk[i * d + j] * w[j];
                            s_new[i] = s[i] + inc;
                            dx += hk[i] * (s_new[i] - s[i]);
                        }
                    }
                    x = x + dx;
                    s.swap(s_new);
                }
                const double y = cost.claim_mode == ClaimMode::frozen ? frozen_y : cost.claim.value(s);
                per[sc][p] = run + cost.terminal.value(x, y);
            }
        }
        if (any) moved[begin / kChunk] = 1;
    });
    ScenarioResults out;
    out.projected = std::any_of(moved.begin(), moved.end(), [](unsigned char c) { return c != 0; });
    for (std::size_t sc = 0; sc < S; ++sc) out.estimates.push_back(mean_and_se(per[sc]));
    if (keep_paths) out.per_path = std::move(per);
    return out;
}

}  // namespace

ScenarioResults evaluate_scenarios(const Problem& problem, const Strategy& strategy, const PathBatch& state,
                                   const BrownianBatch& batch, std::span<const Scenario> scenarios, double epsilon,
                                   const RobustnessSpec& spec, bool keep_paths) {
    if (strategy.dim() != state.dim) throw ShapeError("strategy dimension does not match the paths");
    const std::size_t N = state.grid.n_steps, d = state.dim;
    return run_scenarios(problem, state, batch, scenarios, epsilon, spec, keep_paths,
                         [&](std::size_t p, std::vector<double>& h) {
                             bool any = false;
                             double x = problem.x0;
                             for (std::size_t k = 0; k < N; ++k) {
                                 const auto s = state.s(p, k);
                                 const auto s1 = state.s(p, k + 1);
                                 std::span<double> hk{h.data() + k * d, d};
                                 any |= strategy.evaluate(state.grid.time(k), x, s, hk);
                                 double dx = 0.0;
                                 for (std::size_t i = 0; i < d; ++i) dx += hk[i] * (s1[i] - s[i]);
                                 x = x + dx;
                             }
                             return any;
                         });
}

ScenarioResults evaluate_scenarios(const Problem& problem, const PathBatch& controls, const BrownianBatch& batch,
                                   std::span<const Scenario> scenarios, double epsilon, const RobustnessSpec& spec,
                                   bool keep_paths) {
    if (!controls.has_control()) throw ShapeError("control paths are required");
    const std::size_t N = controls.grid.n_steps, d = controls.dim;
    return run_scenarios(problem, controls, batch, scenarios, epsilon, spec, keep_paths,
                         [&](std::size_t p, std::vector<double>& h) {
                             std::copy_n(controls.control.data() + p * N * d, N * d, h.begin());
                             return false;
                         });
}

WorstCase worst_case_value(const Problem& problem, const Strategy& strategy, double epsilon,
                           std::span<const PerturbationDirection> directions, const RobustnessSpec& spec,
                           const BrownianBatch& batch, const PathBatch& state, std::span<const double> radial) {
    static const std::vector<double> kRadial{0.0, 0.25, 0.5, 0.75, 1.0};
    if (radial.empty()) radial = kRadial;
    const auto scen = scenario_grid(directions, radial);
    auto res = evaluate_scenarios(problem, strategy, state, batch, scen, epsilon, spec, true);
    std::size_t best = 0;
    for (std::size_t i = 1; i < scen.size(); ++i)
        if (res.estimates[i].mean > res.estimates[best].mean) best = i;
    WorstCase w;
    w.value = res.estimates[best].mean;
    w.se = res.estimates[best].se;
    w.tau = scen[best].tau;
    w.direction = scen[best].direction ? static_cast<std::size_t>(scen[best].direction - directions.data())
                                        : directions.size();
    w.per_path = std::move(res.per_path[best]);
    return w;
}

RobustResult robust_value(const Problem& problem, const Strategy& start, double epsilon,
                          std::vector<PerturbationDirection>& directions, const RobustnessSpec& spec,
                          const BrownianBatch& batch, const PathBatch& state, const OptimizerSettings& opt,
                          const SensitivityOptions& options) {
    std::vector<double> theta = start.theta();
    bool converged = false;
    std::vector<double> last_adversary;  // theta at which the last adversarial direction was built
    auto adversary_at = [&](const std::vector<double>& th) {
        const Strategy s = start.with_theta(th);
        const PathBatch controls = simulate_wealth(s, state, batch, problem.x0);
        const TerminalData td = terminal_data(problem.cost, controls);
        const BsdeSolution sol = solve_bsde(td, controls, batch, options.basis);
        auto dir = adversarial_direction(sol, controls, spec, options.basis);
        dir.id = "adversarial@" + s.id();
        return dir;
    };
    auto scenario_values = [&](const std::vector<double>& th) {
        const auto scen = scenario_grid(directions, options.radial);
        const auto r = evaluate_scenarios(problem, start.with_theta(th), state, batch, scen, epsilon, spec, false);
        MultiEvaluation out;
        out.projected = r.projected;
        for (const auto& e : r.estimates) out.values.push_back(e.mean);
        return out;
    };
    auto max_over = [&](const std::vector<double>& th) {
        const auto v = scenario_values(th).values;
        return Evaluation{*std::max_element(v.begin(), v.end()), false};
    };
    for (std::size_t round = 0;; ++round) {
        const MinimizeResult m = minimize_max(scenario_values, theta, opt);
        theta = start.with_theta(m.theta).canonical().theta();
        converged = m.converged;
        if (round >= options.rounds || epsilon == 0.0) break;
        // The caller's family is expected to hold the adversary of `start`.
        if (theta == last_adversary || theta == start.theta()) break;
        directions.push_back(adversary_at(theta));
        last_adversary = theta;
    }
    // Never worse than the starting strategy under the final family.
    if (max_over(start.theta()).value <= max_over(theta).value) theta = start.theta();

    RobustResult out;
    out.strategy = start.with_theta(theta);
    out.converged = converged;
    const WorstCase w =
        worst_case_value(problem, out.strategy, epsilon, directions, spec, batch, state, options.radial);
    out.value = w.value;
    out.se = w.se;
    out.direction = w.direction;
    out.tau = w.tau;
    out.per_path = w.per_path;
    out.bracket_lower = w.value;
    out.bracket_upper = w.value;
    if (epsilon > 0.0 && theta != last_adversary && theta != start.theta()) {
        directions.push_back(adversary_at(theta));
        out.bracket_upper =
            worst_case_value(problem, out.strategy, epsilon, directions, spec, batch, state, options.radial).value;
        directions.pop_back();
    }
    return out;
}

BsdeSummary summarize(const BsdeSolution& sol) {
    BsdeSummary s;
    auto scan = [&](const std::vector<StepDiagnostics>& diags) {
        for (const auto& d : diags) {
            s.max_residual_energy = std::max(s.max_residual_energy, d.residual_energy);
            if (d.increment_se > 0.0)
                s.max_abs_increment_t = std::max(s.max_abs_increment_t, std::abs(d.increment_mean) / d.increment_se);
            for (double c : d.correlation)
                s.max_abs_correlation_t = std::max(s.max_abs_correlation_t, std::abs(c) / d.correlation_se);
            s.rank_deficient = s.rank_deficient || d.rank_deficient_y || d.rank_deficient_z;
        }
    };
    scan(sol.scalar_diagnostics);
    for (const auto& v : sol.vector_diagnostics) scan(v);
    return s;
}

Pipeline run_pipeline(const Problem& problem, const Strategy& family, const RobustnessSpec& spec,
                      const SimSettings& sim, const OptimizerSettings& opt, const SensitivityOptions& options) {
    Pipeline pl;
    const TimeGrid grid = TimeGrid::uniform(problem.model.horizon, sim.n_steps);
    pl.batch = sample_brownian(grid, sim.n_paths, problem.model.dim, component_seed(sim.seed, "brownian"));
    pl.state = simulate_state(problem.model, pl.batch);
    pl.baseline = solve_baseline(problem, family, pl.batch, pl.state, opt);
    pl.controls = simulate_wealth(pl.baseline.strategy, pl.state, pl.batch, problem.x0);
    pl.data = terminal_data(problem.cost, pl.controls);
    pl.bsde = solve_bsde(pl.data, pl.controls, pl.batch, options.basis);
    pl.sensitivity = first_order_sensitivity(pl.bsde, pl.controls, spec);
    pl.adversarial = adversarial_direction(pl.bsde, pl.controls, spec, options.basis);
    return pl;
}

SlopeFit fit_expansion(std::span<const double> eps, const std::vector<std::vector<double>>& increments) {
    const std::size_t m = eps.size();
    if (m < 2 || increments.size() != m) throw ShapeError("expansion fit needs at least two epsilon rows");
    Eigen::MatrixXd X(m, 2);
    for (std::size_t i = 0; i < m; ++i) {
        X(i, 0) = eps[i];
        X(i, 1) = eps[i] * eps[i];
    }
    // Rows of W map the row means to (a, c).
    const Eigen::MatrixXd W = (X.transpose() * X).ldlt().solve(X.transpose());
    const std::size_t n = increments.front().size();
    std::vector<double> a(n), c(n);
    for (std::size_t p = 0; p < n; ++p) {
        double sa = 0.0, sc = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            sa += W(0, static_cast<Eigen::Index>(i)) * increments[i][p];
            sc += W(1, static_cast<Eigen::Index>(i)) * increments[i][p];
        }
        a[p] = sa;
        c[p] = sc;
    }
    const Estimate ea = mean_and_se(a);
    return {ea.mean, ea.se, sample_mean(c)};
}

SensitivityReport expansion_report(const Problem& problem, const Pipeline& pl, const RobustnessSpec& spec,
                                   const OptimizerSettings& opt, const SensitivityOptions& options) {
    const auto& eps = spec.epsilons;
    if (eps.size() < 4 || eps.back() < 4.0 * eps.front())
        throw ConfigError("expansion needs at least 4 epsilons spanning a factor of 4");
    SensitivityReport rep;
    rep.v0 = pl.baseline.value;
    rep.v0_se = pl.baseline.se;
    rep.theta_star = pl.baseline.strategy.theta();
    rep.baseline_converged = pl.baseline.converged;
    rep.sensitivity = pl.sensitivity;
    rep.bsde = summarize(pl.bsde);

    std::vector<PerturbationDirection> family;
    family.push_back(pl.adversarial);
    for (std::size_t i = 0; i < options.random_probes; ++i)
        family.push_back(random_direction(pl.controls, options.basis, spec.p,
                                          component_seed(options.seed, "probe-" + std::to_string(i))));

    const auto base = strategy_path_costs(problem.cost, pl.baseline.strategy, pl.state, problem.x0);
    const std::size_t family_size = family.size();
    std::vector<std::vector<double>> inc_v, inc_vstar;
    for (double e : eps) {
        const RobustResult r =
            robust_value(problem, pl.baseline.strategy, e, family, spec, pl.batch, pl.state, opt, options);
        const WorstCase w =
            worst_case_value(problem, pl.baseline.strategy, e, family, spec, pl.batch, pl.state, options.radial);
        family.resize(family_size);
        ExpansionRow row;
        row.epsilon = e;
        row.v_hat = r.value;
        row.v_se = r.se;
        row.vstar_hat = w.value;
        row.vstar_se = w.se;
        std::vector<double> gap(base.size()), iv(base.size()), ivs(base.size());
        for (std::size_t p = 0; p < base.size(); ++p) {
            gap[p] = w.per_path[p] - r.per_path[p];
            iv[p] = r.per_path[p] - base[p];
            ivs[p] = w.per_path[p] - base[p];
        }
        const Estimate g = mean_and_se(gap);
        row.gap = g.mean;
        row.gap_se = g.se;
        row.gap_over_eps2 = g.mean / (e * e);
        row.bracket_lower = r.bracket_lower;
        row.bracket_upper = r.bracket_upper;
        row.theta = r.strategy.theta();
        row.converged = r.converged;
        rep.rows.push_back(row);
        inc_v.push_back(std::move(iv));
        inc_vstar.push_back(std::move(ivs));
    }
    const SlopeFit fv = fit_expansion(eps, inc_v);
    const SlopeFit fs = fit_expansion(eps, inc_vstar);
    rep.slope = fv.a;
    rep.slope_se = fv.a_se;
    rep.quadratic = fv.c;
    rep.envelope_slope = fs.a;
    rep.envelope_slope_se = fs.a_se;
    rep.seed = options.seed;
    return rep;
}

SensitivityReport expansion_report(const Problem& problem, const Strategy& family, const RobustnessSpec& spec,
                                   const SimSettings& sim, const OptimizerSettings& opt,
                                   const SensitivityOptions& options) {
    const Pipeline pl = run_pipeline(problem, family, spec, sim, opt, options);
    SensitivityReport rep = expansion_report(problem, pl, spec, opt, options);
    rep.seed = sim.seed;
    return rep;
}

}  // namespace rsens

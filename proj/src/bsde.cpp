#include "rsens/bsde.hpp"

#include "normal_equations.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <sstream>

namespace rsens {

std::size_t RegressionBasis::size() const {
    if (dim < 1 || dim > 16) throw ConfigError("regression basis dimension must be in [1, 16]");
    const std::size_t v = dim + 1;  // x and s_1..s_d
    switch (degree) {
        case 0: return 1;
        case 1: return 1 + v;
        case 2: return 1 + v + v * (v + 1) / 2;
        default: throw ConfigError("regression basis degree must be 0, 1 or 2");
    }
}

void RegressionBasis::evaluate(double x, std::span<const double> s, std::span<double> out) const {
    out[0] = 1.0;
    if (degree == 0) return;
    const std::size_t v = dim + 1;
    double var[17];
    var[0] = x;
    for (std::size_t i = 0; i < dim; ++i) var[i + 1] = s[i];
    std::size_t j = 1;
    for (std::size_t i = 0; i < v; ++i) out[j++] = var[i];
    if (degree == 1) return;
    for (std::size_t i = 0; i < v; ++i)
        for (std::size_t l = i; l < v; ++l) out[j++] = var[i] * var[l];
}

std::string RegressionBasis::describe() const {
    std::ostringstream os;
    os << "polynomial degree " << degree << " in (x, s), d=" << dim << ", " << size() << " functions";
    return os.str();
}

TerminalData terminal_data(const CostSpec& cost, const PathBatch& paths) {
    if (!paths.has_wealth() || !paths.has_control()) throw ShapeError("terminal data needs wealth and control paths");
    const std::size_t n = paths.n_paths, N = paths.grid.n_steps, d = paths.dim;
    TerminalData td;
    td.n_paths = n;
    td.n_steps = N;
    td.dim = d;
    td.running_zero = cost.running.zero;
    td.a.resize(n);
    td.b.resize(n * d);
    td.r.assign(cost.running.zero ? 0 : n * N, 0.0);
    parallel_for(n, [&](std::size_t begin, std::size_t end) {
        std::vector<double> grad(1 + d), lg(d);
        for (std::size_t p = begin; p < end; ++p) {
            const auto sT = paths.s(p, N);
            const double y = cost.claim.value(sT);
            const auto fg = cost.terminal.gradient(paths.x(p, N), y);
            td.a[p] = fg[0];
            cost.claim.gradient(sT, lg);
            for (std::size_t i = 0; i < d; ++i) td.b[p * d + i] = fg[1] * lg[i];
            if (!cost.running.zero)
                for (std::size_t k = 0; k < N; ++k) {
                    cost.running.gradient(paths.grid.time(k), paths.x(p, k), paths.h(p, k), grad);
                    td.r[p * N + k] = grad[0];
                }
            if (!std::isfinite(td.a[p])) throw SimulationError("non-finite terminal data on path " + std::to_string(p));
        }
    });
    return td;
}

namespace {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// Gram matrix and right-hand sides accumulated per chunk, merged in chunk order.
template <class Features, class Targets>
void accumulate(std::size_t n, std::size_t m, std::size_t t, Features features, Targets targets, Mat& gram,
                Mat& rhs) {
    const std::size_t chunks = (n + kChunk - 1) / kChunk;
    std::vector<std::vector<double>> g(chunks), r(chunks);
    parallel_for(n, [&](std::size_t begin, std::size_t end) {
        std::vector<double>& gc = g[begin / kChunk];
        std::vector<double>& rc = r[begin / kChunk];
        gc.assign(m * m, 0.0);
        rc.assign(m * t, 0.0);
        Vec phi(m);
        Vec y(t);
        for (std::size_t p = begin; p < end; ++p) {
            features(p, phi);
            targets(p, y);
            for (std::size_t a = 0; a < m; ++a) {
                const double fa = phi(a);
                double* row = gc.data() + a * m;
                for (std::size_t b = 0; b <= a; ++b) row[b] += fa * phi(b);
                for (std::size_t j = 0; j < t; ++j) rc[a * t + j] += fa * y(j);
            }
        }
    });
    gram = Mat::Zero(m, m);
    rhs = Mat::Zero(m, t);
    for (std::size_t c = 0; c < chunks; ++c)
        for (std::size_t a = 0; a < m; ++a) {
            for (std::size_t b = 0; b <= a; ++b) gram(a, b) += g[c][a * m + b];
            for (std::size_t j = 0; j < t; ++j) rhs(a, j) += r[c][a * t + j];
        }
    gram = gram.selfadjointView<Eigen::Lower>();
}


// [n][steps][width] <-> [steps][n][width], blocked over paths.
std::vector<double> to_time_major(const double* src, std::size_t n, std::size_t steps, std::size_t width) {
    std::vector<double> dst(n * steps * width);
    constexpr std::size_t block = 64;
    for (std::size_t p0 = 0; p0 < n; p0 += block) {
        const std::size_t p1 = std::min(n, p0 + block);
        for (std::size_t k = 0; k < steps; ++k)
            for (std::size_t p = p0; p < p1; ++p)
                for (std::size_t i = 0; i < width; ++i)
                    dst[(k * n + p) * width + i] = src[(p * steps + k) * width + i];
    }
    return dst;
}

void to_path_major(const std::vector<double>& src, std::size_t n, std::size_t steps, std::size_t width,
                   std::vector<double>& dst) {
    dst.resize(n * steps * width);
    constexpr std::size_t block = 64;
    for (std::size_t p0 = 0; p0 < n; p0 += block) {
        const std::size_t p1 = std::min(n, p0 + block);
        for (std::size_t k = 0; k < steps; ++k)
            for (std::size_t p = p0; p < p1; ++p)
                for (std::size_t i = 0; i < width; ++i)
                    dst[(p * steps + k) * width + i] = src[(k * n + p) * width + i];
    }
}

}  // namespace

ComponentSolution solve_component(std::span<const double> terminal, std::span<const double> running,
                                  const PathBatch& paths, const BrownianBatch& batch, const RegressionBasis& basis) {
    const std::size_t n = paths.n_paths, N = paths.grid.n_steps, d = paths.dim;
    if (terminal.size() != n) throw ShapeError("terminal values do not match the paths");
    if (!running.empty() && running.size() != n * N) throw ShapeError("running values do not match the paths");
    if (batch.n_paths != n || batch.grid.n_steps != N || batch.dim != d) throw ShapeError("batch is not aligned");
    if (basis.dim != d) throw ShapeError("basis dimension does not match the paths");
    const std::size_t m = basis.size();
    const double dt = paths.grid.dt();
    const bool wealth = paths.has_wealth();

    // The backward sweep reads one time slice at a time, so work on time-major copies.
    const std::vector<double> xt = wealth ? to_time_major(paths.wealth.data(), n, N + 1, 1) : std::vector<double>{};
    const std::vector<double> st = to_time_major(paths.state->data(), n, N + 1, d);
    const std::vector<double> wt = to_time_major(batch.increments.data(), n, N, d);
    const std::vector<double> rt = running.empty() ? std::vector<double>{} : to_time_major(running.data(), n, N, 1);
    std::vector<double> yt(n * (N + 1), 0.0), zt(n * N * d, 0.0);

    ComponentSolution sol;
    sol.diagnostics.resize(N);
    std::vector<double> tail(terminal.begin(), terminal.end());
    std::copy(terminal.begin(), terminal.end(), yt.begin() + N * n);

    // Features of the current time slice, evaluated once per step.
    std::vector<double> feat(n * m);
    auto phi_at = [&](std::size_t p, std::size_t, double* out) { std::copy_n(feat.data() + p * m, m, out); };

    for (std::size_t kk = N; kk-- > 0;) {
        const std::size_t k = kk;
        const double* yk = yt.data() + k * n;
        const double* yk1 = yt.data() + (k + 1) * n;
        const double* wk = wt.data() + k * n * d;
        const double* rk = rt.empty() ? nullptr : rt.data() + k * n;
        if (rk)
            for (std::size_t p = 0; p < n; ++p) tail[p] += rk[p] * dt;
        parallel_for(n, [&](std::size_t begin, std::size_t end) {
            for (std::size_t p = begin; p < end; ++p)
                basis.evaluate(wealth ? xt[k * n + p] : 0.0, {st.data() + (k * n + p) * d, d},
                               {feat.data() + p * m, m});
        });

        // Y_k: regression of the full forward target.
        Mat gram, rhs;
        accumulate(
            n, m, 1, [&](std::size_t p, Vec& phi) { phi_at(p, k, phi.data()); },
            [&](std::size_t p, Vec& y) { y(0) = tail[p]; }, gram, rhs);
        bool rank_deficient_y = false;
        const Vec beta = detail::solve_normal(gram, rhs, rank_deficient_y).col(0);
        parallel_for(n, [&](std::size_t begin, std::size_t end) {
            Vec phi(m);
            for (std::size_t p = begin; p < end; ++p) {
                phi_at(p, k, phi.data());
                yt[k * n + p] = phi.dot(beta);
            }
        });

        // Z_k: martingale increment regressed on basis x dW_k.
        auto increment = [&](std::size_t p) {
            double v = yk1[p] - yk[p];
            if (rk) v += rk[p] * dt;
            return v;
        };
        const std::size_t md = m * d;
        Mat gz, rz;
        accumulate(
            n, md, 1,
            [&](std::size_t p, Vec& f) {
                double phi[256];
                phi_at(p, k, phi);
                const double* w = wk + p * d;
                for (std::size_t j = 0; j < m; ++j)
                    for (std::size_t i = 0; i < d; ++i) f(j * d + i) = phi[j] * w[i];
            },
            [&](std::size_t p, Vec& y) { y(0) = increment(p); }, gz, rz);
        bool rank_deficient_z = false;
        const Vec c = detail::solve_normal(gz, rz, rank_deficient_z).col(0);

        std::vector<double> e(n), zw(n), dm(n);
        parallel_for(n, [&](std::size_t begin, std::size_t end) {
            double phi[256];
            for (std::size_t p = begin; p < end; ++p) {
                phi_at(p, k, phi);
                const double* w = wk + p * d;
                double* z = zt.data() + (k * n + p) * d;
                double zdw = 0.0;
                for (std::size_t i = 0; i < d; ++i) {
                    double v = 0.0;
                    for (std::size_t j = 0; j < m; ++j) v += c(j * d + i) * phi[j];
                    z[i] = v;
                    zdw += v * w[i];
                }
                dm[p] = increment(p);
                zw[p] = zdw;
                e[p] = dm[p] - zdw;
            }
        });

        StepDiagnostics& dg = sol.diagnostics[k];
        dg.rank_deficient_y = rank_deficient_y;
        dg.rank_deficient_z = rank_deficient_z;
        double e2 = 0.0;
        for (double v : e) e2 += v * v;
        dg.residual_energy = e2 / static_cast<double>(n);
        dg.increment_mean = sample_mean(e);
        const double v_dm = mean_and_se(dm).se, v_zw = mean_and_se(zw).se;
        dg.increment_se = std::sqrt(v_dm * v_dm + v_zw * v_zw);
        dg.correlation.assign(d, 0.0);
        dg.correlation_se = 1.0 / std::sqrt(static_cast<double>(n));
        // Product-moment correlation about zero: dW has mean zero by construction,
        // and centering would mix in the sample mean of Z dW when e is tiny.
        for (std::size_t i = 0; i < d; ++i) {
            double cov = 0.0, w2 = 0.0;
            for (std::size_t p = 0; p < n; ++p) {
                const double dw = wk[p * d + i];
                cov += e[p] * dw;
                w2 += dw * dw;
            }
            dg.correlation[i] = (e2 > 0.0 && w2 > 0.0) ? cov / std::sqrt(e2 * w2) : 0.0;
        }
    }
    to_path_major(yt, n, N + 1, 1, sol.y);
    to_path_major(zt, n, N, d, sol.z);
    return sol;
}

ComponentSolution solve_scalar_bsde(const TerminalData& data, const PathBatch& paths, const BrownianBatch& batch,
                                    const RegressionBasis& basis) {
    return solve_component(data.a, data.r, paths, batch, basis);
}

std::vector<ComponentSolution> solve_vector_bsde(const TerminalData& data, const PathBatch& paths,
                                                 const BrownianBatch& batch, const RegressionBasis& basis) {
    std::vector<ComponentSolution> out;
    const std::size_t n = data.n_paths, d = data.dim;
    std::vector<double> b(n);
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t p = 0; p < n; ++p) b[p] = data.b[p * d + i];
        out.push_back(solve_component(b, {}, paths, batch, basis));
    }
    return out;
}

BsdeSolution solve_bsde(const TerminalData& data, const PathBatch& paths, const BrownianBatch& batch,
                        const RegressionBasis& basis) {
    const std::size_t n = data.n_paths, N = data.n_steps, d = data.dim;
    BsdeSolution sol;
    sol.n_paths = n;
    sol.n_steps = N;
    sol.dim = d;
    sol.basis = basis.describe();
    ComponentSolution scalar = solve_scalar_bsde(data, paths, batch, basis);
    sol.y = std::move(scalar.y);
    sol.z = std::move(scalar.z);
    sol.scalar_diagnostics = std::move(scalar.diagnostics);
    auto comps = solve_vector_bsde(data, paths, batch, basis);
    sol.ycal.assign(n * (N + 1) * d, 0.0);
    sol.zcal.assign(n * N * d * d, 0.0);
    for (std::size_t i = 0; i < d; ++i) {
        const auto& c = comps[i];
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t k = 0; k <= N; ++k) sol.ycal[(p * (N + 1) + k) * d + i] = c.y[p * (N + 1) + k];
            for (std::size_t k = 0; k < N; ++k)
                for (std::size_t j = 0; j < d; ++j)
                    sol.zcal[((p * N + k) * d + i) * d + j] = c.z[(p * N + k) * d + j];
        }
        sol.vector_diagnostics.push_back(c.diagnostics);
    }
    return sol;
}

std::vector<double> feynman_kac_reference(const ValueFunctionGradient& j, const MarketModel& model,
                                          const PathBatch& paths) {
    if (!paths.has_wealth() || !paths.has_control()) throw ShapeError("reference needs wealth and control paths");
    const std::size_t n = paths.n_paths, N = paths.grid.n_steps, d = paths.dim;
    std::vector<double> z(n * N * d);
    parallel_for(n, [&](std::size_t begin, std::size_t end) {
        std::vector<double> sig(d * d), ds(d), v(d);
        for (std::size_t p = begin; p < end; ++p)
            for (std::size_t k = 0; k < N; ++k) {
                const double t = paths.grid.time(k);
                const auto s = paths.s(p, k);
                double dx = 0.0;
                j.eval(t, paths.x(p, k), s, dx, ds);
                model.volatility.eval(t, s, sig);
                const auto h = paths.h(p, k);
                for (std::size_t i = 0; i < d; ++i) v[i] = dx * h[i] + ds[i];
                for (std::size_t c = 0; c < d; ++c) {
                    double acc = 0.0;
                    for (std::size_t r = 0; r < d; ++r) acc += sig[r * d + c] * v[r];
                    z[(p * N + k) * d + c] = acc;
                }
            }
    });
    return z;
}

}  // namespace rsens

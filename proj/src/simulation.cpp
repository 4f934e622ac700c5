#include "rsens/simulation.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include "rsens/strategy.hpp"

namespace rsens {

TimeGrid TimeGrid::uniform(double horizon, std::size_t n_steps) {
    if (n_steps == 0) throw ConfigError("time grid needs at least one step");
    if (!(horizon > 0.0)) throw ConfigError("horizon must be positive");
    return {n_steps, horizon};
}

double TimeGrid::time(std::size_t k) const {
    return k == n_steps ? horizon : horizon * static_cast<double>(k) / static_cast<double>(n_steps);
}

BrownianBatch sample_brownian(const TimeGrid& grid, std::size_t n_paths, std::size_t dim, std::uint64_t seed) {
    if (n_paths == 0) throw ConfigError("n_paths must be at least 1");
    if (dim == 0) throw ConfigError("dimension must be at least 1");
    BrownianBatch batch;
    batch.grid = grid;
    batch.n_paths = n_paths;
    batch.dim = dim;
    batch.seed = seed;
    const std::size_t per_path = grid.n_steps * dim;
    batch.increments.resize(n_paths * per_path);
    const double sd = std::sqrt(grid.dt());
    parallel_for(n_paths, [&](std::size_t begin, std::size_t end) {
        for (std::size_t p = begin; p < end; ++p) {
            std::mt19937_64 gen(path_seed(seed, p));
            std::normal_distribution<double> z(0.0, 1.0);
            double* out = batch.increments.data() + p * per_path;
            for (std::size_t j = 0; j < per_path; ++j) out[j] = sd * z(gen);
        }
    });
    return batch;
}

BrownianBatch BrownianBatch::coarsen(std::size_t factor) const {
    if (factor == 0 || grid.n_steps % factor != 0) throw ShapeError("coarsening factor must divide n_steps");
    BrownianBatch out;
    out.grid = TimeGrid::uniform(grid.horizon, grid.n_steps / factor);
    out.n_paths = n_paths;
    out.dim = dim;
    out.seed = seed;
    out.increments.assign(n_paths * out.grid.n_steps * dim, 0.0);
    for (std::size_t p = 0; p < n_paths; ++p)
        for (std::size_t k = 0; k < grid.n_steps; ++k)
            for (std::size_t i = 0; i < dim; ++i)
                out.increments[(p * out.grid.n_steps + k / factor) * dim + i] += dw(p, k, i);
    return out;
}

DirectionFields DirectionFields::zeros(std::size_t n_paths, std::size_t n_steps, std::size_t dim) {
    DirectionFields f;
    f.n_paths = n_paths;
    f.n_steps = n_steps;
    f.dim = dim;
    f.drift.assign(n_paths * n_steps * dim, 0.0);
    f.vol.assign(n_paths * n_steps * dim * dim, 0.0);
    return f;
}

namespace {

void check_finite_state(std::span<const double> s, std::size_t p, std::size_t k) {
    for (double v : s)
        if (!std::isfinite(v))
            throw SimulationError("non-finite state (overflow) on path " + std::to_string(p) + " at step " +
                                  std::to_string(k));
}

}  // namespace

PathBatch simulate_state(const MarketModel& model, const BrownianBatch& batch, const Perturbation* perturbation) {
    model.check();
    if (batch.dim != model.dim) throw ShapeError("Brownian batch dimension does not match the model");
    if (std::abs(batch.grid.horizon - model.horizon) > 1e-12 * model.horizon)
        throw ShapeError("Brownian batch horizon does not match the model");
    const std::size_t d = model.dim;
    const std::size_t n = batch.n_paths;
    const std::size_t N = batch.grid.n_steps;
    const DirectionFields* fields = perturbation ? perturbation->fields : nullptr;
    if (fields && (fields->n_paths != n || fields->n_steps != N || fields->dim != d))
        throw ShapeError("perturbation fields are not aligned with the batch");
    const double dt = batch.grid.dt();
    const double eb = perturbation ? perturbation->epsilon * perturbation->gamma : 0.0;
    const double es = perturbation ? perturbation->epsilon * perturbation->eta : 0.0;

    auto state = std::make_shared<std::vector<double>>(n * (N + 1) * d);
    parallel_for(n, [&](std::size_t begin, std::size_t end) {
        std::vector<double> b(d), sig(d * d), base(d), drift(d), vol(d * d);
        for (std::size_t p = begin; p < end; ++p) {
            double* sp = state->data() + p * (N + 1) * d;
            std::copy(model.s0.begin(), model.s0.end(), sp);
            std::copy(model.s0.begin(), model.s0.end(), base.begin());
            for (std::size_t k = 0; k < N; ++k) {
                const double t = batch.grid.time(k);
                // Baseline coefficients along the baseline path.
                model.drift.eval(t, base, b);
                model.volatility.eval(t, base, sig);
                const auto w = batch.step(p, k);
                for (std::size_t i = 0; i < d; ++i) {
                    drift[i] = b[i];
                    for (std::size_t j = 0; j < d; ++j) vol[i * d + j] = sig[i * d + j];
                }
                if (fields) {
                    const double* bt = fields->drift_at(p, k);
                    const double* st = fields->vol_at(p, k);
                    for (std::size_t i = 0; i < d; ++i) {
                        drift[i] = b[i] + eb * bt[i];
                        for (std::size_t j = 0; j < d; ++j) vol[i * d + j] = sig[i * d + j] + es * st[i * d + j];
                    }
                }
                const double* cur = sp + k * d;
                double* nxt = sp + (k + 1) * d;
                for (std::size_t i = 0; i < d; ++i) {
                    double inc = drift[i] * dt;
                    for (std::size_t j = 0; j < d; ++j) inc += vol[i * d + j] * w[j];
                    nxt[i] = cur[i] + inc;
                    double binc = b[i] * dt;
                    for (std::size_t j = 0; j < d; ++j) binc += sig[i * d + j] * w[j];
                    base[i] = base[i] + binc;
                }
                check_finite_state({nxt, d}, p, k + 1);
            }
        }
    });
    PathBatch out;
    out.grid = batch.grid;
    out.n_paths = n;
    out.dim = d;
    out.state = std::move(state);
    out.provenance.model_id = model.id;
    out.provenance.seed = batch.seed;
    if (perturbation) out.provenance.perturbation_id = perturbation->id;
    return out;
}

PathBatch simulate_wealth(const Strategy& strategy, const PathBatch& paths, const BrownianBatch& batch, double x0) {
    if (paths.n_paths != batch.n_paths || paths.grid.n_steps != batch.grid.n_steps || paths.dim != batch.dim)
        throw ShapeError("paths and Brownian batch are not aligned");
    if (strategy.dim() != paths.dim) throw ShapeError("strategy dimension does not match the paths");
    const std::size_t n = paths.n_paths, N = paths.grid.n_steps, d = paths.dim;
    PathBatch out = paths;
    out.x0 = x0;
    out.wealth.assign(n * (N + 1), 0.0);
    out.control.assign(n * N * d, 0.0);
    out.provenance.strategy_id = strategy.id();
    parallel_for(n, [&](std::size_t begin, std::size_t end) {
        for (std::size_t p = begin; p < end; ++p) {
            double* x = out.wealth.data() + p * (N + 1);
            x[0] = x0;
            for (std::size_t k = 0; k < N; ++k) {
                const auto s = paths.s(p, k);
                const auto s1 = paths.s(p, k + 1);
                std::span<double> h{out.control.data() + (p * N + k) * d, d};
                strategy.evaluate(paths.grid.time(k), x[k], s, h);
                double dx = 0.0;
                for (std::size_t i = 0; i < d; ++i) dx += h[i] * (s1[i] - s[i]);
                x[k + 1] = x[k] + dx;
            }
        }
    });
    return out;
}

PathBatch simulate_wealth_with_controls(const PathBatch& controls, const PathBatch& paths, double x0) {
    if (!controls.has_control() || controls.n_paths != paths.n_paths || controls.grid.n_steps != paths.grid.n_steps ||
        controls.dim != paths.dim)
        throw ShapeError("control paths are not aligned with the state paths");
    const std::size_t n = paths.n_paths, N = paths.grid.n_steps, d = paths.dim;
    PathBatch out = paths;
    out.x0 = x0;
    out.control = controls.control;
    out.wealth.assign(n * (N + 1), 0.0);
    out.provenance.strategy_id = controls.provenance.strategy_id;
    parallel_for(n, [&](std::size_t begin, std::size_t end) {
        for (std::size_t p = begin; p < end; ++p) {
            double* x = out.wealth.data() + p * (N + 1);
            x[0] = x0;
            for (std::size_t k = 0; k < N; ++k) {
                const auto s = paths.s(p, k);
                const auto s1 = paths.s(p, k + 1);
                const auto h = out.h(p, k);
                double dx = 0.0;
                for (std::size_t i = 0; i < d; ++i) dx += h[i] * (s1[i] - s[i]);
                x[k + 1] = x[k] + dx;
            }
        }
    });
    return out;
}

std::vector<double> path_costs(const CostSpec& cost, const PathBatch& paths, const PathBatch* claim_paths) {
    if (!paths.has_wealth() || !paths.has_control()) throw ShapeError("objective needs wealth and control paths");
    const std::size_t n = paths.n_paths, N = paths.grid.n_steps;
    const PathBatch& cp = claim_paths ? *claim_paths : paths;
    if (cp.n_paths != n || cp.grid.n_steps != N) throw ShapeError("claim paths are not aligned");
    const double dt = paths.grid.dt();
    std::vector<double> out(n);
    parallel_for(n, [&](std::size_t begin, std::size_t end) {
        for (std::size_t p = begin; p < end; ++p) {
            double run = 0.0;
            if (!cost.running.zero)
                for (std::size_t k = 0; k < N; ++k) run += cost.running.value(paths.grid.time(k), paths.x(p, k), paths.h(p, k)) * dt;
            out[p] = run + cost.terminal.value(paths.x(p, N), cost.claim.value(cp.s(p, N)));
        }
    });
    return out;
}

Estimate estimate_objective(const CostSpec& cost, const PathBatch& paths, const PathBatch* claim_paths) {
    const auto v = path_costs(cost, paths, claim_paths);
    return mean_and_se(v);
}

namespace {

NormEstimate finish_norm(std::vector<double> per_path, double p) {
    NormEstimate e;
    const Estimate m = mean_and_se(per_path);
    e.power = m.mean;
    e.power_se = m.se;
    e.value = m.mean > 0.0 ? std::pow(m.mean, 1.0 / p) : 0.0;
    e.se = m.mean > 0.0 ? e.value * m.se / (p * m.mean) : 0.0;
    e.per_path = std::move(per_path);
    return e;
}

void check_view(const ProcessView& v) {
    if (v.data.size() != v.n_paths * v.n_steps * v.width) throw ShapeError("process array has the wrong size");
}

}  // namespace

NormEstimate lp_norm(const ProcessView& v, double dt, double p) {
    if (!(p >= 1.0)) throw std::domain_error("norm exponent must be >= 1");
    check_view(v);
    std::vector<double> per(v.n_paths, 0.0);
    parallel_for(v.n_paths, [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            double acc = 0.0;
            const double* row = v.data.data() + i * v.n_steps * v.width;
            for (std::size_t k = 0; k < v.n_steps; ++k) {
                double n2 = 0.0;
                for (std::size_t j = 0; j < v.width; ++j) n2 += row[k * v.width + j] * row[k * v.width + j];
                if (n2 > 0.0) acc += std::pow(n2, 0.5 * p);
            }
            per[i] = acc * dt;
        }
    });
    return finish_norm(std::move(per), p);
}

NormEstimate hp_norm(const ProcessView& m, double dt, double p) {
    if (!(p >= 1.0)) throw std::domain_error("norm exponent must be >= 1");
    check_view(m);
    std::vector<double> per(m.n_paths, 0.0);
    parallel_for(m.n_paths, [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            double acc = 0.0;
            const double* row = m.data.data() + i * m.n_steps * m.width;
            for (std::size_t j = 0; j < m.n_steps * m.width; ++j) acc += row[j] * row[j];
            acc *= dt;
            per[i] = acc > 0.0 ? std::pow(acc, 0.5 * p) : 0.0;
        }
    });
    return finish_norm(std::move(per), p);
}

NormEstimate sup_norm_p(const ProcessView& v, double p) {
    if (!(p >= 1.0)) throw std::domain_error("norm exponent must be >= 1");
    check_view(v);
    std::vector<double> per(v.n_paths, 0.0);
    parallel_for(v.n_paths, [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            double sup = 0.0;
            const double* row = v.data.data() + i * v.n_steps * v.width;
            for (std::size_t k = 0; k < v.n_steps; ++k) {
                double n2 = 0.0;
                for (std::size_t j = 0; j < v.width; ++j) n2 += row[k * v.width + j] * row[k * v.width + j];
                sup = std::max(sup, n2);
            }
            per[i] = sup > 0.0 ? std::pow(sup, 0.5 * p) : 0.0;
        }
    });
    return finish_norm(std::move(per), p);
}

double bdg_constant(double p) {
    if (!(p > 1.0)) throw std::domain_error("BDG constant needs p > 1");
    return std::pow(p / (p - 1.0), p) * std::pow(p * (p - 1.0) / 2.0, p / 2.0);
}

AprioriConstants apriori_constants(double p, double bound_k, double horizon) {
    const double base = std::pow(2.0, p) * (std::pow(horizon, p - 1.0) + bdg_constant(p));
    return {std::pow(bound_k, p) * base, base};
}

namespace {

static_assert(std::endian::native == std::endian::little, "path dumps assume a little-endian host");

template <class T>
void put(std::ofstream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::ifstream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw std::runtime_error("truncated path dump");
    return v;
}

}  // namespace

void write_path_dump(const std::string& path, const PathDump& dump) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    os.write("RSNS", 4);
    put<std::uint32_t>(os, 1);
    put<std::uint64_t>(os, dump.n_paths);
    put<std::uint32_t>(os, dump.n_steps);
    put<std::uint32_t>(os, dump.dim);
    put<std::uint64_t>(os, dump.seed);
    os.write(reinterpret_cast<const char*>(dump.values.data()),
             static_cast<std::streamsize>(dump.values.size() * sizeof(double)));
    if (!os) throw std::runtime_error("failed writing " + path);
}

PathDump read_path_dump(const std::string& path) {
    std::ifstream is(path, std::ios::binary | std::ios::ate);
    if (!is) throw std::runtime_error("cannot open " + path);
    const auto size = static_cast<std::size_t>(is.tellg());
    is.seekg(0);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "RSNS", 4) != 0) throw std::runtime_error("not a path dump: " + path);
    if (get<std::uint32_t>(is) != 1) throw std::runtime_error("unsupported path dump version");
    PathDump dump;
    dump.n_paths = get<std::uint64_t>(is);
    dump.n_steps = get<std::uint32_t>(is);
    dump.dim = get<std::uint32_t>(is);
    dump.seed = get<std::uint64_t>(is);
    const std::size_t header = 4 + 4 + 8 + 4 + 4 + 8;
    if ((size - header) % sizeof(double) != 0) throw std::runtime_error("corrupt path dump payload");
    dump.values.resize((size - header) / sizeof(double));
    is.read(reinterpret_cast<char*>(dump.values.data()), static_cast<std::streamsize>(size - header));
    if (!is) throw std::runtime_error("truncated path dump");
    return dump;
}

}  // namespace rsens

namespace rsens {

std::vector<double> strategy_path_costs(const CostSpec& cost, const Strategy& strategy, const PathBatch& state,
                                        double x0, bool* projected) {
    if (strategy.dim() != state.dim) throw ShapeError("strategy dimension does not match the paths");
    const std::size_t n = state.n_paths, N = state.grid.n_steps, d = state.dim;
    const double dt = state.grid.dt();
    std::vector<double> out(n);
    std::vector<unsigned char> moved((n + kChunk - 1) / kChunk, 0);
    parallel_for(n, [&](std::size_t begin, std::size_t end) {
        std::vector<double> h(d);
        bool any = false;
        for (std::size_t p = begin; p < end; ++p) {
            double x = x0;
            double run = 0.0;
            for (std::size_t k = 0; k < N; ++k) {
                const double t = state.grid.time(k);
                const auto s = state.s(p, k);
                const auto s1 = state.s(p, k + 1);
                any |= strategy.evaluate(t, x, s, h);
                if (!cost.running.zero) run += cost.running.value(t, x, h) * dt;
                double dx = 0.0;
                for (std::size_t i = 0; i < d; ++i) dx += h[i] * (s1[i] - s[i]);
                x = x + dx;
            }
            out[p] = run + cost.terminal.value(x, cost.claim.value(state.s(p, N)));
        }
        moved[begin / kChunk] = any;
    });
    if (projected) *projected = std::any_of(moved.begin(), moved.end(), [](unsigned char c) { return c != 0; });
    return out;
}

}  // namespace rsens

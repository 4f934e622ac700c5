#include "rsens/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace rsens {

using nlohmann::json;

namespace {

const json& require(const json& j, const char* key, const std::string& where) {
    if (!j.is_object() || !j.contains(key)) throw ConfigError(where + "." + key + " is required");
    return j.at(key);
}

std::vector<double> flat(const json& j) {
    std::vector<double> out;
    if (j.is_number()) {
        out.push_back(j.get<double>());
        return out;
    }
    for (const auto& v : j) {
        if (v.is_array()) {
            for (const auto& w : v) out.push_back(w.get<double>());
        } else {
            out.push_back(v.get<double>());
        }
    }
    return out;
}

std::vector<double> vec(const json& j, const char* key, const std::string& where, std::size_t n) {
    auto v = flat(require(j, key, where));
    if (v.size() != n)
        throw ConfigError(where + "." + key + " must have " + std::to_string(n) + " entries");
    return v;
}

Drift parse_drift(const json& j, std::size_t d) {
    const auto kind = j.value("kind", std::string("zero"));
    if (kind == "zero") return zero_drift(d);
    if (kind == "constant") return constant_drift(vec(j, "value", "model.drift", d));
    if (kind == "linear") return linear_drift(vec(j, "mu", "model.drift", d));
    throw ConfigError("unknown drift kind '" + kind + "'");
}

Volatility parse_volatility(const json& j, std::size_t d) {
    const auto kind = require(j, "kind", "model.volatility").get<std::string>();
    if (kind == "zero") return zero_volatility(d);
    if (kind == "constant") return constant_volatility(d, vec(j, "matrix", "model.volatility", d * d));
    if (kind == "geometric") return geometric_volatility(vec(j, "v", "model.volatility", d));
    throw ConfigError("unknown volatility kind '" + kind + "'");
}

Regularity parse_regularity(const json& j) {
    Regularity r;
    const auto kind = j.value("kind", std::string("lipschitz_sde_benes"));
    if (kind == "bounded_elliptic") {
        r.kind = RegularityKind::bounded_elliptic;
    } else if (kind == "lipschitz_sde_benes") {
        r.kind = RegularityKind::lipschitz_sde_benes;
    } else {
        throw ConfigError("unknown regularity kind '" + kind + "'");
    }
    r.c_b_sigma = j.value("c_b_sigma", 0.0);
    r.ellipticity = j.value("ellipticity", 0.0);
    r.lipschitz = j.value("lipschitz", 0.0);
    r.benes = j.value("benes", 0.0);
    return r;
}

Claim parse_claim(const json& j, std::size_t d) {
    if (j.is_null()) return linear_claim(std::vector<double>(d, 1.0));
    const auto kind = j.value("kind", std::string("linear"));
    std::vector<double> w = j.contains("weights") ? vec(j, "weights", "cost.claim", d) : std::vector<double>(d, 1.0);
    if (kind == "linear") return linear_claim(std::move(w), j.value("offset", 0.0));
    if (kind == "softplus_call")
        return softplus_call(std::move(w), j.value("strike", 1.0), j.value("smoothing", 0.05));
    throw ConfigError("unknown claim kind '" + kind + "'");
}

ClaimMode parse_claim_mode(const json& j) {
    const auto s = j.value("claim_mode", std::string("market"));
    if (s == "market") return ClaimMode::market;
    if (s == "frozen") return ClaimMode::frozen;
    throw ConfigError("claim_mode must be market or frozen");
}

ConstraintSet parse_constraint(const json& j, std::size_t d) {
    const auto kind = require(j, "kind", "constraint").get<std::string>();
    if (kind == "ball") {
        auto c = j.contains("center") ? vec(j, "center", "constraint", d) : std::vector<double>(d, 0.0);
        return ball_constraint(std::move(c), require(j, "radius", "constraint").get<double>());
    }
    if (kind == "box") return box_constraint(vec(j, "lower", "constraint", d), vec(j, "upper", "constraint", d));
    if (kind == "singleton") return singleton_constraint(vec(j, "point", "constraint", d));
    throw ConfigError("unknown constraint kind '" + kind + "'");
}

std::vector<double> constraint_point(const ConstraintSet& k) {
    if (k.kind == ConstraintSet::Kind::ball) return k.a;
    std::vector<double> mid(k.dim);
    for (std::size_t i = 0; i < k.dim; ++i) mid[i] = 0.5 * (k.a[i] + k.b[i]);
    return mid;
}

Strategy parse_strategy(const json& j, const ConstraintSet& k, double horizon) {
    const std::size_t d = k.dim;
    const auto family = strategy_family_from_string(j.value("family", std::string("constant")));
    std::size_t cells = 1;
    if (j.contains("basis")) cells = j.at("basis").value("time_cells", std::size_t{1});
    if (cells < 1) throw ConfigError("strategy.basis.time_cells must be at least 1");
    const std::vector<double> start = constraint_point(k);
    std::vector<double> theta;
    std::size_t expected = 0;
    switch (family) {
        case StrategyFamily::constant:
            expected = d;
            for (double v : start) theta.push_back(v);
            break;
        case StrategyFamily::piecewise:
            expected = cells * d;
            for (std::size_t c = 0; c < cells; ++c)
                for (double v : start) theta.push_back(v);
            break;
        case StrategyFamily::feedback: {
            const std::size_t m = feedback_basis_size(d);
            expected = cells * m * d;
            theta.assign(expected, 0.0);
            for (std::size_t c = 0; c < cells; ++c)
                for (std::size_t i = 0; i < d; ++i) theta[(c * m) * d + i] = start[i];
            break;
        }
    }
    if (j.contains("theta")) {
        theta = flat(j.at("theta"));
        if (theta.size() != expected)
            throw ConfigError("strategy.theta must have " + std::to_string(expected) + " entries");
    }
    switch (family) {
        case StrategyFamily::constant: return Strategy::constant(theta, k, horizon);
        case StrategyFamily::piecewise: return Strategy::piecewise(cells, theta, k, horizon);
        case StrategyFamily::feedback: return Strategy::feedback(cells, theta, k, horizon);
    }
    throw ConfigError("unknown strategy family");
}

}  // namespace

std::string config_hash(const json& raw) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(raw.dump())));
    return buf;
}

json strategy_to_json(const Strategy& s) {
    json j;
    j["family"] = to_string(s.family());
    j["cells"] = s.cells();
    j["theta"] = s.theta();
    const auto& k = s.constraint();
    if (k.kind == ConstraintSet::Kind::ball) {
        j["constraint"] = {{"kind", "ball"}, {"center", k.a}, {"radius", k.b.empty() ? 0.0 : k.b[0]}};
    } else {
        j["constraint"] = {{"kind", "box"}, {"lower", k.a}, {"upper", k.b}};
    }
    return j;
}

RunConfig parse_config(json raw, const Overrides& ov) {
    if (!raw.is_object()) throw ConfigError("configuration must be a JSON object");
    if (raw.value("schema", 0) != 1) throw ConfigError("unsupported schema version (expected \"schema\": 1)");
    if (ov.seed) raw["simulation"]["seed"] = *ov.seed;
    if (ov.paths) raw["simulation"]["n_paths"] = *ov.paths;
    if (ov.steps) raw["simulation"]["n_steps"] = *ov.steps;

    RunConfig c;
    try {
        const json& m = require(raw, "model", "config");
        const std::size_t d = m.value("d", std::size_t{1});
        c.model.dim = d;
        c.model.s0 = vec(m, "s0", "model", d);
        c.model.horizon = m.value("horizon", 1.0);
        c.model.drift = parse_drift(m.value("drift", json::object()), d);
        c.model.volatility = parse_volatility(require(m, "volatility", "model"), d);
        c.model.regularity = parse_regularity(m.value("regularity", json::object()));
        c.model.id = m.value("id", std::string("model"));
        c.model.check();
        c.x0 = m.value("x0", c.model.s0[0]);

        const json& r = require(raw, "robustness", "config");
        std::vector<double> eps;
        if (r.contains("epsilons")) eps = flat(r.at("epsilons"));
        c.spec = make_robustness(r.value("p", 4.0), r.value("gamma", 1.0), r.value("eta", 1.0), eps);

        const json& k = require(raw, "cost", "config");
        const auto kind = k.value("kind", std::string("mean_variance"));
        const Claim claim = parse_claim(k.value("claim", json()), d);
        if (kind == "mean_variance") {
            std::vector<double> b(d, 0.0), cc(d * d, 0.0);
            if (k.contains("B")) b = vec(k, "B", "cost", d);
            if (k.contains("C")) cc = vec(k, "C", "cost", d * d);
            MVCostSpec mv = make_mv_cost(k.value("A", 0.0), b, cc, claim);
            mv.claim_mode = parse_claim_mode(k);
            c.cost = mv_cost_to_general(mv);
            c.mv = std::move(mv);
        } else if (kind == "quadratic") {
            c.cost.running = zero_running_cost(d);
            c.cost.terminal = quadratic_terminal_cost(k.value("scale", 1.0));
            c.cost.claim = claim;
            c.cost.claim_mode = parse_claim_mode(k);
            c.cost.id = "quadratic";
        } else {
            throw ConfigError("unknown cost kind '" + kind + "'");
        }
        if (k.contains("growth")) {
            const json& g = k.at("growth");
            GrowthConstants& gc = c.cost.growth;
            gc.r = g.value("r", gc.r);
            gc.c2_upper = g.value("c2_upper", gc.c2_upper);
            gc.c0_lower = g.value("c0_lower", gc.c0_lower);
            gc.c2_lower = g.value("c2_lower", gc.c2_lower);
            gc.c_l = g.value("c_l", gc.c_l);
        }

        c.constraint = parse_constraint(require(raw, "constraint", "config"), d);
        c.family = parse_strategy(raw.value("strategy", json::object()), c.constraint, c.model.horizon);

        const json sim = raw.value("simulation", json::object());
        c.sim.n_paths = sim.value("n_paths", c.sim.n_paths);
        c.sim.n_steps = sim.value("n_steps", c.sim.n_steps);
        c.sim.seed = sim.value("seed", c.sim.seed);
        if (c.sim.n_paths < 2 || c.sim.n_steps < 1) throw ConfigError("simulation needs n_paths >= 2 and n_steps >= 1");

        const json o = raw.value("optimizer", json::object());
        c.opt.max_iters = o.value("max_iters", c.opt.max_iters);
        c.opt.tol = o.value("tol", c.opt.tol);

        c.sens.basis = RegressionBasis{raw.value("bsde", json::object()).value("degree", std::size_t{2}), d};
        if (c.sens.basis.degree > 2) throw ConfigError("bsde.degree must be 0, 1 or 2");
        const json s = raw.value("sensitivity", json::object());
        c.sens.random_probes = s.value("random_probes", c.sens.random_probes);
        c.sens.rounds = s.value("rounds", c.sens.rounds);
        if (s.contains("radial")) c.sens.radial = flat(s.at("radial"));
        c.sens.seed = component_seed(c.sim.seed, "sensitivity");
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed configuration: ") + e.what());
    } catch (const std::domain_error& e) {
        throw ConfigError(e.what());
    }
    c.hash = config_hash(raw);
    c.raw = std::move(raw);
    return c;
}

RunConfig load_config(const std::string& path, const Overrides& overrides) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file '" + path + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    json raw;
    try {
        raw = json::parse(buf.str());
    } catch (const json::parse_error& e) {
        throw std::runtime_error(std::string("cannot parse '") + path + "': " + e.what());
    }
    return parse_config(std::move(raw), overrides);
}

}  // namespace rsens

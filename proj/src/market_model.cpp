#include "rsens/market_model.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "rsens/simulation.hpp"

namespace rsens {

Drift zero_drift(std::size_t d) {
    return {"zero", [d](double, std::span<const double>, std::span<double> out) {
                std::fill(out.begin(), out.begin() + d, 0.0);
            }};
}

Drift constant_drift(std::vector<double> value) {
    return {"constant", [value](double, std::span<const double>, std::span<double> out) {
                std::copy(value.begin(), value.end(), out.begin());
            }};
}

Drift linear_drift(std::vector<double> mu) {
    return {"linear", [mu](double, std::span<const double> s, std::span<double> out) {
                for (std::size_t i = 0; i < mu.size(); ++i) out[i] = mu[i] * s[i];
            }};
}

Volatility zero_volatility(std::size_t d) {
    return {"zero", [d](double, std::span<const double>, std::span<double> out) {
                std::fill(out.begin(), out.begin() + d * d, 0.0);
            }};
}

Volatility constant_volatility(std::size_t d, std::vector<double> row_major) {
    if (row_major.size() != d * d) throw ConfigError("constant volatility needs d*d entries");
    return {"constant", [m = std::move(row_major)](double, std::span<const double>, std::span<double> out) {
                std::copy(m.begin(), m.end(), out.begin());
            }};
}

Volatility geometric_volatility(std::vector<double> v) {
    return {"geometric", [v](double, std::span<const double> s, std::span<double> out) {
                const std::size_t d = v.size();
                std::fill(out.begin(), out.begin() + d * d, 0.0);
                for (std::size_t i = 0; i < d; ++i) out[i * d + i] = v[i] * s[i];
            }};
}

void MarketModel::check() const {
    if (dim < 1) throw ConfigError("dimension must be at least 1");
    if (!(horizon > 0.0)) throw ConfigError("horizon must be positive");
    if (s0.size() != dim) throw ConfigError("s0 has wrong length");
    if (!drift.eval || !volatility.eval) throw ConfigError("missing coefficient function");
}

double holder_conjugate(double p) {
    if (!(p > 3.0)) throw std::domain_error("assumption p>3 violated");
    return p / (p - 1.0);
}

RobustnessSpec make_robustness(double p, double gamma, double eta, std::vector<double> epsilons) {
    RobustnessSpec spec;
    spec.p = p;
    spec.q = holder_conjugate(p);
    if (gamma < 0.0 || gamma > 1.0 || eta < 0.0 || eta > 1.0)
        throw ConfigError("gamma and eta must lie in [0, 1]");
    spec.gamma = gamma;
    spec.eta = eta;
    for (std::size_t i = 0; i < epsilons.size(); ++i) {
        if (!(epsilons[i] > 0.0)) throw ConfigError("epsilons must be positive");
        if (i > 0 && !(epsilons[i] > epsilons[i - 1])) throw ConfigError("epsilons must be increasing");
    }
    spec.epsilons = std::move(epsilons);
    return spec;
}

RunningCost zero_running_cost(std::size_t d) {
    RunningCost g;
    g.zero = true;
    g.value = [](double, double, std::span<const double>) { return 0.0; };
    g.gradient = [d](double, double, std::span<const double>, std::span<double> grad) {
        std::fill(grad.begin(), grad.begin() + 1 + d, 0.0);
    };
    g.hessian = [d](double, double, std::span<const double>, std::span<double> hess) {
        std::fill(hess.begin(), hess.begin() + (1 + d) * (1 + d), 0.0);
    };
    return g;
}

TerminalCost quadratic_terminal_cost(double scale) {
    TerminalCost f;
    f.kind = "quadratic";
    f.scale = scale;
    f.value = [scale](double x, double y) { return scale * (x - y) * (x - y); };
    f.gradient = [scale](double x, double y) {
        const double g = 2.0 * scale * (x - y);
        return std::array<double, 2>{g, -g};
    };
    f.hessian = [scale](double, double) {
        return std::array<double, 3>{2.0 * scale, -2.0 * scale, 2.0 * scale};
    };
    return f;
}

Claim linear_claim(std::vector<double> weights, double offset) {
    Claim l;
    l.kind = "linear";
    l.weights = weights;
    l.offset = offset;
    l.value = [weights, offset](std::span<const double> s) {
        double v = offset;
        for (std::size_t i = 0; i < weights.size(); ++i) v += weights[i] * s[i];
        return v;
    };
    l.gradient = [weights](std::span<const double>, std::span<double> grad) {
        std::copy(weights.begin(), weights.end(), grad.begin());
    };
    l.hessian = [d = weights.size()](std::span<const double>, std::span<double> hess) {
        std::fill(hess.begin(), hess.begin() + d * d, 0.0);
    };
    return l;
}

Claim softplus_call(std::vector<double> weights, double strike, double smoothing) {
    if (!(smoothing > 0.0)) throw ConfigError("softplus smoothing must be positive");
    Claim l;
    l.kind = "softplus_call";
    l.weights = weights;
    l.strike = strike;
    l.smoothing = smoothing;
    auto arg = [weights, strike, smoothing](std::span<const double> s) {
        double u = -strike;
        for (std::size_t i = 0; i < weights.size(); ++i) u += weights[i] * s[i];
        return u / smoothing;
    };
    l.value = [arg, smoothing](std::span<const double> s) {
        const double u = arg(s);
        return smoothing * (std::max(u, 0.0) + std::log1p(std::exp(-std::abs(u))));
    };
    l.gradient = [arg, weights](std::span<const double> s, std::span<double> grad) {
        const double sig = 1.0 / (1.0 + std::exp(-arg(s)));
        for (std::size_t i = 0; i < weights.size(); ++i) grad[i] = sig * weights[i];
    };
    l.hessian = [arg, weights, smoothing](std::span<const double> s, std::span<double> hess) {
        const double sig = 1.0 / (1.0 + std::exp(-arg(s)));
        const double c = sig * (1.0 - sig) / smoothing;
        const std::size_t d = weights.size();
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < d; ++j) hess[i * d + j] = c * weights[i] * weights[j];
    };
    return l;
}

bool ConstraintSet::project(double t, double x, std::span<const double> s, std::span<double> v) const {
    constexpr std::size_t kMax = 16;
    double buf_a[kMax];
    double buf_b[kMax];
    const std::size_t d = dim;
    bool moved = false;
    if (kind == Kind::ball) {
        const double* c;
        double r;
        if (constant) {
            c = a.data();
            r = b[0];
        } else {
            center(t, x, s, {buf_a, d});
            c = buf_a;
            r = radius(t, x, s);
        }
        double norm2 = 0.0;
        for (std::size_t i = 0; i < d; ++i) norm2 += (v[i] - c[i]) * (v[i] - c[i]);
        if (norm2 > r * r) {
            const double scale = norm2 > 0.0 ? r / std::sqrt(norm2) : 0.0;
            for (std::size_t i = 0; i < d; ++i) v[i] = c[i] + scale * (v[i] - c[i]);
            moved = true;
        }
    } else {
        const double* lo;
        const double* hi;
        if (constant) {
            lo = a.data();
            hi = b.data();
        } else {
            lower(t, x, s, {buf_a, d});
            upper(t, x, s, {buf_b, d});
            lo = buf_a;
            hi = buf_b;
        }
        for (std::size_t i = 0; i < d; ++i) {
            const double c = std::clamp(v[i], lo[i], hi[i]);
            if (c != v[i]) {
                v[i] = c;
                moved = true;
            }
        }
    }
    return moved;
}

ConstraintSet ball_constraint(std::vector<double> center, double radius) {
    if (!(radius >= 0.0)) throw ConfigError("ball radius must be non-negative");
    if (center.empty() || center.size() > 16) throw ConfigError("constraint dimension must be in [1, 16]");
    ConstraintSet k;
    k.kind = ConstraintSet::Kind::ball;
    k.dim = center.size();
    k.constant = true;
    k.a = center;
    k.b = {radius};
    k.center = [center](double, double, std::span<const double>, std::span<double> out) {
        std::copy(center.begin(), center.end(), out.begin());
    };
    k.radius = [radius](double, double, std::span<const double>) { return radius; };
    double cn = 0.0;
    for (double c : center) cn += c * c;
    k.bound = std::sqrt(cn) + radius;
    return k;
}

ConstraintSet box_constraint(std::vector<double> lower, std::vector<double> upper) {
    if (lower.size() != upper.size() || lower.empty() || lower.size() > 16)
        throw ConfigError("box bounds must have equal length in [1, 16]");
    double k2 = 0.0;
    for (std::size_t i = 0; i < lower.size(); ++i) {
        if (!(lower[i] <= upper[i])) throw ConfigError("box lower bound exceeds upper bound");
        const double m = std::max(std::abs(lower[i]), std::abs(upper[i]));
        k2 += m * m;
    }
    ConstraintSet k;
    k.kind = ConstraintSet::Kind::box;
    k.dim = lower.size();
    k.constant = true;
    k.a = lower;
    k.b = upper;
    k.lower = [lower](double, double, std::span<const double>, std::span<double> out) {
        std::copy(lower.begin(), lower.end(), out.begin());
    };
    k.upper = [upper](double, double, std::span<const double>, std::span<double> out) {
        std::copy(upper.begin(), upper.end(), out.begin());
    };
    k.bound = std::sqrt(k2);
    return k;
}

ConstraintSet singleton_constraint(std::vector<double> point) { return ball_constraint(std::move(point), 0.0); }

std::vector<double> project_constraint(const ConstraintSet& set, double t, double x, std::span<const double> s,
                                       std::vector<double> v) {
    if (v.size() != set.dim) throw ShapeError("projection input has wrong dimension");
    set.project(t, x, s, v);
    return v;
}

bool ValidationReport::passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const ValidationCheck& c) { return c.passed; });
}

std::string ValidationReport::to_text() const {
    std::ostringstream os;
    os.precision(6);
    for (const auto& c : checks) {
        os << (c.passed ? "PASS " : "FAIL ") << c.name << "  margin=" << c.margin;
        if (!c.detail.empty()) os << "  (" << c.detail << ")";
        os << '\n';
    }
    os << (passed() ? "all checks passed" : "validation failed") << '\n';
    return os.str();
}

namespace {

struct Worst {
    std::string name;
    explicit Worst(std::string n) : name(std::move(n)) {}
    double margin = std::numeric_limits<double>::infinity();
    std::string detail;
    void update(double m, const std::string& where = {}) {
        if (std::isnan(m)) m = -std::numeric_limits<double>::infinity();
        if (m < margin) {
            margin = m;
            detail = where;
        }
    }
    ValidationCheck finish(double tolerance = 0.0, const std::string& failure = {}) const {
        ValidationCheck c;
        c.name = name;
        c.margin = margin;
        c.passed = margin >= -tolerance;
        c.detail = c.passed ? std::string{} : (failure.empty() ? detail : failure + (detail.empty() ? "" : "; " + detail));
        return c;
    }
};

double rel_fd_slack(double analytic, double fd) { return 1e-4 * (1.0 + std::abs(fd)) - std::abs(analytic - fd); }

double min_eigenvalue(const Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
}

std::string at(double t, std::span<const double> s) {
    std::ostringstream os;
    os.precision(4);
    os << "t=" << t << " s=(";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

}  // namespace

ValidationReport validate_model(const MarketModel& model, const RobustnessSpec& spec, const CostSpec& cost,
                                std::size_t samples, std::uint64_t seed, const ConstraintSet* constraint) {
    model.check();
    if (samples == 0) throw ConfigError("validation needs at least one sample");
    const std::size_t d = model.dim;
    const std::size_t n_steps = 32;
    const TimeGrid grid = TimeGrid::uniform(model.horizon, n_steps);
    const BrownianBatch batch = sample_brownian(grid, samples, d, component_seed(seed, "validate"));

    // Simulation with coefficient-level diagnostics.
    std::vector<double> b(d), sig(d * d);
    PathBatch paths;
    try {
        paths = simulate_state(model, batch);
    } catch (const SimulationError& e) {
        throw SimulationError(std::string("validation simulation failed: ") + e.what());
    }

    std::mt19937_64 rng(component_seed(seed, "validate-points"));
    std::uniform_int_distribution<std::size_t> pick_k(0, n_steps - 1);
    std::uniform_real_distribution<double> unif(-1.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const double h_scale = constraint ? std::max(constraint->bound, 1e-12) : 1.0;

    Worst invert{"volatility invertible"};
    Worst bounded{"bounded coefficients"}, elliptic{"uniform ellipticity"};
    Worst lipschitz{"lipschitz coefficients"}, growth{"linear growth"}, benes{"benes condition"};
    Worst g_convex{"running cost convex"}, f_strong{"terminal cost strongly convex"};
    Worst g_lower{"running cost lower bound"}, f_lower{"terminal cost lower bound"};
    Worst l_grad{"claim gradient bound"}, l_hess{"claim hessian bound"};
    Worst g_fd{"running cost derivatives"}, f_fd{"terminal cost derivatives"}, l_fd{"claim derivatives"};
    Worst hess_growth{"hessian growth"};
    Worst k_check{"constraint set"};

    const double bad_exponent = std::min((spec.p - 2.0) / 2.0, spec.p - 3.0) - cost.growth.r;
    ValidationCheck exponent{"growth exponent r", cost.growth.r > 0.0 && bad_exponent > 0.0,
                             std::min(bad_exponent, cost.growth.r), ""};
    if (!exponent.passed) exponent.detail = "need 0 < r < min((p-2)/2, p-3)";

    std::vector<double> s2(d), b2(d), sig2(d * d), h(d), grad(1 + d), hess((1 + d) * (1 + d)), lg(d), lh(d * d),
        tmp(d), wsup(d);
    const double fd = 1e-5;
    const double x0 = model.s0[0];
    for (std::size_t p = 0; p < samples; ++p) {
        const std::size_t k = pick_k(rng);
        const double t = grid.time(k);
        const auto s = paths.s(p, k);
        const std::string where = at(t, s);
        model.drift.eval(t, s, b);
        model.volatility.eval(t, s, sig);
        for (double v : b)
            if (!std::isfinite(v)) throw SimulationError("drift returned a non-finite value at " + where);
        for (double v : sig)
            if (!std::isfinite(v)) throw SimulationError("volatility returned a non-finite value at " + where);

        Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> sm(sig.data(), d, d);
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(sm);
        const auto sv = svd.singularValues();
        const double rcond = sv.maxCoeff() > 0.0 ? sv.minCoeff() / sv.maxCoeff() : 0.0;
        invert.update(rcond - 1e-12, where);

        double bnorm = 0.0;
        for (double v : b) bnorm += v * v;
        bnorm = std::sqrt(bnorm);
        const double snorm = sm.norm();
        double s_norm = 0.0;
        for (double v : s) s_norm += v * v;
        s_norm = std::sqrt(s_norm);

        const Regularity& reg = model.regularity;
        if (reg.kind == RegularityKind::bounded_elliptic) {
            bounded.update(reg.c_b_sigma - (bnorm + snorm), where);
            const Eigen::MatrixXd sts = sm.transpose() * sm;
            elliptic.update(min_eigenvalue(sts) - reg.ellipticity, where);
        } else {
            // Lipschitz on a nearby random point, linear growth, Beneš bound.
            for (std::size_t i = 0; i < d; ++i) s2[i] = s[i] + 0.1 * (1.0 + std::abs(s[i])) * unif(rng);
            model.drift.eval(t, s2, b2);
            model.volatility.eval(t, s2, sig2);
            double db = 0.0, ds = 0.0, dx = 0.0;
            for (std::size_t i = 0; i < d; ++i) {
                db += (b[i] - b2[i]) * (b[i] - b2[i]);
                dx += (s[i] - s2[i]) * (s[i] - s2[i]);
            }
            for (std::size_t i = 0; i < d * d; ++i) ds += (sig[i] - sig2[i]) * (sig[i] - sig2[i]);
            lipschitz.update(reg.lipschitz * std::sqrt(dx) - std::sqrt(db) - std::sqrt(ds), where);
            growth.update(reg.lipschitz * (1.0 + s_norm) - bnorm - snorm, where);
            if (rcond > 1e-12) {
                Eigen::Map<const Eigen::VectorXd> bv(b.data(), d);
                const double theta = sm.fullPivLu().solve(bv).norm();
                double sup_w = 0.0;
                std::fill(wsup.begin(), wsup.end(), 0.0);
                for (std::size_t j = 0; j < k; ++j) {
                    double w2 = 0.0;
                    for (std::size_t i = 0; i < d; ++i) {
                        wsup[i] += batch.dw(p, j, i);
                        w2 += wsup[i] * wsup[i];
                    }
                    sup_w = std::max(sup_w, std::sqrt(w2));
                }
                benes.update(reg.benes * (1.0 + sup_w) - theta, where);
            }
        }

        // Cost sample point.
        for (std::size_t i = 0; i < d; ++i) h[i] = h_scale * unif(rng);
        if (constraint) constraint->project(t, x0, s, h);
        double x = x0;
        for (std::size_t i = 0; i < d; ++i) x += h[i] * (s[i] - model.s0[i]);
        x += gauss(rng);
        const double y = cost.claim.value(paths.s(p, n_steps));

        const double gv = cost.running.value(t, x, h);
        g_lower.update(gv - cost.growth.c0_lower, where);
        cost.running.gradient(t, x, h, grad);
        cost.running.hessian(t, x, h, hess);
        {
            Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> hm(hess.data(),
                                                                                                   d + 1, d + 1);
            const double scale = 1.0 + hm.norm();
            g_convex.update(min_eigenvalue(hm) + 1e-10 * scale, where);
            double hg = hm.norm();
            const auto fh = cost.terminal.hessian(x, y);
            hg += std::sqrt(fh[0] * fh[0] + 2 * fh[1] * fh[1] + fh[2] * fh[2]);
            double xh = x * x;
            for (double v : h) xh += v * v;
            hess_growth.update(cost.growth.c2_upper * (1.0 + std::pow(std::sqrt(xh), cost.growth.r) +
                                                      std::pow(std::abs(y), cost.growth.r)) -
                                   hg,
                               where);
        }
        // Finite differences of g in (x, h).
        {
            const double up = cost.running.value(t, x + fd, h), dn = cost.running.value(t, x - fd, h);
            g_fd.update(rel_fd_slack(grad[0], (up - dn) / (2 * fd)), where);
            for (std::size_t i = 0; i < d; ++i) {
                tmp = h;
                tmp[i] += fd;
                const double u = cost.running.value(t, x, tmp);
                tmp[i] -= 2 * fd;
                const double w = cost.running.value(t, x, tmp);
                g_fd.update(rel_fd_slack(grad[1 + i], (u - w) / (2 * fd)), where);
            }
        }
        const double fv = cost.terminal.value(x, y);
        f_lower.update(fv - cost.growth.c0_lower, where);
        const auto fg = cost.terminal.gradient(x, y);
        const auto fh = cost.terminal.hessian(x, y);
        f_strong.update(fh[0] - cost.growth.c2_lower, where);
        f_fd.update(rel_fd_slack(fg[0], (cost.terminal.value(x + fd, y) - cost.terminal.value(x - fd, y)) / (2 * fd)),
                    where);
        f_fd.update(rel_fd_slack(fg[1], (cost.terminal.value(x, y + fd) - cost.terminal.value(x, y - fd)) / (2 * fd)),
                    where);
        f_fd.update(rel_fd_slack(fh[0], (cost.terminal.gradient(x + fd, y)[0] - cost.terminal.gradient(x - fd, y)[0]) /
                                            (2 * fd)),
                    where);

        const auto sT = paths.s(p, n_steps);
        cost.claim.gradient(sT, lg);
        cost.claim.hessian(sT, lh);
        double lgn = 0.0, lhn = 0.0;
        for (double v : lg) lgn += v * v;
        for (double v : lh) lhn += v * v;
        l_grad.update(cost.growth.c_l - std::sqrt(lgn), where);
        l_hess.update(cost.growth.c_l - std::sqrt(lhn), where);
        std::vector<double> sp(sT.begin(), sT.end());
        for (std::size_t i = 0; i < d; ++i) {
            sp[i] = sT[i] + fd;
            const double u = cost.claim.value(sp);
            cost.claim.gradient(sp, tmp);
            const double gu = tmp[i];
            sp[i] = sT[i] - fd;
            const double w = cost.claim.value(sp);
            cost.claim.gradient(sp, tmp);
            const double gw = tmp[i];
            sp[i] = sT[i];
            l_fd.update(rel_fd_slack(lg[i], (u - w) / (2 * fd)), where);
            l_fd.update(rel_fd_slack(lh[i * d + i], (gu - gw) / (2 * fd)), where);
        }

        if (constraint) {
            if (constraint->kind == ConstraintSet::Kind::box) {
                std::vector<double> lo(d), hi(d);
                constraint->lower(t, x, s, lo);
                constraint->upper(t, x, s, hi);
                for (std::size_t i = 0; i < d; ++i) k_check.update(hi[i] - lo[i], where + " box bounds");
            } else {
                k_check.update(constraint->radius(t, x, s), where + " radius");
            }
            double hn = 0.0;
            for (double v : h) hn += v * v;
            k_check.update(constraint->bound + 1e-12 - std::sqrt(hn), where + " bound K");
        }
    }

    ValidationReport report;
    report.checks.push_back(invert.finish(0.0, "singular volatility"));
    if (model.regularity.kind == RegularityKind::bounded_elliptic) {
        report.checks.push_back(bounded.finish());
        report.checks.push_back(elliptic.finish());
    } else {
        report.checks.push_back(lipschitz.finish(1e-12));
        report.checks.push_back(growth.finish(1e-12));
        if (benes.margin < std::numeric_limits<double>::infinity()) report.checks.push_back(benes.finish(1e-12));
    }
    report.checks.push_back(g_convex.finish());
    report.checks.push_back(f_strong.finish(1e-12));
    report.checks.push_back(g_lower.finish());
    report.checks.push_back(f_lower.finish());
    report.checks.push_back(l_grad.finish(1e-12));
    report.checks.push_back(l_hess.finish(1e-12));
    report.checks.push_back(g_fd.finish());
    report.checks.push_back(f_fd.finish());
    report.checks.push_back(l_fd.finish());
    report.checks.push_back(hess_growth.finish());
    report.checks.push_back(exponent);
    if (constraint) {
        ValidationCheck c = k_check.finish();
        if (!std::isfinite(constraint->bound)) {
            c.passed = false;
            c.detail = "bound K is not finite";
        }
        report.checks.push_back(c);
    }
    return report;
}

}  // namespace rsens

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "rsens/config.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace rsens;

namespace {

struct Args {
    std::string config;
    std::string out = ".";
    std::string run_dir;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> paths;
    std::optional<std::size_t> steps;
    unsigned threads = 0;
};

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

json num_json(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

class Csv {
public:
    Csv(const fs::path& path, const std::vector<std::string>& header, const RunConfig& cfg)
        : out_(path), tail_("," + cfg.hash + "," + std::to_string(cfg.sim.seed)) {
        if (!out_) throw std::runtime_error("cannot write " + path.string());
        for (const auto& h : header) out_ << h << ',';
        out_ << "config_hash,seed\n";
    }
    void row(const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i];
        out_ << tail_ << '\n';
    }

private:
    std::ofstream out_;
    std::string tail_;
};

void write_json(const fs::path& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

json header(const RunConfig& cfg) { return {{"config_hash", cfg.hash}, {"seed", cfg.sim.seed}}; }

RunConfig load(const Args& a) { return load_config(a.config, {a.seed, a.paths, a.steps}); }

fs::path out_dir(const Args& a) {
    fs::create_directories(a.out);
    return a.out;
}

int cmd_validate(const Args& a) {
    const RunConfig cfg = load(a);
    const ValidationReport rep =
        validate_model(cfg.model, cfg.spec, cfg.cost, 4096, cfg.sim.seed, &cfg.constraint);
    std::cout << rep.to_text();
    return rep.passed() ? 0 : 2;
}

int cmd_baseline(const Args& a) {
    const RunConfig cfg = load(a);
    const BaselineResult r = solve_baseline(cfg.problem(), cfg.family, cfg.sim, cfg.opt);
    const fs::path dir = out_dir(a);
    json j = header(cfg);
    j["V0"] = num_json(r.value);
    j["se"] = num_json(r.se);
    j["theta"] = r.strategy.theta();
    j["converged"] = r.converged;
    j["strategy"] = strategy_to_json(r.strategy);
    write_json(dir / "baseline.json", j);
    Csv csv(dir / "iterations.csv", {"iter", "objective", "step", "grad_norm", "projected"}, cfg);
    for (const auto& it : r.trace)
        csv.row({std::to_string(it.iter), num(it.objective), num(it.step), num(it.grad_norm),
                 it.projected ? "1" : "0"});
    std::cout << "V0 = " << num(r.value) << " (se " << num(r.se) << "), converged = " << r.converged << '\n';
    return 0;
}

int cmd_bsde(const Args& a) {
    const RunConfig cfg = load(a);
    const Pipeline pl = run_pipeline(cfg.problem(), cfg.family, cfg.spec, cfg.sim, cfg.opt, cfg.sens);
    const fs::path dir = out_dir(a);
    const auto& sol = pl.bsde;
    const std::size_t n = sol.n_paths, N = sol.n_steps, d = sol.dim;
    Csv csv(dir / "bsde.csv", {"t", "y_mean", "z_abs_mean", "residual_energy", "increment_t", "correlation_t_max"},
            cfg);
    for (std::size_t k = 0; k <= N; ++k) {
        double ym = 0.0, za = 0.0;
        for (std::size_t p = 0; p < n; ++p) {
            ym += sol.y[p * (N + 1) + k];
            if (k < N) {
                double z2 = 0.0;
                for (std::size_t i = 0; i < d; ++i) z2 += sol.z[(p * N + k) * d + i] * sol.z[(p * N + k) * d + i];
                za += std::sqrt(z2);
            }
        }
        std::vector<std::string> row{num(pl.controls.grid.time(k)), num(ym / n)};
        if (k < N) {
            const auto& dg = sol.scalar_diagnostics[k];
            double ct = 0.0;
            for (double c : dg.correlation) ct = std::max(ct, std::abs(c) / dg.correlation_se);
            row.insert(row.end(), {num(za / n), num(dg.residual_energy),
                                   num(dg.increment_se > 0 ? dg.increment_mean / dg.increment_se : 0.0), num(ct)});
        } else {
            row.insert(row.end(), {"", "", "", ""});
        }
        csv.row(row);
    }
    const BsdeSummary s = summarize(sol);
    json j = header(cfg);
    j["basis"] = sol.basis;
    j["V0"] = num_json(pl.baseline.value);
    j["sensitivity"] = num_json(pl.sensitivity.value);
    j["sensitivity_se"] = num_json(pl.sensitivity.se);
    j["max_residual_energy"] = num_json(s.max_residual_energy);
    j["max_abs_increment_t"] = num_json(s.max_abs_increment_t);
    j["max_abs_correlation_t"] = num_json(s.max_abs_correlation_t);
    j["rank_deficient"] = s.rank_deficient;
    write_json(dir / "bsde.json", j);
    std::cout << "V'(0) = " << num(pl.sensitivity.value) << " (se " << num(pl.sensitivity.se) << ")\n";
    return 0;
}

json report_json(const SensitivityReport& r, const RunConfig& cfg) {
    json j = header(cfg);
    j["V0"] = num_json(r.v0);
    j["V0_se"] = num_json(r.v0_se);
    j["theta_star"] = r.theta_star;
    j["baseline_converged"] = r.baseline_converged;
    j["sensitivity"] = {{"value", num_json(r.sensitivity.value)},     {"se", num_json(r.sensitivity.se)},
                        {"drift", num_json(r.sensitivity.drift_term)}, {"drift_se", num_json(r.sensitivity.drift_se)},
                        {"vol", num_json(r.sensitivity.vol_term)},     {"vol_se", num_json(r.sensitivity.vol_se)}};
    j["slope"] = num_json(r.slope);
    j["slope_se"] = num_json(r.slope_se);
    j["quadratic"] = num_json(r.quadratic);
    j["envelope_slope"] = num_json(r.envelope_slope);
    j["envelope_slope_se"] = num_json(r.envelope_slope_se);
    j["bsde"] = {{"max_residual_energy", num_json(r.bsde.max_residual_energy)},
                 {"max_abs_increment_t", num_json(r.bsde.max_abs_increment_t)},
                 {"max_abs_correlation_t", num_json(r.bsde.max_abs_correlation_t)},
                 {"rank_deficient", r.bsde.rank_deficient}};
    json rows = json::array();
    for (const auto& row : r.rows)
        rows.push_back({{"epsilon", row.epsilon},
                        {"v_hat", num_json(row.v_hat)},
                        {"v_se", num_json(row.v_se)},
                        {"vstar_hat", num_json(row.vstar_hat)},
                        {"vstar_se", num_json(row.vstar_se)},
                        {"gap", num_json(row.gap)},
                        {"gap_se", num_json(row.gap_se)},
                        {"bracket_lower", num_json(row.bracket_lower)},
                        {"bracket_upper", num_json(row.bracket_upper)},
                        {"theta", row.theta},
                        {"converged", row.converged}});
    j["rows"] = rows;
    return j;
}

SensitivityReport expansion(const RunConfig& cfg) {
    SensitivityReport r = expansion_report(cfg.problem(), cfg.family, cfg.spec, cfg.sim, cfg.opt, cfg.sens);
    r.config_hash = cfg.hash;
    return r;
}

int cmd_sensitivity(const Args& a) {
    const RunConfig cfg = load(a);
    const SensitivityReport r = expansion(cfg);
    const fs::path dir = out_dir(a);
    write_json(dir / "sensitivity.json", report_json(r, cfg));
    Csv sweep(dir / "sweep.csv",
              {"epsilon", "v_hat", "v_se", "vstar_hat", "vstar_se", "bracket_lower", "bracket_upper", "converged"},
              cfg);
    sweep.row({"0", num(r.v0), num(r.v0_se), num(r.v0), num(r.v0_se), num(r.v0), num(r.v0),
               r.baseline_converged ? "1" : "0"});
    for (const auto& row : r.rows)
        sweep.row({num(row.epsilon), num(row.v_hat), num(row.v_se), num(row.vstar_hat), num(row.vstar_se),
                   num(row.bracket_lower), num(row.bracket_upper), row.converged ? "1" : "0"});
    Csv plot(dir / "plotdata.csv", {"epsilon", "v_minus_v0", "linear_prediction", "residual_over_eps2"}, cfg);
    plot.row({"0", "0", "0", ""});
    for (const auto& row : r.rows) {
        const double dv = row.v_hat - r.v0;
        const double lin = row.epsilon * r.sensitivity.value;
        plot.row({num(row.epsilon), num(dv), num(lin), num((dv - lin) / (row.epsilon * row.epsilon))});
    }
    std::cout << "V'(0) = " << num(r.sensitivity.value) << " (se " << num(r.sensitivity.se) << "), slope = "
              << num(r.slope) << " (se " << num(r.slope_se) << ")\n";
    return 0;
}

int cmd_envelope(const Args& a) {
    const RunConfig cfg = load(a);
    const SensitivityReport r = expansion(cfg);
    const fs::path dir = out_dir(a);
    Csv csv(dir / "envelope.csv", {"epsilon", "v_hat", "vstar_hat", "gap", "gap_over_eps2"}, cfg);
    csv.row({"0", num(r.v0), num(r.v0), "0", ""});
    for (const auto& row : r.rows)
        csv.row({num(row.epsilon), num(row.v_hat), num(row.vstar_hat), num(row.gap), num(row.gap_over_eps2)});
    std::cout << "envelope rows: " << r.rows.size() << '\n';
    return 0;
}

std::optional<std::string> slurp(const fs::path& p) {
    std::ifstream in(p);
    if (!in) return std::nullopt;
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

// CSV to a markdown table, dropping the provenance columns.
std::string csv_table(const std::string& text) {
    std::istringstream in(text);
    std::string line, md;
    bool first = true;
    while (std::getline(in, line)) {
        std::vector<std::string> cells;
        std::stringstream ls(line);
        std::string c;
        while (std::getline(ls, c, ',')) cells.push_back(c);
        if (cells.size() > 2) cells.resize(cells.size() - 2);
        md += "|";
        for (const auto& x : cells) md += " " + x + " |";
        md += "\n";
        if (first) {
            md += "|";
            for (std::size_t i = 0; i < cells.size(); ++i) md += "---|";
            md += "\n";
            first = false;
        }
    }
    return md;
}

int cmd_report(const Args& a) {
    const fs::path dir = a.run_dir.empty() ? fs::path(a.out) : fs::path(a.run_dir);
    if (!fs::is_directory(dir)) {
        std::cerr << "run directory '" << dir.string() << "' does not exist\n";
        return 1;
    }
    const char* artifacts[] = {"baseline.json", "sensitivity.json", "sweep.csv", "envelope.csv", "bsde.csv"};
    bool any = false;
    for (const char* f : artifacts) any = any || fs::exists(dir / f);
    if (!any) {
        std::cerr << "no run artifacts in '" << dir.string() << "'\n";
        return 1;
    }
    std::ostringstream md;
    md << "# Robust sensitivity run\n\n";
    auto parse = [&](const char* name) -> std::optional<json> {
        const auto t = slurp(dir / name);
        if (!t) return std::nullopt;
        try {
            return json::parse(*t);
        } catch (const json::exception&) {
            return std::nullopt;
        }
    };
    md << "## Baseline\n\n";
    if (auto b = parse("baseline.json")) {
        md << "- config hash: " << b->value("config_hash", std::string("?")) << ", seed: " << (*b)["seed"].dump()
           << "\n- V0: " << (*b)["V0"].dump() << " (se " << (*b)["se"].dump() << ")\n- theta: " << (*b)["theta"].dump()
           << "\n- converged: " << (*b)["converged"].dump() << "\n\n";
    } else {
        md << "missing: baseline.json\n\n";
    }
    md << "## Sensitivity\n\n";
    if (auto s = parse("sensitivity.json")) {
        const json& v = (*s)["sensitivity"];
        md << "- V'(0): " << v["value"].dump() << " (se " << v["se"].dump() << "), drift " << v["drift"].dump()
           << ", volatility " << v["vol"].dump() << "\n- fitted slope: " << (*s)["slope"].dump() << " (se "
           << (*s)["slope_se"].dump() << ")\n- worst-case slope at H*: " << (*s)["envelope_slope"].dump() << "\n\n";
    } else {
        md << "missing: sensitivity.json\n\n";
    }
    md << "## Sweep\n\n";
    if (auto t = slurp(dir / "sweep.csv")) md << csv_table(*t) << "\n";
    else md << "missing: sweep.csv\n\n";
    md << "## Envelope\n\n";
    if (auto t = slurp(dir / "envelope.csv")) md << csv_table(*t) << "\n";
    else md << "missing: envelope.csv\n\n";
    md << "## Diagnostics\n\n";
    if (auto b = parse("bsde.json")) {
        md << "- basis: " << (*b)["basis"].dump() << "\n- max residual energy: " << (*b)["max_residual_energy"].dump()
           << "\n- max |increment mean| / se: " << (*b)["max_abs_increment_t"].dump()
           << "\n- max |residual-dW correlation| / se: " << (*b)["max_abs_correlation_t"].dump()
           << "\n- rank-deficient regressions: " << (*b)["rank_deficient"].dump() << "\n";
    } else {
        md << "missing: bsde.json\n";
    }
    std::ofstream out(dir / "report.md");
    if (!out) {
        std::cerr << "cannot write report.md\n";
        return 1;
    }
    out << md.str();
    std::cout << "wrote " << (dir / "report.md").string() << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Robust sensitivity of hedging problems under drift and volatility uncertainty"};
    app.require_subcommand(1);
    Args a;
    auto add_run = [&](CLI::App* sub) {
        sub->add_option("--config", a.config, "JSON configuration")->required();
        sub->add_option("--out", a.out, "output directory");
        sub->add_option("--seed", a.seed, "master seed (overrides simulation.seed)");
        sub->add_option("--paths", a.paths, "number of Monte Carlo paths");
        sub->add_option("--steps", a.steps, "number of time steps");
        sub->add_option("--threads", a.threads, "worker threads, 0 = all cores");
    };
    std::map<std::string, int (*)(const Args&)> commands{{"validate", cmd_validate}, {"baseline", cmd_baseline},
                                                         {"bsde", cmd_bsde},         {"sensitivity", cmd_sensitivity},
                                                         {"envelope", cmd_envelope}};
    const std::map<std::string, std::string> help{
        {"validate", "check the configuration and model coefficients"},
        {"baseline", "optimize the strategy under the reference model"},
        {"bsde", "solve the adjoint BSDE at the baseline optimum"},
        {"sensitivity", "first-order sensitivity and the epsilon sweep"},
        {"envelope", "robust optimum per epsilon and the envelope gap"}};
    for (const auto& [name, fn] : commands) add_run(app.add_subcommand(name, help.at(name)));
    auto* report = app.add_subcommand("report", "summarize a run directory into report.md");
    report->add_option("run_dir", a.run_dir, "run directory");
    report->add_option("--out", a.out, "run directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }
    set_thread_count(a.threads);
    try {
        if (report->parsed()) return cmd_report(a);
        for (const auto& [name, fn] : commands)
            if (app.got_subcommand(name)) return fn(a);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const UnsupportedError& e) {
        std::cerr << "unsupported: " << e.what() << '\n';
        return 2;
    } catch (const SimulationError& e) {
        std::cerr << "simulation error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 1;
}

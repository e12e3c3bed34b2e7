#include "shadowfbp/cli.hpp"

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <variant>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "shadowfbp/errors.hpp"
#include "shadowfbp/policy.hpp"

namespace shadowfbp {

std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    if (v == 0) return "0";
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

namespace {

using json = nlohmann::json;

enum class Kind { Real, Count, Seed, Flag, Text };

struct Field {
    const char* name;
    Kind kind;
    bool echoed;
    std::function<void(RunConfig&, const json&)> set;
    std::function<std::string(const RunConfig&)> get;
};

#define REAL(key, member)                                                                             \
    Field{key, Kind::Real, true, [](RunConfig& c, const json& v) { c.member = v.get<double>(); }, \
          [](const RunConfig& c) { return format_double(c.member); }}
#define COUNT(key, member)                                                                                \
    Field{key, Kind::Count, true, [](RunConfig& c, const json& v) { c.member = v.get<std::uint64_t>(); }, \
          [](const RunConfig& c) { return std::to_string(c.member); }}

const std::vector<Field>& fields() {
    static const std::vector<Field> f = {
        REAL("mu", model.mu),
        REAL("sigma", model.sigma),
        REAL("p", model.p),
        REAL("delta", model.delta),
        REAL("lambda_down", model.lambda_down),
        REAL("lambda_up", model.lambda_up),
        REAL("s0", model.s0),
        REAL("eta_B", model.eta_B),
        REAL("eta_S", model.eta_S),
        REAL("rtol", solver.rtol),
        REAL("atol", solver.atol),
        REAL("event_tol", solver.event_tol),
        REAL("shoot_tol", solver.shoot_tol),
        REAL("handoff_tol", solver.handoff_tol),
        REAL("third_derivative_cap", solver.third_derivative_cap),
        REAL("handoff_slope_tol", solver.handoff_slope_tol),
        REAL("pinch_factor", solver.pinch_factor),
        REAL("x_max", solver.x_max),
        COUNT("grid_points", grid_points),
        COUNT("solution_rows", solution_rows),
        COUNT("n_paths", sim.n_paths),
        REAL("horizon", sim.horizon),
        REAL("dt", sim.dt),
        Field{"seed", Kind::Seed, true, [](RunConfig& c, const json& v) { c.sim.seed = v.get<std::uint64_t>(); },
              [](const RunConfig& c) { return std::to_string(c.sim.seed); }},
        Field{"antithetic", Kind::Flag, true, [](RunConfig& c, const json& v) { c.sim.antithetic = v.get<bool>(); },
              [](const RunConfig& c) { return std::string(c.sim.antithetic ? "true" : "false"); }},
        REAL("step_budget", sim.step_budget),
        REAL("theta_cap", sim.theta_cap),
        REAL("tail_fraction", sim.tail_fraction),
        REAL("utility_floor", sim.utility_floor),
        COUNT("pilot_paths", sim.pilot_paths),
        COUNT("sim_knots", sim_knots),
        Field{"sweep_param", Kind::Text, true,
              [](RunConfig& c, const json& v) { c.sweep_param = v.get<std::string>(); },
              [](const RunConfig& c) { return json(c.sweep_param).dump(); }},
        REAL("sweep_min", sweep_min),
        REAL("sweep_max", sweep_max),
        COUNT("sweep_points", sweep_points),
        // Output location and format do not change file contents, so they stay out of the echo.
        Field{"out_dir", Kind::Text, false, [](RunConfig& c, const json& v) { c.out_dir = v.get<std::string>(); },
              [](const RunConfig& c) { return json(c.out_dir).dump(); }},
        Field{"format", Kind::Text, false, [](RunConfig& c, const json& v) { c.format = v.get<std::string>(); },
              [](const RunConfig& c) { return json(c.format).dump(); }},
    };
    return f;
}

#undef REAL
#undef COUNT

int line_of_offset(const std::string& text, std::size_t off) {
    off = std::min(off, text.size());
    return 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(off), '\n'));
}

// Line of the first occurrence of "key" used as an object key; 0 when absent.
int line_of_key(const std::string& text, const std::string& key) {
    const std::string pat = "\"" + key + "\"";
    std::size_t pos = 0;
    while ((pos = text.find(pat, pos)) != std::string::npos) {
        std::size_t k = pos + pat.size();
        while (k < text.size() && std::isspace(static_cast<unsigned char>(text[k]))) ++k;
        if (k < text.size() && text[k] == ':') return line_of_offset(text, pos);
        pos += pat.size();
    }
    return 0;
}

[[noreturn]] void fail_at(const std::string& text, const std::string& key, const std::string& msg) {
    const int line = line_of_key(text, key);
    throw ConfigError((line > 0 ? "line " + std::to_string(line) + ": " : std::string()) + msg);
}

bool type_ok(Kind k, const json& v) {
    switch (k) {
        case Kind::Real: return v.is_number();
        case Kind::Count: return v.is_number_unsigned() || (v.is_number_integer() && v.get<long long>() >= 0);
        case Kind::Seed: return v.is_number_unsigned() || (v.is_number_integer() && v.get<long long>() >= 0);
        case Kind::Flag: return v.is_boolean();
        case Kind::Text: return v.is_string();
    }
    return false;
}

const char* kind_name(Kind k) {
    switch (k) {
        case Kind::Real: return "a number";
        case Kind::Count: return "a nonnegative integer";
        case Kind::Seed: return "a nonnegative 64-bit integer";
        case Kind::Flag: return "true or false";
        case Kind::Text: return "a string";
    }
    return "";
}

void check_solver(const FbpOptions& o) {
    auto pos = [](double v, const char* name) {
        if (!(v > 0) || !std::isfinite(v)) throw ConfigError(std::string(name) + ": must satisfy " + name + " > 0");
    };
    pos(o.rtol, "rtol");
    pos(o.atol, "atol");
    pos(o.event_tol, "event_tol");
    pos(o.shoot_tol, "shoot_tol");
    pos(o.handoff_tol, "handoff_tol");
    pos(o.handoff_slope_tol, "handoff_slope_tol");
    pos(o.pinch_factor, "pinch_factor");
    pos(o.x_max, "x_max");
    if (!(o.third_derivative_cap >= 0))
        throw ConfigError("third_derivative_cap: must satisfy third_derivative_cap >= 0");
}

void check_run(const RunConfig& rc) {
    if (rc.grid_points < 3) throw ConfigError("grid_points: must satisfy grid_points >= 3");
    if (rc.solution_rows < 2) throw ConfigError("solution_rows: must satisfy solution_rows >= 2");
    if (rc.sim_knots < 1) throw ConfigError("sim_knots: must satisfy sim_knots >= 1");
    if (rc.sweep_param != "cost" && rc.sweep_param != "mu")
        throw ConfigError("sweep_param: must be \"cost\" or \"mu\"");
    if (!(rc.sweep_min < rc.sweep_max) || !std::isfinite(rc.sweep_min) || !std::isfinite(rc.sweep_max))
        throw ConfigError("sweep_min: must satisfy sweep_min < sweep_max");
    if (rc.sweep_param == "cost" && !(rc.sweep_min > 0 && rc.sweep_max < 1))
        throw ConfigError("sweep_min: cost sweeps need 0 < sweep_min < sweep_max < 1");
    if (rc.sweep_param == "mu" && !(rc.sweep_min > 0)) throw ConfigError("sweep_min: mu sweeps need sweep_min > 0");
    if (rc.sweep_points < 2) throw ConfigError("sweep_points: must satisfy sweep_points >= 2");
    if (rc.format != "csv" && rc.format != "json") throw ConfigError("format: must be \"csv\" or \"json\"");
}

}  // namespace

RunConfig parse_config(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError("line " + std::to_string(line_of_offset(text, e.byte > 0 ? e.byte - 1 : 0)) +
                          ": malformed JSON (" + e.what() + ")");
    }
    if (!doc.is_object()) throw ConfigError("line 1: configuration must be a flat JSON object");

    RunConfig rc;
    for (auto it = doc.begin(); it != doc.end(); ++it) {
        const Field* f = nullptr;
        for (const Field& cand : fields())
            if (it.key() == cand.name) f = &cand;
        if (!f) fail_at(text, it.key(), "unknown key '" + it.key() + "'");
        if (!type_ok(f->kind, it.value()))
            fail_at(text, it.key(), "key '" + it.key() + "' must be " + kind_name(f->kind));
        f->set(rc, it.value());
    }

    try {
        validate(rc.model);
        check_solver(rc.solver);
        validate(rc.sim);
        check_run(rc);
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        const std::string key = msg.substr(0, msg.find(':'));
        fail_at(text, key, msg);
    }
    return rc;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

std::string config_echo(const RunConfig& rc) {
    std::string s = "{";
    bool first = true;
    for (const Field& f : fields()) {
        if (!f.echoed) continue;
        if (!first) s += ",";
        first = false;
        s += "\"" + std::string(f.name) + "\":" + f.get(rc);
    }
    return s + "}";
}

namespace {

using Cell = std::variant<double, std::string>;

struct Table {
    std::string name;
    std::vector<std::string> columns;
    std::vector<std::vector<Cell>> rows;
};

Cell opt_cell(const std::optional<double>& v) {
    if (v) return *v;
    return std::string("undefined");
}

std::string csv_cell(const Cell& c) {
    if (const double* d = std::get_if<double>(&c)) return format_double(*d);
    const std::string& s = std::get<std::string>(c);
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char ch : s) q += ch == '"' ? std::string("\"\"") : std::string(1, ch);
    return q + "\"";
}

std::string json_cell(const Cell& c) {
    if (const double* d = std::get_if<double>(&c)) return std::isfinite(*d) ? format_double(*d) : "null";
    return json(std::get<std::string>(c)).dump();
}

std::string render(const Table& t, const std::string& command, const RunConfig& rc) {
    std::ostringstream o;
    if (rc.format == "json") {
        o << "{\"tool\":" << json(kToolVersion).dump() << ",\n\"command\":" << json(command).dump()
          << ",\n\"table\":" << json(t.name).dump() << ",\n\"config\":" << config_echo(rc) << ",\n\"columns\":[";
        for (std::size_t i = 0; i < t.columns.size(); ++i) o << (i ? "," : "") << json(t.columns[i]).dump();
        o << "],\n\"rows\":[";
        for (std::size_t r = 0; r < t.rows.size(); ++r) {
            o << (r ? ",\n" : "\n") << "[";
            for (std::size_t i = 0; i < t.rows[r].size(); ++i) o << (i ? "," : "") << json_cell(t.rows[r][i]);
            o << "]";
        }
        o << "\n]}\n";
    } else {
        o << "# " << kToolVersion << "\n# command: " << command << "\n# table: " << t.name
          << "\n# config: " << config_echo(rc) << "\n";
        for (std::size_t i = 0; i < t.columns.size(); ++i) o << (i ? "," : "") << t.columns[i];
        o << "\n";
        for (const auto& row : t.rows) {
            for (std::size_t i = 0; i < row.size(); ++i) o << (i ? "," : "") << csv_cell(row[i]);
            o << "\n";
        }
    }
    return o.str();
}

std::string write_table(const Table& t, const std::string& command, const RunConfig& rc) {
    std::filesystem::create_directories(rc.out_dir);
    const std::string path = (std::filesystem::path(rc.out_dir) / (t.name + "." + rc.format)).string();
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("cannot write output file '" + path + "'");
    f << render(t, command, rc);
    return path;
}

Table classify_table(const ModelParams& m) {
    const WellPosedness w = classify(m);
    const DerivedConstants dc = derive_constants(m);
    Table t{"classify", {"quantity", "value"}, {}};
    auto add = [&](const char* k, Cell v) { t.rows.push_back({std::string(k), std::move(v)}); };
    add("verdict", to_string(w.verdict));
    add("regime", to_string(w.regime));
    add("mu", m.mu);
    add("G", opt_cell(dc.G_const));
    add("A", opt_cell(dc.A_const));
    add("merton_pi", dc.merton_pi);
    add("K", opt_cell(dc.K_const));
    add("C", opt_cell(w.C_const ? w.C_const : dc.C_const));
    add("log_cost", w.log_cost);
    const std::optional<double> C = w.C_const ? w.C_const : dc.C_const;
    add("margin_C_minus_log_cost", C ? Cell(*C - w.log_cost) : Cell(std::string("undefined")));
    add("q", dc.q);
    add("delta_hat", dc.delta_hat);
    add("x_P", opt_cell(dc.x_P));
    add("z_P", opt_cell(dc.z_P));
    add("x_N", opt_cell(dc.x_N));
    add("z_N", opt_cell(dc.z_N));
    add("x_E", opt_cell(dc.x_E));
    add("y_low", dc.y_low);
    add("y_high", dc.y_high);
    return t;
}

void print_table(std::ostream& out, const Table& t) {
    for (const auto& row : t.rows) out << csv_cell(row[0]) << ": " << csv_cell(row[1]) << "\n";
}

struct Threshold {
    const char* name;
    double value;
    double limit;
    bool pass;
};

std::vector<Threshold> residual_checks(const FbpSolution& s) {
    const ResidualReport& r = s.residuals;
    std::vector<Threshold> v;
    v.push_back({"ode_residual", r.ode_residual, 1e-8, r.ode_residual <= 1e-8});
    if (r.low_boundary_waived)
        v.push_back({"low_singular_gap", r.low_singular_gap, 1e-8, r.low_singular_gap <= 1e-8});
    else
        v.push_back({"g_prime_low", r.g_prime_low, 1e-6, r.g_prime_low <= 1e-6});
    v.push_back({"g_prime_high", r.g_prime_high, 1e-6, r.g_prime_high <= 1e-6});
    v.push_back({"integral_residual", r.integral_residual, 1e-8, r.integral_residual <= 1e-8});
    v.push_back({"min_abs_h", r.min_abs_h, 0.0, r.min_abs_h > 0});
    v.push_back({"envelope_residual", r.envelope_residual, 1e-6, r.envelope_residual <= 1e-6});
    v.push_back({"f_low_residual", r.f_low_residual, 1e-8, r.f_low_residual <= 1e-8});
    v.push_back({"f_high_residual", r.f_high_residual, 1e-8, r.f_high_residual <= 1e-8});
    v.push_back({"handoff_slope_mismatch", r.handoff_slope_mismatch, 1e-6, r.handoff_slope_mismatch <= 1e-6});
    return v;
}

Table solution_table(const FbpSolution& s, std::size_t max_rows) {
    Table t{"solution", {"x", "g", "g_prime", "f", "theta", "Sigma", "Pi", "Kappa"}, {}};
    const auto& grid = s.grid();
    const std::size_t n = grid.size();
    const std::size_t rows = std::min(n, max_rows);
    std::size_t last = n;
    for (std::size_t k = 0; k < rows; ++k) {
        const std::size_t i = rows == 1 ? 0 : (k * (n - 1)) / (rows - 1);
        if (i == last) continue;
        last = i;
        const GridPoint& gp = grid[i];
        const double dg = std::max(gp.dg, 0.0);
        const Optimizers o = optimizers_at(gp.x, gp.g, dg, s.params);
        const PiKappa pk = pi_kappa_at(gp.x, gp.g, s.params);
        t.rows.push_back({gp.x, gp.g, gp.dg, s.f_grid[i], o.theta, o.Sigma, pk.Pi, pk.Kappa});
    }
    return t;
}

Table residual_table(const FbpSolution& s, bool& all_pass) {
    Table t{"residuals", {"quantity", "value", "threshold", "pass"}, {}};
    all_pass = true;
    for (const Threshold& c : residual_checks(s)) {
        all_pass = all_pass && c.pass;
        t.rows.push_back({std::string(c.name), c.value, c.limit, std::string(c.pass ? "true" : "false")});
    }
    auto info = [&](const char* k, double v) { t.rows.push_back({std::string(k), v, std::string(""), std::string("")}); };
    info("alpha", s.alpha);
    info("x_low", s.x_low);
    info("x_high", s.x_high);
    info("target_log_cost", s.target);
    info("shoot_iterations", s.shoot_iterations);
    info("knots", static_cast<double>(s.residuals.knots));
    info("singular_passage", s.singular_passage() ? 1.0 : 0.0);
    info("ode_exclusion_radius", s.residuals.ode_exclusion_radius);
    return t;
}

// Solves after the strict-solvency and well-posedness checks; reports ill-posed input.
std::optional<FbpSolution> solve_or_report(const RunConfig& rc, const std::string& command, std::ostream& out,
                                           int& code) {
    require_strict_solvency(rc.model);
    const WellPosedness w = classify(rc.model);
    if (w.verdict == Verdict::IllPosed) {
        const Table t = classify_table(rc.model);
        out << "problem is ill-posed; classification follows\n";
        print_table(out, t);
        out << "wrote " << write_table(t, command, rc) << "\n";
        code = kExitIllPosed;
        return std::nullopt;
    }
    return shoot(rc.model, rc.solver);
}

int cmd_classify(const RunConfig& rc, std::ostream& out) {
    const Table t = classify_table(rc.model);
    print_table(out, t);
    out << "wrote " << write_table(t, "classify", rc) << "\n";
    return kExitOk;
}

int cmd_solve(const RunConfig& rc, std::ostream& out) {
    int code = kExitOk;
    const auto sol = solve_or_report(rc, "solve", out, code);
    if (!sol) return code;
    bool pass = false;
    const Table res = residual_table(*sol, pass);
    for (const auto& row : res.rows) out << csv_cell(row[0]) << ": " << csv_cell(row[1]) << "\n";
    out << "wrote " << write_table(solution_table(*sol, rc.solution_rows), "solve", rc) << "\n";
    out << "wrote " << write_table(res, "solve", rc) << "\n";
    out << "residual thresholds: " << (pass ? "all pass" : "FAILED") << "\n";
    return pass ? kExitOk : kExitNumerical;
}

int cmd_policy(const RunConfig& rc, std::ostream& out) {
    int code = kExitOk;
    const auto sol = solve_or_report(rc, "policy", out, code);
    if (!sol) return code;
    const PolicyTable p = build_policy(*sol, rc.grid_points);
    Table t{"policy", {"x", "g", "g_prime", "theta", "Sigma", "Gamma", "Pi", "Kappa", "f", "drift"}, {}};
    for (std::size_t i = 0; i < p.x.size(); ++i)
        t.rows.push_back({p.x[i], p.g[i], p.dg[i], p.theta[i], p.Sigma[i], p.Gamma[i], p.Pi[i], p.Kappa[i], p.f[i],
                          p.drift[i]});
    Table s{"policy_summary", {"quantity", "value"}, {}};
    auto add = [&](const char* k, double v) { s.rows.push_back({std::string(k), v}); };
    add("x_low", p.x_low);
    add("x_high", p.x_high);
    add("x_hat", p.x_hat);
    add("u_hat", p.u_hat);
    add("wedge_fraction_low", p.wedge_low);
    add("wedge_fraction_high", p.wedge_high);
    add("merton_pi", sol->constants.merton_pi);
    add("theta_sup", p.theta_sup);
    add("min_sigma_plus_Sigma", p.min_sigma_plus_Sigma);
    add("min_kappa", p.min_kappa);
    add("max_kappa", p.max_kappa);
    add("min_abs_h", p.min_abs_h);
    print_table(out, s);
    out << "wrote " << write_table(t, "policy", rc) << "\n";
    out << "wrote " << write_table(s, "policy", rc) << "\n";
    return kExitOk;
}

int cmd_simulate(const RunConfig& rc, std::ostream& out) {
    int code = kExitOk;
    const auto sol = solve_or_report(rc, "simulate", out, code);
    if (!sol) return code;
    const PolicyTable p = build_policy(*sol, rc.grid_points);
    Table t{"estimates",
            {"quantity", "x", "estimate", "std_error", "solver_value", "z", "tail_bound", "horizon", "within_3se"},
            {}};
    auto row = [&](const char* q, double x, const McEstimate& e, double solver) {
        const double z = (e.estimate - solver) / e.std_error;
        const bool ok = std::abs(e.estimate - solver) <= 3 * e.std_error + e.tail_bound;
        t.rows.push_back({std::string(q), x, e.estimate, e.std_error, solver, z, e.tail_bound, e.horizon,
                          std::string(ok ? "true" : "false")});
        out << q << " at x=" << format_double(x) << ": estimate " << format_double(e.estimate) << " +- "
            << format_double(e.std_error) << ", solver " << format_double(solver) << ", z " << format_double(z)
            << "\n";
    };
    const std::size_t n = rc.sim_knots;
    for (std::size_t k = 0; k < n; ++k) {
        const double x = n == 1 ? 0.5 * (p.x_low + p.x_high)
                                : p.x_low + (p.x_high - p.x_low) * static_cast<double>(k) / static_cast<double>(n - 1);
        row("g", x, mc_estimate_g(x, rc.sim, p, rc.model), sol->g(x));
        if (rc.model.p == 0) row("g_reduced", x, mc_estimate_g(x, rc.sim, p, rc.model, GForm::Reduced), sol->g(x));
    }
    row("utility", p.x_hat, mc_estimate_utility(rc.sim, p, rc.model, rc.model.eta_B, rc.model.eta_S), p.u_hat);
    out << "wrote " << write_table(t, "simulate", rc) << "\n";
    return kExitOk;
}

Table frontier_table(const ModelParams& base, std::size_t points) {
    Table t{"frontier", {"mu", "C"}, {}};
    if (!(base.p > 0 && base.p < 1)) return t;
    ModelParams m = base;
    const DerivedConstants dc = derive_constants(m);
    if (!dc.G_const || !dc.A_const) return t;
    const double G = *dc.G_const, A = *dc.A_const;
    for (std::size_t k = 0; k < points; ++k) {
        m.mu = G + (A - G) * static_cast<double>(k) / static_cast<double>(points);
        try {
            t.rows.push_back({m.mu, compute_C(m)});
        } catch (const Error& e) {
            t.rows.push_back({m.mu, std::string(e.what())});
        }
    }
    return t;
}

int cmd_sweep(const RunConfig& rc, std::ostream& out) {
    const bool cost = rc.sweep_param == "cost";
    Table t{"sweep",
            {cost ? "lambda" : "mu", "log_cost", "verdict", "regime", "C", "x_low", "x_high", "Pi_low", "Pi_high",
             "u_hat", "x_N", "merton_pi", "status"},
            {}};
    const double nan = std::numeric_limits<double>::quiet_NaN();
    for (std::size_t k = 0; k < rc.sweep_points; ++k) {
        const double s = static_cast<double>(k) / static_cast<double>(rc.sweep_points - 1);
        ModelParams m = rc.model;
        double v;
        if (cost) {
            v = rc.sweep_max * std::pow(rc.sweep_min / rc.sweep_max, s);
            m.lambda_down = m.lambda_up = v;
        } else {
            v = rc.sweep_min + (rc.sweep_max - rc.sweep_min) * s;
            m.mu = v;
        }
        std::vector<Cell> row{v, log_cost(m), std::string(), std::string(), nan, nan, nan, nan, nan, nan, nan, nan,
                              std::string("ok")};
        try {
            validate(m);
            const WellPosedness w = classify(m);
            const DerivedConstants dc = derive_constants(m);
            row[2] = to_string(w.verdict);
            row[3] = to_string(w.regime);
            row[4] = opt_cell(w.C_const);
            row[10] = opt_cell(dc.x_N);
            row[11] = dc.merton_pi;
            if (w.verdict == Verdict::WellPosed) {
                const FbpSolution sol = shoot(m, rc.solver);
                const Wedge wd = no_trade_wedge(sol);
                row[5] = sol.x_low;
                row[6] = sol.x_high;
                row[7] = wd.fraction_low;
                row[8] = wd.fraction_high;
                row[9] = value(m.eta_B, m.eta_S, sol);
            } else {
                row[12] = std::string("skipped: ill-posed");
            }
        } catch (const std::exception& e) {
            row[12] = std::string("error: ") + e.what();
        }
        out << csv_cell(row[0]) << ": " << csv_cell(row[2]) << " " << csv_cell(row[12]) << "\n";
        t.rows.push_back(std::move(row));
    }
    out << "wrote " << write_table(t, "sweep", rc) << "\n";
    const Table f = frontier_table(rc.model, 4 * rc.sweep_points);
    if (!f.rows.empty()) out << "wrote " << write_table(f, "sweep", rc) << "\n";
    return kExitOk;
}

}  // namespace

int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Optimal investment and consumption with proportional transaction costs", "shadowfbp"};
    std::string command, config_path, out_dir, format;
    std::optional<std::uint64_t> seed;
    app.add_option("command", command, "classify | solve | policy | simulate | sweep")
        ->required()
        ->check(CLI::IsMember({"classify", "solve", "policy", "simulate", "sweep"}));
    app.add_option("--config", config_path, "flat JSON configuration file")->required();
    app.add_option("--out", out_dir, "output directory (overrides out_dir)");
    app.add_option("--seed", seed, "random seed (overrides seed)");
    app.add_option("--format", format, "output format")->check(CLI::IsMember({"csv", "json"}));
    app.set_version_flag("--version", kToolVersion);
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e, out, err);
        return rc == 0 ? kExitOk : kExitConfig;
    }

    try {
        RunConfig rc = load_config(config_path);
        if (!out_dir.empty()) rc.out_dir = out_dir;
        if (!format.empty()) rc.format = format;
        if (seed) rc.sim.seed = *seed;
        if (command == "classify") return cmd_classify(rc, out);
        if (command == "solve") return cmd_solve(rc, out);
        if (command == "policy") return cmd_policy(rc, out);
        if (command == "simulate") return cmd_simulate(rc, out);
        return cmd_sweep(rc, out);
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const BudgetError& e) {
        err << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const IllPosedError& e) {
        err << "ill-posed: " << e.what() << "\n";
        return kExitIllPosed;
    } catch (const std::exception& e) {
        err << "numerical failure: " << e.what() << "\n";
        return kExitNumerical;
    }
}

}  // namespace shadowfbp

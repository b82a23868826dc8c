#include "marginflow/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <limits>
#include <sstream>

#include "marginflow/oracles.hpp"

namespace mf {

InitScheme init_scheme_from_string(const std::string& s) {
    if (s == "gaussian") return InitScheme::Gaussian;
    if (s == "unit-sphere") return InitScheme::UnitSphere;
    throw ConfigError("unknown init scheme: " + s);
}

std::string to_string(InitScheme s) {
    return s == InitScheme::Gaussian ? "gaussian" : "unit-sphere";
}

// --- strict JSON access -----------------------------------------------------------

namespace {

[[noreturn]] void cfg_fail(const std::string& path, const std::string& msg) {
    throw ConfigError(path + ": " + msg);
}

void check_keys(const Json& j, const std::string& path,
                std::initializer_list<const char*> allowed) {
    if (!j.is_object()) cfg_fail(path, "expected an object");
    for (const auto& item : j.items()) {
        bool known = false;
        for (const char* a : allowed)
            if (item.key() == a) {
                known = true;
                break;
            }
        if (!known) cfg_fail(path + "." + item.key(), "unknown field");
    }
}

double get_num(const Json& j, const char* key, const std::string& path,
               std::optional<double> def = {}) {
    if (!j.contains(key)) {
        if (def) return *def;
        cfg_fail(path + "." + key, "missing required number");
    }
    const Json& v = j.at(key);
    if (!v.is_number()) cfg_fail(path + "." + key, "expected a number");
    return v.get<double>();
}

long get_long(const Json& j, const char* key, const std::string& path,
              std::optional<long> def = {}) {
    if (!j.contains(key)) {
        if (def) return *def;
        cfg_fail(path + "." + key, "missing required integer");
    }
    const Json& v = j.at(key);
    if (!v.is_number_integer()) cfg_fail(path + "." + key, "expected an integer");
    return v.get<long>();
}

bool get_bool(const Json& j, const char* key, const std::string& path,
              std::optional<bool> def = {}) {
    if (!j.contains(key)) {
        if (def) return *def;
        cfg_fail(path + "." + key, "missing required boolean");
    }
    const Json& v = j.at(key);
    if (!v.is_boolean()) cfg_fail(path + "." + key, "expected a boolean");
    return v.get<bool>();
}

std::string get_str(const Json& j, const char* key, const std::string& path,
                    std::optional<std::string> def = {}) {
    if (!j.contains(key)) {
        if (def) return *def;
        cfg_fail(path + "." + key, "missing required string");
    }
    const Json& v = j.at(key);
    if (!v.is_string()) cfg_fail(path + "." + key, "expected a string");
    return v.get<std::string>();
}

std::optional<double> get_opt_num(const Json& j, const char* key, const std::string& path) {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    const Json& v = j.at(key);
    if (!v.is_number()) cfg_fail(path + "." + key, "expected a number or null");
    return v.get<double>();
}

DataSpec parse_data(const Json& j, const std::string& path, std::uint64_t default_seed) {
    check_keys(j, path,
               {"source", "d", "n", "gap", "seed", "bias", "x1", "x2", "path", "label_col",
                "positive_class", "rows"});
    DataSpec d;
    d.source = get_str(j, "source", path, d.source);
    d.d = static_cast<int>(get_long(j, "d", path, d.d));
    d.n = static_cast<int>(get_long(j, "n", path, d.n));
    d.gap = get_num(j, "gap", path, d.gap);
    d.seed = static_cast<std::uint64_t>(get_long(j, "seed", path,
                                                 static_cast<long>(default_seed + 1000003)));
    d.bias = get_bool(j, "bias", path, d.bias);
    d.x1 = get_num(j, "x1", path, d.x1);
    d.x2 = get_num(j, "x2", path, d.x2);
    d.path = get_str(j, "path", path, d.path);
    d.label_col = get_str(j, "label_col", path, d.label_col);
    d.positive_class = get_str(j, "positive_class", path, d.positive_class);
    if (j.contains("rows")) {
        const Json& r = j.at("rows");
        if (!r.is_array()) cfg_fail(path + ".rows", "expected an array of row indices");
        for (const Json& e : r) {
            if (!e.is_number_integer()) cfg_fail(path + ".rows", "expected integer indices");
            d.rows.push_back(e.get<int>());
        }
    }
    return d;
}

ModelSpec parse_model(const Json& j, const std::string& path) {
    check_keys(j, path, {"dims", "init_scale", "init_scheme", "seed"});
    ModelSpec m;
    if (!j.contains("dims")) cfg_fail(path + ".dims", "missing required field");
    const Json& dims = j.at("dims");
    if (!dims.is_array() || dims.size() < 2) cfg_fail(path + ".dims", "expected [d, ..., 1]");
    for (const Json& e : dims) {
        if (!e.is_number_integer() || e.get<long>() <= 0)
            cfg_fail(path + ".dims", "widths must be positive integers");
        m.dims.push_back(e.get<int>());
    }
    m.init_scale = get_num(j, "init_scale", path, m.init_scale);
    m.init_scheme = init_scheme_from_string(get_str(j, "init_scheme", path, "gaussian"));
    if (j.contains("seed"))
        m.seed = static_cast<std::uint64_t>(get_long(j, "seed", path));
    return m;
}

FlowKind parse_flow(const Json& j, const std::string& path) {
    check_keys(j, path, {"kind", "rho", "machine_rho", "p", "schedule", "bn_eps", "log_shift"});
    FlowKind k;
    k.tag = flow_tag_from_string(get_str(j, "kind", path));
    k.rho = get_num(j, "rho", path, k.rho);
    k.machine_rho = get_bool(j, "machine_rho", path, k.machine_rho);
    if (j.contains("p")) {
        const Json& p = j.at("p");
        if (p.is_string()) {
            if (p.get<std::string>() != "inf") cfg_fail(path + ".p", "expected a norm order or \"inf\"");
            k.p = std::numeric_limits<double>::infinity();
        } else if (p.is_number()) {
            k.p = p.get<double>();
        } else {
            cfg_fail(path + ".p", "expected a norm order or \"inf\"");
        }
    }
    k.schedule = alpha_schedule_from_string(get_str(j, "schedule", path, "one"));
    k.bn_eps = get_num(j, "bn_eps", path, k.bn_eps);
    k.log_shift = get_bool(j, "log_shift", path, k.log_shift);
    return k;
}

StepPolicy parse_policy(const Json& j, const std::string& path) {
    check_keys(j, path, {"scheme", "h", "max_steps", "t0", "stop_time", "stop_loss", "stop_rho",
                         "renormalize", "record_every", "record_states_every", "tol_sv",
                         "dominance_tol"});
    StepPolicy p;
    p.scheme = scheme_from_string(get_str(j, "scheme", path, "euler"));
    p.h = get_num(j, "h", path, p.h);
    p.max_steps = get_long(j, "max_steps", path, p.max_steps);
    p.t0 = get_num(j, "t0", path, p.t0);
    p.stop_time = get_opt_num(j, "stop_time", path);
    p.stop_loss = get_opt_num(j, "stop_loss", path);
    p.stop_rho = get_opt_num(j, "stop_rho", path);
    p.renormalize = get_bool(j, "renormalize", path, p.renormalize);
    p.record_every = get_long(j, "record_every", path, p.record_every);
    p.record_states_every = get_long(j, "record_states_every", path, p.record_states_every);
    p.tol_sv = get_num(j, "tol_sv", path, p.tol_sv);
    p.dominance_tol = get_num(j, "dominance_tol", path, p.dominance_tol);
    return p;
}

OutputSpec parse_outputs(const Json& j, const std::string& path) {
    check_keys(j, path, {"series_csv", "summary_json", "dataset_csv"});
    OutputSpec o;
    o.series_csv = get_str(j, "series_csv", path, o.series_csv);
    o.summary_json = get_str(j, "summary_json", path, o.summary_json);
    if (j.contains("dataset_csv") && !j.at("dataset_csv").is_null())
        o.dataset_csv = get_str(j, "dataset_csv", path);
    return o;
}

}  // namespace

ExperimentConfig parse_config(const Json& j) {
    check_keys(j, "config",
               {"name", "seed", "data", "model", "flow", "policy", "analyses", "outputs"});
    ExperimentConfig c;
    c.name = get_str(j, "name", "config", c.name);
    if (c.name.empty() || c.name.find('/') != std::string::npos)
        cfg_fail("config.name", "must be a nonempty name without '/'");
    c.seed = static_cast<std::uint64_t>(get_long(j, "seed", "config", 0));
    if (!j.contains("model")) cfg_fail("config.model", "missing required section");
    c.model = parse_model(j.at("model"), "config.model");
    if (!j.contains("flow")) cfg_fail("config.flow", "missing required section");
    c.flow = parse_flow(j.at("flow"), "config.flow");
    if (!j.contains("policy")) cfg_fail("config.policy", "missing required section");
    c.policy = parse_policy(j.at("policy"), "config.policy");
    c.data = j.contains("data") ? parse_data(j.at("data"), "config.data", c.seed)
                                : parse_data(Json::object(), "config.data", c.seed);
    if (j.contains("analyses")) {
        const Json& arr = j.at("analyses");
        if (!arr.is_array()) cfg_fail("config.analyses", "expected an array");
        for (size_t i = 0; i < arr.size(); ++i) {
            const std::string path = "config.analyses[" + std::to_string(i) + "]";
            const Json& a = arr.at(i);
            if (!a.is_object()) cfg_fail(path, "expected an object");
            AnalysisSpec spec;
            spec.type = get_str(a, "type", path);
            spec.params = a;
            c.analyses.push_back(std::move(spec));
        }
    }
    if (j.contains("outputs")) c.outputs = parse_outputs(j.at("outputs"), "config.outputs");
    return c;
}

Json config_to_json(const ExperimentConfig& c) {
    Json j;
    j["name"] = c.name;
    j["seed"] = c.seed;
    Json d;
    d["source"] = c.data.source;
    d["d"] = c.data.d;
    d["n"] = c.data.n;
    d["gap"] = c.data.gap;
    d["seed"] = c.data.seed;
    d["bias"] = c.data.bias;
    d["x1"] = c.data.x1;
    d["x2"] = c.data.x2;
    d["path"] = c.data.path;
    d["label_col"] = c.data.label_col;
    d["positive_class"] = c.data.positive_class;
    if (!c.data.rows.empty()) d["rows"] = c.data.rows;
    j["data"] = d;
    Json m;
    m["dims"] = c.model.dims;
    m["init_scale"] = c.model.init_scale;
    m["init_scheme"] = to_string(c.model.init_scheme);
    if (c.model.seed) m["seed"] = *c.model.seed;
    j["model"] = m;
    Json f;
    f["kind"] = to_string(c.flow.tag);
    f["rho"] = c.flow.rho;
    f["machine_rho"] = c.flow.machine_rho;
    if (std::isinf(c.flow.p))
        f["p"] = "inf";
    else
        f["p"] = c.flow.p;
    f["schedule"] = to_string(c.flow.schedule);
    f["bn_eps"] = c.flow.bn_eps;
    f["log_shift"] = c.flow.log_shift;
    j["flow"] = f;
    Json p;
    p["scheme"] = to_string(c.policy.scheme);
    p["h"] = c.policy.h;
    p["max_steps"] = c.policy.max_steps;
    p["t0"] = c.policy.t0;
    p["stop_time"] = c.policy.stop_time ? Json(*c.policy.stop_time) : Json(nullptr);
    p["stop_loss"] = c.policy.stop_loss ? Json(*c.policy.stop_loss) : Json(nullptr);
    p["stop_rho"] = c.policy.stop_rho ? Json(*c.policy.stop_rho) : Json(nullptr);
    p["renormalize"] = c.policy.renormalize;
    p["record_every"] = c.policy.record_every;
    p["record_states_every"] = c.policy.record_states_every;
    p["tol_sv"] = c.policy.tol_sv;
    p["dominance_tol"] = c.policy.dominance_tol;
    j["policy"] = p;
    Json arr = Json::array();
    for (const AnalysisSpec& a : c.analyses) arr.push_back(a.params);
    j["analyses"] = arr;
    Json o;
    o["series_csv"] = c.outputs.series_csv;
    o["summary_json"] = c.outputs.summary_json;
    o["dataset_csv"] = c.outputs.dataset_csv ? Json(*c.outputs.dataset_csv) : Json(nullptr);
    j["outputs"] = o;
    return j;
}

Json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path);
    try {
        return Json::parse(in);
    } catch (const Json::exception& e) {
        throw ParseError(path + ": " + e.what());
    }
}

ExperimentConfig load_config(const std::string& path) {
    return parse_config(read_json_file(path));
}

DataSpec parse_data_spec(const Json& j) {
    return parse_data(j, "data", 0);
}

// --- analyses ---------------------------------------------------------------------

namespace {

std::vector<double> series_of(const std::string& name, const Trajectory& tr) {
    std::vector<double> v;
    v.reserve(tr.records());
    if (name == "loss") {
        for (double l : tr.log_loss) v.push_back(std::exp(l));
    } else if (name == "log_loss") {
        v = tr.log_loss;
    } else if (name == "margin") {
        v = tr.margin;
    } else if (name == "stationarity") {
        v = tr.stationarity;
    } else if (name == "rho_product") {
        for (const Vector& r : tr.rho) v.push_back(r.prod());
    } else {
        throw ConfigError("unknown series: " + name);
    }
    return v;
}

Vector resolve_target(const Json& t, const Dataset& data) {
    if (t.is_string()) {
        if (t.get<std::string>() == "oracle") return oracle::hard_margin_direction(data).direction;
        throw ConfigError("target must be \"oracle\" or an array");
    }
    if (t.is_array()) {
        Vector v(t.size());
        for (size_t i = 0; i < t.size(); ++i) {
            if (!t.at(i).is_number()) throw ConfigError("target entries must be numbers");
            v(static_cast<Eigen::Index>(i)) = t.at(i).get<double>();
        }
        return v;
    }
    throw ConfigError("target must be \"oracle\" or an array");
}

void filter_final_decades(std::vector<double>& t, std::vector<double>& v, double decades) {
    if (t.empty()) return;
    const double t_hi = *std::max_element(t.begin(), t.end());
    const double cutoff = t_hi / std::pow(10.0, decades);
    std::vector<double> t2, v2;
    for (size_t i = 0; i < t.size(); ++i)
        if (t[i] >= cutoff) {
            t2.push_back(t[i]);
            v2.push_back(v[i]);
        }
    t.swap(t2);
    v.swap(v2);
}

struct AnalysisOutcome {
    Json out;
    std::optional<bool> pass;
    std::optional<std::pair<std::string, std::string>> file;  // name -> contents
};

std::string g17(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

AnalysisOutcome run_rate_fit(const Json& p, const std::string& path, const Dataset& data,
                             const Flow& flow, const Trajectory& tr) {
    check_keys(p, path,
               {"type", "series", "family", "min_r2", "final_decades", "target", "max_b",
                "min_b", "csv"});
    const std::string series = get_str(p, "series", path);
    const RateFamily family = rate_family_from_string(get_str(p, "family", path));
    std::vector<double> ts, vs;
    if (series == "direction_error") {
        if (!p.contains("target")) cfg_fail(path + ".target", "missing required field");
        const Vector target = resolve_target(p.at("target"), data);
        auto te = direction_error_series(flow, tr, target);
        ts = std::move(te.first);
        vs = std::move(te.second);
    } else {
        ts = tr.t;
        vs = series_of(series, tr);
    }
    if (p.contains("final_decades"))
        filter_final_decades(ts, vs, get_num(p, "final_decades", path));
    const RateFit fit = fit_rate(ts, vs, family);

    AnalysisOutcome r;
    r.out = Json{{"type", "rate_fit"},   {"series", series}, {"family", to_string(family)},
                 {"a", fit.a},           {"b", fit.b},       {"c", fit.c},
                 {"r2", fit.r2},         {"points", fit.points},
                 {"t_lo", fit.t_lo},     {"t_hi", fit.t_hi}};
    bool gated = false, ok = true;
    if (p.contains("min_r2")) {
        gated = true;
        ok = ok && fit.r2 >= get_num(p, "min_r2", path);
    }
    if (p.contains("min_b")) {
        gated = true;
        ok = ok && fit.b >= get_num(p, "min_b", path);
    }
    if (p.contains("max_b")) {
        gated = true;
        ok = ok && fit.b <= get_num(p, "max_b", path);
    }
    if (gated) r.pass = ok;
    if (p.contains("csv")) {
        std::string body = "t,value\n";
        for (size_t i = 0; i < ts.size(); ++i)
            body += g17(ts[i]) + "," + g17(vs[i]) + "\n";
        r.file = {get_str(p, "csv", path), std::move(body)};
    }
    return r;
}

AnalysisOutcome run_equilibrium_1d(const Json& p, const std::string& path,
                                   const ExperimentConfig& cfg, const Flow& flow,
                                   const Trajectory& tr) {
    check_keys(p, path, {"type", "max_err"});
    if (cfg.data.source != "two-point-1d")
        throw ConfigError("equilibrium_1d requires the two-point-1d data source");
    const double w_final =
        flow.rho_product(tr.final_state) * flow.direction(tr.final_state)(0);
    const oracle::Equilibrium1d eq = oracle::closed_form_1d(cfg.data.x1, cfg.data.x2);
    const double err = std::abs(w_final - eq.w_star);
    AnalysisOutcome r;
    r.out = Json{{"type", "equilibrium_1d"},
                 {"w_final", w_final},
                 {"w_star", eq.w_star},
                 {"field_derivative", eq.field_derivative},
                 {"stable", eq.stable},
                 {"err", err}};
    if (p.contains("max_err")) r.pass = err <= get_num(p, "max_err", path) && eq.stable;
    return r;
}

AnalysisOutcome run_norm_balance(const Json& p, const std::string& path, const Trajectory& tr) {
    check_keys(p, path, {"type", "max_spread"});
    const double value = norm_balance_spread(tr.rho);
    AnalysisOutcome r;
    r.out = Json{{"type", "norm_balance"}, {"spread", value}};
    if (p.contains("max_spread")) r.pass = value <= get_num(p, "max_spread", path);
    return r;
}

AnalysisOutcome run_margin_monotone(const Json& p, const std::string& path,
                                    const Trajectory& tr) {
    check_keys(p, path, {"type", "tol", "require_support_change_before"});
    const double tol = get_num(p, "tol", path, 1e-8);
    const bool require_change = get_bool(p, "require_support_change_before", path, false);
    const MarginMonotoneReport rep = margin_monotone_report(tr);
    AnalysisOutcome r;
    r.out = Json{{"type", "margin_monotone"},
                 {"dominance_reached", rep.dominance_reached},
                 {"support_changes_before", rep.support_changes_before},
                 {"support_changes_after", rep.support_changes_after}};
    if (rep.dominance_reached) r.out["t_dominance"] = rep.t_dominance;
    if (std::isfinite(rep.worst_step_delta))
        r.out["worst_step_delta"] = rep.worst_step_delta;
    else
        r.out["vacuous"] = true;
    r.pass = rep.monotone(tol) && (!require_change || rep.support_changes_before >= 1);
    return r;
}

AnalysisOutcome run_stationarity_final(const Json& p, const std::string& path,
                                       const Trajectory& tr) {
    check_keys(p, path, {"type", "max_value"});
    if (tr.stationarity.empty()) throw InsufficientDataError("no records");
    const double value = tr.stationarity.back();
    AnalysisOutcome r;
    r.out = Json{{"type", "stationarity_final"}, {"value", value}};
    if (p.contains("max_value")) r.pass = value <= get_num(p, "max_value", path);
    return r;
}

AnalysisOutcome run_hessian_min_eig(const Json& p, const std::string& path, const Dataset& data,
                                    const Flow& flow, const Trajectory& tr) {
    check_keys(p, path, {"type", "min_value"});
    const Vector v = flow.direction(tr.final_state);
    if (v.size() != data.dim())
        throw ConfigError("hessian_min_eig needs a single linear unit");
    const double rho = flow.rho_product(tr.final_state);
    const Matrix h = linear_sphere_hessian(data, v, rho);
    const double value = tangent_min_eigenvalue(h, v);
    AnalysisOutcome r;
    r.out = Json{{"type", "hessian_min_eig"}, {"value", value}, {"rho", rho}};
    if (p.contains("min_value")) r.pass = value >= get_num(p, "min_value", path);
    return r;
}

AnalysisOutcome run_rho_reference(const Json& p, const std::string& path, const Flow& flow,
                                  const Trajectory& tr) {
    check_keys(p, path, {"type", "window_decades", "f", "max_rel_err"});
    const double decades = get_num(p, "window_decades", path, 1.0);
    if (tr.records() < 4) throw InsufficientDataError("too few records");
    std::vector<double> ts = tr.t, rp;
    for (const Vector& r : tr.rho) rp.push_back(r.prod());
    const double f = get_num(p, "f", path, tr.margin.back());
    const double t_hi = ts.back();
    const double cutoff = t_hi / std::pow(10.0, decades);
    size_t cal = ts.size();
    for (size_t i = 0; i < ts.size(); ++i)
        if (ts[i] >= cutoff && ts[i] > 0.0) {
            cal = i;
            break;
        }
    if (cal + 4 > ts.size()) throw InsufficientDataError("window holds fewer than 4 records");
    const RhoReference ref = make_rho_reference(flow.depth(), f, ts[cal], rp[cal]);
    double worst = 0.0;
    for (size_t i = cal; i < ts.size(); ++i) {
        const double expect = ref.rho_product_at(ts[i]);
        worst = std::max(worst, std::abs(rp[i] - expect) / std::abs(expect));
    }
    AnalysisOutcome r;
    r.out = Json{{"type", "rho_reference"}, {"depth", flow.depth()},   {"f", f},
                 {"t_cal", ts[cal]},        {"rho_cal", rp[cal]},      {"max_rel_err", worst},
                 {"window_points", ts.size() - cal}};
    if (p.contains("max_rel_err")) r.pass = worst <= get_num(p, "max_rel_err", path);
    return r;
}

AnalysisOutcome run_rho_log_ratio(const Json& p, const std::string& path, const Trajectory& tr) {
    check_keys(p, path, {"type", "max_spread"});
    std::vector<double> ts, ratio;
    for (size_t i = 0; i < tr.records(); ++i) {
        if (!(tr.t[i] > 1.0)) continue;
        ts.push_back(tr.t[i]);
        ratio.push_back(tr.rho[i].prod() / std::log(tr.t[i]));
    }
    const double value = final_decade_spread(ts, ratio);
    AnalysisOutcome r;
    r.out = Json{{"type", "rho_log_ratio"},
                 {"spread", value},
                 {"final_ratio", ratio.empty() ? 0.0 : ratio.back()}};
    if (p.contains("max_spread")) r.pass = value <= get_num(p, "max_spread", path);
    return r;
}

AnalysisOutcome run_norm_correction(const Json& p, const std::string& path, const Flow& flow,
                                    const Trajectory& tr, double h) {
    check_keys(p, path,
               {"type", "max_residual", "max_terminal_alpha_gap", "max_lambda_ratio"});
    const NormCorrectionTrace trace = norm_correction_trace(flow, tr, h);
    if (trace.t.empty()) throw InsufficientDataError("no aligned state records");
    double max_resid = 0.0;
    for (double rr : trace.residual) max_resid = std::max(max_resid, rr);
    const double terminal_gap = (trace.alpha.back().array() - 1.0).abs().maxCoeff();
    const double lambda0 = trace.lambda.front().cwiseAbs().maxCoeff();
    const double lambda1 = trace.lambda.back().cwiseAbs().maxCoeff();
    AnalysisOutcome r;
    r.out = Json{{"type", "norm_correction"},
                 {"rows", trace.t.size()},
                 {"max_residual", max_resid},
                 {"terminal_alpha_gap", terminal_gap},
                 {"lambda_initial", lambda0},
                 {"lambda_final", lambda1}};
    bool gated = false, ok = true;
    if (p.contains("max_residual")) {
        gated = true;
        ok = ok && max_resid <= get_num(p, "max_residual", path);
    }
    if (p.contains("max_terminal_alpha_gap")) {
        gated = true;
        ok = ok && terminal_gap <= get_num(p, "max_terminal_alpha_gap", path);
    }
    if (p.contains("max_lambda_ratio")) {
        gated = true;
        ok = ok && lambda1 <= get_num(p, "max_lambda_ratio", path) * lambda0;
    }
    if (gated) r.pass = ok;
    return r;
}

AnalysisOutcome run_support_timeline(const Json& p, const std::string& path,
                                     const Trajectory& tr) {
    check_keys(p, path, {"type"});
    const auto timeline = support_timeline(tr);
    Json arr = Json::array();
    const size_t cap = 200;
    for (size_t i = 0; i < timeline.size() && i < cap; ++i)
        arr.push_back(Json{{"t", timeline[i].first}, {"support", timeline[i].second}});
    AnalysisOutcome r;
    r.out = Json{{"type", "support_timeline"},
                 {"entries", arr},
                 {"count", timeline.size()},
                 {"truncated", timeline.size() > cap}};
    return r;
}

AnalysisOutcome run_direction_vs_oracle(const Json& p, const std::string& path,
                                        const Dataset& data, const Flow& flow,
                                        const Trajectory& tr) {
    check_keys(p, path, {"type", "target", "max_angle"});
    Json target_spec = p.contains("target") ? p.at("target") : Json("oracle");
    AnalysisOutcome r;
    r.out = Json{{"type", "direction_vs_oracle"}};
    Vector target;
    if (target_spec.is_string() && target_spec.get<std::string>() == "oracle") {
        const oracle::MaxMarginSolution sol = oracle::hard_margin_direction(data);
        target = sol.direction;
        r.out["oracle_margin"] = sol.margin;
        r.out["oracle_support"] = sol.support;
    } else {
        target = resolve_target(target_spec, data);
    }
    const double angle = direction_angle(flow.direction(tr.final_state), target);
    r.out["angle"] = angle;
    if (p.contains("max_angle")) r.pass = angle <= get_num(p, "max_angle", path);
    return r;
}

AnalysisOutcome run_one_analysis(const AnalysisSpec& spec, const std::string& path,
                                 const ExperimentConfig& cfg, const Dataset& data,
                                 const Flow& flow, const Trajectory& tr) {
    if (spec.type == "rate_fit") return run_rate_fit(spec.params, path, data, flow, tr);
    if (spec.type == "equilibrium_1d") return run_equilibrium_1d(spec.params, path, cfg, flow, tr);
    if (spec.type == "norm_balance") return run_norm_balance(spec.params, path, tr);
    if (spec.type == "margin_monotone") return run_margin_monotone(spec.params, path, tr);
    if (spec.type == "stationarity_final") return run_stationarity_final(spec.params, path, tr);
    if (spec.type == "hessian_min_eig")
        return run_hessian_min_eig(spec.params, path, data, flow, tr);
    if (spec.type == "rho_reference") return run_rho_reference(spec.params, path, flow, tr);
    if (spec.type == "rho_log_ratio") return run_rho_log_ratio(spec.params, path, tr);
    if (spec.type == "norm_correction")
        return run_norm_correction(spec.params, path, flow, tr, cfg.policy.h);
    if (spec.type == "support_timeline") return run_support_timeline(spec.params, path, tr);
    if (spec.type == "direction_vs_oracle")
        return run_direction_vs_oracle(spec.params, path, data, flow, tr);
    throw ConfigError(path + ".type: unknown analysis: " + spec.type);
}

Json event_to_json(const Event& e) {
    Json j{{"kind", to_string(e.kind)}, {"step", e.step}, {"t", e.t}, {"margin", e.margin}};
    if (e.kind == EventKind::SupportSetChange) j["support"] = e.support;
    return j;
}

}  // namespace

RunResult run_experiment(const ExperimentConfig& cfg) {
    RunResult result;
    result.config = cfg;
    result.dataset = make_dataset(cfg.data);

    const std::uint64_t model_seed = cfg.model.seed.value_or(cfg.seed);
    const NetworkParams net =
        init_network(cfg.model.dims, model_seed, cfg.model.init_scale, cfg.model.init_scheme);
    std::unique_ptr<Flow> flow = make_flow(cfg.flow, result.dataset, cfg.model.dims);
    const Vector s0 = flow->pack(net);
    result.trajectory = integrate(*flow, s0, cfg.policy);
    const Trajectory& tr = result.trajectory;

    Json summary;
    summary["name"] = cfg.name;
    summary["seed"] = cfg.seed;
    summary["flow"] = to_string(cfg.flow.tag);
    summary["scheme"] = to_string(cfg.policy.scheme);
    summary["stop_reason"] = to_string(tr.stop_reason);
    if (!tr.stop_detail.empty()) summary["stop_detail"] = tr.stop_detail;
    summary["steps"] = tr.steps_taken;
    summary["records"] = tr.records();
    summary["t_final"] = tr.t_final;
    summary["t_onset"] = tr.t_onset ? Json(*tr.t_onset) : Json(nullptr);
    summary["t_dominance"] = tr.t_dominance ? Json(*tr.t_dominance) : Json(nullptr);
    if (cfg.flow.machine_rho) summary["resolved_rho"] = flow->kind().rho;

    Json fin;
    fin["log_loss"] = tr.log_loss.back();
    fin["loss"] = std::exp(tr.log_loss.back());
    fin["margin"] = tr.margin.back();
    fin["rho"] = std::vector<double>(tr.rho.back().data(),
                                     tr.rho.back().data() + tr.rho.back().size());
    fin["stationarity"] = tr.stationarity.back();
    fin["support"] = tr.support.back();
    summary["final"] = fin;

    Json events = Json::array();
    const size_t event_cap = 1000;
    for (size_t i = 0; i < tr.events.size() && i < event_cap; ++i)
        events.push_back(event_to_json(tr.events[i]));
    summary["events"] = events;
    summary["events_truncated"] = tr.events.size() > event_cap;

    Json analyses = Json::array();
    bool all_pass = true;
    for (size_t i = 0; i < cfg.analyses.size(); ++i) {
        const std::string path = "config.analyses[" + std::to_string(i) + "]";
        try {
            AnalysisOutcome outcome =
                run_one_analysis(cfg.analyses[i], path, cfg, result.dataset, *flow, tr);
            if (outcome.pass) {
                outcome.out["pass"] = *outcome.pass;
                all_pass = all_pass && *outcome.pass;
            }
            if (outcome.file) result.extra_files.push_back(std::move(*outcome.file));
            analyses.push_back(outcome.out);
        } catch (const Error& e) {
            analyses.push_back(
                Json{{"type", cfg.analyses[i].type}, {"error", e.what()}, {"pass", false}});
            all_pass = false;
        }
    }
    summary["analyses"] = analyses;
    summary["pass"] = all_pass;

    result.summary = summary;
    result.passed = all_pass;
    return result;
}

std::string output_root() {
    const char* env = std::getenv("MARGINFLOW_OUT");
    if (env && *env) return env;
    return ".";
}

void write_outputs(const RunResult& r, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    const int depth = static_cast<int>(r.config.model.dims.size()) - 1;
    {
        std::ofstream os(fs::path(dir) / r.config.outputs.series_csv);
        if (!os) throw Error("cannot write series CSV in " + dir);
        write_series_csv(r.trajectory, depth, os);
    }
    {
        std::ofstream os(fs::path(dir) / r.config.outputs.summary_json);
        if (!os) throw Error("cannot write summary JSON in " + dir);
        os << r.summary.dump(2) << '\n';
    }
    if (r.config.outputs.dataset_csv)
        write_dataset_csv(r.dataset, (fs::path(dir) / *r.config.outputs.dataset_csv).string());
    for (const auto& [name, body] : r.extra_files) {
        std::ofstream os(fs::path(dir) / name);
        if (!os) throw Error("cannot write " + name + " in " + dir);
        os << body;
    }
}

// --- verify suites ----------------------------------------------------------------

namespace {

struct Checker {
    std::ostream& os;
    bool all = true;
    void check(const std::string& name, bool ok) {
        os << (ok ? "[PASS] " : "[FAIL] ") << name << "\n";
        all = all && ok;
    }
};

std::vector<int> random_dims(Rng& rng, int max_depth, int max_width) {
    const int depth = 1 + static_cast<int>(rng.uniform01() * max_depth) % max_depth;
    std::vector<int> dims;
    dims.push_back(2 + static_cast<int>(rng.uniform01() * 3));
    for (int k = 1; k < depth; ++k) dims.push_back(1 + static_cast<int>(rng.uniform01() * max_width));
    dims.push_back(1);
    return dims;
}

bool suite_structural(Checker& c) {
    Rng rng(20240811);
    double worst_identity = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const std::vector<int> dims = random_dims(rng, 4, 6);
        const NetworkParams p = init_network(dims, 100 + trial, 1.0, InitScheme::Gaussian);
        Vector x(dims.front());
        for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = rng.gaussian();
        const double f = forward(p, x);
        const double res = structural_residual(p, x).maxCoeff() / (1.0 + std::abs(f));
        worst_identity = std::max(worst_identity, res);
    }
    c.check("per-layer weight/gradient inner products reproduce the output (100 nets)",
            worst_identity < 1e-10);

    double worst_fd = 0.0;
    int done = 0;
    for (int trial = 0; trial < 200 && done < 15; ++trial) {
        const std::vector<int> dims = random_dims(rng, 3, 5);
        const NetworkParams p = init_network(dims, 900 + trial, 1.0, InitScheme::Gaussian);
        Vector x(dims.front());
        for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = rng.gaussian();
        try {
            const std::vector<Matrix> fd = oracle::fd_gradient(p, x);
            const std::vector<Matrix> an = grad_weights(p, x);
            double num = 0.0, den = 0.0;
            for (size_t k = 0; k < fd.size(); ++k) {
                num = std::max(num, (fd[k] - an[k]).norm());
                den = std::max(den, fd[k].norm());
            }
            worst_fd = std::max(worst_fd, num / (1.0 + den));
            ++done;
        } catch (const KinkError&) {
            continue;
        }
    }
    c.check("reverse-mode gradients match central differences (15 nets)",
            done == 15 && worst_fd < 1e-6);

    NetworkParams lin;
    lin.w = {Matrix(1, 2)};
    lin.w[0] << 1.0, 2.0;
    Vector x1(2);
    x1 << 3.0, -1.0;
    c.check("linear forward example", std::abs(forward(lin, x1) - 1.0) < 1e-15);

    NetworkParams two;
    two.w = {Matrix(2, 2), Matrix(1, 2)};
    two.w[0] << 1.0, 0.0, 0.0, 1.0;
    two.w[1] << 1.0, 1.0;
    Vector x2(2);
    x2 << 2.0, -3.0;
    c.check("depth-2 forward example (one active unit)",
            std::abs(forward(two, x2) - 2.0) < 1e-15);
    const std::vector<Matrix> g2 = grad_weights(two, x2);
    c.check("inactive unit contributes no first-layer gradient",
            g2[0].row(1).norm() == 0.0 && std::abs(g2[0](0, 0) - 2.0) < 1e-15);

    const NetworkParams p3 = init_network({3, 4, 1}, 7, 1.7, InitScheme::Gaussian);
    const NormalizedParams q3 = decompose(p3);
    const NetworkParams back = compose(q3);
    double rt = 0.0;
    for (int k = 0; k < p3.depth(); ++k) rt = std::max(rt, (back.w[k] - p3.w[k]).norm());
    c.check("polar decompose/compose round trip", rt < 1e-14);
    return c.all;
}

bool suite_projector(Checker& c) {
    Rng rng(5150);
    double worst_orth = 0.0, worst_idem = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        Vector v(5), g(5);
        for (int i = 0; i < 5; ++i) {
            v(i) = rng.gaussian();
            g(i) = rng.gaussian();
        }
        const SphereProjector s{v};
        const Vector h = s.apply(g);
        worst_orth = std::max(worst_orth, std::abs(v.dot(h)) / (v.norm() * g.norm()));
        worst_idem = std::max(worst_idem, (s.apply(h) - h).norm() / (1.0 + h.norm()));
    }
    c.check("sphere projector is orthogonal to the base point and idempotent",
            worst_orth < 1e-12 && worst_idem < 1e-12);

    Vector u(3), g(3);
    u << 0.5, -0.3, 0.8;
    g << 1.0, 2.0, -1.0;
    const Vector nu1 = u.array().sign().matrix();
    c.check("L1 tangent projection is orthogonal to the sign normal",
            std::abs(nu1.dot(tangent_project(u, g, 1.0))) < 1e-12);
    c.check("L2 tangent projection matches the sphere projector",
            (tangent_project(u, g, 2.0) - SphereProjector{u}.apply(g)).norm() < 1e-14);
    const Vector hinf = tangent_project(u, g, std::numeric_limits<double>::infinity());
    c.check("Linf tangent projection zeroes the max coordinate", std::abs(hinf(2)) < 1e-15);
    bool kink1 = false, kinkinf = false;
    try {
        Vector uz(3);
        uz << 0.5, 0.0, 0.8;
        tangent_project(uz, g, 1.0);
    } catch (const KinkError&) {
        kink1 = true;
    }
    try {
        Vector ut(2);
        ut << 0.7, 0.7;
        tangent_project(ut, g.head(2), std::numeric_limits<double>::infinity());
    } catch (const KinkError&) {
        kinkinf = true;
    }
    c.check("corner states raise kink errors (L1 zero coordinate, Linf tie)", kink1 && kinkinf);

    double worst_alpha = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        Vector v(4), step(4);
        for (int i = 0; i < 4; ++i) {
            v(i) = rng.gaussian();
            step(i) = 0.05 * rng.gaussian();
        }
        v /= v.norm();
        const double a = lagrange_alpha(v, step);
        worst_alpha = std::max(worst_alpha, std::abs((a * v + step).norm() - 1.0));
    }
    c.check("norm-preserving multiplier holds the unit sphere (50 cases)", worst_alpha < 1e-14);
    bool too_large = false;
    try {
        Vector v(2), step(2);
        v << 1.0, 0.0;
        step << 0.0, 2.0;
        lagrange_alpha(v, step);
    } catch (const StepTooLargeError&) {
        too_large = true;
    }
    c.check("oversized steps are rejected", too_large);

    Vector z(7);
    for (int i = 0; i < 7; ++i) z(i) = rng.gaussian();
    const double nn = static_cast<double>(z.size());
    const Matrix j0 = bn_jacobian(z, 0.0);
    const Matrix bracket = j0 * (z.norm() / std::sqrt(nn));
    const Matrix splain = Matrix::Identity(7, 7) - z * z.transpose() / z.squaredNorm();
    c.check("normalizer backward map equals the unit-sphere projector at eps = 0",
            (bracket - splain).norm() < 1e-12);
    const BnBatch bb = bn_normalize(z, 0.0);
    c.check("normalized batch is annihilated by the backward map",
            (j0 * bb.xhat).norm() < 1e-10);
    bool degenerate = false;
    try {
        bn_normalize(Vector::Zero(4), 0.0);
    } catch (const DegenerateError&) {
        degenerate = true;
    }
    c.check("vanishing batch second moment is rejected", degenerate);
    return c.all;
}

bool suite_equivalence(Checker& c) {
    DataSpec ds;
    ds.source = "gaussian-blobs";
    ds.d = 3;
    ds.n = 12;
    ds.gap = 1.0;
    ds.seed = 77;
    const Dataset data = make_dataset(ds);
    const std::vector<int> dims = {3, 5, 1};
    const NetworkParams net = init_network(dims, 41, 1.3, InitScheme::Gaussian);

    FlowKind kwn{};
    kwn.tag = FlowKindTag::WeightNorm;
    FlowKind kfl{};
    kfl.tag = FlowKindTag::FullLagrange;
    auto fwn = make_flow(kwn, data, dims);
    auto ffl = make_flow(kfl, data, dims);
    const Vector swn = fwn->pack(net);
    const Vector sfl = ffl->pack(net);
    Vector dwn(fwn->dim()), dfl(ffl->dim());
    double ls = 0.0;
    fwn->derivative(0.0, 0.0, swn, dwn, &ls);
    ffl->derivative(0.0, 0.0, sfl, dfl, &ls);
    c.check("gain/carrier field equals the coupled polar field at unit carriers",
            (dwn - dfl).norm() / (1.0 + dfl.norm()) < 1e-12);

    FlowKind kc{};
    kc.tag = FlowKindTag::ConstrainedFixedRho;
    const NormalizedParams polar = decompose(net);
    kc.rho = polar.rho_product();
    FlowKind kr{};
    kr.tag = FlowKindTag::Reparameterized;
    auto fc = make_flow(kc, data, dims);
    auto fr = make_flow(kr, data, dims);
    // Equal per-layer norms so the fixed-scale flow sees the same split.
    NetworkParams balanced;
    balanced.w.resize(net.depth());
    const double per = std::pow(polar.rho_product(), 1.0 / net.depth());
    for (int k = 0; k < net.depth(); ++k) balanced.w[k] = per * polar.dir[k];
    const Vector sc = fc->pack(balanced);
    const Vector sr = fr->pack(balanced);
    Vector dc(fc->dim()), dr(fr->dim());
    fc->derivative(0.0, 0.0, sc, dc, &ls);
    fr->derivative(0.0, 0.0, sr, dr, &ls);
    double worst = 0.0;
    Eigen::Index off = 0;
    const int depth = net.depth();
    for (int k = 0; k < depth; ++k) {
        const Eigen::Index sz = net.w[k].size();
        const Vector block_c = dc.segment(off, sz);
        const Vector block_r = dr.segment(depth + off, sz);
        worst = std::max(worst,
                         (block_c - per * per * block_r).norm() / (1.0 + block_c.norm()));
        off += sz;
    }
    c.check("projected fixed-scale field equals rho_k^2 times the polar direction field",
            worst < 1e-12);

    DataSpec ds1 = ds;
    ds1.d = 4;
    ds1.seed = 99;
    const Dataset data1 = make_dataset(ds1);
    const std::vector<int> dims1 = {4, 1};
    const NetworkParams net1 = init_network(dims1, 5, 0.9, InitScheme::Gaussian);
    FlowKind ka{};
    ka.tag = FlowKindTag::RescaledAlpha;
    ka.schedule = AlphaSchedule::One;
    FlowKind kr1{};
    kr1.tag = FlowKindTag::Reparameterized;
    auto fa = make_flow(ka, data1, dims1);
    auto fr1 = make_flow(kr1, data1, dims1);
    const Vector sa = fa->pack(net1);
    const Vector sr1 = fr1->pack(net1);
    Vector da(fa->dim()), dr1(fr1->dim());
    fa->derivative(0.0, 2.0, sa, da, &ls);
    fr1->derivative(0.0, 2.0, sr1, dr1, &ls);
    c.check("unit-schedule rescaled field equals the polar field for one layer",
            (da - dr1).norm() / (1.0 + dr1.norm()) < 1e-12);

    // Trajectory-level agreement of the two formulations.
    StepPolicy pol;
    pol.scheme = Scheme::RK4;
    pol.h = 1e-2;
    pol.stop_time = std::numeric_limits<double>::infinity();
    pol.max_steps = 1000;  // 10 time units
    pol.record_every = 1000;
    const Trajectory twn = integrate(*fwn, swn, pol);
    const Trajectory tfl = integrate(*ffl, sfl, pol);
    const int depth2 = static_cast<int>(dims.size()) - 1;
    const Eigen::Index nd = fwn->dim() - depth2;
    double traj_gap = (twn.final_state.tail(nd) - tfl.final_state.tail(nd))
                          .lpNorm<Eigen::Infinity>();
    c.check("ten-unit trajectories of the two formulations agree on all carrier entries",
            twn.steps_taken == 1000 && tfl.steps_taken == 1000 && traj_gap < 1e-6);
    return c.all;
}

bool suite_rates(Checker& c) {
    std::vector<double> t;
    for (int i = 0; i < 200; ++i) t.push_back(std::pow(10.0, 1.0 + 5.0 * i / 199.0));

    auto synth = [&](auto fn) {
        std::vector<double> v;
        for (double ti : t) v.push_back(fn(ti));
        return v;
    };

    const RateFit f1 =
        fit_rate(t, synth([](double ti) { return 0.3 * std::log(ti) + 2.0; }), RateFamily::CLogT);
    c.check("log-linear growth recovered",
            std::abs(f1.a - 0.3) < 1e-9 && std::abs(f1.c - 2.0) < 1e-9 && f1.r2 > 1.0 - 1e-12);

    const RateFit f2 = fit_rate(t, synth([](double ti) { return 5.0 / std::log(ti) + 0.1; }),
                                RateFamily::AOverLogT);
    c.check("inverse-log decay recovered",
            std::abs(f2.a - 5.0) < 1e-9 && std::abs(f2.c - 0.1) < 1e-9 && f2.r2 > 1.0 - 1e-12);

    const RateFit f3 = fit_rate(
        t, synth([](double ti) { return 2.0 * std::exp(-0.05 * std::log(ti) * std::log(ti)); }),
        RateFamily::PowNegBLogT);
    c.check("log-quadratic power decay recovered",
            std::abs(f3.b - 0.05) < 1e-9 && std::abs(f3.a - 2.0) < 1e-8 && f3.r2 > 1.0 - 1e-12);

    const RateFit f4 =
        fit_rate(t, synth([](double ti) { return 3.0 * std::pow(ti, -1.2); }), RateFamily::PowNegC);
    c.check("plain power decay recovered",
            std::abs(f4.c - 1.2) < 1e-9 && std::abs(f4.a - 3.0) < 1e-8 && f4.r2 > 1.0 - 1e-12);

    bool few = false, narrow = false;
    try {
        fit_rate({10, 20, 30}, {1, 2, 3}, RateFamily::CLogT);
    } catch (const InsufficientDataError&) {
        few = true;
    }
    try {
        std::vector<double> tn, vn;
        for (int i = 0; i < 20; ++i) {
            tn.push_back(10.0 + i);
            vn.push_back(1.0 / std::log(tn.back()));
        }
        fit_rate(tn, vn, RateFamily::AOverLogT);
    } catch (const InsufficientDataError&) {
        narrow = true;
    }
    c.check("starved and narrow-window fits are rejected", few && narrow);

    // Fitted-rate comparison of plain descent vs the gain/carrier flow on the
    // one-example linear task. Plain descent turns toward the example like
    // a / log t; the gain/carrier flow decays faster than any power of log t.
    Dataset one;
    one.x = Matrix(1, 2);
    one.x << 0.8, 0.6;
    one.y = Vector::Ones(1);
    const std::vector<int> dims = {2, 1};
    const NetworkParams w0 = init_network(dims, 3, 1.0, InitScheme::Gaussian);
    const Vector target = one.x.row(0).transpose().normalized();

    StepPolicy pol;
    pol.scheme = Scheme::Euler;
    pol.h = 1e-3;
    pol.stop_time = 1e9;
    pol.max_steps = 2000000;
    pol.record_every = 20;
    pol.record_states_every = 20;

    FlowKind kgd{};
    kgd.tag = FlowKindTag::Unconstrained;
    kgd.log_shift = true;
    auto fgd = make_flow(kgd, one, dims);
    const Trajectory tgd = integrate(*fgd, fgd->pack(w0), pol);
    auto [tg, eg] = direction_error_series(*fgd, tgd, target);

    FlowKind kwn2{};
    kwn2.tag = FlowKindTag::WeightNorm;
    kwn2.log_shift = true;
    auto fwn2 = make_flow(kwn2, one, dims);
    const Trajectory twn2 = integrate(*fwn2, fwn2->pack(w0), pol);
    auto [tw, ew] = direction_error_series(*fwn2, twn2, target);

    bool gd_ok = false, wn_ok = false, sep_ok = false;
    try {
        const RateFit gd_fit = fit_rate(tg, eg, RateFamily::AOverLogT);
        gd_ok = gd_fit.r2 > 0.9 && gd_fit.a > 0.0;
        const RateFit wn_pow = fit_rate(tw, ew, RateFamily::PowNegBLogT);
        const RateFit wn_log = fit_rate(tw, ew, RateFamily::AOverLogT);
        wn_ok = wn_pow.r2 > 0.8 && wn_pow.b > 0.0;
        sep_ok = wn_pow.r2 > wn_log.r2 && ew.back() < eg.back();
    } catch (const Error&) {
    }
    c.check("plain descent turns like a/log t on the one-example task", gd_ok);
    c.check("gain/carrier error fits the faster log-quadratic family", wn_ok);
    c.check("gain/carrier flow outruns plain descent in direction error", sep_ok);
    return c.all;
}

}  // namespace

bool verify_suite(const std::string& suite, std::ostream& os) {
    Checker c{os};
    bool known = false;
    if (suite == "structural" || suite == "all") {
        known = true;
        suite_structural(c);
    }
    if (suite == "projector" || suite == "all") {
        known = true;
        suite_projector(c);
    }
    if (suite == "equivalence" || suite == "all") {
        known = true;
        suite_equivalence(c);
    }
    if (suite == "rates" || suite == "all") {
        known = true;
        suite_rates(c);
    }
    if (!known) throw ConfigError("unknown suite: " + suite +
                                  " (use structural, projector, equivalence, rates, or all)");
    return c.all;
}

// --- series comparison ------------------------------------------------------------

namespace {

struct SeriesTable {
    std::vector<std::string> cols;
    std::vector<std::vector<double>> rows;  // numeric cells; support_set skipped
};

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += ch;
        }
    }
    out.push_back(cur);
    return out;
}

SeriesTable read_series_table(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path);
    SeriesTable t;
    std::string line;
    if (!std::getline(in, line)) throw ParseError(path + ": empty file");
    t.cols = split_csv_line(line);
    size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const std::vector<std::string> cells = split_csv_line(line);
        if (cells.size() != t.cols.size())
            throw ParseError(path + ":" + std::to_string(lineno) + ": ragged row");
        std::vector<double> row;
        for (size_t i = 0; i < cells.size(); ++i) {
            if (t.cols[i] == "support_set") {
                row.push_back(0.0);
                continue;
            }
            try {
                row.push_back(std::stod(cells[i]));
            } catch (const std::exception&) {
                throw ParseError(path + ":" + std::to_string(lineno) + ": bad number in column " +
                                 t.cols[i]);
            }
        }
        t.rows.push_back(std::move(row));
    }
    if (t.rows.empty()) throw ParseError(path + ": no data rows");
    return t;
}

size_t column_index(const SeriesTable& t, const std::string& name, const std::string& path) {
    for (size_t i = 0; i < t.cols.size(); ++i)
        if (t.cols[i] == name) return i;
    throw ConfigError(path + ": no column named " + name);
}

}  // namespace

CompareResult compare_series(const std::string& path_a, const std::string& path_b,
                             const std::string& metric) {
    if (metric == "support_set" || metric == "t")
        throw ConfigError("metric must be a numeric value column");
    const SeriesTable a = read_series_table(path_a);
    const SeriesTable b = read_series_table(path_b);
    const size_t ca = column_index(a, metric, path_a);
    const size_t cb = column_index(b, metric, path_b);
    const size_t ta = column_index(a, "t", path_a);
    const size_t tb = column_index(b, "t", path_b);

    const double lo = std::max(a.rows.front()[ta], b.rows.front()[tb]);
    const double hi = std::min(a.rows.back()[ta], b.rows.back()[tb]);
    if (!(lo <= hi)) throw DomainError("series do not overlap in time");

    CompareResult r;
    double sq = 0.0;
    size_t bi = 0;
    for (const std::vector<double>& row : a.rows) {
        const double t = row[ta];
        if (t < lo || t > hi) continue;
        while (bi + 1 < b.rows.size() && b.rows[bi + 1][tb] <= t) ++bi;
        double vb;
        if (bi + 1 >= b.rows.size()) {
            vb = b.rows[bi][cb];
        } else {
            const double t0 = b.rows[bi][tb], t1 = b.rows[bi + 1][tb];
            const double v0 = b.rows[bi][cb], v1 = b.rows[bi + 1][cb];
            vb = t1 > t0 ? v0 + (v1 - v0) * (t - t0) / (t1 - t0) : v0;
        }
        const double d = std::abs(row[ca] - vb);
        r.max_abs = std::max(r.max_abs, d);
        sq += d * d;
        ++r.points;
    }
    if (r.points == 0) throw DomainError("no comparable records in the overlap window");
    r.rms = std::sqrt(sq / static_cast<double>(r.points));
    return r;
}

RunComparison compare_runs(const ExperimentConfig& a, const ExperimentConfig& b,
                           const std::string& metric) {
    if (metric == "t" || metric == "support_set")
        throw ConfigError("metric must be a numeric value column");
    const RunResult ra = run_experiment(a);
    const RunResult rb = run_experiment(b);
    if (a.model.dims != b.model.dims)
        throw ShapeError("runs are not comparable: layer dims differ");
    if (ra.dataset.x.rows() != rb.dataset.x.rows() ||
        ra.dataset.x.cols() != rb.dataset.x.cols() ||
        (ra.dataset.x - rb.dataset.x).norm() != 0.0 ||
        (ra.dataset.y - rb.dataset.y).norm() != 0.0)
        throw ShapeError("runs are not comparable: datasets differ");

    const std::vector<double>& ta = ra.trajectory.t;
    const std::vector<double>& tb = rb.trajectory.t;
    const std::vector<double> va = series_of(metric, ra.trajectory);
    const std::vector<double> vb = series_of(metric, rb.trajectory);
    const double lo = std::max(ta.front(), tb.front());
    const double hi = std::min(ta.back(), tb.back());
    if (!(lo <= hi)) throw DomainError("runs do not overlap in time");

    RunComparison out;
    double sq = 0.0;
    size_t bi = 0;
    for (size_t i = 0; i < ta.size(); ++i) {
        const double t = ta[i];
        if (t < lo || t > hi) continue;
        while (bi + 1 < tb.size() && tb[bi + 1] <= t) ++bi;
        double v;
        if (bi + 1 >= tb.size()) {
            v = vb[bi];
        } else {
            const double t0 = tb[bi], t1 = tb[bi + 1];
            v = t1 > t0 ? vb[bi] + (vb[bi + 1] - vb[bi]) * (t - t0) / (t1 - t0) : vb[bi];
        }
        out.t.push_back(t);
        out.va.push_back(va[i]);
        out.vb.push_back(v);
        const double d = std::abs(va[i] - v);
        out.max_abs = std::max(out.max_abs, d);
        sq += d * d;
    }
    if (out.t.empty()) throw DomainError("no comparable records in the overlap window");
    out.rms = std::sqrt(sq / static_cast<double>(out.t.size()));
    return out;
}

// --- summary validation -----------------------------------------------------------

std::vector<std::string> validate_summary(const Json& j) {
    std::vector<std::string> problems;
    auto expect = [&](const char* key, bool (Json::*pred)() const, const char* what) {
        if (!j.contains(key) || !(j.at(key).*pred)())
            problems.push_back(std::string(key) + " must be " + what);
    };
    expect("name", &Json::is_string, "a string");
    expect("seed", &Json::is_number, "a number");
    expect("stop_reason", &Json::is_string, "a string");
    expect("steps", &Json::is_number, "a number");
    expect("records", &Json::is_number, "a number");
    expect("t_final", &Json::is_number, "a number");
    if (!j.contains("final") || !j.at("final").is_object()) {
        problems.push_back("final must be an object");
    } else {
        const Json& f = j.at("final");
        for (const char* k : {"log_loss", "margin", "stationarity"})
            if (!f.contains(k) || !f.at(k).is_number())
                problems.push_back(std::string("final.") + k + " must be a number");
        if (!f.contains("rho") || !f.at("rho").is_array())
            problems.push_back("final.rho must be an array");
        if (!f.contains("support") || !f.at("support").is_array())
            problems.push_back("final.support must be an array");
    }
    if (!j.contains("events") || !j.at("events").is_array())
        problems.push_back("events must be an array");
    if (!j.contains("analyses") || !j.at("analyses").is_array())
        problems.push_back("analyses must be an array");
    if (!j.contains("pass") || !j.at("pass").is_boolean())
        problems.push_back("pass must be a boolean");
    return problems;
}

}  // namespace mf

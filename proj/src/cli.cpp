#include "flatbill/cli.hpp"

#include <openssl/evp.h>

#include <CLI11.hpp>
#include <array>
#include <charconv>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include "flatbill/cells.hpp"
#include "flatbill/config_io.hpp"
#include "flatbill/error.hpp"
#include "flatbill/jacobi.hpp"
#include "flatbill/map_checks.hpp"
#include "flatbill/statistics.hpp"

namespace flatbill::cli {

using nlohmann::json;

namespace {

// Command failed validation after parsing (bad parameter value and the like).
struct InvalidInput : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string num(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    std::array<char, 32> buf{};
    auto [p, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    return std::string(buf.data(), p);
}
std::string num(std::int64_t v) { return std::to_string(v); }
std::string num(int v) { return std::to_string(v); }

// CSV with a leading schema_version column.
class Csv {
public:
    explicit Csv(std::initializer_list<std::string> cols) {
        s_ << "schema_version";
        for (const auto& c : cols) s_ << ',' << c;
        s_ << '\n';
    }
    template <class... T>
    void row(const T&... v) {
        s_ << kSchemaVersion;
        ((s_ << ',' << cell(v)), ...);
        s_ << '\n';
    }
    std::string str() const { return s_.str(); }

private:
    static std::string cell(const std::string& v) { return v; }
    static std::string cell(const char* v) { return v; }
    static std::string cell(double v) { return num(v); }
    static std::string cell(std::int64_t v) { return num(v); }
    static std::string cell(int v) { return num(v); }
    static std::string cell(bool v) { return v ? "1" : "0"; }
    std::ostringstream s_;
};

json fit_json(const LineFit& f) {
    return {{"slope", f.slope},
            {"slope_se", f.slope_se},
            {"ci", {f.slope - f.ci_halfwidth(), f.slope + f.ci_halfwidth()}},
            {"intercept", f.intercept},
            {"points", f.points},
            {"window", {f.x_lo, f.x_hi}}};
}

// Parameters of one command: defaults merged with the user's "params" object.
class Params {
public:
    Params(json defaults, const json& given) : j_(std::move(defaults)) {
        if (given.is_null()) return;
        if (!given.is_object()) throw Error(ErrorKind::InvalidConfig, "'params' must be an object");
        for (auto it = given.begin(); it != given.end(); ++it) {
            if (!j_.contains(it.key()))
                throw Error(ErrorKind::InvalidConfig, "unknown key 'params." + it.key() + "'");
            j_[it.key()] = it.value();
        }
    }
    const json& all() const { return j_; }
    std::int64_t integer(const std::string& k, std::int64_t lo = 0) const {
        const json& v = j_.at(k);
        if (!v.is_number()) bad(k, "a number");
        const double d = v.get<double>();
        if (d != std::floor(d) || d < static_cast<double>(lo) || d > 9.0e18) bad(k, "an integer >= " + std::to_string(lo));
        return static_cast<std::int64_t>(d);
    }
    double real(const std::string& k) const {
        const json& v = j_.at(k);
        if (!v.is_number()) bad(k, "a number");
        return v.get<double>();
    }
    double positive(const std::string& k) const {
        const double v = real(k);
        if (!(v > 0.0)) bad(k, "positive");
        return v;
    }
    bool flag(const std::string& k) const {
        const json& v = j_.at(k);
        if (!v.is_boolean()) bad(k, "true or false");
        return v.get<bool>();
    }
    std::string text(const std::string& k) const {
        const json& v = j_.at(k);
        if (!v.is_string()) bad(k, "a string");
        return v.get<std::string>();
    }
    std::vector<std::int64_t> integers(const std::string& k) const {
        const json& v = j_.at(k);
        if (!v.is_array() || v.empty()) bad(k, "a non-empty list of integers");
        std::vector<std::int64_t> out;
        for (const auto& e : v) {
            if (!e.is_number() || e.get<double>() != std::floor(e.get<double>()) || e.get<double>() < 1)
                bad(k, "a non-empty list of positive integers");
            out.push_back(static_cast<std::int64_t>(e.get<double>()));
        }
        return out;
    }
    std::vector<double> reals(const std::string& k) const {
        const json& v = j_.at(k);
        if (!v.is_array() || v.empty()) bad(k, "a non-empty list of numbers");
        std::vector<double> out;
        for (const auto& e : v) {
            if (!e.is_number()) bad(k, "a non-empty list of numbers");
            out.push_back(e.get<double>());
        }
        return out;
    }

private:
    [[noreturn]] static void bad(const std::string& k, const std::string& what) {
        throw Error(ErrorKind::InvalidConfig, "params." + k + " must be " + what);
    }
    json j_;
};

struct Context {
    Table table;
    EstimatorOptions est;
    Params params;
    std::function<void(const std::string&)> progress;
};

struct Output {
    std::map<std::string, std::string> files;  // name -> content
    json summary = json::object();
    bool failed = false;  // an identity check failed
};

void tail_summary(Output& o, const std::string& estimator, const TailEstimate& t) {
    o.summary["estimator"] = estimator;
    o.summary["fit_window"] = {t.fit_lo, t.fit_hi};
    o.summary["exponent"] = t.exponent();
    o.summary["ci"] = {t.exponent() - t.ci_halfwidth(), t.exponent() + t.ci_halfwidth()};
    o.summary["sample_count"] = t.sample_count;
    o.summary["censored_count"] = t.censored;
    o.summary["effective_samples"] = t.effective_samples;
}

void fit_summary(Output& o, const std::string& estimator, const LineFit& f, std::int64_t samples,
                 std::int64_t censored) {
    o.summary["estimator"] = estimator;
    o.summary["fit_window"] = {f.x_lo, f.x_hi};
    o.summary["exponent"] = f.slope;
    o.summary["ci"] = {f.slope - f.ci_halfwidth(), f.slope + f.ci_halfwidth()};
    o.summary["sample_count"] = samples;
    o.summary["censored_count"] = censored;
}

// ------------------------------------------------------------------ commands

Output cmd_table_info(Context& c) {
    const Table& t = c.table;
    const std::int64_t points = c.params.integer("points", 1);
    Csv csv({"r", "x", "y", "curvature"});
    for (std::int64_t i = 0; i < points; ++i) {
        const double r = t.perimeter() * static_cast<double>(i) / static_cast<double>(points);
        const auto b = t.boundary_at(r);
        csv.row(r, b.position.x, b.position.y, b.curvature);
    }
    Output o;
    o.files["boundary.csv"] = csv.str();
    const auto fl = t.flat_points();
    o.summary["estimator"] = "table";
    o.summary["perimeter"] = t.perimeter();
    o.summary["octant_length"] = t.octant_length();
    o.summary["profile_c"] = t.profile_c();
    o.summary["flat_points"] = {fl[0], fl[1], fl[2], fl[3]};
    o.summary["tau_min_torus"] = t.tau_min_torus();
    o.summary["tau_min_rect"] = t.tau_min_rect();
    return o;
}

Output cmd_orbit(Context& c) {
    const Table& t = c.table;
    const std::int64_t steps = c.params.integer("steps", 1);
    const std::string map = c.params.text("map");
    Mode mode = t.config().mode;
    if (map == "full") mode = Mode::Rectangle;
    else if (map == "scatterer") mode = Mode::Torus;
    else if (map != "auto") throw Error(ErrorKind::InvalidConfig, "params.map must be auto, full or scatterer");
    const std::int64_t budget = c.params.integer("failure_budget");

    Rng rng(c.est.seed);
    const Space space = mode == Mode::Rectangle ? Space::Full : Space::Scatterer;
    PhasePoint x = sample_mu(t, rng, space);
    if (!c.params.all().at("r").is_null()) x = {Component::Scatterer, t.reduce(c.params.real("r")), c.params.real("phi")};
    const PhasePoint start = x;

    Csv csv({"step", "component", "r", "phi", "tau", "cells_crossed", "tangential"});
    csv.row(std::int64_t{0}, to_string(x.component), x.r, x.phi, 0.0, std::int64_t{0}, false);
    std::int64_t failures = 0;
    for (std::int64_t i = 1; i <= steps; ++i) {
        try {
            const MapStep s = map_step(t, x, mode);
            x = s.x1;
            csv.row(i, to_string(x.component), x.r, x.phi, s.event.tau, s.event.cells_crossed, s.event.tangential);
        } catch (const Error& e) {
            if (++failures > budget) throw;
            c.progress(std::string("orbit restart after ") + e.what());
            x = sample_mu(t, rng, space);
            csv.row(i, to_string(x.component), x.r, x.phi, std::nan(""), std::int64_t{-1}, false);
        }
    }
    const LyapunovEstimate ly = lyapunov_estimate(t, start, steps, mode);
    Output o;
    o.files["orbit.csv"] = csv.str();
    o.summary["estimator"] = "lyapunov_exponent";
    o.summary["exponent"] = ly.exponent;
    o.summary["ci"] = {ly.exponent - 1.96 * ly.stderr_, ly.exponent + 1.96 * ly.stderr_};
    o.summary["sample_count"] = ly.steps;
    o.summary["censored_count"] = ly.skipped;
    o.summary["restarts"] = failures;
    return o;
}

Output cmd_map_check(Context& c) {
    const Table& t = c.table;
    const Mode mode = t.config().mode;
    const double det_tol = c.params.positive("det_tolerance");
    const double fd_tol = c.params.positive("fd_tolerance");
    const double rev_tol = c.params.positive("reversibility_tolerance");
    const double excl_tol = c.params.positive("cone_excluded_tolerance");
    c.progress("determinant and finite-difference checks");
    const auto d = determinant_check(t, mode, c.params.integer("det_samples", 1), c.est.seed,
                                     c.params.positive("fd_step"));
    c.progress("reversibility");
    const auto r = reversibility_check(t, mode, c.params.integer("reversibility_samples", 1), c.est.seed + 1);
    c.progress("cone transport");
    const auto k = cone_invariance_check(t, c.params.integer("cone_vectors", 1), c.est.seed + 2);

    Csv csv({"check", "mode", "samples", "skipped", "value", "tolerance", "pass"});
    const std::string m = to_string(mode);
    const bool det_ok = d.max_det_error < det_tol, fd_ok = d.max_fd_error < fd_tol;
    const bool rev_ok = r.max_error < rev_tol;
    const bool cone_ok = k.violations == 0 && k.excluded_fraction() < excl_tol;
    csv.row("determinant", m, d.samples, d.skipped, d.max_det_error, det_tol, det_ok);
    csv.row("finite_difference", m, d.samples - d.fd_skipped, d.fd_skipped, d.max_fd_error, fd_tol, fd_ok);
    csv.row("reversibility", m, r.samples, r.skipped, r.max_error, rev_tol, rev_ok);
    csv.row("cone_violations", to_string(Mode::Torus), k.vectors, k.excluded, static_cast<double>(k.violations), 0.0,
            k.violations == 0);
    csv.row("cone_excluded_fraction", to_string(Mode::Torus), k.vectors, k.excluded, k.excluded_fraction(), excl_tol,
            k.excluded_fraction() < excl_tol);
    Output o;
    o.files["map_check.csv"] = csv.str();
    o.summary["estimator"] = "identity_suite";
    o.summary["sample_count"] = d.samples + r.samples + k.vectors;
    o.summary["censored_count"] = d.skipped + r.skipped + k.excluded;
    o.summary["all_pass"] = det_ok && fd_ok && rev_ok && cone_ok;
    o.failed = !(det_ok && fd_ok && rev_ok && cone_ok);
    return o;
}

Output cmd_cells(Context& c) {
    const Table& t = c.table;
    const std::string how = c.params.text("sampling");
    if (how != "direct" && how != "tangential")
        throw Error(ErrorKind::InvalidConfig, "params.sampling must be direct or tangential");
    c.progress("cell measure profile");
    const CellProfile p = cell_measure_profile(t, c.params.integer("n_max", 2), c.params.integer("samples", 1),
                                               c.est, how == "direct" ? CellSampling::Direct : CellSampling::Tangential,
                                               c.params.integer("fit_lo", 1));
    Csv prof({"n", "mu", "stderr", "wilson_lo", "wilson_hi", "hits"});
    for (std::size_t i = 0; i < p.n.size(); ++i)
        prof.row(p.n[i], p.mu[i], p.stderr_[i], p.wilson_lo[i], p.wilson_hi[i], p.hits[i]);

    c.progress("singularity curves");
    Csv tr({"curve", "n", "r", "phi", "theta", "ok"});
    for (const auto& q : trace_singularity_s_prime(t, c.params.reals("s_prime_r")))
        tr.row("s_prime", std::int64_t{0}, q.r, q.phi, q.theta, q.ok);
    const auto rs = c.params.reals("s_n_r");
    for (const std::int64_t n : c.params.integers("s_n")) {
        for (const auto& q : trace_singularity_s_n(t, n, rs)) tr.row("s_n", n, q.r, q.phi, q.theta, q.ok);
    }
    Output o;
    o.files["cell_profile.csv"] = prof.str();
    o.files["singularity_curves.csv"] = tr.str();
    fit_summary(o, "cell_measure_density", p.density_fit, p.sample_count, p.overflow);
    o.summary["fit_window"] = {p.fit_lo, p.fit_hi};
    o.summary["effective_samples"] = p.effective_samples;
    o.summary["survival_fit"] = fit_json(p.survival.fit);
    return o;
}

Output cmd_tails(Context& c) {
    const Table& t = c.table;
    const std::string which = c.params.text("which");
    const std::int64_t samples = c.params.integer("samples", 1);
    Output o;
    if (which == "R" || which == "Rtilde") {
        c.progress("return-time tail " + which);
        const ReturnTail r = return_tail(t, which == "R" ? ReturnKind::R : ReturnKind::Rtilde, samples,
                                         c.params.integer("n_max", 2), c.est, c.params.integer("fit_lo", 1),
                                         c.params.integer("fit_hi"));
        Csv csv({"n", "survival", "stderr", "hits", "single_flight_fraction"});
        for (std::size_t i = 0; i < r.tail.thresholds.size(); ++i) {
            const double sf = i < r.single_flight_fraction.size() ? r.single_flight_fraction[i] : std::nan("");
            csv.row(r.tail.thresholds[i], r.tail.survival[i], r.tail.stderr_[i], r.tail.hits[i], sf);
        }
        o.files["tail.csv"] = csv.str();
        tail_summary(o, "survival_" + which, r.tail);
    } else if (which == "conditional") {
        c.progress("conditional return");
        const ConditionalReturn cr = conditional_return(t, c.params.integer("fit_lo", 1),
                                                        c.params.integer("n_max", 2), samples, c.est);
        Csv csv({"n", "hits", "mass", "mean_return", "stderr", "d_a0", "d_a1", "d_a2"});
        for (const auto& b : cr.bins)
            csv.row(b.n, b.hits, b.mass, b.mean_return, b.stderr_, b.d_fraction[0], b.d_fraction[1], b.d_fraction[2]);
        Csv rb({"m", "hits", "fraction_low_cells"});
        for (const auto& b : cr.return_bins) rb.row(b.m, b.hits, b.fraction_low_cells);
        o.files["conditional_return.csv"] = csv.str();
        o.files["return_cells.csv"] = rb.str();
        fit_summary(o, "conditional_mean_return", cr.mean_fit, cr.sample_count, 0);
        o.summary["d_fits"] = json::array();
        for (std::size_t j = 0; j < 3; ++j)
            o.summary["d_fits"].push_back({{"a", cr.a_values[j]}, {"fit", fit_json(cr.d_fit[j])}});
    } else {
        throw Error(ErrorKind::InvalidConfig, "params.which must be R, Rtilde or conditional");
    }
    return o;
}

Output cmd_traps(Context& c) {
    const Table& t = c.table;
    c.progress("trap scan");
    const TrapTable tt = trap_scan(t, c.params.integer("m_max", 1), c.params.integer("k_max", 2),
                                   c.params.integer("samples", 1), c.est);
    Csv csv({"m", "k_lo", "k_hi", "k_center", "mass", "density", "stderr", "hits"});
    for (std::int64_t m = 1; m <= tt.m_max; ++m) {
        for (std::size_t b = 0; b < tt.nbins(); ++b) {
            const std::size_t i = static_cast<std::size_t>(m) * tt.nbins() + b;
            if (tt.acc.hits(i) == 0) continue;
            csv.row(m, tt.k_edges[b], tt.k_edges[b + 1] - 1, tt.k_center(b), tt.mass(m, b), tt.density(m, b),
                    tt.acc.stderr_of(i), tt.acc.hits(i));
        }
    }
    Output o;
    o.files["traps.csv"] = csv.str();
    const TrapFits f = trap_fits(tt);
    fit_summary(o, "trap_measure_k", f.k_fit, tt.acc.samples(), tt.censored);
    o.summary["m_fit"] = fit_json(f.m_fit);
    o.summary["sum_fit"] = fit_json(f.sum_fit);
    return o;
}

Output cmd_corr(Context& c) {
    const Table& t = c.table;
    const std::string map = c.params.text("map");
    if (map != "full" && map != "scatterer") throw Error(ErrorKind::InvalidConfig, "params.map must be full or scatterer");
    const Observable f = observable_from_string(c.params.text("f"));
    const Observable g = observable_from_string(c.params.text("g"));
    c.progress("correlation " + to_string(f) + " x " + to_string(g));
    const CorrelationSeries s =
        correlation(t, map == "full" ? OrbitMap::FullMap : OrbitMap::ScattererMap, f, g, c.params.integer("n_max", 1),
                    c.params.integer("orbit_len", 1), c.est, c.params.integer("chains", 2));
    Csv csv({"n", "c_n", "stderr"});
    for (std::size_t i = 0; i < s.lags.size(); ++i) csv.row(s.lags[i], s.c_n[i], s.stderr_[i]);
    Output o;
    o.files["correlation.csv"] = csv.str();
    o.summary["estimator"] = "correlation_" + to_string(f) + "_" + to_string(g);
    o.summary["sample_count"] = s.orbit_len;
    o.summary["censored_count"] = 0;
    o.summary["mean_f"] = s.mean_f;
    o.summary["mean_g"] = s.mean_g;
    o.summary["chains"] = s.chains;
    return o;
}

Output cmd_onestep(Context& c) {
    const Table& t = c.table;
    const double delta = c.params.positive("delta");
    const int points = static_cast<int>(c.params.integer("points", 17));
    c.progress("one-step expansion");
    const OneStepResult r = one_step_expansion(t, delta, static_cast<int>(c.params.integer("trials", 1)), c.est,
                                               c.params.flag("require_crossing"), points,
                                               c.params.integer("max_attempts", 1));
    std::vector<PhasePoint> centers;
    for (const auto& tr : r.trials) centers.push_back(tr.center);
    Csv csv({"trial", "r", "phi", "delta", "sum", "pieces"});
    for (std::size_t i = 0; i < r.trials.size(); ++i)
        csv.row(static_cast<std::int64_t>(i), r.trials[i].center.r, r.trials[i].center.phi, delta, r.trials[i].sum,
                r.trials[i].pieces);
    json shrink = json::array();
    for (const double d : c.params.reals("compare_deltas")) {
        const OneStepResult q = one_step_expansion_at(t, d, centers, points);
        for (std::size_t i = 0; i < q.trials.size(); ++i)
            csv.row(static_cast<std::int64_t>(i), q.trials[i].center.r, q.trials[i].center.phi, d, q.trials[i].sum,
                    q.trials[i].pieces);
        shrink.push_back({{"delta", d}, {"max_sum", q.max_sum()}, {"mean_sum", q.mean_sum()}});
    }
    Output o;
    o.files["onestep.csv"] = csv.str();
    o.summary["estimator"] = "one_step_sum";
    o.summary["sample_count"] = static_cast<std::int64_t>(r.trials.size());
    o.summary["censored_count"] = r.attempts - static_cast<std::int64_t>(r.trials.size());
    o.summary["max_sum"] = r.max_sum();
    o.summary["mean_sum"] = r.mean_sum();
    o.summary["compare"] = shrink;
    return o;
}

Output cmd_jacobi(Context& c) {
    const Table& t = c.table;
    const std::string rule_s = c.params.text("entry_rule");
    EntryRule rule;
    if (rule_s == "window_edge") rule = EntryRule::WindowEdge;
    else if (rule_s == "scaled") rule = EntryRule::Scaled;
    else throw Error(ErrorKind::InvalidConfig, "params.entry_rule must be window_edge or scaled");
    const auto ms = c.params.integers("ms");
    const auto ks = c.params.integers("ks");
    const std::int64_t k_ref = c.params.integer("k_ref", 1);
    const double eps0 = t.config().epsilon0;

    Csv csv({"m", "k", "Lambda", "Lambda_vertical", "k_prime", "k_doubleprime", "H_drift"});
    json per_m = json::array();
    std::vector<double> mv, lv;
    for (const std::int64_t m : ms) {
        c.progress("recursion sweep m=" + std::to_string(m));
        const JacobiModel md = jacobi_model(t, m);
        const double r0 = entry_offset(md, rule, eps0);
        const ScalingReport rep = scaling_report(md, r0, c.params.integer("z_k", 2), ks);
        std::vector<double> kx, ly;
        for (const std::int64_t k : ks) {
            const Trajectory tr = trajectory(md, r0, v0_for_k(md, r0, k));
            const Expansion e = expansion_product(md, tr, window_edge(md, eps0));
            csv.row(m, k, e.lambda_total, e.lambda_vertical, tr.k_prime, tr.k_doubleprime, rep.h_drift);
            kx.push_back(static_cast<double>(k));
            ly.push_back(e.lambda_total);
        }
        const Trajectory tr = trajectory(md, r0, v0_for_k(md, r0, k_ref));
        mv.push_back(static_cast<double>(m));
        lv.push_back(expansion_product(md, tr, window_edge(md, eps0)).lambda_vertical);
        per_m.push_back({{"m", m},
                         {"k_fit", fit_json(fit_loglog(kx, ly))},
                         {"z_fit", fit_json(rep.z_fit)},
                         {"r_kprime_fit", fit_json(rep.r_kprime_fit)},
                         {"h_drift", rep.h_drift}});
    }
    Csv co({"m", "k", "oracle", "measured", "ratio", "n", "trap_k"});
    json cross = json::array();
    for (const std::int64_t m : c.params.integers("cross_check_ms")) {
        c.progress("cocycle cross-check m=" + std::to_string(m));
        const CocycleReport rep = cross_check_cocycle(t, m, c.params.integers("cross_check_ks"));
        for (const auto& s : rep.samples) co.row(m, s.k, s.oracle, s.measured, s.ratio, s.n, s.trap_k);
        cross.push_back({{"m", m}, {"oracle_fit", fit_json(rep.oracle_fit)}, {"measured_fit", fit_json(rep.measured_fit)}});
    }
    Output o;
    o.files["jacobi.csv"] = csv.str();
    o.files["cocycle.csv"] = co.str();
    const LineFit vfit = fit_loglog(mv, lv);
    fit_summary(o, "vertical_expansion_m", vfit, static_cast<std::int64_t>(ms.size() * ks.size()), 0);
    o.summary["per_m"] = per_m;
    o.summary["cross_check"] = cross;
    return o;
}

Output cmd_neighborhood(Context& c) {
    const Table& t = c.table;
    c.progress("singularity neighbourhood");
    const NeighborhoodEstimate e =
        singularity_neighborhood(t, c.params.reals("deltas"), c.params.integer("samples", 1), c.est);
    Csv csv({"delta", "measure", "stderr", "hits"});
    for (std::size_t i = 0; i < e.deltas.size(); ++i) csv.row(e.deltas[i], e.measure[i], e.stderr_[i], e.hits[i]);
    Output o;
    o.files["neighborhood.csv"] = csv.str();
    fit_summary(o, "proxy_distance_measure", e.fit, e.sample_count, 0);
    return o;
}

struct Command {
    json defaults;
    Output (*fn)(Context&);
};

const std::map<std::string, Command>& registry() {
    static const std::map<std::string, Command> r = {
        {"table-info", {{{"points", 256}}, cmd_table_info}},
        {"orbit", {{{"steps", 1000}, {"map", "auto"}, {"r", nullptr}, {"phi", 0.0}, {"failure_budget", 10}}, cmd_orbit}},
        {"map-check",
         {{{"det_samples", 10000},
           {"reversibility_samples", 1000},
           {"cone_vectors", 100000},
           {"fd_step", 1e-7},
           {"det_tolerance", 1e-8},
           {"fd_tolerance", 1e-5},
           {"reversibility_tolerance", 1e-9},
           {"cone_excluded_tolerance", 1e-3}},
          cmd_map_check}},
        {"cells",
         {{{"samples", 1000000},
           {"n_max", 128},
           {"sampling", "tangential"},
           {"fit_lo", 8},
           {"s_prime_r", {1e-3, 2e-3, 4e-3, 1e-2}},
           {"s_n", {20, 50, 100}},
           {"s_n_r", {0.0, 0.01, 0.02, 0.05}}},
          cmd_cells}},
        {"tails", {{{"which", "R"}, {"samples", 1000000}, {"n_max", 256}, {"fit_lo", 8}, {"fit_hi", 128}}, cmd_tails}},
        {"traps", {{{"samples", 1000000}, {"m_max", 64}, {"k_max", 4096}}, cmd_traps}},
        {"corr",
         {{{"map", "full"}, {"f", "phi"}, {"g", "phi"}, {"n_max", 128}, {"orbit_len", 10000000}, {"chains", 32}},
          cmd_corr}},
        {"onestep",
         {{{"delta", 1e-4},
           {"trials", 100},
           {"points", 1000},
           {"require_crossing", true},
           {"max_attempts", 1000000},
           {"compare_deltas", {1e-5}}},
          cmd_onestep}},
        {"jacobi",
         {{{"entry_rule", "window_edge"},
           {"ms", {2, 4, 8, 16, 32, 64}},
           {"ks", {4, 8, 16, 32, 64}},
           {"k_ref", 16},
           {"z_k", 400},
           {"cross_check_ms", {5, 10, 20}},
           {"cross_check_ks", {2, 3, 4, 5, 6, 8, 10, 12}}},
          cmd_jacobi}},
        {"neighborhood", {{{"samples", 100000}, {"deltas", {1e-5, 3e-5, 1e-4, 3e-4, 1e-3}}}, cmd_neighborhood}},
    };
    return r;
}

std::string utc_now() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::ostringstream s;
    s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return s.str();
}

json load_config(const RunOptions& opt) {
    json j = json::object();
    if (!opt.config_path.empty()) {
        std::ifstream in(opt.config_path);
        if (!in) throw InvalidInput("cannot read config '" + opt.config_path + "'");
        try {
            j = json::parse(in);
        } catch (const json::parse_error& e) {
            throw InvalidInput("config '" + opt.config_path + "' is not valid JSON: " + e.what());
        }
        if (!j.is_object()) throw InvalidInput("config must be a JSON object");
    }
    for (const auto& o : opt.overrides) apply_override(j, o);
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (it.key() != "table" && it.key() != "params" && it.key() != "threads")
            throw Error(ErrorKind::InvalidConfig, "unknown key '" + it.key() + "'");
    }
    if (!j.contains("table")) j["table"] = json::object();
    if (opt.seed) j["table"]["seed"] = *opt.seed;
    if (opt.threads) j["threads"] = *opt.threads;
    if (!j.contains("threads")) j["threads"] = 0;
    if (!j["threads"].is_number_integer() || j["threads"].get<int>() < 0)
        throw Error(ErrorKind::InvalidConfig, "threads must be a non-negative integer");
    return j;
}

void write_file(const std::filesystem::path& p, const std::string& content) {
    std::ofstream f(p, std::ios::binary);
    f << content;
    if (!f) throw InvalidInput("cannot write '" + p.string() + "'");
}

}  // namespace

const std::vector<std::string>& commands() {
    static const std::vector<std::string> names = [] {
        std::vector<std::string> v;
        for (const auto& [k, _] : registry()) v.push_back(k);
        return v;
    }();
    return names;
}

std::string sha256_hex(const std::string& bytes) {
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    EVP_Digest(bytes.data(), bytes.size(), md.data(), &len, EVP_sha256(), nullptr);
    std::ostringstream s;
    for (unsigned int i = 0; i < len; ++i) s << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
    return s.str();
}

int run(const std::string& command, const RunOptions& opt, std::ostream& out, std::ostream& err) {
    const auto it = registry().find(command);
    if (it == registry().end()) {
        err << "unknown command '" << command << "'; expected one of:";
        for (const auto& c : commands()) err << ' ' << c;
        err << '\n';
        return kExitInvalid;
    }
    const std::string started = utc_now();
    json config;
    std::optional<Context> ctx;
    try {
        config = load_config(opt);
        const TableConfig tc = table_config_from_json(config["table"]);
        config["table"] = table_config_to_json(tc);
        EstimatorOptions est;
        est.seed = tc.seed;
        est.threads = config["threads"].get<int>();
        Params params(it->second.defaults, config.contains("params") ? config["params"] : json());
        config["params"] = params.all();
        auto progress = [&err, &command, show = opt.progress](const std::string& m) {
            if (show) err << '[' << command << "] " << m << '\n';
        };
        ctx.emplace(Context{Table(tc), est, std::move(params), progress});
    } catch (const Error& e) {
        err << "invalid configuration: " << e.what() << '\n';
        return kExitInvalid;
    } catch (const InvalidInput& e) {
        err << e.what() << '\n';
        return kExitInvalid;
    }

    Output result;
    try {
        result = it->second.fn(*ctx);
    } catch (const Error& e) {
        err << command << " failed: " << e.what() << '\n';
        return e.kind() == ErrorKind::InvalidConfig ? kExitInvalid : kExitNumerical;
    }

    json summary = {{"schema_version", kSchemaVersion},
                    {"command", command},
                    {"config", config},
                    {"seed", ctx->est.seed},
                    {"estimator", nullptr},
                    {"fit_window", nullptr},
                    {"exponent", nullptr},
                    {"ci", nullptr},
                    {"sample_count", nullptr},
                    {"censored_count", nullptr}};
    for (auto i = result.summary.begin(); i != result.summary.end(); ++i) summary[i.key()] = i.value();
    result.files["summary.json"] = summary.dump(2) + "\n";

    json manifest = {{"schema_version", kSchemaVersion},
                     {"command", command},
                     {"config", config},
                     {"overrides", opt.overrides},
                     {"seed", ctx->est.seed},
                     {"started_at", started},
                     {"outputs", json::array()}};
    try {
        std::filesystem::create_directories(opt.out_dir);
        for (const auto& [name, content] : result.files) {
            write_file(std::filesystem::path(opt.out_dir) / name, content);
            manifest["outputs"].push_back({{"file", name}, {"sha256", sha256_hex(content)}});
        }
        manifest["finished_at"] = utc_now();
        write_file(std::filesystem::path(opt.out_dir) / "manifest.json", manifest.dump(2) + "\n");
    } catch (const std::exception& e) {
        err << e.what() << '\n';
        return kExitInvalid;
    }
    out << summary.dump(2) << '\n';
    if (result.failed) {
        err << command << ": identity checks failed\n";
        return kExitNumerical;
    }
    return kExitOk;
}

int run_args(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Semi-dispersing billiard experiments"};
    std::string command;
    RunOptions opt;
    std::uint64_t seed = 0;
    int threads = 0;
    bool quiet = false;
    app.add_option("command", command, "one of: table-info orbit map-check cells tails traps corr onestep jacobi neighborhood")
        ->required();
    app.add_option("--config", opt.config_path, "JSON config file");
    auto* seed_opt = app.add_option("--seed", seed, "RNG seed (overrides table.seed)");
    app.add_option("--out", opt.out_dir, "output directory")->capture_default_str();
    auto* thr_opt = app.add_option("--threads", threads, "worker threads, 0 for all cores")->check(CLI::NonNegativeNumber);
    app.add_option("--set", opt.overrides, "override key=value (dotted keys, e.g. table.beta=6)");
    app.add_flag("--quiet", quiet, "no progress on stderr");
    try {
        std::vector<std::string> rev(args.rbegin(), args.rend());
        app.parse(rev);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << e.what() << "\n" << app.help();
        return kExitInvalid;
    }
    if (*seed_opt) opt.seed = seed;
    if (*thr_opt) opt.threads = threads;
    opt.progress = !quiet;
    return run(command, opt, out, err);
}

}  // namespace flatbill::cli

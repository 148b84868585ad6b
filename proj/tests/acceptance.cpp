// Acceptance run: one PASS/FAIL line per criterion, plus indented info lines.
// Exit status is 0 whenever the run completes; the verdicts are in the output.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "flatbill/cells.hpp"
#include "flatbill/cli.hpp"
#include "flatbill/error.hpp"
#include "flatbill/jacobi.hpp"
#include "flatbill/map_checks.hpp"
#include "flatbill/statistics.hpp"

using namespace flatbill;
namespace fs = std::filesystem;

namespace {

double g_scale = 1.0;
int g_threads = 0;
int g_pass = 0, g_fail = 0;

std::int64_t scaled(double n) { return std::max<std::int64_t>(1000, static_cast<std::int64_t>(n * g_scale)); }

EstimatorOptions opts(std::uint64_t seed = 1) {
    EstimatorOptions o;
    o.seed = seed;
    o.threads = g_threads;
    return o;
}

void info(const char* fmt, ...) __attribute__((format(printf, 1, 2)));
void info(const char* fmt, ...) {
    va_list ap;
    va_start(ap, fmt);
    std::printf("    ");
    std::vprintf(fmt, ap);
    std::printf("\n");
    va_end(ap);
    std::fflush(stdout);
}

void verdict(int id, bool ok, const std::string& what, double seconds) {
    std::string w = what;
    while (!w.empty() && w.back() == ' ') w.pop_back();
    std::printf("C%-2d %s  %s  (%.1f s)\n", id, ok ? "PASS" : "FAIL", w.c_str(), seconds);
    std::fflush(stdout);
    (ok ? g_pass : g_fail)++;
}

std::string fmt(const char* f, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* f, ...) {
    char buf[512];
    va_list ap;
    va_start(ap, f);
    std::vsnprintf(buf, sizeof buf, f, ap);
    va_end(ap);
    return buf;
}

// Runs one criterion; a library error is a FAIL with the message.
void run(int id, const std::function<std::pair<bool, std::string>()>& body) {
    const auto t0 = std::chrono::steady_clock::now();
    std::pair<bool, std::string> r;
    try {
        r = body();
    } catch (const std::exception& e) {
        r = {false, std::string("error: ") + e.what()};
    }
    verdict(id, r.first, r.second, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
}

TableConfig beta_cfg(double beta) {
    TableConfig c;
    c.beta = beta;
    return c;
}

bool within(double x, double target, double tol) { return std::abs(x - target) <= tol; }

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"flatbill acceptance run"};
    std::vector<int> only;
    app.add_option("--scale", g_scale, "multiplier on sample counts")->check(CLI::PositiveNumber);
    app.add_option("--threads", g_threads, "worker threads (0: all cores)");
    app.add_option("--only", only, "criteria to run");
    CLI11_PARSE(app, argc, argv);
    auto wanted = [&](int id) { return only.empty() || std::find(only.begin(), only.end(), id) != only.end(); };

    const Table t4(beta_cfg(4.0));
    const Table t6(beta_cfg(6.0));
    TableConfig rc;
    rc.mode = Mode::Rectangle;
    const Table rect(rc);

    if (wanted(1)) run(1, [&] {
        bool ok = true;
        std::string msg;
        for (const Table* t : {&t4, &rect}) {
            const DeterminantReport d = determinant_check(*t, t->config().mode, 10000, 11);
            ok = ok && d.max_det_error < 1e-8 && d.max_fd_error < 1e-5 && d.samples >= 10000;
            msg += fmt("%s: det err %.2e, fd err %.2e over %lld steps (%lld grazing, %lld fd skipped). ",
                       to_string(t->config().mode).c_str(), d.max_det_error, d.max_fd_error,
                       static_cast<long long>(d.samples), static_cast<long long>(d.skipped),
                       static_cast<long long>(d.fd_skipped));
        }
        return std::make_pair(ok, msg);
    });

    if (wanted(2)) run(2, [&] {
        bool ok = true;
        std::string msg;
        for (const Table* t : {&t4, &rect}) {
            const ReversibilityReport r = reversibility_check(*t, t->config().mode, 1000, 12);
            ok = ok && r.max_error < 1e-9 && r.samples >= 1000;
            msg += fmt("%s: max error %.2e over %lld points. ", to_string(t->config().mode).c_str(), r.max_error,
                       static_cast<long long>(r.samples));
        }
        return std::make_pair(ok, msg);
    });

    if (wanted(3)) run(3, [&] {
        const ConeReport c = cone_invariance_check(t4, 100000, 13);
        return std::make_pair(c.violations == 0 && c.excluded_fraction() < 1e-3,
                              fmt("%lld violations over %lld vectors, excluded %.4f%%", static_cast<long long>(c.violations),
                                  static_cast<long long>(c.vectors), 100.0 * c.excluded_fraction()));
    });

    if (wanted(4)) run(4, [&] {
        const std::int64_t n = scaled(3e7);
        const CellProfile a = cell_measure_profile(t4, 64, n, opts(41), CellSampling::Direct, 8);
        const CellProfile b = cell_measure_profile(t6, 64, n, opts(42), CellSampling::Direct, 8);
        const double sa = a.density_fit.slope, ca = a.density_fit.ci_halfwidth();
        const double sb = b.density_fit.slope, cb = b.density_fit.ci_halfwidth();
        info("beta 4 direct sampling: effective samples %.3g", a.effective_samples);
        info("survival exponents: beta 4 %.3f, beta 6 %.3f", a.survival.exponent(), b.survival.exponent());
        const bool ok = within(sa, -3.0, 0.3) && within(sb, -3.0, 0.3) && std::abs(sa - sb) <= ca + cb &&
                        a.effective_samples >= 1e7 * std::min(1.0, g_scale);
        return std::make_pair(ok, fmt("mu(M_n) exponent on [8,64]: beta 4 %.3f +- %.3f, beta 6 %.3f +- %.3f",
                                      sa, ca, sb, cb));
    });

    if (wanted(5)) run(5, [&] {
        const ReturnTail r = return_tail(rect, ReturnKind::R, scaled(3e7), 128, opts(51), 8, 128);
        info("single-flight share of mu(R = n) at n = 8, 32, 128: %.3f %.3f %.3f", r.single_flight_fraction[7],
             r.single_flight_fraction[31], r.single_flight_fraction[127]);
        return std::make_pair(within(r.tail.exponent(), -2.0, 0.3),
                              fmt("mu(R >= n) exponent on [8,128]: %.3f +- %.3f (target -2 +- 0.3)", r.tail.exponent(),
                                  r.tail.ci_halfwidth()));
    });

    if (wanted(6)) run(6, [&] {
        const ReturnTail r = return_tail(t6, ReturnKind::Rtilde, scaled(4e6), 1000, opts(61), 8, 0);
        const double target = -(2.0 + 4.0 / (6.0 - 2.0));
        return std::make_pair(within(r.tail.exponent(), target, 0.5),
                              fmt("beta 6 mu(R~ >= n) exponent on [%lld,%lld]: %.3f +- %.3f (target %.1f +- 0.5)",
                                  static_cast<long long>(r.tail.fit_lo), static_cast<long long>(r.tail.fit_hi),
                                  r.tail.exponent(), r.tail.ci_halfwidth(), target));
    });

    if (wanted(7)) run(7, [&] {
        const TrapTable tt = trap_scan(t6, 64, 512, scaled(4e6), opts(71));
        const TrapFits f = trap_fits(tt);
        const double tm = -(3.0 + 1.0 / 5.0), tk = -(3.0 + 4.0 / 4.0);
        info("sum over k >= 1 per m: slope %.3f +- %.3f", f.sum_fit.slope, f.sum_fit.ci_halfwidth());
        info("censored trap orbits: %lld", static_cast<long long>(tt.censored));
        return std::make_pair(within(f.m_fit.slope, tm, 0.6) && within(f.k_fit.slope, tk, 0.6),
                              fmt("beta 6 slopes: m %.3f +- %.3f (target %.2f), k %.3f +- %.3f (target %.2f)",
                                  f.m_fit.slope, f.m_fit.ci_halfwidth(), tm, f.k_fit.slope, f.k_fit.ci_halfwidth(), tk));
    });

    if (wanted(8)) run(8, [&] {
        const ConditionalReturn c = conditional_return(t4, 8, 64, scaled(4e6), opts(81));
        return std::make_pair(within(c.mean_fit.slope, 0.75, 0.15),
                              fmt("slope of E[R(Fx) | M_n] on [8,64]: %.3f +- %.3f (target 0.75 +- 0.15)",
                                  c.mean_fit.slope, c.mean_fit.ci_halfwidth()));
    });

    if (wanted(9)) run(9, [&] {
        const OneStepResult r4 = one_step_expansion(t4, 1e-4, 100, opts(91));
        std::vector<PhasePoint> centers;
        for (const auto& tr : r4.trials) centers.push_back(tr.center);
        const OneStepResult r5 = one_step_expansion_at(t4, 1e-5, centers);
        const bool ok = r4.trials.size() == 100 && r4.max_sum() < 1.0 && r5.mean_sum() < r4.mean_sum();
        return std::make_pair(ok, fmt("|W| 1e-4: max sum %.3f mean %.3f over %zu crossing curves; |W| 1e-5: mean %.3f",
                                      r4.max_sum(), r4.mean_sum(), r4.trials.size(), r5.mean_sum()));
    });

    if (wanted(10)) run(10, [&] {
        // s_n on a table whose channel is one period wide; see the README.
        TableConfig c;
        c.scatterer_radius = std::cbrt(0.25);
        c.rect_height = 4.0;
        c.rect_width = 4.0 - 2.0 * c.scatterer_radius;
        const Table tn(c);
        double worst = 0.0;
        bool ok = true;
        for (std::int64_t n : {20, 30, 40, 50, 60, 70, 80, 90, 100}) {
            const auto p = trace_singularity_s_n(tn, n, {0.0});
            ok = ok && p[0].ok;
            worst = std::max(worst, std::abs(p[0].theta * static_cast<double>(n) - 1.0));
        }
        const auto d = trace_singularity_s_n(t4, 50, {0.0});
        if (d[0].ok) info("default table, n = 50: n (pi/2 - phi) = %.3f", d[0].theta * 50.0);
        std::vector<double> grid;
        for (int i = 0; i <= 10; ++i) grid.push_back(0.01 * std::pow(10.0, i / 10.0));
        double worst_p = 0.0;
        for (const auto& p : trace_singularity_s_prime(t4, grid)) {
            ok = ok && p.ok;
            worst_p = std::max(worst_p, std::abs(p.theta / (t4.profile_c() * std::pow(p.r, 3.0)) / 4.0 - 1.0));
        }
        ok = ok && worst < 0.25 && worst_p < 0.1;
        return std::make_pair(ok, fmt("s_n: worst |n theta - 1| = %.3f for n in [20,100]; s': worst prefactor "
                                      "deviation %.3f on r in [0.01,0.1]",
                                      worst, worst_p));
    });

    if (wanted(11)) run(11, [&] {
        const TableConfig& cfg = t4.config();
        const JacobiModel unit = jacobi_model(4.0, 1.0, 1, 1.0, 1.0);
        const Trajectory tr = trajectory(unit, 1e-2, v0_for_k(unit, 1e-2, 200));
        const OdeRun ode = ode_limit(unit, 1e-2, -tr.states[0].v, static_cast<double>(tr.k_prime));

        const JacobiModel m10 = jacobi_model(t4, 10);
        const ScalingReport sr = scaling_report(m10, window_edge(m10, cfg.epsilon0), 400, {8, 16, 32, 64, 128});

        const JacobiModel m16 = jacobi_model(t4, 16);
        const double r16 = entry_offset(m16, EntryRule::WindowEdge, cfg.epsilon0);
        std::vector<double> kx, ly;
        for (std::int64_t k : {4, 8, 16, 32, 64}) {
            const Trajectory tk = trajectory(m16, r16, v0_for_k(m16, r16, k));
            kx.push_back(static_cast<double>(k));
            ly.push_back(expansion_product(m16, tk, r16).lambda_total);
        }
        const double k_slope = fit_loglog(kx, ly).slope;

        std::vector<double> mx, lv;
        for (std::int64_t m : {2, 4, 8, 16, 32, 64}) {
            const JacobiModel md = jacobi_model(t4, m);
            const double r0 = entry_offset(md, EntryRule::Scaled, cfg.epsilon0);
            const Trajectory tm = trajectory(md, r0, v0_for_k(md, r0, 16));
            mx.push_back(static_cast<double>(m));
            lv.push_back(expansion_product(md, tm, window_edge(md, cfg.epsilon0)).lambda_vertical);
        }
        const double m_slope = fit_loglog(mx, lv).slope;

        double worst_gap = 0.0;
        for (std::int64_t m : {5, 10, 20}) {
            const CocycleReport c = cross_check_cocycle(t4, m, {2, 3, 4, 5, 6, 8, 10, 12});
            const double gap = std::abs(c.oracle_fit.slope - c.measured_fit.slope);
            info("cocycle m = %lld: recursion slope %.3f, map slope %.3f", static_cast<long long>(m),
                 c.oracle_fit.slope, c.measured_fit.slope);
            worst_gap = std::max(worst_gap, gap);
        }
        info("r at the turning point: k-slope %.3f", sr.r_kprime_fit.slope);
        const bool ok = ode.max_rel_drift < 1e-8 && sr.h_drift < 1e-8 && within(sr.z_fit.slope, 1.0, 0.05) &&
                        within(k_slope, 5.0, 0.5) && within(m_slope, 2.0, 0.3) && worst_gap <= 0.7;
        return std::make_pair(ok, fmt("drift %.1e/%.1e, Z slope %.3f, Lambda k-slope %.3f, vertical m-slope %.3f, "
                                      "cocycle slope gap %.3f",
                                      ode.max_rel_drift, sr.h_drift, sr.z_fit.slope, k_slope, m_slope, worst_gap));
    });

    if (wanted(12)) run(12, [&] {
        const std::int64_t len = scaled(3e7);
        const std::int64_t n_max = 128;
        bool ok_a = true, ok_b = true;
        std::vector<CorrelationSeries> series;
        const Observable pairs[][2] = {{Observable::Phi, Observable::Phi},
                                       {Observable::SinR, Observable::SinR},
                                       {Observable::Bump, Observable::Bump}};
        for (auto [f, g] : pairs) {
            const CorrelationSeries c = correlation(t4, OrbitMap::FullMap, f, g, n_max, len, opts(121), 32);
            // (a) lags 64..128 averaged
            const auto [wm, wse] = c.window_mean(64, n_max);
            const bool a = std::abs(wm) <= 2.0 * wse;
            int single = 0;
            for (std::int64_t n = 64; n <= n_max; ++n) single += std::abs(c.c_n[n]) <= 2.0 * c.stderr_[n];
            // (b) envelope C n^-0.6 fitted on lags 4..8, checked over 4..50
            double C = 0.0;
            for (std::int64_t n = 4; n <= 8; ++n) C = std::max(C, std::abs(c.c_n[n]) * std::pow(double(n), 0.6));
            int over = 0;
            for (std::int64_t n = 4; n <= 50; ++n)
                over += std::abs(c.c_n[n]) > C * std::pow(double(n), -0.6) + 2.0 * c.stderr_[n];
            ok_a = ok_a && a;
            ok_b = ok_b && over == 0;
            info("%s/%s: (a) mean c_n on [64,128] = %.2e +- %.2e, %d of 65 lags within 2 se; (b) C = %.3e, %d lags above",
                 to_string(f).c_str(), to_string(g).c_str(), wm, wse, single, C, over);
            series.push_back(c);
        }
        // (c) bump against the rectangle return tail
        const ReturnTail rt = return_tail(rect, ReturnKind::R, scaled(4e6), 64, opts(122), 4, 32);
        const CorrelationSeries& b = series.back();
        const double mf = b.mean_f, mg = b.mean_g;
        std::vector<double> lit, tailsum;
        for (std::int64_t n = 4; n <= 50; ++n) {
            const std::size_t i = static_cast<std::size_t>(std::min<std::int64_t>(n, 63));
            const double s = rt.tail.survival[i];  // mu(R > n)
            double sum = 0.0;
            for (std::size_t j = i; j < rt.tail.survival.size(); ++j) sum += rt.tail.survival[j];
            if (s > 0.0) lit.push_back(b.c_n[n] / (s * mf * mg));
            if (sum > 0.0) tailsum.push_back(b.c_n[n] / (sum * mf * mg));
        }
        const double med = median(lit), med_sum = median(tailsum);
        info("(c) summed-tail form: median c_n / (sum_{j>n} mu(R > j) mu(f) mu(g)) = %.3f", med_sum);
        const bool ok_c = med >= 0.3 && med <= 3.0;
        return std::make_pair(ok_a && ok_b && ok_c,
                              fmt("(a) %s, (b) %s, (c) median ratio %.2f on [4,50] %s", ok_a ? "ok" : "fail",
                                  ok_b ? "ok" : "fail", med, ok_c ? "ok" : "fail"));
    });

    if (wanted(13)) run(13, [&] {
        const NeighborhoodEstimate ne =
            singularity_neighborhood(t4, {1e-5, 2e-5, 4e-5, 1e-4, 2e-4, 4e-4, 1e-3}, scaled(1e6), opts(131));
        const double bound = 2.0 * 4.0 / (3.0 * 4.0 - 2.0) - 0.15;
        return std::make_pair(ne.fit.slope >= bound, fmt("slope of mu(proxy distance <= delta): %.3f +- %.3f (need >= %.3f)",
                                                         ne.fit.slope, ne.fit.ci_halfwidth(), bound));
    });

    if (wanted(14)) run(14, [&] {
        const fs::path base = fs::temp_directory_path() / "flatbill_acceptance";
        fs::remove_all(base);
        bool same = true;
        int files = 0;
        const std::vector<std::pair<std::string, std::vector<std::string>>> runs = {
            {"cells", {"params.samples=20000", "params.n_max=16", "params.fit_lo=4"}},
            {"traps", {"params.samples=20000", "params.k_max=64"}},
            {"corr", {"params.orbit_len=20000", "params.n_max=16", "params.chains=4"}}};
        for (const auto& [cmd, sets] : runs) {
            std::vector<fs::path> dirs = {base / (cmd + "_a"), base / (cmd + "_b")};
            for (std::size_t i = 0; i < dirs.size(); ++i) {
                fs::create_directories(dirs[i]);
                std::ostringstream out, err;
                std::vector<std::string> args = {cmd, "--seed", "5", "--threads", i ? "2" : "1", "--out",
                                                 dirs[i].string(), "--quiet"};
                for (const auto& s : sets) {
                    args.push_back("--set");
                    args.push_back(s);
                }
                const int code = cli::run_args(args, out, err);
                if (code != cli::kExitOk) throw Error(ErrorKind::InvalidConfig, cmd + ": " + err.str());
            }
            for (const auto& e : fs::directory_iterator(dirs[0])) {
                if (e.path().extension() != ".csv") continue;
                ++files;
                same = same && slurp(e.path()) == slurp(dirs[1] / e.path().filename());
            }
        }
        // split runs merged in either grouping
        EstimatorOptions o = opts(141);
        o.threads = 1;
        std::vector<TrapTable> part;
        for (std::uint64_t s : {1, 2, 3}) {
            o.seed = 140 + s;
            part.push_back(trap_scan(t4, 8, 64, 20000, o));
        }
        TrapTable left = part[0], right = part[1];
        left.merge(part[1]);
        left.merge(part[2]);
        right.merge(part[2]);
        TrapTable other = part[0];
        other.merge(right);
        const bool assoc = left.acc == other.acc && left.censored == other.censored;
        return std::make_pair(same && assoc && files >= 3,
                              fmt("%d CSV files byte-identical across reruns: %s; merge associativity: %s", files,
                                  same ? "yes" : "no", assoc ? "exact" : "broken"));
    });

    std::printf("%d passed, %d failed\n", g_pass, g_fail);
    return 0;
}

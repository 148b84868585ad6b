#include "flatbill/jacobi.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include <boost/numeric/odeint.hpp>

#include "flatbill/billiard_map.hpp"
#include "flatbill/cells.hpp"
#include "flatbill/error.hpp"

namespace flatbill {

namespace {

double spow(double r, double p) { return std::copysign(std::pow(std::abs(r), p), r); }

}  // namespace

double JacobiModel::tau() const { return static_cast<double>(m) * period; }
double JacobiModel::cos_phi() const { return std::min(1.0, gap / tau()); }
double JacobiModel::curvature(double r) const {
    return beta * (beta - 1.0) * c * std::pow(std::abs(r), beta - 2.0);
}

JacobiModel jacobi_model(double beta, double c, std::int64_t m, double period, double gap) {
    JacobiModel jm;
    jm.beta = beta;
    jm.c = c;
    jm.m = m;
    // tau / cos(phi): reduces to m^2 for unit period and gap, and keeps the
    // r update consistent with the flight used in the expansion product.
    jm.coef = static_cast<double>(m) * static_cast<double>(m) * period * period / gap;
    jm.period = period;
    jm.gap = gap;
    return jm;
}

JacobiModel jacobi_model(const Table& t, std::int64_t m) {
    return jacobi_model(t.beta(), t.profile_c(), m, t.width(), t.height() - 2.0 * t.a());
}

ChannelState step(const JacobiModel& md, const ChannelState& s) {
    const double tv = std::tan(s.v);
    const double rb = std::pow(std::abs(s.r), md.beta);
    // Leading-order guess, then fixed point on the implicit r term.
    double r1 = s.r - md.coef * s.v;
    for (int it = 0;; ++it) {
        const double next = s.r - tv * (md.coef + 2.0 * md.c * (rb + std::pow(std::abs(r1), md.beta)));
        const double d = std::abs(next - r1);
        r1 = next;
        if (d <= 1e-14 * std::max(std::abs(r1), 1e-300) || d == 0.0) break;
        if (it > 200 || !std::isfinite(r1)) {
            std::ostringstream os;
            os << "j=" << s.j << " r=" << s.r << " v=" << s.v << " m=" << s.m;
            throw Error(ErrorKind::FixedPointDivergence, os.str());
        }
    }
    ChannelState o = s;
    o.j = s.j + 1;
    o.r = r1;
    o.v = s.v - 2.0 * std::atan(md.beta * md.c * spow(r1, md.beta - 1.0));
    return o;
}

ChannelState step_leading(const JacobiModel& md, const ChannelState& s) {
    ChannelState o = s;
    o.j = s.j + 1;
    o.r = s.r - md.coef * s.v;
    o.v = s.v - 2.0 * md.beta * md.c * spow(o.r, md.beta - 1.0);
    return o;
}

Remainders remainders(const JacobiModel& md, const ChannelState& s) {
    const ChannelState e = step(md, s);
    Remainders R;
    R.r = (s.r - e.r) - md.coef * s.v;
    R.v = 2.0 * md.beta * md.c * spow(e.r, md.beta - 1.0) - (s.v - e.v);
    return R;
}

double ode_invariant(const JacobiModel& md, double r, double v) {
    return md.coef * v * v - 4.0 * md.c * std::pow(std::abs(r), md.beta);
}

OdeRun ode_limit(const JacobiModel& md, double r0, double v0, double t_end) {
    namespace ode = boost::numeric::odeint;
    using State = std::array<double, 2>;  // r, v
    auto rhs = [&](const State& x, State& dx, double) {
        dx[0] = md.coef * x[1];
        dx[1] = 2.0 * md.beta * md.c * spow(x[0], md.beta - 1.0);
    };
    OdeRun run;
    run.h0 = ode_invariant(md, r0, v0);
    const double scale = std::max({std::abs(run.h0), md.coef * v0 * v0,
                                   4.0 * md.c * std::pow(std::abs(r0), md.beta), 1e-300});
    std::vector<double> times;
    for (double t = 0.0; t <= t_end; t += 1.0) times.push_back(t);
    if (times.back() < t_end) times.push_back(t_end);
    State x{r0, v0};
    auto stepper = ode::make_controlled(1e-14, 1e-14, ode::runge_kutta_fehlberg78<State>());
    try {
        ode::integrate_times(stepper, rhs, x, times.begin(), times.end(), 1e-3,
                             [&](const State& s, double t) {
                                 run.samples.push_back({t, s[0], s[1]});
                                 const double d = std::abs(ode_invariant(md, s[0], s[1]) - run.h0);
                                 run.max_rel_drift = std::max(run.max_rel_drift, d / scale);
                             },
                             ode::max_step_checker(1000000));
    } catch (const std::exception& e) {
        throw Error(ErrorKind::StepUnderflow, e.what());
    }
    return run;
}

double window_edge(const JacobiModel& md, double epsilon0) {
    return epsilon0 * std::pow(static_cast<double>(md.m), -1.0 / (md.beta - 1.0));
}

double scaled_edge(const JacobiModel& md, double rho) {
    // r = lambda rho turns the leading-order recursion into a parameter-free map.
    return rho * std::pow(2.0 * md.beta * md.c * md.coef, -1.0 / (md.beta - 2.0));
}

double entry_offset(const JacobiModel& md, EntryRule rule, double epsilon0) {
    const double w = window_edge(md, epsilon0);
    return rule == EntryRule::WindowEdge ? w : std::min(w, scaled_edge(md, 1.0));
}

Trajectory trajectory(const JacobiModel& md, double r0, double v0, bool leading,
                      std::int64_t max_steps) {
    Trajectory tr;
    ChannelState s{0, r0, v0, md.m};
    tr.states.push_back(s);
    ChannelState exit_state = s;
    for (;;) {
        ChannelState n;
        if (leading) {
            n = step_leading(md, s);
        } else {
            try {
                n = step(md, s);
            } catch (const Error&) {
                // Far outside the small-angle regime the implicit update has no
                // fixed point; accept only if the orbit is leaving anyway.
                n = step_leading(md, s);
                if (std::abs(n.r) <= 2.0 * r0) throw;
            }
        }
        if (std::abs(n.r) > r0) {
            tr.escaped = true;
            exit_state = n;
            break;
        }
        tr.states.push_back(n);
        s = n;
        if (static_cast<std::int64_t>(tr.states.size()) > max_steps) {
            exit_state = s;
            break;
        }
    }
    tr.k = static_cast<std::int64_t>(tr.states.size()) - 1;
    tr.exit_r = exit_state.r;
    if (tr.k == 0) return tr;
    const auto& st = tr.states;
    tr.k_prime = tr.k;
    for (std::size_t i = 1; i < st.size(); ++i) {
        const double next_r = i + 1 < st.size() ? st[i + 1].r : exit_state.r;
        if (next_r >= st[i].r) {
            tr.k_prime = st[i].j;
            break;
        }
    }
    // v at the minimum of r is already <= 0; the half-speed index is taken
    // against the last positive angle.
    double vref = st[static_cast<std::size_t>(tr.k_prime)].v;
    if (tr.k_prime > 1 && vref <= 0.0) vref = st[static_cast<std::size_t>(tr.k_prime - 1)].v;
    tr.k_doubleprime = tr.k_prime;
    for (std::size_t i = 1; i < st.size(); ++i) {
        if (st[i].v < 2.0 * vref) {
            tr.k_doubleprime = st[i].j;
            break;
        }
    }
    return tr;
}

double v0_for_k(const JacobiModel& md, double r0, std::int64_t k) {
    if (k < 1) throw Error(ErrorKind::ShootingDivergence, "k must be >= 1");
    const std::int64_t cap = 4 * k + 100;
    // Orbits below the discrete separatrix turn back; above it they cross the
    // flat point. The window count grows without bound toward the separatrix.
    auto turns_back = [&](double v) {
        const Trajectory tr = trajectory(md, r0, v, false, cap);
        return tr.states.back().r > 0.0 && tr.exit_r > 0.0;
    };
    double lo = 0.0, hi = 2.0 * std::sqrt(md.c * std::pow(r0, md.beta) / md.coef);
    while (turns_back(hi)) {
        hi *= 2.0;
        if (hi > 1.0) throw Error(ErrorKind::ShootingDivergence, "no crossing orbit found");
    }
    for (int i = 0; i < 200 && hi - lo > 4e-16 * hi; ++i) {
        const double mid = 0.5 * (lo + hi);
        if (turns_back(mid))
            lo = mid;
        else
            hi = mid;
    }
    const double vsep = lo;
    auto count = [&](double v) { return trajectory(md, r0, v, false, cap).k; };
    auto first_reaching = [&](std::int64_t kk) {
        double a = 0.0, b = vsep;
        if (count(b) < kk) {
            std::ostringstream os;
            os << "k=" << kk << " not reachable below the separatrix (m=" << md.m
               << ", max k=" << count(b) << ")";
            throw Error(ErrorKind::ShootingDivergence, os.str());
        }
        for (int i = 0; i < 200 && b - a > 4e-16 * b; ++i) {
            const double mid = 0.5 * (a + b);
            if (count(mid) >= kk)
                b = mid;
            else
                a = mid;
        }
        return b;
    };
    const double a = first_reaching(k);
    double b = a;
    try {
        b = first_reaching(k + 1);
    } catch (const Error&) {
        b = vsep;
    }
    return 0.5 * (a + b);
}

Expansion expansion_product(const JacobiModel& md, const Trajectory& tr, double r0) {
    Expansion e;
    const double tau = md.tau(), cphi = md.cos_phi();
    // The entering collision sits at the window edge where the curvature kick
    // is large, so the incoming front is taken as a point source.
    double B = std::numeric_limits<double>::infinity();
    double logp = 0.0, log1 = 0.0, log2 = 0.0;
    for (const auto& s : tr.states) {
        if (s.j == 0) continue;
        const double Bm = std::isinf(B) ? 1.0 / tau : 1.0 / (tau + 1.0 / B);
        B = 2.0 * md.curvature(s.r) / cphi + Bm;
        const double tb = tau * B;
        e.tau_b.push_back(tb);
        const double l = std::log1p(tb);
        logp += l;
        if (s.j <= tr.k_prime) log1 += l;
        if (s.j > tr.k_prime) log2 += l;
    }
    e.lambda_p = std::exp(logp);
    e.lambda1 = std::exp(log1);
    e.lambda2 = std::exp(log2);
    e.lambda_total = tau * md.curvature(r0) / cphi * e.lambda_p;
    e.lambda_vertical = tau / cphi * e.lambda_p;
    return e;
}

ScalingReport scaling_report(const JacobiModel& md, double r0, std::int64_t z_k,
                             const std::vector<std::int64_t>& ks) {
    ScalingReport rep;
    {
        const Trajectory tr = trajectory(md, r0, v0_for_k(md, r0, z_k));
        std::vector<double> j, z;
        const std::int64_t lo = std::max<std::int64_t>(4, tr.k_prime / 16);
        const std::int64_t hi = std::max<std::int64_t>(lo + 2, tr.k_prime / 2);
        for (const auto& s : tr.states) {
            if (s.j < lo || s.j > hi) continue;
            j.push_back(static_cast<double>(s.j));
            z.push_back(std::pow(s.r, -(md.beta - 2.0) / 2.0));
        }
        rep.z_fit = fit_loglog(j, z);
        const ChannelState& s1 = tr.states[1];
        const OdeRun run = ode_limit(md, s1.r, -s1.v, static_cast<double>(tr.k_prime));
        rep.h_drift = run.max_rel_drift;
    }
    std::vector<double> kx, rk;
    for (std::int64_t k : ks) {
        const Trajectory tr = trajectory(md, r0, v0_for_k(md, r0, k));
        rep.ks.push_back(k);
        rep.k_prime.push_back(tr.k_prime);
        rep.k_doubleprime.push_back(tr.k_doubleprime);
        const double r = tr.states[static_cast<std::size_t>(tr.k_prime)].r;
        rep.r_kprime.push_back(r);
        kx.push_back(static_cast<double>(k));
        rk.push_back(r);
    }
    rep.r_kprime_fit = fit_loglog(kx, rk);
    return rep;
}

namespace {

// Real channel orbit near y_m: top flat point of the start cell, moving toward
// the bottom flat point m cells to the left and one row up.
struct ChannelProbe {
    const Table& t;
    std::int64_t m;
    Vec2 axis;  // unit direction of y_m leaving a top flat point

    // Offset along the direction of motion; NaN away from the channel flats.
    double ahead(const PhasePoint& z) const {
        double off = 0.0;
        const double fl = t.nearest_flat(z.r, &off);
        if (fl == 0.0) return off;
        if (std::abs(fl - 0.5 * t.perimeter()) < 1e-9) return -off;
        return std::numeric_limits<double>::quiet_NaN();
    }

    PhasePoint make(double xi, double psi) const {
        PhasePoint z{Component::Scatterer, t.reduce(xi), 0.0};
        const Frame f = frame_of(t, z);
        const double c = std::cos(psi), s = std::sin(psi);
        const Vec2 v{c * axis.x - s * axis.y, s * axis.x + c * axis.y};
        z.phi = std::atan2(dot(v, f.tangent), dot(v, f.normal));
        return z;
    }

    struct Run {
        std::int64_t k = 0;
        bool crossed = false;
        std::vector<PhasePoint> pts;  // in-window collisions
        std::vector<MapStep> steps;
    };

    Run run(const PhasePoint& z0, std::int64_t cap, bool keep) const {
        Run r;
        PhasePoint z = z0;
        double prev = ahead(z);
        for (std::int64_t i = 0; i < cap; ++i) {
            MapStep st;
            try {
                st = scatterer_map(t, z);
            } catch (const Error&) {
                break;
            }
            const double x = ahead(z);
            if (std::isnan(x) || !in_window(t, z, st.event.cells_crossed)) break;
            if ((x > 0) != (prev > 0)) r.crossed = true;
            prev = x;
            ++r.k;
            if (keep) {
                r.pts.push_back(z);
                r.steps.push_back(st);
            }
            // A flight that leaves the y_m channel ends the trap even if the
            // next point sits in some other window.
            if (st.event.cells_crossed != m) break;
            z = st.x1;
        }
        return r;
    }
};

}  // namespace

CocycleReport cross_check_cocycle(const Table& t, std::int64_t m,
                                  const std::vector<std::int64_t>& ks) {
    CocycleReport rep;
    rep.m = m;
    const double h = t.height() - 2.0 * t.a();
    const ChannelProbe probe{t, m, Vec2{-static_cast<double>(m) * t.width(), h}.normalized()};
    const JacobiModel md = jacobi_model(t, m);
    const double r0 = window_edge(md, t.config().epsilon0);
    std::vector<double> kx, ora, mea;
    for (std::int64_t k : ks) {
        const Trajectory tr = trajectory(md, r0, v0_for_k(md, r0, k));
        const Expansion oe = expansion_product(md, tr, r0);
        const double xi = tr.states[1].r;
        const std::int64_t cap = 4 * k + 100;
        auto turns_back = [&](double psi) {
            const auto r = probe.run(probe.make(xi, psi), cap, false);
            return r.k >= 1 && !r.crossed;
        };
        // Bracket the separatrix in the turning angle psi.
        double hi = 0.0;
        double step = 1e-7;
        while (!turns_back(hi) && step < 1e-2) {
            hi += step;
            step *= 2.0;
        }
        if (!turns_back(hi)) continue;
        double lo = hi;
        step = 1e-9;
        while (turns_back(lo) && step < 1e-2) {
            lo = hi - step;
            step *= 2.0;
        }
        if (turns_back(lo)) continue;
        for (int i = 0; i < 200 && hi - lo > 1e-18; ++i) {
            const double mid = 0.5 * (lo + hi);
            if (turns_back(mid))
                hi = mid;
            else
                lo = mid;
        }
        const double psep = hi;
        auto count = [&](double psi) { return probe.run(probe.make(xi, psi), cap, false).k; };
        auto first_reaching = [&](std::int64_t kk) {
            // count grows as psi decreases toward psep.
            double a = psep, b = psep + std::max(1e-7, 4.0 * (psep - lo));
            while (count(b) >= kk && b - psep < 1e-2) b = psep + 2.0 * (b - psep);
            if (count(a) < kk) return std::numeric_limits<double>::quiet_NaN();
            for (int i = 0; i < 200 && b - a > 1e-18; ++i) {
                const double mid = 0.5 * (a + b);
                if (count(mid) >= kk)
                    a = mid;
                else
                    b = mid;
            }
            return a;
        };
        const double pa = first_reaching(k), pb = first_reaching(k + 1);
        if (std::isnan(pa)) continue;
        const double psi = std::isnan(pb) ? pa : 0.5 * (pa + pb);
        const auto run = probe.run(probe.make(xi, psi), cap, true);
        if (run.k != k || run.crossed) continue;

        // Preimage through time reversal; it should be a C_{m,k} point.
        const PhasePoint z1 = run.pts.front();
        const MapStep back = scatterer_map(t, time_reverse(z1));
        const PhasePoint x0 = time_reverse(back.x1);
        CocycleSample smp;
        smp.k = k;
        try {
            const CellLabel lab = classify(t, x0, cap);
            smp.n = lab.n;
            smp.trap_k = lab.trap_k;
        } catch (const Error&) {
        }
        double B = 1.0 / back.event.tau + 2.0 * t.curvature_at(z1.r) / std::cos(z1.phi);
        double logp = 0.0, log1 = 0.0, log2 = 0.0;
        // Turning index: the collision closest to the flat point.
        std::size_t turn = 0;
        for (std::size_t j = 1; j < run.pts.size(); ++j)
            if (probe.ahead(run.pts[j]) < probe.ahead(run.pts[turn])) turn = j;
        for (std::size_t j = 0; j < run.pts.size(); ++j) {
            const MapStep& st = run.steps[j];
            const double l = std::log1p(st.event.tau * B);
            logp += l;
            (j <= turn ? log1 : log2) += l;
            B = wavefront_step(t, run.pts[j], B, st.x1, st.event);
        }
        smp.lambda1 = std::exp(log1);
        smp.lambda2 = std::exp(log2);
        smp.oracle = oe.lambda_p;
        smp.measured = std::exp(logp);
        smp.ratio = smp.oracle / smp.measured;
        rep.samples.push_back(smp);
        kx.push_back(static_cast<double>(k));
        ora.push_back(smp.oracle);
        mea.push_back(smp.measured);
    }
    if (rep.samples.size() < 2) {
        std::ostringstream os;
        os << "found " << rep.samples.size() << " trapped orbits for m=" << m;
        throw Error(ErrorKind::InsufficientOrbits, os.str());
    }
    rep.oracle_fit = fit_loglog(kx, ora);
    rep.measured_fit = fit_loglog(kx, mea);
    return rep;
}

}  // namespace flatbill

#include "flatbill/cells.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "flatbill/error.hpp"

namespace flatbill {

namespace {

constexpr double kHalfPi = std::numbers::pi / 2.0;

PhasePoint top_point(const Table& t, double r, double theta) {
    // r > 0 looks left with phi > 0; r < 0 is the mirror image.
    const double phi = r >= 0 ? kHalfPi - theta : -(kHalfPi - theta);
    return {Component::Scatterer, t.reduce(r), phi};
}

// Bisection on a monotone predicate: pred(lo) true, pred(hi) false.
template <class Pred>
double bisect(Pred pred, double lo, double hi, int iters = 60) {
    for (int i = 0; i < iters && hi - lo > 1e-300; ++i) {
        const double mid = 0.5 * (lo + hi);
        if (mid <= lo || mid >= hi) break;
        if (pred(mid))
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

std::int64_t cells_or_overflow(const Table& t, const PhasePoint& x) {
    try {
        return scatterer_map(t, x).event.cells_crossed;
    } catch (const Error& e) {
        if (e.kind() == ErrorKind::HorizonOverflow) return t.config().max_flight_cells + 1;
        throw;
    }
}

bool hits_neighbour(const Table& t, double r, double theta) {
    MapStep s;
    try {
        s = scatterer_map(t, top_point(t, r, theta));
    } catch (const Error& e) {
        if (e.kind() == ErrorKind::HorizonOverflow) return false;
        throw;
    }
    const std::int64_t want = r >= 0 ? -1 : 1;
    return s.event.di == want && s.event.dj == 0;
}

double s_prime_theta(const Table& t, double r, bool& ok) {
    ok = false;
    const double ar = std::abs(r);
    const double c = t.profile_c(), b = t.beta();
    double hi = 2.0 * (b * c * std::pow(ar, b - 1.0) + c * std::pow(ar, b) / t.width()) + 1e-300;
    try {
        while (hits_neighbour(t, r, hi)) {
            hi *= 2.0;
            if (hi > 1.0) return 0.0;
        }
        if (!hits_neighbour(t, r, 0.0)) return 0.0;
        ok = true;
        return bisect([&](double th) { return hits_neighbour(t, r, th); }, 0.0, hi);
    } catch (const Error&) {
        ok = false;
        return 0.0;
    }
}

}  // namespace

int homogeneity_index(double phi, int k0) {
    const double th = kHalfPi - std::abs(phi);
    const double k = th > 0.0 ? std::floor(1.0 / std::sqrt(th)) : 1e9;
    if (k < k0) return 0;
    const int ki = k > 1e9 ? 1000000000 : static_cast<int>(k);
    return phi > 0 ? ki : -ki;
}

CellLabel classify(const Table& t, const PhasePoint& x, std::int64_t trap_cap) {
    CellLabel lab;
    const MapStep s = scatterer_map(t, x);
    lab.n = s.event.cells_crossed;
    lab.in_window = in_window(t, x, lab.n);
    lab.part = kHalfPi - std::abs(x.phi) < 1.0 / static_cast<double>(lab.n) ? Part::CPrime
                                                                            : Part::CDoublePrime;
    const InducedResult ir = induced_map(t, x, MapBase::ScattererMap, trap_cap);
    lab.trap_k = ir.R - 1;
    lab.trap_capped = ir.censored;
    lab.homogeneity = homogeneity_index(x.phi, t.config().k0);

    double off = 0.0;
    const double flat = t.nearest_flat(x.r, &off);
    const double tol = t.config().newton_tol;
    if (std::abs(off) < tol) {
        const bool horizontal = std::lround(flat / (2.0 * t.octant_length())) % 2 == 0;
        const double period = horizontal ? t.width() : t.height();
        const double gap = (horizontal ? t.height() : t.width()) - 2.0 * t.a();
        const double phi_m = std::atan(static_cast<double>(lab.n) * period / gap);
        lab.near_periodic = std::abs(std::abs(x.phi) - phi_m) < tol;
    }
    return lab;
}

std::vector<CurvePoint> trace_singularity_s_prime(const Table& t, const std::vector<double>& r_grid) {
    std::vector<CurvePoint> out;
    out.reserve(r_grid.size());
    for (double r : r_grid) {
        CurvePoint p;
        p.r = r;
        p.theta = s_prime_theta(t, r, p.ok);
        p.phi = r >= 0 ? kHalfPi - p.theta : -(kHalfPi - p.theta);
        out.push_back(p);
    }
    return out;
}

std::vector<CurvePoint> trace_singularity_s_n(const Table& t, std::int64_t n,
                                              const std::vector<double>& r_grid) {
    if (n < 2) throw Error(ErrorKind::BisectionFailure, "s_n needs n >= 2");
    std::vector<CurvePoint> out;
    out.reserve(r_grid.size());
    for (double r : r_grid) {
        CurvePoint p;
        p.r = r;
        bool ok = false;
        const double th0 = r == 0.0 ? 0.0 : s_prime_theta(t, r, ok);
        if (r != 0.0 && !ok) {
            out.push_back(p);
            continue;
        }
        auto pred = [&](double th) { return cells_or_overflow(t, top_point(t, r, th)) >= n; };
        try {
            double lo = th0 > 0 ? th0 * (1.0 + 1e-12) : 1e-300;
            double hi = std::max(2.0 * lo, 2.0 / static_cast<double>(n));
            if (!pred(lo)) {
                out.push_back(p);
                continue;
            }
            while (pred(hi)) {
                lo = hi;
                hi *= 2.0;
                if (hi > 1.0) break;
            }
            if (pred(hi)) {
                out.push_back(p);
                continue;
            }
            p.theta = bisect(pred, lo, hi);
            p.ok = true;
        } catch (const Error&) {
            p.ok = false;
        }
        p.phi = r >= 0 ? kHalfPi - p.theta : -(kHalfPi - p.theta);
        out.push_back(p);
    }
    return out;
}

std::int64_t max_cell_from(const Table& t, double r) {
    bool ok = false;
    const double th = s_prime_theta(t, r, ok);
    if (!ok) return 0;
    return cells_or_overflow(t, top_point(t, r, th * (1.0 + 1e-9) + 1e-300));
}

double cell_r_extent(const Table& t, std::int64_t n) {
    // max_cell_from decreases with r; find where it falls below n.
    double lo = 1e-6, hi = t.octant_length();
    while (max_cell_from(t, lo) < n && lo > 1e-12) lo *= 0.5;
    if (max_cell_from(t, hi) >= n) return hi;
    return bisect([&](double r) { return max_cell_from(t, r) >= n; }, lo, hi, 60);
}

PeriodicOrbit periodic_point(const Table& t, std::int64_t m) {
    if (m < 1) throw Error(ErrorKind::ShootingDivergence, "m must be >= 1");
    const double W = t.width(), h = t.height() - 2.0 * t.a();
    const double target = 0.5 * t.perimeter();  // bottom flat point
    auto residual = [&](double phi, PeriodicOrbit* keep) {
        const PhasePoint x{Component::Scatterer, 0.0, phi};
        const MapStep s = scatterer_map(t, x);
        if (s.event.di != -m || s.event.dj != 1) return std::numeric_limits<double>::quiet_NaN();
        if (keep) {
            keep->partner = s.x1;
            keep->tau = s.event.tau;
        }
        return s.x1.r - target;
    };
    PeriodicOrbit po;
    double p0 = std::atan(static_cast<double>(m) * W / h);
    double p1 = p0 + 1e-9;
    double f0 = residual(p0, nullptr), f1 = residual(p1, nullptr);
    for (int it = 0; it < 50; ++it) {
        po.iterations = it + 1;
        if (!std::isfinite(f0) || !std::isfinite(f1)) break;
        if (std::abs(f1) < t.config().newton_tol) {
            p0 = p1;
            f0 = f1;
            break;
        }
        if (f1 == f0) break;
        const double p2 = p1 - f1 * (p1 - p0) / (f1 - f0);
        p0 = p1;
        f0 = f1;
        p1 = p2;
        f1 = residual(p1, nullptr);
        if (std::abs(f1) < t.config().newton_tol) {
            p0 = p1;
            f0 = f1;
            break;
        }
    }
    if (!std::isfinite(f0) || std::abs(f0) >= t.config().newton_tol) {
        std::ostringstream os;
        os << "m=" << m << " last phi=" << p0 << " residual=" << f0;
        throw Error(ErrorKind::ShootingDivergence, os.str());
    }
    po.y = {Component::Scatterer, 0.0, p0};
    residual(p0, &po);
    po.residual = std::abs(f0);
    if (t.curvature_at(po.y.r) > 1e-10 || t.curvature_at(po.partner.r) > 1e-10)
        throw Error(ErrorKind::ShootingDivergence, "periodic orbit endpoints are not flat");
    return po;
}

double periodic_log_expansion(const Table& t, std::int64_t m, int periods) {
    const PeriodicOrbit po = periodic_point(t, m);
    // Start at the top of the unstable cone and transport the wavefront.
    PhasePoint x = po.y;
    double B = 1.0 / (tau_min(t) * std::cos(x.phi));
    double log_sum = 0.0;
    for (int p = 0; p < 2 * periods; ++p) {
        const MapStep s = scatterer_map(t, x);
        log_sum += std::log1p(s.event.tau * B);
        B = wavefront_step(t, x, B, s.x1, s.event);
        x = s.x1;
    }
    return log_sum / periods;
}

WindowEnds window_endpoints(const Table& t, std::int64_t m) {
    const double w = window_halfwidth(t, m);
    WindowEnds e;
    e.q1 = -w;
    e.q2 = w;
    e.curvature_at_endpoint = t.curvature_at(w);
    return e;
}

}  // namespace flatbill

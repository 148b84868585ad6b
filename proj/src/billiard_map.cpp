#include "flatbill/billiard_map.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <tuple>

#include "flatbill/error.hpp"

namespace flatbill {

Frame frame_of(const Table& t, const PhasePoint& x) {
    Frame f;
    if (x.component == Component::Scatterer) {
        const BoundaryPointData b = t.boundary_at(x.r);
        f.position = b.position;
        f.tangent = b.unit_tangent;
        f.normal = b.inward_normal;
        f.curvature = b.curvature;
    } else {
        f.position = wall_position(t, x.component, x.r);
        f.tangent = wall_tangent(x.component);
        f.normal = wall_normal(x.component);
    }
    return f;
}

Vec2 velocity_of(const Frame& f, double phi) {
    return std::cos(phi) * f.normal + std::sin(phi) * f.tangent;
}

double curvature_of(const Table& t, const PhasePoint& x) {
    return x.component == Component::Scatterer ? t.curvature_at(x.r) : 0.0;
}

MapStep map_step(const Table& t, const PhasePoint& x, Mode mode) {
    const Frame f = frame_of(t, x);
    const Vec2 v = velocity_of(f, x.phi);
    Vec2 origin = f.position;
    StartOn start = x.component == Component::Scatterer ? StartOn::Scatterer : StartOn::Wall;
    double tau = 0.0;
    std::int64_t di = 0, dj = 0;
    int passed = 0;
    CollisionEvent ev;
    for (;;) {
        ev = next_collision(t, Ray{origin, v}, mode, start);
        tau += ev.tau;
        di += ev.di;
        dj += ev.dj;
        if (!(ev.boundary_kind == Component::Scatterer && ev.tangential)) break;
        // A graze does not end the free path.
        origin = ev.hit;
        start = StartOn::Scatterer;
        if (++passed > t.config().max_flight_cells)
            throw Error(ErrorKind::HorizonOverflow, "too many tangential grazes in one flight");
    }
    ev.tau = tau;
    ev.di = di;
    ev.dj = dj;
    ev.cells_crossed = std::max(std::abs(di), std::abs(dj));
    ev.passed_tangencies = passed;

    MapStep out;
    out.event = ev;
    out.x1.component = ev.boundary_kind;
    out.x1.r = ev.hit_r;
    Vec2 n1 = ev.boundary_kind == Component::Scatterer ? t.grad_g(ev.hit).normalized()
                                                       : wall_normal(ev.boundary_kind);
    const Vec2 t1 = rotate_ccw(n1);
    const Vec2 v1 = reflect(v, n1);
    out.x1.phi = std::atan2(dot(v1, t1), dot(v1, n1));
    return out;
}

MapStep full_map(const Table& t, const PhasePoint& x) { return map_step(t, x, Mode::Rectangle); }

MapStep scatterer_map(const Table& t, const PhasePoint& x) {
    if (x.component != Component::Scatterer)
        throw Error(ErrorKind::DegenerateStart, "scatterer_map needs a scatterer point");
    return map_step(t, x, Mode::Torus);
}

double window_halfwidth(const Table& t, std::int64_t m) {
    if (m < 1) m = 1;
    return t.config().epsilon0 * std::pow(static_cast<double>(m), -1.0 / (t.beta() - 1.0));
}

bool in_window(const Table& t, const PhasePoint& x, std::int64_t m) {
    if (x.component != Component::Scatterer) return false;
    double off = 0.0;
    t.nearest_flat(x.r, &off);
    return std::abs(off) <= window_halfwidth(t, m);
}

PhasePoint mirror_x(const Table& t, const PhasePoint& x) {
    PhasePoint y = x;
    y.phi = -x.phi;
    switch (x.component) {
        case Component::Scatterer: y.r = t.reduce(-x.r); break;
        case Component::East: y.component = Component::West; y.r = -x.r; break;
        case Component::West: y.component = Component::East; y.r = -x.r; break;
        default: y.r = -x.r; break;
    }
    return y;
}

PhasePoint mirror_y(const Table& t, const PhasePoint& x) {
    PhasePoint y = x;
    y.phi = -x.phi;
    switch (x.component) {
        case Component::Scatterer: y.r = t.reduce(0.5 * t.perimeter() - x.r); break;
        case Component::North: y.component = Component::South; y.r = -x.r; break;
        case Component::South: y.component = Component::North; y.r = -x.r; break;
        default: y.r = -x.r; break;
    }
    return y;
}

InducedResult induced_map(const Table& t, const PhasePoint& x, MapBase base, std::int64_t cap) {
    InducedResult res;
    MapStep step = scatterer_map(t, x);
    bool fx = false, fy = false;
    for (;;) {
        const CollisionEvent& ev = step.event;
        res.R += base == MapBase::FullMap ? std::abs(ev.di) + std::abs(ev.dj) + 1 : 1;
        res.scatterer_steps += 1;
        res.tau_total += ev.tau;
        fx ^= (ev.di & 1) != 0;
        fy ^= (ev.dj & 1) != 0;
        const PhasePoint y = step.x1;
        MapStep nxt = scatterer_map(t, y);
        if (!in_window(t, y, nxt.event.cells_crossed) || res.scatterer_steps >= cap) {
            res.censored = in_window(t, y, nxt.event.cells_crossed);
            res.y = y;
            if (base == MapBase::FullMap) {
                // Fold the lattice image back into the rectangle.
                if (fx) res.y = mirror_x(t, res.y);
                if (fy) res.y = mirror_y(t, res.y);
            }
            res.next = nxt;
            return res;
        }
        step = nxt;
    }
}

StepDerivative differential(const Table& t, const PhasePoint& x, const PhasePoint& x1,
                            const CollisionEvent& ev, double B) {
    const double c1 = std::cos(x1.phi);
    if (std::abs(c1) < kTangencyTol) {
        std::ostringstream os;
        os << "cos(phi1)=" << c1 << " at r1=" << x1.r;
        throw Error(ErrorKind::TangentialDerivative, os.str());
    }
    const long double c = std::cos(static_cast<long double>(x.phi));
    const long double cl1 = std::cos(static_cast<long double>(x1.phi));
    const long double K = curvature_of(t, x), K1 = curvature_of(t, x1);
    const long double tau = ev.tau;
    StepDerivative d;
    d.a11 = -(tau * K + c) / cl1;
    d.a12 = -tau / cl1;
    d.a21 = -(tau * K * K1 + K * cl1 + K1 * c) / cl1;
    d.a22 = -(tau * K1 + cl1) / cl1;
    d.p_expansion = 1.0 + tau * B;
    return d;
}

StepDerivative differential(const Table& t, const PhasePoint& x, const PhasePoint& x1,
                            const CollisionEvent& ev) {
    // Default wavefront: a parallel incoming beam, the bottom edge of the unstable cone.
    const double B = 2.0 * curvature_of(t, x) / std::cos(x.phi);
    return differential(t, x, x1, ev, B);
}

double wavefront_step(const Table& t, const PhasePoint&, double B, const PhasePoint& x1,
                      const CollisionEvent& ev) {
    const double tau = ev.tau;
    double Bm;
    if (std::isinf(B)) {
        Bm = 1.0 / tau;
    } else {
        const double den = 1.0 + tau * B;
        if (std::abs(den) < 1e-12) {
            std::ostringstream os;
            os << "1+tau*B=" << den << " (tau=" << tau << ", B=" << B << ")";
            throw Error(ErrorKind::FocusingBlowup, os.str());
        }
        Bm = B / den;
    }
    return Bm + 2.0 * curvature_of(t, x1) / std::cos(x1.phi);
}

double tau_min(const Table& t) {
    return t.config().mode == Mode::Torus ? t.tau_min_torus() : t.tau_min_rect();
}

Cone cone_check(const Table& t, const PhasePoint& x, double dr, double dphi) {
    if (dr == 0.0) return Cone::Neither;
    const double V = dphi / dr;
    const double K = curvature_of(t, x);
    const double w = 1.0 / tau_min(t);
    if (V >= K && V <= K + w) return Cone::Unstable;
    if (V <= -K && V >= -K - w) return Cone::Stable;
    return Cone::Neither;
}

PhasePoint time_reverse(const PhasePoint& x) { return {x.component, x.r, -x.phi}; }

MetricRatios metrics(const PhasePoint& x, double dr, double dphi, const PhasePoint& x1,
                     double dr1, double dphi1) {
    MetricRatios m;
    m.p_ratio = std::cos(x1.phi) * std::abs(dr1) / (std::cos(x.phi) * std::abs(dr));
    m.euclid_ratio = std::hypot(dr1, dphi1) / std::hypot(dr, dphi);
    return m;
}

LyapunovEstimate lyapunov_estimate(const Table& t, PhasePoint x, std::int64_t steps, Mode mode) {
    constexpr int kRenorm = 64;
    constexpr int kBatch = 4096;
    LyapunovEstimate out;
    double dr = 1.0, dphi = curvature_of(t, x);
    double log_total = 0.0, batch_log = 0.0;
    std::vector<double> batches;
    std::int64_t in_batch = 0;
    auto flush_norm = [&]() {
        const double n = std::hypot(dr, dphi);
        const double l = std::log(n);
        log_total += l;
        batch_log += l;
        dr /= n;
        dphi /= n;
    };
    for (std::int64_t s = 0; s < steps; ++s) {
        const MapStep st = map_step(t, x, mode);
        const StepDerivative D = differential(t, x, st.x1, st.event);
        std::tie(dr, dphi) = D.apply(dr, dphi);
        x = st.x1;
        ++in_batch;
        if ((s + 1) % kRenorm == 0) flush_norm();
        if (in_batch == kBatch) {
            flush_norm();
            batches.push_back(batch_log / kBatch);
            batch_log = 0.0;
            in_batch = 0;
        }
    }
    flush_norm();
    out.steps = steps;
    out.exponent = log_total / static_cast<double>(steps);
    if (batches.size() >= 2) {
        double m = 0.0;
        for (double b : batches) m += b;
        m /= batches.size();
        double v = 0.0;
        for (double b : batches) v += (b - m) * (b - m);
        v /= (batches.size() - 1);
        out.stderr_ = std::sqrt(v / batches.size());
    }
    return out;
}

}  // namespace flatbill

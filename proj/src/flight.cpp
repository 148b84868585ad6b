#include "flatbill/flight.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "flatbill/error.hpp"

namespace flatbill {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Slab test against [-a, a]^2.
bool box_interval(Vec2 o, Vec2 d, double a, double& t0, double& t1) {
    t0 = -kInf;
    t1 = kInf;
    const double oc[2] = {o.x, o.y}, dc[2] = {d.x, d.y};
    for (int k = 0; k < 2; ++k) {
        if (dc[k] == 0.0) {
            if (std::abs(oc[k]) > a) return false;
            continue;
        }
        double ta = (-a - oc[k]) / dc[k], tb = (a - oc[k]) / dc[k];
        if (ta > tb) std::swap(ta, tb);
        t0 = std::max(t0, ta);
        t1 = std::min(t1, tb);
    }
    return t0 <= t1;
}

CollisionEvent scatterer_event(const Table& t, Vec2 hit, Vec2 d, double tau) {
    CollisionEvent ev;
    ev.hit = hit;
    ev.hit_r = t.arclength_of(hit);
    ev.boundary_kind = Component::Scatterer;
    ev.tau = tau;
    const Vec2 n = t.grad_g(hit).normalized();
    ev.cos_phi1 = -dot(d, n);
    ev.tangential = std::abs(ev.cos_phi1) < kTangencyTol;
    return ev;
}

}  // namespace

const char* to_string(Component c) {
    switch (c) {
        case Component::Scatterer: return "scatterer";
        case Component::North: return "north";
        case Component::East: return "east";
        case Component::South: return "south";
        case Component::West: return "west";
    }
    return "?";
}

Vec2 reflect(Vec2 d, Vec2 n) { return d - 2.0 * dot(d, n) * n; }

double intersect_scatterer(const Table& t, Vec2 o, Vec2 d, double t_lo) {
    double tb0, tb1;
    if (!box_interval(o, d, t.a(), tb0, tb1)) return -1.0;
    if (tb1 < t_lo) return -1.0;
    double s = std::max(tb0, t_lo);
    // g is convex along the ray and nonnegative at s, so Newton from the
    // left approaches the first root monotonically.
    for (int it = 0; it < 200; ++it) {
        const Vec2 p = o + s * d;
        const double gv = t.g(p);
        if (gv <= 0.0) return s;
        const double gp = dot(t.grad_g(p), d);
        if (gp >= 0.0) return -1.0;
        const double sn = s - gv / gp;
        if (sn > tb1) return -1.0;
        if (sn - s <= 1e-16 * (1.0 + std::abs(s))) return sn;
        s = sn;
    }
    return s;
}

Vec2 wall_tangent(Component c) {
    switch (c) {
        case Component::North: return {1, 0};
        case Component::East: return {0, -1};
        case Component::South: return {-1, 0};
        case Component::West: return {0, 1};
        default: return {0, 0};
    }
}

Vec2 wall_normal(Component c) { return rotate_cw(wall_tangent(c)); }

Vec2 wall_position(const Table& t, Component c, double r) {
    const double hw = 0.5 * t.width(), hh = 0.5 * t.height();
    switch (c) {
        case Component::North: return {r, hh};
        case Component::East: return {hw, -r};
        case Component::South: return {-r, -hh};
        case Component::West: return {-hw, r};
        default: return {0, 0};
    }
}

double wall_coordinate(const Table&, Component c, Vec2 p) {
    switch (c) {
        case Component::North: return p.x;
        case Component::East: return -p.y;
        case Component::South: return -p.x;
        case Component::West: return p.y;
        default: return 0.0;
    }
}

double wall_length(const Table& t, Component c) {
    return (c == Component::North || c == Component::South) ? t.width() : t.height();
}

CollisionEvent next_collision(const Table& t, const Ray& ray, Mode mode, StartOn start) {
    const Vec2 p = ray.origin;
    const Vec2 d = ray.direction;
    if (start == StartOn::Scatterer) {
        const Vec2 n = t.grad_g(p).normalized();
        if (dot(d, n) < -10.0 * kTangencyTol) {
            std::ostringstream os;
            os << "ray leaves the scatterer inward, d.n=" << dot(d, n);
            throw Error(ErrorKind::DegenerateStart, os.str());
        }
    }
    const double W = t.width(), H = t.height();

    if (mode == Mode::Rectangle) {
        double ts = -1.0;
        if (start != StartOn::Scatterer) ts = intersect_scatterer(t, p, d, 0.0);
        const double tx = d.x > 0 ? (0.5 * W - p.x) / d.x : d.x < 0 ? (-0.5 * W - p.x) / d.x : kInf;
        const double ty = d.y > 0 ? (0.5 * H - p.y) / d.y : d.y < 0 ? (-0.5 * H - p.y) / d.y : kInf;
        const double tw = std::min(tx, ty);
        if (ts >= 0.0 && ts <= tw) return scatterer_event(t, p + ts * d, d, ts);
        CollisionEvent ev;
        ev.tau = tw;
        Vec2 hit = p + tw * d;
        if (tx < ty) {
            ev.boundary_kind = d.x > 0 ? Component::East : Component::West;
            hit.x = d.x > 0 ? 0.5 * W : -0.5 * W;
            hit.y = std::clamp(hit.y, -0.5 * H, 0.5 * H);
        } else {
            ev.boundary_kind = d.y > 0 ? Component::North : Component::South;
            hit.y = d.y > 0 ? 0.5 * H : -0.5 * H;
            hit.x = std::clamp(hit.x, -0.5 * W, 0.5 * W);
        }
        ev.hit = hit;
        ev.hit_r = wall_coordinate(t, ev.boundary_kind, hit);
        ev.cos_phi1 = -dot(d, wall_normal(ev.boundary_kind));
        return ev;
    }

    // Torus: walk the lattice cells the ray passes through, in order.
    const int sx = d.x > 0 ? 1 : (d.x < 0 ? -1 : 0);
    const int sy = d.y > 0 ? 1 : (d.y < 0 ? -1 : 0);
    double tmx = sx > 0 ? (0.5 * W - p.x) / d.x : sx < 0 ? (-0.5 * W - p.x) / d.x : kInf;
    double tmy = sy > 0 ? (0.5 * H - p.y) / d.y : sy < 0 ? (-0.5 * H - p.y) / d.y : kInf;
    const double dtx = sx != 0 ? W / std::abs(d.x) : kInf;
    const double dty = sy != 0 ? H / std::abs(d.y) : kInf;
    const std::int64_t cap = t.config().max_flight_cells;
    std::int64_t i = 0, j = 0;
    for (;;) {
        if (!(start == StartOn::Scatterer && i == 0 && j == 0)) {
            const Vec2 o{p.x - static_cast<double>(i) * W, p.y - static_cast<double>(j) * H};
            const double ts = intersect_scatterer(t, o, d, 0.0);
            if (ts >= 0.0) {
                CollisionEvent ev = scatterer_event(t, o + ts * d, d, ts);
                ev.di = i;
                ev.dj = j;
                ev.cells_crossed = std::max(std::abs(i), std::abs(j));
                return ev;
            }
        }
        if (tmx < tmy) {
            i += sx;
            tmx += dtx;
        } else {
            j += sy;
            tmy += dty;
        }
        if (std::max(std::abs(i), std::abs(j)) > cap) {
            std::ostringstream os;
            os << "free flight exceeds " << cap << " cells from (" << p.x << "," << p.y << ") dir ("
               << d.x << "," << d.y << ")";
            throw Error(ErrorKind::HorizonOverflow, os.str());
        }
    }
}

}  // namespace flatbill

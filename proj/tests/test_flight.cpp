#include <doctest.h>

#include <cmath>
#include <random>

#include "flatbill/billiard_map.hpp"
#include "flatbill/error.hpp"
#include "flatbill/sampling.hpp"

using namespace flatbill;

namespace {

// Brute-force first hit: sample g along the ray, bisect the first sign change.
double brute_hit(const Table& t, Vec2 o, Vec2 d, double t_max, int probes) {
    double prev = t.g(o);
    for (int i = 1; i <= probes; ++i) {
        const double s = t_max * i / probes;
        const double g = t.g(o + d * s);
        if ((g < 0.0) != (prev < 0.0)) {
            double lo = t_max * (i - 1) / probes, hi = s;
            for (int k = 0; k < 80; ++k) {
                const double mid = 0.5 * (lo + hi);
                ((t.g(o + d * mid) < 0.0) == (prev < 0.0) ? lo : hi) = mid;
            }
            return 0.5 * (lo + hi);
        }
        prev = g;
    }
    return -1.0;
}

double wall_exit(const Table& t, Vec2 o, Vec2 d) {
    double best = 1e300;
    const double hx = t.width() / 2, hy = t.height() / 2;
    if (d.x > 0) best = std::min(best, (hx - o.x) / d.x);
    if (d.x < 0) best = std::min(best, (-hx - o.x) / d.x);
    if (d.y > 0) best = std::min(best, (hy - o.y) / d.y);
    if (d.y < 0) best = std::min(best, (-hy - o.y) / d.y);
    return best;
}

}  // namespace

TEST_SUITE("flight") {

TEST_CASE("reflect") {
    const Vec2 r = reflect({0.0, -1.0}, {0.0, 1.0});
    CHECK(r.x == doctest::Approx(0.0));
    CHECK(r.y == doctest::Approx(1.0));
    const Vec2 g = reflect({1.0, 0.0}, {0.0, 1.0});
    CHECK(g.x == 1.0);
    CHECK(g.y == 0.0);
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> U(-std::acos(-1.0), std::acos(-1.0));
    for (int i = 0; i < 1000; ++i) {
        const double a = U(rng), b = U(rng);
        const Vec2 d{std::cos(a), std::sin(a)}, n{std::cos(b), std::sin(b)};
        const Vec2 e = reflect(d, n);
        CHECK(std::abs(dot(e, n) + dot(d, n)) < 1e-14);
        CHECK(e.norm() == doctest::Approx(1.0).epsilon(1e-14));
    }
}

TEST_CASE("axis ray from the east wall") {
    const Table t(TableConfig{});
    const CollisionEvent ev = next_collision(t, {{t.width() / 2, 0.0}, {-1.0, 0.0}}, Mode::Rectangle, StartOn::Wall);
    CHECK(ev.boundary_kind == Component::Scatterer);
    CHECK(ev.tau == doctest::Approx(t.width() / 2 - t.a()).epsilon(1e-12));
    CHECK(ev.hit.x == doctest::Approx(t.a()));
    CHECK(std::abs(ev.hit.y) < 1e-12);
}

TEST_CASE("ray along the channel tangent overflows") {
    TableConfig c;
    c.max_flight_cells = 50;
    const Table t(c);
    const CollisionEvent ev = next_collision(t, {{0.0, t.a()}, {1.0, 0.0}}, Mode::Torus, StartOn::Scatterer);
    CHECK(ev.tangential);
    CHECK(ev.di == 1);
    CHECK(ev.dj == 0);
    const double half_pi = std::acos(0.0);
    for (const double phi : {half_pi, -half_pi}) {
        try {
            scatterer_map(t, {Component::Scatterer, 0.0, phi});
            FAIL("no overflow");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::HorizonOverflow);
        }
    }
}

TEST_CASE("intersection against a dense-sampling oracle") {
    const Table t(TableConfig{});
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> U(0.0, 1.0);
    int compared = 0, mismatched = 0;
    while (compared < 1000) {
        const Vec2 o{(U(rng) - 0.5) * t.width(), (U(rng) - 0.5) * t.height()};
        if (t.g(o) <= 1e-6) continue;
        const double a = 2.0 * std::acos(-1.0) * U(rng);
        const Vec2 d{std::cos(a), std::sin(a)};
        const double tw = wall_exit(t, o, d);
        const CollisionEvent ev = next_collision(t, {o, d}, Mode::Rectangle);
        const double tb = brute_hit(t, o, d, tw, 100000);
        ++compared;
        if (tb > 0.0) {
            if (ev.boundary_kind != Component::Scatterer || std::abs(ev.tau - tb) > 10 * t.config().newton_tol) ++mismatched;
        } else if (ev.boundary_kind == Component::Scatterer) {
            // the oracle can only miss a chord thinner than its probe spacing
            const Vec2 mid = o + d * ev.tau;
            if (std::abs(t.g(mid)) > 1e-9) ++mismatched;
        } else if (std::abs(ev.tau - tw) > 1e-9) {
            ++mismatched;
        }
    }
    CHECK(mismatched == 0);
}

TEST_CASE("free path is at least tau_min") {
    const Table t(TableConfig{});
    Rng rng(4);
    double least = 1e300;
    for (int i = 0; i < 200000; ++i) {
        const PhasePoint x = sample_mu(t, rng);
        try {
            const MapStep s = scatterer_map(t, x);
            if (!s.event.tangential && s.event.passed_tangencies == 0) least = std::min(least, s.event.tau);
        } catch (const Error&) {
        }
    }
    CHECK(least >= t.tau_min_torus() - 1e-9);
    CHECK(least < 1.05 * t.tau_min_torus());
}

TEST_CASE("rectangle orbit unfolds onto the torus orbit") {
    TableConfig c;
    c.mode = Mode::Rectangle;
    const Table t(c);
    Rng rng(12);
    int checked = 0;
    while (checked < 1000) {
        const PhasePoint x = sample_mu(t, rng);
        MapStep torus;
        try {
            torus = scatterer_map(t, x);
        } catch (const Error&) {
            continue;
        }
        if (torus.event.passed_tangencies > 0 || torus.event.cells_crossed > 200) continue;
        PhasePoint y = x;
        double path = 0.0;
        int flips_x = 0, flips_y = 0;
        for (;;) {
            const MapStep s = full_map(t, y);
            path += s.event.tau;
            y = s.x1;
            if (y.component == Component::Scatterer) break;
            if (y.component == Component::East || y.component == Component::West) ++flips_x;
            else ++flips_y;
        }
        ++checked;
        CHECK(path == doctest::Approx(torus.event.tau).epsilon(1e-9));
        Vec2 p = frame_of(t, torus.x1).position;
        if (flips_x % 2) p.x = -p.x;
        if (flips_y % 2) p.y = -p.y;
        const Vec2 q = frame_of(t, y).position;
        CHECK((p - q).norm() < 1e-9);
        CHECK(std::abs(std::abs(y.phi) - std::abs(torus.x1.phi)) < 1e-9);
    }
}

}

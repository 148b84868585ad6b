#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "flatbill/cells.hpp"
#include "flatbill/error.hpp"
#include "flatbill/fit.hpp"
#include "flatbill/sampling.hpp"

using namespace flatbill;

namespace {

const double kHalfPi = std::acos(0.0);

struct Walk {
    std::int64_t n = 0;
    std::int64_t trap_k = 0;
    bool ok = true;
};

// Cell index from a walk of the rectangle map: every wall hit moves the
// unfolded orbit one cell along the current unfolded orientation.
std::int64_t cells_by_walls(const Table& rect, const PhasePoint& x) {
    std::int64_t di = 0, dj = 0;
    int sx = 1, sy = 1;
    PhasePoint y = x;
    for (;;) {
        const MapStep s = full_map(rect, y);
        y = s.x1;
        switch (y.component) {
            case Component::East: di += sx; sx = -sx; break;
            case Component::West: di -= sx; sx = -sx; break;
            case Component::North: dj += sy; sy = -sy; break;
            case Component::South: dj -= sy; sy = -sy; break;
            default: return std::max(std::abs(di), std::abs(dj));
        }
    }
}

Walk raw_walk(const Table& torus, const Table& rect, const PhasePoint& x) {
    Walk w;
    w.n = cells_by_walls(rect, x);
    PhasePoint y = scatterer_map(torus, x).x1;
    for (;;) {
        const std::int64_t m = cells_by_walls(rect, y);
        double off = 0.0;
        torus.nearest_flat(y.r, &off);
        if (std::abs(off) > torus.config().epsilon0 * std::pow(double(m), -1.0 / (torus.beta() - 1.0))) break;
        ++w.trap_k;
        if (w.trap_k > 2000) {
            w.ok = false;
            break;
        }
        y = scatterer_map(torus, y).x1;
    }
    return w;
}

}  // namespace

TEST_SUITE("cells") {

TEST_CASE("normal collision at an axis point") {
    const Table t(TableConfig{});
    const CellLabel lab = classify(t, {Component::Scatterer, 0.75 * t.perimeter(), 0.0});
    CHECK(lab.n == 1);
    CHECK(lab.homogeneity == 0);
    CHECK(lab.part == Part::CDoublePrime);
    // The axis point is a flat point and the window spans every angle.
    CHECK(lab.in_window);
}

TEST_CASE("homogeneity strips") {
    const int k0 = 2;
    const double edge = 1.0 / (k0 * k0);
    CHECK(homogeneity_index(kHalfPi - edge * 1.001, k0) == 0);
    CHECK(homogeneity_index(kHalfPi - edge * 0.999, k0) == k0);
    CHECK(homogeneity_index(-(kHalfPi - edge * 0.999), k0) == -k0);
    CHECK(homogeneity_index(kHalfPi - 1.0 / (10.5 * 10.5), k0) == 10);
    CHECK(homogeneity_index(0.0, k0) == 0);
}

TEST_CASE("part threshold and stable labels") {
    const Table t(TableConfig{});
    TangentialSampler ts(t);
    Rng rng(3);
    int primes = 0;
    for (int i = 0; i < 3000; ++i) {
        const PhasePoint x = ts(rng).x;
        CellLabel a, b;
        try {
            a = classify(t, x, 5000);
            b = classify(t, x, 5000);
        } catch (const Error&) {
            continue;
        }
        CHECK(a.n == b.n);
        CHECK(a.trap_k == b.trap_k);
        CHECK(a.in_window == b.in_window);
        const double theta = kHalfPi - std::abs(x.phi);
        CHECK((a.part == Part::CPrime) == (theta < 1.0 / static_cast<double>(a.n)));
        primes += a.part == Part::CPrime;
    }
    CHECK(primes > 100);

    // A grazing direction at half the threshold in a long cell.
    const double r = 1e-3;
    const std::int64_t n = scatterer_map(t, {Component::Scatterer, r, kHalfPi - 0.01}).event.cells_crossed;
    const PhasePoint x{Component::Scatterer, r, kHalfPi - 0.5 / static_cast<double>(n)};
    const CellLabel lab = classify(t, x, 5000);
    if (lab.n <= 2 * n) CHECK(lab.part == Part::CPrime);
}

TEST_CASE("labels agree with raw trajectory walks") {
    const Table t(TableConfig{});
    TableConfig rc;
    rc.mode = Mode::Rectangle;
    const Table rect(rc);
    WindowSampler ws(t);
    TangentialSampler ts(t);
    Rng rng(17);
    int audited = 0, trapped = 0;
    for (int i = 0; i < 1000; ++i) {
        const PhasePoint x = (i % 2) ? ts(rng).x : ws(rng).x;
        CellLabel lab;
        Walk w;
        try {
            lab = classify(t, x, 2000);
            w = raw_walk(t, rect, x);
        } catch (const Error&) {
            continue;
        }
        if (lab.trap_capped || !w.ok) continue;
        ++audited;
        trapped += lab.trap_k > 0;
        CHECK(lab.n == w.n);
        CHECK(lab.trap_k == w.trap_k);
    }
    CHECK(audited > 900);
    CHECK(trapped > 50);
}

TEST_CASE("tangency curve s'") {
    const Table t(TableConfig{});
    std::vector<double> grid;
    for (int i = 0; i <= 10; ++i) grid.push_back(0.01 * std::pow(10.0, i / 10.0));
    const auto pts = trace_singularity_s_prime(t, grid);
    double prev_theta = 0.0;
    for (const auto& p : pts) {
        REQUIRE(p.ok);
        CHECK(p.theta > prev_theta);  // phi decreases as r grows
        prev_theta = p.theta;
        const double ratio = p.theta / (t.profile_c() * std::pow(p.r, t.beta() - 1.0));
        CHECK(ratio == doctest::Approx(t.beta()).epsilon(0.1));
    }
    // theta -> 0 at the flat point
    CHECK(pts.front().theta < 1e-5);
    CHECK(pts.front().theta < 1e-2 * pts.back().theta);
}

TEST_CASE("cell boundaries s_n") {
    // Channel as wide as one period, so that the flight angle is 1/n.
    TableConfig c;
    c.scatterer_radius = std::cbrt(0.25);
    c.rect_height = 4.0;
    c.rect_width = 4.0 - 2.0 * c.scatterer_radius;
    const Table t(c);
    for (std::int64_t n : {20, 50, 100}) {
        const auto p = trace_singularity_s_n(t, n, {0.0});
        REQUIRE(p[0].ok);
        const double ratio = p[0].theta * static_cast<double>(n);
        CHECK(ratio >= 0.75);
        CHECK(ratio <= 1.25);
    }
    std::vector<double> grid;
    for (int i = -2; i <= 2; ++i) grid.push_back(0.03 * i);
    for (std::int64_t n : {10, 20, 40}) {
        const auto a = trace_singularity_s_n(t, n, grid);
        const auto b = trace_singularity_s_n(t, n + 1, grid);
        for (std::size_t i = 0; i < grid.size(); ++i) {
            if (!a[i].ok || !b[i].ok) continue;
            CHECK(b[i].theta < a[i].theta);
        }
    }
}

TEST_CASE("r-extent of long cells") {
    const Table t(TableConfig{});
    std::vector<double> n, ext;
    for (std::int64_t k : {128, 256, 512, 1024}) {
        n.push_back(static_cast<double>(k));
        ext.push_back(cell_r_extent(t, k));
    }
    const LineFit f = fit_loglog(n, ext);
    CHECK(f.slope == doctest::Approx(-1.0 / t.beta()).epsilon(0.15));
}

TEST_CASE("channel periodic points") {
    const Table t(TableConfig{});
    for (std::int64_t m = 1; m <= 20; ++m) {
        const PeriodicOrbit po = periodic_point(t, m);
        CHECK(po.residual < t.config().newton_tol);
        CHECK(in_window(t, po.y, m));
        CHECK(in_window(t, po.partner, m));
        const double want = std::atan(static_cast<double>(m) * t.width() / (t.height() - 2 * t.a()));
        CHECK(po.y.phi == doctest::Approx(want).epsilon(1e-9));
        const MapStep back = scatterer_map(t, po.partner);
        CHECK(std::abs(std::remainder(back.x1.r, t.perimeter())) < 1e-9);
    }
    // The orbit is parabolic: expansion per period dies out as the orbit is followed.
    for (std::int64_t m : {2, 5, 10}) {
        const double e10 = periodic_log_expansion(t, m, 10);
        const double e100 = periodic_log_expansion(t, m, 100);
        const double e1000 = periodic_log_expansion(t, m, 1000);
        CHECK(e100 < e10);
        CHECK(e1000 < e100);
        CHECK(e1000 < 0.02);
    }
}

TEST_CASE("window endpoints") {
    const Table t(TableConfig{});
    const WindowEnds w1 = window_endpoints(t, 1);
    CHECK(w1.q1 == doctest::Approx(-t.config().epsilon0));
    CHECK(w1.q2 == doctest::Approx(t.config().epsilon0));
    std::vector<double> m, q, k;
    for (int e = 2; e <= 4; ++e) {
        for (int s = 1; s < 10; s += 3) {
            const double mm = s * std::pow(10.0, e);
            const WindowEnds w = window_endpoints(t, static_cast<std::int64_t>(mm));
            m.push_back(mm);
            q.push_back(w.q2);
            k.push_back(w.curvature_at_endpoint);
        }
    }
    CHECK(std::abs(fit_loglog(m, q).slope + 1.0 / (t.beta() - 1.0)) < 1e-12);
    CHECK(fit_loglog(m, k).slope == doctest::Approx(-1.0 + 1.0 / (t.beta() - 1.0)).epsilon(0.1));
}

TEST_CASE("transitions between channel cells") {
    // m of the image cell stays between n^((b-1)/b) and n^(b/(b-1)) up to
    // constants. Only flights along a channel count: grazing hits on the next
    // scatterer of a row and the diagonal corridors are outside that picture.
    const Table t(TableConfig{});
    TangentialSampler ts(t);
    Rng rng(41);
    const double b = t.beta();
    const double s_lo = (b - 1.0) / b, s_hi = b / (b - 1.0);
    auto channel = [](const CollisionEvent& e) { return std::min(std::abs(e.di), std::abs(e.dj)) == 1; };
    std::vector<std::pair<double, double>> low, high;
    for (int i = 0; i < 100000; ++i) {
        const PhasePoint x = ts(rng).x;
        try {
            const MapStep s = scatterer_map(t, x);
            const std::int64_t n = s.event.cells_crossed;
            if (n < 16 || !channel(s.event)) continue;
            const MapStep s2 = scatterer_map(t, s.x1);
            if (!channel(s2.event)) continue;
            const double ln = std::log(double(n)), lm = std::log(double(s2.event.cells_crossed));
            (n < 128 ? low : high).push_back({lm - s_lo * ln, lm - s_hi * ln});
        } catch (const Error&) {
        }
    }
    REQUIRE(low.size() > 1000);
    REQUIRE(high.size() > 100);
    double c1 = 1e300, c2 = -1e300;
    for (auto [lo, hi] : low) {
        c1 = std::min(c1, lo);
        c2 = std::max(c2, hi);
    }
    int violations = 0;
    for (auto [lo, hi] : high) violations += (lo < c1) || (hi > c2);
    CHECK(violations == 0);
}

}

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "flatbill/cells.hpp"
#include "flatbill/error.hpp"
#include "flatbill/statistics.hpp"

using namespace flatbill;

namespace {

const double kPi = std::acos(-1.0);

struct Moments {
    double mean = 0.0, se = 0.0;
};

Moments moments(const std::vector<double>& v) {
    Moments m;
    for (double x : v) m.mean += x;
    m.mean /= static_cast<double>(v.size());
    double s = 0.0;
    for (double x : v) s += (x - m.mean) * (x - m.mean);
    m.se = std::sqrt(s / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
    return m;
}

}  // namespace

TEST_SUITE("statistics") {

TEST_CASE("invariant measure sampler") {
    const Table t(TableConfig{});
    Rng rng(1);
    const int N = 200000;
    std::vector<double> c(N), p(N), r(N);
    for (int i = 0; i < N; ++i) {
        const PhasePoint x = sample_mu(t, rng);
        c[i] = std::cos(x.phi);
        p[i] = x.phi;
        r[i] = x.r / t.perimeter();
    }
    const Moments mc = moments(c), mp = moments(p);
    CHECK(std::abs(mc.mean - kPi / 4) < 4 * mc.se);
    CHECK(std::abs(mp.mean) < 4 * mp.se);
    std::sort(r.begin(), r.end());
    double D = 0.0;
    for (int i = 0; i < N; ++i) D = std::max({D, std::abs(r[i] - double(i) / N), std::abs(r[i] - double(i + 1) / N)});
    CHECK(D * std::sqrt(double(N)) < 1.63);  // Kolmogorov 1% point
}

TEST_CASE("importance weights") {
    const Table t(TableConfig{});
    Rng rng(2);
    const TangentialSampler ts(t);
    const WindowSampler ws(t);
    const int N = 200000;
    std::vector<double> wt(N), wg(N), ww(N);
    const double delta = 0.01;
    for (int i = 0; i < N; ++i) {
        const WeightedPoint a = ts(rng);
        wt[i] = a.w;
        wg[i] = (kPi / 2 - std::abs(a.x.phi) < delta) ? a.w : 0.0;
        ww[i] = ws(rng).w;
    }
    const Moments mt = moments(wt), mg = moments(wg), mw = moments(ww);
    CHECK(std::abs(mt.mean - 1.0) < 4 * mt.se);
    CHECK(std::abs(mg.mean - (1.0 - std::cos(delta))) < 4 * mg.se);
    CHECK(std::abs(mw.mean - 8.0 * t.config().epsilon0 / t.perimeter()) < 4 * mw.se);
}

TEST_CASE("fixed point sums merge exactly") {
    FixedSum a, b, c;
    a.add(0.1);
    b.add(1e-9);
    c.add(123.456);
    FixedSum x = a, y = b;
    x.merge(b);
    x.merge(c);
    y.merge(c);
    FixedSum z = a;
    z.merge(y);
    CHECK(x == z);
    CHECK(x.value() == doctest::Approx(123.556000001));

    BinAccumulator p(3), q(3), s(3);
    p.add_sample(0.5);
    p.add(0, 0.5);
    q.add_sample(2.0);
    q.add(1, 2.0);
    s.add_sample(0.25);
    s.add(0, 0.25);
    BinAccumulator l = p, r = q;
    l.merge(q);
    l.merge(s);
    r.merge(s);
    BinAccumulator rr = p;
    rr.merge(r);
    CHECK(l == rr);
    CHECK(l.samples() == 3);
    CHECK(l.hits(0) == 2);
}

TEST_CASE("results do not depend on the thread count") {
    const Table t(TableConfig{});
    EstimatorOptions one, three;
    one.threads = 1;
    three.threads = 3;
    one.batch_size = three.batch_size = 5000;
    const CellProfile a = cell_measure_profile(t, 32, 40000, one);
    const CellProfile b = cell_measure_profile(t, 32, 40000, three);
    CHECK(a.mu == b.mu);
    CHECK(a.hits == b.hits);
    const TrapTable ta = trap_scan(t, 8, 64, 20000, one);
    const TrapTable tb = trap_scan(t, 8, 64, 20000, three);
    CHECK(ta.acc == tb.acc);
    // and a different seed gives a different sample
    EstimatorOptions other = one;
    other.seed = 2;
    CHECK(cell_measure_profile(t, 32, 40000, other).hits != a.hits);
}

TEST_CASE("cell measures: direct and tangential sampling agree") {
    const Table t(TableConfig{});
    EstimatorOptions opt;
    opt.batch_size = 50000;
    const CellProfile d = cell_measure_profile(t, 12, 400000, opt, CellSampling::Direct, 4);
    const CellProfile g = cell_measure_profile(t, 12, 400000, opt, CellSampling::Tangential, 4);
    for (std::size_t i = 0; i < d.n.size(); ++i) {
        if (d.hits[i] < 50) continue;
        const double se = std::hypot(d.stderr_[i], g.stderr_[i]);
        CHECK(std::abs(d.mu[i] - g.mu[i]) < 4.5 * se);
    }
    for (std::size_t i = 1; i < g.survival.survival.size(); ++i)
        CHECK(g.survival.survival[i] <= g.survival.survival[i - 1]);
}

TEST_CASE("trap table agrees with direct classification") {
    const Table t(TableConfig{});
    EstimatorOptions opt;
    opt.trap_cap = 5000;
    const TrapTable tt = trap_scan(t, 4, 4096, 200000, opt);
    // Direct: mu-random x outside its window, counted by trap depth.
    Rng rng(8);
    const int N = 400000;
    std::vector<std::vector<double>> hit(5, std::vector<double>(N, 0.0));
    for (int i = 0; i < N; ++i) {
        const PhasePoint x = sample_mu(t, rng);
        try {
            const CellLabel lab = classify(t, x, 5000);
            if (lab.in_window || lab.trap_k < 1 || lab.n > 4) continue;
            hit[static_cast<std::size_t>(lab.n)][static_cast<std::size_t>(i)] = 1.0;
        } catch (const Error&) {
        }
    }
    for (std::int64_t m = 1; m <= 4; ++m) {
        const Moments md = moments(hit[static_cast<std::size_t>(m)]);
        double scan = 0.0, var = 0.0;
        for (std::size_t b = 0; b < tt.nbins(); ++b) {
            scan += tt.mass(m, b);
            const double e = tt.acc.stderr_of(static_cast<std::size_t>(m) * tt.nbins() + b);
            var += e * e;
        }
        CHECK(md.mean > 0.0);
        CHECK(std::abs(scan - md.mean) < 4.5 * std::sqrt(var + md.se * md.se));
    }
}

TEST_CASE("correlations") {
    const Table t(TableConfig{});
    EstimatorOptions opt;
    opt.threads = 1;
    const CorrelationSeries cc = correlation(t, OrbitMap::FullMap, Observable::Constant, Observable::Constant, 8, 20000, opt, 4);
    for (double v : cc.c_n) CHECK(std::abs(v) < 1e-12);
    const CorrelationSeries pp = correlation(t, OrbitMap::FullMap, Observable::Phi, Observable::Phi, 4, 400000, opt, 8);
    CHECK(pp.c_n[0] == doctest::Approx(kPi * kPi / 4 - 2).epsilon(0.02));
    CHECK(std::abs(pp.mean_f) < 0.01);
}

TEST_CASE("bump support stays clear of the windows") {
    const Table t(TableConfig{});
    const BumpSpec b = default_bump(t);
    CHECK(b.r_half > 0.0);
    for (double u = -1.0; u <= 1.0; u += 0.01) {
        double off = 0.0;
        t.nearest_flat(b.r_center + u * b.r_half, &off);
        CHECK(std::abs(off) > t.config().epsilon0);
    }
    CHECK(observe(t, Observable::Bump, {Component::Scatterer, b.r_center, 0.0}) == doctest::Approx(1.0));
    CHECK(observe(t, Observable::Bump, {Component::Scatterer, b.r_center + b.r_half, 0.0}) == 0.0);
    CHECK(observe(t, Observable::Bump, {Component::North, 0.0, 0.0}) == 0.0);
}

TEST_CASE("one-step sums") {
    const Table t(TableConfig{});
    EstimatorOptions opt;
    opt.seed = 4;
    const OneStepResult single = one_step_expansion(t, 1e-4, 20, opt, false, 200);
    REQUIRE(single.trials.size() == 20);
    for (const auto& tr : single.trials) {
        if (tr.pieces == 1) CHECK(tr.sum < 1.0);
        CHECK(tr.sum > 0.0);
    }
    const OneStepResult split = one_step_expansion(t, 1e-3, 3, opt, true, 1000);
    for (const auto& tr : split.trials) CHECK(tr.pieces >= 2);
}

TEST_CASE("singularity neighbourhood") {
    const Table t(TableConfig{});
    EstimatorOptions opt;
    const NeighborhoodEstimate ne = singularity_neighborhood(t, {1e-4, 1e-3, 1e-2}, 20000, opt);
    CHECK(ne.measure[0] <= ne.measure[1]);
    CHECK(ne.measure[1] <= ne.measure[2]);
    CHECK(ne.measure[2] > 0.0);

    // Near a traced cell boundary the proxy distance matches the gap to it.
    const auto sn = trace_singularity_s_n(t, 20, {0.0});
    REQUIRE(sn[0].ok);
    const double gap = 1e-3 * sn[0].theta;
    const PhasePoint x{Component::Scatterer, 0.0, kPi / 2 - sn[0].theta - gap};
    const double d = singularity_proxy_distance(t, x, 1e-2);
    CHECK(d <= 2.0 * gap);
    CHECK(d >= 0.5 * gap);
}

TEST_CASE("wilson interval") {
    const auto [lo, hi] = wilson_interval(0.5, 100.0);
    CHECK(lo == doctest::Approx(0.4038).epsilon(1e-3));
    CHECK(hi == doctest::Approx(0.5962).epsilon(1e-3));
}

}

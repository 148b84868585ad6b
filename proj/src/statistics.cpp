#include "flatbill/statistics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <sstream>

#include "flatbill/cells.hpp"
#include "flatbill/error.hpp"

namespace flatbill {

namespace {

constexpr double kHalfPi = std::numbers::pi / 2.0;

int thread_count(const EstimatorOptions& opt) { return opt.threads > 0 ? opt.threads : default_threads(); }

std::int64_t batch_count(std::int64_t samples, std::int64_t batch) {
    return (samples + batch - 1) / batch;
}

std::int64_t batch_len(std::int64_t samples, std::int64_t batch, std::int64_t b) {
    return std::min(batch, samples - b * batch);
}

// Cell index of x's forward flight, or nullopt when the flight cannot be resolved.
std::optional<std::int64_t> cells_of(const Table& t, const PhasePoint& x, MapStep* out = nullptr) {
    try {
        MapStep s = scatterer_map(t, x);
        if (out) *out = s;
        return s.event.cells_crossed;
    } catch (const Error&) {
        return std::nullopt;
    }
}

struct WindowEntry {
    std::int64_t m = 0;  // cell index of the preimage flight
    std::int64_t k = 0;  // consecutive window collisions from z on
    bool censored = false;
};

// z = F(x) for an x in M whose image z lies in its window; nullopt otherwise.
std::optional<WindowEntry> window_entry(const Table& t, const PhasePoint& z, std::int64_t cap) {
    try {
        const MapStep fwd = scatterer_map(t, z);
        if (!in_window(t, z, fwd.event.cells_crossed)) return std::nullopt;
        const MapStep back = scatterer_map(t, time_reverse(z));
        const PhasePoint x = time_reverse(back.x1);
        const std::int64_t m = back.event.cells_crossed;
        if (in_window(t, x, m)) return std::nullopt;
        const InducedResult ir = induced_map(t, x, MapBase::ScattererMap, cap);
        return WindowEntry{m, ir.R - 1, ir.censored};
    } catch (const Error&) {
        return std::nullopt;
    }
}

double bump(double u, double h) {
    const double s = u / h;
    if (std::abs(s) >= 1.0) return 0.0;
    return std::exp(1.0 - 1.0 / (1.0 - s * s));
}

}  // namespace

// ---------------------------------------------------------------- accumulators

void BinAccumulator::resize(std::size_t bins) {
    hits_.assign(bins, 0);
    w_.assign(bins, FixedSum{});
    w2_.assign(bins, FixedSum{});
}

void BinAccumulator::merge(const BinAccumulator& o) {
    if (bins() == 0) resize(o.bins());
    samples_ += o.samples_;
    sum_w_.merge(o.sum_w_);
    sum_w2_.merge(o.sum_w2_);
    for (std::size_t i = 0; i < std::min(bins(), o.bins()); ++i) {
        hits_[i] += o.hits_[i];
        w_[i].merge(o.w_[i]);
        w2_[i].merge(o.w2_[i]);
    }
}

bool BinAccumulator::operator==(const BinAccumulator& o) const {
    return samples_ == o.samples_ && sum_w_ == o.sum_w_ && sum_w2_ == o.sum_w2_ && hits_ == o.hits_ &&
           w_ == o.w_ && w2_ == o.w2_;
}

double BinAccumulator::mean(std::size_t bin) const {
    return samples_ > 0 ? w_[bin].value() / static_cast<double>(samples_) : 0.0;
}

double BinAccumulator::stderr_of(std::size_t bin) const {
    if (samples_ < 2) return 0.0;
    const double n = static_cast<double>(samples_);
    const double m = w_[bin].value() / n;
    const double m2 = w2_[bin].value() / n;
    return std::sqrt(std::max(0.0, m2 - m * m) / n);
}

double BinAccumulator::effective_samples() const {
    const double s2 = sum_w2_.value();
    return s2 > 0.0 ? sum_w_.value() * sum_w_.value() / s2 : 0.0;
}

// ------------------------------------------------------------------ tail fits

std::pair<double, double> wilson_interval(double p, double n, double z) {
    if (n <= 0.0) return {0.0, 1.0};
    p = std::clamp(p, 0.0, 1.0);
    const double z2 = z * z;
    const double den = 1.0 + z2 / n;
    const double centre = (p + z2 / (2.0 * n)) / den;
    const double half = z * std::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n)) / den;
    return {std::max(0.0, centre - half), std::min(1.0, centre + half)};
}

void fit_tail(TailEstimate& t, std::int64_t lo, std::int64_t hi, std::int64_t min_hits) {
    std::vector<double> x, y, w;
    for (std::size_t i = 0; i < t.thresholds.size(); ++i) {
        const std::int64_t n = t.thresholds[i];
        if (n < lo || n > hi) continue;
        if (t.hits[i] < min_hits) {
            std::ostringstream os;
            os << "threshold " << n << " has " << t.hits[i] << " hits (< " << min_hits << ")";
            throw Error(ErrorKind::InsufficientCounts, os.str());
        }
        x.push_back(static_cast<double>(n));
        y.push_back(t.survival[i]);
        const double rel = t.stderr_[i] > 0 ? t.stderr_[i] / t.survival[i] : 1.0;
        w.push_back(1.0 / (rel * rel));
    }
    if (x.size() < 2) throw Error(ErrorKind::InsufficientCounts, "fewer than two points in the fit window");
    t.fit = fit_loglog(x, y, w);
    t.fit_lo = lo;
    t.fit_hi = hi;
}

// --------------------------------------------------------------- cell profile

namespace {

// Standard error of sum over bins [lo, hi] of a disjoint-bin accumulator.
double range_stderr(const BinAccumulator& acc, const std::vector<double>& m2, std::size_t lo,
                    std::size_t hi) {
    double m = 0.0, s2 = 0.0;
    for (std::size_t b = lo; b <= hi; ++b) {
        m += acc.mean(b);
        s2 += m2[b];
    }
    const double n = static_cast<double>(acc.samples());
    return n > 1 ? std::sqrt(std::max(0.0, s2 - m * m) / n) : 0.0;
}

std::vector<double> second_moments(const BinAccumulator& acc) {
    std::vector<double> m2(acc.bins());
    const double n = static_cast<double>(std::max<std::int64_t>(acc.samples(), 1));
    for (std::size_t b = 0; b < acc.bins(); ++b) {
        const double se = acc.stderr_of(b), m = acc.mean(b);
        m2[b] = se * se * n + m * m;
    }
    return m2;
}

}  // namespace

CellProfile cell_measure_profile(const Table& t, std::int64_t n_max, std::int64_t samples,
                                 const EstimatorOptions& opt, CellSampling how, std::int64_t fit_lo) {
    if (n_max < 2) throw Error(ErrorKind::InvalidConfig, "n_max must be >= 2");
    const std::size_t over = static_cast<std::size_t>(n_max + 1), failed = over + 1;
    const TangentialSampler tang(t);
    auto run = [&](std::int64_t b, Rng& rng) {
        BinAccumulator acc(failed + 1);
        const std::int64_t len = batch_len(samples, opt.batch_size, b);
        for (std::int64_t i = 0; i < len; ++i) {
            WeightedPoint p;
            if (how == CellSampling::Direct)
                p.x = sample_mu(t, rng, Space::Scatterer);
            else
                p = tang(rng);
            acc.add_sample(p.w);
            std::size_t bin;
            try {
                const std::int64_t n = scatterer_map(t, p.x).event.cells_crossed;
                bin = n > n_max ? over : static_cast<std::size_t>(n);
            } catch (const Error& e) {
                bin = e.kind() == ErrorKind::HorizonOverflow ? over : failed;
            }
            acc.add(bin, p.w);
        }
        return acc;
    };
    const BinAccumulator acc = run_batches<BinAccumulator>(opt.seed, 0, batch_count(samples, opt.batch_size),
                                                           thread_count(opt), run);
    CellProfile out;
    out.sample_count = acc.samples();
    out.effective_samples = acc.effective_samples();
    out.overflow = acc.hits(over);
    out.fit_lo = fit_lo;
    out.fit_hi = n_max;
    const auto m2 = second_moments(acc);
    std::vector<double> fx, fy, fw;
    for (std::int64_t n = 1; n <= n_max; ++n) {
        const auto b = static_cast<std::size_t>(n);
        out.n.push_back(n);
        out.mu.push_back(acc.mean(b));
        out.stderr_.push_back(acc.stderr_of(b));
        out.hits.push_back(acc.hits(b));
        const auto wi = wilson_interval(acc.mean(b), out.effective_samples);
        out.wilson_lo.push_back(wi.first);
        out.wilson_hi.push_back(wi.second);
        if (n >= fit_lo) {
            if (acc.hits(b) < 25) {
                std::ostringstream os;
                os << "cell " << n << " has " << acc.hits(b) << " hits (< 25)";
                throw Error(ErrorKind::InsufficientCounts, os.str());
            }
            const double rel = acc.stderr_of(b) / acc.mean(b);
            fx.push_back(static_cast<double>(n));
            fy.push_back(acc.mean(b));
            fw.push_back(1.0 / (rel * rel));
        }
        TailEstimate& s = out.survival;
        s.thresholds.push_back(n);
        double sum = 0.0;
        std::int64_t hits = 0;
        for (std::size_t k = b; k <= over; ++k) {
            sum += acc.mean(k);
            hits += acc.hits(k);
        }
        s.survival.push_back(sum);
        s.stderr_.push_back(range_stderr(acc, m2, b, over));
        s.hits.push_back(hits);
    }
    out.density_fit = fit_loglog(fx, fy, fw);
    out.density_fit.x_lo = static_cast<double>(fit_lo);
    out.density_fit.x_hi = static_cast<double>(n_max);
    out.survival.sample_count = out.sample_count;
    out.survival.effective_samples = out.effective_samples;
    out.survival.censored = out.overflow;
    fit_tail(out.survival, fit_lo, n_max);
    return out;
}

// ---------------------------------------------------------------- return tail

ReturnTail return_tail(const Table& t, ReturnKind which, std::int64_t samples, std::int64_t n_max,
                       const EstimatorOptions& opt, std::int64_t fit_lo, std::int64_t fit_hi) {
    if (n_max < 2) throw Error(ErrorKind::InvalidConfig, "n_max must be >= 2");
    // Bins: [0, n_max + 1] all returns by R (top bin = R > n_max), then the
    // same for single-flight returns, then one bin for censored orbits.
    const std::size_t width = static_cast<std::size_t>(n_max + 2);
    const std::size_t cens = 2 * width;
    const WindowSampler ws(t);
    auto run = [&](std::int64_t b, Rng& rng) {
        BinAccumulator acc(cens + 1);
        const std::int64_t len = batch_len(samples, opt.batch_size, b);
        for (std::int64_t i = 0; i < len; ++i) {
            std::int64_t R = 0;
            bool single = false, censored = false;
            double w = 1.0;
            if (which == ReturnKind::R) {
                const PhasePoint x = sample_mu(t, rng, Space::Full);
                acc.add_sample(1.0);
                if (x.component != Component::Scatterer) continue;
                try {
                    const MapStep s = scatterer_map(t, x);
                    if (in_window(t, x, s.event.cells_crossed)) continue;
                    const InducedResult ir = induced_map(t, x, MapBase::FullMap, opt.trap_cap);
                    R = ir.R;
                    single = ir.scatterer_steps == 1;
                    censored = ir.censored;
                } catch (const Error&) {
                    continue;
                }
            } else {
                const WeightedPoint p = ws(rng);
                acc.add_sample(p.w);
                w = p.w;
                if (p.w == 0.0) continue;
                const auto e = window_entry(t, p.x, opt.trap_cap);
                if (!e) continue;
                R = e->k + 1;
                censored = e->censored;
            }
            const std::size_t bin = R > n_max ? width - 1 : static_cast<std::size_t>(R);
            acc.add(bin, w);
            if (single) acc.add(width + bin, w);
            if (censored) acc.add(cens, w);
        }
        return acc;
    };
    const BinAccumulator acc = run_batches<BinAccumulator>(opt.seed, 0, batch_count(samples, opt.batch_size),
                                                           thread_count(opt), run);
    ReturnTail out;
    TailEstimate& tail = out.tail;
    tail.sample_count = acc.samples();
    tail.effective_samples = acc.effective_samples();
    tail.censored = acc.hits(cens);
    const auto m2 = second_moments(acc);
    const std::int64_t first = which == ReturnKind::R ? 1 : 2;
    for (std::int64_t n = first; n <= n_max; ++n) {
        const auto b = static_cast<std::size_t>(n);
        double sum = 0.0;
        std::int64_t hits = 0;
        for (std::size_t k = b; k < width; ++k) {
            sum += acc.mean(k);
            hits += acc.hits(k);
        }
        tail.thresholds.push_back(n);
        tail.survival.push_back(sum);
        tail.stderr_.push_back(range_stderr(acc, m2, b, width - 1));
        tail.hits.push_back(hits);
        const double all = acc.mean(b);
        out.single_flight_fraction.push_back(all > 0 ? acc.mean(width + b) / all : 0.0);
    }
    if (fit_hi <= 0) {
        // Default upper end: last threshold still holding 100 hits.
        fit_hi = fit_lo;
        for (std::size_t i = 0; i < tail.thresholds.size(); ++i)
            if (tail.hits[i] >= 100) fit_hi = std::max(fit_hi, tail.thresholds[i]);
    }
    fit_tail(tail, fit_lo, fit_hi);
    return out;
}

// ---------------------------------------------------------------- trap cells

std::vector<std::int64_t> geometric_k_edges(std::int64_t k_max) {
    std::vector<std::int64_t> e = {1, 2, 3};
    for (std::int64_t base = 4;; base *= 2) {
        e.push_back(base);
        if (base > k_max) break;
        e.push_back(base + base / 4);
        e.push_back(base + base / 2);
    }
    e.push_back(std::numeric_limits<std::int64_t>::max());
    return e;
}

double TrapTable::mass(std::int64_t m, std::size_t b) const {
    return acc.mean(static_cast<std::size_t>(m) * nbins() + b);
}

double TrapTable::density(std::int64_t m, std::size_t b) const {
    return mass(m, b) / static_cast<double>(k_edges[b + 1] - k_edges[b]);
}

double TrapTable::k_center(std::size_t b) const {
    return std::sqrt(static_cast<double>(k_edges[b]) * static_cast<double>(k_edges[b + 1] - 1));
}

double TrapTable::mass_k_at_least(std::int64_t m, std::int64_t k) const {
    double s = 0.0;
    for (std::size_t b = 0; b < nbins(); ++b)
        if (k_edges[b] >= k) s += mass(m, b);
    return s;
}

void TrapTable::merge(const TrapTable& o) {
    if (k_edges.empty()) {
        m_max = o.m_max;
        k_edges = o.k_edges;
    }
    acc.merge(o.acc);
    censored += o.censored;
}

TrapTable trap_scan(const Table& t, std::int64_t m_max, std::int64_t k_max, std::int64_t samples,
                    const EstimatorOptions& opt) {
    const WindowSampler ws(t);
    const auto edges = geometric_k_edges(k_max);
    auto run = [&](std::int64_t b, Rng& rng) {
        TrapTable tt;
        tt.m_max = m_max;
        tt.k_edges = edges;
        tt.acc.resize(static_cast<std::size_t>(m_max + 1) * tt.nbins());
        const std::int64_t len = batch_len(samples, opt.batch_size, b);
        for (std::int64_t i = 0; i < len; ++i) {
            const WeightedPoint p = ws(rng);
            tt.acc.add_sample(p.w);
            if (p.w == 0.0) continue;
            const auto e = window_entry(t, p.x, opt.trap_cap);
            if (!e || e->k < 1) continue;
            if (e->censored) ++tt.censored;
            const std::int64_t m = e->m > m_max ? 0 : e->m;
            const auto kb = static_cast<std::size_t>(
                std::upper_bound(edges.begin(), edges.end(), e->k) - edges.begin() - 1);
            tt.acc.add(static_cast<std::size_t>(m) * tt.nbins() + kb, p.w);
        }
        return tt;
    };
    return run_batches<TrapTable>(opt.seed, 0, batch_count(samples, opt.batch_size), thread_count(opt), run);
}

TrapFits trap_fits(const TrapTable& tt, const TrapFits& windows) {
    TrapFits f = windows;
    const std::size_t nb = tt.nbins();
    auto idx = [&](std::int64_t m, std::size_t b) { return static_cast<std::size_t>(m) * nb + b; };
    {
        std::vector<double> x, y, w;
        for (std::size_t b = 0; b < nb; ++b) {
            if (tt.k_edges[b] < f.k_lo || tt.k_edges[b + 1] > f.k_hi) continue;
            double d = 0.0, var = 0.0;
            std::int64_t hits = 0;
            const double width = static_cast<double>(tt.k_edges[b + 1] - tt.k_edges[b]);
            for (std::int64_t m = f.m_lo; m <= std::min(f.m_hi, tt.m_max); ++m) {
                d += tt.mass(m, b) / width;
                const double se = tt.acc.stderr_of(idx(m, b)) / width;
                var += se * se;
                hits += tt.acc.hits(idx(m, b));
            }
            if (hits < 10 || d <= 0) continue;
            x.push_back(tt.k_center(b));
            y.push_back(d);
            w.push_back(d * d / var);
        }
        f.k_fit = fit_loglog(x, y, w);
    }
    const auto bs = static_cast<std::size_t>(
        std::upper_bound(tt.k_edges.begin(), tt.k_edges.end(), f.k_small) - tt.k_edges.begin() - 1);
    std::vector<double> x, y, w, ys, ws;
    for (std::int64_t m = f.m_fit_lo; m <= std::min(f.m_fit_hi, tt.m_max); ++m) {
        const double v = tt.mass(m, bs), se = tt.acc.stderr_of(idx(m, bs));
        double s = 0.0, var = 0.0;
        for (std::size_t b = 0; b < nb; ++b) {
            s += tt.mass(m, b);
            const double e = tt.acc.stderr_of(idx(m, b));
            var += e * e;
        }
        if (tt.acc.hits(idx(m, bs)) >= 10 && v > 0) {
            x.push_back(static_cast<double>(m));
            y.push_back(v);
            w.push_back(v * v / (se * se));
        }
        if (s > 0 && var > 0) {
            ys.push_back(s);
            ws.push_back(s * s / var);
        } else {
            ys.push_back(0.0);
            ws.push_back(0.0);
        }
    }
    f.m_fit = fit_loglog(x, y, w);
    std::vector<double> xm;
    for (std::int64_t m = f.m_fit_lo; m <= std::min(f.m_fit_hi, tt.m_max); ++m) xm.push_back(static_cast<double>(m));
    f.sum_fit = fit_loglog(xm, ys, ws);
    return f;
}

// ---------------------------------------------------------- conditional return

namespace {

struct CondAcc {
    std::int64_t n_lo = 0, n_hi = 0;
    std::int64_t samples = 0;
    std::vector<std::int64_t> hits;
    // Per n: sum w, w^2, w R, w^2 R, w^2 R^2, and w 1{D_n(a)} for three a.
    std::vector<std::array<FixedSum, 8>> s;
    std::vector<std::int64_t> r_hits;
    std::vector<FixedSum> r_w, r_ok;

    void init(std::int64_t lo, std::int64_t hi) {
        n_lo = lo;
        n_hi = hi;
        const auto k = static_cast<std::size_t>(hi - lo + 1);
        hits.assign(k, 0);
        s.assign(k, {});
        r_hits.assign(k, 0);
        r_w.assign(k, {});
        r_ok.assign(k, {});
    }
    void merge(const CondAcc& o) {
        if (hits.empty()) init(o.n_lo, o.n_hi);
        samples += o.samples;
        for (std::size_t i = 0; i < hits.size(); ++i) {
            hits[i] += o.hits[i];
            for (int j = 0; j < 8; ++j) s[i][j].merge(o.s[i][j]);
            r_hits[i] += o.r_hits[i];
            r_w[i].merge(o.r_w[i]);
            r_ok[i].merge(o.r_ok[i]);
        }
    }
};

}  // namespace

ConditionalReturn conditional_return(const Table& t, std::int64_t n_lo, std::int64_t n_hi,
                                     std::int64_t samples, const EstimatorOptions& opt, double b_log) {
    if (n_lo < 1 || n_hi < n_lo) throw Error(ErrorKind::InvalidConfig, "bad n range");
    const double beta = t.beta();
    const std::array<double, 3> a_values = {0.0, 1.0 / (2.0 * beta), 1.0 / beta};
    const TangentialSampler tang(t);
    auto run = [&](std::int64_t b, Rng& rng) {
        CondAcc acc;
        acc.init(n_lo, n_hi);
        const std::int64_t len = batch_len(samples, opt.batch_size, b);
        for (std::int64_t i = 0; i < len; ++i) {
            const WeightedPoint p = tang(rng);
            ++acc.samples;
            try {
                const MapStep s = scatterer_map(t, p.x);
                const std::int64_t n = s.event.cells_crossed;
                if (in_window(t, p.x, n)) continue;
                const bool in_n = n >= n_lo && n <= n_hi;
                const InducedResult ir = induced_map(t, p.x, MapBase::FullMap, opt.trap_cap);
                const bool in_r = ir.R >= n_lo && ir.R <= n_hi;
                if (!in_n && !in_r) continue;
                if (in_n) {
                    const InducedResult ir2 = induced_map(t, ir.y, MapBase::FullMap, opt.trap_cap);
                    const double R = static_cast<double>(ir2.R), w = p.w;
                    const auto k = static_cast<std::size_t>(n - n_lo);
                    auto& a = acc.s[k];
                    ++acc.hits[k];
                    a[0].add(w);
                    a[1].add(w * w);
                    a[2].add(w * R);
                    a[3].add(w * w * R);
                    a[4].add(w * w * R * R);
                    for (int j = 0; j < 3; ++j)
                        if (R >= std::pow(static_cast<double>(n), 1.0 - a_values[static_cast<std::size_t>(j)]))
                            a[5 + j].add(w);
                }
                if (in_r) {
                    const double m = static_cast<double>(ir.R);
                    const auto L = static_cast<int>(std::ceil(b_log * std::log(m)));
                    const double bound = std::pow(m, 1.0 - 1.0 / (2.0 * beta));
                    bool ok = true;
                    PhasePoint z = ir.y;
                    std::int64_t nz = ir.next.event.cells_crossed;
                    for (int j = 1; j <= L; ++j) {
                        if (static_cast<double>(nz) >= bound) {
                            ok = false;
                            break;
                        }
                        if (j == L) break;
                        const InducedResult nx = induced_map(t, z, MapBase::FullMap, opt.trap_cap);
                        z = nx.y;
                        nz = nx.next.event.cells_crossed;
                    }
                    const auto k = static_cast<std::size_t>(ir.R - n_lo);
                    ++acc.r_hits[k];
                    acc.r_w[k].add(p.w);
                    if (ok) acc.r_ok[k].add(p.w);
                }
            } catch (const Error&) {
                continue;
            }
        }
        return acc;
    };
    const CondAcc acc = run_batches<CondAcc>(opt.seed, 0, batch_count(samples, opt.batch_size),
                                             thread_count(opt), run);
    ConditionalReturn out;
    out.a_values = a_values;
    out.sample_count = acc.samples;
    std::vector<double> x, y, w;
    std::array<std::vector<double>, 3> dy, dw;
    for (std::int64_t n = n_lo; n <= n_hi; ++n) {
        const auto k = static_cast<std::size_t>(n - n_lo);
        const auto& a = acc.s[k];
        ConditionalBin cb;
        cb.n = n;
        cb.hits = acc.hits[k];
        const double sw = a[0].value();
        cb.mass = sw / static_cast<double>(std::max<std::int64_t>(acc.samples, 1));
        if (sw > 0) {
            const double mean = a[2].value() / sw;
            cb.mean_return = mean;
            const double var = a[4].value() - 2.0 * mean * a[3].value() + mean * mean * a[1].value();
            cb.stderr_ = std::sqrt(std::max(0.0, var)) / sw;
            for (int j = 0; j < 3; ++j) cb.d_fraction[static_cast<std::size_t>(j)] = a[5 + j].value() / sw;
        }
        out.bins.push_back(cb);
        if (cb.hits >= 25 && cb.mean_return > 0) {
            x.push_back(static_cast<double>(n));
            y.push_back(cb.mean_return);
            const double rel = cb.stderr_ > 0 ? cb.stderr_ / cb.mean_return : 1.0;
            w.push_back(1.0 / (rel * rel));
            for (std::size_t j = 0; j < 3; ++j) {
                dy[j].push_back(cb.d_fraction[j]);
                dw[j].push_back(static_cast<double>(cb.hits));
            }
        }
        ReturnTrapBin rb;
        rb.m = n;
        rb.hits = acc.r_hits[k];
        const double rw = acc.r_w[k].value();
        rb.fraction_low_cells = rw > 0 ? acc.r_ok[k].value() / rw : 0.0;
        out.return_bins.push_back(rb);
    }
    if (x.size() < 2) throw Error(ErrorKind::InsufficientCounts, "fewer than two cells with 25 conditioned hits");
    out.mean_fit = fit_loglog(x, y, w);
    for (std::size_t j = 0; j < 3; ++j) out.d_fit[j] = fit_loglog(x, dy[j], dw[j]);
    return out;
}

// ---------------------------------------------------------------- correlation

std::string to_string(Observable o) {
    switch (o) {
        case Observable::Constant: return "const";
        case Observable::SinR: return "sin_r";
        case Observable::Phi: return "phi";
        case Observable::Bump: return "bump";
    }
    return "?";
}

Observable observable_from_string(const std::string& s) {
    if (s == "const") return Observable::Constant;
    if (s == "sin_r" || s == "f1") return Observable::SinR;
    if (s == "phi" || s == "f2") return Observable::Phi;
    if (s == "bump" || s == "f3") return Observable::Bump;
    throw Error(ErrorKind::InvalidConfig, "unknown observable '" + s + "'");
}

BumpSpec default_bump(const Table& t) {
    // Wide enough that its correlations rise above the estimator noise, yet
    // clear of the window arcs around the flats on either side.
    const double L8 = t.octant_length();
    return {L8, 0.9 * std::max(0.0, L8 - t.config().epsilon0), 1.5};
}

double observe(const Table& t, Observable o, const PhasePoint& x) {
    switch (o) {
        case Observable::Constant: return 1.0;
        case Observable::Phi: return x.phi;
        case Observable::SinR:
            return x.component == Component::Scatterer
                       ? std::sin(2.0 * std::numbers::pi * x.r / t.perimeter())
                       : 0.0;
        case Observable::Bump: {
            if (x.component != Component::Scatterer) return 0.0;
            const BumpSpec b = default_bump(t);
            return bump(std::remainder(x.r - b.r_center, t.perimeter()), b.r_half) * bump(x.phi, b.phi_half);
        }
    }
    return 0.0;
}

std::pair<double, double> CorrelationSeries::window_mean(std::int64_t lo, std::int64_t hi) const {
    double m = 0.0, s = 0.0;
    int k = 0;
    for (std::size_t i = 0; i < lags.size(); ++i) {
        if (lags[i] < lo || lags[i] > hi) continue;
        m += c_n[i];
        s += stderr_[i];
        ++k;
    }
    if (k == 0) return {0.0, 0.0};
    // Neighbouring lags are strongly correlated; the mean standard error is
    // the conservative choice for the average.
    return {m / k, s / k};
}

namespace {

struct CorrAcc {
    std::vector<std::vector<double>> chains;
    std::vector<double> mf, mg;
    void merge(const CorrAcc& o) {
        chains.insert(chains.end(), o.chains.begin(), o.chains.end());
        mf.insert(mf.end(), o.mf.begin(), o.mf.end());
        mg.insert(mg.end(), o.mg.begin(), o.mg.end());
    }
};

}  // namespace

CorrelationSeries correlation(const Table& t, OrbitMap map, Observable f, Observable g, std::int64_t n_max,
                              std::int64_t orbit_len, const EstimatorOptions& opt, std::int64_t chains) {
    if (chains < 2) throw Error(ErrorKind::InvalidConfig, "correlation needs at least two chains");
    const std::int64_t len = orbit_len / chains;
    if (len <= 4 * n_max) throw Error(ErrorKind::InvalidConfig, "orbit_len must be much larger than n_max");
    const Space space = map == OrbitMap::FullMap ? Space::Full : Space::Scatterer;
    auto step = [&](const PhasePoint& x) {
        return map == OrbitMap::FullMap ? full_map(t, x).x1 : scatterer_map(t, x).x1;
    };
    auto run = [&](std::int64_t, Rng& rng) {
        PhasePoint x = sample_mu(t, rng, space);
        auto advance = [&]() {
            for (;;) {
                try {
                    x = step(x);
                    return;
                } catch (const Error&) {
                    x = sample_mu(t, rng, space);  // restart from a fresh typical point
                }
            }
        };
        for (int i = 0; i < 1000; ++i) advance();
        // Mirrored ring buffer of past g values, so g(x_{i-n}) for n = 0..n_max
        // sits contiguously below past[k + w]; s[n] accumulates f(x_{i+n}) g(x_i).
        const std::size_t w = static_cast<std::size_t>(n_max + 1);
        std::vector<double> past(2 * w, 0.0);
        std::vector<long double> s(w, 0.0L);
        std::vector<double> block(w, 0.0);  // flushed into s every 4096 steps
        long double sf = 0.0L, sg = 0.0L;
        for (std::int64_t i = 0; i < len; ++i) {
            const double fv = observe(t, f, x), gv = observe(t, g, x);
            const std::size_t k = static_cast<std::size_t>(i) % w;
            past[k] = past[k + w] = gv;
            const double* g_back = past.data() + k + w;
            const std::size_t top = static_cast<std::size_t>(std::min(i, n_max));
            for (std::size_t n = 0; n <= top; ++n) block[n] += fv * *(g_back - n);
            if ((i & 4095) == 4095 || i + 1 == len) {
                for (std::size_t n = 0; n < w; ++n) s[n] += block[n];
                std::fill(block.begin(), block.end(), 0.0);
            }
            sf += fv;
            sg += gv;
            advance();
        }
        const double mf = static_cast<double>(sf / static_cast<long double>(len));
        const double mg = static_cast<double>(sg / static_cast<long double>(len));
        std::vector<double> c(w);
        for (std::int64_t n = 0; n <= n_max; ++n)
            c[static_cast<std::size_t>(n)] =
                static_cast<double>(s[static_cast<std::size_t>(n)] / static_cast<long double>(len - n)) - mf * mg;
        CorrAcc acc;
        acc.chains.push_back(std::move(c));
        acc.mf.push_back(mf);
        acc.mg.push_back(mg);
        return acc;
    };
    const CorrAcc acc = run_batches<CorrAcc>(opt.seed, 0, chains, thread_count(opt), run);
    CorrelationSeries out;
    out.f = f;
    out.g = g;
    out.orbit_len = len * chains;
    out.chains = chains;
    const double k = static_cast<double>(chains);
    out.mean_f = std::accumulate(acc.mf.begin(), acc.mf.end(), 0.0) / k;
    out.mean_g = std::accumulate(acc.mg.begin(), acc.mg.end(), 0.0) / k;
    for (std::int64_t n = 0; n <= n_max; ++n) {
        double m = 0.0;
        for (const auto& c : acc.chains) m += c[static_cast<std::size_t>(n)];
        m /= k;
        double v = 0.0;
        for (const auto& c : acc.chains) v += (c[static_cast<std::size_t>(n)] - m) * (c[static_cast<std::size_t>(n)] - m);
        v /= (k - 1.0);
        out.lags.push_back(n);
        out.c_n.push_back(m);
        out.stderr_.push_back(std::sqrt(v / k));
    }
    return out;
}

// ------------------------------------------------------- one-step expansion

namespace {

struct FLabel {
    std::int64_t di = 0, dj = 0, R = 0, sdi = 0, sdj = 0;
    int hom = 0;
    bool window = false, bad = false;
    PhasePoint image;
    bool operator==(const FLabel& o) const {
        return di == o.di && dj == o.dj && R == o.R && sdi == o.sdi && sdj == o.sdj && hom == o.hom &&
               window == o.window && bad == o.bad;
    }
};

FLabel induced_label(const Table& t, const PhasePoint& x) {
    FLabel L;
    if (!(std::abs(x.phi) < kHalfPi)) {
        L.bad = true;
        return L;
    }
    try {
        MapStep s = scatterer_map(t, x);
        L.di = s.event.di;
        L.dj = s.event.dj;
        if (in_window(t, x, s.event.cells_crossed)) {
            L.window = true;
            return L;
        }
        for (;;) {
            ++L.R;
            L.sdi += s.event.di;
            L.sdj += s.event.dj;
            const MapStep nx = scatterer_map(t, s.x1);
            if (!in_window(t, s.x1, nx.event.cells_crossed) || L.R >= 100000) {
                L.image = s.x1;
                L.hom = homogeneity_index(s.x1.phi, t.config().k0);
                return L;
            }
            s = nx;
        }
    } catch (const Error&) {
        L.bad = true;
    }
    return L;
}

struct Curve {
    PhasePoint c;
    double er = 1.0, ephi = 0.0;
    PhasePoint at(double s) const { return {Component::Scatterer, c.r + s * er, c.phi + s * ephi}; }
};

Curve unstable_curve(const Table& t, const PhasePoint& c) {
    const double V = curvature_of(t, c) + 0.5 / t.tau_min_torus();
    const double nrm = std::hypot(1.0, V);
    return {c, 1.0 / nrm, V / nrm};
}

double image_chord(const Table& t, const PhasePoint& a, const PhasePoint& b) {
    return std::hypot(std::remainder(b.r - a.r, t.perimeter()), b.phi - a.phi);
}

// Returns the sum, or nullopt for a degenerate curve; pieces via out param.
std::optional<double> curve_sum(const Table& t, const Curve& cv, double delta, int points, int* pieces) {
    std::vector<double> s(static_cast<std::size_t>(points));
    std::vector<FLabel> lab(static_cast<std::size_t>(points));
    bool any_good = false;
    for (int i = 0; i < points; ++i) {
        s[static_cast<std::size_t>(i)] = -0.5 * delta + delta * i / (points - 1);
        lab[static_cast<std::size_t>(i)] = induced_label(t, cv.at(s[static_cast<std::size_t>(i)]));
        any_good = any_good || !lab[static_cast<std::size_t>(i)].bad;
    }
    if (!any_good) return std::nullopt;
    // Boundaries between runs of equal labels, located by bisection.
    std::vector<double> cuts = {-0.5 * delta};
    std::vector<std::size_t> run_start = {0};
    for (std::size_t i = 0; i + 1 < s.size(); ++i) {
        if (lab[i] == lab[i + 1]) continue;
        double lo = s[i], hi = s[i + 1];
        for (int it = 0; it < 40; ++it) {
            const double mid = 0.5 * (lo + hi);
            if (induced_label(t, cv.at(mid)) == lab[i])
                lo = mid;
            else
                hi = mid;
        }
        cuts.push_back(0.5 * (lo + hi));
        run_start.push_back(i + 1);
    }
    cuts.push_back(0.5 * delta);
    double sum = 0.0;
    int count = 0;
    for (std::size_t p = 0; p + 1 < cuts.size(); ++p) {
        const FLabel& L = lab[run_start[p]];
        if (L.bad || L.window) continue;
        const double a = cuts[p], b = cuts[p + 1], len = b - a;
        if (len <= 0) continue;
        constexpr int kSub = 17;
        PhasePoint prev;
        bool have_prev = false;
        double chord = 0.0, covered = 0.0, prev_s = 0.0;
        for (int j = 0; j < kSub; ++j) {
            const double sj = a + len * (j + 0.5) / kSub;
            const FLabel Lj = induced_label(t, cv.at(sj));
            if (!(Lj == L)) {
                have_prev = false;
                continue;
            }
            if (have_prev) {
                chord += image_chord(t, prev, Lj.image);
                covered += sj - prev_s;
            }
            have_prev = true;
            prev = Lj.image;
            prev_s = sj;
        }
        ++count;
        if (covered <= 0 || chord <= 0) continue;
        sum += len / (chord * len / covered);
    }
    if (pieces) *pieces = count;
    return sum;
}

}  // namespace

double OneStepResult::max_sum() const {
    double m = 0.0;
    for (const auto& tr : trials) m = std::max(m, tr.sum);
    return m;
}

double OneStepResult::mean_sum() const {
    if (trials.empty()) return 0.0;
    double m = 0.0;
    for (const auto& tr : trials) m += tr.sum;
    return m / static_cast<double>(trials.size());
}

OneStepResult one_step_expansion(const Table& t, double delta, int trials, const EstimatorOptions& opt,
                                 bool require_crossing, int points, std::int64_t max_attempts) {
    OneStepResult out;
    out.delta = delta;
    Rng rng = batch_rng(opt.seed, 0);
    const TangentialSampler tang(t);
    std::int64_t degenerate = 0;
    while (static_cast<int>(out.trials.size()) < trials && out.attempts < max_attempts) {
        ++out.attempts;
        const PhasePoint c = tang(rng).x;
        const auto n = cells_of(t, c);
        if (!n || in_window(t, c, *n)) continue;
        const Curve cv = unstable_curve(t, c);
        if (require_crossing) {
            // Cheap pre-scan: skip curves that look like a single branch.
            const FLabel l0 = induced_label(t, cv.at(-0.5 * delta));
            bool split = false;
            for (int i = 1; i <= 8 && !split; ++i) split = !(induced_label(t, cv.at(-0.5 * delta + delta * i / 8)) == l0);
            if (!split) continue;
        }
        int pieces = 0;
        const auto sum = curve_sum(t, cv, delta, points, &pieces);
        if (!sum) {
            ++degenerate;
            continue;
        }
        if (require_crossing && pieces < 2) continue;
        out.trials.push_back({c, *sum, pieces});
    }
    if (out.trials.empty() && degenerate > 0)
        throw Error(ErrorKind::CurveDegenerate, "every sampled curve was tangential");
    return out;
}

OneStepResult one_step_expansion_at(const Table& t, double delta, const std::vector<PhasePoint>& centers,
                                    int points) {
    OneStepResult out;
    out.delta = delta;
    for (const auto& c : centers) {
        ++out.attempts;
        int pieces = 0;
        const auto sum = curve_sum(t, unstable_curve(t, c), delta, points, &pieces);
        if (!sum) throw Error(ErrorKind::CurveDegenerate, "curve made only of tangential points");
        out.trials.push_back({c, *sum, pieces});
    }
    return out;
}

// ---------------------------------------------------- singularity neighbourhood

namespace {

struct FlightLabel {
    std::int64_t di = 0, dj = 0;
    bool bad = false;
    bool operator==(const FlightLabel& o) const { return di == o.di && dj == o.dj && bad == o.bad; }
};

FlightLabel flight_label(const Table& t, const PhasePoint& x) {
    if (!(std::abs(x.phi) < kHalfPi)) return {0, 0, true};
    try {
        const MapStep s = scatterer_map(t, x);
        return {s.event.di, s.event.dj, false};
    } catch (const Error&) {
        return {0, 0, true};
    }
}

}  // namespace

double singularity_proxy_distance(const Table& t, const PhasePoint& x, double d_max, double d_min) {
    const FlightLabel l0 = flight_label(t, x);
    if (l0.bad) return 0.0;
    double best = std::numeric_limits<double>::infinity();
    std::vector<double> offsets;
    for (double s = d_min; s < d_max; s *= 2.0) offsets.push_back(s);
    offsets.push_back(d_max);
    const double dirs[4][2] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}};
    for (const auto& d : dirs) {
        auto at = [&](double s) {
            return PhasePoint{Component::Scatterer, x.r + s * d[0], x.phi + s * d[1]};
        };
        double prev = 0.0;
        for (double s : offsets) {
            if (s >= best) break;
            if (!(flight_label(t, at(s)) == l0)) {
                double lo = prev, hi = s;
                for (int it = 0; it < 40 && hi - lo > 1e-3 * hi; ++it) {
                    const double mid = 0.5 * (lo + hi);
                    if (flight_label(t, at(mid)) == l0)
                        lo = mid;
                    else
                        hi = mid;
                }
                best = std::min(best, 0.5 * (lo + hi));
                break;
            }
            prev = s;
        }
    }
    return best;
}

NeighborhoodEstimate singularity_neighborhood(const Table& t, const std::vector<double>& deltas,
                                              std::int64_t samples, const EstimatorOptions& opt) {
    if (deltas.empty()) throw Error(ErrorKind::InvalidConfig, "empty delta list");
    const double d_max = *std::max_element(deltas.begin(), deltas.end());
    const double d_min = *std::min_element(deltas.begin(), deltas.end()) / 8.0;
    auto run = [&](std::int64_t b, Rng& rng) {
        BinAccumulator acc(deltas.size());
        const std::int64_t len = batch_len(samples, opt.batch_size, b);
        for (std::int64_t i = 0; i < len; ++i) {
            const PhasePoint x = sample_mu(t, rng, Space::Scatterer);
            acc.add_sample(1.0);
            const double d = singularity_proxy_distance(t, x, d_max, d_min);
            for (std::size_t k = 0; k < deltas.size(); ++k)
                if (d <= deltas[k]) acc.add(k, 1.0);
        }
        return acc;
    };
    const BinAccumulator acc = run_batches<BinAccumulator>(opt.seed, 0, batch_count(samples, opt.batch_size),
                                                           thread_count(opt), run);
    NeighborhoodEstimate out;
    out.deltas = deltas;
    out.sample_count = acc.samples();
    std::vector<double> x, y, w;
    for (std::size_t k = 0; k < deltas.size(); ++k) {
        out.measure.push_back(acc.mean(k));
        out.stderr_.push_back(acc.stderr_of(k));
        out.hits.push_back(acc.hits(k));
        if (acc.hits(k) >= 25) {
            x.push_back(deltas[k]);
            y.push_back(acc.mean(k));
            w.push_back(static_cast<double>(acc.hits(k)));
        }
    }
    if (x.size() < 2) throw Error(ErrorKind::InsufficientCounts, "fewer than two deltas with 25 hits");
    out.fit = fit_loglog(x, y, w);
    return out;
}

}  // namespace flatbill

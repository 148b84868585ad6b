#include "flatbill/map_checks.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "flatbill/error.hpp"
#include "flatbill/sampling.hpp"

namespace flatbill {

namespace {

constexpr double kGrazeCos = 1e-6;

Space space_of(Mode mode) { return mode == Mode::Rectangle ? Space::Full : Space::Scatterer; }

bool same_branch(const CollisionEvent& a, const CollisionEvent& b) {
    return a.boundary_kind == b.boundary_kind && a.di == b.di && a.dj == b.dj &&
           a.cells_crossed == b.cells_crossed && a.passed_tangencies == b.passed_tangencies;
}

double signed_gap(const Table& t, const PhasePoint& a, const PhasePoint& b) {
    double d = a.r - b.r;
    if (a.component == Component::Scatterer) d = std::remainder(d, t.perimeter());
    return d;
}

}  // namespace

DeterminantReport determinant_check(const Table& t, Mode mode, std::int64_t samples, std::uint64_t seed,
                                    double fd_step) {
    DeterminantReport out;
    Rng rng(seed);
    while (out.samples < samples) {
        const PhasePoint x = sample_mu(t, rng, space_of(mode));
        MapStep s;
        try {
            s = map_step(t, x, mode);
        } catch (const Error&) {
            ++out.skipped;
            continue;
        }
        if (std::cos(s.x1.phi) < kGrazeCos || std::cos(x.phi) < kGrazeCos) {
            ++out.skipped;
            continue;
        }
        ++out.samples;
        const StepDerivative D = differential(t, x, s.x1, s.event);
        const double want = std::cos(x.phi) / std::cos(s.x1.phi);
        out.max_det_error = std::max(out.max_det_error, std::abs(D.det() - want) / want);

        // Five-point central differences; a stencil that changes branch is
        // not comparable.
        const std::array<double, 4> mult = {2.0, 1.0, -1.0, -2.0};
        std::array<std::array<std::pair<double, double>, 4>, 2> d{};  // [axis][stencil point]
        bool ok = true;
        for (std::size_t axis = 0; axis < 2 && ok; ++axis) {
            for (std::size_t i = 0; i < 4 && ok; ++i) {
                PhasePoint y = x;
                (axis == 0 ? y.r : y.phi) += mult[i] * fd_step;
                if (y.component == Component::Scatterer) y.r = t.reduce(y.r);
                try {
                    const MapStep q = map_step(t, y, mode);
                    ok = same_branch(q.event, s.event) && q.x1.component == s.x1.component;
                    d[axis][i] = {signed_gap(t, q.x1, s.x1), q.x1.phi - s.x1.phi};
                } catch (const Error&) {
                    ok = false;
                }
            }
        }
        if (!ok) {
            ++out.fd_skipped;
            continue;
        }
        auto deriv = [&](std::size_t axis, bool phi_out) {
            auto v = [&](std::size_t i) { return phi_out ? d[axis][i].second : d[axis][i].first; };
            return (-v(0) + 8.0 * v(1) - 8.0 * v(2) + v(3)) / (12.0 * fd_step);
        };
        const std::array<double, 4> fd = {deriv(0, false), deriv(1, false), deriv(0, true), deriv(1, true)};
        const std::array<double, 4> an = {static_cast<double>(D.a11), static_cast<double>(D.a12),
                                          static_cast<double>(D.a21), static_cast<double>(D.a22)};
        double scale = 0.0, err = 0.0;
        for (std::size_t i = 0; i < 4; ++i) {
            scale = std::max(scale, std::abs(an[i]));
            err = std::max(err, std::abs(an[i] - fd[i]));
        }
        out.max_fd_error = std::max(out.max_fd_error, err / scale);
    }
    return out;
}

ReversibilityReport reversibility_check(const Table& t, Mode mode, std::int64_t samples, std::uint64_t seed) {
    ReversibilityReport out;
    Rng rng(seed);
    while (out.samples < samples) {
        const PhasePoint x = sample_mu(t, rng, space_of(mode));
        try {
            const MapStep s = map_step(t, x, mode);
            if (std::cos(s.x1.phi) < kGrazeCos) {
                ++out.skipped;
                continue;
            }
            const PhasePoint back = time_reverse(map_step(t, time_reverse(s.x1), mode).x1);
            ++out.samples;
            if (back.component != x.component) {
                out.max_error = std::max(out.max_error, 1.0);
                continue;
            }
            const double e = (frame_of(t, back).position - frame_of(t, x).position).norm() +
                             std::abs(back.phi - x.phi);
            out.max_error = std::max(out.max_error, e);
        } catch (const Error&) {
            ++out.skipped;
        }
    }
    return out;
}

ConeReport cone_invariance_check(const Table& t, std::int64_t vectors, std::uint64_t seed) {
    ConeReport out;
    Rng rng(seed);
    std::uniform_real_distribution<double> U(0.0, 1.0);
    const double w = 1.0 / t.tau_min_torus();
    while (out.vectors < vectors) {
        const PhasePoint x = sample_mu(t, rng, Space::Scatterer);
        const double K = curvature_of(t, x);
        const double V = K + w * U(rng);
        ++out.vectors;
        MapStep s;
        try {
            s = scatterer_map(t, x);
        } catch (const Error&) {
            ++out.excluded;
            continue;
        }
        const double c0 = std::cos(x.phi), c1 = std::cos(s.x1.phi);
        if (c1 < kGrazeCos || c0 < kGrazeCos) {
            ++out.excluded;
            continue;
        }
        const StepDerivative D = differential(t, x, s.x1, s.event);
        const auto [dr1, dphi1] = D.apply(1.0, V);
        const double V1 = dphi1 / dr1;
        const double K1 = curvature_of(t, s.x1);
        const double tau = s.event.tau;
        const double lo = K1 + (K > 0.0 ? c1 / (tau + c0 / (2.0 * K)) : 0.0);
        const double hi = K1 + c1 / tau;
        const double tol = 1e-9 * std::max(1.0, std::abs(hi));
        const double excess = std::max(lo - V1, V1 - hi);
        if (excess > tol) {
            ++out.violations;
            out.worst_excess = std::max(out.worst_excess, excess / std::max(1e-300, hi - K1));
        }
    }
    return out;
}

}  // namespace flatbill

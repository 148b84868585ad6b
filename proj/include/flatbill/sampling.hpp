#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <vector>

#include "flatbill/billiard_map.hpp"

namespace flatbill {

using Rng = std::mt19937_64;

enum class Space { Full, Scatterer };

// Exact sample of the invariant measure cos(phi) dr dphi: on the whole
// boundary of the rectangle (Full) or on the scatterer alone.
PhasePoint sample_mu(const Table& t, Rng& rng, Space space = Space::Scatterer);
// Density of the normalised scatterer measure at x.
double mu_density(const Table& t, const PhasePoint& x);

struct WeightedPoint {
    PhasePoint x;
    double w = 1.0;  // dmu/dq, so E_q[w f] = E_mu[f]
};

// Mixture of the scatterer measure (weight alpha) with a proposal whose
// angle to the tangent, theta = pi/2 - |phi|, has density ~ 1/(theta + theta0).
// Puts most samples in the long-flight cells.
class TangentialSampler {
public:
    TangentialSampler(const Table& t, double alpha = 0.5, double theta0 = 1e-5);
    WeightedPoint operator()(Rng& rng) const;
    double weight(const PhasePoint& x) const;

private:
    const Table& t_;
    double alpha_, theta0_, log_span_;
};

// Samples the arcs |offset| <= epsilon0 around the four flat points, with the
// angle concentrated around the channel directions y_m (m = 0..m_max) so
// that long trapped orbits are seen. Weights are against the scatterer
// measure; anything off the arcs is outside the support.
class WindowSampler {
public:
    WindowSampler(const Table& t, int m_max = 32, double alpha = 0.2, double spread = 3.0);
    WeightedPoint operator()(Rng& rng) const;
    double weight(const PhasePoint& x) const;
    double arc_halfwidth() const { return eps0_; }
    // Angle of the channel direction (m, side) at x, and its half-spread.
    double channel_phi(const PhasePoint& x, int m, int side) const;
    double spread(int flat, int m) const;

private:
    double channel_phi(const Frame& f, int flat, int m, int side) const;

    const Table& t_;
    int m_max_;
    double alpha_;
    double eps0_;
    std::vector<double> pm_cdf_;
    std::vector<double> pm_;
    std::vector<double> delta_;
};

}  // namespace flatbill

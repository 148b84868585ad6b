#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "flatbill/flight.hpp"
#include "flatbill/geometry.hpp"

namespace flatbill {

struct PhasePoint {
    Component component = Component::Scatterer;
    double r = 0.0;
    double phi = 0.0;
};

struct TangentData {
    double dr = 1.0;
    double dphi = 0.0;
    double B = 0.0;  // post-collision wavefront curvature
    double V = 0.0;  // dphi/dr
};

struct StepDerivative {
    // Extended precision: near grazing the determinant cancels by a factor
    // of order (tau K / cos phi1)^2.
    long double a11 = 0, a12 = 0, a21 = 0, a22 = 0;
    double p_expansion = 1.0;
    double det() const { return static_cast<double>(a11 * a22 - a12 * a21); }
    std::pair<double, double> apply(double dr, double dphi) const {
        return {static_cast<double>(a11 * dr + a12 * dphi), static_cast<double>(a21 * dr + a22 * dphi)};
    }
};

struct MapStep {
    PhasePoint x1;
    CollisionEvent event;
};

enum class Cone { Unstable, Stable, Neither };
enum class MapBase { FullMap, ScattererMap };

// Frame of a phase point in cell-local coordinates.
struct Frame {
    Vec2 position, tangent, normal;
    double curvature = 0.0;
};
Frame frame_of(const Table& t, const PhasePoint& x);
Vec2 velocity_of(const Frame& f, double phi);
double curvature_of(const Table& t, const PhasePoint& x);

// One collision of the full map (walls are part of the boundary).
MapStep full_map(const Table& t, const PhasePoint& x);
// Next scatterer collision in the periodic lattice; event.cells_crossed is
// the cell index of x.
MapStep scatterer_map(const Table& t, const PhasePoint& x);
MapStep map_step(const Table& t, const PhasePoint& x, Mode mode);

// Half-width of the arclength window around a flat point for cell index m.
double window_halfwidth(const Table& t, std::int64_t m);
// True when x (on the scatterer, forward cell index m) lies in its window.
bool in_window(const Table& t, const PhasePoint& x, std::int64_t m);

struct InducedResult {
    PhasePoint y;
    std::int64_t R = 0;           // return time under the chosen base map
    std::int64_t scatterer_steps = 0;
    bool censored = false;        // return not seen within the cap
    MapStep next;                 // scatterer-map step out of y (already computed)
    double tau_total = 0.0;
};

// First return to the good set M (scatterer points outside their window).
InducedResult induced_map(const Table& t, const PhasePoint& x, MapBase base,
                          std::int64_t cap = 1000000);

StepDerivative differential(const Table& t, const PhasePoint& x, const PhasePoint& x1,
                            const CollisionEvent& ev, double B);
StepDerivative differential(const Table& t, const PhasePoint& x, const PhasePoint& x1,
                            const CollisionEvent& ev);

// Post-collision wavefront curvature at x1 from the one at x.
double wavefront_step(const Table& t, const PhasePoint& x, double B, const PhasePoint& x1,
                      const CollisionEvent& ev);

Cone cone_check(const Table& t, const PhasePoint& x, double dr, double dphi);
double tau_min(const Table& t);

PhasePoint time_reverse(const PhasePoint& x);

struct MetricRatios {
    double p_ratio = 1.0;
    double euclid_ratio = 1.0;
};
MetricRatios metrics(const PhasePoint& x, double dr, double dphi, const PhasePoint& x1,
                     double dr1, double dphi1);

struct LyapunovEstimate {
    double exponent = 0.0;  // per collision
    double stderr_ = 0.0;   // batch means
    std::int64_t steps = 0;
    std::int64_t skipped = 0;
};
LyapunovEstimate lyapunov_estimate(const Table& t, PhasePoint x, std::int64_t steps, Mode mode);

// Mirror symmetries of the table acting on phase points.
PhasePoint mirror_x(const Table& t, const PhasePoint& x);  // (x, y) -> (-x, y)
PhasePoint mirror_y(const Table& t, const PhasePoint& x);  // (x, y) -> (x, -y)

}  // namespace flatbill

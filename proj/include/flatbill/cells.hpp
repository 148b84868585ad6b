#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "flatbill/billiard_map.hpp"

namespace flatbill {

enum class Part { CPrime, CDoublePrime };

struct CellLabel {
    std::int64_t n = 0;
    bool in_window = false;
    Part part = Part::CDoublePrime;
    std::int64_t trap_k = 0;
    bool trap_capped = false;
    int homogeneity = 0;       // signed strip index, 0 below k0
    bool near_periodic = false;
};

int homogeneity_index(double phi, int k0);

CellLabel classify(const Table& t, const PhasePoint& x, std::int64_t trap_cap = 100000);

struct CurvePoint {
    double r = 0.0;
    double phi = 0.0;
    double theta = 0.0;  // pi/2 - |phi|, kept separately for precision
    bool ok = false;
};

// Traces near the top flat point: r > 0 uses the channel to the left
// (phi > 0), r < 0 the mirror image.
std::vector<CurvePoint> trace_singularity_s_prime(const Table& t, const std::vector<double>& r_grid);
std::vector<CurvePoint> trace_singularity_s_n(const Table& t, std::int64_t n,
                                              const std::vector<double>& r_grid);

// Largest cell index reachable from offset r (flight just above s'), and the
// offset at which that index drops to n.
std::int64_t max_cell_from(const Table& t, double r);
double cell_r_extent(const Table& t, std::int64_t n);

// Period-two channel orbit from the top flat point to the bottom flat point
// of the scatterer m cells to the left, one row up.
struct PeriodicOrbit {
    PhasePoint y;
    PhasePoint partner;
    double residual = 0.0;
    double tau = 0.0;
    int iterations = 0;
};
PeriodicOrbit periodic_point(const Table& t, std::int64_t m);

// Mean log p-expansion per period of a cone-transported vector along y_m
// over `periods` periods.
double periodic_log_expansion(const Table& t, std::int64_t m, int periods);

struct WindowEnds {
    double q1 = 0.0, q2 = 0.0;
    double curvature_at_endpoint = 0.0;
};
WindowEnds window_endpoints(const Table& t, std::int64_t m);

}  // namespace flatbill

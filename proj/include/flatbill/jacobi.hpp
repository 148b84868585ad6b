#pragma once

#include <cstdint>
#include <vector>

#include "flatbill/fit.hpp"
#include "flatbill/geometry.hpp"

namespace flatbill {

// Channel recursion for an orbit trapped near y_m. r is the offset from the
// flat point, v the angle to the periodic orbit.
struct JacobiModel {
    double beta = 4.0;
    double c = 1.0;      // profile coefficient, K(r) = beta(beta-1)c|r|^(beta-2)
    std::int64_t m = 1;
    double coef = 1.0;   // coefficient of tan v in the r update, m^2 period^2/gap by default
    double period = 4.0; // channel period W
    double gap = 2.0;    // channel width h
    double tau() const;  // m * period
    double cos_phi() const;
    double curvature(double r) const;
};

JacobiModel jacobi_model(const Table& t, std::int64_t m);
JacobiModel jacobi_model(double beta, double c, std::int64_t m, double period, double gap);

struct ChannelState {
    std::int64_t j = 0;
    double r = 0.0;
    double v = 0.0;
    std::int64_t m = 1;
};

// Exact arctan/tan form, implicit r solved by fixed point to 1e-14.
ChannelState step(const JacobiModel& model, const ChannelState& s);
ChannelState step_leading(const JacobiModel& model, const ChannelState& s);

// Remainders exact-minus-leading for one step from s.
struct Remainders {
    double r = 0.0;  // R_r,j
    double v = 0.0;  // R_v,j+1
};
Remainders remainders(const JacobiModel& model, const ChannelState& s);

struct OdeSample {
    double t, r, v;
};
struct OdeRun {
    std::vector<OdeSample> samples;
    double h0 = 0.0;
    double max_rel_drift = 0.0;  // |H - H0| relative to the initial energy scale
};
// dv/dt = 2 beta c r^(beta-1), dr/dt = coef v with samples at integer t.
OdeRun ode_limit(const JacobiModel& model, double r0, double v0, double t_end);
double ode_invariant(const JacobiModel& model, double r, double v);

struct Trajectory {
    // states[0] is x_0 at the window edge; states[1..k] are inside the window.
    std::vector<ChannelState> states;
    std::int64_t k = 0;
    std::int64_t k_prime = 0;          // turning index
    std::int64_t k_doubleprime = 0;    // first j with v_j < 2 v_k'
    bool escaped = false;
    double exit_r = 0.0;               // first state past the window (or after the cap)
};
Trajectory trajectory(const JacobiModel& model, double r0, double v0, bool leading = false,
                      std::int64_t max_steps = 10000000);

// Angle at the window edge giving exactly k collisions inside the window.
double v0_for_k(const JacobiModel& model, double r0, std::int64_t k);
double window_edge(const JacobiModel& model, double epsilon0);

// Where the recursion starts. WindowEdge enters at eps0 m^(-1/(beta-1)); the
// entering collision then carries a curvature kick that grows with m.
// Scaled enters at r = rho * (2 beta c coef)^(-1/(beta-2)) with rho = 1,
// where every kick tau K / cos(phi) is O(1/j^2) independent of m.
enum class EntryRule { WindowEdge, Scaled };
double scaled_edge(const JacobiModel& model, double rho);
double entry_offset(const JacobiModel& model, EntryRule rule, double epsilon0);

struct Expansion {
    double lambda_total = 0.0;
    double lambda_p = 0.0;         // product of 1 + tau B over window collisions
    double lambda_vertical = 0.0;
    double lambda1 = 0.0;          // product over 1 <= j <= k'
    double lambda2 = 0.0;          // product over k' < j <= k
    std::vector<double> tau_b;     // per-step tau B
};
// Lambda_total uses the curvature at the window edge r0 for the exit factor.
Expansion expansion_product(const JacobiModel& model, const Trajectory& tr, double r0);

struct ScalingReport {
    LineFit z_fit;                 // log Z_j against log j
    std::vector<std::int64_t> ks;
    std::vector<std::int64_t> k_prime, k_doubleprime;
    std::vector<double> r_kprime;
    LineFit r_kprime_fit;          // log r_k' against log k
    double h_drift = 0.0;
};
ScalingReport scaling_report(const JacobiModel& model, double r0, std::int64_t z_k,
                             const std::vector<std::int64_t>& ks);

struct CocycleSample {
    std::int64_t k = 0;
    double oracle = 0.0;
    double measured = 0.0;
    double ratio = 0.0;       // oracle / measured
    std::int64_t n = 0;       // cell index of the preimage
    std::int64_t trap_k = 0;  // classify() trap depth of the preimage
    double lambda1 = 0.0;     // measured product up to the turning collision
    double lambda2 = 0.0;     // and after it
};
struct CocycleReport {
    std::int64_t m = 0;
    std::vector<CocycleSample> samples;
    LineFit oracle_fit, measured_fit;
};
// Finds real scatterer-map orbits trapped k times in the window near y_m and
// compares their p-expansion with the recursion.
CocycleReport cross_check_cocycle(const Table& t, std::int64_t m,
                                  const std::vector<std::int64_t>& ks);

}  // namespace flatbill

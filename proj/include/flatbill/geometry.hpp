#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "flatbill/vec2.hpp"

namespace flatbill {

enum class Mode { Rectangle, Torus };

struct TableConfig {
    double beta = 4.0;
    double scatterer_radius = 1.0;
    double rect_width = 4.0;
    double rect_height = 4.0;
    double epsilon0 = 0.25;
    int k0 = 2;
    Mode mode = Mode::Torus;
    double newton_tol = 1e-12;
    std::int64_t max_flight_cells = 1000000;
    std::uint64_t seed = 1;

    // Throws Error(InvalidConfig) naming the first violated constraint.
    void validate() const;
};

std::string to_string(Mode m);
Mode mode_from_string(const std::string& s);

struct BoundaryPointData {
    Vec2 position;
    Vec2 unit_tangent;   // counterclockwise
    Vec2 inward_normal;  // points into the billiard domain, out of the scatterer
    double curvature = 0.0;
    double arclength = 0.0;
};

// x^p for x >= 0, with a fast path when p is a small integer.
class Power {
public:
    explicit Power(double p);
    double operator()(double x) const {
        switch (ip_) {
            case 2: return x * x;
            case 3: return x * x * x;
            case 4: { const double x2 = x * x; return x2 * x2; }
            case 5: { const double x2 = x * x; return x2 * x2 * x; }
            case 6: { const double x3 = x * x * x; return x3 * x3; }
            default: return slow(x);
        }
    }
    double exponent() const { return p_; }

private:
    double slow(double x) const;
    double p_;
    int ip_;  // -1 if not a small integer
};

/// Immutable table: W x H cell centred at the origin with the superellipse
/// |x|^b + |y|^b = a^b at its centre. Arclength on the scatterer runs
/// counterclockwise from the top flat point (0, a).
class Table {
public:
    explicit Table(const TableConfig& cfg);

    const TableConfig& config() const { return cfg_; }
    double beta() const { return cfg_.beta; }
    double a() const { return cfg_.scatterer_radius; }
    double width() const { return cfg_.rect_width; }
    double height() const { return cfg_.rect_height; }

    double perimeter() const { return perimeter_; }
    double octant_length() const { return octant_; }
    std::array<double, 4> flat_points() const;
    // Arclength of the flat point closest to r, and the signed offset r - flat.
    double nearest_flat(double r, double* offset = nullptr) const;

    // Local profile coefficient: near a flat point the boundary deviates from
    // its tangent line by profile_c * |s|^beta.
    double profile_c() const { return profile_c_; }

    // Minimum free path between scatterer collisions (torus) and between a
    // scatterer and a wall (rectangle).
    double tau_min_torus() const;
    double tau_min_rect() const;

    double reduce(double r) const;  // into [0, perimeter)
    BoundaryPointData boundary_at(double r) const;
    double curvature_at(double r) const;
    // Arclength of a point on (or within newton_tol of) the scatterer.
    double arclength_of(Vec2 p) const;

    // Superellipse implicit function pieces.
    double g(Vec2 p) const { return powb_(std::abs(p.x)) + powb_(std::abs(p.y)) - a_pow_; }
    Vec2 grad_g(Vec2 p) const {
        return {cfg_.beta * std::copysign(powb1_(std::abs(p.x)), p.x),
                cfg_.beta * std::copysign(powb1_(std::abs(p.y)), p.y)};
    }
    double curvature_xy(Vec2 p) const;
    const Power& pow_beta() const { return powb_; }
    const Power& pow_beta_m1() const { return powb1_; }

    // Octant arclength S(u) for the graph y = Y(u), u in [0, u*].
    double octant_s(double u) const;
    double octant_u(double s) const;
    double octant_umax() const { return umax_; }

private:
    double graph_y(double u) const;
    double speed(double u) const;  // dS/du

    TableConfig cfg_;
    Power powb_, powb1_;
    double a_pow_ = 0.0;
    double umax_ = 0.0;
    double octant_ = 0.0;
    double perimeter_ = 0.0;
    double profile_c_ = 0.0;
    std::vector<double> nodes_;
    std::vector<double> cum_;
    std::vector<double> dcum_;
    std::vector<int> bucket_lo_;
};

using TablePtr = std::shared_ptr<const Table>;

TablePtr build_table(const TableConfig& cfg);
BoundaryPointData boundary_at(const Table& t, double r);
std::array<double, 4> flat_points(const Table& t);

}  // namespace flatbill

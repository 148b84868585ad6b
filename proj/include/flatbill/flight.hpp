#pragma once

#include <cstdint>

#include "flatbill/geometry.hpp"

namespace flatbill {

enum class Component { Scatterer = 0, North, East, South, West };

const char* to_string(Component c);
inline bool is_wall(Component c) { return c != Component::Scatterer; }

struct Ray {
    Vec2 origin;     // cell-local coordinates
    Vec2 direction;  // unit
};

enum class StartOn { Interior, Scatterer, Wall };

struct CollisionEvent {
    Vec2 hit;  // local coordinates in the cell that was hit
    double hit_r = 0.0;
    Component boundary_kind = Component::Scatterer;
    double tau = 0.0;
    std::int64_t cells_crossed = 0;
    // Lattice displacement of the hit cell relative to the start cell.
    std::int64_t di = 0, dj = 0;
    bool tangential = false;
    int passed_tangencies = 0;  // grazes flown through before this hit
    double cos_phi1 = 0.0;  // cosine of the reflection angle at the hit
};

constexpr double kTangencyTol = 1e-8;

// First collision along the ray. In Rectangle mode the walls of the single
// cell are part of the boundary; in Torus mode the ray runs through the
// periodic lattice until it meets a scatterer. A ray that starts on the
// scatterer never meets it again (convexity) so that scatterer is skipped.
CollisionEvent next_collision(const Table& t, const Ray& ray, Mode mode,
                              StartOn start = StartOn::Interior);

Vec2 reflect(Vec2 direction, Vec2 inward_normal);

// Ray/superellipse intersection in scatterer-centred coordinates. Returns the
// smallest t in [t_lo, inf) with g = 0, or a negative value on a miss.
double intersect_scatterer(const Table& t, Vec2 origin, Vec2 dir, double t_lo);

// Wall frame helpers: position, unit tangent (Q to its right) and normal.
Vec2 wall_position(const Table& t, Component c, double r);
Vec2 wall_tangent(Component c);
Vec2 wall_normal(Component c);
double wall_coordinate(const Table& t, Component c, Vec2 p);
double wall_length(const Table& t, Component c);

}  // namespace flatbill

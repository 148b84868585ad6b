#include "flatbill/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "flatbill/error.hpp"

namespace flatbill {

namespace {

constexpr int kTableNodes = 1 << 16;
constexpr int kBuckets = 4096;

// 8-point Gauss-Legendre on [-1, 1].
constexpr std::array<double, 8> kGLx = {
    -0.9602898564975363, -0.7966664774136267, -0.5255324099163290, -0.1834346424956498,
    0.1834346424956498,  0.5255324099163290,  0.7966664774136267,  0.9602898564975363};
constexpr std::array<double, 8> kGLw = {
    0.1012285362903763, 0.2223810344533745, 0.3137066458778873, 0.3626837833783620,
    0.3626837833783620, 0.3137066458778873, 0.2223810344533745, 0.1012285362903763};

Vec2 rotate_quarters(Vec2 v, int q) {
    q = ((q % 4) + 4) % 4;
    for (int i = 0; i < q; ++i) v = rotate_ccw(v);
    return v;
}

}  // namespace

const char* to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::InvalidConfig: return "InvalidConfig";
        case ErrorKind::HorizonOverflow: return "HorizonOverflow";
        case ErrorKind::DegenerateStart: return "DegenerateStart";
        case ErrorKind::TangentialDerivative: return "TangentialDerivative";
        case ErrorKind::FocusingBlowup: return "FocusingBlowup";
        case ErrorKind::BisectionFailure: return "BisectionFailure";
        case ErrorKind::ShootingDivergence: return "ShootingDivergence";
        case ErrorKind::InsufficientCounts: return "InsufficientCounts";
        case ErrorKind::FixedPointDivergence: return "FixedPointDivergence";
        case ErrorKind::StepUnderflow: return "StepUnderflow";
        case ErrorKind::CurveDegenerate: return "CurveDegenerate";
        case ErrorKind::InsufficientOrbits: return "InsufficientOrbits";
    }
    return "Unknown";
}

std::string to_string(Mode m) { return m == Mode::Rectangle ? "Rectangle" : "Torus"; }

Mode mode_from_string(const std::string& s) {
    if (s == "Rectangle" || s == "rectangle") return Mode::Rectangle;
    if (s == "Torus" || s == "torus") return Mode::Torus;
    throw Error(ErrorKind::InvalidConfig, "mode must be Rectangle or Torus, got '" + s + "'");
}

void TableConfig::validate() const {
    auto fail = [](const std::string& msg) { throw Error(ErrorKind::InvalidConfig, msg); };
    std::ostringstream os;
    if (!std::isfinite(beta) || !(beta > 2.0 || beta == 2.0)) {
        os << "beta must be > 2 (or exactly 2 for the circle), got " << beta;
        fail(os.str());
    }
    if (!(scatterer_radius > 0.0)) fail("scatterer_radius must be positive");
    if (!(2.0 * scatterer_radius < std::min(rect_width, rect_height))) {
        os << "scatterer does not fit: 2a=" << 2.0 * scatterer_radius
           << " >= min(width,height)=" << std::min(rect_width, rect_height);
        fail(os.str());
    }
    if (!(epsilon0 > 0.0 && epsilon0 < 0.5)) fail("epsilon0 must lie in (0, 1/2)");
    if (k0 < 2) fail("k0 must be >= 2");
    if (!(newton_tol > 0.0)) fail("newton_tol must be positive");
    if (max_flight_cells < 1) fail("max_flight_cells must be >= 1");
}

Power::Power(double p) : p_(p), ip_(-1) {
    if (p >= 0.0 && p <= 16.0 && p == std::floor(p)) ip_ = static_cast<int>(p);
}

double Power::slow(double x) const {
    if (ip_ == 0) return 1.0;
    if (ip_ == 1) return x;
    if (ip_ > 0) {
        double r = 1.0;
        for (int i = 0; i < ip_; ++i) r *= x;
        return r;
    }
    return std::pow(x, p_);
}

Table::Table(const TableConfig& cfg)
    : cfg_(cfg), powb_(cfg.beta), powb1_(cfg.beta - 1.0) {
    cfg_.validate();
    const double a = cfg_.scatterer_radius;
    const double b = cfg_.beta;
    a_pow_ = powb_(a);
    umax_ = a * std::pow(2.0, -1.0 / b);
    profile_c_ = 1.0 / (b * std::pow(a, b - 1.0));

    nodes_.resize(kTableNodes + 1);
    cum_.resize(kTableNodes + 1);
    dcum_.resize(kTableNodes + 1);
    for (int i = 0; i <= kTableNodes; ++i) {
        nodes_[i] = 0.5 * umax_ * (1.0 - std::cos(std::numbers::pi * i / kTableNodes));
    }
    nodes_.front() = 0.0;
    nodes_.back() = umax_;
    cum_[0] = 0.0;
    for (int i = 0; i < kTableNodes; ++i) {
        const double lo = nodes_[i], hi = nodes_[i + 1];
        const double mid = 0.5 * (lo + hi), half = 0.5 * (hi - lo);
        double s = 0.0;
        for (int k = 0; k < 8; ++k) s += kGLw[k] * speed(mid + half * kGLx[k]);
        cum_[i + 1] = cum_[i] + half * s;
    }
    for (int i = 0; i <= kTableNodes; ++i) dcum_[i] = speed(nodes_[i]);
    octant_ = cum_.back();
    perimeter_ = 8.0 * octant_;
    bucket_lo_.resize(kBuckets + 1);
    for (int b = 0, i = 0; b <= kBuckets; ++b) {
        const double s0 = octant_ * b / kBuckets;
        while (i < kTableNodes && cum_[i + 1] <= s0) ++i;
        bucket_lo_[b] = i;
    }
    bucket_lo_[kBuckets] = kTableNodes;
}

double Table::graph_y(double u) const {
    const double v = std::max(a_pow_ - powb_(u), 0.0);
    if (cfg_.beta == 2.0) return std::sqrt(v);
    if (cfg_.beta == 4.0) return std::sqrt(std::sqrt(v));
    return std::pow(v, 1.0 / cfg_.beta);
}

double Table::speed(double u) const {
    const double y = graph_y(u);
    if (u <= 0.0) return 1.0;
    const double dy = powb1_(u / y);
    return std::sqrt(1.0 + dy * dy);
}

double Table::octant_s(double u) const {
    u = std::clamp(u, 0.0, umax_);
    // Nodes are Chebyshev-spaced, so the interval index has a closed form.
    int i = static_cast<int>(kTableNodes * std::acos(1.0 - 2.0 * u / umax_) / std::numbers::pi);
    i = std::clamp(i, 0, kTableNodes - 1);
    while (i > 0 && nodes_[i] > u) --i;
    while (i < kTableNodes - 1 && nodes_[i + 1] <= u) ++i;
    const double h = nodes_[i + 1] - nodes_[i];
    const double t = (u - nodes_[i]) / h;
    const double t2 = t * t, t3 = t2 * t;
    const double h00 = 2 * t3 - 3 * t2 + 1, h10 = t3 - 2 * t2 + t;
    const double h01 = -2 * t3 + 3 * t2, h11 = t3 - t2;
    return h00 * cum_[i] + h10 * h * dcum_[i] + h01 * cum_[i + 1] + h11 * h * dcum_[i + 1];
}

double Table::octant_u(double s) const {
    s = std::clamp(s, 0.0, octant_);
    const int b = std::min(static_cast<int>(s / octant_ * kBuckets), kBuckets - 1);
    auto it = std::upper_bound(cum_.begin() + bucket_lo_[b], cum_.begin() + bucket_lo_[b + 1] + 1, s);
    int i = static_cast<int>(it - cum_.begin()) - 1;
    i = std::clamp(i, 0, kTableNodes - 1);
    const double ds = cum_[i + 1] - cum_[i];
    double u = nodes_[i] + (ds > 0 ? (s - cum_[i]) / ds : 0.0) * (nodes_[i + 1] - nodes_[i]);
    for (int it2 = 0; it2 < 4; ++it2) {
        const double du = (octant_s(u) - s) / speed(u);
        u = std::clamp(u - du, nodes_[i], nodes_[i + 1]);
        if (std::abs(du) <= 1e-16 * u) break;
    }
    return u;
}

std::array<double, 4> Table::flat_points() const {
    return {0.0, 2.0 * octant_, 4.0 * octant_, 6.0 * octant_};
}

double Table::reduce(double r) const {
    double x = std::fmod(r, perimeter_);
    if (x < 0) x += perimeter_;
    if (x >= perimeter_) x -= perimeter_;
    return x;
}

double Table::nearest_flat(double r, double* offset) const {
    r = reduce(r);
    const double q2 = 2.0 * octant_;
    int q = static_cast<int>(std::lround(r / q2));
    double local = r - q * q2;
    if (q == 4) q = 0;
    if (offset) *offset = local;
    return q * q2;
}

double Table::curvature_xy(Vec2 p) const {
    const double b = cfg_.beta;
    const double ax = std::abs(p.x), ay = std::abs(p.y);
    const double gx = powb1_(ax), gy = powb1_(ay);
    const double num = (b - 1.0) * powb_(cfg_.scatterer_radius) * std::pow(ax * ay, b - 2.0);
    const double den = std::pow(gx * gx + gy * gy, 1.5);
    return num / den;
}

BoundaryPointData Table::boundary_at(double r) const {
    r = reduce(r);
    double local = 0.0;
    const double flat = nearest_flat(r, &local);
    const int q = static_cast<int>(std::lround(flat / (2.0 * octant_)));
    const double u = octant_u(std::abs(local));
    // Top-quarter frame: positive local runs toward negative x.
    Vec2 p{local >= 0 ? -u : u, graph_y(u)};
    Vec2 n = grad_g(p).normalized();
    const double k = curvature_xy(p);
    BoundaryPointData out;
    out.position = rotate_quarters(p, q);
    out.inward_normal = rotate_quarters(n, q);
    out.unit_tangent = rotate_ccw(out.inward_normal);
    out.curvature = k;
    out.arclength = r;
    return out;
}

double Table::curvature_at(double r) const { return boundary_at(r).curvature; }

double Table::arclength_of(Vec2 p) const {
    int q;
    if (std::abs(p.y) >= std::abs(p.x))
        q = p.y > 0 ? 0 : 2;
    else
        q = p.x < 0 ? 1 : 3;
    const Vec2 top = rotate_quarters(p, -q);
    const double u = std::min(std::abs(top.x), umax_);
    const double s = octant_s(u);
    const double local = top.x <= 0 ? s : -s;
    return reduce(q * 2.0 * octant_ + local);
}

double Table::tau_min_torus() const {
    return std::min(cfg_.rect_width, cfg_.rect_height) - 2.0 * cfg_.scatterer_radius;
}

double Table::tau_min_rect() const {
    return 0.5 * std::min(cfg_.rect_width, cfg_.rect_height) - cfg_.scatterer_radius;
}

TablePtr build_table(const TableConfig& cfg) { return std::make_shared<const Table>(cfg); }

BoundaryPointData boundary_at(const Table& t, double r) { return t.boundary_at(r); }

std::array<double, 4> flat_points(const Table& t) { return t.flat_points(); }

}  // namespace flatbill

#include "flatbill/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <thread>

#include "flatbill/parallel.hpp"

namespace flatbill {

namespace {

constexpr double kHalfPi = std::numbers::pi / 2.0;

double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

double sample_phi(Rng& rng) { return std::asin(2.0 * uniform01(rng) - 1.0); }

Vec2 rotate_quarters(Vec2 v, int q) {
    for (int i = 0; i < ((q % 4) + 4) % 4; ++i) v = rotate_ccw(v);
    return v;
}

int flat_index(const Table& t, double r, double* offset) {
    const double flat = t.nearest_flat(r, offset);
    return static_cast<int>(std::lround(flat / (2.0 * t.octant_length()))) % 4;
}

}  // namespace

int default_threads() {
    const unsigned n = std::thread::hardware_concurrency();
    return n == 0 ? 1 : static_cast<int>(n);
}

PhasePoint sample_mu(const Table& t, Rng& rng, Space space) {
    const double P = t.perimeter();
    if (space == Space::Scatterer) return {Component::Scatterer, uniform01(rng) * P, sample_phi(rng)};
    const double W = t.width(), H = t.height();
    double s = uniform01(rng) * (P + 2.0 * W + 2.0 * H);
    const double phi = sample_phi(rng);
    if (s < P) return {Component::Scatterer, s, phi};
    s -= P;
    const Component walls[4] = {Component::North, Component::East, Component::South, Component::West};
    for (Component c : walls) {
        const double L = wall_length(t, c);
        if (s < L || c == Component::West) return {c, std::min(s, L) - 0.5 * L, phi};
        s -= L;
    }
    return {Component::West, 0.0, phi};
}

double mu_density(const Table& t, const PhasePoint& x) {
    return std::cos(x.phi) / (2.0 * t.perimeter());
}

TangentialSampler::TangentialSampler(const Table& t, double alpha, double theta0)
    : t_(t), alpha_(alpha), theta0_(theta0),
      log_span_(std::log((kHalfPi + theta0) / theta0)) {}

WeightedPoint TangentialSampler::operator()(Rng& rng) const {
    WeightedPoint out;
    if (uniform01(rng) < alpha_) {
        out.x = sample_mu(t_, rng, Space::Scatterer);
    } else {
        const double r = uniform01(rng) * t_.perimeter();
        const double sign = uniform01(rng) < 0.5 ? -1.0 : 1.0;
        double th = theta0_ * std::expm1(uniform01(rng) * log_span_);
        th = std::clamp(th, 0.0, kHalfPi);
        out.x = {Component::Scatterer, r, sign * (kHalfPi - th)};
    }
    out.w = weight(out.x);
    return out;
}

double TangentialSampler::weight(const PhasePoint& x) const {
    const double th = kHalfPi - std::abs(x.phi);
    const double s = std::sin(th);
    const double g = 1.0 / ((th + theta0_) * log_span_);
    return s / (alpha_ * s + (1.0 - alpha_) * g);
}

WindowSampler::WindowSampler(const Table& t, int m_max, double alpha, double spread)
    : t_(t), m_max_(m_max), alpha_(alpha), eps0_(t.config().epsilon0) {
    double z = 0.0;
    for (int m = 0; m <= m_max_; ++m) z += 1.0 / ((m + 1.0) * (m + 1.0));
    double acc = 0.0;
    for (int m = 0; m <= m_max_; ++m) {
        pm_.push_back(1.0 / ((m + 1.0) * (m + 1.0)) / z);
        acc += pm_.back();
        pm_cdf_.push_back(acc);
    }
    pm_cdf_.back() = 1.0;
    const double c = t.profile_c(), b = t.beta();
    for (int parity = 0; parity < 2; ++parity) {
        const double period = parity == 0 ? t.width() : t.height();
        const double gap = (parity == 0 ? t.height() : t.width()) - 2.0 * t.a();
        for (int m = 0; m <= m_max_; ++m) {
            const double r0 = window_halfwidth(t, std::max(m, 1));
            const double tau = std::hypot(m * period, gap);
            const double coef = tau * tau / gap;
            delta_.push_back(spread * 2.0 * std::sqrt(c * std::pow(r0, b) / coef));
        }
    }
}

double WindowSampler::spread(int flat, int m) const {
    return delta_[static_cast<std::size_t>((flat % 2) * (m_max_ + 1) + m)];
}

double WindowSampler::channel_phi(const PhasePoint& x, int m, int side) const {
    double off = 0.0;
    const int q = flat_index(t_, x.r, &off);
    return channel_phi(frame_of(t_, x), q, m, side);
}

double WindowSampler::channel_phi(const Frame& f, int q, int m, int side) const {
    const bool horizontal = q % 2 == 0;
    const double period = horizontal ? t_.width() : t_.height();
    const double gap = (horizontal ? t_.height() : t_.width()) - 2.0 * t_.a();
    const Vec2 d = rotate_quarters(Vec2{side * m * period, gap}, q);
    return std::atan2(dot(d, f.tangent), dot(d, f.normal));
}

WeightedPoint WindowSampler::operator()(Rng& rng) const {
    WeightedPoint out;
    const int q = std::min(3, static_cast<int>(uniform01(rng) * 4.0));
    const double u = (2.0 * uniform01(rng) - 1.0) * eps0_;
    out.x.component = Component::Scatterer;
    out.x.r = t_.reduce(q * 2.0 * t_.octant_length() + u);
    if (uniform01(rng) < alpha_) {
        out.x.phi = sample_phi(rng);
    } else {
        const double p = uniform01(rng);
        const int m = static_cast<int>(std::lower_bound(pm_cdf_.begin(), pm_cdf_.end(), p) - pm_cdf_.begin());
        const int side = uniform01(rng) < 0.5 ? -1 : 1;
        const double d = spread(q, m);
        out.x.phi = channel_phi(out.x, m, side) + (2.0 * uniform01(rng) - 1.0) * d;
        if (std::abs(out.x.phi) >= kHalfPi) {
            out.x.phi = std::copysign(kHalfPi * (1.0 - 1e-16), out.x.phi);
            out.w = 0.0;
            return out;
        }
    }
    out.w = weight(out.x);
    return out;
}

double WindowSampler::weight(const PhasePoint& x) const {
    double off = 0.0;
    const int q = flat_index(t_, x.r, &off);
    if (std::abs(off) > eps0_) return 0.0;
    const double c = std::cos(x.phi);
    const double p = c / (2.0 * t_.perimeter());
    double qd = alpha_ * c / (2.0 * 8.0 * eps0_);
    double chan = 0.0;
    const Frame f = frame_of(t_, x);
    for (int m = 0; m <= m_max_; ++m) {
        const double d = spread(q, m);
        for (int side : {-1, 1}) {
            if (std::abs(x.phi - channel_phi(f, q, m, side)) <= d) chan += pm_[static_cast<std::size_t>(m)] * 0.5 / (2.0 * d);
        }
    }
    qd += (1.0 - alpha_) * chan / (4.0 * 2.0 * eps0_);
    return qd > 0.0 ? p / qd : 0.0;
}

}  // namespace flatbill

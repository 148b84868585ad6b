#include "flatbill/fit.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <Eigen/Dense>

namespace flatbill {

LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y,
                 const std::vector<double>& w) {
    const std::size_t n = x.size();
    if (y.size() != n || (!w.empty() && w.size() != n))
        throw std::invalid_argument("fit_line: size mismatch");
    LineFit f;
    f.points = n;
    if (n < 2) return f;
    double sw = 0, sx = 0, sy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double wi = w.empty() ? 1.0 : w[i];
        sw += wi;
        sx += wi * x[i];
        sy += wi * y[i];
    }
    const double mx = sx / sw, my = sy / sw;
    double sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double wi = w.empty() ? 1.0 : w[i];
        sxx += wi * (x[i] - mx) * (x[i] - mx);
        sxy += wi * (x[i] - mx) * (y[i] - my);
    }
    f.slope = sxx > 0 ? sxy / sxx : 0.0;
    f.intercept = my - f.slope * mx;
    if (n > 2 && sxx > 0) {
        double rss = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const double wi = w.empty() ? 1.0 : w[i];
            const double e = y[i] - f.intercept - f.slope * x[i];
            rss += wi * e * e;
        }
        // Weights are treated as relative: scale by the weighted residual variance.
        const double s2 = rss / (n - 2) * n / sw;
        f.slope_se = std::sqrt(s2 / (sxx * n / sw));
        f.intercept_se = std::sqrt(s2 * (1.0 / n + mx * mx / (sxx * n / sw)));
    }
    f.x_lo = *std::min_element(x.begin(), x.end());
    f.x_hi = *std::max_element(x.begin(), x.end());
    return f;
}

LineFit fit_loglog(const std::vector<double>& x, const std::vector<double>& y,
                   const std::vector<double>& w) {
    std::vector<double> lx, ly, lw;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!(y[i] > 0) || !(x[i] > 0)) continue;
        lx.push_back(std::log(x[i]));
        ly.push_back(std::log(y[i]));
        if (!w.empty()) lw.push_back(w[i]);
    }
    LineFit f = fit_line(lx, ly, lw);
    if (!lx.empty()) {
        f.x_lo = std::exp(*std::min_element(lx.begin(), lx.end()));
        f.x_hi = std::exp(*std::max_element(lx.begin(), lx.end()));
    }
    return f;
}

PlaneFit fit_plane(const std::vector<double>& x1, const std::vector<double>& x2,
                   const std::vector<double>& y, const std::vector<double>& w) {
    const std::size_t n = y.size();
    PlaneFit f;
    f.points = n;
    if (n < 3) return f;
    Eigen::MatrixXd A(n, 3);
    Eigen::VectorXd b(n), sw(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double s = std::sqrt(w.empty() ? 1.0 : w[i]);
        sw(i) = s;
        A(i, 0) = s;
        A(i, 1) = s * x1[i];
        A(i, 2) = s * x2[i];
        b(i) = s * y[i];
    }
    const Eigen::Vector3d p = A.colPivHouseholderQr().solve(b);
    f.a = p(0);
    f.b = p(1);
    f.c = p(2);
    if (n > 3) {
        const double rss = (A * p - b).squaredNorm();
        const double s2 = rss / static_cast<double>(n - 3);
        const Eigen::Matrix3d cov = s2 * (A.transpose() * A).inverse();
        f.b_se = std::sqrt(std::max(cov(1, 1), 0.0));
        f.c_se = std::sqrt(std::max(cov(2, 2), 0.0));
    }
    return f;
}

double median(std::vector<double> v) {
    if (v.empty()) return std::nan("");
    const std::size_t mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + mid, v.end());
    double m = v[mid];
    if (v.size() % 2 == 0) {
        m = 0.5 * (m + *std::max_element(v.begin(), v.begin() + mid));
    }
    return m;
}

}  // namespace flatbill

#pragma once

#include <cstddef>
#include <vector>

namespace flatbill {

struct LineFit {
    double slope = 0.0;
    double intercept = 0.0;
    double slope_se = 0.0;
    double intercept_se = 0.0;
    std::size_t points = 0;
    double x_lo = 0.0, x_hi = 0.0;  // fit window in the original (unlogged) variable
    double ci_halfwidth() const { return 1.96 * slope_se; }
};

// Weighted least squares y = intercept + slope * x. Empty weights mean equal
// weights. The standard error is scaled by the residual variance.
LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y,
                 const std::vector<double>& w = {});

// Fit of log y against log x; points with y <= 0 are dropped.
LineFit fit_loglog(const std::vector<double>& x, const std::vector<double>& y,
                   const std::vector<double>& w = {});

struct PlaneFit {
    double a = 0.0, b = 0.0, c = 0.0;  // y = a + b x1 + c x2
    double b_se = 0.0, c_se = 0.0;
    std::size_t points = 0;
};
PlaneFit fit_plane(const std::vector<double>& x1, const std::vector<double>& x2,
                   const std::vector<double>& y, const std::vector<double>& w = {});

double median(std::vector<double> v);

}  // namespace flatbill

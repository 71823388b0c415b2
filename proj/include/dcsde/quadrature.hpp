#pragma once

#include <cmath>
#include <cstddef>

#include "dcsde/base.hpp"

namespace dcsde {

// Adaptive Simpson with interval bisection. The error control is the usual
// 1/15 Richardson estimate; tolerance is split across subintervals.
namespace detail {

template <typename F>
double simpson(F&& f, double a, double fa, double b, double fb, double& fm) {
    const double m = 0.5 * (a + b);
    fm = f(m);
    return (b - a) / 6.0 * (fa + 4.0 * fm + fb);
}

template <typename F>
double adaptive_simpson_rec(F&& f, double a, double fa, double m, double fm, double b,
                            double fb, double whole, double tol, int depth,
                            double& achieved) {
    double flm, frm;
    const double left = simpson(f, a, fa, m, fm, flm);
    const double right = simpson(f, m, fm, b, fb, frm);
    const double delta = left + right - whole;
    if (depth <= 0) {
        achieved = std::max(achieved, std::abs(delta));
        return left + right + delta / 15.0;
    }
    if (std::abs(delta) <= 15.0 * tol) {
        achieved = std::max(achieved, std::abs(delta) / 15.0);
        return left + right + delta / 15.0;
    }
    return adaptive_simpson_rec(f, a, fa, 0.5 * (a + m), flm, m, fm, left, 0.5 * tol,
                                depth - 1, achieved) +
           adaptive_simpson_rec(f, m, fm, 0.5 * (m + b), frm, b, fb, right, 0.5 * tol,
                                depth - 1, achieved);
}

} // namespace detail

struct QuadratureResult {
    double value = 0.0;
    double error_estimate = 0.0;
};

template <typename F>
QuadratureResult integrate(F&& f, double a, double b, double abs_tol, int max_depth = 48) {
    if (a == b) return {0.0, 0.0};
    QuadratureResult out;
    const double fa = f(a);
    const double fb = f(b);
    double fm;
    // Seed the recursion on a handful of panels so narrow features near the
    // endpoints are not missed by the first Simpson estimate.
    const int panels = 8;
    const double h = (b - a) / panels;
    double total = 0.0, achieved = 0.0;
    double x0 = a, f0 = fa;
    for (int p = 0; p < panels; ++p) {
        const double x1 = (p == panels - 1) ? b : a + (p + 1) * h;
        const double f1 = (p == panels - 1) ? fb : f(x1);
        const double whole = detail::simpson(f, x0, f0, x1, f1, fm);
        total += detail::adaptive_simpson_rec(f, x0, f0, 0.5 * (x0 + x1), fm, x1, f1, whole,
                                              abs_tol / panels, max_depth, achieved);
        x0 = x1;
        f0 = f1;
    }
    out.value = total;
    out.error_estimate = achieved;
    if (!(achieved <= abs_tol * 16.0) || !std::isfinite(total))
        throw AccuracyError("adaptive Simpson failed to reach requested tolerance", achieved);
    return out;
}

} // namespace dcsde

#pragma once

#include <cmath>
#include <utility>

namespace riskdp {

/// Golden-section minimization of a unimodal function on [a, b].
/// Returns (argmin, min). Tolerance is on the bracket width.
template <typename Fn>
std::pair<double, double> golden_min(Fn&& f, double a, double b, double tol = 1e-10) {
    if (b < a) std::swap(a, b);
    static const double inv_gr = (std::sqrt(5.0) - 1.0) / 2.0;  // 1/phi
    double c = b - inv_gr * (b - a);
    double d = a + inv_gr * (b - a);
    double fc = f(c);
    double fd = f(d);
    while (b - a > tol) {
        if (fc < fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_gr * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_gr * (b - a);
            fd = f(d);
        }
    }
    double xm = 0.5 * (a + b);
    double fm = f(xm);
    if (fc < fm) { xm = c; fm = fc; }
    if (fd < fm) { xm = d; fm = fd; }
    return {xm, fm};
}

/// Golden-section maximization on [a, b]; endpoints are checked explicitly.
template <typename Fn>
std::pair<double, double> golden_max(Fn&& f, double a, double b, double tol = 1e-10) {
    auto neg = [&](double x) { return -f(x); };
    auto [x, v] = golden_min(neg, a, b, tol);
    double best_x = x, best_v = -v;
    const double fa = f(a), fb = f(b);
    if (fa > best_v) { best_x = a; best_v = fa; }
    if (fb > best_v) { best_x = b; best_v = fb; }
    return {best_x, best_v};
}

}  // namespace riskdp

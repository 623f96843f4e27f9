#pragma once

#include <cmath>
#include <stdexcept>

namespace mmsi {

// Regularized incomplete beta function I_x(a, b) via the Lentz continued
// fraction; accurate to ~1e-14 over the range the t quantile needs.
inline double incomplete_beta(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;

    const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                            a * std::log(x) + b * std::log(1.0 - x);

    auto continued_fraction = [](double a_, double b_, double x_) {
        constexpr double tiny = 1e-300;
        constexpr int max_iter = 500;
        double c = 1.0;
        double d = 1.0 - (a_ + b_) * x_ / (a_ + 1.0);
        if (std::abs(d) < tiny) d = tiny;
        d = 1.0 / d;
        double f = d;
        for (int m = 1; m <= max_iter; ++m) {
            const double dm = static_cast<double>(m);
            double num = dm * (b_ - dm) * x_ / ((a_ + 2.0 * dm - 1.0) * (a_ + 2.0 * dm));
            d = 1.0 + num * d;
            if (std::abs(d) < tiny) d = tiny;
            c = 1.0 + num / c;
            if (std::abs(c) < tiny) c = tiny;
            d = 1.0 / d;
            f *= c * d;
            num = -(a_ + dm) * (a_ + b_ + dm) * x_ /
                  ((a_ + 2.0 * dm) * (a_ + 2.0 * dm + 1.0));
            d = 1.0 + num * d;
            if (std::abs(d) < tiny) d = tiny;
            c = 1.0 + num / c;
            if (std::abs(c) < tiny) c = tiny;
            d = 1.0 / d;
            const double delta = c * d;
            f *= delta;
            if (std::abs(delta - 1.0) < 1e-15) break;
        }
        return f;
    };

    // Symmetry keeps the continued fraction in its fast-converging region.
    if (x < (a + 1.0) / (a + b + 2.0))
        return std::exp(ln_front) * continued_fraction(a, b, x) / a;
    return 1.0 - std::exp(ln_front) * continued_fraction(b, a, 1.0 - x) / b;
}

inline double student_t_cdf(double t, double df) {
    if (df <= 0.0) throw std::runtime_error("degrees of freedom must be positive");
    const double x = df / (df + t * t);
    const double p = 0.5 * incomplete_beta(0.5 * df, 0.5, x);
    return t >= 0.0 ? 1.0 - p : p;
}

// Quantile by bisection on the CDF; 200 halvings reach full double precision.
inline double student_t_quantile(double p, double df) {
    if (p <= 0.0 || p >= 1.0) throw std::runtime_error("quantile level must be in (0,1)");
    if (df <= 0.0) throw std::runtime_error("degrees of freedom must be positive");
    double lo = -1.0, hi = 1.0;
    while (student_t_cdf(lo, df) > p) lo *= 2.0;
    while (student_t_cdf(hi, df) < p) hi *= 2.0;
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        if (student_t_cdf(mid, df) < p)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

}  // namespace mmsi

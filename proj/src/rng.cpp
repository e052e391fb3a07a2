#include "defect_fpp/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace dfpp {

std::uint64_t RngStream::poisson(double mean) {
    if (!(mean >= 0.0))
        throw std::invalid_argument("poisson: mean must be nonnegative");
    if (mean == 0.0) return 0;
    if (mean <= 30.0) return poisson_inversion(mean);
    return poisson_ptrs(mean);
}

std::uint64_t RngStream::poisson_inversion(double mean) {
    // Sequential search through the CDF. Safe in double up to mean ~ 700
    // (exp underflow); we only use it for mean <= 30.
    double p = std::exp(-mean);
    double cdf = p;
    std::uint64_t k = 0;
    const double u = uniform01();
    while (u > cdf) {
        ++k;
        p *= mean / static_cast<double>(k);
        cdf += p;
        if (k > 1000) break; // unreachable for mean <= 30; guards fp corner cases
    }
    return k;
}

std::uint64_t RngStream::poisson_ptrs(double mean) {
    // Transformed rejection with squeeze (Hormann 1993, PTRS). Valid for
    // mean >= 10; exact because acceptance is decided against the true pmf.
    const double slam = std::sqrt(mean);
    const double loglam = std::log(mean);
    const double b = 0.931 + 2.53 * slam;
    const double a = -0.059 + 0.02483 * b;
    const double inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    const double v_r = 0.9277 - 3.6224 / (b - 2.0);

    for (;;) {
        double u = uniform01() - 0.5;
        double v = uniform01();
        double us = 0.5 - std::fabs(u);
        double kf = std::floor((2.0 * a / us + b) * u + mean + 0.43);
        if (us >= 0.07 && v <= v_r)
            return static_cast<std::uint64_t>(kf);
        if (kf < 0.0 || (us < 0.013 && v > us))
            continue;
        double k = kf;
        double lhs = std::log(v * inv_alpha / (a / (us * us) + b));
        double rhs = k * loglam - mean - std::lgamma(k + 1.0);
        if (lhs <= rhs)
            return static_cast<std::uint64_t>(kf);
    }
}

} // namespace dfpp

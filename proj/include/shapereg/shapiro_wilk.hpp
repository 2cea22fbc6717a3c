// SPDX-License-Identifier: Apache-2.0
//
// Shapiro-Wilk normality test, Royston (1995) approximation (AS R94) for
// uncensored samples of size 3..5000.
#pragma once

#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "shapereg/errors.hpp"

namespace shapereg {

struct ShapiroWilkResult {
    double w = 0.0;
    double p_value = 0.0;
};

namespace detail {

template <std::size_t N>
double poly(const std::array<double, N>& c, double x) {
    double r = 0.0;
    for (std::size_t i = N; i-- > 0;) r = r * x + c[i];
    return r;
}

}  // namespace detail

inline ShapiroWilkResult shapiro_wilk(std::vector<double> samples) {
    using detail::poly;
    constexpr std::array<double, 6> c1{0.0, 0.221157, -0.147981, -2.071190, 4.434685, -2.706056};
    constexpr std::array<double, 6> c2{0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633};
    constexpr std::array<double, 4> c3{0.5440, -0.39978, 0.025054, -6.714e-4};
    constexpr std::array<double, 4> c4{1.3822, -0.77857, 0.062767, -0.0020322};
    constexpr std::array<double, 4> c5{-1.5861, -0.31082, -0.083751, 0.0038915};
    constexpr std::array<double, 3> c6{-0.4803, -0.082676, 0.0030302};
    constexpr std::array<double, 2> g{-2.273, 0.459};
    constexpr double small = 1e-19;

    const std::size_t n = samples.size();
    if (n < 3 || n > 5000) throw SampleSizeOutOfRange("shapiro-wilk needs 3..5000 samples");
    std::sort(samples.begin(), samples.end());
    const double range = samples.back() - samples.front();
    if (!(range > small * std::max(1.0, std::abs(samples.front()))))
        throw DegenerateSample("shapiro-wilk: all samples are equal");

    const std::size_t half = n / 2;
    const double an = static_cast<double>(n);
    std::vector<double> a(half);
    if (n == 3) {
        a[0] = std::sqrt(0.5);
    } else {
        const boost::math::normal_distribution<double> unit;
        const double an25 = an + 0.25;
        double summ2 = 0.0;
        for (std::size_t i = 0; i < half; ++i) {
            a[i] = boost::math::quantile(unit, (static_cast<double>(i + 1) - 0.375) / an25);
            summ2 += a[i] * a[i];
        }
        summ2 *= 2.0;
        const double ssumm2 = std::sqrt(summ2);
        const double rsn = 1.0 / std::sqrt(an);
        const double a1 = poly(c1, rsn) - a[0] / ssumm2;
        std::size_t first_scaled;
        double fac;
        if (n > 5) {
            first_scaled = 2;
            const double a2 = -a[1] / ssumm2 + poly(c2, rsn);
            fac = std::sqrt((summ2 - 2.0 * a[0] * a[0] - 2.0 * a[1] * a[1]) /
                            (1.0 - 2.0 * a1 * a1 - 2.0 * a2 * a2));
            a[1] = a2;
        } else {
            first_scaled = 1;
            fac = std::sqrt((summ2 - 2.0 * a[0] * a[0]) / (1.0 - 2.0 * a1 * a1));
        }
        a[0] = a1;
        for (std::size_t i = first_scaled; i < half; ++i) a[i] = -a[i] / fac;
    }

    // W as the squared correlation between the scaled data and the coefficients.
    double mean = 0.0;
    for (double x : samples) mean += x / range;
    mean /= an;
    double ssx = 0.0, sax = 0.0, ssa = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double xi = samples[i] / range - mean;
        ssx += xi * xi;
    }
    for (std::size_t i = 0; i < half; ++i) {
        const double lo = samples[i] / range - mean;
        const double hi = samples[n - 1 - i] / range - mean;
        sax += a[i] * (hi - lo);
        ssa += 2.0 * a[i] * a[i];
    }
    const double ssassx = std::sqrt(ssa * ssx);
    const double w1 = (ssassx - sax) * (ssassx + sax) / (ssa * ssx);
    ShapiroWilkResult res;
    res.w = std::min(1.0, 1.0 - w1);

    if (n == 3) {
        constexpr double pi6 = 1.90985931710274;  // 6/pi
        constexpr double stqr = 1.04719755119660;  // pi/3
        res.p_value = std::max(0.0, pi6 * (std::asin(std::sqrt(res.w)) - stqr));
        return res;
    }
    double y = std::log(w1);
    const double xx = std::log(an);
    double m, s;
    if (n <= 11) {
        const double gamma = poly(g, an);
        if (y >= gamma) {
            res.p_value = small;
            return res;
        }
        y = -std::log(gamma - y);
        m = poly(c3, an);
        s = std::exp(poly(c4, an));
    } else {
        m = poly(c5, xx);
        s = std::exp(poly(c6, xx));
    }
    res.p_value = 0.5 * std::erfc((y - m) / s / std::sqrt(2.0));
    return res;
}

}  // namespace shapereg

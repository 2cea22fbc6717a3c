// SPDX-License-Identifier: Apache-2.0
//
// Heatmaps, integral (soft-argmax) decoding, latent offset sampling and the
// two heatmap losses with exact gradients.
#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "shapereg/errors.hpp"
#include "shapereg/geometry.hpp"
#include "shapereg/regulation.hpp"
#include "shapereg/rng.hpp"

namespace shapereg {

/// Row-major grid of doubles. Pixel (r, c) is centred at ((c+0.5)/W, (r+0.5)/H).
struct Grid {
    int rows = 0;
    int cols = 0;
    std::vector<double> values;

    Grid() = default;
    Grid(int r, int c, double fill = 0.0) : rows(r), cols(c), values(static_cast<std::size_t>(r) * c, fill) {}

    std::size_t size() const { return values.size(); }
    double& at(int r, int c) { return values[static_cast<std::size_t>(r) * cols + c]; }
    double at(int r, int c) const { return values[static_cast<std::size_t>(r) * cols + c]; }

    Point center(std::size_t idx) const {
        const auto r = static_cast<int>(idx / static_cast<std::size_t>(cols));
        const auto c = static_cast<int>(idx % static_cast<std::size_t>(cols));
        return {(c + 0.5) / cols, (r + 0.5) / rows};
    }

    friend bool operator==(const Grid&, const Grid&) = default;
};

using Heatmap = Grid;
using Image = Grid;

inline constexpr double kGammaGuard = 1e-30;

inline Point decode(const Heatmap& h) {
    long double sx = 0, sy = 0, gamma = 0;
    for (std::size_t i = 0; i < h.size(); ++i) {
        const Point p = h.center(i);
        const long double v = h.values[i];
        gamma += v;
        sx += v * p.x();
        sy += v * p.y();
    }
    gamma += kGammaGuard;
    return {static_cast<double>(sx / gamma), static_cast<double>(sy / gamma)};
}

inline std::vector<Point> decode_all(const std::vector<Heatmap>& hs) {
    std::vector<Point> out;
    out.reserve(hs.size());
    for (const auto& h : hs) out.push_back(decode(h));
    return out;
}

/// Isotropic Gaussian bump rendered on the pixel-centre grid, squashed into
/// (0,1) the way a sigmoid head would produce it.
inline Heatmap render_gaussian(int rows, int cols, const Point& c, double sigma, double floor = 1e-6) {
    Heatmap h(rows, cols);
    for (std::size_t i = 0; i < h.size(); ++i) {
        const double d2 = (h.center(i) - c).squaredNorm();
        h.values[i] = floor + (1.0 - 2.0 * floor) * std::exp(-d2 / (2.0 * sigma * sigma));
    }
    return h;
}

struct OffsetDistribution {
    double mean = 0.01;
    double std = 0.005;
};

struct LatentOffsets {
    std::vector<double> magnitudes;
};

/// Magnitudes |delta_i| ~ N(mean, std^2) truncated at zero by resampling.
inline LatentOffsets sample_offsets(std::size_t n, std::uint64_t seed, OffsetDistribution dist = {}) {
    if (n == 0) throw ValidationError("sample_offsets: n must be positive");
    Rng rng(seed);
    LatentOffsets out;
    out.magnitudes.reserve(n);
    while (out.magnitudes.size() < n) {
        const double d = dist.mean + dist.std * standard_normal(rng);
        if (d > 0.0) out.magnitudes.push_back(d);
    }
    return out;
}

struct LossResult {
    double loss = 0.0;
    std::vector<Grid> grad;
};

inline double sign_of(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

/// Region attention loss: sum over valid landmarks of
/// | |delta_i| - E_{H_i/gamma_i}[ |rho - x_i| ] |.
inline LossResult region_attention_loss(const std::vector<Heatmap>& heatmaps, const PseudoLabel& pseudo,
                                        const LatentOffsets& offsets) {
    const std::size_t n = heatmaps.size();
    if (pseudo.coords.size() != n || pseudo.valid.size() != n || offsets.magnitudes.size() != n)
        throw ShapeMismatch("region_attention_loss: landmark count mismatch");
    LossResult res;
    res.grad.reserve(n);
    std::vector<double> dist;
    for (std::size_t i = 0; i < n; ++i) {
        const Heatmap& h = heatmaps[i];
        Grid g(h.rows, h.cols, 0.0);
        if (pseudo.valid[i]) {
            dist.resize(h.size());
            long double gamma = 0, weighted = 0;
            for (std::size_t p = 0; p < h.size(); ++p) {
                dist[p] = (h.center(p) - pseudo.coords[i]).norm();
                gamma += h.values[p];
                weighted += static_cast<long double>(h.values[p]) * dist[p];
            }
            gamma += kGammaGuard;
            const double expected = static_cast<double>(weighted / gamma);
            const double resid = offsets.magnitudes[i] - expected;
            res.loss += std::abs(resid);
            // d expected / d h_p = (dist_p - expected) / gamma
            const double scale = -sign_of(resid) / static_cast<double>(gamma);
            for (std::size_t p = 0; p < h.size(); ++p) g.values[p] = scale * (dist[p] - expected);
        }
        res.grad.push_back(std::move(g));
    }
    return res;
}

/// L1 distance between decoded coordinates and target landmarks, over the
/// target's valid landmarks.
inline LossResult l1_coordinate_loss(const std::vector<Heatmap>& heatmaps, const LandmarkSet& target) {
    const std::size_t n = heatmaps.size();
    if (target.size() != n || target.valid.size() != n)
        throw ShapeMismatch("l1_coordinate_loss: landmark count mismatch");
    LossResult res;
    res.grad.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const Heatmap& h = heatmaps[i];
        Grid g(h.rows, h.cols, 0.0);
        if (target.valid[i]) {
            long double gamma = 0;
            for (double v : h.values) gamma += v;
            gamma += kGammaGuard;
            const Point u = decode(h);
            const Point diff = u - target.coords[i];
            res.loss += std::abs(diff.x()) + std::abs(diff.y());
            const double sx = sign_of(diff.x()) / static_cast<double>(gamma);
            const double sy = sign_of(diff.y()) / static_cast<double>(gamma);
            for (std::size_t p = 0; p < h.size(); ++p) {
                const Point rho = h.center(p);
                g.values[p] = sx * (rho.x() - u.x()) + sy * (rho.y() - u.y());
            }
        }
        res.grad.push_back(std::move(g));
    }
    return res;
}

}  // namespace shapereg

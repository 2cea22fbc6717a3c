// SPDX-License-Identifier: Apache-2.0
// Shared fixtures for the unit tests.
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "shapereg/geometry.hpp"
#include "shapereg/heatmap.hpp"

namespace testutil {

using shapereg::Point;
using shapereg::ShapeVector;

// Test-local generator, independent of the library's seeding scheme.
inline std::mt19937_64 rng(std::uint64_t seed) { return std::mt19937_64(seed * 0x9E3779B97F4A7C15ULL + 17); }

inline double unif(std::mt19937_64& g, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(g);
}

inline double gauss(std::mt19937_64& g) { return std::normal_distribution<double>(0.0, 1.0)(g); }

inline ShapeVector random_shape(std::mt19937_64& g, std::size_t n) {
    Eigen::VectorXd v(2 * static_cast<Eigen::Index>(n));
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = unif(g, 0.1, 0.9);
    return ShapeVector(v);
}

inline shapereg::SimilarityTransform random_similarity(std::mt19937_64& g) {
    shapereg::SimilarityTransform t;
    t.scale = unif(g, 0.5, 2.0);
    t.rotation = unif(g, -3.0, 3.0);
    t.translation = Point(unif(g, -1.0, 1.0), unif(g, -1.0, 1.0));
    return t;
}

inline shapereg::Heatmap random_heatmap(std::mt19937_64& g, int size) {
    shapereg::Heatmap h(size, size, 0.0);
    for (auto& v : h.values) v = unif(g, 0.05, 1.0);
    return h;
}

// Smallest angle between two unit vectors, ignoring sign.
inline double angle_deg(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    const double c = std::min(1.0, std::abs(a.normalized().dot(b.normalized())));
    return std::acos(c) * 180.0 / M_PI;
}

}  // namespace testutil

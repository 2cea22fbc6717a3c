// SPDX-License-Identifier: Apache-2.0
//
// Landmark sets, shape vectors, 2D similarity transforms and Procrustes
// alignment (pairwise and generalized).
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <cstddef>
#include <string>
#include <vector>

#include "shapereg/errors.hpp"

namespace shapereg {

using Point = Eigen::Vector2d;

/// Landmark coordinates of one sample, normalized to [0,1] per image axis.
struct LandmarkSet {
    std::vector<Point> coords;
    std::vector<bool> valid;
    double spacing_mm = 100.0;

    LandmarkSet() = default;
    explicit LandmarkSet(std::vector<Point> pts, double spacing = 100.0)
        : coords(std::move(pts)), valid(coords.size(), true), spacing_mm(spacing) {}

    std::size_t size() const { return coords.size(); }

    std::size_t valid_count() const {
        std::size_t k = 0;
        for (bool v : valid) k += v ? 1 : 0;
        return k;
    }

    void validate() const {
        if (coords.size() < 3) throw ValidationError("landmark set needs at least 3 landmarks");
        if (valid.size() != coords.size()) throw ValidationError("validity mask length mismatch");
        if (!(spacing_mm > 0.0) || !std::isfinite(spacing_mm))
            throw ValidationError("spacing_mm must be positive");
        for (const auto& p : coords) {
            if (!p.allFinite()) throw ValidationError("non-finite landmark coordinate");
        }
    }

    friend bool operator==(const LandmarkSet& a, const LandmarkSet& b) {
        return a.coords == b.coords && a.valid == b.valid && a.spacing_mm == b.spacing_mm;
    }
};

/// Interleaved (x1, y1, ..., xn, yn) layout.
struct ShapeVector {
    Eigen::VectorXd values;

    ShapeVector() = default;
    explicit ShapeVector(Eigen::VectorXd v) : values(std::move(v)) {
        if (values.size() % 2 != 0) throw ShapeMismatch("shape vector length must be even");
    }

    std::size_t landmark_count() const { return static_cast<std::size_t>(values.size() / 2); }
    Point point(std::size_t i) const { return {values[2 * i], values[2 * i + 1]}; }
    void set_point(std::size_t i, const Point& p) {
        values[2 * i] = p.x();
        values[2 * i + 1] = p.y();
    }
};

inline ShapeVector flatten(const LandmarkSet& set) {
    Eigen::VectorXd v(2 * set.size());
    for (std::size_t i = 0; i < set.size(); ++i) {
        v[2 * i] = set.coords[i].x();
        v[2 * i + 1] = set.coords[i].y();
    }
    return ShapeVector(std::move(v));
}

inline LandmarkSet unflatten(const ShapeVector& s, double spacing_mm = 100.0) {
    std::vector<Point> pts(s.landmark_count());
    for (std::size_t i = 0; i < pts.size(); ++i) pts[i] = s.point(i);
    return LandmarkSet(std::move(pts), spacing_mm);
}

/// p -> scale * R(rotation) * p + translation.
struct SimilarityTransform {
    double scale = 1.0;
    double rotation = 0.0;
    Point translation = Point::Zero();

    static SimilarityTransform identity() { return {}; }

    Eigen::Matrix2d linear() const {
        const double c = std::cos(rotation), s = std::sin(rotation);
        Eigen::Matrix2d m;
        m << c, -s, s, c;
        return scale * m;
    }

    Point apply(const Point& p) const { return linear() * p + translation; }

    SimilarityTransform inverse() const {
        SimilarityTransform inv;
        inv.scale = 1.0 / scale;
        inv.rotation = -rotation;
        inv.translation = -(inv.linear() * translation);
        return inv;
    }

    /// (*this) after `first`.
    SimilarityTransform compose(const SimilarityTransform& first) const {
        SimilarityTransform out;
        out.scale = scale * first.scale;
        out.rotation = std::remainder(rotation + first.rotation, 2.0 * M_PI);
        out.translation = linear() * first.translation + translation;
        return out;
    }
};

inline ShapeVector apply_transform(const SimilarityTransform& t, const ShapeVector& s) {
    ShapeVector out = s;
    const Eigen::Matrix2d a = t.linear();
    for (std::size_t i = 0; i < s.landmark_count(); ++i) out.set_point(i, a * s.point(i) + t.translation);
    return out;
}

/// Least-squares similarity mapping the valid points of `source` onto
/// `target`. Solved in complex form w = a z + b, which always yields a proper
/// rotation (no reflection). An empty mask means all landmarks are used.
inline SimilarityTransform procrustes_align(const ShapeVector& source, const ShapeVector& target,
                                            const std::vector<bool>& mask = {}) {
    using C = std::complex<double>;
    const std::size_t n = source.landmark_count();
    if (target.landmark_count() != n) throw ShapeMismatch("procrustes: landmark counts differ");
    if (!mask.empty() && mask.size() != n) throw ShapeMismatch("procrustes: mask length mismatch");

    C zc{0, 0}, wc{0, 0};
    std::size_t used = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!mask.empty() && !mask[i]) continue;
        zc += C(source.values[2 * i], source.values[2 * i + 1]);
        wc += C(target.values[2 * i], target.values[2 * i + 1]);
        ++used;
    }
    if (used < 3) throw DegenerateShape("procrustes: fewer than 3 valid landmarks");
    zc /= static_cast<double>(used);
    wc /= static_cast<double>(used);

    C cross{0, 0};
    double norm2 = 0.0, extent = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!mask.empty() && !mask[i]) continue;
        const C z = C(source.values[2 * i], source.values[2 * i + 1]) - zc;
        const C w = C(target.values[2 * i], target.values[2 * i + 1]) - wc;
        cross += std::conj(z) * w;
        norm2 += std::norm(z);
        extent = std::max(extent, std::abs(C(source.values[2 * i], source.values[2 * i + 1])));
    }
    if (norm2 <= 1e-24 * std::max(1.0, extent * extent))
        throw DegenerateShape("procrustes: valid source points are coincident");

    const C a = cross / norm2;
    if (std::abs(a) == 0.0) throw DegenerateShape("procrustes: target carries no spread");
    const C b = wc - a * zc;

    SimilarityTransform t;
    t.scale = std::abs(a);
    t.rotation = std::arg(a);
    t.translation = Point(b.real(), b.imag());
    return t;
}

inline Point centroid(const ShapeVector& s) {
    Point c = Point::Zero();
    for (std::size_t i = 0; i < s.landmark_count(); ++i) c += s.point(i);
    return c / static_cast<double>(s.landmark_count());
}

/// Centroid to origin, Frobenius norm to 1.
inline ShapeVector normalize_shape(const ShapeVector& s) {
    ShapeVector out = s;
    const Point c = centroid(s);
    for (std::size_t i = 0; i < s.landmark_count(); ++i) out.set_point(i, s.point(i) - c);
    const double nrm = out.values.norm();
    if (!(nrm > 1e-12)) throw DegenerateShape("shape has no spatial extent");
    out.values /= nrm;
    return out;
}

/// Pose that carries `shape` into the frame of a zero-centroid, unit-norm
/// `reference`: least-squares rotation and translation, with the scale chosen
/// so the result x satisfies x . reference = 1 (tangent-space projection).
/// Deviations of the result from the reference are then orthogonal to every
/// similarity direction at the reference, which keeps shape coefficients
/// linear in the deformation.
inline SimilarityTransform tangent_pose(const ShapeVector& shape, const ShapeVector& reference) {
    SimilarityTransform t = procrustes_align(shape, reference);
    const ShapeVector aligned = apply_transform(t, shape);
    const double proj = aligned.values.dot(reference.values);
    if (!(proj > 0.0)) throw DegenerateShape("shape is orthogonal to the reference");
    const double f = reference.values.squaredNorm() / proj;
    t.scale *= f;
    t.translation *= f;
    return t;
}

struct GpaResult {
    ShapeVector mean;
    std::vector<ShapeVector> aligned;
    std::size_t iterations = 0;
    bool converged = false;
};

struct GpaOptions {
    double tolerance = 1e-7;
    std::size_t max_iterations = 100;
};

/// Generalized Procrustes analysis. The mean has zero centroid and unit norm;
/// its orientation is pinned to the average of the normalized inputs, which
/// does not depend on input order. `aligned` holds the inputs in tangent
/// coordinates of the final mean. Reaching the iteration cap is reported via
/// `converged == false` together with the last iterate.
inline GpaResult generalized_procrustes(const std::vector<ShapeVector>& shapes, GpaOptions opts = {}) {
    if (shapes.size() < 2) throw InsufficientData("generalized procrustes needs at least 2 shapes");
    const std::size_t n = shapes.front().landmark_count();
    std::vector<ShapeVector> normalized;
    normalized.reserve(shapes.size());
    for (const auto& s : shapes) {
        if (s.landmark_count() != n) throw ShapeMismatch("generalized procrustes: landmark counts differ");
        normalized.push_back(normalize_shape(s));
    }

    Eigen::VectorXd avg = Eigen::VectorXd::Zero(2 * static_cast<Eigen::Index>(n));
    for (const auto& s : normalized) avg += s.values;
    ShapeVector reference;
    if (avg.norm() > 1e-3 * static_cast<double>(shapes.size())) {
        reference = normalize_shape(ShapeVector(avg));
    } else {
        // Inputs in arbitrary orientations cancel out; fall back to the first shape.
        reference = normalized.front();
    }

    GpaResult res;
    res.mean = reference;
    res.aligned.resize(shapes.size());
    for (std::size_t it = 1; it <= opts.max_iterations; ++it) {
        Eigen::VectorXd sum = Eigen::VectorXd::Zero(avg.size());
        for (std::size_t k = 0; k < normalized.size(); ++k) {
            res.aligned[k] = apply_transform(tangent_pose(normalized[k], res.mean), normalized[k]);
            sum += res.aligned[k].values;
        }
        ShapeVector next = normalize_shape(ShapeVector(sum));
        const SimilarityTransform gauge = procrustes_align(next, reference);
        SimilarityTransform rot_only;
        rot_only.rotation = gauge.rotation;
        next = apply_transform(rot_only, next);

        const double change = (next.values - res.mean.values).norm();
        res.mean = std::move(next);
        res.iterations = it;
        if (change < opts.tolerance) {
            res.converged = true;
            break;
        }
    }
    for (std::size_t k = 0; k < normalized.size(); ++k)
        res.aligned[k] = apply_transform(tangent_pose(normalized[k], res.mean), normalized[k]);
    return res;
}

}  // namespace shapereg

// SPDX-License-Identifier: Apache-2.0
//
// Procedural landmark images with a known low-rank shape distribution.
#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "shapereg/errors.hpp"
#include "shapereg/geometry.hpp"
#include "shapereg/heatmap.hpp"
#include "shapereg/rng.hpp"

namespace shapereg {

struct DeformMode {
    Eigen::VectorXd direction;  // 2n, unit norm
    double std = 0.0;
};

struct PoseRanges {
    double min_scale = 0.9;
    double max_scale = 1.1;
    double max_rotation = 0.15;     // radians, symmetric
    double max_translation = 0.05;  // normalized units, per axis
};

struct RenderSpec {
    double blob_sigma = 0.025;     // normalized units
    double contrast = 0.8;
    double line_intensity = 0.12;
    double line_width = 0.012;
    double background = 0.05;
};

struct Sample {
    Image image;
    LandmarkSet landmarks;
};

struct GeneratorSpec {
    std::size_t n_landmarks = 12;
    ShapeVector base_shape;
    std::vector<DeformMode> deform_modes;
    PoseRanges pose;
    RenderSpec render;
    int image_size = 64;
    double spacing_mm = 100.0;
    double margin = 0.05;
    std::uint64_t seed = 0;

    void validate() const {
        if (n_landmarks < 3 || base_shape.landmark_count() != n_landmarks)
            throw ValidationError("generator: base shape must have n_landmarks >= 3 points");
        if (image_size < 4) throw ValidationError("generator: image too small");
        for (std::size_t k = 0; k < deform_modes.size(); ++k) {
            const auto& m = deform_modes[k];
            if (m.direction.size() != static_cast<Eigen::Index>(2 * n_landmarks))
                throw ValidationError("generator: deformation direction has wrong length");
            if (m.std < 0.0) throw ValidationError("generator: deformation std must be non-negative");
            if (k > 0 && m.std > deform_modes[k - 1].std) throw ValidationError("generator: stds must be non-increasing");
            for (std::size_t j = 0; j <= k; ++j) {
                const double d = m.direction.dot(deform_modes[j].direction);
                if (std::abs(d - (j == k ? 1.0 : 0.0)) > 1e-9)
                    throw ValidationError("generator: deformation directions must be orthonormal");
            }
        }
        if (pose.min_scale <= 0.0 || pose.max_scale < pose.min_scale || pose.max_rotation < 0.0 ||
            pose.max_translation < 0.0)
            throw ValidationError("generator: invalid pose ranges");
    }
};

/// Hand-placed asymmetric 12-point outline around the image centre. The
/// asymmetry rules out reflection ambiguity during alignment.
inline ShapeVector default_base_shape() {
    static constexpr double pts[12][2] = {
        {0.50, 0.22}, {0.63, 0.27}, {0.72, 0.36}, {0.76, 0.50}, {0.71, 0.62}, {0.66, 0.73},
        {0.52, 0.78}, {0.40, 0.74}, {0.30, 0.64}, {0.25, 0.52}, {0.31, 0.38}, {0.39, 0.30},
    };
    Eigen::VectorXd v(24);
    for (int i = 0; i < 12; ++i) {
        v[2 * i] = pts[i][0];
        v[2 * i + 1] = pts[i][1];
    }
    return ShapeVector(v);
}

/// Smooth deformation directions made orthonormal to each other and to the
/// four similarity directions (two translations, scale, rotation) at `base`,
/// so that Procrustes alignment cannot absorb any part of them.
inline std::vector<Eigen::VectorXd> similarity_free_modes(const ShapeVector& base, std::size_t count) {
    const std::size_t n = base.landmark_count();
    const auto dim = static_cast<Eigen::Index>(2 * n);
    const Point c = centroid(base);
    std::vector<Eigen::VectorXd> basis;
    Eigen::VectorXd tx = Eigen::VectorXd::Zero(dim), ty = Eigen::VectorXd::Zero(dim);
    Eigen::VectorXd sc(dim), rot(dim);
    for (std::size_t i = 0; i < n; ++i) {
        const Point p = base.point(i) - c;
        tx[2 * i] = 1.0;
        ty[2 * i + 1] = 1.0;
        sc[2 * i] = p.x();
        sc[2 * i + 1] = p.y();
        rot[2 * i] = -p.y();
        rot[2 * i + 1] = p.x();
    }
    auto orthonormalize_into = [&basis](Eigen::VectorXd v) {
        for (int pass = 0; pass < 2; ++pass)
            for (const auto& b : basis) v -= v.dot(b) * b;
        const double nrm = v.norm();
        if (nrm < 1e-9) return false;
        basis.push_back(v / nrm);
        return true;
    };
    for (auto v : {tx, ty, sc, rot}) orthonormalize_into(v);

    std::vector<Eigen::VectorXd> modes;
    for (int harmonic = 2; modes.size() < count && harmonic < 2 + 4 * static_cast<int>(n); ++harmonic) {
        // Alternate radial and tangential waves of increasing frequency.
        const int freq = harmonic / 2 + 1;
        const bool radial = harmonic % 2 == 0;
        Eigen::VectorXd v(dim);
        for (std::size_t i = 0; i < n; ++i) {
            const Point p = base.point(i) - c;
            const double ang = std::atan2(p.y(), p.x());
            const Point radial_dir = p.normalized();
            const Point tangent(-radial_dir.y(), radial_dir.x());
            const double amp = std::cos(freq * ang + 0.3 * freq);
            const Point d = radial ? Point(amp * radial_dir) : Point(amp * tangent);
            v[2 * i] = d.x();
            v[2 * i + 1] = d.y();
        }
        if (orthonormalize_into(v)) modes.push_back(basis.back());
    }
    if (modes.size() < count) throw ValidationError("could not build enough deformation modes");
    return modes;
}

inline GeneratorSpec default_generator_spec(std::uint64_t seed = 0) {
    GeneratorSpec spec;
    spec.base_shape = default_base_shape();
    spec.n_landmarks = spec.base_shape.landmark_count();
    const auto dirs = similarity_free_modes(spec.base_shape, 3);
    const double stds[3] = {0.04, 0.02, 0.01};
    for (std::size_t k = 0; k < 3; ++k) spec.deform_modes.push_back({dirs[k], stds[k]});
    spec.seed = seed;
    return spec;
}

/// Soft blobs at the landmarks plus a faint closed polyline through them.
inline Image render_landmarks(const LandmarkSet& lm, int size, const RenderSpec& r) {
    Image img(size, size, r.background);
    const std::size_t n = lm.size();
    const double inv2s2 = 1.0 / (2.0 * r.blob_sigma * r.blob_sigma);
    const double inv2w2 = 1.0 / (2.0 * r.line_width * r.line_width);
    for (std::size_t p = 0; p < img.size(); ++p) {
        const Point q = img.center(p);
        double blob = 0.0;
        double line = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const Point& a = lm.coords[i];
            blob = std::max(blob, std::exp(-(q - a).squaredNorm() * inv2s2));
            const Point& b = lm.coords[(i + 1) % n];
            const Point ab = b - a;
            const double t = std::clamp((q - a).dot(ab) / std::max(ab.squaredNorm(), 1e-18), 0.0, 1.0);
            line = std::max(line, std::exp(-(q - (a + t * ab)).squaredNorm() * inv2w2));
        }
        img.values[p] = std::min(1.0, r.background + r.line_intensity * line + r.contrast * blob);
    }
    return img;
}

inline double pose_draw(Rng& rng, double lo, double hi) { return lo == hi ? lo : uniform(rng, lo, hi); }

/// Sample `index` of the stream defined by spec.seed; samples are independent
/// of how many others are generated.
inline Sample generate_one(const GeneratorSpec& spec, std::uint64_t index) {
    Rng rng = make_rng(spec.seed, Stream::Data, index);
    const Point center(0.5, 0.5);
    for (int attempt = 0; attempt < 1000; ++attempt) {
        Eigen::VectorXd shape = spec.base_shape.values;
        for (const auto& m : spec.deform_modes) shape += m.std * standard_normal(rng) * m.direction;
        SimilarityTransform pose;
        pose.scale = pose_draw(rng, spec.pose.min_scale, spec.pose.max_scale);
        pose.rotation = pose_draw(rng, -spec.pose.max_rotation, spec.pose.max_rotation);
        const Point shift(pose_draw(rng, -spec.pose.max_translation, spec.pose.max_translation),
                          pose_draw(rng, -spec.pose.max_translation, spec.pose.max_translation));
        // Rotate and scale about the image centre, then shift.
        pose.translation = center - pose.linear() * center + shift;
        const ShapeVector posed = apply_transform(pose, ShapeVector(shape));
        bool inside = true;
        for (Eigen::Index j = 0; j < posed.values.size(); ++j) {
            inside = inside && posed.values[j] >= spec.margin && posed.values[j] <= 1.0 - spec.margin;
        }
        if (!inside) continue;
        Sample s;
        s.landmarks = unflatten(posed, spec.spacing_mm);
        s.image = render_landmarks(s.landmarks, spec.image_size, spec.render);
        return s;
    }
    throw ValidationError("generator: pose/deformation ranges never fit inside the render margin");
}

inline std::vector<Sample> generate(const GeneratorSpec& spec, std::size_t count, std::uint64_t first_index = 0) {
    if (count == 0) throw ValidationError("generate: count must be at least 1");
    spec.validate();
    std::vector<Sample> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) out.push_back(generate_one(spec, first_index + i));
    return out;
}

/// Gaussian jitter (std noise_mm per axis) plus, with probability
/// outlier_prob per landmark, a displacement of magnitude in
/// [outlier_mm, 2 outlier_mm] in a uniformly random direction.
inline LandmarkSet corrupt_predictions(const LandmarkSet& truth, double noise_mm, double outlier_prob,
                                       double outlier_mm, Rng& rng) {
    if (noise_mm < 0.0 || outlier_prob < 0.0 || outlier_prob > 1.0 || outlier_mm < 0.0)
        throw ValidationError("corrupt_predictions: parameters must be non-negative (probability <= 1)");
    LandmarkSet out = truth;
    const double to_units = 1.0 / truth.spacing_mm;
    for (auto& p : out.coords) {
        if (noise_mm > 0.0) {
            p.x() += noise_mm * to_units * standard_normal(rng);
            p.y() += noise_mm * to_units * standard_normal(rng);
        }
        if (outlier_prob > 0.0 && uniform(rng, 0.0, 1.0) < outlier_prob) {
            const double mag = outlier_mm * to_units * uniform(rng, 1.0, 2.0);
            const double ang = uniform(rng, 0.0, 2.0 * M_PI);
            p += mag * Point(std::cos(ang), std::sin(ang));
        }
    }
    return out;
}

}  // namespace shapereg

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <optional>

#include "shapereg/geometry.hpp"
#include "shapereg/heatmap.hpp"
#include "shapereg/rng.hpp"

namespace shapereg {

struct AugmentConfig {
    double max_translate = 0.03;   // normalized units, per axis
    double max_rotate_rad = 0.1;
    double noise_std = 0.02;

    void validate() const {
        if (max_translate < 0.0 || max_rotate_rad < 0.0 || noise_std < 0.0)
            throw ValidationError("augmentation bounds must be non-negative");
    }
};

struct Augmented {
    Image image;
    std::optional<LandmarkSet> landmarks;
    SimilarityTransform transform;  // maps original normalized coords to augmented ones
};

/// Rotation by `angle` about the image centre followed by `shift`.
inline SimilarityTransform centred_rigid(double angle, const Point& shift) {
    SimilarityTransform t;
    t.rotation = angle;
    const Point c(0.5, 0.5);
    t.translation = c - t.linear() * c + shift;
    return t;
}

inline LandmarkSet transform_landmarks(const SimilarityTransform& t, const LandmarkSet& lm) {
    LandmarkSet out = lm;
    for (auto& p : out.coords) p = t.apply(p);
    return out;
}

/// Bilinear resampling of `img` under `t` (output(q) = img(t^-1 q)), clamped at the border.
inline Image warp_image(const Image& img, const SimilarityTransform& t) {
    const SimilarityTransform inv = t.inverse();
    Image out(img.rows, img.cols);
    for (int r = 0; r < img.rows; ++r) {
        for (int c = 0; c < img.cols; ++c) {
            const Point q((c + 0.5) / img.cols, (r + 0.5) / img.rows);
            const Point s = inv.apply(q);
            const double fx = std::clamp(s.x() * img.cols - 0.5, 0.0, img.cols - 1.0);
            const double fy = std::clamp(s.y() * img.rows - 0.5, 0.0, img.rows - 1.0);
            const int x0 = std::min(static_cast<int>(fx), img.cols - 2 < 0 ? 0 : img.cols - 2);
            const int y0 = std::min(static_cast<int>(fy), img.rows - 2 < 0 ? 0 : img.rows - 2);
            const int x1 = std::min(x0 + 1, img.cols - 1), y1 = std::min(y0 + 1, img.rows - 1);
            const double ax = fx - x0, ay = fy - y0;
            out.at(r, c) = (1 - ay) * ((1 - ax) * img.at(y0, x0) + ax * img.at(y0, x1)) +
                           ay * ((1 - ax) * img.at(y1, x0) + ax * img.at(y1, x1));
        }
    }
    return out;
}

/// Random translation, rotation about the centre and additive Gaussian pixel
/// noise. Zero bounds leave the input untouched bit for bit.
inline Augmented augment(const Image& image, const std::optional<LandmarkSet>& landmarks, const AugmentConfig& cfg,
                         Rng& rng) {
    cfg.validate();
    const double angle = cfg.max_rotate_rad > 0.0 ? uniform(rng, -cfg.max_rotate_rad, cfg.max_rotate_rad) : 0.0;
    Point shift = Point::Zero();
    if (cfg.max_translate > 0.0) {
        shift.x() = uniform(rng, -cfg.max_translate, cfg.max_translate);
        shift.y() = uniform(rng, -cfg.max_translate, cfg.max_translate);
    }
    Augmented out;
    out.transform = centred_rigid(angle, shift);
    out.image = (angle == 0.0 && shift.isZero()) ? image : warp_image(image, out.transform);
    if (cfg.noise_std > 0.0) {
        for (double& v : out.image.values) v += cfg.noise_std * standard_normal(rng);
    }
    if (landmarks) {
        out.landmarks = (angle == 0.0 && shift.isZero()) ? *landmarks : transform_landmarks(out.transform, *landmarks);
    }
    return out;
}

}  // namespace shapereg

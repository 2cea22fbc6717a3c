// SPDX-License-Identifier: Apache-2.0
//
// Shape regulation of pseudo labels: 3-sigma coefficient clamping, adjusted
// shape reconstruction and per-landmark abnormal detection.
#pragma once

#include <algorithm>
#include <vector>

#include "shapereg/geometry.hpp"
#include "shapereg/shape_model.hpp"

namespace shapereg {

inline constexpr double kDefaultZmm = 2.0;

enum class PseudoBranch { Adjusted, RawWithExclusions };

inline const char* to_string(PseudoBranch b) {
    return b == PseudoBranch::Adjusted ? "adjusted" : "raw_with_exclusions";
}

struct PseudoLabel {
    std::vector<Point> coords;
    std::vector<bool> valid;
    PseudoBranch branch = PseudoBranch::Adjusted;
    double max_deviation_mm = 0.0;
    std::vector<double> deviation_mm;  // per landmark, between adjusted and initial shape

    std::size_t valid_count() const { return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), true)); }

    /// Unregulated label: the prediction itself, every landmark valid.
    static PseudoLabel passthrough(const LandmarkSet& initial) {
        PseudoLabel p;
        p.coords = initial.coords;
        p.valid.assign(initial.size(), true);
        p.deviation_mm.assign(initial.size(), 0.0);
        return p;
    }
};

inline ShapeCoefficients clamp_coefficients(const ShapeModel& model, const ShapeCoefficients& coeffs) {
    if (coeffs.values.size() != model.sigmas.size()) throw ShapeMismatch("clamp: coefficient count mismatch");
    ShapeCoefficients out = coeffs;
    for (Eigen::Index k = 0; k < out.values.size(); ++k) {
        const double bound = 3.0 * model.sigmas[k];
        double& e = out.values[k];
        if (e <= -bound) {
            e = -bound;
        } else if (e >= bound) {
            e = bound;
        }
    }
    return out;
}

/// Deviation is measured in the image frame and converted with the sample's
/// spacing. A landmark whose deviation equals z_mm counts as acceptable.
inline PseudoLabel regulate(const ShapeModel& model, const LandmarkSet& initial, double z_mm = kDefaultZmm) {
    if (initial.size() != model.n_landmarks) throw ShapeMismatch("regulate: landmark count mismatch");
    if (!(z_mm > 0.0)) throw ValidationError("regulate: z_mm must be positive");

    const ShapeVector alpha = flatten(initial);
    const ShapeCoefficients b_alpha = project(model, alpha);
    const ShapeCoefficients b_beta = clamp_coefficients(model, b_alpha);
    const ShapeVector beta = reconstruct(model, b_beta);

    PseudoLabel out;
    const std::size_t n = initial.size();
    out.deviation_mm.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        out.deviation_mm[i] = (beta.point(i) - alpha.point(i)).norm() * initial.spacing_mm;
        out.max_deviation_mm = std::max(out.max_deviation_mm, out.deviation_mm[i]);
    }

    if (out.max_deviation_mm <= z_mm) {
        out.branch = PseudoBranch::Adjusted;
        out.coords.resize(n);
        for (std::size_t i = 0; i < n; ++i) out.coords[i] = beta.point(i);
        out.valid.assign(n, true);
    } else {
        out.branch = PseudoBranch::RawWithExclusions;
        out.coords = initial.coords;
        out.valid.resize(n);
        for (std::size_t i = 0; i < n; ++i) out.valid[i] = out.deviation_mm[i] <= z_mm;
    }
    return out;
}

}  // namespace shapereg

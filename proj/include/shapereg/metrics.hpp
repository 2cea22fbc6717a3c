// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <map>
#include <vector>

#include "shapereg/errors.hpp"
#include "shapereg/geometry.hpp"

namespace shapereg {

inline const std::vector<double>& default_outlier_radii() {
    static const std::vector<double> radii{2.0, 2.5, 3.0, 4.0};
    return radii;
}

struct OutlierCount {
    std::size_t count = 0;
    double percent = 0.0;
};

/// Mean radial error, its (population) standard deviation, and the number of
/// landmark predictions whose radial error exceeds each radius.
struct Metrics {
    double mre_mm = 0.0;
    double sd_mm = 0.0;
    std::size_t total = 0;
    std::map<double, OutlierCount> outliers;
};

inline Metrics metrics_from_errors(const std::vector<double>& errors_mm,
                                   const std::vector<double>& radii = default_outlier_radii()) {
    if (errors_mm.empty()) throw ValidationError("metrics: no predictions to evaluate");
    Metrics m;
    m.total = errors_mm.size();
    const double count = static_cast<double>(m.total);
    for (double e : errors_mm) m.mre_mm += e;
    m.mre_mm /= count;
    for (double e : errors_mm) m.sd_mm += (e - m.mre_mm) * (e - m.mre_mm);
    m.sd_mm = std::sqrt(m.sd_mm / count);
    for (double r : radii) {
        OutlierCount oc;
        for (double e : errors_mm) oc.count += e > r ? 1 : 0;
        oc.percent = 100.0 * static_cast<double>(oc.count) / count;
        m.outliers[r] = oc;
    }
    return m;
}

/// Per-landmark radial errors in mm; spacing is taken from the ground truth.
inline std::vector<double> radial_errors_mm(const std::vector<LandmarkSet>& predicted,
                                            const std::vector<LandmarkSet>& truth) {
    if (predicted.size() != truth.size()) throw ShapeMismatch("metrics: prediction/truth count mismatch");
    std::vector<double> errs;
    for (std::size_t s = 0; s < truth.size(); ++s) {
        if (predicted[s].size() != truth[s].size()) throw ShapeMismatch("metrics: landmark count mismatch");
        for (std::size_t i = 0; i < truth[s].size(); ++i)
            errs.push_back((predicted[s].coords[i] - truth[s].coords[i]).norm() * truth[s].spacing_mm);
    }
    return errs;
}

inline Metrics evaluate_predictions(const std::vector<LandmarkSet>& predicted, const std::vector<LandmarkSet>& truth,
                                    const std::vector<double>& radii = default_outlier_radii()) {
    return metrics_from_errors(radial_errors_mm(predicted, truth), radii);
}

}  // namespace shapereg

// SPDX-License-Identifier: Apache-2.0
//
// PCA point-distribution model built on GPA-aligned training shapes.
#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <vector>

#include "shapereg/errors.hpp"
#include "shapereg/geometry.hpp"
#include "shapereg/shapiro_wilk.hpp"

namespace shapereg {

/// Mean shape, orthonormal deformation modes (columns) and the empirical
/// standard deviation of each mode's coefficient over the training set.
struct ShapeModel {
    ShapeVector mean;
    Eigen::MatrixXd components;  // 2n x K
    Eigen::VectorXd sigmas;      // K
    Eigen::VectorXd explained;   // per-mode variance fraction, K
    double variance_fraction = 0.0;
    std::size_t n_landmarks = 0;
    std::size_t n_train = 0;

    Eigen::Index modes() const { return components.cols(); }
};

struct ShapeCoefficients {
    Eigen::VectorXd values;
    SimilarityTransform transform;  // image frame -> model frame
};

inline constexpr double kDefaultVarianceTarget = 0.9999;

inline ShapeCoefficients project(const ShapeModel& model, const ShapeVector& shape) {
    if (shape.landmark_count() != model.n_landmarks) throw ShapeMismatch("project: landmark count mismatch");
    ShapeCoefficients c;
    c.transform = tangent_pose(shape, model.mean);
    const ShapeVector aligned = apply_transform(c.transform, shape);
    c.values = model.components.transpose() * (aligned.values - model.mean.values);
    return c;
}

inline ShapeVector reconstruct(const ShapeModel& model, const ShapeCoefficients& coeffs) {
    if (coeffs.values.size() != model.modes()) throw ShapeMismatch("reconstruct: coefficient count mismatch");
    const ShapeVector model_frame(model.mean.values + model.components * coeffs.values);
    return apply_transform(coeffs.transform.inverse(), model_frame);
}

/// Coefficients of every shape, one row per shape.
inline Eigen::MatrixXd coefficient_table(const ShapeModel& model, const std::vector<ShapeVector>& shapes) {
    Eigen::MatrixXd table(static_cast<Eigen::Index>(shapes.size()), model.modes());
    for (std::size_t i = 0; i < shapes.size(); ++i)
        table.row(static_cast<Eigen::Index>(i)) = project(model, shapes[i]).values.transpose();
    return table;
}

inline ShapeModel build_shape_model(const std::vector<LandmarkSet>& labeled,
                                    double variance_target = kDefaultVarianceTarget) {
    if (labeled.size() < 2) throw InsufficientData("shape model needs at least 2 labeled samples");
    if (!(variance_target > 0.0 && variance_target <= 1.0))
        throw ValidationError("variance_target must lie in (0, 1]");
    const std::size_t n = labeled.front().size();
    std::vector<ShapeVector> shapes;
    shapes.reserve(labeled.size());
    for (const auto& set : labeled) {
        set.validate();
        if (set.size() != n) throw ShapeMismatch("labeled samples differ in landmark count");
        if (set.valid_count() != n) throw ValidationError("labeled samples must have every landmark valid");
        shapes.push_back(flatten(set));
    }

    const GpaResult gpa = generalized_procrustes(shapes);
    const auto dim = static_cast<Eigen::Index>(2 * n);
    const auto count = static_cast<Eigen::Index>(shapes.size());
    Eigen::MatrixXd dev(count, dim);
    for (Eigen::Index i = 0; i < count; ++i)
        dev.row(i) = (gpa.aligned[static_cast<std::size_t>(i)].values - gpa.mean.values).transpose();
    const Eigen::MatrixXd cov = dev.transpose() * dev / static_cast<double>(count - 1);

    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    if (eig.info() != Eigen::Success) throw NumericError("covariance eigendecomposition failed");
    // Eigen returns ascending order.
    Eigen::VectorXd lambda = eig.eigenvalues().reverse();
    Eigen::MatrixXd vectors = eig.eigenvectors().rowwise().reverse();
    lambda = lambda.cwiseMax(0.0);
    const double total = lambda.sum();
    if (!(total > 1e-24)) throw ZeroVariance("training shapes carry no variation");

    const Eigen::Index cap = std::min<Eigen::Index>(dim, count - 1);
    Eigen::Index rank = 0;
    while (rank < cap && lambda[rank] > 1e-12 * lambda[0]) ++rank;
    Eigen::Index k = 0;
    double cum = 0.0;
    while (k < rank) {
        cum += lambda[k];
        ++k;
        if (cum >= (variance_target - 1e-12) * total) break;
    }

    ShapeModel model;
    model.mean = gpa.mean;
    model.n_landmarks = n;
    model.n_train = shapes.size();
    model.components = vectors.leftCols(k);
    for (Eigen::Index j = 0; j < k; ++j) {
        // Deterministic sign: largest-magnitude entry positive.
        Eigen::Index arg = 0;
        model.components.col(j).cwiseAbs().maxCoeff(&arg);
        if (model.components(arg, j) < 0.0) model.components.col(j) *= -1.0;
    }
    model.explained = lambda.head(k) / total;
    model.variance_fraction = std::min(1.0, cum / total);

    const Eigen::MatrixXd coeffs = coefficient_table(model, shapes);
    model.sigmas.resize(k);
    for (Eigen::Index j = 0; j < k; ++j) {
        const double mu = coeffs.col(j).mean();
        model.sigmas[j] = std::sqrt((coeffs.col(j).array() - mu).square().sum() / static_cast<double>(count - 1));
    }
    return model;
}

}  // namespace shapereg

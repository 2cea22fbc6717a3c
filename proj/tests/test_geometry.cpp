// SPDX-License-Identifier: Apache-2.0
#include "catch_amalgamated.hpp"

#include <algorithm>

#include "shapereg/geometry.hpp"
#include "support.hpp"

using namespace shapereg;
using Catch::Matchers::WithinAbs;

TEST_CASE("procrustes recovers a known similarity", "[geometry]") {
    auto g = testutil::rng(1);
    for (int trial = 0; trial < 200; ++trial) {
        const ShapeVector src = testutil::random_shape(g, 12);
        const SimilarityTransform truth = testutil::random_similarity(g);
        const ShapeVector dst = apply_transform(truth, src);
        const SimilarityTransform t = procrustes_align(src, dst);
        REQUIRE((apply_transform(t, src).values - dst.values).cwiseAbs().maxCoeff() < 1e-8);
        REQUIRE_THAT(t.scale, WithinAbs(truth.scale, 1e-9));
        REQUIRE_THAT(std::remainder(t.rotation - truth.rotation, 2 * M_PI), WithinAbs(0.0, 1e-9));
        REQUIRE((t.translation - truth.translation).norm() < 1e-9);
    }
}

TEST_CASE("procrustes is unaffected by translating the source first", "[geometry][property]") {
    auto g = testutil::rng(13);
    for (int trial = 0; trial < 100; ++trial) {
        const ShapeVector src = testutil::random_shape(g, 12);
        const ShapeVector dst = testutil::random_shape(g, 12);
        SimilarityTransform shift;
        shift.translation = Point(testutil::unif(g, -2, 2), testutil::unif(g, -2, 2));
        const SimilarityTransform direct = procrustes_align(src, dst);
        const SimilarityTransform via = procrustes_align(apply_transform(shift, src), dst).compose(shift);
        for (std::size_t i = 0; i < 12; ++i) REQUIRE((direct.apply(src.point(i)) - via.apply(src.point(i))).norm() < 1e-9);
    }
}

TEST_CASE("similarity copies align exactly under GPA", "[geometry]") {
    auto g = testutil::rng(14);
    const ShapeVector base = testutil::random_shape(g, 12);
    std::vector<ShapeVector> shapes;
    for (int k = 0; k < 15; ++k) shapes.push_back(apply_transform(testutil::random_similarity(g), base));
    const GpaResult r = generalized_procrustes(shapes);
    for (const auto& a : r.aligned) REQUIRE((a.values - r.mean.values).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("procrustes ignores masked landmarks", "[geometry]") {
    auto g = testutil::rng(2);
    const ShapeVector src = testutil::random_shape(g, 10);
    const SimilarityTransform truth = testutil::random_similarity(g);
    ShapeVector dst = apply_transform(truth, src);
    dst.set_point(3, Point(50.0, -20.0));
    dst.set_point(7, Point(-9.0, 4.0));
    std::vector<bool> mask(10, true);
    mask[3] = mask[7] = false;
    const SimilarityTransform t = procrustes_align(src, dst, mask);
    REQUIRE_THAT(t.scale, WithinAbs(truth.scale, 1e-9));
    REQUIRE((t.translation - truth.translation).norm() < 1e-9);
}

TEST_CASE("procrustes never reflects", "[geometry]") {
    auto g = testutil::rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        const ShapeVector src = testutil::random_shape(g, 8);
        ShapeVector mirrored = src;
        for (std::size_t i = 0; i < 8; ++i) mirrored.set_point(i, Point(-src.point(i).x(), src.point(i).y()));
        const SimilarityTransform t = procrustes_align(src, mirrored);
        REQUIRE(t.linear().determinant() >= 0.0);
    }
}

TEST_CASE("procrustes residual is no worse than any perturbed transform", "[geometry][property]") {
    auto g = testutil::rng(4);
    for (int trial = 0; trial < 100; ++trial) {
        const ShapeVector a = testutil::random_shape(g, 9);
        const ShapeVector b = testutil::random_shape(g, 9);
        const SimilarityTransform t = procrustes_align(a, b);
        const double best = (apply_transform(t, a).values - b.values).squaredNorm();
        for (int k = 0; k < 20; ++k) {
            SimilarityTransform p = t;
            p.scale *= 1.0 + 0.01 * testutil::gauss(g);
            p.rotation += 0.01 * testutil::gauss(g);
            p.translation += 0.01 * Point(testutil::gauss(g), testutil::gauss(g));
            REQUIRE((apply_transform(p, a).values - b.values).squaredNorm() >= best - 1e-12);
        }
    }
}

TEST_CASE("similarity inverse and composition", "[geometry]") {
    auto g = testutil::rng(5);
    for (int trial = 0; trial < 100; ++trial) {
        const SimilarityTransform a = testutil::random_similarity(g);
        const SimilarityTransform b = testutil::random_similarity(g);
        const Point p(testutil::unif(g, -1, 1), testutil::unif(g, -1, 1));
        REQUIRE((a.inverse().apply(a.apply(p)) - p).norm() < 1e-12);
        REQUIRE((a.compose(b).apply(p) - a.apply(b.apply(p))).norm() < 1e-12);
    }
}

TEST_CASE("normalize_shape centres and scales", "[geometry]") {
    auto g = testutil::rng(6);
    const ShapeVector s = normalize_shape(testutil::random_shape(g, 12));
    REQUIRE(centroid(s).norm() < 1e-14);
    REQUIRE_THAT(s.values.norm(), WithinAbs(1.0, 1e-14));
    ShapeVector collapsed(Eigen::VectorXd::Constant(24, 0.4));
    REQUIRE_THROWS_AS(normalize_shape(collapsed), DegenerateShape);
}

TEST_CASE("tangent pose puts the shape on the tangent plane", "[geometry]") {
    auto g = testutil::rng(7);
    const ShapeVector ref = normalize_shape(testutil::random_shape(g, 12));
    for (int trial = 0; trial < 50; ++trial) {
        const ShapeVector s = testutil::random_shape(g, 12);
        const ShapeVector x = apply_transform(tangent_pose(s, ref), s);
        REQUIRE_THAT(x.values.dot(ref.values), WithinAbs(1.0, 1e-12));
        REQUIRE(centroid(x).norm() < 1e-12);
    }
}

namespace {

std::vector<ShapeVector> noisy_population(std::uint64_t seed, std::size_t count) {
    auto g = testutil::rng(seed);
    const ShapeVector base = testutil::random_shape(g, 12);
    std::vector<ShapeVector> out;
    for (std::size_t k = 0; k < count; ++k) {
        ShapeVector s = base;
        s.values += 0.01 * Eigen::VectorXd::NullaryExpr(24, [&] { return testutil::gauss(g); });
        out.push_back(apply_transform(testutil::random_similarity(g), s));
    }
    return out;
}

}  // namespace

TEST_CASE("GPA converges to a unit, centred mean", "[geometry]") {
    const auto shapes = noisy_population(8, 40);
    const GpaResult r = generalized_procrustes(shapes);
    REQUIRE(r.converged);
    REQUIRE(r.iterations <= 100);
    REQUIRE_THAT(r.mean.values.norm(), WithinAbs(1.0, 1e-12));
    REQUIRE(centroid(r.mean).norm() < 1e-12);
    REQUIRE(r.aligned.size() == shapes.size());
    for (const auto& a : r.aligned) REQUIRE_THAT(a.values.dot(r.mean.values), WithinAbs(1.0, 1e-9));
}

TEST_CASE("GPA mean does not depend on input order", "[geometry][property]") {
    auto shapes = noisy_population(9, 30);
    const GpaResult ref = generalized_procrustes(shapes);
    auto g = testutil::rng(10);
    for (int trial = 0; trial < 5; ++trial) {
        std::shuffle(shapes.begin(), shapes.end(), g);
        const GpaResult r = generalized_procrustes(shapes);
        REQUIRE((r.mean.values - ref.mean.values).cwiseAbs().maxCoeff() < 1e-9);
    }
}

TEST_CASE("GPA rejects bad input", "[geometry]") {
    auto g = testutil::rng(11);
    REQUIRE_THROWS_AS(generalized_procrustes({testutil::random_shape(g, 5)}), InsufficientData);
    REQUIRE_THROWS_AS(generalized_procrustes({testutil::random_shape(g, 5), testutil::random_shape(g, 6)}),
                      ShapeMismatch);
}

TEST_CASE("flatten and unflatten round-trip", "[geometry]") {
    auto g = testutil::rng(12);
    const ShapeVector s = testutil::random_shape(g, 7);
    const LandmarkSet lm = unflatten(s, 0.5);
    REQUIRE(lm.spacing_mm == 0.5);
    REQUIRE(lm.valid_count() == 7);
    REQUIRE(flatten(lm).values == s.values);
}

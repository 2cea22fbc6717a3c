// SPDX-License-Identifier: Apache-2.0
#include "catch_amalgamated.hpp"

#include "shapereg/shape_model.hpp"
#include "shapereg/shapiro_wilk.hpp"
#include "shapereg/synth.hpp"
#include "support.hpp"

using namespace shapereg;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

std::vector<LandmarkSet> landmarks_from(const GeneratorSpec& spec, std::size_t count) {
    std::vector<LandmarkSet> out;
    for (auto& s : generate(spec, count)) out.push_back(s.landmarks);
    return out;
}

// Largest principal angle between the column spans of two matrices.
double max_principal_angle_deg(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    const Eigen::MatrixXd qa = Eigen::HouseholderQR<Eigen::MatrixXd>(a).householderQ() *
                               Eigen::MatrixXd::Identity(a.rows(), a.cols());
    const Eigen::MatrixXd qb = Eigen::HouseholderQR<Eigen::MatrixXd>(b).householderQ() *
                               Eigen::MatrixXd::Identity(b.rows(), b.cols());
    const Eigen::VectorXd s = Eigen::JacobiSVD<Eigen::MatrixXd>(qa.transpose() * qb).singularValues();
    return std::acos(std::min(1.0, s.minCoeff())) * 180.0 / M_PI;
}

}  // namespace

TEST_CASE("single deformation direction gives a rank-one model", "[shape_model]") {
    const ShapeVector base = default_base_shape();
    const Eigen::VectorXd dir = similarity_free_modes(base, 1).front();
    auto g = testutil::rng(20);
    std::vector<LandmarkSet> sets;
    for (int k = 0; k < 30; ++k) {
        const ShapeVector s(base.values + 0.03 * testutil::gauss(g) * dir);
        SimilarityTransform pose;
        pose.scale = testutil::unif(g, 0.9, 1.1);
        pose.rotation = testutil::unif(g, -0.1, 0.1);
        sets.push_back(unflatten(apply_transform(pose, s)));
    }
    const ShapeModel m = build_shape_model(sets, 0.99);
    REQUIRE(m.modes() == 1);
    // The model lives in the mean's frame, so rotate the direction into it.
    const double rot = procrustes_align(base, m.mean).rotation;
    Eigen::VectorXd expect = dir;
    for (Eigen::Index i = 0; i < expect.size(); i += 2)
        expect.segment<2>(i) = Eigen::Rotation2Dd(rot) * Eigen::Vector2d(dir.segment<2>(i));
    REQUIRE(testutil::angle_deg(m.components.col(0), expect) < 1.0);
    REQUIRE(m.explained[0] > 0.99);
}

TEST_CASE("three-mode generator is recovered", "[shape_model]") {
    const GeneratorSpec spec = default_generator_spec(3);
    const ShapeModel m = build_shape_model(landmarks_from(spec, 300), 0.9999);
    REQUIRE(m.modes() == 3);
    Eigen::MatrixXd truth(24, 3);
    for (int k = 0; k < 3; ++k) truth.col(k) = spec.deform_modes[static_cast<std::size_t>(k)].direction;
    REQUIRE(max_principal_angle_deg(m.components, truth) < 5.0);
    // Components are orthonormal and ordered by explained variance.
    REQUIRE((m.components.transpose() * m.components - Eigen::MatrixXd::Identity(3, 3)).norm() < 1e-10);
    REQUIRE(m.explained[0] >= m.explained[1]);
    REQUIRE(m.explained[1] >= m.explained[2]);
}

TEST_CASE("sigmas are the empirical spread of training coefficients", "[shape_model]") {
    const auto sets = landmarks_from(default_generator_spec(4), 40);
    const ShapeModel m = build_shape_model(sets);
    std::vector<ShapeVector> shapes;
    for (const auto& s : sets) shapes.push_back(flatten(s));
    const Eigen::MatrixXd c = coefficient_table(m, shapes);
    for (Eigen::Index k = 0; k < m.modes(); ++k) {
        const double mu = c.col(k).mean();
        const double sd = std::sqrt((c.col(k).array() - mu).square().sum() / (c.rows() - 1));
        REQUIRE_THAT(m.sigmas[k], WithinRel(sd, 1e-12));
    }
}

TEST_CASE("project inverts reconstruct inside the box", "[shape_model][property]") {
    const ShapeModel m = build_shape_model(landmarks_from(default_generator_spec(5), 60));
    auto g = testutil::rng(21);
    for (int trial = 0; trial < 500; ++trial) {
        ShapeCoefficients c;
        c.values.resize(m.modes());
        for (Eigen::Index k = 0; k < m.modes(); ++k) c.values[k] = testutil::unif(g, -3, 3) * m.sigmas[k];
        c.transform = testutil::random_similarity(g);
        const ShapeCoefficients back = project(m, reconstruct(m, c));
        REQUIRE((back.values - c.values).cwiseAbs().maxCoeff() < 1e-7);
    }
}

TEST_CASE("retained modes grow with the variance target", "[shape_model][property]") {
    const auto sets = landmarks_from(default_generator_spec(6), 25);
    Eigen::Index prev = 0;
    for (double target : {0.5, 0.8, 0.95, 0.99, 0.9999, 1.0}) {
        const ShapeModel m = build_shape_model(sets, target);
        REQUIRE(m.modes() >= prev);
        REQUIRE(m.modes() <= 24);
        REQUIRE(m.variance_fraction >= target - 1e-9);
        prev = m.modes();
    }
}

TEST_CASE("mode count is capped by the sample count", "[shape_model]") {
    auto g = testutil::rng(22);
    std::vector<LandmarkSet> sets;
    for (int k = 0; k < 4; ++k) sets.push_back(unflatten(testutil::random_shape(g, 12)));
    REQUIRE(build_shape_model(sets, 1.0).modes() <= 3);
}

TEST_CASE("shape model input validation", "[shape_model]") {
    auto g = testutil::rng(23);
    const LandmarkSet one = unflatten(testutil::random_shape(g, 12));
    REQUIRE_THROWS_AS(build_shape_model({one}), InsufficientData);
    REQUIRE_THROWS_AS(build_shape_model({one, one, one}), ZeroVariance);
    REQUIRE_THROWS_AS(build_shape_model({one, unflatten(testutil::random_shape(g, 12))}, 0.0), ValidationError);
    REQUIRE_THROWS_AS(build_shape_model({one, unflatten(testutil::random_shape(g, 11))}), ShapeMismatch);
    LandmarkSet partial = one;
    partial.valid[2] = false;
    REQUIRE_THROWS_AS(build_shape_model({one, partial}), ValidationError);
}

// Reference values from an independent implementation of the same algorithm.
TEST_CASE("shapiro-wilk matches reference values", "[shapiro_wilk]") {
    struct Case {
        std::vector<double> x;
        double w, p;
    };
    const std::vector<Case> cases{
        {{0.139, 0.157, 0.175, 0.256, 0.344, 0.413, 0.503, 0.577, 0.614, 0.655, 0.954, 1.392, 1.557,
          1.648, 1.690, 1.994, 2.174, 2.206, 3.245, 3.510, 3.571, 4.354, 4.980, 6.084, 8.351},
         0.8346662753381485, 0.0009134904825887374},
        {{148, 154, 158, 160, 161, 162, 166, 170, 182, 195, 236}, 0.7888146948631716, 0.006703814061898823},
        {{6.0, 5.0, 8.0, 7.5, 4.2, 3.1, 9.9, 10.2, 6.6, 5.5, 7.7, 8.1, 2.2, 4.4, 6.1, 5.9, 7.0, 8.8, 3.3, 4.0},
         0.979762040256683, 0.9309915294470835},
        {{1.0, 2.0, 4.0}, 0.9642857142857142, 0.6368868450289689},
    };
    for (const auto& c : cases) {
        const auto r = shapiro_wilk(c.x);
        REQUIRE_THAT(r.w, WithinAbs(c.w, 1e-6));
        REQUIRE_THAT(r.p_value, WithinRel(c.p, 1e-4));
    }
}

TEST_CASE("shapiro-wilk separates normal from skewed samples", "[shapiro_wilk][property]") {
    int normal_pass = 0, exp_reject = 0;
    for (std::uint64_t seed = 0; seed < 40; ++seed) {
        auto g = testutil::rng(100 + seed);
        std::vector<double> a(200), b(200);
        for (auto& v : a) v = testutil::gauss(g);
        for (auto& v : b) v = std::exponential_distribution<double>(1.0)(g);
        normal_pass += shapiro_wilk(a).p_value > 0.01 ? 1 : 0;
        exp_reject += shapiro_wilk(b).p_value < 0.01 ? 1 : 0;
        REQUIRE(shapiro_wilk(a).w <= 1.0);
    }
    REQUIRE(normal_pass >= 36);
    REQUIRE(exp_reject == 40);
}

TEST_CASE("shapiro-wilk is invariant to order and affine maps", "[shapiro_wilk][property]") {
    auto g = testutil::rng(24);
    std::vector<double> x(50);
    for (auto& v : x) v = testutil::gauss(g);
    const auto base = shapiro_wilk(x);
    std::vector<double> y = x;
    std::reverse(y.begin(), y.end());
    for (auto& v : y) v = 3.0 * v - 7.0;
    const auto r = shapiro_wilk(y);
    REQUIRE_THAT(r.w, WithinAbs(base.w, 1e-12));
    REQUIRE_THAT(r.p_value, WithinAbs(base.p_value, 1e-10));
}

TEST_CASE("shapiro-wilk rejects unusable samples", "[shapiro_wilk]") {
    REQUIRE_THROWS_AS(shapiro_wilk({1.0, 2.0}), SampleSizeOutOfRange);
    REQUIRE_THROWS_AS(shapiro_wilk(std::vector<double>(5001, 1.0)), SampleSizeOutOfRange);
    REQUIRE_THROWS_AS(shapiro_wilk({4.0, 4.0, 4.0, 4.0}), DegenerateSample);
}

TEST_CASE("coefficients do not depend on pose", "[shape_model][property]") {
    const auto sets = landmarks_from(default_generator_spec(7), 30);
    const ShapeModel m = build_shape_model(sets);
    auto g = testutil::rng(25);
    for (const auto& s : sets) {
        const ShapeVector x = flatten(s);
        const Eigen::VectorXd base = project(m, x).values;
        for (int k = 0; k < 5; ++k) {
            const Eigen::VectorXd moved = project(m, apply_transform(testutil::random_similarity(g), x)).values;
            REQUIRE((moved - base).cwiseAbs().maxCoeff() < 1e-7);
        }
    }
}

TEST_CASE("training coefficients respect the three-sigma rule", "[shape_model]") {
    const auto sets = landmarks_from(default_generator_spec(8), 150);
    const ShapeModel m = build_shape_model(sets);
    std::vector<ShapeVector> shapes;
    for (const auto& s : sets) shapes.push_back(flatten(s));
    const Eigen::MatrixXd c = coefficient_table(m, shapes);
    for (Eigen::Index k = 0; k < m.modes(); ++k) {
        const double inside = (c.col(k).array().abs() < 3.0 * m.sigmas[k]).cast<double>().mean();
        REQUIRE(inside >= 0.99);
    }
}

TEST_CASE("cumulative explained variance reaches one at full rank", "[shape_model]") {
    auto g = testutil::rng(26);
    std::vector<LandmarkSet> sets;
    for (int k = 0; k < 40; ++k) sets.push_back(unflatten(testutil::random_shape(g, 6)));
    const ShapeModel m = build_shape_model(sets, 1.0);
    double cum = 0.0;
    for (Eigen::Index k = 0; k < m.modes(); ++k) {
        REQUIRE(m.explained[k] >= 0.0);
        cum += m.explained[k];
    }
    REQUIRE_THAT(cum, WithinAbs(1.0, 1e-9));
    // 12 coordinates minus 4 similarity directions.
    REQUIRE(m.modes() == 8);
}

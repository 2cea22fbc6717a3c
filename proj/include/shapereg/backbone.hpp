// SPDX-License-Identifier: Apache-2.0
//
// Minimal differentiable heatmap predictor: mean-pool -> affine -> tanh ->
// affine -> sigmoid, with hand-written reverse mode and an Adam optimizer.
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "shapereg/errors.hpp"
#include "shapereg/heatmap.hpp"
#include "shapereg/rng.hpp"

namespace shapereg {

struct BackboneConfig {
    int n_landmarks = 12;
    int image_size = 64;
    int pool_size = 16;
    int hidden = 128;
    int heatmap_size = 32;

    int features() const { return pool_size * pool_size; }
    int pixels() const { return heatmap_size * heatmap_size; }
    int outputs() const { return n_landmarks * pixels(); }
    Eigen::Index parameter_count() const {
        return static_cast<Eigen::Index>(features()) * hidden + hidden +
               static_cast<Eigen::Index>(hidden) * outputs() + outputs();
    }

    void validate() const {
        if (n_landmarks < 3 || image_size < 1 || pool_size < 1 || hidden < 1 || heatmap_size < 1)
            throw ValidationError("backbone config: sizes must be positive (n_landmarks >= 3)");
        if (image_size % pool_size != 0) throw ValidationError("backbone config: image_size must be a multiple of pool_size");
    }

    friend bool operator==(const BackboneConfig&, const BackboneConfig&) = default;
};

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// All parameters live in one flat vector laid out as
/// (layer1_weights row-major, layer1_bias, layer2_weights row-major, layer2_bias).
/// The typed accessors are views into that buffer.
class BackboneParams {
public:
    BackboneParams() = default;
    explicit BackboneParams(const BackboneConfig& cfg)
        : cfg_(cfg), flat_(Eigen::VectorXd::Zero(cfg.parameter_count())) {
        cfg.validate();
    }

    const BackboneConfig& config() const { return cfg_; }
    Eigen::VectorXd& flat() { return flat_; }
    const Eigen::VectorXd& flat() const { return flat_; }

    Eigen::Map<RowMatrix> w1() { return {flat_.data(), cfg_.features(), cfg_.hidden}; }
    Eigen::Map<const RowMatrix> w1() const { return {flat_.data(), cfg_.features(), cfg_.hidden}; }
    Eigen::Map<Eigen::RowVectorXd> b1() { return {flat_.data() + off_b1(), cfg_.hidden}; }
    Eigen::Map<const Eigen::RowVectorXd> b1() const { return {flat_.data() + off_b1(), cfg_.hidden}; }
    Eigen::Map<RowMatrix> w2() { return {flat_.data() + off_w2(), cfg_.hidden, cfg_.outputs()}; }
    Eigen::Map<const RowMatrix> w2() const { return {flat_.data() + off_w2(), cfg_.hidden, cfg_.outputs()}; }
    Eigen::Map<Eigen::RowVectorXd> b2() { return {flat_.data() + off_b2(), cfg_.outputs()}; }
    Eigen::Map<const Eigen::RowVectorXd> b2() const { return {flat_.data() + off_b2(), cfg_.outputs()}; }

    /// Weights ~ N(0, 1/fan_in), biases zero.
    static BackboneParams initialize(const BackboneConfig& cfg, std::uint64_t seed) {
        BackboneParams p(cfg);
        Rng rng = make_rng(seed, Stream::Init);
        const double s1 = 1.0 / std::sqrt(static_cast<double>(cfg.features()));
        for (Eigen::Index i = 0; i < p.off_b1(); ++i) p.flat_[i] = s1 * standard_normal(rng);
        const double s2 = 1.0 / std::sqrt(static_cast<double>(cfg.hidden));
        for (Eigen::Index i = p.off_w2(); i < p.off_b2(); ++i) p.flat_[i] = s2 * standard_normal(rng);
        return p;
    }

    bool all_finite() const { return flat_.allFinite(); }

private:
    Eigen::Index off_b1() const { return static_cast<Eigen::Index>(cfg_.features()) * cfg_.hidden; }
    Eigen::Index off_w2() const { return off_b1() + cfg_.hidden; }
    Eigen::Index off_b2() const { return off_w2() + static_cast<Eigen::Index>(cfg_.hidden) * cfg_.outputs(); }

    BackboneConfig cfg_;
    Eigen::VectorXd flat_;
};

/// Intermediate activations of a batched forward pass, rows = batch members.
struct ForwardCache {
    RowMatrix pooled;   // B x features
    RowMatrix hidden;   // B x hidden, post-tanh
    RowMatrix heat;     // B x outputs, post-sigmoid
};

inline RowMatrix pool_images(const BackboneConfig& cfg, const std::vector<const Image*>& images) {
    const int block = cfg.image_size / cfg.pool_size;
    const double inv = 1.0 / (block * block);
    RowMatrix pooled = RowMatrix::Zero(static_cast<Eigen::Index>(images.size()), cfg.features());
    for (std::size_t b = 0; b < images.size(); ++b) {
        const Image& img = *images[b];
        if (img.rows != cfg.image_size || img.cols != cfg.image_size)
            throw ShapeMismatch("backbone: image dimensions do not match configuration");
        for (int r = 0; r < img.rows; ++r) {
            for (int c = 0; c < img.cols; ++c) {
                pooled(static_cast<Eigen::Index>(b), (r / block) * cfg.pool_size + c / block) += img.at(r, c) * inv;
            }
        }
    }
    return pooled;
}

inline double stable_sigmoid(double z) {
    constexpr double lo = std::numeric_limits<double>::min();
    constexpr double hi = 1.0 - std::numeric_limits<double>::epsilon() / 2.0;
    const double s = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
    return std::min(hi, std::max(lo, s));
}

inline ForwardCache forward_batch(const BackboneParams& params, const std::vector<const Image*>& images) {
    const BackboneConfig& cfg = params.config();
    ForwardCache fc;
    fc.pooled = pool_images(cfg, images);
    fc.hidden = ((fc.pooled * params.w1()).rowwise() + params.b1()).array().tanh().matrix();
    fc.heat.noalias() = fc.hidden * params.w2();
    fc.heat.rowwise() += params.b2();
    fc.heat = fc.heat.unaryExpr([](double z) { return stable_sigmoid(z); });
    return fc;
}

/// Splits row `b` of a batched output into per-landmark heatmaps.
inline std::vector<Heatmap> heatmaps_of(const BackboneConfig& cfg, const ForwardCache& fc, Eigen::Index b) {
    std::vector<Heatmap> out;
    out.reserve(static_cast<std::size_t>(cfg.n_landmarks));
    const int hw = cfg.pixels();
    for (int i = 0; i < cfg.n_landmarks; ++i) {
        Heatmap h(cfg.heatmap_size, cfg.heatmap_size);
        for (int p = 0; p < hw; ++p) h.values[static_cast<std::size_t>(p)] = fc.heat(b, i * hw + p);
        out.push_back(std::move(h));
    }
    return out;
}

inline std::vector<Heatmap> forward(const BackboneParams& params, const Image& image) {
    const ForwardCache fc = forward_batch(params, {&image});
    return heatmaps_of(params.config(), fc, 0);
}

/// Upstream gradients for a batch: row b holds d loss / d heat for member b,
/// laid out like the network output (landmark-major, then row-major pixels).
inline RowMatrix upstream_matrix(const BackboneConfig& cfg, const std::vector<std::vector<Grid>>& grads) {
    RowMatrix up(static_cast<Eigen::Index>(grads.size()), cfg.outputs());
    const int hw = cfg.pixels();
    for (std::size_t b = 0; b < grads.size(); ++b) {
        if (grads[b].size() != static_cast<std::size_t>(cfg.n_landmarks))
            throw ShapeMismatch("backward: upstream landmark count mismatch");
        for (int i = 0; i < cfg.n_landmarks; ++i) {
            const Grid& g = grads[b][static_cast<std::size_t>(i)];
            if (g.size() != static_cast<std::size_t>(hw)) throw ShapeMismatch("backward: upstream grid size mismatch");
            for (int p = 0; p < hw; ++p) up(static_cast<Eigen::Index>(b), i * hw + p) = g.values[static_cast<std::size_t>(p)];
        }
    }
    return up;
}

/// Parameter gradient (same flat layout as the parameters), summed over the batch.
inline Eigen::VectorXd backward_batch(const BackboneParams& params, const ForwardCache& fc, const RowMatrix& upstream) {
    const BackboneConfig& cfg = params.config();
    if (upstream.rows() != fc.heat.rows() || upstream.cols() != fc.heat.cols())
        throw ShapeMismatch("backward: upstream shape mismatch");
    BackboneParams grad(cfg);
    const RowMatrix dz = upstream.cwiseProduct(fc.heat.cwiseProduct((1.0 - fc.heat.array()).matrix()));
    grad.w2().noalias() = fc.hidden.transpose() * dz;
    grad.b2() = dz.colwise().sum();
    RowMatrix dh;
    dh.noalias() = dz * params.w2().transpose();
    const RowMatrix da = dh.cwiseProduct((1.0 - fc.hidden.array().square()).matrix());
    grad.w1().noalias() = fc.pooled.transpose() * da;
    grad.b1() = da.colwise().sum();
    return std::move(grad.flat());
}

inline Eigen::VectorXd backward(const BackboneParams& params, const Image& image, const std::vector<Grid>& upstream) {
    const ForwardCache fc = forward_batch(params, {&image});
    return backward_batch(params, fc, upstream_matrix(params.config(), {upstream}));
}

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    void validate() const {
        if (!(lr > 0.0)) throw ValidationError("adam: lr must be positive");
        if (!(beta1 > 0.0 && beta1 < 1.0 && beta2 > 0.0 && beta2 < 1.0))
            throw ValidationError("adam: betas must lie in (0, 1)");
        if (!(eps > 0.0)) throw ValidationError("adam: eps must be positive");
    }
};

struct AdamState {
    Eigen::VectorXd first_moment;
    Eigen::VectorXd second_moment;
    std::uint64_t step_count = 0;
    AdamConfig cfg;

    static AdamState zeros(Eigen::Index size, AdamConfig cfg = {}) {
        cfg.validate();
        return {Eigen::VectorXd::Zero(size), Eigen::VectorXd::Zero(size), 0, cfg};
    }
};

/// In-place Adam update with bias correction.
inline void adam_step(AdamState& state, Eigen::VectorXd& params, const Eigen::VectorXd& grads) {
    if (params.size() != grads.size() || state.first_moment.size() != params.size())
        throw ShapeMismatch("adam: parameter/gradient size mismatch");
    const AdamConfig& c = state.cfg;
    ++state.step_count;
    const double t = static_cast<double>(state.step_count);
    const double bc1 = 1.0 - std::pow(c.beta1, t);
    const double bc2 = 1.0 - std::pow(c.beta2, t);
    const double step = c.lr / bc1;
    const double inv_sqrt_bc2 = 1.0 / std::sqrt(bc2);
    auto m = state.first_moment.array();
    auto v = state.second_moment.array();
    const auto g = grads.array();
    m = c.beta1 * m + (1.0 - c.beta1) * g;
    v = c.beta2 * v + (1.0 - c.beta2) * g.square();
    params.array() -= step * m / (v.sqrt() * inv_sqrt_bc2 + c.eps);
}

}  // namespace shapereg

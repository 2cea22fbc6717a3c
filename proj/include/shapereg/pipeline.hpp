// SPDX-License-Identifier: Apache-2.0
//
// Three-stage training protocol: supervised pre-training, shape-regulated
// self-training with the region attention loss, and fine-tuning on labeled
// data. Also evaluation and the ablation harness.
#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "shapereg/augment.hpp"
#include "shapereg/backbone.hpp"
#include "shapereg/errors.hpp"
#include "shapereg/heatmap.hpp"
#include "shapereg/metrics.hpp"
#include "shapereg/regulation.hpp"
#include "shapereg/rng.hpp"
#include "shapereg/shape_model.hpp"
#include "shapereg/synth.hpp"

namespace shapereg {

enum class Ablation { Full, NoSR, NoRAL, NoSRNoRAL, SupervisedOnly };

inline bool uses_regulation(Ablation a) { return a == Ablation::Full || a == Ablation::NoRAL; }
inline bool uses_region_attention(Ablation a) { return a == Ablation::Full || a == Ablation::NoSR; }
inline bool uses_self_training(Ablation a) { return a != Ablation::SupervisedOnly; }

inline const char* to_string(Ablation a) {
    switch (a) {
        case Ablation::Full: return "full";
        case Ablation::NoSR: return "no-sr";
        case Ablation::NoRAL: return "no-ral";
        case Ablation::NoSRNoRAL: return "no-sr-no-ral";
        case Ablation::SupervisedOnly: return "supervised-only";
    }
    return "?";
}

inline Ablation parse_ablation(const std::string& s) {
    for (Ablation a : {Ablation::Full, Ablation::NoSR, Ablation::NoRAL, Ablation::NoSRNoRAL, Ablation::SupervisedOnly})
        if (s == to_string(a)) return a;
    throw ValidationError("unknown ablation arm: " + s);
}

inline const std::vector<Ablation>& all_arms() {
    static const std::vector<Ablation> arms{Ablation::Full, Ablation::NoSR, Ablation::NoRAL, Ablation::NoSRNoRAL,
                                            Ablation::SupervisedOnly};
    return arms;
}

/// Loss used while fine-tuning on labeled data. The region attention variant
/// uses ground truth as the attention centre; the L1 variant is plain
/// coordinate regression.
enum class FinetuneLoss { RegionAttention, L1 };

enum class Stage { Initialized = 0, Pretrained = 1, SelfTrained = 2, Finetuned = 3 };

inline const char* to_string(Stage s) {
    switch (s) {
        case Stage::Initialized: return "initialized";
        case Stage::Pretrained: return "pretrained";
        case Stage::SelfTrained: return "self_trained";
        case Stage::Finetuned: return "finetuned";
    }
    return "?";
}

inline Stage parse_stage(const std::string& s) {
    for (Stage st : {Stage::Initialized, Stage::Pretrained, Stage::SelfTrained, Stage::Finetuned})
        if (s == to_string(st)) return st;
    throw ParseError("unknown stage: " + s);
}

struct UnlabeledSample {
    Image image;
    double spacing_mm = 100.0;
    std::optional<LandmarkSet> reference;  // synthetic ground truth, diagnostics only
};

struct Dataset {
    std::vector<Sample> labeled;
    std::vector<UnlabeledSample> unlabeled;
    std::vector<Sample> held_out;

    std::size_t n_landmarks() const { return labeled.empty() ? 0 : labeled.front().landmarks.size(); }

    void validate() const {
        if (labeled.size() < 2) throw InsufficientData("dataset needs at least 2 labeled samples");
        const std::size_t n = n_landmarks();
        for (const auto& s : labeled) {
            s.landmarks.validate();
            if (s.landmarks.size() != n) throw ShapeMismatch("labeled samples differ in landmark count");
        }
        for (const auto& s : held_out)
            if (s.landmarks.size() != n) throw ShapeMismatch("held-out samples differ in landmark count");
        for (const auto& u : unlabeled)
            if (u.reference && u.reference->size() != n) throw ShapeMismatch("unlabeled reference landmark count");
    }

    std::vector<LandmarkSet> labeled_landmarks() const {
        std::vector<LandmarkSet> out;
        for (const auto& s : labeled) out.push_back(s.landmarks);
        return out;
    }
};

struct TrainConfig {
    int epochs_per_stage = 200;
    std::optional<int> pretrain_epochs;  // defaults to epochs_per_stage
    std::optional<int> finetune_epochs;  // defaults to epochs_per_stage; may be 0
    double z_mm = kDefaultZmm;
    double variance_target = kDefaultVarianceTarget;
    OffsetDistribution offsets;
    AdamConfig adam;
    std::uint64_t seed = 0;
    Ablation ablation = Ablation::Full;
    AugmentConfig augmentation;
    int labeled_batch = 4;
    int unlabeled_batch = 4;
    FinetuneLoss finetune_loss = FinetuneLoss::RegionAttention;
    int trajectory_interval = 5;
    int eval_every = 1;
    std::vector<double> outlier_radii = default_outlier_radii();
    BackboneConfig backbone;

    int pretrain_epoch_count() const { return pretrain_epochs.value_or(epochs_per_stage); }
    int finetune_epoch_count() const { return finetune_epochs.value_or(epochs_per_stage); }

    void validate() const {
        if (epochs_per_stage < 1) throw ValidationError("epochs_per_stage must be at least 1");
        if (pretrain_epochs && *pretrain_epochs < 1) throw ValidationError("pretrain_epochs must be at least 1");
        if (finetune_epochs && *finetune_epochs < 0) throw ValidationError("finetune_epochs must be non-negative");
        if (!(z_mm > 0.0)) throw ValidationError("z_mm must be positive");
        if (!(variance_target > 0.0 && variance_target <= 1.0)) throw ValidationError("variance_target must lie in (0, 1]");
        if (!(offsets.mean > 0.0) || offsets.std < 0.0) throw ValidationError("offset distribution must have positive mean");
        if (labeled_batch < 1 || unlabeled_batch < 1) throw ValidationError("batch sizes must be positive");
        if (trajectory_interval < 1 || eval_every < 1) throw ValidationError("intervals must be positive");
        adam.validate();
        augmentation.validate();
        backbone.validate();
    }
};

struct EpochRecord {
    std::string stage;
    int epoch = 0;
    double loss = 0.0;
    std::optional<double> mre_mm;
    std::optional<double> pseudo_label_error_mm;
    std::size_t skipped_samples = 0;
};

/// Pseudo labels of every unlabeled sample at one self-training epoch.
struct TrajectoryPoint {
    int epoch = 0;
    std::optional<double> mean_error_mm;  // against the withheld reference, when available
    std::size_t adjusted = 0;
    std::size_t raw = 0;
    std::vector<PseudoLabel> labels;
};

struct TrainState {
    BackboneParams params;
    AdamState adam;
    Stage stage = Stage::Initialized;
    int epochs_done = 0;  // completed epochs of the stage following `stage`
    std::uint64_t seed = 0;
    std::optional<BackboneParams> best_params;
    double best_mre = std::numeric_limits<double>::infinity();
    std::vector<TrajectoryPoint> trajectory;

    static TrainState fresh(const TrainConfig& cfg) {
        TrainState s;
        s.params = BackboneParams::initialize(cfg.backbone, cfg.seed);
        s.adam = AdamState::zeros(s.params.flat().size(), cfg.adam);
        s.seed = cfg.seed;
        return s;
    }
};

struct Hooks {
    std::function<void(const EpochRecord&)> on_record;
    /// Called after every completed epoch; returning false stops the run there.
    std::function<bool(const TrainState&)> on_epoch_end;
};

namespace detail {

inline void emit(const Hooks& hooks, const EpochRecord& rec) {
    if (hooks.on_record) hooks.on_record(rec);
}

inline bool keep_going(const Hooks& hooks, const TrainState& s) {
    return !hooks.on_epoch_end || hooks.on_epoch_end(s);
}

inline LandmarkSet as_landmarks(const std::vector<Point>& pts, double spacing) {
    return LandmarkSet(pts, spacing);
}

inline LandmarkSet pseudo_as_target(const PseudoLabel& p, double spacing) {
    LandmarkSet t(p.coords, spacing);
    t.valid = p.valid;
    return t;
}

inline void scale_grads(std::vector<Grid>& g, double f) {
    for (auto& grid : g)
        for (double& v : grid.values) v *= f;
}

}  // namespace detail

/// Eq. 1 batch objective: the labeled and unlabeled terms are each averaged
/// over their own (non-skipped) members before summation. Gradients are
/// rescaled in place; empty gradient vectors mark skipped members.
inline double combine_objective(std::vector<LossResult>& labeled, std::vector<LossResult>& unlabeled) {
    double total = 0.0;
    auto average = [&total](std::vector<LossResult>& terms) {
        std::size_t used = 0;
        for (const auto& t : terms) used += t.grad.empty() ? 0 : 1;
        if (used == 0) return;
        const double f = 1.0 / static_cast<double>(used);
        for (auto& t : terms) {
            if (t.grad.empty()) continue;
            total += f * t.loss;
            detail::scale_grads(t.grad, f);
        }
    };
    average(labeled);
    average(unlabeled);
    return total;
}

inline std::vector<LandmarkSet> predict_landmarks(const BackboneParams& params, const std::vector<const Image*>& images,
                                                  const std::vector<double>& spacings, std::size_t chunk = 32) {
    std::vector<LandmarkSet> out;
    out.reserve(images.size());
    for (std::size_t start = 0; start < images.size(); start += chunk) {
        const std::size_t end = std::min(images.size(), start + chunk);
        const std::vector<const Image*> part(images.begin() + static_cast<std::ptrdiff_t>(start),
                                             images.begin() + static_cast<std::ptrdiff_t>(end));
        const ForwardCache fc = forward_batch(params, part);
        for (std::size_t b = 0; b < part.size(); ++b) {
            const auto hs = heatmaps_of(params.config(), fc, static_cast<Eigen::Index>(b));
            out.push_back(detail::as_landmarks(decode_all(hs), spacings[start + b]));
        }
    }
    return out;
}

inline Metrics evaluate(const BackboneParams& params, const std::vector<Sample>& test,
                        const std::vector<double>& radii = default_outlier_radii()) {
    if (test.empty()) throw ValidationError("evaluate: empty test set");
    std::vector<const Image*> imgs;
    std::vector<double> spacing;
    std::vector<LandmarkSet> truth;
    for (const auto& s : test) {
        imgs.push_back(&s.image);
        spacing.push_back(s.landmarks.spacing_mm);
        truth.push_back(s.landmarks);
    }
    return evaluate_predictions(predict_landmarks(params, imgs, spacing), truth, radii);
}

inline Metrics evaluate(const TrainState& state, const std::vector<Sample>& test,
                        const std::vector<double>& radii = default_outlier_radii()) {
    return evaluate(state.params, test, radii);
}

/// Pseudo label for one prediction under the given arm: shape-regulated, or
/// the raw prediction with every landmark kept. A prediction too degenerate
/// to align keeps no landmarks.
inline PseudoLabel make_pseudo_label(const ShapeModel* model, const LandmarkSet& initial, Ablation arm, double z_mm) {
    if (!model || !uses_regulation(arm)) return PseudoLabel::passthrough(initial);
    try {
        return regulate(*model, initial, z_mm);
    } catch (const DegenerateShape&) {
        PseudoLabel p = PseudoLabel::passthrough(initial);
        p.valid.assign(p.valid.size(), false);
        p.branch = PseudoBranch::RawWithExclusions;
        return p;
    }
}

/// Mean distance (mm) between valid pseudo-label landmarks and the reference.
inline std::optional<double> pseudo_label_error_mm(const std::vector<PseudoLabel>& labels,
                                                   const std::vector<UnlabeledSample>& samples) {
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t j = 0; j < labels.size(); ++j) {
        if (!samples[j].reference) return std::nullopt;
        for (std::size_t i = 0; i < labels[j].coords.size(); ++i) {
            if (!labels[j].valid[i]) continue;
            sum += (labels[j].coords[i] - samples[j].reference->coords[i]).norm() * samples[j].spacing_mm;
            ++count;
        }
    }
    if (count == 0) return std::nullopt;
    return sum / static_cast<double>(count);
}

inline TrajectoryPoint snapshot_pseudo_labels(const BackboneParams& params, const Dataset& data, const ShapeModel* model,
                                              const TrainConfig& cfg, int epoch) {
    std::vector<const Image*> imgs;
    std::vector<double> spacing;
    for (const auto& u : data.unlabeled) {
        imgs.push_back(&u.image);
        spacing.push_back(u.spacing_mm);
    }
    TrajectoryPoint tp;
    tp.epoch = epoch;
    for (const auto& initial : predict_landmarks(params, imgs, spacing)) {
        PseudoLabel p = make_pseudo_label(model, initial, cfg.ablation, cfg.z_mm);
        (p.branch == PseudoBranch::Adjusted ? tp.adjusted : tp.raw) += 1;
        tp.labels.push_back(std::move(p));
    }
    tp.mean_error_mm = pseudo_label_error_mm(tp.labels, data.unlabeled);
    return tp;
}

namespace detail {

inline std::uint64_t stage_tag(Stage next) { return static_cast<std::uint64_t>(next) + 1; }

inline Augmented augment_for(const Image& img, const std::optional<LandmarkSet>& lm, const TrainConfig& cfg,
                             Stage next, int epoch, std::size_t index, std::uint64_t kind) {
    Rng rng = make_rng(cfg.seed, Stream::Augment, stage_tag(next) * 1000003ULL + static_cast<std::uint64_t>(epoch),
                       index, kind);
    return augment(img, lm, cfg.augmentation, rng);
}

inline std::vector<std::size_t> shuffled(std::size_t n, const TrainConfig& cfg, Stage next, int epoch,
                                         std::uint64_t kind) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    Rng rng = make_rng(cfg.seed, Stream::Shuffle, stage_tag(next), static_cast<std::uint64_t>(epoch), kind);
    shuffle(idx, rng);
    return idx;
}

inline LatentOffsets offsets_for(const TrainConfig& cfg, const TrainState& st, Stage next, std::size_t member,
                                 std::size_t n) {
    return sample_offsets(n, derive_seed(cfg.seed, Stream::Offsets, stage_tag(next), st.adam.step_count, member),
                          cfg.offsets);
}

/// An unlabeled sample as seen during one self-training epoch: its augmented
/// image and the pseudo label predicted on that image at the start of the epoch.
struct PseudoLabeled {
    Image image;
    PseudoLabel label;
    double spacing_mm = 100.0;
};

/// Augments every unlabeled sample for `epoch` and pseudo-labels it with the
/// current parameters, which stay fixed while the labels are produced.
inline std::vector<PseudoLabeled> label_unlabeled(const Dataset& data, const ShapeModel* model, const TrainConfig& cfg,
                                                  const BackboneParams& params, int epoch) {
    std::vector<PseudoLabeled> out(data.unlabeled.size());
    std::vector<const Image*> imgs;
    std::vector<double> spacing;
    for (std::size_t j = 0; j < data.unlabeled.size(); ++j) {
        out[j].image = augment_for(data.unlabeled[j].image, std::nullopt, cfg, Stage::SelfTrained, epoch, j, 1).image;
        out[j].spacing_mm = data.unlabeled[j].spacing_mm;
        imgs.push_back(&out[j].image);
        spacing.push_back(out[j].spacing_mm);
    }
    const auto initial = predict_landmarks(params, imgs, spacing);
    for (std::size_t j = 0; j < out.size(); ++j)
        out[j].label = make_pseudo_label(model, initial[j], cfg.ablation, cfg.z_mm);
    return out;
}

/// One optimizer step over labeled members `lab` (augmented here) and
/// pseudo-labeled members `unl`. Unlabeled members without a valid landmark
/// are skipped. `supervise_with_region_attention` selects the labeled loss.
inline double train_step(const Dataset& data, const TrainConfig& cfg, TrainState& st, Stage next, int epoch,
                         const std::vector<std::size_t>& lab, const std::vector<const PseudoLabeled*>& unl,
                         bool supervise_with_region_attention) {
    const BackboneConfig& bc = st.params.config();
    const std::size_t n = static_cast<std::size_t>(bc.n_landmarks);
    std::vector<Augmented> lab_aug;
    std::vector<const Image*> imgs;
    for (std::size_t i : lab)
        lab_aug.push_back(augment_for(data.labeled[i].image, data.labeled[i].landmarks, cfg, next, epoch, i, 0));
    for (const auto& a : lab_aug) imgs.push_back(&a.image);
    for (const auto* u : unl) imgs.push_back(&u->image);

    const ForwardCache fc = forward_batch(st.params, imgs);
    std::vector<LossResult> lab_terms, unl_terms;
    std::size_t member = 0;
    for (std::size_t b = 0; b < lab.size(); ++b, ++member) {
        const auto hs = heatmaps_of(bc, fc, static_cast<Eigen::Index>(member));
        const LandmarkSet& target = *lab_aug[b].landmarks;
        if (supervise_with_region_attention) {
            lab_terms.push_back(region_attention_loss(hs, PseudoLabel::passthrough(target),
                                                      offsets_for(cfg, st, next, member, n)));
        } else {
            lab_terms.push_back(l1_coordinate_loss(hs, target));
        }
    }
    for (const auto* u : unl) {
        const auto m = static_cast<Eigen::Index>(member);
        if (u->label.valid_count() == 0) {
            unl_terms.push_back(LossResult{});
        } else if (uses_region_attention(cfg.ablation)) {
            unl_terms.push_back(region_attention_loss(heatmaps_of(bc, fc, m), u->label, offsets_for(cfg, st, next, member, n)));
        } else {
            unl_terms.push_back(l1_coordinate_loss(heatmaps_of(bc, fc, m), pseudo_as_target(u->label, u->spacing_mm)));
        }
        ++member;
    }

    const double loss = combine_objective(lab_terms, unl_terms);
    std::vector<std::vector<Grid>> grads;
    for (auto& t : lab_terms) grads.push_back(std::move(t.grad));
    for (auto& t : unl_terms) {
        if (t.grad.empty()) t.grad.assign(n, Grid(bc.heatmap_size, bc.heatmap_size, 0.0));
        grads.push_back(std::move(t.grad));
    }
    const Eigen::VectorXd g = backward_batch(st.params, fc, upstream_matrix(bc, grads));
    adam_step(st.adam, st.params.flat(), g);
    return loss;
}

inline bool eval_due(const TrainConfig& cfg, const Dataset& data, int epoch) {
    return !data.held_out.empty() && epoch % cfg.eval_every == 0;
}

/// Epoch loop shared by pre-training and fine-tuning: labeled mini-batches
/// only, held-out evaluation after each due epoch, and the best evaluated
/// parameters restored when the stage completes.
inline TrainState labeled_stage(const Dataset& data, const TrainConfig& cfg, TrainState state, const Hooks& hooks,
                                Stage next, int epochs, const char* name, bool region_attention) {
    const std::size_t nl = data.labeled.size();
    const auto bl = static_cast<std::size_t>(cfg.labeled_batch);
    if (state.epochs_done == 0) {
        state.best_params.reset();
        state.best_mre = std::numeric_limits<double>::infinity();
    }
    while (state.epochs_done < epochs) {
        const int epoch = state.epochs_done + 1;
        const auto order = shuffled(nl, cfg, next, epoch, 0);
        double loss = 0.0;
        std::size_t steps = 0;
        for (std::size_t start = 0; start < nl; start += bl) {
            const std::vector<std::size_t> lab(order.begin() + static_cast<std::ptrdiff_t>(start),
                                               order.begin() + static_cast<std::ptrdiff_t>(std::min(nl, start + bl)));
            loss += train_step(data, cfg, state, next, epoch, lab, {}, region_attention);
            ++steps;
        }
        state.epochs_done = epoch;
        EpochRecord rec{name, epoch, loss / static_cast<double>(steps), std::nullopt, std::nullopt, 0};
        if (eval_due(cfg, data, epoch)) {
            rec.mre_mm = evaluate(state, data.held_out, cfg.outlier_radii).mre_mm;
            if (*rec.mre_mm < state.best_mre) {
                state.best_mre = *rec.mre_mm;
                state.best_params = state.params;
            }
        }
        const bool finished = epoch == epochs;
        if (finished) {
            state.stage = next;
            state.epochs_done = 0;
            if (state.best_params) state.params = *state.best_params;
        }
        emit(hooks, rec);
        if (!keep_going(hooks, state) || finished) break;
    }
    return state;
}

}  // namespace detail

/// Supervised pre-training on labeled data with the L1 coordinate loss. The
/// stage ends on the parameters with the best held-out MRE.
inline TrainState pretrain(const Dataset& data, const TrainConfig& cfg, TrainState state, const Hooks& hooks = {}) {
    cfg.validate();
    data.validate();
    if (state.stage != Stage::Initialized) throw StageOrderError("pretrain: state is already past pre-training");
    return detail::labeled_stage(data, cfg, std::move(state), hooks, Stage::Pretrained, cfg.pretrain_epoch_count(),
                                 "pretrain", false);
}

/// Shape-regulated self-training. Every epoch first pseudo-labels all
/// augmented unlabeled images with the parameters as they stand, then makes
/// one pass over them in steps that each pair a labeled and an unlabeled
/// mini-batch. Pseudo labels of the clean unlabeled images are snapshotted
/// every `trajectory_interval` epochs.
inline TrainState self_train(const Dataset& data, const ShapeModel& model, const TrainConfig& cfg, TrainState state,
                             const Hooks& hooks = {}) {
    cfg.validate();
    data.validate();
    if (state.stage != Stage::Pretrained) throw StageOrderError("self_train: state is not pre-trained");
    if (!uses_self_training(cfg.ablation)) throw ValidationError("self_train: supervised-only arm has no self-training");
    if (data.unlabeled.empty()) throw InsufficientData("self_train: no unlabeled samples");
    if (model.n_landmarks != data.n_landmarks()) throw ShapeMismatch("self_train: shape model landmark count mismatch");
    const std::size_t nl = data.labeled.size(), nu = data.unlabeled.size();
    const auto bl = static_cast<std::size_t>(cfg.labeled_batch), bu = static_cast<std::size_t>(cfg.unlabeled_batch);
    const ShapeModel* prior = uses_regulation(cfg.ablation) ? &model : nullptr;

    while (state.epochs_done < cfg.epochs_per_stage) {
        const int epoch = state.epochs_done + 1;
        const auto u_order = detail::shuffled(nu, cfg, Stage::SelfTrained, epoch, 1);
        const auto l_order = detail::shuffled(nl, cfg, Stage::SelfTrained, epoch, 0);
        const auto pseudo = detail::label_unlabeled(data, prior, cfg, state.params, epoch);
        std::size_t skipped = 0;
        for (const auto& p : pseudo) skipped += p.label.valid_count() == 0 ? 1 : 0;
        if (skipped == nu) throw AllSamplesSkipped("self_train: every unlabeled sample lost all landmarks to regulation");
        std::size_t l_cursor = 0, steps = 0;
        double loss = 0.0;
        for (std::size_t start = 0; start < nu; start += bu) {
            std::vector<const detail::PseudoLabeled*> unl;
            for (std::size_t k = start; k < std::min(nu, start + bu); ++k) unl.push_back(&pseudo[u_order[k]]);
            std::vector<std::size_t> lab;
            for (std::size_t k = 0; k < bl; ++k) lab.push_back(l_order[(l_cursor++) % nl]);
            loss += detail::train_step(data, cfg, state, Stage::SelfTrained, epoch, lab, unl, false);
            ++steps;
        }
        state.epochs_done = epoch;
        EpochRecord rec{"self_train", epoch, loss / static_cast<double>(steps), std::nullopt, std::nullopt, skipped};
        if (detail::eval_due(cfg, data, epoch)) rec.mre_mm = evaluate(state, data.held_out, cfg.outlier_radii).mre_mm;
        if (epoch % cfg.trajectory_interval == 0) {
            state.trajectory.push_back(snapshot_pseudo_labels(state.params, data, prior, cfg, epoch));
            rec.pseudo_label_error_mm = state.trajectory.back().mean_error_mm;
        }
        const bool finished = epoch == cfg.epochs_per_stage;
        if (finished) {
            state.stage = Stage::SelfTrained;
            state.epochs_done = 0;
        }
        detail::emit(hooks, rec);
        if (!detail::keep_going(hooks, state) || finished) break;
    }
    return state;
}

/// Fine-tuning on labeled data, with the region attention loss against the
/// ground truth unless the arm or config asks for L1. The stage ends on the
/// parameters with the best held-out MRE seen during fine-tuning.
inline TrainState finetune(const Dataset& data, const TrainConfig& cfg, TrainState state, const Hooks& hooks = {}) {
    cfg.validate();
    data.validate();
    const int epochs = cfg.finetune_epoch_count();
    if (epochs == 0) return state;
    if (state.stage != Stage::SelfTrained) throw StageOrderError("finetune: state is not self-trained");
    const bool region_attention =
        cfg.finetune_loss == FinetuneLoss::RegionAttention && uses_region_attention(cfg.ablation);
    return detail::labeled_stage(data, cfg, std::move(state), hooks, Stage::Finetuned, epochs, "finetune",
                                 region_attention);
}

/// Runs every stage the arm calls for, resuming from whatever stage and epoch
/// `state` records. Returns early if a hook asks to stop.
inline TrainState run_training(const Dataset& data, const ShapeModel* model, const TrainConfig& cfg, TrainState state,
                               const Hooks& hooks = {}) {
    bool stopped = false;
    Hooks wrapped = hooks;
    wrapped.on_epoch_end = [&](const TrainState& s) {
        const bool go = detail::keep_going(hooks, s);
        stopped = !go;
        return go;
    };
    if (state.stage == Stage::Initialized) state = pretrain(data, cfg, std::move(state), wrapped);
    if (stopped || !uses_self_training(cfg.ablation)) return state;
    if (!model) throw ValidationError("run_training: self-training arms need a shape model");
    if (state.stage == Stage::Pretrained) state = self_train(data, *model, cfg, std::move(state), wrapped);
    if (stopped) return state;
    if (state.stage == Stage::SelfTrained) state = finetune(data, cfg, std::move(state), wrapped);
    return state;
}

// ---------------------------------------------------------------------------
// Synthetic benchmark and ablation harness

struct BenchmarkSpec {
    std::size_t labeled = 20;
    std::size_t unlabeled = 200;
    std::size_t test = 100;
    GeneratorSpec generator = default_generator_spec();
};

/// Labeled, unlabeled and test samples come from disjoint index ranges of the
/// generator stream seeded with `seed`.
inline Dataset make_benchmark(const BenchmarkSpec& spec, std::uint64_t seed) {
    GeneratorSpec gen = spec.generator;
    gen.seed = seed;
    Dataset d;
    d.labeled = generate(gen, spec.labeled, 0);
    for (auto& s : generate(gen, spec.unlabeled, spec.labeled)) {
        UnlabeledSample u;
        u.image = std::move(s.image);
        u.spacing_mm = s.landmarks.spacing_mm;
        u.reference = std::move(s.landmarks);
        d.unlabeled.push_back(std::move(u));
    }
    d.held_out = generate(gen, spec.test, spec.labeled + spec.unlabeled);
    return d;
}

struct ArmOutcome {
    Ablation arm = Ablation::Full;
    std::uint64_t seed = 0;
    Metrics metrics;
    std::optional<double> self_train_end_mre;
    std::vector<std::pair<int, double>> pseudo_error;  // (epoch, mean error mm)
    std::vector<EpochRecord> log;
    double pretrain_seconds = 0.0;  // shared by every arm of the seed
    double seconds = 0.0;           // this arm alone
};

inline double median(std::vector<double> v) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(v.begin(), v.end());
    const std::size_t m = v.size() / 2;
    return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

/// Trains every requested arm for one seed on a shared dataset. Pre-training
/// is identical across arms for a given seed, so it runs once and is reused.
inline std::vector<ArmOutcome> run_arms_for_seed(const Dataset& data, const std::vector<Ablation>& arms, TrainConfig cfg,
                                                 std::uint64_t seed) {
    cfg.seed = seed;
    cfg.ablation = Ablation::Full;
    using clock = std::chrono::steady_clock;
    const auto since = [](clock::time_point t) { return std::chrono::duration<double>(clock::now() - t).count(); };
    const auto t0 = clock::now();
    std::vector<EpochRecord> pre_log;
    Hooks pre_hooks;
    pre_hooks.on_record = [&](const EpochRecord& r) { pre_log.push_back(r); };
    const TrainState pre = pretrain(data, cfg, TrainState::fresh(cfg), pre_hooks);
    const ShapeModel model = build_shape_model(data.labeled_landmarks(), cfg.variance_target);
    const double pre_seconds = since(t0);

    std::vector<ArmOutcome> out;
    for (Ablation arm : arms) {
        const auto t1 = clock::now();
        ArmOutcome o;
        o.arm = arm;
        o.seed = seed;
        o.log = pre_log;
        TrainConfig c = cfg;
        c.ablation = arm;
        Hooks hooks;
        hooks.on_record = [&](const EpochRecord& r) { o.log.push_back(r); };
        TrainState st = pre;
        if (uses_self_training(arm)) {
            st = self_train(data, model, c, std::move(st), hooks);
            if (!data.held_out.empty()) o.self_train_end_mre = evaluate(st, data.held_out, c.outlier_radii).mre_mm;
            for (const auto& tp : st.trajectory)
                if (tp.mean_error_mm) o.pseudo_error.emplace_back(tp.epoch, *tp.mean_error_mm);
            st = finetune(data, c, std::move(st), hooks);
        }
        o.metrics = evaluate(st, data.held_out, c.outlier_radii);
        o.pretrain_seconds = pre_seconds;
        o.seconds = since(t1);
        out.push_back(std::move(o));
    }
    return out;
}

}  // namespace shapereg

// SPDX-License-Identifier: Apache-2.0
#include "catch_amalgamated.hpp"

#include "shapereg/pipeline.hpp"
#include "support.hpp"

using namespace shapereg;
using Catch::Matchers::WithinAbs;

namespace {

// A scaled-down benchmark that trains in well under a second per stage.
struct Tiny {
    Dataset data;
    TrainConfig cfg;
    ShapeModel model;
};

Tiny tiny(std::uint64_t seed = 1) {
    Tiny t;
    BenchmarkSpec b;
    b.labeled = 8;
    b.unlabeled = 12;
    b.test = 6;
    b.generator.image_size = 16;
    t.data = make_benchmark(b, seed);
    t.cfg.seed = seed;
    t.cfg.epochs_per_stage = 10;
    t.cfg.backbone.image_size = 16;
    t.cfg.backbone.pool_size = 8;
    t.cfg.backbone.hidden = 16;
    t.cfg.backbone.heatmap_size = 8;
    t.model = build_shape_model(t.data.labeled_landmarks());
    return t;
}

Grid filled(double v) { return Grid(2, 2, v); }

LossResult term(double loss, double g) { return {loss, {filled(g)}}; }

}  // namespace

TEST_CASE("objective averages each set over its own members", "[pipeline]") {
    std::vector<LossResult> lab{term(2.0, 1.0), term(4.0, 1.0)};
    std::vector<LossResult> unl{term(9.0, 3.0), LossResult{}, term(3.0, 3.0), term(0.0, 3.0)};
    const double total = combine_objective(lab, unl);
    // (2 + 4) / 2 + (9 + 3 + 0) / 3, the skipped member counting for nothing.
    REQUIRE_THAT(total, WithinAbs(7.0, 1e-15));
    REQUIRE(lab[0].grad[0].values[0] == 0.5);
    REQUIRE(unl[0].grad[0].values[0] == 1.0);
    REQUIRE(unl[1].grad.empty());

    std::vector<LossResult> none;
    std::vector<LossResult> one{term(5.0, 2.0)};
    REQUIRE(combine_objective(none, one) == 5.0);
}

TEST_CASE("training config validation", "[pipeline]") {
    TrainConfig c;
    c.epochs_per_stage = 0;
    REQUIRE_THROWS_AS(c.validate(), ValidationError);
    c = TrainConfig{};
    c.finetune_epochs = -1;
    REQUIRE_THROWS_AS(c.validate(), ValidationError);
    c = TrainConfig{};
    c.z_mm = 0.0;
    REQUIRE_THROWS_AS(c.validate(), ValidationError);
    c = TrainConfig{};
    c.finetune_epochs = 0;
    REQUIRE_NOTHROW(c.validate());
    REQUIRE(TrainConfig{}.z_mm == 2.0);
    REQUIRE(TrainConfig{}.variance_target == 0.9999);
}

TEST_CASE("ablation names round-trip", "[pipeline]") {
    for (Ablation a : all_arms()) REQUIRE(parse_ablation(to_string(a)) == a);
    REQUIRE(all_arms().size() == 5);
    REQUIRE_THROWS_AS(parse_ablation("everything"), ValidationError);
    REQUIRE(uses_regulation(Ablation::NoRAL));
    REQUIRE_FALSE(uses_regulation(Ablation::NoSR));
    REQUIRE(uses_region_attention(Ablation::NoSR));
    REQUIRE_FALSE(uses_region_attention(Ablation::NoSRNoRAL));
}

TEST_CASE("stages run only in order", "[pipeline]") {
    Tiny t = tiny();
    const TrainState fresh = TrainState::fresh(t.cfg);
    REQUIRE_THROWS_AS(self_train(t.data, t.model, t.cfg, fresh), StageOrderError);
    REQUIRE_THROWS_AS(finetune(t.data, t.cfg, fresh), StageOrderError);
    const TrainState pre = pretrain(t.data, t.cfg, fresh);
    REQUIRE(pre.stage == Stage::Pretrained);
    REQUIRE_THROWS_AS(pretrain(t.data, t.cfg, pre), StageOrderError);
    REQUIRE_THROWS_AS(finetune(t.data, t.cfg, pre), StageOrderError);
    TrainConfig sup = t.cfg;
    sup.ablation = Ablation::SupervisedOnly;
    REQUIRE_THROWS_AS(self_train(t.data, t.model, sup, pre), ValidationError);
}

TEST_CASE("run log has one record per stage epoch", "[pipeline]") {
    Tiny t = tiny();
    t.cfg.pretrain_epochs = 4;
    t.cfg.finetune_epochs = 3;
    std::vector<EpochRecord> log;
    Hooks h;
    h.on_record = [&](const EpochRecord& r) { log.push_back(r); };
    const TrainState st = run_training(t.data, &t.model, t.cfg, TrainState::fresh(t.cfg), h);
    REQUIRE(st.stage == Stage::Finetuned);
    REQUIRE(log.size() == 4 + 10 + 3);
    REQUIRE(log[0].stage == "pretrain");
    REQUIRE(log[4].stage == "self_train");
    REQUIRE(log[14].stage == "finetune");
    REQUIRE(log[16].epoch == 3);
    for (const auto& r : log) REQUIRE(r.mre_mm.has_value());
    // Snapshots every five self-training epochs.
    REQUIRE(st.trajectory.size() == 2);
    REQUIRE(st.trajectory[0].epoch == 5);
    REQUIRE(log[4 + 4].pseudo_label_error_mm.has_value());
    REQUIRE_FALSE(log[4 + 3].pseudo_label_error_mm.has_value());
}

TEST_CASE("supervised-only stops after pre-training", "[pipeline]") {
    Tiny t = tiny();
    t.cfg.ablation = Ablation::SupervisedOnly;
    std::size_t records = 0;
    Hooks h;
    h.on_record = [&](const EpochRecord&) { ++records; };
    const TrainState st = run_training(t.data, &t.model, t.cfg, TrainState::fresh(t.cfg), h);
    REQUIRE(st.stage == Stage::Pretrained);
    REQUIRE(records == 10);
}

TEST_CASE("same seed gives bitwise-identical training", "[pipeline][determinism]") {
    Tiny a = tiny(3), b = tiny(3);
    const TrainState sa = run_training(a.data, &a.model, a.cfg, TrainState::fresh(a.cfg));
    const TrainState sb = run_training(b.data, &b.model, b.cfg, TrainState::fresh(b.cfg));
    REQUIRE(sa.params.flat() == sb.params.flat());
    REQUIRE(sa.adam.second_moment == sb.adam.second_moment);
    REQUIRE(sa.trajectory.size() == sb.trajectory.size());
    for (std::size_t i = 0; i < sa.trajectory.size(); ++i)
        for (std::size_t k = 0; k < sa.trajectory[i].labels.size(); ++k)
            REQUIRE(sa.trajectory[i].labels[k].coords == sb.trajectory[i].labels[k].coords);
    Tiny c = tiny(3);
    c.cfg.seed = 4;
    const TrainState sc = run_training(c.data, &c.model, c.cfg, TrainState::fresh(c.cfg));
    REQUIRE(sc.params.flat() != sa.params.flat());
}

TEST_CASE("stopping and resuming matches an uninterrupted run", "[pipeline][determinism]") {
    Tiny t = tiny(5);
    const TrainState full = run_training(t.data, &t.model, t.cfg, TrainState::fresh(t.cfg));
    TrainState st = TrainState::fresh(t.cfg);
    for (int chunk : {3, 9, 7, 100}) {
        int left = chunk;
        Hooks h;
        h.on_epoch_end = [&](const TrainState&) { return --left > 0; };
        st = run_training(t.data, &t.model, t.cfg, std::move(st), h);
    }
    REQUIRE(st.stage == Stage::Finetuned);
    REQUIRE(st.params.flat() == full.params.flat());
    REQUIRE(st.adam.first_moment == full.adam.first_moment);
    REQUIRE(st.adam.step_count == full.adam.step_count);
}

TEST_CASE("pseudo labels follow the arm", "[pipeline]") {
    Tiny t = tiny();
    LandmarkSet lm = t.data.labeled[0].landmarks;
    const PseudoLabel plain = make_pseudo_label(&t.model, lm, Ablation::NoSR, 2.0);
    REQUIRE(plain.coords == lm.coords);
    REQUIRE(plain.valid_count() == lm.size());
    const PseudoLabel none = make_pseudo_label(nullptr, lm, Ablation::Full, 2.0);
    REQUIRE(none.coords == lm.coords);
    lm.coords[2] += Point(0.3, 0.0);
    const PseudoLabel reg = make_pseudo_label(&t.model, lm, Ablation::Full, 2.0);
    REQUIRE(reg.branch == PseudoBranch::RawWithExclusions);
    REQUIRE_FALSE(reg.valid[2]);
    for (auto& p : lm.coords) p = Point(0.4, 0.4);
    const PseudoLabel dead = make_pseudo_label(&t.model, lm, Ablation::Full, 2.0);
    REQUIRE(dead.valid_count() == 0);
}

TEST_CASE("self-training fails when regulation discards everything", "[pipeline]") {
    Tiny t = tiny();
    t.cfg.z_mm = 1e-12;
    const TrainState pre = pretrain(t.data, t.cfg, TrainState::fresh(t.cfg));
    REQUIRE_THROWS_AS(self_train(t.data, t.model, t.cfg, pre), AllSamplesSkipped);
    t.cfg.ablation = Ablation::NoSR;  // no regulation, nothing is skipped
    REQUIRE_NOTHROW(self_train(t.data, t.model, t.cfg, pre));
}

TEST_CASE("zero fine-tuning epochs keeps the self-trained state", "[pipeline]") {
    Tiny t = tiny();
    t.cfg.finetune_epochs = 0;
    const TrainState st = run_training(t.data, &t.model, t.cfg, TrainState::fresh(t.cfg));
    REQUIRE(st.stage == Stage::SelfTrained);
}

TEST_CASE("benchmark splits come from disjoint index ranges", "[pipeline]") {
    BenchmarkSpec b;
    b.labeled = 3;
    b.unlabeled = 4;
    b.test = 2;
    const Dataset d = make_benchmark(b, 9);
    GeneratorSpec g = b.generator;
    g.seed = 9;
    REQUIRE(d.labeled[2].image == generate_one(g, 2).image);
    REQUIRE(d.unlabeled[0].image == generate_one(g, 3).image);
    REQUIRE(d.unlabeled[0].reference->coords == generate_one(g, 3).landmarks.coords);
    REQUIRE(d.held_out[1].image == generate_one(g, 8).image);
}

TEST_CASE("median of per-seed values", "[pipeline]") {
    REQUIRE(median({3.0, 1.0, 2.0}) == 2.0);
    REQUIRE(median({4.0, 1.0, 2.0, 3.0}) == 2.5);
    REQUIRE(std::isnan(median({})));
}

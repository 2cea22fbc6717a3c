// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end. Every command writes into an output directory and
// leaves a manifest.json there recording the inputs, the resolved
// configuration and the seed, so the same invocation reproduces the same bytes.
//
// Exit codes: 0 success, 2 usage or validation error, 3 numeric failure.
#pragma once

#include <algorithm>
#include <cstdint>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "shapereg/io.hpp"
#include "shapereg/metrics.hpp"
#include "shapereg/pipeline.hpp"
#include "shapereg/shape_model.hpp"
#include "shapereg/shapiro_wilk.hpp"
#include "shapereg/synth.hpp"

namespace shapereg::cli {

using io::json;
namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitNumeric = 3;

/// Options shared by every command that trains or regulates.
struct ConfigFlags {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> ablation;
    std::optional<double> z_mm;
    std::optional<int> epochs;
    std::optional<int> pretrain_epochs;
    std::optional<int> finetune_epochs;
    std::optional<double> lr;
    std::optional<double> variance_target;

    /// Defaults, then the config file, then explicit flags.
    TrainConfig resolve() const {
        TrainConfig c;
        if (!config_path.empty()) c = io::load_train_config(config_path, c);
        if (seed) c.seed = *seed;
        if (ablation) c.ablation = parse_ablation(*ablation);
        if (z_mm) c.z_mm = *z_mm;
        if (epochs) c.epochs_per_stage = *epochs;
        if (pretrain_epochs) c.pretrain_epochs = *pretrain_epochs;
        if (finetune_epochs) c.finetune_epochs = *finetune_epochs;
        if (lr) c.adam.lr = *lr;
        if (variance_target) c.variance_target = *variance_target;
        c.validate();
        return c;
    }

    void attach(CLI::App* app) {
        app->add_option("--config", config_path, "JSON file mirroring the training configuration")
            ->check(CLI::ExistingFile);
        app->add_option("--seed", seed, "Seed for every random stream");
        app->add_option("--ablation", ablation, "full | no-sr | no-ral | no-sr-no-ral | supervised-only");
        app->add_option("--z-mm", z_mm, "Abnormal-landmark threshold in mm");
        app->add_option("--epochs", epochs, "Epochs per training stage");
        app->add_option("--pretrain-epochs", pretrain_epochs, "Pre-training epochs (defaults to --epochs)");
        app->add_option("--finetune-epochs", finetune_epochs, "Fine-tuning epochs (defaults to --epochs)");
        app->add_option("--lr", lr, "Adam learning rate");
        app->add_option("--variance-target", variance_target, "Shape-model retained variance fraction");
    }
};

inline std::vector<LandmarkSet> landmarks_of(const std::vector<Sample>& samples) {
    std::vector<LandmarkSet> out;
    for (const auto& s : samples) out.push_back(s.landmarks);
    return out;
}

// ---------------------------------------------------------------------------
// synth

struct SynthArgs {
    std::string out;
    std::uint64_t seed = 0;
    std::size_t count = 300;
    std::uint64_t first_index = 0;
    std::string name = "data";
    bool benchmark = false;
    std::size_t labeled = 20, unlabeled = 200, test = 100;
};

inline int cmd_synth(const SynthArgs& a, std::ostream& out) {
    GeneratorSpec gen = default_generator_spec(a.seed);
    gen.validate();
    const fs::path dir(a.out);
    io::RunManifest m;
    m.command = "synth";
    m.seed = a.seed;
    m.output = a.out;
    m.config = io::to_json(gen);
    auto write_set = [&](const std::string& name, std::size_t count, std::uint64_t first) {
        io::DatasetFile d;
        d.spec = {{"generator", io::to_json(gen)}, {"count", count}, {"first_index", first}};
        d.samples = generate(gen, count, first);
        const fs::path manifest = io::save_dataset(dir, name, d);
        out << "wrote " << count << " samples to " << manifest.string() << "\n";
    };
    if (a.benchmark) {
        if (a.labeled < 2 || a.unlabeled == 0 || a.test == 0)
            throw ValidationError("synth: benchmark needs >= 2 labeled and non-empty unlabeled and test sets");
        write_set("labeled", a.labeled, 0);
        write_set("unlabeled", a.unlabeled, a.labeled);
        write_set("test", a.test, a.labeled + a.unlabeled);
        m.inputs = {{"benchmark", {{"labeled", a.labeled}, {"unlabeled", a.unlabeled}, {"test", a.test}}}};
    } else {
        write_set(a.name, a.count, a.first_index);
        m.inputs = {{"count", a.count}, {"first_index", a.first_index}, {"name", a.name}};
    }
    io::save_manifest(dir / "manifest.json", m);
    return kExitOk;
}

// ---------------------------------------------------------------------------
// build-model

struct BuildModelArgs {
    std::string labeled;
    std::string out;
    ConfigFlags flags;
};

inline json model_report(const ShapeModel& model, const std::vector<LandmarkSet>& labeled, double target) {
    std::vector<ShapeVector> shapes;
    for (const auto& lm : labeled) shapes.push_back(flatten(lm));
    const Eigen::MatrixXd coeffs = coefficient_table(model, shapes);
    json modes = json::array();
    double cumulative = 0.0;
    for (Eigen::Index k = 0; k < model.modes(); ++k) {
        cumulative += model.explained[k];
        json row{{"mode", k + 1},
                 {"sigma", model.sigmas[k]},
                 {"explained", model.explained[k]},
                 {"cumulative", cumulative}};
        const Eigen::VectorXd col = coeffs.col(k);
        try {
            const auto sw = shapiro_wilk(std::vector<double>(col.data(), col.data() + col.size()));
            row["shapiro_w"] = sw.w;
            row["shapiro_p"] = sw.p_value;
        } catch (const std::exception& e) {
            // Too few shapes or constant coefficients: no normality verdict.
            row["shapiro_w"] = nullptr;
            row["shapiro_p"] = nullptr;
            row["shapiro_note"] = e.what();
        }
        modes.push_back(row);
    }
    return {{"n_train", model.n_train},       {"n_landmarks", model.n_landmarks},
            {"variance_target", target},      {"variance_fraction", model.variance_fraction},
            {"k", model.modes()},             {"modes", modes}};
}

inline std::string model_report_text(const json& r) {
    std::ostringstream os;
    os << "shape model: " << r["k"].get<long>() << " modes from " << r["n_train"].get<std::size_t>()
       << " shapes, retained variance " << std::setprecision(6) << 100.0 * r["variance_fraction"].get<double>()
       << "% (target " << 100.0 * r["variance_target"].get<double>() << "%)\n";
    os << std::left << std::setw(6) << "mode" << std::setw(14) << "sigma" << std::setw(12) << "explained"
       << std::setw(12) << "cumulative" << std::setw(10) << "SW W" << "SW p\n";
    for (const auto& m : r["modes"]) {
        os << std::left << std::setw(6) << m["mode"].get<long>() << std::setw(14) << std::setprecision(6)
           << m["sigma"].get<double>() << std::setw(12) << std::setprecision(4) << 100.0 * m["explained"].get<double>()
           << std::setw(12) << 100.0 * m["cumulative"].get<double>();
        if (m["shapiro_w"].is_null()) {
            os << "n/a (" << m["shapiro_note"].get<std::string>() << ")\n";
        } else {
            os << std::setw(10) << std::setprecision(5) << m["shapiro_w"].get<double>() << std::setprecision(4)
               << m["shapiro_p"].get<double>() << "\n";
        }
    }
    return os.str();
}

inline int cmd_build_model(const BuildModelArgs& a, std::ostream& out) {
    const TrainConfig cfg = a.flags.resolve();
    const auto data = io::load_dataset(a.labeled);
    const auto labeled = landmarks_of(data.samples);
    const ShapeModel model = build_shape_model(labeled, cfg.variance_target);
    const json report = model_report(model, labeled, cfg.variance_target);
    const fs::path dir(a.out);
    io::save_shape_model(dir / "model.json", model);
    io::write_file(dir / "report.json", report.dump(2) + "\n");
    const std::string text = model_report_text(report);
    io::write_file(dir / "report.txt", text);
    out << text;
    io::RunManifest m;
    m.command = "build-model";
    m.seed = cfg.seed;
    m.output = a.out;
    m.config = {{"variance_target", cfg.variance_target}};
    m.inputs = {{"labeled", a.labeled}};
    io::save_manifest(dir / "manifest.json", m);
    return kExitOk;
}

// ---------------------------------------------------------------------------
// regulate

struct RegulateArgs {
    std::string model;
    std::string predictions;
    std::string out;
    double z_mm = kDefaultZmm;
};

inline int cmd_regulate(const RegulateArgs& a, std::ostream& out) {
    if (!(a.z_mm > 0.0)) throw ValidationError("regulate: --z-mm must be positive");
    const ShapeModel model = io::load_shape_model(a.model);
    const auto preds = io::load_predictions(a.predictions);
    std::vector<PseudoLabel> labels;
    for (const auto& p : preds) labels.push_back(regulate(model, p, a.z_mm));
    const fs::path dir(a.out);
    io::write_file(dir / "pseudo_labels.json", io::pseudo_labels_to_json(labels, a.z_mm).dump(2) + "\n");
    const auto c = io::count_branches(labels);
    out << "regulated " << labels.size() << " predictions: adjusted=" << c.adjusted
        << " raw_with_exclusions=" << c.raw << " z_mm=" << a.z_mm << "\n";
    io::RunManifest m;
    m.command = "regulate";
    m.output = a.out;
    m.config = {{"z_mm", a.z_mm}};
    m.inputs = {{"model", a.model}, {"predictions", a.predictions}};
    io::save_manifest(dir / "manifest.json", m);
    return kExitOk;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
    std::string labeled;
    std::string unlabeled;
    std::string test;
    std::string out;
    bool resume = false;
    int checkpoint_every = 10;
    std::optional<int> stop_after;  // epochs run by this invocation before stopping
    ConfigFlags flags;
};

inline Dataset load_training_data(const std::string& labeled, const std::string& unlabeled, const std::string& test) {
    Dataset d;
    d.labeled = io::load_dataset(labeled).samples;
    if (!unlabeled.empty()) d.unlabeled = io::as_unlabeled(io::load_dataset(unlabeled).samples);
    if (!test.empty()) d.held_out = io::load_dataset(test).samples;
    d.validate();
    return d;
}

/// Keeps the first `keep` lines of the run log, dropping records written
/// after the checkpoint being resumed from.
inline void truncate_log(const fs::path& path, std::size_t keep) {
    std::istringstream in(fs::exists(path) ? io::read_file(path) : std::string());
    std::string line, kept;
    for (std::size_t i = 0; i < keep && std::getline(in, line); ++i) kept += line + "\n";
    io::write_file(path, kept);
}

inline json trajectory_json(const TrainState& st) {
    json arr = json::array();
    for (const auto& tp : st.trajectory)
        arr.push_back({{"epoch", tp.epoch},
                       {"mean_error_mm", tp.mean_error_mm ? json(*tp.mean_error_mm) : json(nullptr)},
                       {"adjusted", tp.adjusted},
                       {"raw_with_exclusions", tp.raw}});
    return arr;
}

inline int cmd_train(const TrainArgs& a, std::ostream& out) {
    if (a.checkpoint_every < 1) throw ValidationError("train: --checkpoint-every must be positive");
    if (a.stop_after && *a.stop_after < 1) throw ValidationError("train: --stop-after must be positive");
    const fs::path dir(a.out);
    const fs::path ckpt_path = dir / "checkpoint.bin";
    const fs::path log_path = dir / "log.ndjson";

    TrainConfig cfg;
    TrainState state;
    std::size_t log_records = 0;
    if (a.resume) {
        if (!fs::exists(ckpt_path)) throw ValidationError("train: nothing to resume, " + ckpt_path.string() + " is missing");
        io::Checkpoint ck = io::load_checkpoint(ckpt_path);
        cfg = ck.config;
        state = std::move(ck.state);
        log_records = ck.extra.value("log_records", std::size_t{0});
        truncate_log(log_path, log_records);
    } else {
        cfg = a.flags.resolve();
        state = TrainState::fresh(cfg);
    }
    const Dataset data = load_training_data(a.labeled, a.unlabeled, a.test);
    if (uses_self_training(cfg.ablation) && data.unlabeled.empty())
        throw ValidationError("train: arm '" + std::string(to_string(cfg.ablation)) + "' needs --unlabeled");
    if (data.n_landmarks() != static_cast<std::size_t>(cfg.backbone.n_landmarks))
        throw ShapeMismatch("train: dataset landmark count differs from backbone configuration");
    const ShapeModel model = build_shape_model(data.labeled_landmarks(), cfg.variance_target);

    io::RunManifest m;
    m.command = "train";
    m.seed = cfg.seed;
    m.output = a.out;
    m.config = io::to_json(cfg);
    m.inputs = {{"labeled", a.labeled}, {"unlabeled", a.unlabeled}, {"test", a.test}};
    io::save_manifest(dir / "manifest.json", m);

    io::RunLog log(log_path, a.resume);
    int ran = 0;
    auto extra = [&] { return json{{"log_records", log_records}}; };
    Hooks hooks;
    hooks.on_record = [&](const EpochRecord& r) {
        log.write(r);
        ++log_records;
        out << r.stage << " epoch " << r.epoch << " loss " << r.loss;
        if (r.mre_mm) out << " mre_mm " << *r.mre_mm;
        if (r.pseudo_label_error_mm) out << " pseudo_label_error_mm " << *r.pseudo_label_error_mm;
        out << "\n";
    };
    hooks.on_epoch_end = [&](const TrainState& s) {
        ++ran;
        const bool stop = a.stop_after && ran >= *a.stop_after;
        if (stop || s.epochs_done == 0 || s.epochs_done % a.checkpoint_every == 0)
            io::save_checkpoint(ckpt_path, cfg, s, extra());
        return !stop;
    };
    const bool done_before = state.stage == Stage::Finetuned ||
                             (!uses_self_training(cfg.ablation) && state.stage == Stage::Pretrained);
    if (!done_before) state = run_training(data, &model, cfg, std::move(state), hooks);
    const bool finished = state.stage == Stage::Finetuned ||
                          (!uses_self_training(cfg.ablation) && state.stage == Stage::Pretrained) ||
                          (state.stage == Stage::SelfTrained && cfg.finetune_epoch_count() == 0);
    io::save_checkpoint(ckpt_path, cfg, state, extra());
    if (!finished) {
        out << "stopped at stage " << to_string(state.stage) << ", epoch " << state.epochs_done
            << "; resume with --resume\n";
        return kExitOk;
    }
    io::write_file(dir / "trajectory.json", trajectory_json(state).dump(2) + "\n");
    if (!data.held_out.empty()) {
        std::vector<const Image*> imgs;
        std::vector<double> spacing;
        for (const auto& s : data.held_out) {
            imgs.push_back(&s.image);
            spacing.push_back(s.landmarks.spacing_mm);
        }
        io::save_predictions(dir / "predictions.json", predict_landmarks(state.params, imgs, spacing));
        const Metrics metrics = evaluate(state, data.held_out, cfg.outlier_radii);
        io::write_file(dir / "metrics.json", io::to_json(metrics).dump(2) + "\n");
        out << io::metrics_table({{to_string(cfg.ablation), metrics}});
    }
    return kExitOk;
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
    std::string checkpoint;
    std::string predictions;
    std::string test;
    std::string out;
    std::vector<double> radii = default_outlier_radii();
};

inline int cmd_eval(const EvalArgs& a, std::ostream& out) {
    if (a.checkpoint.empty() == a.predictions.empty())
        throw ValidationError("eval: give exactly one of --checkpoint or --predictions");
    for (std::size_t i = 1; i < a.radii.size(); ++i)
        if (!(a.radii[i] > a.radii[i - 1])) throw ValidationError("eval: --radii must be strictly increasing");
    const auto test = io::load_dataset(a.test).samples;
    const fs::path dir(a.out);
    std::vector<LandmarkSet> preds;
    std::string label;
    if (!a.checkpoint.empty()) {
        if (!fs::exists(a.checkpoint)) throw ValidationError("eval: checkpoint " + a.checkpoint + " does not exist");
        const io::Checkpoint ck = io::load_checkpoint(a.checkpoint);
        std::vector<const Image*> imgs;
        std::vector<double> spacing;
        for (const auto& s : test) {
            imgs.push_back(&s.image);
            spacing.push_back(s.landmarks.spacing_mm);
        }
        preds = predict_landmarks(ck.state.params, imgs, spacing);
        io::save_predictions(dir / "predictions.json", preds);
        label = to_string(ck.config.ablation);
    } else {
        if (!fs::exists(a.predictions)) throw ValidationError("eval: predictions " + a.predictions + " do not exist");
        preds = io::load_predictions(a.predictions);
        label = "predictions";
    }
    const Metrics metrics = evaluate_predictions(preds, landmarks_of(test), a.radii);
    io::write_file(dir / "metrics.json", io::to_json(metrics).dump(2) + "\n");
    const std::string table = io::metrics_table({{label, metrics}});
    io::write_file(dir / "metrics.txt", table);
    out << table;
    io::RunManifest m;
    m.command = "eval";
    m.output = a.out;
    m.config = {{"outlier_radii", a.radii}};
    m.inputs = {{"checkpoint", a.checkpoint}, {"predictions", a.predictions}, {"test", a.test}};
    io::save_manifest(dir / "manifest.json", m);
    return kExitOk;
}

// ---------------------------------------------------------------------------
// ablate

struct AblateArgs {
    std::string labeled;
    std::string unlabeled;
    std::string test;
    std::string out;
    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
    std::vector<std::string> arms;
    std::size_t bench_labeled = 20, bench_unlabeled = 200, bench_test = 100;
    ConfigFlags flags;
};

/// Per-arm medians over seeds, in arm order.
struct AblationSummary {
    struct Row {
        Ablation arm = Ablation::Full;
        std::vector<double> mre;  // per seed
        double median_mre = 0.0;
        double relative_to_supervised = 0.0;  // (supervised - arm) / supervised, when available
        std::map<int, double> median_pseudo_error;  // checkpoint epoch -> median over seeds
    };
    std::vector<Row> rows;
    std::vector<std::uint64_t> seeds;
};

inline AblationSummary summarize(const std::vector<ArmOutcome>& outcomes, const std::vector<Ablation>& arms,
                                 const std::vector<std::uint64_t>& seeds) {
    AblationSummary s;
    s.seeds = seeds;
    for (Ablation arm : arms) {
        AblationSummary::Row row;
        row.arm = arm;
        std::map<int, std::vector<double>> pseudo;
        for (const auto& o : outcomes) {
            if (o.arm != arm) continue;
            row.mre.push_back(o.metrics.mre_mm);
            for (const auto& [epoch, err] : o.pseudo_error) pseudo[epoch].push_back(err);
        }
        row.median_mre = median(row.mre);
        for (const auto& [epoch, v] : pseudo) row.median_pseudo_error[epoch] = median(v);
        s.rows.push_back(std::move(row));
    }
    auto sup = std::find_if(s.rows.begin(), s.rows.end(), [](const auto& r) { return r.arm == Ablation::SupervisedOnly; });
    if (sup != s.rows.end())
        for (auto& r : s.rows) r.relative_to_supervised = (sup->median_mre - r.median_mre) / sup->median_mre;
    return s;
}

inline std::string ablation_table(const AblationSummary& s) {
    std::ostringstream os;
    os << std::left << std::setw(18) << "arm" << std::setw(14) << "median MRE" << std::setw(14) << "vs supervised";
    for (auto seed : s.seeds) os << std::setw(10) << ("seed " + std::to_string(seed));
    os << "\n";
    for (const auto& r : s.rows) {
        std::ostringstream med, rel;
        med << std::fixed << std::setprecision(4) << r.median_mre;
        rel << std::fixed << std::setprecision(2) << std::showpos << 100.0 * r.relative_to_supervised << "%";
        os << std::left << std::setw(18) << to_string(r.arm) << std::setw(14) << med.str() << std::setw(14) << rel.str();
        for (double v : r.mre) {
            std::ostringstream cell;
            cell << std::fixed << std::setprecision(4) << v;
            os << std::setw(10) << cell.str();
        }
        os << "\n";
    }
    return os.str();
}

inline json to_json(const AblationSummary& s, const std::vector<ArmOutcome>& outcomes) {
    json rows = json::array();
    for (const auto& r : s.rows) {
        json pseudo = json::object();
        for (const auto& [epoch, v] : r.median_pseudo_error) pseudo[std::to_string(epoch)] = v;
        rows.push_back({{"arm", to_string(r.arm)},
                        {"mre_mm", r.mre},
                        {"median_mre_mm", r.median_mre},
                        {"relative_to_supervised", r.relative_to_supervised},
                        {"median_pseudo_label_error_mm", pseudo}});
    }
    json runs = json::array();
    for (const auto& o : outcomes) {
        json pe = json::array();
        for (const auto& [epoch, v] : o.pseudo_error) pe.push_back({epoch, v});
        runs.push_back({{"arm", to_string(o.arm)},
                        {"seed", o.seed},
                        {"metrics", io::to_json(o.metrics)},
                        {"self_train_end_mre_mm", o.self_train_end_mre ? json(*o.self_train_end_mre) : json(nullptr)},
                        {"pseudo_label_error_mm", pe}});
    }
    return {{"seeds", s.seeds}, {"arms", rows}, {"runs", runs}};
}

inline int cmd_ablate(const AblateArgs& a, std::ostream& out) {
    const TrainConfig cfg = a.flags.resolve();
    if (a.seeds.empty()) throw ValidationError("ablate: need at least one seed");
    std::vector<Ablation> arms;
    if (a.arms.empty()) arms = all_arms();
    for (const auto& name : a.arms) arms.push_back(parse_ablation(name));
    const bool from_files = !a.labeled.empty();
    if (from_files && (a.unlabeled.empty() || a.test.empty()))
        throw ValidationError("ablate: --labeled needs --unlabeled and --test as well");
    std::optional<Dataset> shared;
    if (from_files) shared = load_training_data(a.labeled, a.unlabeled, a.test);

    const fs::path dir(a.out);
    std::vector<ArmOutcome> outcomes;
    for (auto seed : a.seeds) {
        Dataset data;
        if (shared) {
            data = *shared;
        } else {
            BenchmarkSpec bench;
            bench.labeled = a.bench_labeled;
            bench.unlabeled = a.bench_unlabeled;
            bench.test = a.bench_test;
            data = make_benchmark(bench, seed);
        }
        for (auto& o : run_arms_for_seed(data, arms, cfg, seed)) {
            std::string lines;
            for (const auto& r : o.log) lines += io::to_json(r).dump() + "\n";
            io::write_file(dir / "logs" / ("seed" + std::to_string(seed) + "_" + to_string(o.arm) + ".ndjson"), lines);
            out << "seed " << seed << " " << to_string(o.arm) << " mre_mm " << o.metrics.mre_mm << "\n";
            outcomes.push_back(std::move(o));
        }
    }
    const AblationSummary summary = summarize(outcomes, arms, a.seeds);
    io::write_file(dir / "ablation.json", to_json(summary, outcomes).dump(2) + "\n");
    const std::string table = ablation_table(summary);
    io::write_file(dir / "ablation.txt", table);
    out << table;
    io::RunManifest m;
    m.command = "ablate";
    m.seed = cfg.seed;
    m.output = a.out;
    m.config = io::to_json(cfg);
    m.inputs = from_files ? json{{"labeled", a.labeled}, {"unlabeled", a.unlabeled}, {"test", a.test}}
                          : json{{"benchmark",
                                  {{"labeled", a.bench_labeled}, {"unlabeled", a.bench_unlabeled}, {"test", a.bench_test}}}};
    m.inputs["seeds"] = a.seeds;
    io::save_manifest(dir / "manifest.json", m);
    return kExitOk;
}

// ---------------------------------------------------------------------------
// Entry point

inline int run(std::vector<std::string> args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Shape-regulated self-training for landmark detection"};
    app.require_subcommand(1);
    int threads = 1;
    app.add_option("--threads", threads, "Worker cap; results do not depend on it")
        ->check(CLI::PositiveNumber);

    SynthArgs synth;
    auto* s = app.add_subcommand("synth", "Generate synthetic landmark images");
    s->add_option("--out", synth.out, "Output directory")->required();
    s->add_option("--seed", synth.seed, "Generator seed");
    s->add_option("--count", synth.count, "Number of samples");
    s->add_option("--first-index", synth.first_index, "Index of the first sample in the generator stream");
    s->add_option("--name", synth.name, "Manifest name");
    s->add_flag("--benchmark", synth.benchmark, "Write labeled, unlabeled and test sets from disjoint index ranges");
    s->add_option("--labeled", synth.labeled, "Benchmark labeled count");
    s->add_option("--unlabeled", synth.unlabeled, "Benchmark unlabeled count");
    s->add_option("--test", synth.test, "Benchmark test count");

    BuildModelArgs bm;
    auto* b = app.add_subcommand("build-model", "Fit the PCA shape model to labeled landmarks");
    b->add_option("--labeled", bm.labeled, "Labeled dataset manifest")->required();
    b->add_option("--out", bm.out, "Output directory")->required();
    bm.flags.attach(b);

    RegulateArgs rg;
    auto* r = app.add_subcommand("regulate", "Turn predictions into shape-regulated pseudo labels");
    r->add_option("--model", rg.model, "Shape model file")->required();
    r->add_option("--predictions", rg.predictions, "Predictions file")->required();
    r->add_option("--out", rg.out, "Output directory")->required();
    r->add_option("--z-mm", rg.z_mm, "Abnormal-landmark threshold in mm");

    TrainArgs tr;
    auto* t = app.add_subcommand("train", "Pre-train, self-train and fine-tune one arm");
    t->add_option("--labeled", tr.labeled, "Labeled dataset manifest")->required();
    t->add_option("--unlabeled", tr.unlabeled, "Unlabeled dataset manifest");
    t->add_option("--test", tr.test, "Held-out dataset manifest");
    t->add_option("--out", tr.out, "Output directory")->required();
    t->add_flag("--resume", tr.resume, "Continue from <out>/checkpoint.bin");
    t->add_option("--checkpoint-every", tr.checkpoint_every, "Epochs between checkpoints");
    t->add_option("--stop-after", tr.stop_after, "Stop after this many epochs (resumable)");
    tr.flags.attach(t);

    EvalArgs ev;
    auto* e = app.add_subcommand("eval", "Score a checkpoint or a predictions file on a test set");
    e->add_option("--checkpoint", ev.checkpoint, "Checkpoint file");
    e->add_option("--predictions", ev.predictions, "Predictions file");
    e->add_option("--test", ev.test, "Test dataset manifest")->required();
    e->add_option("--out", ev.out, "Output directory")->required();
    e->add_option("--radii", ev.radii, "Outlier radii in mm");

    AblateArgs ab;
    auto* a = app.add_subcommand("ablate", "Train every arm over several seeds and compare");
    a->add_option("--labeled", ab.labeled, "Labeled dataset manifest (default: synthetic benchmark per seed)");
    a->add_option("--unlabeled", ab.unlabeled, "Unlabeled dataset manifest");
    a->add_option("--test", ab.test, "Held-out dataset manifest");
    a->add_option("--out", ab.out, "Output directory")->required();
    a->add_option("--seeds", ab.seeds, "Seeds")->delimiter(',');
    a->add_option("--arms", ab.arms, "Arms to run (default: all five)")->delimiter(',');
    a->add_option("--bench-labeled", ab.bench_labeled, "Synthetic labeled count");
    a->add_option("--bench-unlabeled", ab.bench_unlabeled, "Synthetic unlabeled count");
    a->add_option("--bench-test", ab.bench_test, "Synthetic test count");
    ab.flags.attach(a);

    std::reverse(args.begin(), args.end());
    try {
        app.parse(std::move(args));
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& ex) {
        err << "error: " << ex.what() << "\n";
        return kExitUsage;
    }

    try {
        if (s->parsed()) return cmd_synth(synth, out);
        if (b->parsed()) return cmd_build_model(bm, out);
        if (r->parsed()) return cmd_regulate(rg, out);
        if (t->parsed()) return cmd_train(tr, out);
        if (e->parsed()) return cmd_eval(ev, out);
        if (a->parsed()) return cmd_ablate(ab, out);
    } catch (const ValidationError& ex) {
        err << "error: " << ex.what() << "\n";
        return kExitUsage;
    } catch (const NumericError& ex) {
        err << "numeric failure: " << ex.what() << "\n";
        return kExitNumeric;
    } catch (const fs::filesystem_error& ex) {
        err << "error: " << ex.what() << "\n";
        return kExitUsage;
    }
    return kExitUsage;
}

inline int run(int argc, char** argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    return run(std::vector<std::string>(argv + 1, argv + argc), out, err);
}

}  // namespace shapereg::cli

// SPDX-License-Identifier: Apache-2.0
//
// File formats: binary grids, dataset manifests, shape models, predictions,
// pseudo labels, training configs, checkpoints and the run log.
//
// Grids (images, heatmap dumps) are stored as an 8-byte little-endian header
// {rows: uint32, cols: uint32} followed by rows*cols float64 values in
// row-major order. Pixel (r, c) is centred at ((c+0.5)/cols, (r+0.5)/rows).
//
// Doubles in JSON are written in shortest round-trip form, so reading a file
// back reproduces every value bit for bit.
#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "shapereg/backbone.hpp"
#include "shapereg/pipeline.hpp"
#include "shapereg/regulation.hpp"
#include "shapereg/shape_model.hpp"
#include "shapereg/synth.hpp"

namespace shapereg::io {

using json = nlohmann::json;
namespace fs = std::filesystem;

inline constexpr int kFormatVersion = 1;
inline constexpr const char* kToolVersion = "1.0.0";

// ---------------------------------------------------------------------------
// Raw bytes

inline std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const fs::path& path, const std::string& bytes) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError("cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ValidationError("short write to " + path.string());
}

namespace detail {

template <typename T>
void put_le(std::string& out, T value) {
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
    const U bits = std::bit_cast<U>(value);
    for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

template <typename T>
T get_le(const std::string& in, std::size_t& pos) {
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
    if (pos + sizeof(U) > in.size()) throw ParseError("binary data truncated");
    U bits = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i)
        bits |= static_cast<U>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
    pos += sizeof(U);
    return std::bit_cast<T>(bits);
}

inline json parse_json(const std::string& text, const std::string& what) {
    try {
        return json::parse(text);
    } catch (const json::exception& e) {
        throw ParseError(what + ": " + e.what());
    }
}

/// Runs `fn` and turns JSON type/key errors into ParseError.
template <typename F>
auto guarded(const std::string& what, F&& fn) {
    try {
        return fn();
    } catch (const json::exception& e) {
        throw ParseError(what + ": " + e.what());
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Grids

inline std::string encode_grid(const Grid& g) {
    std::string out;
    out.reserve(8 + 8 * g.size());
    detail::put_le(out, static_cast<std::uint32_t>(g.rows));
    detail::put_le(out, static_cast<std::uint32_t>(g.cols));
    for (double v : g.values) detail::put_le(out, v);
    return out;
}

inline Grid decode_grid(const std::string& bytes) {
    std::size_t pos = 0;
    const auto rows = detail::get_le<std::uint32_t>(bytes, pos);
    const auto cols = detail::get_le<std::uint32_t>(bytes, pos);
    if (bytes.size() != 8 + 8ull * rows * cols) throw ParseError("grid payload does not match its header");
    Grid g(static_cast<int>(rows), static_cast<int>(cols));
    for (double& v : g.values) v = detail::get_le<double>(bytes, pos);
    return g;
}

inline void write_grid(const fs::path& path, const Grid& g) { write_file(path, encode_grid(g)); }
inline Grid read_grid(const fs::path& path) { return decode_grid(read_file(path)); }

// ---------------------------------------------------------------------------
// Landmarks and shape models

inline json to_json(const LandmarkSet& lm) {
    json coords = json::array();
    for (const auto& p : lm.coords) coords.push_back({p.x(), p.y()});
    json j{{"coords", coords}, {"spacing_mm", lm.spacing_mm}};
    if (lm.valid_count() != lm.size()) j["valid"] = std::vector<bool>(lm.valid.begin(), lm.valid.end());
    return j;
}

inline LandmarkSet landmarks_from_json(const json& j) {
    return detail::guarded("landmarks", [&] {
        std::vector<Point> pts;
        for (const auto& c : j.at("coords")) {
            if (c.size() != 2) throw ParseError("landmarks: each coordinate needs two numbers");
            pts.emplace_back(c.at(0).get<double>(), c.at(1).get<double>());
        }
        LandmarkSet lm(std::move(pts), j.value("spacing_mm", 100.0));
        if (j.contains("valid")) {
            lm.valid = j.at("valid").get<std::vector<bool>>();
            if (lm.valid.size() != lm.size()) throw ParseError("landmarks: validity mask length mismatch");
        }
        lm.validate();
        return lm;
    });
}

inline json to_json(const ShapeModel& m) {
    std::vector<double> comps;
    for (Eigen::Index r = 0; r < m.components.rows(); ++r)
        for (Eigen::Index c = 0; c < m.components.cols(); ++c) comps.push_back(m.components(r, c));
    auto vec = [](const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
    return {{"version", kFormatVersion},
            {"n_landmarks", m.n_landmarks},
            {"modes", m.modes()},
            {"mean", vec(m.mean.values)},
            {"components", comps},
            {"sigmas", vec(m.sigmas)},
            {"explained", vec(m.explained)},
            {"variance_fraction", m.variance_fraction},
            {"n_train", m.n_train}};
}

inline ShapeModel shape_model_from_json(const json& j) {
    return detail::guarded("shape model", [&] {
        if (j.at("version").get<int>() != kFormatVersion) throw ParseError("shape model: unsupported version");
        ShapeModel m;
        m.n_landmarks = j.at("n_landmarks").get<std::size_t>();
        const auto dim = static_cast<Eigen::Index>(2 * m.n_landmarks);
        const auto mean = j.at("mean").get<std::vector<double>>();
        const auto comps = j.at("components").get<std::vector<double>>();
        const auto sig = j.at("sigmas").get<std::vector<double>>();
        const auto k = static_cast<Eigen::Index>(sig.size());
        if (static_cast<Eigen::Index>(mean.size()) != dim || static_cast<Eigen::Index>(comps.size()) != dim * k)
            throw ParseError("shape model: array sizes disagree with n_landmarks and mode count");
        m.mean = ShapeVector(Eigen::Map<const Eigen::VectorXd>(mean.data(), dim));
        m.components.resize(dim, k);
        for (Eigen::Index r = 0; r < dim; ++r)
            for (Eigen::Index c = 0; c < k; ++c) m.components(r, c) = comps[static_cast<std::size_t>(r * k + c)];
        m.sigmas = Eigen::Map<const Eigen::VectorXd>(sig.data(), k);
        const auto ex = j.value("explained", std::vector<double>(sig.size(), 0.0));
        if (ex.size() != sig.size()) throw ParseError("shape model: explained has wrong length");
        m.explained = Eigen::Map<const Eigen::VectorXd>(ex.data(), k);
        m.variance_fraction = j.at("variance_fraction").get<double>();
        m.n_train = j.at("n_train").get<std::size_t>();
        return m;
    });
}

inline void save_shape_model(const fs::path& path, const ShapeModel& m) { write_file(path, to_json(m).dump(2) + "\n"); }
inline ShapeModel load_shape_model(const fs::path& path) {
    return shape_model_from_json(detail::parse_json(read_file(path), path.string()));
}

// ---------------------------------------------------------------------------
// Predictions and pseudo labels

inline json predictions_to_json(const std::vector<LandmarkSet>& preds) {
    json arr = json::array();
    for (const auto& p : preds) arr.push_back(to_json(p));
    return {{"version", kFormatVersion}, {"predictions", arr}};
}

inline std::vector<LandmarkSet> predictions_from_json(const json& j) {
    return detail::guarded("predictions", [&] {
        std::vector<LandmarkSet> out;
        for (const auto& p : j.at("predictions")) out.push_back(landmarks_from_json(p));
        return out;
    });
}

inline void save_predictions(const fs::path& path, const std::vector<LandmarkSet>& preds) {
    write_file(path, predictions_to_json(preds).dump(2) + "\n");
}
inline std::vector<LandmarkSet> load_predictions(const fs::path& path) {
    return predictions_from_json(detail::parse_json(read_file(path), path.string()));
}

inline json to_json(const PseudoLabel& p) {
    json coords = json::array();
    for (const auto& c : p.coords) coords.push_back({c.x(), c.y()});
    return {{"coords", coords},
            {"valid", std::vector<bool>(p.valid.begin(), p.valid.end())},
            {"branch", to_string(p.branch)},
            {"max_deviation_mm", p.max_deviation_mm},
            {"deviation_mm", p.deviation_mm}};
}

struct BranchCounts {
    std::size_t adjusted = 0;
    std::size_t raw = 0;
};

inline BranchCounts count_branches(const std::vector<PseudoLabel>& labels) {
    BranchCounts c;
    for (const auto& p : labels) (p.branch == PseudoBranch::Adjusted ? c.adjusted : c.raw) += 1;
    return c;
}

inline json pseudo_labels_to_json(const std::vector<PseudoLabel>& labels, double z_mm) {
    json arr = json::array();
    for (const auto& p : labels) arr.push_back(to_json(p));
    const BranchCounts c = count_branches(labels);
    return {{"version", kFormatVersion},
            {"z_mm", z_mm},
            {"summary", {{"adjusted", c.adjusted}, {"raw_with_exclusions", c.raw}}},
            {"labels", arr}};
}

// ---------------------------------------------------------------------------
// Dataset manifests

/// One dataset on disk: a manifest JSON next to a directory of image grids.
/// Unlabeled sets may still carry landmarks; training only uses them as the
/// withheld reference for pseudo-label diagnostics.
struct DatasetFile {
    json spec;  // free-form description of how the samples were made
    std::vector<Sample> samples;
};

inline json to_json(const GeneratorSpec& g) {
    json modes = json::array();
    for (const auto& m : g.deform_modes)
        modes.push_back({{"direction", std::vector<double>(m.direction.data(), m.direction.data() + m.direction.size())},
                         {"std", m.std}});
    return {{"n_landmarks", g.n_landmarks},
            {"base_shape", std::vector<double>(g.base_shape.values.data(),
                                               g.base_shape.values.data() + g.base_shape.values.size())},
            {"deform_modes", modes},
            {"pose",
             {{"min_scale", g.pose.min_scale},
              {"max_scale", g.pose.max_scale},
              {"max_rotation", g.pose.max_rotation},
              {"max_translation", g.pose.max_translation}}},
            {"render",
             {{"blob_sigma", g.render.blob_sigma},
              {"contrast", g.render.contrast},
              {"line_intensity", g.render.line_intensity},
              {"line_width", g.render.line_width},
              {"background", g.render.background}}},
            {"image_size", g.image_size},
            {"spacing_mm", g.spacing_mm},
            {"margin", g.margin},
            {"seed", g.seed}};
}

/// Writes `<dir>/<name>.json` and `<dir>/<name>/NNNNN.bin`; image paths in
/// the manifest are relative to the manifest's directory.
inline fs::path save_dataset(const fs::path& dir, const std::string& name, const DatasetFile& data) {
    json samples = json::array();
    for (std::size_t i = 0; i < data.samples.size(); ++i) {
        std::ostringstream fname;
        fname << name << "/" << std::setw(5) << std::setfill('0') << i << ".bin";
        write_grid(dir / fname.str(), data.samples[i].image);
        samples.push_back({{"image_path", fname.str()},
                           {"landmarks", to_json(data.samples[i].landmarks)["coords"]},
                           {"spacing_mm", data.samples[i].landmarks.spacing_mm}});
    }
    const fs::path manifest = dir / (name + ".json");
    write_file(manifest, json{{"version", kFormatVersion}, {"spec", data.spec}, {"samples", samples}}.dump(2) + "\n");
    return manifest;
}

inline DatasetFile load_dataset(const fs::path& manifest) {
    const json j = detail::parse_json(read_file(manifest), manifest.string());
    return detail::guarded("dataset manifest", [&] {
        DatasetFile d;
        d.spec = j.value("spec", json::object());
        const fs::path base = manifest.parent_path();
        for (const auto& s : j.at("samples")) {
            Sample sample;
            sample.image = read_grid(base / s.at("image_path").get<std::string>());
            sample.landmarks = landmarks_from_json({{"coords", s.at("landmarks")}, {"spacing_mm", s.at("spacing_mm")}});
            d.samples.push_back(std::move(sample));
        }
        if (d.samples.empty()) throw ParseError("dataset manifest lists no samples");
        return d;
    });
}

inline std::vector<UnlabeledSample> as_unlabeled(std::vector<Sample> samples) {
    std::vector<UnlabeledSample> out;
    for (auto& s : samples) {
        UnlabeledSample u;
        u.spacing_mm = s.landmarks.spacing_mm;
        u.image = std::move(s.image);
        u.reference = std::move(s.landmarks);
        out.push_back(std::move(u));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Training configuration

inline json to_json(const TrainConfig& c) {
    json j{{"epochs_per_stage", c.epochs_per_stage},
           {"z_mm", c.z_mm},
           {"variance_target", c.variance_target},
           {"offsets", {{"mean", c.offsets.mean}, {"std", c.offsets.std}}},
           {"adam", {{"lr", c.adam.lr}, {"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"eps", c.adam.eps}}},
           {"seed", c.seed},
           {"ablation", to_string(c.ablation)},
           {"augmentation",
            {{"max_translate", c.augmentation.max_translate},
             {"max_rotate_rad", c.augmentation.max_rotate_rad},
             {"noise_std", c.augmentation.noise_std}}},
           {"labeled_batch", c.labeled_batch},
           {"unlabeled_batch", c.unlabeled_batch},
           {"finetune_loss", c.finetune_loss == FinetuneLoss::L1 ? "l1" : "region_attention"},
           {"trajectory_interval", c.trajectory_interval},
           {"eval_every", c.eval_every},
           {"outlier_radii", c.outlier_radii},
           {"backbone",
            {{"n_landmarks", c.backbone.n_landmarks},
             {"image_size", c.backbone.image_size},
             {"pool_size", c.backbone.pool_size},
             {"hidden", c.backbone.hidden},
             {"heatmap_size", c.backbone.heatmap_size}}}};
    j["pretrain_epochs"] = c.pretrain_epochs ? json(*c.pretrain_epochs) : json(nullptr);
    j["finetune_epochs"] = c.finetune_epochs ? json(*c.finetune_epochs) : json(nullptr);
    return j;
}

namespace detail {

template <typename T>
void read_opt(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

/// Fields missing from `j` keep the values already in `base`; unknown keys
/// are rejected so that typos do not silently fall back to defaults.
inline TrainConfig train_config_from_json(const json& j, TrainConfig base = {}) {
    return detail::guarded("train config", [&] {
        static const std::vector<std::string> known{
            "epochs_per_stage", "pretrain_epochs", "finetune_epochs", "z_mm", "variance_target", "offsets", "adam", "seed", "ablation",
            "augmentation", "labeled_batch", "unlabeled_batch", "finetune_loss", "trajectory_interval",
            "eval_every", "outlier_radii", "backbone"};
        if (!j.is_object()) throw ParseError("train config must be a JSON object");
        for (const auto& [key, _] : j.items())
            if (std::find(known.begin(), known.end(), key) == known.end())
                throw ParseError("train config: unknown key '" + key + "'");
        TrainConfig c = base;
        using detail::read_opt;
        read_opt(j, "epochs_per_stage", c.epochs_per_stage);
        for (auto [key, field] : {std::pair{"pretrain_epochs", &c.pretrain_epochs},
                                  std::pair{"finetune_epochs", &c.finetune_epochs}}) {
            if (!j.contains(key)) continue;
            const auto& f = j.at(key);
            *field = f.is_null() ? std::nullopt : std::optional<int>(f.get<int>());
        }
        read_opt(j, "z_mm", c.z_mm);
        read_opt(j, "variance_target", c.variance_target);
        if (j.contains("offsets")) {
            read_opt(j.at("offsets"), "mean", c.offsets.mean);
            read_opt(j.at("offsets"), "std", c.offsets.std);
        }
        if (j.contains("adam")) {
            const auto& a = j.at("adam");
            read_opt(a, "lr", c.adam.lr);
            read_opt(a, "beta1", c.adam.beta1);
            read_opt(a, "beta2", c.adam.beta2);
            read_opt(a, "eps", c.adam.eps);
        }
        read_opt(j, "seed", c.seed);
        if (j.contains("ablation")) c.ablation = parse_ablation(j.at("ablation").get<std::string>());
        if (j.contains("augmentation")) {
            const auto& a = j.at("augmentation");
            read_opt(a, "max_translate", c.augmentation.max_translate);
            read_opt(a, "max_rotate_rad", c.augmentation.max_rotate_rad);
            read_opt(a, "noise_std", c.augmentation.noise_std);
        }
        read_opt(j, "labeled_batch", c.labeled_batch);
        read_opt(j, "unlabeled_batch", c.unlabeled_batch);
        if (j.contains("finetune_loss")) {
            const auto s = j.at("finetune_loss").get<std::string>();
            if (s == "l1") c.finetune_loss = FinetuneLoss::L1;
            else if (s == "region_attention") c.finetune_loss = FinetuneLoss::RegionAttention;
            else throw ParseError("train config: finetune_loss must be 'l1' or 'region_attention'");
        }
        read_opt(j, "trajectory_interval", c.trajectory_interval);
        read_opt(j, "eval_every", c.eval_every);
        read_opt(j, "outlier_radii", c.outlier_radii);
        if (j.contains("backbone")) {
            const auto& b = j.at("backbone");
            read_opt(b, "n_landmarks", c.backbone.n_landmarks);
            read_opt(b, "image_size", c.backbone.image_size);
            read_opt(b, "pool_size", c.backbone.pool_size);
            read_opt(b, "hidden", c.backbone.hidden);
            read_opt(b, "heatmap_size", c.backbone.heatmap_size);
        }
        return c;
    });
}

inline TrainConfig load_train_config(const fs::path& path, TrainConfig base = {}) {
    return train_config_from_json(detail::parse_json(read_file(path), path.string()), base);
}

// ---------------------------------------------------------------------------
// Run log

inline json to_json(const EpochRecord& r) {
    json j{{"stage", r.stage}, {"epoch", r.epoch}, {"loss", r.loss}, {"skipped_samples", r.skipped_samples}};
    j["mre_mm"] = r.mre_mm ? json(*r.mre_mm) : json(nullptr);
    if (r.pseudo_label_error_mm) j["pseudo_label_error_mm"] = *r.pseudo_label_error_mm;
    return j;
}

/// Appends one JSON object per line.
class RunLog {
public:
    explicit RunLog(const fs::path& path, bool append) {
        if (path.has_parent_path()) fs::create_directories(path.parent_path());
        out_.open(path, append ? std::ios::app : std::ios::trunc);
        if (!out_) throw ValidationError("cannot open run log " + path.string());
    }
    void write(const EpochRecord& r) {
        out_ << to_json(r).dump() << '\n';
        out_.flush();
    }

private:
    std::ofstream out_;
};

// ---------------------------------------------------------------------------
// Checkpoints
//
// Layout: 8-byte magic "SHRGCKPT", uint64 header length, the JSON header, then
// little-endian float64 sections in this order:
//   params  (layer1_weights row-major, layer1_bias, layer2_weights row-major, layer2_bias)
//   adam_m  (same order)
//   adam_v  (same order)
//   best    (same order; present only when has_best is true)

inline constexpr char kCheckpointMagic[8] = {'S', 'H', 'R', 'G', 'C', 'K', 'P', 'T'};

/// `extra` carries caller-defined header fields (the CLI stores its log position there).
inline std::string encode_checkpoint(const TrainConfig& cfg, const TrainState& st, const json& extra = json::object()) {
    json traj = json::array();
    for (const auto& tp : st.trajectory) {
        traj.push_back({{"epoch", tp.epoch},
                        {"mean_error_mm", tp.mean_error_mm ? json(*tp.mean_error_mm) : json(nullptr)},
                        {"adjusted", tp.adjusted},
                        {"raw", tp.raw}});
    }
    const json header{{"version", kFormatVersion},
                      {"config", to_json(cfg)},
                      {"seed", st.seed},
                      {"step", st.adam.step_count},
                      {"stage", to_string(st.stage)},
                      {"epochs_done", st.epochs_done},
                      {"best_mre", std::isfinite(st.best_mre) ? json(st.best_mre) : json(nullptr)},
                      {"has_best", st.best_params.has_value()},
                      {"parameter_count", st.params.flat().size()},
                      {"trajectory", traj},
                      {"extra", extra}};
    const std::string h = header.dump();
    std::string out(kCheckpointMagic, 8);
    detail::put_le(out, static_cast<std::uint64_t>(h.size()));
    out += h;
    auto put_vec = [&out](const Eigen::VectorXd& v) {
        for (Eigen::Index i = 0; i < v.size(); ++i) detail::put_le(out, v[i]);
    };
    put_vec(st.params.flat());
    put_vec(st.adam.first_moment);
    put_vec(st.adam.second_moment);
    if (st.best_params) put_vec(st.best_params->flat());
    return out;
}

struct Checkpoint {
    TrainConfig config;
    TrainState state;
    json extra = json::object();
};

inline Checkpoint decode_checkpoint(const std::string& bytes) {
    if (bytes.size() < 16 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0)
        throw ParseError("not a checkpoint file");
    std::size_t pos = 8;
    const auto hlen = detail::get_le<std::uint64_t>(bytes, pos);
    if (pos + hlen > bytes.size()) throw ParseError("checkpoint header truncated");
    const json h = detail::parse_json(bytes.substr(pos, hlen), "checkpoint header");
    pos += hlen;
    return detail::guarded("checkpoint header", [&] {
        if (h.at("version").get<int>() != kFormatVersion) throw ParseError("checkpoint: unsupported version");
        Checkpoint ck;
        ck.config = train_config_from_json(h.at("config"));
        TrainState& st = ck.state;
        st.params = BackboneParams(ck.config.backbone);
        const Eigen::Index n = st.params.flat().size();
        if (h.at("parameter_count").get<Eigen::Index>() != n) throw ParseError("checkpoint: parameter count mismatch");
        const bool has_best = h.at("has_best").get<bool>();
        if (bytes.size() - pos != static_cast<std::size_t>(n) * 8 * (has_best ? 4 : 3))
            throw ParseError("checkpoint: blob size does not match header");
        auto get_vec = [&](Eigen::VectorXd& v) {
            for (Eigen::Index i = 0; i < n; ++i) v[i] = detail::get_le<double>(bytes, pos);
        };
        get_vec(st.params.flat());
        st.adam = AdamState::zeros(n, ck.config.adam);
        get_vec(st.adam.first_moment);
        get_vec(st.adam.second_moment);
        st.adam.step_count = h.at("step").get<std::uint64_t>();
        if (has_best) {
            st.best_params = BackboneParams(ck.config.backbone);
            get_vec(st.best_params->flat());
        }
        st.seed = h.at("seed").get<std::uint64_t>();
        st.stage = parse_stage(h.at("stage").get<std::string>());
        st.epochs_done = h.at("epochs_done").get<int>();
        st.best_mre = h.at("best_mre").is_null() ? std::numeric_limits<double>::infinity()
                                                 : h.at("best_mre").get<double>();
        for (const auto& t : h.at("trajectory")) {
            TrajectoryPoint tp;
            tp.epoch = t.at("epoch").get<int>();
            if (!t.at("mean_error_mm").is_null()) tp.mean_error_mm = t.at("mean_error_mm").get<double>();
            tp.adjusted = t.at("adjusted").get<std::size_t>();
            tp.raw = t.at("raw").get<std::size_t>();
            st.trajectory.push_back(std::move(tp));
        }
        ck.extra = h.value("extra", json::object());
        return ck;
    });
}

inline void save_checkpoint(const fs::path& path, const TrainConfig& cfg, const TrainState& st,
                            const json& extra = json::object()) {
    // Write then rename, so an interrupted save never leaves a torn checkpoint.
    const fs::path tmp = path.string() + ".tmp";
    write_file(tmp, encode_checkpoint(cfg, st, extra));
    fs::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const fs::path& path) { return decode_checkpoint(read_file(path)); }

// ---------------------------------------------------------------------------
// Metrics

inline json to_json(const Metrics& m) {
    json out = json::array();
    for (const auto& [r, oc] : m.outliers) out.push_back({{"radius_mm", r}, {"count", oc.count}, {"percent", oc.percent}});
    return {{"mre_mm", m.mre_mm}, {"sd_mm", m.sd_mm}, {"total", m.total}, {"outliers", out}};
}

/// Plain-text table: MRE(SD) followed by the outlier percentage per radius.
inline std::string metrics_table(const std::vector<std::pair<std::string, Metrics>>& rows) {
    std::ostringstream os;
    os << std::left << std::setw(18) << "method" << std::setw(18) << "MRE(SD) mm";
    if (!rows.empty())
        for (const auto& [r, _] : rows.front().second.outliers) {
            std::ostringstream h;
            h << r << "mm";
            os << std::setw(10) << h.str();
        }
    os << "\n";
    for (const auto& [name, m] : rows) {
        std::ostringstream mre;
        mre << std::fixed << std::setprecision(3) << m.mre_mm << "(" << m.sd_mm << ")";
        os << std::left << std::setw(18) << name << std::setw(18) << mre.str();
        for (const auto& [_, oc] : m.outliers) {
            std::ostringstream p;
            p << std::fixed << std::setprecision(2) << oc.percent << "%";
            os << std::setw(10) << p.str();
        }
        os << "\n";
    }
    return os.str();
}

// ---------------------------------------------------------------------------
// Run manifest

/// Everything needed to re-run a command: the command name, its inputs, the
/// resolved configuration and the seed. No timestamps or host details.
struct RunManifest {
    std::string command;
    json config = json::object();
    json inputs = json::object();
    std::string output;
    std::uint64_t seed = 0;

    json to_json() const {
        return {{"tool_version", kToolVersion}, {"command", command}, {"seed", seed},
                {"config", config},             {"inputs", inputs},   {"output", output}};
    }
};

inline void save_manifest(const fs::path& path, const RunManifest& m) { write_file(path, m.to_json().dump(2) + "\n"); }

}  // namespace shapereg::io

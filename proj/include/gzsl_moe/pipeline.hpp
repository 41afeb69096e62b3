#pragma once

// End-to-end orchestration: run configuration, per-stage seeding,
// checkpoints, loss histories and evaluation.

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "checkpoint.hpp"
#include "classifier.hpp"
#include "generator.hpp"
#include "metrics.hpp"

namespace gzsl {

namespace fs = std::filesystem;
using json = nlohmann::json;

struct DataConfig {
    SceneSpec scene;
    double scale = 1.0;  // multiplies every per-class count
    std::size_t train_frames = 4;
    std::size_t eval_frames = 2;
    std::vector<std::string> train_paths;  // when nonempty, frames are loaded instead of generated
    std::vector<std::string> eval_paths;
};

struct PrototypeSource {
    std::string file;          // nonempty: load from this path
    std::size_t dim = 64;      // otherwise synthesize with (dim, seed)
    std::uint64_t seed = 42;
};

struct RunConfig {
    std::uint64_t seed = 42;
    SplitConfig split = covered::default_split();
    DataConfig data;
    BackboneConfig backbone;
    GeneratorConfig generator;
    ClassifierConfig classifier;
    AdamConfig optimizer;
    PrototypeSource prototypes;

    void validate() const {
        split.validate();
        require(!split.seen.empty(), "config: the seen set is empty", ErrorKind::config);
        data.scene.validate();
        require(data.scale > 0.0, "config: data.scale must be positive", ErrorKind::config);
        backbone.validate();
        generator.validate();
        classifier.validate();
        optimizer.validate();
        if (prototypes.file.empty())
            require(prototypes.dim >= 2, "config: prototype dim must be at least 2", ErrorKind::config);
    }
};

// ---------------------------------------------------------------------------
// JSON

namespace detail {

template <class T>
void read_opt(const json& j, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw Error(ErrorKind::config, std::string("config: field '") + key + "': " + e.what());
    }
}

inline void check_keys(const json& j, const char* where, std::initializer_list<const char*> allowed) {
    require(j.is_object(), std::string("config: '") + where + "' must be an object", ErrorKind::config);
    for (const auto& [k, v] : j.items()) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || k == a;
        require(ok, std::string("config: unknown field '") + k + "' in '" + where + "'", ErrorKind::config);
    }
}

}  // namespace detail

inline json to_json(const RunConfig& c) {
    json counts = json::object();
    for (const auto& [cls, n] : c.data.scene.counts) counts[std::to_string(cls)] = n;
    json proto = c.prototypes.file.empty()
                     ? json{{"synthesize", {{"dim", c.prototypes.dim}, {"seed", c.prototypes.seed}}}}
                     : json{{"file", c.prototypes.file}};
    return json{
        {"seed", c.seed},
        {"split", {{"seen", c.split.seen}, {"unseen", c.split.unseen}}},
        {"data",
         {{"scene", {{"counts", counts}, {"room", c.data.scene.room}, {"noise_sigma", c.data.scene.noise_sigma}}},
          {"scale", c.data.scale},
          {"train_frames", c.data.train_frames},
          {"eval_frames", c.data.eval_frames},
          {"train_paths", c.data.train_paths},
          {"eval_paths", c.data.eval_paths}}},
        {"backbone",
         {{"feature_dim", c.backbone.feature_dim},
          {"neighbours", c.backbone.neighbours},
          {"hidden", c.backbone.hidden},
          {"epochs", c.backbone.epochs},
          {"batch_size", c.backbone.batch_size},
          {"num_experts", c.backbone.num_experts},
          {"top_k", c.backbone.top_k},
          {"expert_hidden_mult", c.backbone.expert_hidden_mult},
          {"class_weights", c.backbone.class_weights},
          {"importance_coef", c.backbone.importance_coef}}},
        {"generator",
         {{"noise_dim", c.generator.noise_dim},
          {"hidden", c.generator.hidden},
          {"depth", c.generator.depth},
          {"num_experts", c.generator.num_experts},
          {"top_k", c.generator.top_k},
          {"expert_hidden_mult", c.generator.expert_hidden_mult},
          {"epochs", c.generator.epochs},
          {"steps_per_epoch", c.generator.steps_per_epoch},
          {"batch_per_class", c.generator.batch_per_class},
          {"bandwidths", c.generator.bandwidths},
          {"importance_coef", c.generator.importance_coef}}},
        {"classifier",
         {{"mode", c.classifier.mode == ZslMode::gzsl ? "gzsl" : "zsl"},
          {"hidden", c.classifier.hidden},
          {"num_experts", c.classifier.num_experts},
          {"top_k", c.classifier.top_k},
          {"expert_hidden_mult", c.classifier.expert_hidden_mult},
          {"epochs", c.classifier.epochs},
          {"batch_size", c.classifier.batch_size},
          {"n_per_class", c.classifier.n_per_class},
          {"class_weights", c.classifier.class_weights},
          {"importance_coef", c.classifier.importance_coef}}},
        {"optimizer",
         {{"lr", c.optimizer.learning_rate},
          {"betas", {c.optimizer.beta1, c.optimizer.beta2}},
          {"weight_decay", c.optimizer.weight_decay},
          {"epsilon", c.optimizer.epsilon}}},
        {"prototypes", proto},
    };
}

/// Missing fields keep their defaults; unknown fields are rejected.
inline RunConfig run_config_from_json(const json& j) {
    using detail::check_keys;
    using detail::read_opt;
    RunConfig c;
    check_keys(j, "root", {"seed", "split", "data", "backbone", "generator", "classifier", "optimizer", "prototypes"});
    read_opt(j, "seed", c.seed);
    if (j.contains("split")) {
        const auto& s = j.at("split");
        check_keys(s, "split", {"seen", "unseen"});
        read_opt(s, "seen", c.split.seen);
        read_opt(s, "unseen", c.split.unseen);
    }
    if (j.contains("data")) {
        const auto& d = j.at("data");
        check_keys(d, "data", {"scene", "scale", "train_frames", "eval_frames", "train_paths", "eval_paths"});
        if (d.contains("scene")) {
            const auto& s = d.at("scene");
            check_keys(s, "data.scene", {"counts", "room", "noise_sigma"});
            if (s.contains("counts")) {
                std::map<std::string, std::size_t> counts;
                read_opt(s, "counts", counts);
                c.data.scene.counts.clear();
                for (const auto& [k, n] : counts) {
                    int id = 0;
                    auto [p, ec] = std::from_chars(k.data(), k.data() + k.size(), id);
                    require(ec == std::errc{} && p == k.data() + k.size(), "config: bad class id '" + k + "' in counts",
                            ErrorKind::config);
                    c.data.scene.counts[id] = n;
                }
            }
            read_opt(s, "room", c.data.scene.room);
            read_opt(s, "noise_sigma", c.data.scene.noise_sigma);
        }
        read_opt(d, "scale", c.data.scale);
        read_opt(d, "train_frames", c.data.train_frames);
        read_opt(d, "eval_frames", c.data.eval_frames);
        read_opt(d, "train_paths", c.data.train_paths);
        read_opt(d, "eval_paths", c.data.eval_paths);
    }
    if (j.contains("backbone")) {
        const auto& b = j.at("backbone");
        check_keys(b, "backbone", {"feature_dim", "neighbours", "hidden", "epochs", "batch_size", "num_experts", "top_k",
                                   "expert_hidden_mult", "class_weights", "importance_coef"});
        read_opt(b, "feature_dim", c.backbone.feature_dim);
        read_opt(b, "neighbours", c.backbone.neighbours);
        read_opt(b, "hidden", c.backbone.hidden);
        read_opt(b, "epochs", c.backbone.epochs);
        read_opt(b, "batch_size", c.backbone.batch_size);
        read_opt(b, "num_experts", c.backbone.num_experts);
        read_opt(b, "top_k", c.backbone.top_k);
        read_opt(b, "expert_hidden_mult", c.backbone.expert_hidden_mult);
        read_opt(b, "class_weights", c.backbone.class_weights);
        read_opt(b, "importance_coef", c.backbone.importance_coef);
    }
    if (j.contains("generator")) {
        const auto& g = j.at("generator");
        check_keys(g, "generator", {"noise_dim", "hidden", "depth", "num_experts", "top_k", "expert_hidden_mult",
                                    "epochs", "steps_per_epoch", "batch_per_class", "bandwidths", "importance_coef"});
        read_opt(g, "noise_dim", c.generator.noise_dim);
        read_opt(g, "hidden", c.generator.hidden);
        read_opt(g, "depth", c.generator.depth);
        read_opt(g, "num_experts", c.generator.num_experts);
        read_opt(g, "top_k", c.generator.top_k);
        read_opt(g, "expert_hidden_mult", c.generator.expert_hidden_mult);
        read_opt(g, "epochs", c.generator.epochs);
        read_opt(g, "steps_per_epoch", c.generator.steps_per_epoch);
        read_opt(g, "batch_per_class", c.generator.batch_per_class);
        read_opt(g, "bandwidths", c.generator.bandwidths);
        read_opt(g, "importance_coef", c.generator.importance_coef);
    }
    if (j.contains("classifier")) {
        const auto& k = j.at("classifier");
        check_keys(k, "classifier", {"mode", "hidden", "num_experts", "top_k", "expert_hidden_mult", "epochs",
                                     "batch_size", "n_per_class", "class_weights", "importance_coef"});
        std::string mode = "gzsl";
        read_opt(k, "mode", mode);
        require(mode == "gzsl" || mode == "zsl", "config: classifier.mode must be 'gzsl' or 'zsl'", ErrorKind::config);
        c.classifier.mode = mode == "gzsl" ? ZslMode::gzsl : ZslMode::zsl;
        read_opt(k, "hidden", c.classifier.hidden);
        read_opt(k, "num_experts", c.classifier.num_experts);
        read_opt(k, "top_k", c.classifier.top_k);
        read_opt(k, "expert_hidden_mult", c.classifier.expert_hidden_mult);
        read_opt(k, "epochs", c.classifier.epochs);
        read_opt(k, "batch_size", c.classifier.batch_size);
        read_opt(k, "n_per_class", c.classifier.n_per_class);
        read_opt(k, "class_weights", c.classifier.class_weights);
        read_opt(k, "importance_coef", c.classifier.importance_coef);
    }
    if (j.contains("optimizer")) {
        const auto& o = j.at("optimizer");
        check_keys(o, "optimizer", {"lr", "betas", "weight_decay", "epsilon"});
        read_opt(o, "lr", c.optimizer.learning_rate);
        if (o.contains("betas")) {
            std::vector<double> b;
            read_opt(o, "betas", b);
            require(b.size() == 2, "config: optimizer.betas must have two entries", ErrorKind::config);
            c.optimizer.beta1 = b[0];
            c.optimizer.beta2 = b[1];
        }
        read_opt(o, "weight_decay", c.optimizer.weight_decay);
        read_opt(o, "epsilon", c.optimizer.epsilon);
    }
    if (j.contains("prototypes")) {
        const auto& p = j.at("prototypes");
        check_keys(p, "prototypes", {"file", "synthesize"});
        require(p.size() == 1, "config: prototypes needs exactly one source ('file' or 'synthesize')",
                ErrorKind::config);
        if (p.contains("file")) {
            read_opt(p, "file", c.prototypes.file);
            require(!c.prototypes.file.empty(), "config: prototypes.file is empty", ErrorKind::config);
        } else {
            const auto& s = p.at("synthesize");
            check_keys(s, "prototypes.synthesize", {"dim", "seed"});
            read_opt(s, "dim", c.prototypes.dim);
            read_opt(s, "seed", c.prototypes.seed);
        }
    }
    c.validate();
    return c;
}

inline RunConfig load_run_config(const fs::path& path) {
    std::ifstream in(path);
    require(static_cast<bool>(in), "cannot open config " + path.string(), ErrorKind::io);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw Error(ErrorKind::config, "config " + path.string() + ": " + e.what());
    }
    return run_config_from_json(j);
}

// ---------------------------------------------------------------------------
// Inputs

/// Stage-scoped seed: the master seed mixed with the stage name.
inline std::uint64_t stage_seed(const RunConfig& c, std::string_view stage) { return derive_seed(c.seed, stage); }

inline std::vector<PointFrame> synthetic_frames(const RunConfig& c, std::string_view role, std::size_t n) {
    std::vector<PointFrame> frames;
    for (std::size_t i = 0; i < n; ++i) {
        SceneSpec s = c.data.scene.scaled(c.data.scale);
        s.seed = derive_seed(c.seed, std::string(role) + "-frame-" + std::to_string(i));
        PointFrame f = generate_scene(s);
        f.frame_id = std::string(role) + "-" + std::to_string(i);
        frames.push_back(std::move(f));
    }
    return frames;
}

inline std::vector<PointFrame> load_frame_list(const std::vector<std::string>& paths) {
    std::vector<PointFrame> frames;
    for (const auto& p : paths)
        for (auto& f : load_frames(p)) frames.push_back(std::move(f));
    return frames;
}

inline std::vector<PointFrame> training_frames(const RunConfig& c) {
    if (!c.data.train_paths.empty()) return load_frame_list(c.data.train_paths);
    return synthetic_frames(c, "train", c.data.train_frames);
}

inline std::vector<PointFrame> evaluation_frames(const RunConfig& c) {
    if (!c.data.eval_paths.empty()) return load_frame_list(c.data.eval_paths);
    return synthetic_frames(c, "eval", c.data.eval_frames);
}

inline ClassPrototypeTable run_prototypes(const RunConfig& c) {
    if (!c.prototypes.file.empty()) return load_prototypes(c.prototypes.file, c.split);
    return synthesize_prototypes(covered::class_names(), c.prototypes.dim, c.prototypes.seed, c.split);
}

// ---------------------------------------------------------------------------
// Stage checkpoints

inline constexpr const char* kBackboneFile = "backbone.gzmo";
inline constexpr const char* kGeneratorFile = "generator.gzmo";
inline constexpr const char* kClassifierFile = "classifier.gzmo";

inline Checkpoint backbone_checkpoint(const RunConfig& c, const BackboneParams& p) {
    Checkpoint ck;
    ck.config_json = to_json(c).dump();
    ck.add("backbone.neighbours", Matrix(1, 1, static_cast<double>(p.neighbours)));
    ck.add("backbone.input_mean", p.input_mean);
    ck.add("backbone.input_scale", p.input_scale);
    add_param_blocks(ck, p.mlp, "backbone.mlp.");
    return ck;
}

inline RunConfig checkpoint_config(const Checkpoint& ck) {
    try {
        return run_config_from_json(json::parse(ck.config_json));
    } catch (const json::exception& e) {
        throw Error(ErrorKind::format, std::string("checkpoint: bad config snapshot: ") + e.what());
    }
}

inline BackboneParams backbone_from_checkpoint(const Checkpoint& ck) {
    const RunConfig c = checkpoint_config(ck);
    BackboneParams p = init_backbone(c.backbone, 0);
    p.neighbours = static_cast<std::size_t>(ck.block("backbone.neighbours")(0, 0));
    p.input_mean = ck.block("backbone.input_mean");
    p.input_scale = ck.block("backbone.input_scale");
    read_param_blocks(ck, p.mlp, "backbone.mlp.");
    return p;
}

inline Checkpoint generator_checkpoint(const RunConfig& c, const GeneratorParams& g) {
    Checkpoint ck;
    ck.config_json = to_json(c).dump();
    ck.add("generator.dims", Matrix(1, 2, {static_cast<double>(g.noise_dim), static_cast<double>(g.prototype_dim)}));
    add_param_blocks(ck, g.net, "generator.net.");
    return ck;
}

inline GeneratorParams generator_from_checkpoint(const Checkpoint& ck) {
    const RunConfig c = checkpoint_config(ck);
    const Matrix& dims = ck.block("generator.dims");
    GeneratorParams g =
        init_generator(c.generator, static_cast<std::size_t>(dims(0, 1)), c.backbone.feature_dim, 0);
    read_param_blocks(ck, g.net, "generator.net.");
    return g;
}

inline Checkpoint classifier_checkpoint(const RunConfig& c, const ClassifierParams& p) {
    Checkpoint ck;
    ck.config_json = to_json(c).dump();
    Matrix classes(1, p.classes.size());
    for (std::size_t i = 0; i < p.classes.size(); ++i) classes(0, i) = p.classes[i];
    ck.add("classifier.classes", classes);
    add_param_blocks(ck, p.net, "classifier.net.");
    return ck;
}

inline ClassifierParams classifier_from_checkpoint(const Checkpoint& ck) {
    const RunConfig c = checkpoint_config(ck);
    const Matrix& cls = ck.block("classifier.classes");
    std::vector<ClassId> classes;
    for (double v : cls.values()) classes.push_back(static_cast<ClassId>(v));
    ClassifierParams p = init_classifier(c.classifier, c.backbone.feature_dim, classes, 0);
    read_param_blocks(ck, p.net, "classifier.net.");
    return p;
}

inline void write_history_csv(const std::vector<double>& history, const fs::path& path) {
    std::ofstream out(path);
    require(static_cast<bool>(out), "cannot write history " + path.string(), ErrorKind::io);
    out << "epoch,loss\n";
    for (std::size_t e = 0; e < history.size(); ++e) out << e << ',' << detail::format_double(history[e]) << '\n';
    require(static_cast<bool>(out), "failed writing history " + path.string(), ErrorKind::io);
}

inline Checkpoint require_checkpoint(const fs::path& dir, const char* file, const char* what) {
    const fs::path p = dir / file;
    require(fs::exists(p), std::string("missing ") + what + " checkpoint", ErrorKind::missing_checkpoint);
    return load_checkpoint(p);
}

inline BackboneParams load_backbone(const fs::path& dir) {
    return backbone_from_checkpoint(require_checkpoint(dir, kBackboneFile, "backbone"));
}
inline GeneratorParams load_generator(const fs::path& dir) {
    return generator_from_checkpoint(require_checkpoint(dir, kGeneratorFile, "generator"));
}
inline ClassifierParams load_classifier(const fs::path& dir) {
    return classifier_from_checkpoint(require_checkpoint(dir, kClassifierFile, "classifier"));
}

// ---------------------------------------------------------------------------
// Stages

struct StageResult {
    fs::path checkpoint;
    std::vector<double> history;
};

/// Real features of seen-class points, computed on seen-only frames.
inline FeatureBatch real_seen_features(const BackboneParams& backbone, std::span<const PointFrame> frames,
                                       const SplitConfig& split) {
    const auto part = split_frames(frames, split, SplitMode::backbone_training);
    FeatureBatch out(backbone.feature_dim());
    for (const auto& f : part.frames)
        if (f.size() > 0) out.append(extract_features(backbone, f));
    return out;
}

inline StageResult run_stage1(const RunConfig& c, const fs::path& dir, std::span<const PointFrame> frames) {
    fs::create_directories(dir);
    auto r = train_backbone(frames, c.split, c.backbone, c.optimizer, stage_seed(c, "backbone"));
    StageResult out{dir / kBackboneFile, std::move(r.loss_history)};
    save_checkpoint(backbone_checkpoint(c, r.params), out.checkpoint);
    write_history_csv(out.history, dir / "backbone_history.csv");
    return out;
}

inline StageResult run_stage1(const RunConfig& c, const fs::path& dir) { return run_stage1(c, dir, training_frames(c)); }

inline StageResult run_stage2(const RunConfig& c, const fs::path& dir, std::span<const PointFrame> frames) {
    const BackboneParams backbone = load_backbone(dir);
    const ClassPrototypeTable protos = run_prototypes(c);
    const FeatureBatch real = real_seen_features(backbone, frames, c.split);
    GeneratorParams g = init_generator(c.generator, protos.dim, backbone.feature_dim(), stage_seed(c, "generator-init"));
    auto r = train_generator(std::move(g), real, protos, c.generator, c.optimizer, stage_seed(c, "generator"));
    StageResult out{dir / kGeneratorFile, std::move(r.loss_history)};
    save_checkpoint(generator_checkpoint(c, r.params), out.checkpoint);
    write_history_csv(out.history, dir / "generator_history.csv");
    return out;
}

inline StageResult run_stage2(const RunConfig& c, const fs::path& dir) { return run_stage2(c, dir, training_frames(c)); }

inline std::size_t default_fakes_per_class(const FeatureBatch& real_seen) {
    const auto by_class = real_seen.rows_by_class();
    if (by_class.empty()) return 0;
    return real_seen.size() / by_class.size();
}

inline StageResult run_stage3(const RunConfig& c, const fs::path& dir, std::span<const PointFrame> frames) {
    const bool gzsl = c.classifier.mode == ZslMode::gzsl;
    const GeneratorParams gen = load_generator(dir);
    const ClassPrototypeTable protos = run_prototypes(c);
    FeatureBatch real(gen.feature_dim());
    if (gzsl) real = real_seen_features(load_backbone(dir), frames, c.split);
    std::size_t n = c.classifier.n_per_class;
    if (n == 0) {
        require(gzsl, "config: classifier.n_per_class must be set in ZSL mode", ErrorKind::config);
        n = default_fakes_per_class(real);
    }
    const FeatureBatch fake = synthesize_unseen(gen, protos, n, stage_seed(c, "synthesize-unseen"));
    ClassifierParams p = init_classifier(c.classifier, gen.feature_dim(), label_space(c.split, c.classifier.mode),
                                         stage_seed(c, "classifier-init"));
    auto r = train_classifier(std::move(p), real, fake, c.classifier, c.optimizer, stage_seed(c, "classifier"));
    StageResult out{dir / kClassifierFile, std::move(r.loss_history)};
    save_checkpoint(classifier_checkpoint(c, r.params), out.checkpoint);
    write_history_csv(out.history, dir / "classifier_history.csv");
    return out;
}

inline StageResult run_stage3(const RunConfig& c, const fs::path& dir) { return run_stage3(c, dir, training_frames(c)); }

// ---------------------------------------------------------------------------
// Evaluation

struct EvalResult {
    ConfusionMatrix confusion;
    MetricsReport report;
};

/// Confusion matrix over the classifier's label space for a set of frames.
inline ConfusionMatrix evaluate_frames(const BackboneParams& backbone, const ClassifierParams& classifier,
                                       std::span<const PointFrame> frames, const SplitConfig& split) {
    split.validate();
    ConfusionMatrix cm(classifier.classes);
    for (const auto& f : frames) {
        // Predictions use the full labeled frame; label-0 points are dropped first.
        PointFrame labeled;
        labeled.frame_id = f.frame_id;
        for (std::size_t i = 0; i < f.size(); ++i)
            if (f.labels[i] != covered::kUnlabeled) labeled.push(f.points[i], f.labels[i]);
        if (labeled.size() == 0) continue;
        const auto pred = infer_frame(backbone, classifier, labeled);
        for (std::size_t i = 0; i < labeled.size(); ++i) {
            const ClassId t = labeled.labels[i];
            if (!std::binary_search(classifier.classes.begin(), classifier.classes.end(), t)) continue;
            cm.add(cm.index_of(t), cm.index_of(pred[i]));
        }
    }
    return cm;
}

inline EvalResult run_eval(const fs::path& ckpt_dir, std::span<const PointFrame> frames, const SplitConfig& split) {
    const BackboneParams backbone = load_backbone(ckpt_dir);
    const ClassifierParams classifier = load_classifier(ckpt_dir);
    ConfusionMatrix cm = evaluate_frames(backbone, classifier, frames, split);
    require(cm.total() > 0, "no evaluation points", ErrorKind::config);
    std::map<ClassId, std::string> names;
    for (const auto& [id, n] : covered::class_names()) names[id] = n;
    MetricsReport report = build_report(cm, split, names);
    return {std::move(cm), std::move(report)};
}

/// Writes `<report>` (text), `<report stem>.csv` and `<report stem>_confusion.csv`.
inline void write_eval_outputs(const EvalResult& r, const fs::path& report_path) {
    if (report_path.has_parent_path()) fs::create_directories(report_path.parent_path());
    fs::path stem = report_path;
    stem.replace_extension();
    {
        std::ofstream out(report_path);
        require(static_cast<bool>(out), "cannot write report " + report_path.string(), ErrorKind::io);
        write_report_text(r.report, out);
    }
    {
        std::ofstream out(stem.string() + ".csv");
        require(static_cast<bool>(out), "cannot write metrics CSV", ErrorKind::io);
        write_report_csv(r.report, out);
    }
    {
        std::ofstream out(stem.string() + "_confusion.csv");
        require(static_cast<bool>(out), "cannot write confusion CSV", ErrorKind::io);
        write_confusion_csv(r.confusion, r.report.class_names, out);
    }
}

// ---------------------------------------------------------------------------
// Whole run

struct PipelineRun {
    StageResult backbone, generator, classifier;
    EvalResult eval;
};

/// All three stages into `dir`, then evaluation written to `dir/report.txt`.
inline PipelineRun run_pipeline(const RunConfig& c, const fs::path& dir, const fs::path& report_name = "report.txt") {
    c.validate();
    const auto train = training_frames(c);
    PipelineRun r;
    r.backbone = run_stage1(c, dir, train);
    r.generator = run_stage2(c, dir, train);
    r.classifier = run_stage3(c, dir, train);
    r.eval = run_eval(dir, evaluation_frames(c), c.split);
    write_eval_outputs(r.eval, dir / report_name);
    return r;
}

}  // namespace gzsl

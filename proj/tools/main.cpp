// gzsl_moe: data generation, staged training, evaluation, inference and
// self-checks from one binary.
//
// Exit codes: 0 ok, 2 config error, 3 divergence or missing checkpoint,
// 64 usage error, 66 missing input file.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <gzsl_moe/gzsl_moe.hpp>

namespace fs = std::filesystem;
using namespace gzsl;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;
constexpr int kExitUsage = 64;
constexpr int kExitNoInput = 66;

struct MissingInput : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void require_input(const std::string& path, const char* what) {
    if (!fs::exists(path)) throw MissingInput(std::string(what) + " not found: " + path);
}

RunConfig read_config(const std::string& path, std::optional<std::uint64_t> seed) {
    require_input(path, "config");
    RunConfig c = load_run_config(path);
    if (seed) c.seed = *seed;
    c.validate();
    return c;
}

void print_history(const char* stage, const StageResult& r) {
    std::printf("%s: %zu epochs", stage, r.history.size());
    if (!r.history.empty()) std::printf(", loss %.6f -> %.6f", r.history.front(), r.history.back());
    std::printf(", wrote %s\n", r.checkpoint.string().c_str());
    std::fflush(stdout);
}

int exit_code(ErrorKind k) {
    switch (k) {
        case ErrorKind::divergence:
        case ErrorKind::missing_checkpoint: return kExitRuntime;
        case ErrorKind::io: return kExitNoInput;
        default: return kExitConfig;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Generalized zero-shot point cloud segmentation with mixture-of-experts"};
    app.require_subcommand(1);

    std::string config, out, ckpt, data, report, input, stage = "all", suite;
    std::size_t frames = 4;
    std::optional<std::uint64_t> seed;

    auto* gen = app.add_subcommand("gen-data", "write synthetic labeled frames");
    gen->add_option("--config", config, "run config (JSON)")->required();
    gen->add_option("--out", out, "output directory")->required();
    gen->add_option("--frames", frames, "number of frames")->default_val(4);
    gen->add_option("--seed", seed, "override the config seed");

    auto* train = app.add_subcommand("train", "run training stages");
    train->add_option("--config", config, "run config (JSON)")->required();
    train->add_option("--stage", stage, "stage to run")
        ->check(CLI::IsMember({"backbone", "generator", "classifier", "all"}))
        ->default_val("all");
    train->add_option("--out", out, "checkpoint directory")->required();
    train->add_option("--seed", seed, "override the config seed");

    auto* eval = app.add_subcommand("eval", "evaluate checkpoints on labeled frames");
    eval->add_option("--config", config, "run config (JSON)")->required();
    eval->add_option("--ckpt", ckpt, "checkpoint directory")->required();
    eval->add_option("--data", data, "frame file or directory (default: the config's evaluation frames)");
    eval->add_option("--report", report, "report path; .csv and _confusion.csv are written beside it")->required();
    eval->add_option("--seed", seed, "override the config seed");

    auto* infer = app.add_subcommand("infer", "label every point of a frame");
    infer->add_option("--ckpt", ckpt, "checkpoint directory")->required();
    infer->add_option("--in", input, "frame file")->required();
    infer->add_option("--out", out, "output file, one label per line")->required();

    auto* check = app.add_subcommand("check", "run built-in verification suites");
    check->add_option("--suite", suite, "suite to run")->check(CLI::IsMember({"grad", "moe", "metrics"}))->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        std::cerr << "error: " << e.what() << "\n\n" << app.help();
        return kExitUsage;
    }

    try {
        if (gen->parsed()) {
            const RunConfig c = read_config(config, seed);
            fs::create_directories(out);
            const auto generated = synthetic_frames(c, "data", frames);
            for (std::size_t i = 0; i < generated.size(); ++i) {
                char name[32];
                std::snprintf(name, sizeof name, "frame_%03zu.pf", i);
                write_frame(generated[i], fs::path(out) / name);
                std::printf("%s: %zu points\n", name, generated[i].size());
            }
        } else if (train->parsed()) {
            const RunConfig c = read_config(config, seed);
            const auto frames_in = training_frames(c);
            const bool all = stage == "all";
            if (all || stage == "backbone") print_history("backbone", run_stage1(c, out, frames_in));
            if (all || stage == "generator") print_history("generator", run_stage2(c, out, frames_in));
            if (all || stage == "classifier") print_history("classifier", run_stage3(c, out, frames_in));
        } else if (eval->parsed()) {
            const RunConfig c = read_config(config, seed);
            require_input(ckpt, "checkpoint directory");
            std::vector<PointFrame> eval_frames;
            if (!data.empty()) {
                require_input(data, "data");
                eval_frames = load_frames(data);
            } else {
                eval_frames = evaluation_frames(c);
            }
            const EvalResult r = run_eval(ckpt, eval_frames, c.split);
            write_eval_outputs(r, report);
            write_report_text(r.report, std::cout);
        } else if (infer->parsed()) {
            require_input(input, "input frame");
            const BackboneParams backbone = load_backbone(ckpt);
            const ClassifierParams classifier = load_classifier(ckpt);
            const PointFrame f = load_frame(input);
            const auto labels = infer_frame(backbone, classifier, f);
            std::ofstream o(out);
            require(static_cast<bool>(o), "cannot write " + out, ErrorKind::io);
            for (ClassId l : labels) o << l << '\n';
            std::printf("labeled %zu points -> %s\n", labels.size(), out.c_str());
        } else if (check->parsed()) {
            const SuiteReport r = run_suite(suite);
            for (const auto& c : r.checks)
                std::printf("%s %-40s %s\n", c.passed ? "PASS" : "FAIL", c.name.c_str(), c.detail.c_str());
            std::printf("suite %s: %s\n", r.suite.c_str(), r.passed() ? "PASS" : "FAIL");
            return r.passed() ? 0 : 1;
        }
    } catch (const MissingInput& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitNoInput;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_code(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}

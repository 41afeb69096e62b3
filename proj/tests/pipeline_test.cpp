#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "test_util.hpp"

using namespace gzsl;

namespace {

RunConfig tiny_config() {
    RunConfig c;
    c.seed = 11;
    c.data.scale = 0.03;
    c.data.train_frames = 1;
    c.data.eval_frames = 1;
    c.backbone.feature_dim = 6;
    c.backbone.neighbours = 8;
    c.backbone.hidden = {12};
    c.backbone.num_experts = 4;
    c.backbone.expert_hidden_mult = 2;
    c.backbone.epochs = 1;
    c.generator.noise_dim = 4;
    c.generator.hidden = 12;
    c.generator.num_experts = 4;
    c.generator.expert_hidden_mult = 2;
    c.generator.epochs = 2;
    c.generator.batch_per_class = 16;
    c.classifier.hidden = 12;
    c.classifier.num_experts = 4;
    c.classifier.expert_hidden_mult = 2;
    c.classifier.epochs = 1;
    c.prototypes.dim = 8;
    return c;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST(Checkpoint, RoundTripIsBitExact) {
    std::mt19937_64 rng(1);
    Checkpoint ck;
    ck.config_json = R"({"a": "é"})";
    Matrix m(3, 4);
    testutil::randomize(m, rng);
    m(0, 0) = -0.0;
    m(1, 1) = std::numeric_limits<double>::denorm_min();
    ck.add("m", m);
    ck.add("empty", Matrix(0, 5));
    const auto dir = testutil::temp_dir("ckpt");
    save_checkpoint(ck, dir / "c.gzmo");
    const Checkpoint back = load_checkpoint(dir / "c.gzmo");
    EXPECT_EQ(back.config_json, ck.config_json);
    ASSERT_EQ(back.blocks.size(), 2u);
    for (std::size_t i = 0; i < m.size(); ++i)
        EXPECT_EQ(std::bit_cast<std::uint64_t>(back.block("m").values()[i]), std::bit_cast<std::uint64_t>(m.values()[i]));
    EXPECT_EQ(back.block("empty").cols(), 5u);
    EXPECT_EQ(encode_checkpoint(back), encode_checkpoint(ck));
}

TEST(Checkpoint, HeaderLayout) {
    Checkpoint ck;
    ck.config_json = "{}";
    ck.add("x", Matrix(1, 1, 1.0));
    const std::string b = encode_checkpoint(ck);
    EXPECT_EQ(b.substr(0, 4), "GZMO");
    EXPECT_EQ(b.substr(4, 4), std::string("\x01\x00\x00\x00", 4));
    EXPECT_EQ(b.substr(8, 8), std::string("\x02\x00\x00\x00\x00\x00\x00\x00", 8));
    EXPECT_EQ(b.size(), 4u + 4 + 8 + 2 + 8 + 1 + 8 + 8 + 8);
    EXPECT_EQ(b.substr(b.size() - 8), std::string("\x00\x00\x00\x00\x00\x00\xf0\x3f", 8));
}

TEST(Checkpoint, CorruptFilesAreRejected) {
    Checkpoint ck;
    ck.add("x", Matrix(2, 2, 1.0));
    std::string b = encode_checkpoint(ck);

    std::string wrong_version = b;
    wrong_version[4] = 2;
    try {
        (void)decode_checkpoint(wrong_version);
        FAIL();
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("version mismatch"), std::string::npos);
    }
    EXPECT_THROW((void)decode_checkpoint(b.substr(0, b.size() - 3)), Error);
    EXPECT_THROW((void)decode_checkpoint("GZMX" + b.substr(4)), Error);
    EXPECT_THROW((void)ck.block("y"), Error);
    EXPECT_THROW(ck.add("x", Matrix(1, 1)), Error);
}

TEST(Config, JsonRoundTrip) {
    RunConfig c = tiny_config();
    c.classifier.mode = ZslMode::zsl;
    c.classifier.n_per_class = 17;
    c.optimizer.beta1 = 0.5;
    c.data.scene.counts[covered::kAgv] = 3;
    const json j = to_json(c);
    const RunConfig back = run_config_from_json(j);
    EXPECT_EQ(to_json(back), j);
    EXPECT_EQ(back.classifier.mode, ZslMode::zsl);
    EXPECT_EQ(back.optimizer.beta1, 0.5);
}

TEST(Config, DefaultsMatchTheDocumentedOptimizer) {
    const RunConfig c;
    EXPECT_EQ(c.optimizer.learning_rate, 5e-4);
    EXPECT_EQ(c.optimizer.beta1, 0.92);
    EXPECT_EQ(c.optimizer.beta2, 0.98);
    EXPECT_EQ(c.optimizer.weight_decay, 1e-4);
    EXPECT_EQ(c.backbone.epochs, 10u);
    EXPECT_EQ(c.generator.epochs, 30u);
    EXPECT_EQ(c.classifier.epochs, 20u);
}

TEST(Config, BadFieldsAreConfigErrors) {
    json j = to_json(tiny_config());
    j["backbone"]["bogus"] = 1;
    try {
        (void)run_config_from_json(j);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::config);
    }
    json k = to_json(tiny_config());
    k["classifier"]["top_k"] = 99;
    EXPECT_THROW((void)run_config_from_json(k).validate(), Error);
}

TEST(Pipeline, StagesNeedTheirPredecessors) {
    const auto dir = testutil::temp_dir("pipeline_missing");
    const RunConfig c = tiny_config();
    try {
        (void)run_stage2(c, dir);
        FAIL();
    } catch (const Error& e) {
        EXPECT_STREQ(e.what(), "missing backbone checkpoint");
        EXPECT_EQ(e.kind(), ErrorKind::missing_checkpoint);
    }
    EXPECT_THROW((void)run_stage3(c, dir), Error);
    EXPECT_THROW((void)run_eval(dir, evaluation_frames(c), c.split), Error);
}

TEST(Pipeline, BackboneReloadGivesIdenticalFeatures) {
    const auto dir = testutil::temp_dir("pipeline_stage1");
    const RunConfig c = tiny_config();
    const auto frames = training_frames(c);
    auto r = train_backbone(frames, c.split, c.backbone, c.optimizer, stage_seed(c, "backbone"));
    save_checkpoint(backbone_checkpoint(c, r.params), dir / kBackboneFile);
    const BackboneParams back = load_backbone(dir);
    EXPECT_EQ(back, r.params);
    const auto eval = evaluation_frames(c);
    EXPECT_EQ(extract_features(back, eval[0]).features, extract_features(r.params, eval[0]).features);

    // no classifier-1 blocks in the backbone checkpoint
    for (const auto& [name, m] : load_checkpoint(dir / kBackboneFile).blocks)
        EXPECT_EQ(name.rfind("backbone.", 0), 0u) << name;
}

TEST(Pipeline, FullRunIsReproducibleAndReportsFiveClasses) {
    const auto a = testutil::temp_dir("pipeline_a"), b = testutil::temp_dir("pipeline_b");
    const RunConfig c = tiny_config();
    const PipelineRun ra = run_pipeline(c, a);
    const PipelineRun rb = run_pipeline(c, b);
    EXPECT_EQ(ra.eval.confusion, rb.eval.confusion);
    for (const char* f : {kBackboneFile, kGeneratorFile, kClassifierFile, "report.csv", "report_confusion.csv",
                          "report.txt", "generator_history.csv"})
        EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
    EXPECT_EQ(ra.eval.report.classes.size(), 5u);
    EXPECT_EQ(ra.eval.report.total, 876u);
    EXPECT_EQ(ra.generator.history.size(), 2u);

    // a rerun of stage 3 alone reproduces its checkpoint
    const std::string before = slurp(a / kClassifierFile);
    (void)run_stage3(c, a);
    EXPECT_EQ(slurp(a / kClassifierFile), before);

    const auto ck = load_classifier(a);
    EXPECT_EQ(ck.classes, (std::vector<ClassId>{1, 2, 3, 4, 5}));
}

TEST(Pipeline, EvalOnUnlabeledFramesHasNoPoints) {
    const auto dir = testutil::temp_dir("pipeline_empty_eval");
    const RunConfig c = tiny_config();
    (void)run_pipeline(c, dir);
    PointFrame f;
    for (int i = 0; i < 20; ++i) f.push({double(i), 0, 0}, covered::kUnlabeled);
    const std::vector<PointFrame> frames{f};
    try {
        (void)run_eval(dir, frames, c.split);
        FAIL();
    } catch (const Error& e) {
        EXPECT_STREQ(e.what(), "no evaluation points");
    }
}

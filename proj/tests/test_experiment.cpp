#include "sraa/experiment.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

namespace {

using namespace sraa;
namespace fs = std::filesystem;

RunConfig tiny_config(const fs::path& root) {
    RunConfig cfg;
    cfg.train.epochs_base = 2;
    cfg.train.epochs_inc = 2;
    cfg.train.seed = 12;
    cfg.images_per_class = 2;
    cfg.eval_per_class = 1;
    cfg.data_dir = root / "data";
    cfg.out_dir = root / "runs";
    return cfg;
}

struct TempRoot {
    fs::path dir;
    explicit TempRoot(const std::string& tag)
        : dir(fs::path(::testing::TempDir()) / tag) {
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    ~TempRoot() { fs::remove_all(dir); }
};

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

std::size_t line_count(const fs::path& p) {
    std::ifstream is(p);
    std::string line;
    std::size_t n = 0;
    while (std::getline(is, line)) ++n;
    return n;
}

TEST(Config, DefaultsValidateAndSurviveJson) {
    const RunConfig defaults;
    defaults.validate();
    const RunConfig parsed = config_from_json(nlohmann::json::object());
    EXPECT_EQ(parsed.hash(), defaults.hash());
    EXPECT_EQ(parsed.train.epochs_base, 30u);
    EXPECT_EQ(parsed.train.epochs_inc, 100u);
    EXPECT_DOUBLE_EQ(parsed.train.temperature, 10.0);
    EXPECT_EQ(parsed.images_per_class, 20u);
}

TEST(Config, RoundTripsThroughJson) {
    RunConfig cfg;
    cfg.train.epochs_base = 7;
    cfg.train.lambda_kd = 0.5;
    cfg.train.seed = 99;
    cfg.options.protocol = RunOptions::Protocol::Multi;
    cfg.options.shots = 5;
    cfg.options.fold.reset();
    cfg.options.with_finetune_baseline = true;
    const RunConfig back = config_from_json(config_to_json(cfg));
    EXPECT_EQ(back.hash(), cfg.hash());
    EXPECT_EQ(back.options.with_finetune_baseline, true);
    EXPECT_FALSE(back.options.fold.has_value());
}

TEST(Config, MinimalFileNamesProtocolAndShots) {
    const auto j = nlohmann::json::parse(R"({"run":{"protocol":"multi","shots":5}})");
    const RunConfig cfg = config_from_json(j);
    EXPECT_EQ(cfg.options.protocol, RunOptions::Protocol::Multi);
    EXPECT_EQ(cfg.options.shots, 5u);
    EXPECT_EQ(cfg.train.epochs_base, 30u);
}

TEST(Config, RejectsBadDocuments) {
    EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"bogus":1})")), ConfigError);
    EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"train":{"epochs":3}})")),
                 ConfigError);
    EXPECT_THROW(
        config_from_json(nlohmann::json::parse(R"({"run":{"protocol":"spiral"}})")),
        ConfigError);
    EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"run":{"shots":4}})")),
                 ConfigError);
    EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"run":{"fold":11}})")),
                 ConfigError);
    EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"train":{"lr_base":-1}})")),
                 ConfigError);
    EXPECT_THROW(
        config_from_json(nlohmann::json::parse(R"({"run":{"baseline":"frozen"}})")),
        ConfigError);
    EXPECT_THROW(
        config_from_json(nlohmann::json::parse(R"({"data":{"semantic_dim":7}})")),
        ConfigError);
}

TEST(Config, FoldAllParses) {
    const RunConfig cfg =
        config_from_json(nlohmann::json::parse(R"({"run":{"fold":"all"}})"));
    EXPECT_FALSE(cfg.options.fold.has_value());
    EXPECT_EQ(folds_of(cfg).size(), 9u);
}

TEST(Experiment, GenerateThenLoadRoundTrips) {
    const TempRoot root("exp_gen");
    RunConfig cfg = tiny_config(root.dir);
    generate_data(cfg);
    EXPECT_TRUE(fs::exists(cfg.data_dir / "semantic.tab"));
    EXPECT_TRUE(fs::exists(fold_data_dir(cfg, 0) / "plan.json"));

    const RunData single = load_run_data(cfg, 0);
    ASSERT_EQ(single.increments.size(), 1u);
    EXPECT_EQ(single.increments[0].at(0).class_set.size(), 4u);
    EXPECT_EQ(single.base.at(0).class_set.size(), 5u);

    cfg.options.protocol = RunOptions::Protocol::Multi;
    const RunData multi = load_run_data(cfg, 0);
    ASSERT_EQ(multi.increments.size(), 2u);
    EXPECT_EQ(multi.increments[0].at(0).class_set.size(), 2u);
    EXPECT_EQ(multi.increments[1].at(0).class_set.size(), 2u);
}

TEST(Experiment, BaseEpisodeSizeMatchesConfig) {
    const TempRoot root("exp_count");
    RunConfig cfg = tiny_config(root.dir);
    cfg.images_per_class = 3;
    generate_data(cfg);
    const RunData data = load_run_data(cfg, 0);
    EXPECT_EQ(data.base.at(0).images.shape()[0],
              cfg.images_per_class * data.base.at(0).class_set.size());
}

TEST(Experiment, MultiStepEmitsOneReportPerStep) {
    const TempRoot root("exp_steps");
    RunConfig cfg = tiny_config(root.dir);
    cfg.options.protocol = RunOptions::Protocol::Multi;
    generate_data(cfg);
    const std::vector<RunResult> results = run_all_folds(cfg, 1);
    ASSERT_EQ(results.size(), 1u);
    EXPECT_EQ(results[0].steps.size(), 3u);  // base + one per novel group
    EXPECT_EQ(line_count(results[0].dir / "steps.jsonl"), 3u);

    cfg.options.protocol = RunOptions::Protocol::Single;
    const std::vector<RunResult> single = run_all_folds(cfg, 1);
    EXPECT_EQ(single[0].steps.size(), 2u);
    EXPECT_EQ(line_count(single[0].dir / "steps.jsonl"), 2u);
    // the lone increment carries every novel class
    EXPECT_EQ(single[0].steps.back().report.class_order.size(), 10u);
}

TEST(Experiment, ManifestPinsTheRun) {
    const TempRoot root("exp_manifest");
    RunConfig cfg = tiny_config(root.dir);
    generate_data(cfg);
    const std::vector<RunResult> results = run_all_folds(cfg, 1);
    const auto manifest =
        nlohmann::json::parse(slurp(results[0].dir / "manifest.json"));
    EXPECT_EQ(manifest.at("config_hash").get<std::uint64_t>(), cfg.hash());
    EXPECT_EQ(manifest.at("protocol").get<std::string>(), "single");
    EXPECT_EQ(manifest.at("fold").get<std::size_t>(), 0u);
    EXPECT_EQ(manifest.at("arm").get<std::string>(), "sraa");
    // the manifest's config snapshot re-parses into the identical config
    const RunConfig echoed = config_from_json(manifest.at("config"));
    EXPECT_EQ(echoed.hash(), cfg.hash());
    // checkpoints listed in the manifest all exist
    for (const auto& name : manifest.at("artifacts").at("checkpoints")) {
        EXPECT_TRUE(fs::exists(results[0].dir / name.get<std::string>()));
    }
}

TEST(Experiment, RepeatRunsWriteIdenticalReports) {
    const TempRoot root("exp_repeat");
    RunConfig cfg = tiny_config(root.dir);
    generate_data(cfg);
    const std::vector<RunResult> first = run_all_folds(cfg, 1);
    const std::string jsonl = slurp(first[0].dir / "steps.jsonl");
    const std::string csv = slurp(first[0].dir / "summary.csv");
    const std::vector<RunResult> second = run_all_folds(cfg, 1);
    EXPECT_EQ(slurp(second[0].dir / "steps.jsonl"), jsonl);
    EXPECT_EQ(slurp(second[0].dir / "summary.csv"), csv);
}

TEST(Experiment, FinetuneArmRunsAlongside) {
    const TempRoot root("exp_ft");
    RunConfig cfg = tiny_config(root.dir);
    cfg.options.with_finetune_baseline = true;
    generate_data(cfg);
    const std::vector<RunResult> results = run_all_folds(cfg, 1);
    ASSERT_EQ(results.size(), 2u);
    EXPECT_NE(results[0].dir, results[1].dir);
    EXPECT_TRUE(results[1].dir.string().find("_ft") != std::string::npos);
}

TEST(Experiment, WorkerCountDoesNotChangeResults) {
    const TempRoot root("exp_workers");
    RunConfig cfg = tiny_config(root.dir);
    cfg.options.fold.reset();
    generate_data(cfg);
    run_all_folds(cfg, 1);
    std::map<std::string, std::string> serial;
    for (const auto& entry : fs::recursive_directory_iterator(cfg.out_dir)) {
        if (entry.path().filename() == "summary.csv") {
            serial[entry.path().string()] = slurp(entry.path());
        }
    }
    ASSERT_EQ(serial.size(), 9u);
    run_all_folds(cfg, 4);
    for (const auto& [path, bytes] : serial) {
        EXPECT_EQ(slurp(path), bytes);
    }
}

TEST(Experiment, MissingDataRaisesIoError) {
    const TempRoot root("exp_missing");
    const RunConfig cfg = tiny_config(root.dir);
    EXPECT_THROW(load_run_data(cfg, 0), IoError);
    EXPECT_THROW(run_all_folds(cfg, 1), IoError);
}

TEST(Experiment, SemanticTableIsFoldInvariant) {
    RunConfig cfg;
    cfg.train.seed = 77;
    const SemanticTable t = make_table(cfg);
    for (std::size_t fold : {1ul, 5ul, 8ul}) {
        const SplitPlan plan = SplitPlan::default_plan(cfg.train.seed, fold);
        for (ClassId c : plan.all_classes()) {
            EXPECT_TRUE(t.contains(c));
        }
    }
}

}  // namespace

// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "testutil.hpp"
#include "tinyforge/bytes.hpp"
#include "tinyforge/cli.hpp"
#include "tinyforge/model_io.hpp"
#include "tinyforge/prune.hpp"

using namespace tinyforge;

namespace {

struct Result {
    int code;
    std::string out;
    std::string err;
};

Result cli(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    int code = run_cli(args, out, err);
    return {code, out.str(), err.str()};
}

std::string p(const std::filesystem::path& x) { return x.string(); }

void write(const std::filesystem::path& path, const std::string& text) {
    std::ofstream f(path);
    f << text;
}

/// Trains a tiny blob model once per test binary.
const std::filesystem::path& trained_model() {
    static const std::filesystem::path model = [] {
        auto dir = tftest::scratch_dir("cli_model");
        auto m = dir / "mlp";
        auto r = cli({"train", "--hidden", "8", "--samples", "200", "--epochs", "3", "--lr", "0.05", "-o", p(m)});
        EXPECT_EQ(r.code, kExitOk) << r.err;
        return m;
    }();
    return model;
}

} // namespace

TEST(Config, Flatten) {
    auto j = nlohmann::json::parse(R"({"train": {"lr": 0.5, "epochs": 3}, "sweep": {"targets": [0, 0.5]},
                                      "prune": {"mode": "structural"}, "quant": {"optimize": true}})");
    auto f = flatten_config(j);
    EXPECT_EQ(f.at("train.lr"), "0.5");
    EXPECT_EQ(f.at("train.epochs"), "3");
    EXPECT_EQ(f.at("sweep.targets"), "0,0.5");
    EXPECT_EQ(f.at("prune.mode"), "structural");
    EXPECT_EQ(f.at("quant.optimize"), "true");
    EXPECT_EQ(f.size(), 5u);
}

TEST(Config, KeysAreUniqueAndDotted) {
    auto keys = config_keys();
    std::set<std::string> seen(keys.begin(), keys.end());
    EXPECT_EQ(seen.size(), keys.size());
    for (const auto& k : keys) EXPECT_NE(k.find('.'), std::string::npos) << k;
    std::ifstream f(std::string(TINYFORGE_SOURCE_DIR) + "/docs/formats.md");
    std::stringstream doc;
    doc << f.rdbuf();
    for (const auto& k : keys) EXPECT_NE(doc.str().find("`" + k + "`"), std::string::npos) << k << " undocumented";
}

TEST(Config, PruneScheduleKeys) {
    auto dir = tftest::scratch_dir("cli_prune_cfg");
    write(dir / "c.json", R"({"prune": {"kind": "agp", "s_i": 0.1, "s_f": 0.6, "n": 2, "dt": 1, "t0": 0}})");
    auto r = cli({"prune", "--model", p(trained_model()), "-c", p(dir / "c.json"), "--epochs", "3", "--samples", "200",
                  "-o", p(dir / "m")});
    ASSERT_EQ(r.code, kExitOk) << r.err;
    EXPECT_NE(r.out.find("realized_sparsity 0.6"), std::string::npos) << r.out;
}

TEST(Cli, UsageErrors) {
    EXPECT_EQ(cli({}).code, kExitUsage);
    EXPECT_EQ(cli({"frobnicate"}).code, kExitUsage);
    EXPECT_EQ(cli({"train", "--no-such-flag"}).code, kExitUsage);
    EXPECT_EQ(cli({"train", "--lr", "fast", "-o", "/tmp/x"}).code, kExitUsage);
    EXPECT_EQ(cli({"prune"}).code, kExitUsage); // --model is required
    EXPECT_EQ(cli({"--help"}).code, kExitOk);
    EXPECT_EQ(cli({"--version"}).code, kExitOk);
}

TEST(Cli, UnknownConfigKeyIsUsage) {
    auto dir = tftest::scratch_dir("cli_cfg");
    write(dir / "c.json", R"({"train": {"learning_rate": 0.1}})");
    auto r = cli({"train", "-c", p(dir / "c.json"), "-o", p(dir / "m")});
    EXPECT_EQ(r.code, kExitUsage);
    EXPECT_NE(r.err.find("train.learning_rate"), std::string::npos);
    write(dir / "bad.json", "[1, 2]");
    EXPECT_EQ(cli({"train", "-c", p(dir / "bad.json"), "-o", p(dir / "m")}).code, kExitUsage);
}

TEST(Cli, CommandLineOverridesConfig) {
    auto dir = tftest::scratch_dir("cli_prec");
    // Config asks for 0 epochs; the flag wins with 1, so one epoch line is printed.
    write(dir / "c.json", R"({"train": {"epochs": 0}, "model": {"hidden": "4"}, "data": {"samples": 50}})");
    auto r = cli({"train", "-c", p(dir / "c.json"), "--epochs", "1", "-o", p(dir / "m")});
    ASSERT_EQ(r.code, kExitOk) << r.err;
    EXPECT_NE(r.out.find("epoch 1 "), std::string::npos);
    EXPECT_EQ(r.out.find("epoch 2 "), std::string::npos);
    // Without the flag the config value applies.
    r = cli({"train", "-c", p(dir / "c.json"), "-o", p(dir / "m")});
    ASSERT_EQ(r.code, kExitOk) << r.err;
    EXPECT_EQ(r.out.find("epoch 1 "), std::string::npos);
}

TEST(Cli, MissingModelIsDataError) {
    auto r = cli({"pack", "--model", "/nonexistent/model", "-o", "/tmp/w.bin"});
    EXPECT_EQ(r.code, kExitData);
    EXPECT_FALSE(r.err.empty());
}

TEST(Cli, EmitWithoutPrerequisites) {
    auto dir = tftest::scratch_dir("cli_emit_pre");
    EXPECT_EQ(cli({"emit", "--model", p(trained_model()), "-o", p(dir)}).code, kExitData);
    ASSERT_EQ(cli({"pack", "--model", p(trained_model()), "-o", p(dir / "w.bin")}).code, kExitOk);
    auto r = cli({"emit", "--model", p(trained_model()), "--weights", p(dir / "w.bin"), "-o", p(dir)});
    EXPECT_EQ(r.code, kExitData);
    EXPECT_NE(r.err.find("plan"), std::string::npos);
}

TEST(Cli, ForeignPlanIsRejected) {
    auto dir = tftest::scratch_dir("cli_foreign");
    Graph other = lenet_preset();
    init_params(other, 1);
    save_model(other, dir / "lenet");
    ASSERT_EQ(cli({"plan", "--model", p(dir / "lenet"), "-o", p(dir / "plan.json")}).code, kExitOk);
    ASSERT_EQ(cli({"pack", "--model", p(trained_model()), "-o", p(dir / "w.bin")}).code, kExitOk);
    auto r = cli({"emit", "--model", p(trained_model()), "--weights", p(dir / "w.bin"), "--plan",
                  p(dir / "plan.json"), "-o", p(dir / "out")});
    EXPECT_EQ(r.code, kExitData);
}

TEST(Cli, FullPipeline) {
    auto dir = tftest::scratch_dir("cli_pipeline");
    auto m = p(trained_model());
    auto r = cli({"prune", "--model", m, "--target", "0.5", "--epochs", "2", "--steps", "2", "--hidden", "8",
                  "-o", p(dir / "pruned")});
    // --hidden is not a prune flag.
    EXPECT_EQ(r.code, kExitUsage);
    r = cli({"prune", "--model", m, "--target", "0.5", "--epochs", "2", "--steps", "2", "--samples", "200", "-o",
             p(dir / "pruned")});
    ASSERT_EQ(r.code, kExitOk) << r.err;
    EXPECT_NE(r.out.find("realized_sparsity 0.5"), std::string::npos) << r.out;

    r = cli({"quantize", "--model", p(dir / "pruned"), "--samples", "200", "--optimize", "-o", p(dir / "q")});
    ASSERT_EQ(r.code, kExitOk) << r.err;
    EXPECT_NE(r.out.find("agreement"), std::string::npos);

    ASSERT_EQ(cli({"optimize", "--model", p(dir / "q"), "-o", p(dir / "o")}).code, kExitOk);
    r = cli({"pack", "--model", p(dir / "o"), "-o", p(dir / "w.bin")});
    ASSERT_EQ(r.code, kExitOk) << r.err;
    EXPECT_NE(r.out.find("flash_bytes " + std::to_string(std::filesystem::file_size(dir / "w.bin"))),
              std::string::npos);
    r = cli({"plan", "--model", p(dir / "o"), "-o", p(dir / "plan.json")});
    ASSERT_EQ(r.code, kExitOk) << r.err;
    EXPECT_NE(r.out.find("peak_bytes"), std::string::npos);
    r = cli({"emit", "--model", p(dir / "o"), "--weights", p(dir / "w.bin"), "--plan", p(dir / "plan.json"), "-o",
             p(dir / "c")});
    ASSERT_EQ(r.code, kExitOk) << r.err;
    for (const char* f : {"model.h", "model.c", "model_data.c", "dnnrt.h"}) EXPECT_TRUE(std::filesystem::exists(dir / "c" / f));

    r = cli({"report", "--model", p(dir / "o"), "--weights", p(dir / "w.bin"), "--plan", p(dir / "plan.json")});
    ASSERT_EQ(r.code, kExitOk) << r.err;
    auto j = nlohmann::json::parse(r.out);
    EXPECT_EQ(j.at("flash_bytes").get<std::size_t>(), std::filesystem::file_size(dir / "w.bin"));
    EXPECT_NEAR(j.at("realized_sparsity").get<double>(), 0.5, 0.01);

    r = cli({"run", "--model", p(dir / "o"), "--samples", "200"});
    ASSERT_EQ(r.code, kExitOk) << r.err;
    EXPECT_EQ(r.out.rfind("accuracy ", 0), 0u);
}

TEST(Cli, ReportOnUnmodifiedModel) {
    auto r = cli({"report", "--model", p(trained_model())});
    ASSERT_EQ(r.code, kExitOk) << r.err;
    auto j = nlohmann::json::parse(r.out);
    EXPECT_EQ(j.at("realized_sparsity").get<double>(), 0.0);
    EXPECT_EQ(j.at("sram_overhead_bytes").get<int>(), 0);
}

TEST(Cli, RunRawTensorFiles) {
    auto dir = tftest::scratch_dir("cli_run");
    const float x[2] = {0.25f, -1.5f};
    write_file(dir / "x.f32", Bytes(reinterpret_cast<const std::uint8_t*>(x), reinterpret_cast<const std::uint8_t*>(x) + 8));
    auto r = cli({"run", "--model", p(trained_model()), "--input", p(dir / "x.f32"), "--output", p(dir / "y.f32")});
    ASSERT_EQ(r.code, kExitOk) << r.err;
    EXPECT_EQ(std::filesystem::file_size(dir / "y.f32"), 2u * 4u);
    EXPECT_NE(r.out.find("predicted "), std::string::npos);
    // Wrong length is a data error.
    write_file(dir / "short.f32", Bytes(4, 0));
    EXPECT_EQ(cli({"run", "--model", p(trained_model()), "--input", p(dir / "short.f32")}).code, kExitData);
}

TEST(Cli, BackendsAgree) {
    auto a = cli({"run", "--model", p(trained_model()), "--samples", "200", "--backend", "reference"});
    auto b = cli({"run", "--model", p(trained_model()), "--samples", "200", "--backend", "blas"});
    ASSERT_EQ(a.code, kExitOk);
    EXPECT_EQ(a.out, b.out);
    EXPECT_EQ(cli({"run", "--model", p(trained_model()), "--backend", "gpu"}).code, kExitUsage);
}

TEST(Cli, SweepWritesCsv) {
    auto dir = tftest::scratch_dir("cli_sweep");
    auto r = cli({"sweep", "--samples", "200", "--hidden", "8,8", "--targets", "0,0.5", "--modes", "element",
                  "--quant", "f32", "--retrain-epochs", "2", "--steps", "1", "--epochs", "2", "-o",
                  p(dir / "s.csv")});
    ASSERT_EQ(r.code, kExitOk) << r.err;
    std::ifstream f(dir / "s.csv");
    std::string line;
    int lines = 0;
    while (std::getline(f, line)) ++lines;
    EXPECT_EQ(lines, 3); // header + two targets
}

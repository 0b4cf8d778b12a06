// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "testutil.hpp"
#include "tinyforge/refrun.hpp"
#include "tinyforge/trainer.hpp"

using namespace tinyforge;

TEST(Trainer, SgdMomentumStep) {
    std::vector<double> w{1.0, -2.0}, g{0.5, 1.0}, v{0.1, 0.0};
    sgd_momentum_step<double>(w, g, v, 0.1, 0.9);
    EXPECT_DOUBLE_EQ(v[0], 0.9 * 0.1 + 0.5);
    EXPECT_DOUBLE_EQ(w[0], 1.0 - 0.1 * (0.9 * 0.1 + 0.5));
    EXPECT_DOUBLE_EQ(v[1], 1.0);
    EXPECT_DOUBLE_EQ(w[1], -2.1);
}

TEST(Trainer, GradCheckMlp) {
    Graph g = mlp_preset({2, 5, 4, 3});
    init_params(g, 3);
    tftest::randomize_biases(g, 3);
    auto d = make_blobs(6, 3, 11);
    auto r = grad_check(g, d, 1e-6);
    EXPECT_LT(r.max_rel_error, 1e-5);
}

TEST(Trainer, GradCheckConvBatchNorm) {
    Graph g = tftest::small_cnn(2, 2, 3);
    tftest::randomize_biases(g, 2);
    auto d = tftest::image_data(3, 5);
    auto r = grad_check(g, d, 1e-6);
    EXPECT_LT(r.max_rel_error, 1e-4);
    EXPECT_TRUE(r.analytic.count("bn1.gamma"));
    EXPECT_FALSE(r.analytic.count("bn1.mean"));
}

TEST(Trainer, LearnsBlobs) {
    Graph g = preset("mlp");
    init_params(g, 0);
    auto s = split(make_blobs(1000, 2, 4), 0.2);
    TrainConfig cfg;
    cfg.lr = 0.05;
    cfg.epochs = 10;
    auto r = train(g, s.train, &s.test, cfg);
    ASSERT_EQ(r.history.size(), 10u);
    EXPECT_LT(r.history.back().train_loss, r.history.front().train_loss);
    EXPECT_GE(r.final_accuracy, 0.9);
    EXPECT_DOUBLE_EQ(r.final_accuracy, evaluate(r.graph, s.test).accuracy);
}

TEST(Trainer, Deterministic) {
    Graph g = preset("mlp");
    init_params(g, 0);
    auto d = make_blobs(200, 2, 4);
    TrainConfig cfg;
    cfg.epochs = 2;
    auto a = train(g, d, nullptr, cfg);
    auto b = train(g, d, nullptr, cfg);
    EXPECT_EQ(a.graph.param("fc1.w").values<float>(), b.graph.param("fc1.w").values<float>());
    EXPECT_EQ(a.history.back().train_loss, b.history.back().train_loss);
}

TEST(Trainer, MasksStayZero) {
    Graph g = preset("mlp");
    init_params(g, 0);
    auto d = make_blobs(200, 2, 4);
    MaskSet m;
    auto& keep = m["fc2.w"];
    keep.assign(g.param("fc2.w").values<float>().size(), 1);
    for (std::size_t i = 0; i < keep.size(); i += 3) keep[i] = 0;
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.lr = 0.05;
    auto r = train(g, d, nullptr, cfg, {}, m);
    const auto& w = r.graph.param("fc2.w").values<float>();
    for (std::size_t i = 0; i < w.size(); ++i) {
        if (!keep[i]) EXPECT_EQ(w[i], 0.0f);
        else EXPECT_NE(w[i], 0.0f);
    }
}

namespace {
struct Recorder : TrainHook {
    std::vector<std::string> log;
    void on_train_begin(Session&) override { log.push_back("begin"); }
    void on_epoch(int t, Session&) override { log.push_back(std::to_string(t)); }
    void on_train_end(Session&) override { log.push_back("end"); }
};
} // namespace

TEST(Trainer, HookOrder) {
    Graph g = preset("mlp");
    init_params(g, 0);
    auto d = make_blobs(64, 2, 4);
    TrainConfig cfg;
    cfg.epochs = 2;
    Recorder rec;
    TrainHook* hooks[] = {&rec};
    train(g, d, nullptr, cfg, hooks);
    EXPECT_EQ(rec.log, (std::vector<std::string>{"begin", "0", "1", "2", "end"}));
}

TEST(Trainer, DivergenceIsReported) {
    Graph g = preset("mlp");
    init_params(g, 0);
    auto d = make_blobs(64, 2, 4);
    d.features[5] = std::numeric_limits<float>::quiet_NaN();
    TrainConfig cfg;
    cfg.epochs = 3;
    EXPECT_THROW(train(g, d, nullptr, cfg), ModelError);
}

TEST(Trainer, RejectsBadConfig) {
    Graph g = preset("mlp");
    auto d = make_blobs(8, 2, 4);
    TrainConfig cfg;
    cfg.batch_size = 0;
    EXPECT_THROW(train(g, d, nullptr, cfg), UsageError);
    cfg = {};
    cfg.momentum = 1.0;
    EXPECT_THROW(train(g, d, nullptr, cfg), UsageError);
}

TEST(Trainer, RejectsShapeMismatch) {
    Graph g = preset("mlp");
    auto d = make_blobs(8, 2, 4, 3);
    EXPECT_THROW(train(g, d, nullptr, TrainConfig{}), ModelError);
}

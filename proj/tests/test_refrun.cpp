// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "testutil.hpp"
#include "tinyforge/kernels.hpp"
#include "tinyforge/prune.hpp"
#include "tinyforge/qat.hpp"
#include "tinyforge/quant.hpp"
#include "tinyforge/refrun.hpp"
#include "tinyforge/trainer.hpp"

using namespace tinyforge;

namespace {

struct ConvCase {
    std::int64_t c, h, w, f;
    int k, stride, pad;
};

ConvCase random_case(Rng& rng) {
    ConvCase cc;
    cc.k = 1 + static_cast<int>(rng.below(3));
    cc.stride = 1 + static_cast<int>(rng.below(2));
    cc.pad = static_cast<int>(rng.below(2));
    cc.c = 1 + static_cast<std::int64_t>(rng.below(3));
    cc.f = 1 + static_cast<std::int64_t>(rng.below(4));
    cc.h = cc.k + cc.stride + static_cast<std::int64_t>(rng.below(6));
    cc.w = cc.k + cc.stride + static_cast<std::int64_t>(rng.below(6));
    return cc;
}

Graph conv_graph(const ConvCase& cc, Rng& rng) {
    GraphBuilder b("conv", {cc.c, cc.h, cc.w});
    Graph g = b.finish({b.conv(b.input(), cc.f, cc.k, cc.stride, cc.pad)});
    for (auto& v : g.param("conv1.w").values<float>()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    for (auto& v : g.param("conv1.b").values<float>()) v = static_cast<float>(rng.uniform(-0.5, 0.5));
    return g;
}

Tensor random_input(const Shape& shape, Rng& rng) {
    std::vector<float> v(static_cast<std::size_t>(numel(shape)));
    for (auto& x : v) x = static_cast<float>(rng.uniform(-1.0, 1.0));
    return Tensor(shape, std::move(v));
}

/// Direct nested-loop convolution in double.
std::vector<double> direct_conv(const ConvCase& cc, const std::vector<float>& x, const std::vector<float>& w,
                                const std::vector<float>& b) {
    const auto oh = (cc.h + 2 * cc.pad - cc.k) / cc.stride + 1;
    const auto ow = (cc.w + 2 * cc.pad - cc.k) / cc.stride + 1;
    std::vector<double> y(static_cast<std::size_t>(cc.f * oh * ow));
    for (std::int64_t f = 0; f < cc.f; ++f) {
        for (std::int64_t oy = 0; oy < oh; ++oy) {
            for (std::int64_t ox = 0; ox < ow; ++ox) {
                double acc = b[f];
                for (std::int64_t c = 0; c < cc.c; ++c) {
                    for (int ky = 0; ky < cc.k; ++ky) {
                        for (int kx = 0; kx < cc.k; ++kx) {
                            auto iy = oy * cc.stride - cc.pad + ky, ix = ox * cc.stride - cc.pad + kx;
                            if (iy < 0 || iy >= cc.h || ix < 0 || ix >= cc.w) continue;
                            acc += double(w[((f * cc.c + c) * cc.k + ky) * cc.k + kx]) * x[(c * cc.h + iy) * cc.w + ix];
                        }
                    }
                }
                y[(f * oh + oy) * ow + ox] = acc;
            }
        }
    }
    return y;
}

} // namespace

TEST(Run, IdentityGraph) {
    GraphBuilder b("id", {6});
    Graph g = b.finish({b.flatten(b.input())});
    Rng rng(1);
    auto x = random_input({6}, rng);
    EXPECT_EQ(run(g, x).values<float>(), x.values<float>());
}

TEST(Run, InputShapeMismatchThrows) {
    Graph g = mlp_preset({3, 2});
    EXPECT_THROW(run(g, Tensor({4}, std::vector<float>(4))), ModelError);
}

TEST(Im2col, OneByOneIsIdentity) {
    kernels::ConvGeom geo{2, 3, 3, 1, 1, 0};
    std::vector<float> in(18), out(18);
    for (std::size_t i = 0; i < in.size(); ++i) in[i] = float(i);
    kernels::im2col(in.data(), geo, 0.0f, out.data());
    EXPECT_EQ(out, in);
}

TEST(Im2col, TwoByTwoOnThreeByThree) {
    kernels::ConvGeom geo{1, 3, 3, 2, 1, 0};
    EXPECT_EQ(geo.rows(), 4);
    EXPECT_EQ(geo.cols(), 4);
    std::vector<float> in{1, 2, 3, 4, 5, 6, 7, 8, 9}, out(16);
    kernels::im2col(in.data(), geo, 0.0f, out.data());
    EXPECT_EQ(out, (std::vector<float>{1, 2, 4, 5, 2, 3, 5, 6, 4, 5, 7, 8, 5, 6, 8, 9}));
}

TEST(Im2col, U8PaddingIsZeroPoint) {
    kernels::ConvGeom geo{1, 2, 2, 3, 1, 1};
    std::vector<std::uint8_t> in{1, 2, 3, 4}, out(static_cast<std::size_t>(geo.rows() * geo.cols()));
    kernels::im2col(in.data(), geo, std::uint8_t{77}, out.data());
    // Top-left tap of the first output position falls in the padding.
    EXPECT_EQ(out[0], 77);
    std::size_t pads = std::count(out.begin(), out.end(), 77);
    EXPECT_EQ(pads, 36u - 16u);
}

TEST(Conv, MatchesDirectConvolution) {
    Rng rng(3);
    for (int trial = 0; trial < 200; ++trial) {
        auto cc = random_case(rng);
        Graph g = conv_graph(cc, rng);
        auto x = random_input({cc.c, cc.h, cc.w}, rng);
        auto want = direct_conv(cc, x.values<float>(), g.param("conv1.w").values<float>(),
                                g.param("conv1.b").values<float>());
        for (auto backend : {RunOptions::Backend::Reference, RunOptions::Backend::Blas}) {
            auto got = run(g, x, {backend}).values<float>();
            ASSERT_EQ(got.size(), want.size());
            for (std::size_t i = 0; i < got.size(); ++i) {
                EXPECT_NEAR(got[i], want[i], 1e-5 * std::max(1.0, std::abs(want[i])));
            }
        }
    }
}

TEST(Conv, U8MatchesIntegerOracle) {
    Rng rng(4);
    for (int trial = 0; trial < 100; ++trial) {
        auto cc = random_case(rng);
        Graph g = conv_graph(cc, rng);
        Dataset calib;
        calib.sample_shape = {cc.c, cc.h, cc.w};
        calib.classes = 1;
        for (int i = 0; i < 4; ++i) {
            auto t = random_input(calib.sample_shape, rng);
            calib.features.insert(calib.features.end(), t.values<float>().begin(), t.values<float>().end());
            calib.labels.push_back(0);
        }
        Graph q = quantize_ppq(g, calib, 4);
        const Node* qc = nullptr;
        for (const auto& n : q.nodes) {
            if (n.kind == OpKind::QLinearConv) qc = &n;
        }
        ASSERT_NE(qc, nullptr);
        auto x = random_input(calib.sample_shape, rng);
        auto t = trace(q, x);
        const auto& xin = t.at(qc->inputs[0]).values<std::uint8_t>();
        const auto& got = t.at(qc->outputs[0]).values<std::uint8_t>();
        const auto qx = *q.edge(qc->inputs[0]).quant;
        const auto qy = *q.edge(qc->outputs[0]).quant;
        const auto& wp = q.param(qc->params[0]);
        const auto& w = wp.values<std::uint8_t>();
        const auto& bias = q.param(qc->params[1]).values<std::int32_t>();
        const auto m = requant_multiplier(qx.scale, wp.desc.quant->scale, qy.scale);
        const auto oh = (cc.h + 2 * cc.pad - cc.k) / cc.stride + 1, ow = (cc.w + 2 * cc.pad - cc.k) / cc.stride + 1;
        for (std::int64_t f = 0; f < cc.f; ++f) {
            for (std::int64_t oy = 0; oy < oh; ++oy) {
                for (std::int64_t ox = 0; ox < ow; ++ox) {
                    std::int32_t acc = bias[f];
                    for (std::int64_t c = 0; c < cc.c; ++c) {
                        for (int ky = 0; ky < cc.k; ++ky) {
                            for (int kx = 0; kx < cc.k; ++kx) {
                                auto iy = oy * cc.stride - cc.pad + ky, ix = ox * cc.stride - cc.pad + kx;
                                bool inside = iy >= 0 && iy < cc.h && ix >= 0 && ix < cc.w;
                                int xv = inside ? xin[(c * cc.h + iy) * cc.w + ix] : qx.zero_point;
                                int wv = w[((f * cc.c + c) * cc.k + ky) * cc.k + kx];
                                acc += (xv - qx.zero_point) * (wv - wp.desc.quant->zero_point);
                            }
                        }
                    }
                    EXPECT_EQ(got[(f * oh + oy) * ow + ox], requantize(acc, m, qy.zero_point));
                }
            }
        }
    }
}

TEST(Crs, SparsePathIsBitExact) {
    Rng rng(6);
    for (const auto& name : {"lenet", "mlp"}) {
        Graph g = preset(name);
        init_params(g, 2);
        tftest::randomize_biases(g, 3);
        g = apply_element_mask(g, element_masks(g, 0.8, Heuristic::Level));
        auto shape = g.edge(g.inputs[0]).shape;
        for (int i = 0; i < 5; ++i) {
            auto x = random_input(shape, rng);
            auto dense = run(g, x);
            EXPECT_EQ(run(g, x, {RunOptions::Backend::Reference, RunOptions::Crs::All}), dense);
            EXPECT_EQ(run(g, x, {RunOptions::Backend::Reference, RunOptions::Crs::Feasible}), dense);
        }
        Dataset calib = tftest::image_data(8, 1, shape, 2);
        Graph q = quantize_ppq(g, calib, 8);
        for (int i = 0; i < 5; ++i) {
            auto x = random_input(shape, rng);
            EXPECT_EQ(run(q, x, {RunOptions::Backend::Reference, RunOptions::Crs::All}), run(q, x));
        }
    }
}

TEST(Crs, GoldenThroughTheInterpreter) {
    GraphBuilder b("fig3", {5});
    Graph g = b.finish({b.linear(b.input(), 4)});
    g.param("fc1.w").values<float>() = {10, 0, 0, 0, 1, 0, 7, 0, 2, 0, 0, 0, 8, 0, 0, 14, 0, 0, 0, 6};
    auto y = run(g, Tensor({5}, std::vector<float>(5, 1.0f)), {RunOptions::Backend::Reference, RunOptions::Crs::All});
    EXPECT_EQ(y.values<float>(), (std::vector<float>{11, 9, 8, 20}));
}

TEST(Evaluate, OracleAndConstantGraphs) {
    Dataset d;
    d.sample_shape = {2};
    d.classes = 2;
    for (int i = 0; i < 10; ++i) {
        int l = i % 2;
        d.labels.push_back(l);
        d.features.push_back(l == 0 ? 1.0f : 0.0f);
        d.features.push_back(l == 1 ? 1.0f : 0.0f);
    }
    GraphBuilder b("oracle", {2});
    Graph oracle = b.finish({b.flatten(b.input())});
    auto r = evaluate(oracle, d);
    EXPECT_EQ(r.accuracy, 1.0);
    ASSERT_EQ(r.per_class.size(), 2u);
    EXPECT_EQ(r.per_class[1].total, 5u);

    GraphBuilder c("const", {2});
    Graph constant = c.finish({c.linear(c.input(), 2)});
    constant.param("fc1.b").values<float>() = {1.0f, 0.0f};
    EXPECT_EQ(evaluate(constant, d).accuracy, 0.5);
}

TEST(Evaluate, MatchesTrainerAccuracy) {
    auto data = split(make_blobs(200, 3, 2), 0.25);
    Graph g = mlp_preset({2, 16, 3});
    init_params(g, 1);
    TrainConfig cfg;
    cfg.lr = 0.01;
    cfg.epochs = 3;
    auto r = train(g, data.train, &data.test, cfg);
    EXPECT_EQ(evaluate(r.graph, data.test).accuracy, r.final_accuracy);
}

TEST(Run, DeterministicAndStrictIntegerAgrees) {
    Graph g = mlp_preset({4, 8, 8, 2});
    init_params(g, 5);
    tftest::randomize_biases(g, 6);
    Graph q = quantize_ppq(g, tftest::image_data(16, 2, {4}, 2), 16);
    Rng rng(1);
    RunOptions strict;
    strict.strict_integer = true;
    for (int i = 0; i < 10; ++i) {
        auto x = random_input({4}, rng);
        EXPECT_EQ(run(q, x), run(q, x));
        EXPECT_EQ(run(q, x, strict), run(q, x));
    }
}

TEST(Argmax, FirstMaximumWins) {
    EXPECT_EQ(argmax(Tensor({4}, std::vector<float>{1, 3, 3, 0})), 1u);
    EXPECT_EQ(argmax(Tensor({3}, std::vector<std::uint8_t>{0, 9, 2})), 1u);
}

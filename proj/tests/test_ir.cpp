// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>

#include "testutil.hpp"
#include "tinyforge/bytes.hpp"
#include "tinyforge/model_io.hpp"
#include "tinyforge/qat.hpp"

using namespace tinyforge;

namespace {

Graph chain() {
    GraphBuilder b("chain", {4});
    auto x = b.linear(b.input(), 3);
    x = b.relu(x);
    x = b.linear(x, 2);
    Graph g = b.finish({b.softmax(x)});
    init_params(g, 1);
    return g;
}

bool before(const Graph& g, const std::vector<std::size_t>& order, const std::string& a, const std::string& b) {
    auto pos = [&](const std::string& n) {
        for (std::size_t i = 0; i < order.size(); ++i) {
            if (g.nodes[order[i]].name == n) return i;
        }
        return order.size();
    };
    return pos(a) < pos(b);
}

} // namespace

TEST(Validate, PresetsAreValid) {
    for (const auto& name : preset_names()) {
        Graph g = preset(name);
        EXPECT_NO_THROW(validate(g)) << name;
    }
}

TEST(Validate, DanglingInput) {
    Graph g = chain();
    g.nodes[1].inputs[0] = "nowhere";
    EXPECT_THROW(validate(g), ModelError);
}

TEST(Validate, TwoProducers) {
    Graph g = chain();
    g.nodes[1].outputs[0] = g.nodes[0].outputs[0];
    EXPECT_THROW(validate(g), ModelError);
}

TEST(Validate, ArityAndAttributes) {
    Graph g = chain();
    g.nodes[1].inputs.push_back(g.inputs[0]);
    EXPECT_THROW(validate(g), ModelError);

    g = chain();
    g.nodes[1].attrs.kernel = 3; // ReLU takes no kernel
    EXPECT_THROW(validate(g), ModelError);

    g = chain();
    g.nodes[0].params.pop_back();
    EXPECT_THROW(validate(g), ModelError);
}

TEST(Validate, ParameterCountMismatch) {
    Graph g = chain();
    g.param(g.nodes[0].params[0]).values<float>().pop_back();
    EXPECT_THROW(validate(g), ModelError);
}

TEST(Validate, U8WithoutQuantParams) {
    Graph g = chain();
    auto& p = g.param(g.nodes[0].params[0]);
    p.desc.type = ElemType::U8;
    p.data = std::vector<std::uint8_t>(p.values<float>().size());
    EXPECT_THROW(validate(g), ModelError);
}

TEST(Validate, CycleIsRejected) {
    Graph g = chain();
    // relu reads the second linear's output, which reads relu.
    g.nodes[1].inputs[0] = g.nodes[2].outputs[0];
    EXPECT_THROW(toposort(g), ModelError);
}

TEST(Toposort, RespectsEdgesOnShuffledNodes) {
    Graph g = lenet_preset();
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        Graph s = g;
        rng.shuffle(s.nodes);
        auto order = toposort(s);
        ASSERT_EQ(order.size(), s.nodes.size());
        for (const auto& n : s.nodes) {
            for (const auto& in : n.inputs) {
                auto p = s.producer(in);
                if (p) {
                    EXPECT_TRUE(before(s, order, s.nodes[*p].name, n.name));
                }
            }
        }
    }
}

TEST(Shapes, LenetEdges) {
    Graph g = lenet_preset();
    const auto* fc = g.find_node("softmax1");
    ASSERT_NE(fc, nullptr);
    EXPECT_EQ(g.edge(fc->outputs[0]).shape, (Shape{10}));
    EXPECT_EQ(g.edge(g.inputs[0]).shape, (Shape{1, 28, 28}));
}

TEST(Shapes, ConvArithmetic) {
    GraphBuilder b("c", {3, 9, 7});
    auto x = b.conv(b.input(), 5, 3, 2, 1);
    EXPECT_EQ(b.shape(x), (Shape{5, 5, 4}));
    x = b.maxpool(x, 2);
    EXPECT_EQ(b.shape(x), (Shape{5, 2, 2}));
    EXPECT_EQ(b.shape(b.flatten(x)), (Shape{20}));
}

TEST(Shapes, ReinferWithNewInput) {
    Graph g = chain();
    EXPECT_THROW(infer_shapes(g, {5}), ModelError);
    EXPECT_THROW(infer_shapes(g, {4, 1}), ModelError);
}

TEST(WeightCount, CountsConvAndLinearWeightsOnly) {
    Graph g = tftest::small_cnn(1, 4, 6);
    // conv1 4*1*3*3, conv2 6*4*3*3, fc 3*(6*3*3)
    EXPECT_EQ(weight_count(g), 36 + 216 + 162);
}

TEST(Bundle, RoundTripIsExact) {
    auto dir = tftest::scratch_dir("bundle");
    for (const auto& name : preset_names()) {
        Graph g = preset(name);
        init_params(g, 4);
        save_model(g, dir / name);
        Graph back = load_model(dir / name);
        EXPECT_EQ(back, g) << name;
    }
}

TEST(Bundle, QuantizedRoundTrip) {
    auto dir = tftest::scratch_dir("bundle_q");
    Graph g = mlp_preset({2, 8, 2});
    init_params(g, 2);
    Graph q = quantize_ppq(g, make_blobs(50, 2, 1), 50);
    q.find_node("fc1")->attrs.clamp_min = 3;
    save_model(q, dir / "q.json");
    EXPECT_EQ(load_model(dir / "q"), q);
}

TEST(Bundle, MetaSurvives) {
    auto dir = tftest::scratch_dir("bundle_meta");
    Graph g = chain();
    g.meta["baseline_weight_count"] = 123;
    save_model(g, dir / "m");
    EXPECT_EQ(load_model(dir / "m").meta, g.meta);
}

TEST(Bundle, CorruptInputsAreModelErrors) {
    auto dir = tftest::scratch_dir("bundle_bad");
    Graph g = chain();
    save_model(g, dir / "m");
    auto paths = bundle_paths(dir / "m");

    auto blob = read_file(paths.blob);
    write_file(paths.blob, Bytes(blob.begin(), blob.begin() + blob.size() / 2));
    EXPECT_THROW(load_model(dir / "m"), ModelError);

    save_model(g, dir / "m");
    auto text = read_text(paths.manifest);
    write_text(paths.manifest, text.substr(0, text.size() / 2));
    EXPECT_THROW(load_model(dir / "m"), ModelError);

    write_text(paths.manifest, "{\"format\": \"other\"}");
    EXPECT_THROW(load_model(dir / "m"), ModelError);
}

TEST(Bundle, MissingFileIsAPrerequisiteError) {
    auto dir = tftest::scratch_dir("bundle_missing");
    EXPECT_THROW(load_model(dir / "absent"), PrerequisiteError);
}

TEST(Dataset, BlobsAreDeterministicAndBalanced) {
    auto a = make_blobs(300, 3, 9);
    auto b = make_blobs(300, 3, 9);
    EXPECT_EQ(a, b);
    EXPECT_NE(a, make_blobs(300, 3, 10));
    std::vector<int> counts(3);
    for (auto l : a.labels) counts[static_cast<std::size_t>(l)]++;
    for (int c : counts) EXPECT_EQ(c, 100);
}

TEST(Dataset, SplitPartitions) {
    auto d = make_blobs(100, 2, 1);
    auto s = split(d, 0.25);
    EXPECT_EQ(s.train.size() + s.test.size(), d.size());
    EXPECT_EQ(s.test.size(), 25u);
}

TEST(Dataset, IdxRoundTrip) {
    auto dir = tftest::scratch_dir("idx");
    Bytes img, lab;
    auto be = [](Bytes& b, std::uint32_t v) {
        for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<std::uint8_t>(v >> s));
    };
    be(img, 0x803);
    be(img, 2);
    be(img, 2);
    be(img, 3);
    for (int i = 0; i < 12; ++i) img.push_back(static_cast<std::uint8_t>(i * 20));
    be(lab, 0x801);
    be(lab, 2);
    lab.push_back(7);
    lab.push_back(1);
    write_file(dir / "img", img);
    write_file(dir / "lab", lab);
    auto d = load_idx(dir / "img", dir / "lab");
    EXPECT_EQ(d.size(), 2u);
    EXPECT_EQ(d.sample_shape, (Shape{1, 2, 3}));
    EXPECT_EQ(d.labels, (std::vector<std::int32_t>{7, 1}));
    EXPECT_FLOAT_EQ(d.features[11], 220.0f / 255.0f);

    lab[3] = 0x02; // wrong magic
    write_file(dir / "lab", lab);
    EXPECT_THROW(load_idx(dir / "img", dir / "lab"), ModelError);
}

TEST(Dataset, BundleRoundTrip) {
    auto dir = tftest::scratch_dir("dataset");
    auto d = tftest::image_data(10, 2);
    save_dataset(d, dir / "d");
    EXPECT_EQ(load_dataset(dir / "d"), d);
}

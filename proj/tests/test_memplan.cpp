// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <set>

#include "testutil.hpp"
#include "tinyforge/memplan.hpp"
#include "tinyforge/prune.hpp"

using namespace tinyforge;

namespace {

LifetimeTable table(std::size_t ops) {
    LifetimeTable t;
    for (std::size_t i = 0; i < ops; ++i) t.add_op("op" + std::to_string(i));
    return t;
}

/// Random graph of equal-width linear/relu layers with diamonds and skips.
Graph random_graph(Rng& rng) {
    const auto width = 1 + static_cast<std::int64_t>(rng.below(40));
    GraphBuilder b("rand", {width});
    std::vector<std::string> live{b.input()};
    const auto layers = 1 + rng.below(12);
    std::string x = b.input();
    for (std::uint64_t i = 0; i < layers; ++i) {
        switch (rng.below(4)) {
        case 0: x = b.relu(x); break;
        case 1: x = b.linear(x, width); break;
        case 2: { // diamond
            auto l = b.relu(x);
            auto r = b.linear(x, width);
            x = b.add(l, r);
            break;
        }
        default: { // skip from an earlier edge
            auto from = live[rng.below(live.size())];
            x = b.add(b.relu(x), from);
            break;
        }
        }
        live.push_back(x);
    }
    return b.finish({b.softmax(x)});
}

/// Oracle: pairwise overlap among buffers live at each operator.
bool disjoint(const MemoryPlan& plan, std::size_t ops) {
    for (std::size_t k = 0; k < ops; ++k) {
        std::vector<const Placement*> live;
        for (const auto& [name, p] : plan.placements) {
            if (p.alloc_op <= k && k <= p.release_op) live.push_back(&p);
        }
        for (std::size_t i = 0; i < live.size(); ++i) {
            for (std::size_t j = i + 1; j < live.size(); ++j) {
                if (live[i]->offset < live[j]->end() && live[j]->offset < live[i]->end()) return false;
            }
        }
    }
    return true;
}

} // namespace

TEST(Lifetimes, Chain) {
    GraphBuilder b("chain", {4});
    auto mid = b.relu(b.input());
    Graph g = b.finish({b.relu(mid)});
    auto t = lifetimes(g, toposort(g));
    ASSERT_EQ(t.size(), 2u);
    EXPECT_EQ(t.alloc[0], (std::vector<std::string>{mid}));
    EXPECT_TRUE(t.release[0].empty());
    EXPECT_TRUE(t.alloc[1].empty());
    EXPECT_EQ(t.release[1], (std::vector<std::string>{mid}));
}

TEST(Lifetimes, SingleOpIsEmpty) {
    GraphBuilder b("one", {4});
    Graph g = b.finish({b.relu(b.input())});
    auto t = lifetimes(g, toposort(g));
    ASSERT_EQ(t.size(), 1u);
    EXPECT_TRUE(t.alloc[0].empty());
    EXPECT_TRUE(t.release[0].empty());
    EXPECT_EQ(plan_memory(g).peak, 0u);
}

TEST(Lifetimes, DiamondReleasesAtLastConsumer) {
    GraphBuilder b("diamond", {4});
    auto a = b.relu(b.input());
    auto l = b.relu(a);
    auto r = b.relu(a);
    Graph g = b.finish({b.add(l, r)});
    auto order = toposort(g);
    auto t = lifetimes(g, order);
    std::size_t last = 0;
    for (std::size_t k = 0; k < order.size(); ++k) {
        const auto& n = g.nodes[order[k]];
        if (n.outputs[0] == l || n.outputs[0] == r) last = std::max(last, k);
    }
    EXPECT_NE(std::find(t.release[last].begin(), t.release[last].end(), a), t.release[last].end());
}

TEST(Lifetimes, DeadEdgeIsAnError) {
    GraphBuilder b("dead", {4});
    b.relu(b.input());
    Graph g = b.finish({b.relu(b.input())});
    EXPECT_THROW(lifetimes(g, toposort(g)), ModelError);
}

TEST(FirstFit, ReuseAfterRelease) {
    auto t = table(3);
    t.alloc[0] = {"B"};
    t.release[1] = {"B"};
    t.alloc[2] = {"D"};
    t.release[2] = {"D"};
    auto plan = first_fit_plan(t, {{"B", 200}, {"D", 100}});
    EXPECT_EQ(plan.placements.at("D").offset, 0u);
    EXPECT_EQ(plan.peak, 200u);
    EXPECT_EQ(plan.naive, 300u);
    EXPECT_TRUE(verify_plan(plan, t).ok);
}

TEST(FirstFit, FragmentedExample) {
    auto t = table(3);
    t.alloc[0] = {"X", "Y"};
    t.alloc[1] = {"Z"};
    t.release[1] = {"Y"};
    t.release[2] = {"X", "Z"};
    auto plan = first_fit_plan(t, {{"X", 100}, {"Y", 50}, {"Z", 100}});
    EXPECT_EQ(plan.placements.at("Y").size, 52u);
    EXPECT_EQ(plan.placements.at("Y").offset, 100u);
    EXPECT_EQ(plan.placements.at("Z").offset, 152u);
    EXPECT_EQ(plan.peak, 252u);
    EXPECT_TRUE(verify_plan(plan, t).ok);
}

TEST(FirstFit, LowestGapWins) {
    auto t = table(3);
    t.alloc[0] = {"A", "B", "C"};
    t.release[0] = {"A"};
    t.alloc[1] = {"D"};
    t.release[2] = {"B", "C", "D"};
    auto plan = first_fit_plan(t, {{"A", 40}, {"B", 40}, {"C", 40}, {"D", 36}});
    EXPECT_EQ(plan.placements.at("D").offset, 0u);
    EXPECT_EQ(plan.peak, 120u);
}

TEST(FirstFit, SingleBufferPeakIsItsSize) {
    auto t = table(2);
    t.alloc[0] = {"A"};
    t.release[1] = {"A"};
    auto plan = first_fit_plan(t, {{"A", 17}});
    EXPECT_EQ(plan.peak, 20u);
    EXPECT_EQ(plan.occupancy, (std::vector<std::size_t>{20, 20}));
}

TEST(Verify, DetectsOverlap) {
    auto t = table(1);
    t.alloc[0] = {"A", "B"};
    t.release[0] = {"A", "B"};
    MemoryPlan p;
    p.placements["A"] = {0, 8, 0, 0};
    p.placements["B"] = {0, 8, 0, 0};
    p.peak = 8;
    auto c = verify_plan(p, t);
    EXPECT_FALSE(c.ok);
    EXPECT_EQ(c.op, 0u);
    EXPECT_EQ(std::set<std::string>({c.first, c.second}), (std::set<std::string>{"A", "B"}));
}

TEST(Verify, DetectsPeakMismatchAndMissingPlacement) {
    auto t = table(1);
    t.alloc[0] = {"A"};
    t.release[0] = {"A"};
    MemoryPlan p;
    p.placements["A"] = {0, 8, 0, 0};
    p.peak = 4;
    EXPECT_FALSE(verify_plan(p, t).ok);
    p.peak = 8;
    EXPECT_TRUE(verify_plan(p, t).ok);
    p.placements["A"].offset = 2;
    p.peak = 10;
    EXPECT_FALSE(verify_plan(p, t).ok); // misaligned
    p.placements.clear();
    p.peak = 0;
    EXPECT_FALSE(verify_plan(p, t).ok);
}

TEST(Corpus, RandomGraphsPlanCleanly) {
    Rng rng(99);
    for (int i = 0; i < 200; ++i) {
        Graph g = random_graph(rng);
        auto t = graph_lifetimes(g);
        auto plan = first_fit_plan(t, buffer_sizes(g));
        auto check = verify_plan(plan, t);
        EXPECT_TRUE(check.ok) << check.message;
        EXPECT_TRUE(disjoint(plan, t.size()));
        EXPECT_LE(plan.peak, plan.naive);
        EXPECT_EQ(plan, first_fit_plan(t, buffer_sizes(g)));
    }
}

TEST(Scratch, ConvolutionsGetIm2colBuffers) {
    Graph g = tftest::small_cnn();
    auto sizes = buffer_sizes(g);
    auto t = graph_lifetimes(g);
    // conv1: 1x8x8 input, k3 p1 -> (1*9) x 64 floats.
    EXPECT_EQ(sizes.at(scratch_name("conv1")), 9u * 64u * 4u);
    // conv2: 4x8x8 input, k3 -> (4*9) x 36 floats.
    EXPECT_EQ(sizes.at(scratch_name("conv2")), 36u * 36u * 4u);
    auto plan = first_fit_plan(t, sizes);
    const auto& s = plan.placements.at(scratch_name("conv1"));
    EXPECT_EQ(s.alloc_op, s.release_op);
    EXPECT_TRUE(verify_plan(plan, t).ok);
}

TEST(Pruning, StructuralShrinksPeakElementKeepsIt) {
    Graph g = lenet_preset();
    init_params(g, 1);
    const auto base = plan_memory(g).peak;
    auto masked = apply_element_mask(g, element_masks(g, 0.9, Heuristic::Level));
    EXPECT_EQ(plan_memory(masked).peak, base);
    std::size_t prev = base;
    KeepLists keep;
    for (double s : {0.3, 0.6, 0.9}) {
        keep = structure_keep_lists(g, s, Heuristic::L1, {}, keep);
        auto peak = plan_memory(shrink_structures(g, keep)).peak;
        EXPECT_LE(peak, prev);
        prev = peak;
    }
    EXPECT_LT(prev, base);
}

TEST(PlanJson, RoundTrip) {
    Graph g = tftest::small_cnn();
    auto t = graph_lifetimes(g);
    auto plan = plan_memory(g);
    auto j = plan_to_json(plan, t);
    EXPECT_EQ(j.at("peak_bytes").get<std::size_t>(), plan.peak);
    EXPECT_EQ(plan_from_json(j), plan);
    j.erase("buffers");
    EXPECT_THROW(plan_from_json(j), ModelError);
}

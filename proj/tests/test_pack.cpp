// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "testutil.hpp"
#include "tinyforge/bytes.hpp"
#include "tinyforge/crs.hpp"
#include "tinyforge/pack.hpp"
#include "tinyforge/prune.hpp"
#include "tinyforge/qat.hpp"
#include "tinyforge/refrun.hpp"

using namespace tinyforge;

namespace {

// 4x5 matrix whose CRS form is printed in the original figure.
const std::vector<float> kGolden = {
    10, 0, 0, 0, 1, //
    0,  7, 0, 2, 0, //
    0,  0, 8, 0, 0, //
    14, 0, 0, 0, 6,
};

Graph single_linear(std::int64_t in, std::int64_t out, std::vector<float> w) {
    GraphBuilder b("lin", {in});
    auto y = b.linear(b.input(), out);
    Graph g = b.finish({y});
    g.param(g.nodes[0].params[0]).values<float>() = std::move(w);
    return g;
}

std::vector<float> random_sparse(Rng& rng, std::size_t n, double density) {
    std::vector<float> v(n, 0.0f);
    for (auto& x : v) {
        if (rng.uniform() < density) x = static_cast<float>(rng.uniform(-2.0, 2.0));
    }
    return v;
}

Bytes slice(const PackedStream& s, std::size_t off, std::size_t n) {
    auto base = s.payload_offset() + off;
    return Bytes(s.bytes.begin() + static_cast<std::ptrdiff_t>(base),
                 s.bytes.begin() + static_cast<std::ptrdiff_t>(base + n));
}

} // namespace

TEST(Crs, GoldenArrays) {
    auto m = crs_encode<float>(kGolden, 4, 5);
    EXPECT_EQ(m.values, (std::vector<float>{10, 1, 7, 2, 8, 14, 6}));
    EXPECT_EQ(m.col_ind, (std::vector<std::uint32_t>{0, 4, 1, 3, 2, 0, 4}));
    EXPECT_EQ(m.row_ptr, (std::vector<std::uint32_t>{0, 2, 4, 5, 7}));
}

TEST(Crs, GoldenMatVec) {
    auto m = crs_encode<float>(kGolden, 4, 5);
    std::vector<float> ones(5, 1.0f);
    EXPECT_EQ(crs_matvec(m, ones), (std::vector<float>{11, 9, 8, 20}));
}

TEST(Crs, AllZero) {
    std::vector<float> z(12, 0.0f);
    auto m = crs_encode<float>(z, 3, 4);
    EXPECT_TRUE(m.values.empty());
    EXPECT_TRUE(m.col_ind.empty());
    EXPECT_EQ(m.row_ptr, (std::vector<std::uint32_t>(4, 0)));
    EXPECT_EQ(crs_matvec(m, std::vector<float>(4, 1.0f)), (std::vector<float>(3, 0.0f)));
}

TEST(Crs, U8ZeroIsZeroPoint) {
    std::vector<std::uint8_t> d{9, 9, 3, 9, 0, 9};
    auto m = crs_encode<std::uint8_t>(d, 2, 3, 9);
    EXPECT_EQ(m.values, (std::vector<std::uint8_t>{3, 0}));
    EXPECT_EQ(crs_decode(m, std::uint8_t{9}), d);
}

TEST(Crs, RandomRoundTripAndMatVec) {
    Rng rng(21);
    for (int trial = 0; trial < 300; ++trial) {
        auto rows = 1 + static_cast<std::int64_t>(rng.below(12));
        auto cols = 1 + static_cast<std::int64_t>(rng.below(12));
        auto dense = random_sparse(rng, static_cast<std::size_t>(rows * cols), rng.uniform());
        auto m = crs_encode<float>(dense, rows, cols);
        EXPECT_NO_THROW(crs_check(m));
        EXPECT_EQ(crs_decode(m), dense);
        std::vector<float> x(static_cast<std::size_t>(cols));
        for (auto& v : x) v = static_cast<float>(rng.uniform(-1.0, 1.0));
        // Dense oracle with the same left-to-right accumulation.
        for (std::int64_t r = 0; r < rows; ++r) {
            float acc = 0.0f;
            for (std::int64_t c = 0; c < cols; ++c) acc += dense[r * cols + c] * x[c];
            EXPECT_EQ(crs_matvec(m, x)[r], acc);
        }
    }
}

TEST(Crs, CheckRejectsBrokenTriplets) {
    auto m = crs_encode<float>(kGolden, 4, 5);
    auto bad = m;
    bad.col_ind[1] = 0; // not increasing within row 0
    EXPECT_THROW(crs_check(bad), ModelError);
    bad = m;
    bad.row_ptr.back() = 6;
    EXPECT_THROW(crs_check(bad), ModelError);
    bad = m;
    bad.col_ind[0] = 5;
    EXPECT_THROW(crs_check(bad), ModelError);
}

TEST(CrsFeasible, SizeFormulaExamples) {
    auto f = crs_feasible(100, 100, 5000, ElemType::F32);
    EXPECT_TRUE(f.feasible);
    EXPECT_EQ(f.crs_bytes, 30404u);
    EXPECT_EQ(f.dense_bytes, 40000u);
    auto u = crs_feasible(100, 100, 5000, ElemType::U8);
    EXPECT_FALSE(u.feasible);
    EXPECT_EQ(u.crs_bytes, 15404u);
    EXPECT_EQ(u.dense_bytes, 10000u);
    EXPECT_TRUE(crs_feasible(10, 10, 0, ElemType::U8).feasible);
    EXPECT_EQ(crs_feasible(2, 70000, 1, ElemType::F32).index_bytes, 4);
}

TEST(CrsFeasible, U8FlipsAtHigherSparsity) {
    Rng rng(2);
    for (int trial = 0; trial < 50; ++trial) {
        auto rows = 1 + static_cast<std::int64_t>(rng.below(300));
        auto cols = 1 + static_cast<std::int64_t>(rng.below(300));
        auto flip = [&](ElemType t) {
            // Largest nnz for which CRS pays off; -1 if never.
            std::int64_t best = -1;
            for (std::int64_t nnz = 0; nnz <= rows * cols; ++nnz) {
                if (crs_feasible(rows, cols, nnz, t).feasible) best = nnz;
            }
            return best;
        };
        auto f = flip(ElemType::F32), u = flip(ElemType::U8);
        // Fewer allowed non-zeros for u8 means a strictly higher sparsity threshold.
        if (f >= 0) {
            EXPECT_LT(u, f) << rows << "x" << cols;
        }
    }
}

TEST(Pack, AlignmentExamples) {
    Graph g = single_linear(3, 1, {1, 2, 3});
    auto s = pack(g, {PackOptions::Crs::Never});
    ASSERT_EQ(s.entries.size(), 2u);
    EXPECT_EQ(s.entries[0].offset, 0u);
    EXPECT_EQ(s.entries[0].nbytes, 12u);
    EXPECT_EQ(s.entries[1].offset, 12u);

    Graph f = mlp_preset({5, 1});
    init_params(f, 1);
    Graph q = quantize_ppq(f, tftest::image_data(4, 1, {5}, 1), 4);
    auto sq = pack(q, {PackOptions::Crs::Never});
    ASSERT_EQ(sq.entries.size(), 2u);
    EXPECT_EQ(sq.entries[0].type, ElemType::U8);
    EXPECT_EQ(sq.entries[0].nbytes, 5u);
    EXPECT_EQ(sq.entries[1].offset, 8u);
}

TEST(Pack, HeaderLayout) {
    Graph g = single_linear(3, 1, {1, 2, 3});
    auto s = pack(g);
    const auto* b = s.bytes.data();
    EXPECT_EQ(std::string(reinterpret_cast<const char*>(b), 4), "TFWS");
    EXPECT_EQ(get_le<std::uint16_t>(b + 4), kStreamVersion);
    EXPECT_EQ(get_le<std::uint32_t>(b + 8), 2u);
    EXPECT_EQ(get_le<std::uint32_t>(b + 12), kStreamHeaderBytes + 2 * kDescriptorBytes);
    EXPECT_EQ(get_le<std::uint32_t>(b + 16), s.bytes.size() - s.payload_offset());
    // Payload: 1.0f, 2.0f, 3.0f then the zero bias.
    EXPECT_EQ(get_le<float>(b + s.payload_offset() + 4), 2.0f);
}

TEST(Pack, EmptyParameterSet) {
    GraphBuilder b("plain", {4});
    Graph g = b.finish({b.relu(b.input())});
    auto s = pack(g);
    EXPECT_TRUE(s.entries.empty());
    EXPECT_EQ(s.bytes.size(), kStreamHeaderBytes);
    EXPECT_TRUE(parse_stream(s.bytes).entries.empty());
}

TEST(Pack, GoldenBytesInStream) {
    Graph g = single_linear(5, 4, kGolden);
    auto s = pack(g, {PackOptions::Crs::Always});
    const auto& e = s.entries[0];
    ASSERT_EQ(e.layout, Layout::Crs);
    EXPECT_EQ(e.nnz, 7u);
    EXPECT_EQ(e.index_bytes, 2);
    Bytes values, cols, rows;
    for (float v : {10, 1, 7, 2, 8, 14, 6}) put_le(values, v);
    for (std::uint16_t c : {0, 4, 1, 3, 2, 0, 4}) put_le(cols, c);
    for (std::uint32_t r : {0, 2, 4, 5, 7}) put_le(rows, r);
    EXPECT_EQ(slice(s, e.offset, values.size()), values);
    EXPECT_EQ(slice(s, e.col_ind_offset, cols.size()), cols);
    EXPECT_EQ(slice(s, e.row_ptr_offset, rows.size()), rows);
    EXPECT_EQ(e.col_ind_offset % 4, 0u);
    EXPECT_EQ(e.row_ptr_offset % 4, 0u);
}

TEST(Pack, AutoFollowsFeasibility) {
    std::vector<float> sparse(100 * 100, 0.0f), dense(100 * 100, 1.0f);
    for (std::size_t i = 0; i < 5000; ++i) sparse[i * 2] = 1.0f;
    EXPECT_EQ(pack(single_linear(100, 100, sparse)).entries[0].layout, Layout::Crs);
    EXPECT_EQ(pack(single_linear(100, 100, dense)).entries[0].layout, Layout::Dense);
    // Biases are never CRS candidates.
    EXPECT_FALSE(pack(single_linear(100, 100, sparse)).entries[1].crs_candidate);
}

TEST(Pack, RoundTripIsBitExact) {
    Rng rng(8);
    for (const auto& name : preset_names()) {
        Graph g = preset(name);
        init_params(g, 3);
        g = apply_element_mask(g, element_masks(g, rng.uniform(0.0, 0.99), Heuristic::Random, {}, 5));
        auto s = pack(g);
        auto parsed = parse_stream(s.bytes);
        ASSERT_EQ(parsed.entries.size(), s.entries.size());
        auto names = pack_order(g);
        for (std::size_t i = 0; i < names.size(); ++i) {
            auto t = unpack_tensor(parsed, i);
            EXPECT_EQ(t.data, g.param(names[i]).data) << names[i];
            EXPECT_EQ(t.desc.shape, g.param(names[i]).desc.shape);
            EXPECT_EQ(s.entries[i].offset % kStreamAlign, 0u);
        }
        EXPECT_EQ(load_weights(g, s.bytes), g);
    }
}

TEST(Pack, QuantizedRoundTrip) {
    Graph g = lenet_preset();
    init_params(g, 2);
    g = apply_element_mask(g, element_masks(g, 0.9, Heuristic::Level));
    Dataset d = tftest::image_data(4, 3, {1, 28, 28}, 10);
    Graph q = quantize_ppq(g, d, 4);
    auto s = pack(q);
    bool any_crs = false;
    for (const auto& e : s.entries) any_crs |= e.layout == Layout::Crs;
    EXPECT_TRUE(any_crs);
    Graph back = load_weights(q, s.bytes);
    EXPECT_EQ(back.params, q.params);
    EXPECT_EQ(run(back, d.input(0)), run(q, d.input(0)));
}

TEST(Pack, DescriptorsDoNotOverlap) {
    Graph g = alexnet_preset();
    init_params(g, 1);
    auto s = pack(g);
    std::uint32_t end = 0;
    for (const auto& e : s.entries) {
        EXPECT_GE(e.offset, end);
        end = e.offset + e.nbytes;
    }
    EXPECT_LE(s.payload_offset() + end, s.bytes.size());
    EXPECT_LT(s.bytes.size() - (s.payload_offset() + end), kStreamAlign);
}

TEST(Pack, SizeShrinksWithStructuralPruning) {
    Graph g = lenet_preset();
    init_params(g, 1);
    std::size_t prev = pack(g).bytes.size();
    KeepLists keep;
    for (double s : {0.25, 0.5, 0.75, 0.9}) {
        keep = structure_keep_lists(g, s, Heuristic::L1, {}, keep);
        auto size = pack(shrink_structures(g, keep)).bytes.size();
        EXPECT_LE(size, prev);
        prev = size;
    }
}

TEST(ParseStream, RejectsMalformedInput) {
    Graph g = single_linear(3, 2, {1, 2, 3, 4, 5, 6});
    auto good = pack(g).bytes;
    auto bad = good;
    bad[0] = 'X';
    EXPECT_THROW(parse_stream(bad), ModelError);
    bad = good;
    bad[4] = 9;
    EXPECT_THROW(parse_stream(bad), ModelError);
    EXPECT_THROW(parse_stream(Bytes(good.begin(), good.begin() + 10)), ModelError);
    EXPECT_THROW(parse_stream(Bytes(good.begin(), good.end() - 4)), ModelError);
    bad = good;
    bad[kStreamHeaderBytes + 8] = 7; // dtype of the first descriptor
    EXPECT_THROW(parse_stream(bad), ModelError);
    bad = good;
    bad[kStreamHeaderBytes + 1] = 0x10; // first tensor starts beyond the payload
    EXPECT_THROW(parse_stream(bad), ModelError);
}

TEST(LoadWeights, RejectsForeignStreams) {
    Graph a = single_linear(3, 2, {1, 2, 3, 4, 5, 6});
    Graph b = single_linear(2, 3, {1, 2, 3, 4, 5, 6});
    EXPECT_THROW(load_weights(b, pack(a).bytes), ModelError);
    Graph c = mlp_preset({3, 2, 2});
    init_params(c, 1);
    EXPECT_THROW(load_weights(c, pack(a).bytes), ModelError);
}

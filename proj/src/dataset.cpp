// SPDX-License-Identifier: Apache-2.0
#include "tinyforge/dataset.hpp"

#include <cmath>
#include <numbers>
#include <numeric>

#include <nlohmann/json.hpp>

#include "tinyforge/bytes.hpp"
#include "tinyforge/model_io.hpp"
#include "tinyforge/rng.hpp"

namespace tinyforge {

Tensor Dataset::input(std::size_t i) const {
    auto s = sample(i);
    return Tensor(sample_shape, std::vector<float>(s.begin(), s.end()));
}

void Dataset::check() const {
    if (sample_shape.empty()) throw ModelError("dataset has no sample shape");
    if (features.size() != labels.size() * sample_size()) throw ModelError("dataset feature count does not match labels");
    for (auto l : labels) {
        if (l < 0 || l >= classes) throw ModelError("dataset label " + std::to_string(l) + " outside [0, classes)");
    }
}

Dataset Dataset::head(std::size_t n) const {
    n = std::min(n, size());
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    return subset(idx);
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
    Dataset d;
    d.sample_shape = sample_shape;
    d.classes = classes;
    d.features.reserve(indices.size() * sample_size());
    for (auto i : indices) {
        auto s = sample(i);
        d.features.insert(d.features.end(), s.begin(), s.end());
        d.labels.push_back(labels[i]);
    }
    return d;
}

Dataset make_blobs(std::size_t n, int classes, std::uint64_t seed, int dims, double radius) {
    if (n == 0 || classes < 1 || dims < 1) throw UsageError("make_blobs: n, classes and dims must be positive");
    Rng rng(seed);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);

    Dataset d;
    d.sample_shape = {dims};
    d.classes = classes;
    d.features.resize(n * static_cast<std::size_t>(dims));
    d.labels.resize(n);
    for (std::size_t slot = 0; slot < n; ++slot) {
        auto label = static_cast<int>(order[slot] % static_cast<std::size_t>(classes));
        double angle = 2.0 * std::numbers::pi * label / classes;
        d.labels[slot] = label;
        for (int k = 0; k < dims; ++k) {
            double centre = k == 0 ? radius * std::cos(angle) : (k == 1 ? radius * std::sin(angle) : 0.0);
            d.features[slot * dims + k] = static_cast<float>(centre + rng.normal());
        }
    }
    return d;
}

Split split(const Dataset& d, double test_fraction) {
    if (test_fraction < 0.0 || test_fraction > 1.0) throw UsageError("split: test fraction must lie in [0, 1]");
    auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(d.size())));
    std::vector<std::size_t> train_idx(d.size() - n_test), test_idx(n_test);
    std::iota(train_idx.begin(), train_idx.end(), 0);
    std::iota(test_idx.begin(), test_idx.end(), d.size() - n_test);
    return {d.subset(train_idx), d.subset(test_idx)};
}

namespace {

std::uint32_t be32(const Bytes& b, std::size_t off) {
    return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
           std::uint32_t{b[off + 3]};
}

} // namespace

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
    auto img = read_file(images);
    auto lab = read_file(labels);
    if (img.size() < 16) throw ModelError("IDX images file truncated: " + images.string());
    if (lab.size() < 8) throw ModelError("IDX labels file truncated: " + labels.string());
    if (be32(img, 0) != 0x00000803) throw ModelError("bad IDX image magic in " + images.string());
    if (be32(lab, 0) != 0x00000801) throw ModelError("bad IDX label magic in " + labels.string());
    std::size_t count = be32(img, 4), rows = be32(img, 8), cols = be32(img, 12);
    if (be32(lab, 4) != count) throw ModelError("IDX image and label counts differ");
    if (img.size() < 16 + count * rows * cols) throw ModelError("IDX images file truncated: " + images.string());
    if (lab.size() < 8 + count) throw ModelError("IDX labels file truncated: " + labels.string());

    Dataset d;
    d.sample_shape = {1, static_cast<std::int64_t>(rows), static_cast<std::int64_t>(cols)};
    d.features.resize(count * rows * cols);
    for (std::size_t i = 0; i < d.features.size(); ++i) d.features[i] = static_cast<float>(img[16 + i]) / 255.0f;
    d.labels.resize(count);
    int max_label = 0;
    for (std::size_t i = 0; i < count; ++i) {
        d.labels[i] = lab[8 + i];
        max_label = std::max(max_label, d.labels[i]);
    }
    d.classes = std::max(10, max_label + 1);
    return d;
}

void save_dataset(const Dataset& d, const std::filesystem::path& p) {
    d.check();
    auto paths = bundle_paths(p);
    nlohmann::json m{{"format", "tinyforge-dataset"},
                     {"version", 1},
                     {"sample_shape", d.sample_shape},
                     {"classes", d.classes},
                     {"count", d.size()}};
    Bytes blob;
    blob.reserve(d.features.size() * 4 + d.labels.size() * 4);
    for (float v : d.features) put_le(blob, v);
    for (auto l : d.labels) put_le(blob, l);
    write_text(paths.manifest, m.dump(1) + "\n");
    write_file(paths.blob, blob);
}

Dataset load_dataset(const std::filesystem::path& p) {
    auto paths = bundle_paths(p);
    try {
        auto m = nlohmann::json::parse(read_text(paths.manifest));
        if (m.value("format", std::string()) != "tinyforge-dataset") throw ModelError("not a tinyforge dataset manifest");
        Dataset d;
        d.sample_shape = m.at("sample_shape").get<Shape>();
        d.classes = m.at("classes").get<int>();
        auto count = m.at("count").get<std::size_t>();
        auto blob = read_file(paths.blob);
        auto per = static_cast<std::size_t>(numel(d.sample_shape));
        if (blob.size() != count * per * 4 + count * 4) throw ModelError("dataset blob size does not match header");
        d.features.resize(count * per);
        for (std::size_t i = 0; i < d.features.size(); ++i) d.features[i] = get_le<float>(blob.data() + 4 * i);
        d.labels.resize(count);
        auto off = d.features.size() * 4;
        for (std::size_t i = 0; i < count; ++i) d.labels[i] = get_le<std::int32_t>(blob.data() + off + 4 * i);
        d.check();
        return d;
    } catch (const nlohmann::json::exception& e) {
        throw ModelError("parse error in '" + paths.manifest.string() + "': " + e.what());
    }
}

} // namespace tinyforge

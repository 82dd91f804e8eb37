#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <map>
#include <vector>

#include "sitfuse/context.hpp"
#include "sitfuse/rng.hpp"

using namespace sitfuse;
using context::ClassCounts;
using context::ClusterClassHistogram;
using iic::HierarchicalLabelMap;
using scene::ClassCode;

namespace {

// 4x5 map with leaves striped by column: column c gets leaf c % 4, and the
// last pixel carries the no-sample sentinel.
HierarchicalLabelMap striped_map() {
    HierarchicalLabelMap map;
    map.width = 5;
    map.height = 4;
    map.k = 4;
    map.depth = 1;
    map.labels.assign(20, 0);
    map.paths.assign(20, {});
    for (int row = 0; row < 4; ++row)
        for (int col = 0; col < 5; ++col) {
            const int64_t leaf = col % 4;
            map.labels[static_cast<size_t>(row) * 5 + col] = leaf;
            map.paths[static_cast<size_t>(row) * 5 + col] = {static_cast<int>(leaf)};
        }
    map.labels.back() = HierarchicalLabelMap::kNoSample;
    map.paths.back() = {};
    return map;
}

scene::LabelRaster uniform_raster(int width, int height, uint8_t bits) {
    scene::LabelRaster raster;
    raster.width = width;
    raster.height = height;
    raster.bits.assign(static_cast<size_t>(width) * height, bits);
    return raster;
}

ClusterClassHistogram random_histogram(uint64_t seed, int n_leaves) {
    SplitMix64 rng(seed);
    ClusterClassHistogram hist;
    for (int leaf = 0; leaf < n_leaves; ++leaf) {
        ClassCounts counts;
        for (auto& c : counts.counts) c = static_cast<long>(rng.next_below(60));
        counts.unlabeled = static_cast<long>(rng.next_below(200));
        hist.leaves[leaf] = counts;
    }
    return hist;
}

}  // namespace

TEST_CASE("build_histogram: unlabeled pixels count as unlabeled only") {
    const auto map = striped_map();
    const auto raster = uniform_raster(5, 4, 0);
    const auto hist = context::build_histogram(map, raster);
    long unlabeled = 0;
    for (const auto& [leaf, counts] : hist.leaves) {
        for (const long c : counts.counts) CHECK(c == 0);
        unlabeled += counts.unlabeled;
    }
    CHECK(unlabeled == 19);  // the sentinel pixel is skipped
}

TEST_CASE("build_histogram: single smoke leaf counts its pixels") {
    HierarchicalLabelMap map;
    map.width = 5;
    map.height = 2;
    map.k = 2;
    map.depth = 1;
    map.labels.assign(10, 7);
    map.paths.assign(10, {0});
    const auto raster = uniform_raster(5, 2, scene::class_bit(ClassCode::Smoke));
    const auto hist = context::build_histogram(map, raster);
    REQUIRE(hist.leaves.size() == 1);
    CHECK(hist.leaves.at(7).count(ClassCode::Smoke) == 10);
    CHECK(hist.leaves.at(7).count(ClassCode::Fire) == 0);
    CHECK(hist.leaves.at(7).unlabeled == 0);
    CHECK(hist.leaves.at(7).total() == 10);
}

TEST_CASE("build_histogram: overlapping smoke+fire bits feed both counts") {
    HierarchicalLabelMap map;
    map.width = 2;
    map.height = 1;
    map.k = 2;
    map.depth = 1;
    map.labels = {3, 3};
    map.paths = {{1}, {1}};
    const auto raster = uniform_raster(
        2, 1, scene::class_bit(ClassCode::Smoke) | scene::class_bit(ClassCode::Fire));
    const auto hist = context::build_histogram(map, raster);
    CHECK(hist.leaves.at(3).count(ClassCode::Smoke) == 2);
    CHECK(hist.leaves.at(3).count(ClassCode::Fire) == 2);
}

TEST_CASE("build_histogram: dimension mismatch throws") {
    const auto map = striped_map();
    const auto raster = uniform_raster(4, 4, 0);
    CHECK_THROWS_AS(context::build_histogram(map, raster), context::ContextError);
}

TEST_CASE("assign_context: majority smoke leaf is positive with purity 0.9") {
    ClusterClassHistogram hist;
    ClassCounts counts;
    counts.counts[static_cast<size_t>(ClassCode::Smoke)] = 90;
    counts.counts[static_cast<size_t>(ClassCode::SmokeBg)] = 10;
    hist.leaves[5] = counts;
    const auto ctx = context::assign_context(hist, ClassCode::Smoke, 0.5, 10);
    REQUIRE(ctx.is_positive(5));
    CHECK(ctx.positives.at(5).purity == doctest::Approx(0.9));
    CHECK(ctx.positives.at(5).support == 100);
}

TEST_CASE("assign_context: thin support stays negative") {
    ClusterClassHistogram hist;
    ClassCounts counts;
    counts.counts[static_cast<size_t>(ClassCode::Smoke)] = 4;
    hist.leaves[1] = counts;
    const auto ctx = context::assign_context(hist, ClassCode::Smoke, 0.5, 10);
    CHECK(!ctx.is_positive(1));
    CHECK(ctx.positives.empty());
}

TEST_CASE("assign_context: fire-only labels leave a smoke target negative") {
    ClusterClassHistogram hist;
    ClassCounts counts;
    counts.counts[static_cast<size_t>(ClassCode::Fire)] = 50;
    hist.leaves[2] = counts;
    CHECK(!context::assign_context(hist, ClassCode::Smoke, 0.5, 10).is_positive(2));
    CHECK(context::assign_context(hist, ClassCode::Fire, 0.5, 10).is_positive(2));
}

TEST_CASE("assign_context: invalid thresholds throw") {
    const ClusterClassHistogram hist;
    CHECK_THROWS_AS(context::assign_context(hist, ClassCode::Smoke, 0.0, 10),
                    context::ContextError);
    CHECK_THROWS_AS(context::assign_context(hist, ClassCode::Smoke, 1.5, 10),
                    context::ContextError);
    CHECK_THROWS_AS(context::assign_context(hist, ClassCode::Smoke, 0.5, 0),
                    context::ContextError);
}

TEST_CASE("assign_context: raising tau never adds a positive leaf") {
    for (uint64_t seed = 1; seed <= 20; ++seed) {
        const auto hist = random_histogram(seed, 12);
        const auto loose = context::assign_context(hist, ClassCode::Smoke, 0.4, 5);
        const auto strict = context::assign_context(hist, ClassCode::Smoke, 0.7, 5);
        for (const auto& [leaf, entry] : strict.positives) CHECK(loose.is_positive(leaf));
    }
}

TEST_CASE("apply_context: empty positive set gives an all-zero mask") {
    const auto map = striped_map();
    context::TargetContext ctx;
    const auto mask = context::apply_context(map, ctx);
    CHECK(mask.ones_count() == 0);
    CHECK(mask.width == map.width);
    CHECK(mask.is_valid(0, 0));
    CHECK(!mask.is_valid(3, 4));  // sentinel pixel
}

TEST_CASE("apply_context: all-positive set reproduces the validity grid") {
    const auto map = striped_map();
    context::TargetContext ctx;
    for (int64_t leaf = 0; leaf < 4; ++leaf)
        ctx.positives[leaf] = context::ContextEntry{leaf, 1.0, 100};
    const auto mask = context::apply_context(map, ctx);
    CHECK(mask.values == mask.valid);
    CHECK(mask.ones_count() == 19);
}

TEST_CASE("apply_context: mask size equals the sum over positive leaves") {
    const auto map = striped_map();
    std::map<int64_t, long> leaf_sizes;
    for (const int64_t leaf : map.labels)
        if (leaf != HierarchicalLabelMap::kNoSample) ++leaf_sizes[leaf];

    context::TargetContext ctx;
    ctx.positives[0] = context::ContextEntry{0, 0.8, 30};
    ctx.positives[2] = context::ContextEntry{2, 0.6, 25};
    const auto mask = context::apply_context(map, ctx);
    CHECK(mask.ones_count() == leaf_sizes[0] + leaf_sizes[2]);
}

TEST_CASE("soft_scores: pixels score their leaf's purity, negatives score 0") {
    const auto map = striped_map();
    context::TargetContext ctx;
    ctx.purity_threshold = 0.5;
    ctx.positives[1] = context::ContextEntry{1, 0.9, 40};
    ctx.positives[3] = context::ContextEntry{3, 1.0, 15};
    const auto scores = context::soft_scores(map, ctx);
    const auto mask = context::apply_context(map, ctx);
    for (int row = 0; row < map.height; ++row) {
        for (int col = 0; col < map.width; ++col) {
            const size_t i = static_cast<size_t>(row) * map.width + col;
            const int64_t leaf = map.labels[i];
            if (leaf == 1) CHECK(scores[i] == 0.9f);
            else if (leaf == 3) CHECK(scores[i] == 1.0f);
            else CHECK(scores[i] == 0.0f);
            // A set mask pixel always carries a score >= tau.
            if (mask.values[i] == 1) CHECK(scores[i] >= ctx.purity_threshold);
        }
    }
}

TEST_CASE("context map: save/load round-trip and missing-target error") {
    context::ContextMap map;
    context::TargetContext smoke;
    smoke.target = ClassCode::Smoke;
    smoke.purity_threshold = 0.6;
    smoke.min_support = 12;
    smoke.positives[4] = context::ContextEntry{4, 0.875, 64};
    smoke.positives[9] = context::ContextEntry{9, 1.0, 21};
    map.targets[scene::class_name(ClassCode::Smoke)] = smoke;

    namespace fs = std::filesystem;
    const fs::path p = fs::temp_directory_path() / "sitfuse_ctx_rt.json";
    fs::remove(p);
    context::save_context(map, p);
    const auto loaded = context::load_context(p);
    fs::remove(p);

    const auto& got = loaded.for_target(ClassCode::Smoke);
    CHECK(got.purity_threshold == 0.6);
    CHECK(got.min_support == 12);
    REQUIRE(got.positives.size() == 2);
    CHECK(got.positives.at(4).purity == 0.875);
    CHECK(got.positives.at(4).support == 64);
    CHECK(got.positives.at(9).purity == 1.0);

    CHECK_THROWS_AS(loaded.for_target(ClassCode::Fire), context::ContextError);
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>
#include <vector>

#include "sitfuse/geo.hpp"
#include "sitfuse/rng.hpp"
#include "sitfuse/scene.hpp"

using namespace sitfuse;

TEST_CASE("SplitMix64: reference outputs pin the algorithm and constants") {
    SplitMix64 g(0);
    CHECK(g.next_u64() == 0xE220A8397B1DCDAFULL);
    CHECK(g.next_u64() == 0x6E789E6AA1B965F4ULL);
    CHECK(g.next_u64() == 0x06C45D188009454FULL);
}

TEST_CASE("SplitMix64: identical seeds give identical streams") {
    SplitMix64 a(987654321), b(987654321);
    for (int i = 0; i < 1000; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("SplitMix64: uniform doubles live in [0,1) with uniform moments") {
    SplitMix64 g(11);
    double sum = 0.0, sq = 0.0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
        const double u = g.next_double();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        sum += u;
        sq += u * u;
    }
    const double mean = sum / n;
    const double var = sq / n - mean * mean;
    CHECK(mean == doctest::Approx(0.5).epsilon(0.01));
    CHECK(var == doctest::Approx(1.0 / 12.0).epsilon(0.03));
}

TEST_CASE("SplitMix64: next_below stays in range and covers it") {
    SplitMix64 g(77);
    std::set<uint64_t> seen;
    for (int i = 0; i < 2000; ++i) {
        const uint64_t r = g.next_below(7);
        CHECK(r < 7);
        seen.insert(r);
    }
    CHECK(seen.size() == 7);
    CHECK(g.next_below(1) == 0);
}

TEST_CASE("SplitMix64: next_range maps into [lo,hi)") {
    SplitMix64 g(5);
    for (int i = 0; i < 1000; ++i) {
        const double x = g.next_range(-3.0, 2.0);
        CHECK(x >= -3.0);
        CHECK(x < 2.0);
    }
}

TEST_CASE("SplitMix64: normal draws have standard moments") {
    SplitMix64 g(13);
    double sum = 0.0, sq = 0.0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
        const double x = g.next_normal();
        sum += x;
        sq += x * x;
    }
    const double mean = sum / n;
    const double var = sq / n - mean * mean;
    CHECK(std::abs(mean) < 0.02);
    CHECK(var == doctest::Approx(1.0).epsilon(0.02));

    SplitMix64 a(13), b(13);
    for (int i = 0; i < 100; ++i)
        CHECK(a.next_normal(2.0, 3.0) == doctest::Approx(2.0 + 3.0 * b.next_normal()).epsilon(1e-12));
}

TEST_CASE("SplitMix64: bernoulli frequency tracks p") {
    SplitMix64 g(29);
    int hits = 0;
    const int n = 50000;
    for (int i = 0; i < n; ++i) hits += g.next_bernoulli(0.3) ? 1 : 0;
    CHECK(static_cast<double>(hits) / n == doctest::Approx(0.3).epsilon(0.03));
}

TEST_CASE("derive_seed: deterministic and distinct across stream tags") {
    const uint64_t global = 20260814;
    CHECK(derive_seed(global, seed_tag::kEncoder) == derive_seed(global, seed_tag::kEncoder));

    const std::vector<uint64_t> tags{seed_tag::kSceneGen, seed_tag::kEncoder, seed_tag::kTree,
                                     seed_tag::kSampling, seed_tag::kLabels};
    std::set<uint64_t> derived;
    for (const uint64_t t : tags) derived.insert(derive_seed(global, t));
    CHECK(derived.size() == tags.size());

    CHECK(derive_seed(global, seed_tag::kTree) != derive_seed(global + 1, seed_tag::kTree));
}

TEST_CASE("GeoTransform: default is the identity map") {
    const GeoTransform t;
    double x = 0.0, y = 0.0;
    t.apply(3.5, 7.25, x, y);
    CHECK(x == 3.5);
    CHECK(y == 7.25);
    CHECK(t.det() == 1.0);
    CHECK(t.invertible());
}

TEST_CASE("GeoTransform: pixel centers sit at col+0.5, row+0.5") {
    GeoTransform t;
    t.g = {100.0, 2.0, 0.0, 50.0, 0.0, -2.0};
    double x = 0.0, y = 0.0;
    t.pixel_center_to_world(0, 0, x, y);
    CHECK(x == 101.0);
    CHECK(y == 49.0);
    t.pixel_center_to_world(3, 1, x, y);
    CHECK(x == 107.0);
    CHECK(y == 47.0);
}

TEST_CASE("GeoTransform: world_to_pixel inverts apply, rotation included") {
    GeoTransform t;
    t.g = {10.0, 0.6, -0.8, -5.0, 0.8, 0.6};  // rotation + translation
    REQUIRE(t.invertible());
    SplitMix64 g(3);
    for (int i = 0; i < 200; ++i) {
        const double u = g.next_range(-50.0, 50.0);
        const double v = g.next_range(-50.0, 50.0);
        double x = 0.0, y = 0.0, u2 = 0.0, v2 = 0.0;
        t.apply(u, v, x, y);
        t.world_to_pixel(x, y, u2, v2);
        CHECK(u2 == doctest::Approx(u).epsilon(1e-10));
        CHECK(v2 == doctest::Approx(v).epsilon(1e-10));
    }
}

TEST_CASE("GeoTransform: degenerate scale is not invertible") {
    GeoTransform t;
    t.g = {0.0, 1.0, 2.0, 0.0, 0.5, 1.0};  // rows proportional -> det 0
    CHECK(t.det() == 0.0);
    CHECK(!t.invertible());
}

TEST_CASE("collocate_grid: identical geometries give the identity mapping") {
    GridGeometry grid;
    grid.width = 5;
    grid.height = 4;
    const auto idx = scene::collocate_grid(grid, {}, grid);
    REQUIRE(idx.size() == 20);
    for (long i = 0; i < 20; ++i) CHECK(idx[static_cast<size_t>(i)] == i);
}

TEST_CASE("collocate_grid: invalid source pixels map to none") {
    GridGeometry grid;
    grid.width = 3;
    grid.height = 2;
    std::vector<uint8_t> valid(6, 1);
    valid[4] = 0;
    const auto idx = scene::collocate_grid(grid, valid, grid);
    for (long i = 0; i < 6; ++i) {
        if (i == 4)
            CHECK(idx[static_cast<size_t>(i)] == -1);
        else
            CHECK(idx[static_cast<size_t>(i)] == i);
    }
}

TEST_CASE("collocate_grid: 2x coarser destination picks a nearest source pixel") {
    GridGeometry src;
    src.width = 8;
    src.height = 8;
    GridGeometry dst;
    dst.width = 4;
    dst.height = 4;
    dst.transform.g = {0.0, 2.0, 0.0, 0.0, 0.0, 2.0};

    const auto idx = scene::collocate_grid(src, {}, dst);
    REQUIRE(idx.size() == 16);
    for (int dr = 0; dr < 4; ++dr) {
        for (int dc = 0; dc < 4; ++dc) {
            const int64_t mapped = idx[static_cast<size_t>(dr) * 4 + dc];
            REQUIRE(mapped >= 0);
            double cx = 0.0, cy = 0.0;
            dst.transform.pixel_center_to_world(dc, dr, cx, cy);

            // Brute-force: the mapped pixel's center must be at the minimum
            // world distance over every source pixel.
            double best = 1e300;
            for (int sr = 0; sr < 8; ++sr) {
                for (int sc = 0; sc < 8; ++sc) {
                    double px = 0.0, py = 0.0;
                    src.transform.pixel_center_to_world(sc, sr, px, py);
                    best = std::min(best, std::hypot(px - cx, py - cy));
                }
            }
            const int mr = static_cast<int>(mapped / 8);
            const int mc = static_cast<int>(mapped % 8);
            double mx = 0.0, my = 0.0;
            src.transform.pixel_center_to_world(mc, mr, mx, my);
            CHECK(std::hypot(mx - cx, my - cy) == doctest::Approx(best).epsilon(1e-12));
        }
    }
}

TEST_CASE("collocate_grid: disjoint extents map everything to none") {
    GridGeometry src;
    src.width = 4;
    src.height = 4;
    GridGeometry dst = src;
    dst.transform.g[0] = 100.0;
    dst.transform.g[3] = 100.0;
    for (const int64_t i : scene::collocate_grid(src, {}, dst)) CHECK(i == -1);
}

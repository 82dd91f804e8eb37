#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "sitfuse/rng.hpp"
#include "sitfuse/scene.hpp"

using namespace sitfuse;
using scene::ClassCode;
using scene::RasterScene;

namespace fs = std::filesystem;

namespace {

RasterScene make_scene(int width, int height, int bands, uint64_t seed) {
    RasterScene s;
    s.width = width;
    s.height = height;
    s.band_count = bands;
    s.data.resize(static_cast<size_t>(width) * height * bands);
    s.valid.assign(static_cast<size_t>(width) * height, 1);
    s.timestamp = 1234.5;
    s.sensor_id = "synth-a";
    for (int b = 0; b < bands; ++b) s.band_names.push_back("band" + std::to_string(b));
    SplitMix64 rng(seed);
    for (auto& v : s.data) v = static_cast<float>(rng.next_normal(0.0, 1.0));
    return s;
}

fs::path temp_file(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / name;
    fs::remove(p);
    fs::remove(fs::path(p).replace_extension(".json"));
    return p;
}

scene::LabelPolygon square(ClassCode cls, double x0, double y0, double x1, double y1) {
    scene::LabelPolygon poly;
    poly.cls = cls;
    poly.rings = {{{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}}};
    return poly;
}

}  // namespace

TEST_CASE("class codes: names round-trip and reject unknowns") {
    for (const ClassCode c : {ClassCode::Smoke, ClassCode::Fire, ClassCode::SmokeBg, ClassCode::FireBg})
        CHECK(scene::class_from_name(scene::class_name(c)) == c);
    CHECK(scene::class_bit(ClassCode::Smoke) == 1);
    CHECK(scene::class_bit(ClassCode::Fire) == 2);
    CHECK(scene::class_bit(ClassCode::SmokeBg) == 4);
    CHECK(scene::class_bit(ClassCode::FireBg) == 8);
    CHECK_THROWS_AS(scene::class_from_name("lava"), scene::SceneError);
}

TEST_CASE("raster round-trip: random scenes come back bit-exact") {
    for (uint64_t seed = 1; seed <= 5; ++seed) {
        RasterScene s = make_scene(7, 5, 3, seed);
        SplitMix64 rng(seed ^ 0xF00);
        for (auto& ok : s.valid) ok = rng.next_bernoulli(0.8) ? 1 : 0;
        s.geotransform.g = {3.0, 0.5, 0.0, -2.0, 0.0, -0.5};

        const fs::path p = temp_file("sitfuse_rt_" + std::to_string(seed) + ".bin");
        scene::save_raster(s, p);
        const RasterScene r = scene::load_raster(p);
        fs::remove(p);
        fs::remove(fs::path(p).replace_extension(".json"));

        CHECK(r.width == s.width);
        CHECK(r.height == s.height);
        CHECK(r.band_count == s.band_count);
        CHECK(r.valid == s.valid);
        CHECK(r.geotransform == s.geotransform);
        CHECK(r.timestamp == s.timestamp);
        CHECK(r.sensor_id == s.sensor_id);
        CHECK(r.band_names == s.band_names);
        bool all_equal = true;
        for (int b = 0; b < s.band_count; ++b)
            for (int row = 0; row < s.height; ++row)
                for (int col = 0; col < s.width; ++col)
                    if (s.is_valid(row, col) && r.at(b, row, col) != s.at(b, row, col))
                        all_equal = false;
        CHECK(all_equal);
    }
}

TEST_CASE("raster round-trip: all-invalid scene keeps its validity mask") {
    RasterScene s = make_scene(4, 3, 2, 9);
    s.valid.assign(s.valid.size(), 0);
    const fs::path p = temp_file("sitfuse_rt_invalid.bin");
    scene::save_raster(s, p);
    const RasterScene r = scene::load_raster(p);
    fs::remove(p);
    fs::remove(fs::path(p).replace_extension(".json"));
    CHECK(std::all_of(r.valid.begin(), r.valid.end(), [](uint8_t v) { return v == 0; }));
}

TEST_CASE("raster format: 1x1x1 scene writes exactly 4 payload bytes") {
    RasterScene s;
    s.width = s.height = s.band_count = 1;
    s.data = {0.0f};
    s.valid = {1};
    s.band_names = {"b"};
    const fs::path p = temp_file("sitfuse_rt_tiny.bin");
    scene::save_raster(s, p);
    CHECK(fs::file_size(p) == 4);
    CHECK(fs::exists(fs::path(p).replace_extension(".json")));
    fs::remove(p);
    fs::remove(fs::path(p).replace_extension(".json"));
}

TEST_CASE("load_raster: truncated payload reports a length mismatch") {
    RasterScene s = make_scene(4, 4, 2, 2);
    const fs::path p = temp_file("sitfuse_rt_short.bin");
    scene::save_raster(s, p);
    fs::resize_file(p, 16);
    CHECK_THROWS_WITH_AS(scene::load_raster(p), doctest::Contains("length mismatch"),
                         scene::SceneError);
    fs::remove(p);
    fs::remove(fs::path(p).replace_extension(".json"));
}

TEST_CASE("compute_band_stats: hand-checked values and nodata masking") {
    RasterScene s;
    s.width = 2;
    s.height = 2;
    s.band_count = 1;
    s.band_names = {"b"};
    s.valid.assign(4, 1);

    s.data = {2.0f, 2.0f, 2.0f, 2.0f};
    auto stats = scene::compute_band_stats(s);
    CHECK(stats.mean[0] == 2.0);
    CHECK(stats.stddev[0] == 0.0);
    CHECK(stats.pixel_count == 4);

    s.data = {1.0f, 3.0f, 1.0f, 3.0f};
    stats = scene::compute_band_stats(s);
    CHECK(stats.mean[0] == 2.0);
    CHECK(stats.stddev[0] == 1.0);

    s.data = {1.0f, 3.0f, -999.0f, -999.0f};
    s.valid = {1, 1, 0, 0};
    stats = scene::compute_band_stats(s);
    CHECK(stats.mean[0] == 2.0);
    CHECK(stats.stddev[0] == 1.0);
    CHECK(stats.pixel_count == 2);

    s.valid.assign(4, 0);
    CHECK_THROWS_AS(scene::compute_band_stats(s), scene::SceneError);
}

TEST_CASE("extract_samples: radius 0 keeps raw values under identity stats") {
    RasterScene s = make_scene(3, 3, 1, 4);
    scene::BandStats stats;
    stats.mean = {0.0};
    stats.stddev = {1.0};
    stats.pixel_count = 9;
    const auto set = scene::extract_samples(s, stats, 0);
    CHECK(set.count == 9);
    CHECK(set.feature_dim == 1);
    for (long i = 0; i < set.count; ++i) {
        const auto [row, col] = set.coords[static_cast<size_t>(i)];
        CHECK(set.row(i)[0] == s.at(0, row, col));
    }
}

TEST_CASE("extract_samples: radius 1 on 3x3 keeps only the center, window band-major") {
    RasterScene s = make_scene(3, 3, 2, 6);
    scene::BandStats stats;
    stats.mean = {0.0, 0.0};
    stats.stddev = {1.0, 1.0};
    stats.pixel_count = 9;
    const auto set = scene::extract_samples(s, stats, 1);
    REQUIRE(set.count == 1);
    CHECK(set.feature_dim == 18);
    CHECK(set.coords[0] == std::pair<int, int>(1, 1));
    // Band-major then row-major within the window.
    int k = 0;
    for (int b = 0; b < 2; ++b)
        for (int row = 0; row < 3; ++row)
            for (int col = 0; col < 3; ++col) CHECK(set.row(0)[k++] == s.at(b, row, col));
}

TEST_CASE("extract_samples: zero-variance band maps to zero via the epsilon guard") {
    RasterScene s = make_scene(3, 3, 1, 8);
    std::fill(s.data.begin(), s.data.end(), 5.0f);
    const auto stats = scene::compute_band_stats(s);
    const auto set = scene::extract_samples(s, stats, 0);
    for (long i = 0; i < set.count; ++i) CHECK(set.row(i)[0] == 0.0f);
}

TEST_CASE("extract_samples: standardized features have mean ~0 and std ~1") {
    RasterScene s = make_scene(24, 24, 3, 12);
    const auto stats = scene::compute_band_stats(s);
    const auto set = scene::extract_samples(s, stats, 0);
    REQUIRE(set.count == 24 * 24);
    for (int b = 0; b < 3; ++b) {
        double sum = 0.0, sq = 0.0;
        for (long i = 0; i < set.count; ++i) {
            sum += set.row(i)[b];
            sq += static_cast<double>(set.row(i)[b]) * set.row(i)[b];
        }
        const double mean = sum / static_cast<double>(set.count);
        const double sd = std::sqrt(sq / static_cast<double>(set.count) - mean * mean);
        CHECK(std::abs(mean) <= 1e-5);
        CHECK(std::abs(sd - 1.0) <= 1e-3);
    }
}

TEST_CASE("extract_samples: features do not depend on the geotransform") {
    RasterScene s = make_scene(6, 6, 2, 14);
    const auto stats = scene::compute_band_stats(s);
    const auto base = scene::extract_samples(s, stats, 1);
    s.geotransform.g = {500.0, 3.0, 0.0, -200.0, 0.0, -3.0};
    const auto moved = scene::extract_samples(s, stats, 1);
    CHECK(base.features == moved.features);
    CHECK(base.coords == moved.coords);
}

TEST_CASE("point_in_polygon: even-odd rule with boundary inside") {
    const auto poly = square(ClassCode::Smoke, 0.0, 0.0, 2.0, 2.0);
    CHECK(scene::point_in_polygon(poly, 1.0, 1.0));
    CHECK(scene::point_in_polygon(poly, 0.0, 1.0));   // edge
    CHECK(scene::point_in_polygon(poly, 0.0, 0.0));   // corner
    CHECK(!scene::point_in_polygon(poly, 2.5, 1.0));
    CHECK(!scene::point_in_polygon(poly, -0.1, 1.0));

    // A hole (second ring) flips containment inside it.
    scene::LabelPolygon holed = poly;
    holed.rings.push_back({{0.5, 0.5}, {1.5, 0.5}, {1.5, 1.5}, {0.5, 1.5}});
    CHECK(!scene::point_in_polygon(holed, 1.0, 1.0));
    CHECK(scene::point_in_polygon(holed, 0.25, 0.25));
}

TEST_CASE("rasterize_polygons: full cover, empty set, and overlapping classes") {
    RasterScene target = make_scene(2, 2, 1, 1);

    scene::LabelPolygonSet cover;
    cover.polygons.push_back(square(ClassCode::Smoke, 0.0, 0.0, 2.0, 2.0));
    const auto full = scene::rasterize_polygons(cover, target);
    for (int row = 0; row < 2; ++row)
        for (int col = 0; col < 2; ++col)
            CHECK(full.at(row, col) == scene::class_bit(ClassCode::Smoke));

    const auto empty = scene::rasterize_polygons({}, target);
    for (int row = 0; row < 2; ++row)
        for (int col = 0; col < 2; ++col) CHECK(empty.at(row, col) == 0);

    scene::LabelPolygonSet both;
    both.polygons.push_back(square(ClassCode::Smoke, 0.0, 0.0, 1.0, 1.0));
    both.polygons.push_back(square(ClassCode::Fire, 0.0, 0.0, 1.0, 1.0));
    const auto overlap = scene::rasterize_polygons(both, target);
    CHECK(overlap.at(0, 0) ==
          (scene::class_bit(ClassCode::Smoke) | scene::class_bit(ClassCode::Fire)));
    CHECK(overlap.at(1, 1) == 0);
}

TEST_CASE("rasterize_polygons: commutes with polygon order") {
    RasterScene target = make_scene(8, 8, 1, 2);
    scene::LabelPolygonSet a;
    a.polygons.push_back(square(ClassCode::Smoke, 0.0, 0.0, 5.0, 5.0));
    a.polygons.push_back(square(ClassCode::Fire, 3.0, 3.0, 8.0, 8.0));
    a.polygons.push_back(square(ClassCode::SmokeBg, 1.0, 6.0, 4.0, 8.0));
    scene::LabelPolygonSet b;
    b.polygons = {a.polygons[2], a.polygons[0], a.polygons[1]};
    const auto ra = scene::rasterize_polygons(a, target);
    const auto rb = scene::rasterize_polygons(b, target);
    CHECK(ra.bits == rb.bits);
}

TEST_CASE("polygons: GeoJSON round-trip preserves classes and vertices") {
    scene::LabelPolygonSet set;
    set.polygons.push_back(square(ClassCode::Smoke, 0.25, 0.5, 4.75, 3.5));
    set.polygons.push_back(square(ClassCode::FireBg, -2.0, -1.0, 0.0, 1.0));

    const fs::path p = temp_file("sitfuse_labels_rt.geojson");
    scene::save_polygons(set, p);
    const auto loaded = scene::load_polygons(p);
    fs::remove(p);

    REQUIRE(loaded.polygons.size() == 2);
    for (size_t i = 0; i < 2; ++i) {
        CHECK(loaded.polygons[i].cls == set.polygons[i].cls);
        CHECK(loaded.polygons[i].rings == set.polygons[i].rings);
    }
}

TEST_CASE("load_polygons: degenerate rings are rejected at parse") {
    const fs::path p = temp_file("sitfuse_labels_bad.geojson");
    std::ofstream f(p);
    f << R"({"type":"FeatureCollection","features":[{"type":"Feature",)"
      << R"("properties":{"class":"smoke"},)"
      << R"("geometry":{"type":"Polygon","coordinates":[[[0,0],[1,0]]]}}]})";
    f.close();
    CHECK_THROWS_WITH_AS(scene::load_polygons(p), doctest::Contains("degenerate"),
                         scene::SceneError);
    fs::remove(p);
}

TEST_CASE("validate: payload and mask sizes must match the declared shape") {
    RasterScene s = make_scene(3, 2, 1, 5);
    s.data.pop_back();
    CHECK_THROWS_WITH_AS(s.validate(), doctest::Contains("length mismatch"), scene::SceneError);

    RasterScene m = make_scene(3, 2, 1, 5);
    m.valid.pop_back();
    CHECK_THROWS_AS(m.validate(), scene::SceneError);
}

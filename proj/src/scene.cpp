#include "sitfuse/scene.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include <json.hpp>

namespace sitfuse::scene {

namespace {

using nlohmann::json;

constexpr float kStdFloor = 1e-6f;

bool matches_nodata(float v, float nodata) {
    if (std::isnan(nodata)) return std::isnan(v);
    return v == nodata;
}

std::filesystem::path payload_path(const std::filesystem::path& path) {
    std::filesystem::path p = path;
    if (p.extension() == ".json") p.replace_extension(".bin");
    if (p.extension() != ".bin") p += ".bin";
    return p;
}

std::filesystem::path sidecar_path(const std::filesystem::path& path) {
    std::filesystem::path p = payload_path(path);
    p.replace_extension(".json");
    return p;
}

}  // namespace

const char* class_name(ClassCode c) {
    switch (c) {
        case ClassCode::Smoke: return "smoke";
        case ClassCode::Fire: return "fire";
        case ClassCode::SmokeBg: return "smoke_background";
        case ClassCode::FireBg: return "fire_background";
    }
    return "unknown";
}

ClassCode class_from_name(const std::string& name) {
    if (name == "smoke") return ClassCode::Smoke;
    if (name == "fire") return ClassCode::Fire;
    if (name == "smoke_background") return ClassCode::SmokeBg;
    if (name == "fire_background") return ClassCode::FireBg;
    throw SceneError("unknown label class '" + name + "'");
}

void RasterScene::validate() const {
    if (width <= 0 || height <= 0 || band_count <= 0)
        throw SceneError("raster dimensions must be positive");
    const size_t expect = static_cast<size_t>(width) * height * band_count;
    if (data.size() != expect)
        throw SceneError("raster payload length mismatch: have " + std::to_string(data.size()) +
                         " values, expected " + std::to_string(expect));
    if (valid.size() != static_cast<size_t>(width) * height)
        throw SceneError("validity mask size mismatch");
    if (!geotransform.invertible())
        throw SceneError("geotransform is not invertible");
    for (int b = 0; b < band_count; ++b)
        for (int r = 0; r < height; ++r)
            for (int c = 0; c < width; ++c)
                if (is_valid(r, c) && !std::isfinite(at(b, r, c)))
                    throw SceneError("non-finite value at valid pixel");
}

RasterScene load_raster(const std::filesystem::path& path) {
    const auto header_file = sidecar_path(path);
    const auto bin_file = payload_path(path);

    std::ifstream hf(header_file);
    if (!hf) throw SceneError("missing raster header " + header_file.string());
    json header;
    try {
        hf >> header;
    } catch (const json::exception& e) {
        throw SceneError("corrupt raster header " + header_file.string() + ": " + e.what());
    }

    RasterScene scene;
    try {
        scene.width = header.at("width").get<int>();
        scene.height = header.at("height").get<int>();
        scene.band_count = header.at("bands").get<int>();
        scene.nodata = header.at("nodata").get<float>();
        const auto gt = header.at("geotransform");
        for (int i = 0; i < 6; ++i) scene.geotransform.g[i] = gt.at(i).get<double>();
        scene.timestamp = header.value("timestamp", 0.0);
        scene.sensor_id = header.value("sensor_id", std::string{});
        scene.band_names = header.value("band_names", std::vector<std::string>{});
    } catch (const json::exception& e) {
        throw SceneError("corrupt raster header " + header_file.string() + ": " + e.what());
    }
    if (scene.width <= 0 || scene.height <= 0 || scene.band_count <= 0)
        throw SceneError("raster header declares non-positive dimensions");
    if (!scene.geotransform.invertible())
        throw SceneError("raster header declares non-invertible geotransform");

    std::ifstream bf(bin_file, std::ios::binary);
    if (!bf) throw SceneError("missing raster payload " + bin_file.string());
    bf.seekg(0, std::ios::end);
    const auto nbytes = static_cast<size_t>(bf.tellg());
    bf.seekg(0);
    const size_t expect = static_cast<size_t>(scene.width) * scene.height * scene.band_count;
    if (nbytes != expect * sizeof(float))
        throw SceneError("raster payload length mismatch in " + bin_file.string() + ": " +
                         std::to_string(nbytes) + " bytes, expected " +
                         std::to_string(expect * sizeof(float)));
    scene.data.resize(expect);
    bf.read(reinterpret_cast<char*>(scene.data.data()), static_cast<std::streamsize>(nbytes));
    if (!bf) throw SceneError("short read on raster payload " + bin_file.string());

    const size_t npix = static_cast<size_t>(scene.width) * scene.height;
    scene.valid.assign(npix, 1);
    for (int b = 0; b < scene.band_count; ++b) {
        const float* band = scene.data.data() + static_cast<size_t>(b) * npix;
        for (size_t p = 0; p < npix; ++p)
            if (matches_nodata(band[p], scene.nodata)) scene.valid[p] = 0;
    }
    scene.validate();
    return scene;
}

void save_raster(const RasterScene& scene, const std::filesystem::path& path) {
    scene.validate();
    const auto header_file = sidecar_path(path);
    const auto bin_file = payload_path(path);

    json header;
    header["width"] = scene.width;
    header["height"] = scene.height;
    header["bands"] = scene.band_count;
    header["nodata"] = scene.nodata;
    header["geotransform"] = scene.geotransform.g;
    header["timestamp"] = scene.timestamp;
    header["sensor_id"] = scene.sensor_id;
    header["band_names"] = scene.band_names;

    std::ofstream hf(header_file);
    if (!hf) throw SceneError("cannot write raster header " + header_file.string());
    hf << header.dump(2) << "\n";
    if (!hf.flush()) throw SceneError("failed writing raster header " + header_file.string());

    std::vector<float> payload = scene.data;
    const size_t npix = static_cast<size_t>(scene.width) * scene.height;
    for (int b = 0; b < scene.band_count; ++b) {
        float* band = payload.data() + static_cast<size_t>(b) * npix;
        for (size_t p = 0; p < npix; ++p)
            if (!scene.valid[p]) band[p] = scene.nodata;
    }
    std::ofstream bf(bin_file, std::ios::binary);
    if (!bf) throw SceneError("cannot write raster payload " + bin_file.string());
    bf.write(reinterpret_cast<const char*>(payload.data()),
             static_cast<std::streamsize>(payload.size() * sizeof(float)));
    if (!bf.flush()) throw SceneError("failed writing raster payload " + bin_file.string());
}

BandStats compute_band_stats(const RasterScene& scene) {
    scene.validate();
    const size_t npix = static_cast<size_t>(scene.width) * scene.height;
    long n_valid = 0;
    for (size_t p = 0; p < npix; ++p) n_valid += scene.valid[p] ? 1 : 0;
    if (n_valid == 0) throw SceneError("cannot compute band stats: no valid pixels");

    BandStats stats;
    stats.pixel_count = n_valid;
    stats.mean.resize(scene.band_count);
    stats.stddev.resize(scene.band_count);
    for (int b = 0; b < scene.band_count; ++b) {
        const float* band = scene.data.data() + static_cast<size_t>(b) * npix;
        double sum = 0.0;
        for (size_t p = 0; p < npix; ++p)
            if (scene.valid[p]) sum += band[p];
        const double mean = sum / static_cast<double>(n_valid);
        double sq = 0.0;
        for (size_t p = 0; p < npix; ++p)
            if (scene.valid[p]) {
                const double d = band[p] - mean;
                sq += d * d;
            }
        stats.mean[b] = mean;
        stats.stddev[b] = std::sqrt(sq / static_cast<double>(n_valid));
    }
    return stats;
}

SampleSet extract_samples(const RasterScene& scene, const BandStats& stats, int radius) {
    if (stats.band_count() != scene.band_count)
        throw SceneError("band stats band count does not match scene");
    if (radius < 0) throw SceneError("window radius must be >= 0");

    const int side = 2 * radius + 1;
    SampleSet set;
    set.feature_dim = scene.band_count * side * side;
    set.scene_ref = scene.sensor_id;

    std::vector<double> inv_std(scene.band_count);
    for (int b = 0; b < scene.band_count; ++b)
        inv_std[b] = 1.0 / std::max(stats.stddev[b], static_cast<double>(kStdFloor));

    for (int r = radius; r < scene.height - radius; ++r) {
        for (int c = radius; c < scene.width - radius; ++c) {
            bool ok = true;
            for (int dr = -radius; dr <= radius && ok; ++dr)
                for (int dc = -radius; dc <= radius; ++dc)
                    if (!scene.is_valid(r + dr, c + dc)) {
                        ok = false;
                        break;
                    }
            if (!ok) continue;
            for (int b = 0; b < scene.band_count; ++b)
                for (int dr = -radius; dr <= radius; ++dr)
                    for (int dc = -radius; dc <= radius; ++dc) {
                        const double v = scene.at(b, r + dr, c + dc);
                        set.features.push_back(static_cast<float>((v - stats.mean[b]) * inv_std[b]));
                    }
            set.coords.emplace_back(r, c);
        }
    }
    set.count = static_cast<long>(set.coords.size());
    return set;
}

LabelPolygonSet load_polygons(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw SceneError("missing label file " + path.string());
    json doc;
    try {
        f >> doc;
    } catch (const json::exception& e) {
        throw SceneError("corrupt label file " + path.string() + ": " + e.what());
    }
    if (doc.value("type", std::string{}) != "FeatureCollection")
        throw SceneError("label file is not a GeoJSON FeatureCollection");

    LabelPolygonSet set;
    for (const auto& feature : doc.at("features")) {
        LabelPolygon poly;
        poly.cls = class_from_name(feature.at("properties").at("class").get<std::string>());
        const auto& geom = feature.at("geometry");
        if (geom.at("type").get<std::string>() != "Polygon")
            throw SceneError("label geometry must be Polygon");
        for (const auto& ring : geom.at("coordinates")) {
            std::vector<std::array<double, 2>> vertices;
            for (const auto& pt : ring)
                vertices.push_back({pt.at(0).get<double>(), pt.at(1).get<double>()});
            // GeoJSON rings repeat the first vertex at the end; drop it.
            if (vertices.size() >= 2 && vertices.front() == vertices.back()) vertices.pop_back();
            if (vertices.size() < 3)
                throw SceneError("degenerate polygon ring with fewer than 3 vertices");
            poly.rings.push_back(std::move(vertices));
        }
        if (poly.rings.empty()) throw SceneError("polygon feature without rings");
        set.polygons.push_back(std::move(poly));
    }
    return set;
}

void save_polygons(const LabelPolygonSet& labels, const std::filesystem::path& path) {
    json features = json::array();
    for (const auto& poly : labels.polygons) {
        json rings = json::array();
        for (const auto& ring : poly.rings) {
            json coords = json::array();
            for (const auto& v : ring) coords.push_back({v[0], v[1]});
            coords.push_back({ring.front()[0], ring.front()[1]});
            rings.push_back(coords);
        }
        features.push_back({{"type", "Feature"},
                            {"properties", {{"class", class_name(poly.cls)}}},
                            {"geometry", {{"type", "Polygon"}, {"coordinates", rings}}}});
    }
    json doc = {{"type", "FeatureCollection"}, {"features", features}};
    std::ofstream f(path);
    if (!f) throw SceneError("cannot write label file " + path.string());
    f << doc.dump(2) << "\n";
}

namespace {

// Point on segment [a,b], inclusive of endpoints.
bool on_segment(double px, double py, const std::array<double, 2>& a, const std::array<double, 2>& b) {
    const double cross = (b[0] - a[0]) * (py - a[1]) - (b[1] - a[1]) * (px - a[0]);
    if (cross != 0.0) return false;
    return px >= std::min(a[0], b[0]) && px <= std::max(a[0], b[0]) &&
           py >= std::min(a[1], b[1]) && py <= std::max(a[1], b[1]);
}

}  // namespace

bool point_in_polygon(const LabelPolygon& poly, double x, double y) {
    bool inside = false;
    for (const auto& ring : poly.rings) {
        const size_t n = ring.size();
        for (size_t i = 0, j = n - 1; i < n; j = i++) {
            const auto& a = ring[j];
            const auto& b = ring[i];
            if (on_segment(x, y, a, b)) return true;  // boundary counts as inside
            if ((b[1] > y) != (a[1] > y)) {
                const double xc = b[0] + (y - b[1]) * (a[0] - b[0]) / (a[1] - b[1]);
                if (x < xc) inside = !inside;
            }
        }
    }
    return inside;
}

LabelRaster rasterize_polygons(const LabelPolygonSet& labels, const RasterScene& target) {
    if (!target.geotransform.invertible())
        throw SceneError("cannot rasterize: non-invertible geotransform");
    LabelRaster raster;
    raster.width = target.width;
    raster.height = target.height;
    raster.bits.assign(static_cast<size_t>(target.width) * target.height, 0);
    for (int r = 0; r < target.height; ++r) {
        for (int c = 0; c < target.width; ++c) {
            double x = 0.0, y = 0.0;
            target.geotransform.pixel_center_to_world(c, r, x, y);
            uint8_t bits = 0;
            for (const auto& poly : labels.polygons)
                if (point_in_polygon(poly, x, y)) bits |= class_bit(poly.cls);
            raster.bits[static_cast<size_t>(r) * target.width + c] = bits;
        }
    }
    return raster;
}

std::vector<int64_t> collocate_grid(const GridGeometry& src, const std::vector<uint8_t>& src_valid,
                                    const GridGeometry& dst) {
    if (!src.transform.invertible() || !dst.transform.invertible())
        throw SceneError("collocation requires invertible geotransforms");
    std::vector<int64_t> mapping(dst.pixel_count(), -1);
    for (int r = 0; r < dst.height; ++r) {
        for (int c = 0; c < dst.width; ++c) {
            double x = 0.0, y = 0.0;
            dst.transform.pixel_center_to_world(c, r, x, y);
            double u = 0.0, v = 0.0;
            src.transform.world_to_pixel(x, y, u, v);
            const auto sc = static_cast<long>(std::floor(u));
            const auto sr = static_cast<long>(std::floor(v));
            if (sc < 0 || sr < 0 || sc >= src.width || sr >= src.height) continue;
            const int64_t idx = sr * src.width + sc;
            if (!src_valid.empty() && !src_valid[static_cast<size_t>(idx)]) continue;
            mapping[static_cast<size_t>(r) * dst.width + c] = idx;
        }
    }
    return mapping;
}

}  // namespace sitfuse::scene

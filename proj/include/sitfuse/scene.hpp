#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "sitfuse/geo.hpp"

namespace sitfuse::scene {

// All raster/label errors surface as SceneError with a one-line message.
class SceneError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class ClassCode : uint8_t { Smoke = 0, Fire = 1, SmokeBg = 2, FireBg = 3 };

inline constexpr uint8_t class_bit(ClassCode c) { return static_cast<uint8_t>(1u << static_cast<uint8_t>(c)); }

const char* class_name(ClassCode c);
ClassCode class_from_name(const std::string& name);

// Multi-band float raster. Payload layout is band-major then row-major
// (band 0 rows top to bottom, then band 1, ...). Validity is per pixel:
// an invalid pixel is invalid in every band and is written to disk as the
// nodata sentinel in every band.
struct RasterScene {
    int width = 0;
    int height = 0;
    int band_count = 0;
    std::vector<float> data;
    std::vector<uint8_t> valid;
    GeoTransform geotransform;
    double timestamp = 0.0;
    std::string sensor_id;
    std::vector<std::string> band_names;
    float nodata = -9999.0f;

    long pixel_count() const { return static_cast<long>(width) * height; }

    size_t index(int band, int row, int col) const {
        return (static_cast<size_t>(band) * height + row) * width + col;
    }
    float at(int band, int row, int col) const { return data[index(band, row, col)]; }
    float& at(int band, int row, int col) { return data[index(band, row, col)]; }
    bool is_valid(int row, int col) const { return valid[static_cast<size_t>(row) * width + col] != 0; }

    GridGeometry geometry() const { return GridGeometry{width, height, geotransform}; }

    // Throws SceneError if any structural invariant is violated.
    void validate() const;
};

struct BandStats {
    std::vector<double> mean;
    std::vector<double> stddev;
    long pixel_count = 0;

    int band_count() const { return static_cast<int>(mean.size()); }
};

// One feature row per pixel whose full (2r+1)^2 window is valid and in
// bounds, standardized per band. Rows are window values flattened band-major
// then row-major within the window.
struct SampleSet {
    int feature_dim = 0;
    long count = 0;
    std::vector<float> features;               // count * feature_dim, row-major
    std::vector<std::pair<int, int>> coords;   // (row,col) per sample
    std::string scene_ref;

    const float* row(long i) const { return features.data() + static_cast<size_t>(i) * feature_dim; }
};

struct LabelPolygon {
    ClassCode cls;
    // Rings of world-coordinate vertices; first is the outer ring. Point
    // containment uses the even-odd rule over all rings, so holes work.
    std::vector<std::vector<std::array<double, 2>>> rings;
};

struct LabelPolygonSet {
    std::vector<LabelPolygon> polygons;
};

// Per-pixel class bitset; 0 = unlabeled. Smoke and fire bits may co-occur.
struct LabelRaster {
    int width = 0;
    int height = 0;
    std::vector<uint8_t> bits;

    uint8_t at(int row, int col) const { return bits[static_cast<size_t>(row) * width + col]; }
};

// File I/O. `path` may point at the `.bin` payload or its stem; the sidecar
// header lives next to it as `<stem>.json`.
RasterScene load_raster(const std::filesystem::path& path);
void save_raster(const RasterScene& scene, const std::filesystem::path& path);

BandStats compute_band_stats(const RasterScene& scene);

SampleSet extract_samples(const RasterScene& scene, const BandStats& stats, int radius);

// GeoJSON FeatureCollection with polygon features carrying a "class"
// property in {smoke, fire, smoke_background, fire_background}.
LabelPolygonSet load_polygons(const std::filesystem::path& path);
void save_polygons(const LabelPolygonSet& labels, const std::filesystem::path& path);

// Pixel-center containment, even-odd rule; boundary points count as inside.
bool point_in_polygon(const LabelPolygon& poly, double x, double y);

LabelRaster rasterize_polygons(const LabelPolygonSet& labels, const RasterScene& target);

// Nearest-neighbor collocation: for every dst pixel, the flat index of the
// source pixel whose cell contains the dst pixel center, or -1 when outside
// src bounds or the src pixel is invalid. src_valid may be empty (all valid).
std::vector<int64_t> collocate_grid(const GridGeometry& src, const std::vector<uint8_t>& src_valid,
                                    const GridGeometry& dst);

}  // namespace sitfuse::scene

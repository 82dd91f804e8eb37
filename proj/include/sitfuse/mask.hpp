#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "sitfuse/geo.hpp"
#include "sitfuse/scene.hpp"

namespace sitfuse {

class MaskError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Per-target binary product of the pipeline. 1 only at valid pixels.
struct BinaryMask {
    int width = 0;
    int height = 0;
    std::vector<uint8_t> values;
    std::vector<uint8_t> valid;
    scene::ClassCode target = scene::ClassCode::Smoke;
    std::string scene_id;
    std::string tree_id;
    double timestamp = 0.0;

    uint8_t at(int row, int col) const { return values[static_cast<size_t>(row) * width + col]; }
    bool is_valid(int row, int col) const {
        return valid[static_cast<size_t>(row) * width + col] != 0;
    }
    long pixel_count() const { return static_cast<long>(width) * height; }
    long ones_count() const;

    void validate() const;
};

// Raster bridge so masks reuse the scene file format (single band, 0/1
// payload, invalid pixels as nodata).
scene::RasterScene mask_to_raster(const BinaryMask& mask, const GeoTransform& transform);
BinaryMask mask_from_raster(const scene::RasterScene& raster, scene::ClassCode target);

}  // namespace sitfuse

#include "sitfuse/mask.hpp"

#include <algorithm>

namespace sitfuse {

long BinaryMask::ones_count() const {
    long n = 0;
    for (const uint8_t v : values) n += v != 0;
    return n;
}

void BinaryMask::validate() const {
    if (width < 1 || height < 1) throw MaskError("mask has empty dimensions");
    const auto expected = static_cast<size_t>(width) * height;
    if (values.size() != expected || valid.size() != expected)
        throw MaskError("mask payload size does not match dimensions");
    for (size_t i = 0; i < expected; ++i) {
        if (values[i] > 1) throw MaskError("mask values must be 0 or 1");
        if (values[i] == 1 && valid[i] == 0) throw MaskError("mask is 1 at an invalid pixel");
    }
}

scene::RasterScene mask_to_raster(const BinaryMask& mask, const GeoTransform& transform) {
    mask.validate();
    scene::RasterScene raster;
    raster.width = mask.width;
    raster.height = mask.height;
    raster.band_count = 1;
    raster.geotransform = transform;
    raster.timestamp = mask.timestamp;
    raster.sensor_id = mask.scene_id;
    raster.band_names = {std::string(scene::class_name(mask.target)) + "_mask"};
    raster.valid = mask.valid;
    raster.data.resize(mask.values.size());
    for (size_t i = 0; i < mask.values.size(); ++i)
        raster.data[i] = mask.valid[i] ? static_cast<float>(mask.values[i]) : raster.nodata;
    raster.validate();
    return raster;
}

BinaryMask mask_from_raster(const scene::RasterScene& raster, scene::ClassCode target) {
    raster.validate();
    if (raster.band_count != 1) throw MaskError("mask rasters must have exactly one band");
    BinaryMask mask;
    mask.width = raster.width;
    mask.height = raster.height;
    mask.target = target;
    mask.scene_id = raster.sensor_id;
    mask.timestamp = raster.timestamp;
    mask.valid = raster.valid;
    mask.values.resize(raster.data.size());
    for (size_t i = 0; i < raster.data.size(); ++i) {
        const float v = raster.data[i];
        if (raster.valid[i] && v != 0.0f && v != 1.0f)
            throw MaskError("mask raster payload must be 0/1 at valid pixels");
        mask.values[i] = raster.valid[i] && v == 1.0f ? 1 : 0;
    }
    mask.validate();
    return mask;
}

}  // namespace sitfuse

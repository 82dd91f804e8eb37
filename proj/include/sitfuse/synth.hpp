#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "sitfuse/scene.hpp"

namespace sitfuse::synth {

// Synthetic multispectral scene description. Bands 0..band_count-2 are
// "visible"; the last band is "thermal" and is the only band carrying the
// fire signature. Class signature vectors must stay at least 15 degrees
// apart so the classes are spectrally separable.
struct SceneSpec {
    int width = 128;
    int height = 128;
    int band_count = 6;
    int n_clouds = 2;
    int n_plumes = 2;
    int n_fires = 2;
    float noise_sigma = 0.05f;
    uint64_t seed = 0;
    std::string sensor_id = "SYNTH";

    // Per-band mean amplitudes; empty means "use defaults for band_count".
    std::vector<float> background_amps;
    std::vector<float> cloud_amps;
    std::vector<float> plume_amps;
    std::vector<float> fire_amps;

    // Fills empty amplitude vectors with the built-in signatures.
    void apply_default_signatures();
    // Throws scene::SceneError on invalid dims/amplitudes/separation.
    void validate() const;
};

struct GroundTruth {
    int width = 0;
    int height = 0;
    std::vector<uint8_t> smoke;
    std::vector<uint8_t> fire;
    std::vector<uint8_t> cloud;

    bool smoke_at(int r, int c) const { return smoke[static_cast<size_t>(r) * width + c] != 0; }
    bool fire_at(int r, int c) const { return fire[static_cast<size_t>(r) * width + c] != 0; }
    bool cloud_at(int r, int c) const { return cloud[static_cast<size_t>(r) * width + c] != 0; }
};

std::pair<scene::RasterScene, GroundTruth> generate_scene(const SceneSpec& spec);

// Scene sequence with per-step advection (pixels/step). Plumes grow 5% per
// step along their axis; all other objects translate rigidly. Timestamps
// advance by 3600 s per step.
std::vector<std::pair<scene::RasterScene, GroundTruth>> generate_sequence(const SceneSpec& spec,
                                                                          int steps, double adv_dx,
                                                                          double adv_dy);

// Derives sparse high-certainty polygon labels from ground truth: class
// cores eroded by erode_px (backing off automatically if erosion would empty
// a nonempty mask) plus randomly placed background boxes kept at least
// bg_margin_px away from the class mask, so box pixels avoid the low-opacity
// fringe just outside the truth contour. Rectangles are emitted per maximal
// pixel run so rasterizing them reproduces the eroded cores exactly.
scene::LabelPolygonSet truth_to_polygons(const GroundTruth& truth, const GeoTransform& transform,
                                         int erode_px, int bg_margin_px, int n_bg_boxes,
                                         int bg_box_size, uint64_t seed);

// Binary morphology on uint8 grids (square structuring element).
std::vector<uint8_t> erode_mask(const std::vector<uint8_t>& mask, int width, int height, int radius);
std::vector<uint8_t> dilate_mask(const std::vector<uint8_t>& mask, int width, int height, int radius);

}  // namespace sitfuse::synth

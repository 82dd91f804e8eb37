#include "sitfuse/synth.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "sitfuse/rng.hpp"

namespace sitfuse::synth {

namespace {

using scene::RasterScene;
using scene::SceneError;

constexpr double kPlumeGrowthPerStep = 1.05;
constexpr double kStepSeconds = 3600.0;
constexpr double kMinSignatureAngleRad = 15.0 * 3.14159265358979323846 / 180.0;

// Object parameters are snapped to multiples of 1/256 so that translating
// them by integer advection stays exact in double arithmetic and shifted
// frames rasterize identically.
double snap(double v) { return std::round(v * 256.0) / 256.0; }

struct CloudParam {
    double cx, cy, ax, ay, cos_t, sin_t;
};

struct PlumeParam {
    double ox, oy, dir_x, dir_y, length, sigma;
};

struct FireParam {
    double ax, ay;  // anchor point (world-free pixel coordinates)
    std::vector<std::pair<int, int>> offsets;
};

struct SceneObjects {
    std::vector<CloudParam> clouds;
    std::vector<PlumeParam> plumes;
    std::vector<FireParam> fires;
};

std::vector<float> default_background(int bands) { return std::vector<float>(bands, 0.30f); }

std::vector<float> default_cloud(int bands) {
    std::vector<float> a(bands, 0.95f);
    a.back() = 0.15f;
    return a;
}

std::vector<float> default_plume(int bands) {
    std::vector<float> a(bands);
    const int nv = bands - 1;
    for (int i = 0; i < nv; ++i)
        a[i] = 0.70f - 0.52f * (nv > 1 ? static_cast<float>(i) / (nv - 1) : 0.0f);
    a.back() = 0.05f;
    return a;
}

std::vector<float> default_fire(int bands) {
    std::vector<float> a(bands, 0.05f);
    a.back() = 5.0f;
    return a;
}

double angle_between(const std::vector<float>& a, const std::vector<float>& b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        dot += static_cast<double>(a[i]) * b[i];
        na += static_cast<double>(a[i]) * a[i];
        nb += static_cast<double>(b[i]) * b[i];
    }
    const double denom = std::sqrt(na) * std::sqrt(nb);
    if (denom == 0.0) return 0.0;
    return std::acos(std::clamp(dot / denom, -1.0, 1.0));
}

SceneObjects layout_objects(const SceneSpec& spec) {
    SplitMix64 rng(derive_seed(spec.seed, seed_tag::kSceneGen));
    SceneObjects obj;
    const double w = spec.width;
    const double h = spec.height;
    const double scale = std::min(w, h);

    for (int i = 0; i < spec.n_clouds; ++i) {
        CloudParam c;
        c.cx = snap(rng.next_range(0.15 * w, 0.85 * w));
        c.cy = snap(rng.next_range(0.15 * h, 0.85 * h));
        c.ax = snap(rng.next_range(0.08, 0.16) * scale);
        c.ay = snap(rng.next_range(0.05, 0.12) * scale);
        const double theta = rng.next_range(0.0, 3.14159265358979323846);
        c.cos_t = std::cos(theta);
        c.sin_t = std::sin(theta);
        obj.clouds.push_back(c);
    }
    for (int i = 0; i < spec.n_plumes; ++i) {
        PlumeParam p;
        p.ox = snap(rng.next_range(0.20 * w, 0.80 * w));
        p.oy = snap(rng.next_range(0.20 * h, 0.80 * h));
        const double phi = rng.next_range(0.0, 2.0 * 3.14159265358979323846);
        p.dir_x = std::cos(phi);
        p.dir_y = std::sin(phi);
        p.length = snap(rng.next_range(0.25, 0.45) * scale);
        const double elongation = rng.next_range(3.0, 5.0);
        p.sigma = snap(std::max(1.0, p.length / elongation / 2.0));
        obj.plumes.push_back(p);
    }
    for (int i = 0; i < spec.n_fires; ++i) {
        FireParam f;
        if (spec.n_plumes > 0) {
            const auto& p = obj.plumes[static_cast<size_t>(i) % obj.plumes.size()];
            // Anchor a short distance down-axis so the blob sits inside the
            // dense end of the plume.
            f.ax = snap(p.ox + 1.5 * p.dir_x);
            f.ay = snap(p.oy + 1.5 * p.dir_y);
        } else {
            f.ax = snap(rng.next_range(0.2 * w, 0.8 * w));
            f.ay = snap(rng.next_range(0.2 * h, 0.8 * h));
        }
        static const std::vector<std::pair<int, int>> kBlobPattern = {{0, 0}, {0, 1}, {1, 0}, {1, 1}};
        const auto blob_size = static_cast<size_t>(1 + rng.next_below(4));
        f.offsets.assign(kBlobPattern.begin(), kBlobPattern.begin() + blob_size);
        obj.fires.push_back(std::move(f));
    }
    return obj;
}

std::pair<RasterScene, GroundTruth> render_step(const SceneSpec& spec, const SceneObjects& obj,
                                                int step, double adv_dx, double adv_dy) {
    const int w = spec.width;
    const int h = spec.height;
    const int nb = spec.band_count;
    const size_t npix = static_cast<size_t>(w) * h;

    RasterScene scn;
    scn.width = w;
    scn.height = h;
    scn.band_count = nb;
    scn.data.resize(npix * nb);
    scn.valid.assign(npix, 1);
    scn.timestamp = kStepSeconds * step;
    scn.sensor_id = spec.sensor_id;
    for (int b = 0; b < nb - 1; ++b) scn.band_names.push_back("band_" + std::to_string(b));
    scn.band_names.push_back("thermal");

    GroundTruth truth;
    truth.width = w;
    truth.height = h;
    truth.smoke.assign(npix, 0);
    truth.fire.assign(npix, 0);
    truth.cloud.assign(npix, 0);

    const double dx = adv_dx * step;
    const double dy = adv_dy * step;
    const double plume_scale = std::pow(kPlumeGrowthPerStep, step);

    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            const size_t p = static_cast<size_t>(r) * w + c;
            const double u = (w > 1) ? static_cast<double>(c) / (w - 1) : 0.0;
            const double v = (h > 1) ? static_cast<double>(r) / (h - 1) : 0.0;
            const double gradient = 0.7 + 0.4 * (0.6 * u + 0.4 * v);
            const double px = c + 0.5;
            const double py = r + 0.5;

            for (int b = 0; b < nb; ++b) scn.data[b * npix + p] = static_cast<float>(spec.background_amps[b] * gradient);

            for (const auto& cl : obj.clouds) {
                const double rx = px - (cl.cx + dx);
                const double ry = py - (cl.cy + dy);
                const double xr = rx * cl.cos_t + ry * cl.sin_t;
                const double yr = -rx * cl.sin_t + ry * cl.cos_t;
                if ((xr / cl.ax) * (xr / cl.ax) + (yr / cl.ay) * (yr / cl.ay) <= 1.0) {
                    for (int b = 0; b < nb; ++b) scn.data[b * npix + p] = spec.cloud_amps[b];
                    truth.cloud[p] = 1;
                }
            }

            for (const auto& pl : obj.plumes) {
                const double rx = px - (pl.ox + dx);
                const double ry = py - (pl.oy + dy);
                const double s = rx * pl.dir_x + ry * pl.dir_y;
                const double length = pl.length * plume_scale;
                if (s < 0.0 || s > length) continue;
                const double d = rx * pl.dir_y - ry * pl.dir_x;
                const double axial = 0.9 - 0.5 * (s / length);
                const double alpha = axial * std::exp(-(d * d) / (2.0 * pl.sigma * pl.sigma));
                if (alpha <= 0.01) continue;
                for (int b = 0; b < nb; ++b) {
                    const size_t i = b * npix + p;
                    scn.data[i] = static_cast<float>((1.0 - alpha) * scn.data[i] + alpha * spec.plume_amps[b]);
                }
                if (alpha > 0.5) truth.smoke[p] = 1;
            }
        }
    }

    for (const auto& f : obj.fires) {
        const auto base_c = static_cast<long>(std::floor(f.ax + dx));
        const auto base_r = static_cast<long>(std::floor(f.ay + dy));
        for (const auto& [orow, ocol] : f.offsets) {
            const long fc = base_c + ocol;
            const long fr = base_r + orow;
            if (fc < 0 || fr < 0 || fc >= w || fr >= h) continue;
            const size_t p = static_cast<size_t>(fr) * w + fc;
            scn.data[static_cast<size_t>(nb - 1) * npix + p] = spec.fire_amps[nb - 1];
            truth.fire[p] = 1;
            truth.cloud[p] = 0;  // cloud excludes fire by construction
        }
    }

    SplitMix64 noise(derive_seed(spec.seed, seed_tag::kSceneGen ^ (0x100ULL + static_cast<uint64_t>(step))));
    if (spec.noise_sigma > 0.0f) {
        for (float& value : scn.data) value += static_cast<float>(noise.next_normal(0.0, spec.noise_sigma));
    }
    return {std::move(scn), std::move(truth)};
}

}  // namespace

void SceneSpec::apply_default_signatures() {
    if (background_amps.empty()) background_amps = default_background(band_count);
    if (cloud_amps.empty()) cloud_amps = default_cloud(band_count);
    if (plume_amps.empty()) plume_amps = default_plume(band_count);
    if (fire_amps.empty()) fire_amps = default_fire(band_count);
}

void SceneSpec::validate() const {
    if (width <= 0 || height <= 0) throw SceneError("scene spec dimensions must be positive");
    if (band_count < 3) throw SceneError("scene spec needs at least 3 bands");
    if (n_clouds < 0 || n_plumes < 0 || n_fires < 0) throw SceneError("object counts must be >= 0");
    if (!(noise_sigma >= 0.0f)) throw SceneError("noise sigma must be >= 0");
    const std::vector<const std::vector<float>*> amps = {&background_amps, &cloud_amps, &plume_amps,
                                                         &fire_amps};
    for (const auto* a : amps) {
        if (static_cast<int>(a->size()) != band_count)
            throw SceneError("signature amplitude length must equal band count");
        for (float v : *a)
            if (!std::isfinite(v)) throw SceneError("signature amplitudes must be finite");
    }
    const std::vector<const std::vector<float>*> classes = {&cloud_amps, &plume_amps, &fire_amps};
    for (size_t i = 0; i < classes.size(); ++i)
        for (size_t j = i + 1; j < classes.size(); ++j)
            if (angle_between(*classes[i], *classes[j]) < kMinSignatureAngleRad)
                throw SceneError("class signatures closer than 15 degrees");
}

std::pair<RasterScene, GroundTruth> generate_scene(const SceneSpec& spec) {
    SceneSpec s = spec;
    s.apply_default_signatures();
    s.validate();
    return render_step(s, layout_objects(s), 0, 0.0, 0.0);
}

std::vector<std::pair<RasterScene, GroundTruth>> generate_sequence(const SceneSpec& spec, int steps,
                                                                   double adv_dx, double adv_dy) {
    if (steps < 1) throw SceneError("sequence needs at least one step");
    SceneSpec s = spec;
    s.apply_default_signatures();
    s.validate();
    const SceneObjects obj = layout_objects(s);
    std::vector<std::pair<RasterScene, GroundTruth>> frames;
    frames.reserve(static_cast<size_t>(steps));
    for (int t = 0; t < steps; ++t) frames.push_back(render_step(s, obj, t, adv_dx, adv_dy));
    return frames;
}

std::vector<uint8_t> erode_mask(const std::vector<uint8_t>& mask, int width, int height, int radius) {
    if (radius <= 0) return mask;
    std::vector<uint8_t> out(mask.size(), 0);
    for (int r = 0; r < height; ++r)
        for (int c = 0; c < width; ++c) {
            bool keep = mask[static_cast<size_t>(r) * width + c] != 0;
            for (int dr = -radius; dr <= radius && keep; ++dr)
                for (int dc = -radius; dc <= radius; ++dc) {
                    const int rr = r + dr, cc = c + dc;
                    if (rr < 0 || cc < 0 || rr >= height || cc >= width ||
                        mask[static_cast<size_t>(rr) * width + cc] == 0) {
                        keep = false;
                        break;
                    }
                }
            out[static_cast<size_t>(r) * width + c] = keep ? 1 : 0;
        }
    return out;
}

std::vector<uint8_t> dilate_mask(const std::vector<uint8_t>& mask, int width, int height, int radius) {
    if (radius <= 0) return mask;
    std::vector<uint8_t> out(mask.size(), 0);
    for (int r = 0; r < height; ++r)
        for (int c = 0; c < width; ++c) {
            bool hit = false;
            for (int dr = -radius; dr <= radius && !hit; ++dr)
                for (int dc = -radius; dc <= radius; ++dc) {
                    const int rr = r + dr, cc = c + dc;
                    if (rr >= 0 && cc >= 0 && rr < height && cc < width &&
                        mask[static_cast<size_t>(rr) * width + cc] != 0) {
                        hit = true;
                        break;
                    }
                }
            out[static_cast<size_t>(r) * width + c] = hit ? 1 : 0;
        }
    return out;
}

namespace {

bool mask_empty(const std::vector<uint8_t>& m) {
    return std::all_of(m.begin(), m.end(), [](uint8_t v) { return v == 0; });
}

// Largest erosion radius <= requested that keeps a nonempty mask.
std::vector<uint8_t> erode_with_backoff(const std::vector<uint8_t>& mask, int w, int h, int radius) {
    for (int e = radius; e > 0; --e) {
        auto eroded = erode_mask(mask, w, h, e);
        if (!mask_empty(eroded)) return eroded;
    }
    return mask;
}

void append_run_rectangles(scene::LabelPolygonSet& out, const std::vector<uint8_t>& mask, int w,
                           int h, scene::ClassCode cls, const GeoTransform& gt) {
    for (int r = 0; r < h; ++r) {
        int c = 0;
        while (c < w) {
            if (!mask[static_cast<size_t>(r) * w + c]) {
                ++c;
                continue;
            }
            int c1 = c;
            while (c1 + 1 < w && mask[static_cast<size_t>(r) * w + c1 + 1]) ++c1;
            scene::LabelPolygon poly;
            poly.cls = cls;
            std::vector<std::array<double, 2>> ring(4);
            const double corners[4][2] = {{static_cast<double>(c), static_cast<double>(r)},
                                          {static_cast<double>(c1 + 1), static_cast<double>(r)},
                                          {static_cast<double>(c1 + 1), static_cast<double>(r + 1)},
                                          {static_cast<double>(c), static_cast<double>(r + 1)}};
            for (int i = 0; i < 4; ++i) gt.apply(corners[i][0], corners[i][1], ring[i][0], ring[i][1]);
            poly.rings.push_back(std::move(ring));
            out.polygons.push_back(std::move(poly));
            c = c1 + 1;
        }
    }
}

void append_background_boxes(scene::LabelPolygonSet& out, const std::vector<uint8_t>& exclusion,
                             int w, int h, scene::ClassCode cls, const GeoTransform& gt, int n_boxes,
                             int box_size, SplitMix64& rng) {
    const int max_attempts = 60 * std::max(1, n_boxes);
    int placed = 0;
    for (int attempt = 0; attempt < max_attempts && placed < n_boxes; ++attempt) {
        if (w < box_size || h < box_size) break;
        const int c0 = static_cast<int>(rng.next_below(static_cast<uint64_t>(w - box_size + 1)));
        const int r0 = static_cast<int>(rng.next_below(static_cast<uint64_t>(h - box_size + 1)));
        bool clear = true;
        for (int r = r0; r < r0 + box_size && clear; ++r)
            for (int c = c0; c < c0 + box_size; ++c)
                if (exclusion[static_cast<size_t>(r) * w + c]) {
                    clear = false;
                    break;
                }
        if (!clear) continue;
        scene::LabelPolygon poly;
        poly.cls = cls;
        std::vector<std::array<double, 2>> ring(4);
        const double corners[4][2] = {{static_cast<double>(c0), static_cast<double>(r0)},
                                      {static_cast<double>(c0 + box_size), static_cast<double>(r0)},
                                      {static_cast<double>(c0 + box_size), static_cast<double>(r0 + box_size)},
                                      {static_cast<double>(c0), static_cast<double>(r0 + box_size)}};
        for (int i = 0; i < 4; ++i) gt.apply(corners[i][0], corners[i][1], ring[i][0], ring[i][1]);
        poly.rings.push_back(std::move(ring));
        out.polygons.push_back(std::move(poly));
        ++placed;
    }
}

}  // namespace

scene::LabelPolygonSet truth_to_polygons(const GroundTruth& truth, const GeoTransform& transform,
                                         int erode_px, int bg_margin_px, int n_bg_boxes,
                                         int bg_box_size, uint64_t seed) {
    scene::LabelPolygonSet out;
    const int w = truth.width;
    const int h = truth.height;
    SplitMix64 rng(derive_seed(seed, seed_tag::kLabels));

    if (!mask_empty(truth.smoke)) {
        const auto cores = erode_with_backoff(truth.smoke, w, h, erode_px);
        append_run_rectangles(out, cores, w, h, scene::ClassCode::Smoke, transform);
    }
    if (!mask_empty(truth.fire)) {
        const auto cores = erode_with_backoff(truth.fire, w, h, erode_px);
        append_run_rectangles(out, cores, w, h, scene::ClassCode::Fire, transform);
    }
    const int margin = std::max(bg_margin_px, std::max(2, erode_px));
    const auto smoke_keepout = dilate_mask(truth.smoke, w, h, margin);
    const auto fire_keepout = dilate_mask(truth.fire, w, h, margin);
    append_background_boxes(out, smoke_keepout, w, h, scene::ClassCode::SmokeBg, transform, n_bg_boxes,
                            bg_box_size, rng);
    append_background_boxes(out, fire_keepout, w, h, scene::ClassCode::FireBg, transform, n_bg_boxes,
                            bg_box_size, rng);
    return out;
}

}  // namespace sitfuse::synth

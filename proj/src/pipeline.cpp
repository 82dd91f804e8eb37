#include "sitfuse/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <map>
#include <sstream>
#include <thread>
#include <unordered_map>

#include <json.hpp>

#include "sitfuse/context.hpp"
#include "sitfuse/fusion.hpp"
#include "sitfuse/hash.hpp"
#include "sitfuse/mask.hpp"
#include "sitfuse/track.hpp"

namespace sitfuse::pipeline {

namespace {

using nlohmann::json;

std::string index_name(const std::string& stem, int i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "_%03d", i);
    return stem + buf;
}

std::filesystem::path resolve(const std::filesystem::path& run_dir, const std::string& path) {
    const std::filesystem::path p(path);
    return p.is_absolute() ? p : run_dir / p;
}

std::vector<std::filesystem::path> scene_stems(const PipelineConfig& cfg) {
    const auto run = cfg.run_dir();
    std::vector<std::filesystem::path> stems;
    if (!cfg.data.scene_paths.empty()) {
        for (const auto& p : cfg.data.scene_paths) stems.push_back(resolve(run, p));
        return stems;
    }
    for (int i = 0; i < cfg.data.sequence_steps; ++i)
        stems.push_back(run / "scenes" / index_name("scene", i));
    return stems;
}

std::filesystem::path labels_path(const PipelineConfig& cfg) {
    if (!cfg.data.labels_path.empty()) return resolve(cfg.run_dir(), cfg.data.labels_path);
    return cfg.run_dir() / "scenes" / "labels.geojson";
}

scene::RasterScene select_bands(const scene::RasterScene& scene, const std::vector<int>& bands) {
    if (bands.empty()) return scene;
    scene::RasterScene out = scene;
    out.band_count = static_cast<int>(bands.size());
    out.data.clear();
    out.band_names.clear();
    for (const int b : bands) {
        if (b < 0 || b >= scene.band_count)
            throw PipelineError("sampling.bands index " + std::to_string(b) + " out of range");
        const size_t plane = static_cast<size_t>(scene.width) * scene.height;
        out.data.insert(out.data.end(), scene.data.begin() + static_cast<long>(plane) * b,
                        scene.data.begin() + static_cast<long>(plane) * (b + 1));
        out.band_names.push_back(b < static_cast<int>(scene.band_names.size())
                                     ? scene.band_names[static_cast<size_t>(b)]
                                     : "band" + std::to_string(b));
    }
    return out;
}

dbn::Matrix to_matrix(const scene::SampleSet& samples, const std::vector<long>* subset = nullptr) {
    const long rows = subset ? static_cast<long>(subset->size()) : samples.count;
    dbn::Matrix m(rows, samples.feature_dim);
    for (long r = 0; r < rows; ++r) {
        const float* src = samples.row(subset ? (*subset)[static_cast<size_t>(r)] : r);
        for (int c = 0; c < samples.feature_dim; ++c) m(r, c) = src[c];
    }
    return m;
}

// --- config plumbing ---------------------------------------------------

template <typename T>
void read_field(const json& obj, const char* key, T& out) {
    if (obj.contains(key)) out = obj.at(key).get<T>();
}

void parse_data(const json& j, DataConfig& data) {
    read_field(j, "width", data.scene.width);
    read_field(j, "height", data.scene.height);
    read_field(j, "bands", data.scene.band_count);
    read_field(j, "n_clouds", data.scene.n_clouds);
    read_field(j, "n_plumes", data.scene.n_plumes);
    read_field(j, "n_fires", data.scene.n_fires);
    read_field(j, "noise_sigma", data.scene.noise_sigma);
    read_field(j, "sensor_id", data.scene.sensor_id);
    read_field(j, "sequence_steps", data.sequence_steps);
    read_field(j, "advect_dx", data.advect_dx);
    read_field(j, "advect_dy", data.advect_dy);
    read_field(j, "label_erode_px", data.label_erode_px);
    read_field(j, "label_margin_px", data.label_margin_px);
    read_field(j, "n_background_boxes", data.n_background_boxes);
    read_field(j, "background_box_size", data.background_box_size);
    read_field(j, "scene_paths", data.scene_paths);
    read_field(j, "labels_path", data.labels_path);
}

void parse_context_target(const json& j, ContextTargetConfig& t) {
    read_field(j, "purity_threshold", t.purity_threshold);
    read_field(j, "min_support", t.min_support);
}

PipelineConfig config_from_json(const json& doc) {
    PipelineConfig cfg;
    read_field(doc, "seed", cfg.seed);
    if (doc.contains("data")) parse_data(doc.at("data"), cfg.data);
    if (doc.contains("sampling")) {
        const json& j = doc.at("sampling");
        read_field(j, "radius", cfg.sampling.radius);
        read_field(j, "bands", cfg.sampling.bands);
        read_field(j, "balance", cfg.sampling.balance);
        read_field(j, "balance_bins", cfg.sampling.balance_bins);
        read_field(j, "balance_count", cfg.sampling.balance_count);
    }
    if (doc.contains("encoder")) {
        const json& j = doc.at("encoder");
        read_field(j, "hidden_dims", cfg.encoder_hidden_dims);
        read_field(j, "learning_rate", cfg.encoder_train.learning_rate);
        read_field(j, "momentum", cfg.encoder_train.momentum);
        read_field(j, "weight_decay", cfg.encoder_train.weight_decay);
        read_field(j, "cd_k", cfg.encoder_train.cd_k);
        read_field(j, "epochs", cfg.encoder_train.epochs);
        read_field(j, "batch_size", cfg.encoder_train.batch_size);
        read_field(j, "learn_sigma", cfg.encoder_train.learn_sigma);
    }
    if (doc.contains("tree")) {
        const json& j = doc.at("tree");
        read_field(j, "k", cfg.tree.k);
        read_field(j, "max_depth", cfg.tree.max_depth);
        read_field(j, "min_node_samples", cfg.tree.min_node_samples);
        if (j.contains("head")) {
            const json& h = j.at("head");
            read_field(h, "sigma", cfg.tree.head.sigma);
            read_field(h, "marginal_weight", cfg.tree.head.marginal_weight);
            read_field(h, "learning_rate", cfg.tree.head.learning_rate);
            read_field(h, "epochs", cfg.tree.head.epochs);
            read_field(h, "batch_size", cfg.tree.head.batch_size);
            read_field(h, "n_subheads", cfg.tree.head.n_subheads);
        }
    }
    if (doc.contains("context")) {
        const json& j = doc.at("context");
        parse_context_target(j, cfg.context.smoke);
        parse_context_target(j, cfg.context.fire);
        if (j.contains("smoke")) parse_context_target(j.at("smoke"), cfg.context.smoke);
        if (j.contains("fire")) parse_context_target(j.at("fire"), cfg.context.fire);
    }
    if (doc.contains("evaluation")) {
        const json& j = doc.at("evaluation");
        read_field(j, "ssim_window", cfg.ssim.window);
        read_field(j, "ssim_sigma", cfg.ssim.gaussian_sigma);
        read_field(j, "k1", cfg.ssim.k1);
        read_field(j, "k2", cfg.ssim.k2);
        read_field(j, "dynamic_range", cfg.ssim.dynamic_range);
    }
    if (doc.contains("fusion")) {
        const json& j = doc.at("fusion");
        read_field(j, "cf_threshold", cfg.fusion.cf_threshold);
        read_field(j, "threshold", cfg.fusion.threshold);
        read_field(j, "time_window", cfg.fusion.time_window);
        read_field(j, "target", cfg.fusion.target);
        read_field(j, "retrieval", cfg.fusion.retrieval);
        if (j.contains("streams"))
            for (const json& s : j.at("streams")) {
                StreamConfig stream;
                read_field(s, "scores", stream.scores);
                read_field(s, "mask", stream.mask);
                read_field(s, "weight", stream.weight);
                read_field(s, "sensor_id", stream.sensor_id);
                if (s.contains("timestamp")) stream.timestamp = s.at("timestamp").get<double>();
                cfg.fusion.streams.push_back(std::move(stream));
            }
    }
    if (doc.contains("tracking")) {
        const json& j = doc.at("tracking");
        read_field(j, "iou_min", cfg.tracking.iou_min);
        read_field(j, "connectivity", cfg.tracking.connectivity);
        read_field(j, "target", cfg.tracking.target);
        read_field(j, "use_fused", cfg.tracking.use_fused);
    }
    if (doc.contains("output")) {
        const json& j = doc.at("output");
        std::string dir = cfg.output_dir.string();
        read_field(j, "dir", dir);
        cfg.output_dir = dir;
        read_field(j, "run_id", cfg.run_id);
    }
    return cfg;
}

json config_to_json(const PipelineConfig& cfg) {
    json streams = json::array();
    for (const auto& s : cfg.fusion.streams) {
        json e = {{"scores", s.scores}, {"mask", s.mask}, {"weight", s.weight},
                  {"sensor_id", s.sensor_id}};
        if (s.timestamp) e["timestamp"] = *s.timestamp;
        streams.push_back(std::move(e));
    }
    return json{
        {"seed", cfg.seed},
        {"data",
         {{"width", cfg.data.scene.width}, {"height", cfg.data.scene.height},
          {"bands", cfg.data.scene.band_count}, {"n_clouds", cfg.data.scene.n_clouds},
          {"n_plumes", cfg.data.scene.n_plumes}, {"n_fires", cfg.data.scene.n_fires},
          {"noise_sigma", cfg.data.scene.noise_sigma}, {"sensor_id", cfg.data.scene.sensor_id},
          {"sequence_steps", cfg.data.sequence_steps}, {"advect_dx", cfg.data.advect_dx},
          {"advect_dy", cfg.data.advect_dy}, {"label_erode_px", cfg.data.label_erode_px},
          {"label_margin_px", cfg.data.label_margin_px},
          {"n_background_boxes", cfg.data.n_background_boxes},
          {"background_box_size", cfg.data.background_box_size},
          {"scene_paths", cfg.data.scene_paths}, {"labels_path", cfg.data.labels_path}}},
        {"sampling",
         {{"radius", cfg.sampling.radius}, {"bands", cfg.sampling.bands},
          {"balance", cfg.sampling.balance}, {"balance_bins", cfg.sampling.balance_bins},
          {"balance_count", cfg.sampling.balance_count}}},
        {"encoder",
         {{"hidden_dims", cfg.encoder_hidden_dims},
          {"learning_rate", cfg.encoder_train.learning_rate},
          {"momentum", cfg.encoder_train.momentum},
          {"weight_decay", cfg.encoder_train.weight_decay}, {"cd_k", cfg.encoder_train.cd_k},
          {"epochs", cfg.encoder_train.epochs}, {"batch_size", cfg.encoder_train.batch_size},
          {"learn_sigma", cfg.encoder_train.learn_sigma}}},
        {"tree",
         {{"k", cfg.tree.k}, {"max_depth", cfg.tree.max_depth},
          {"min_node_samples", cfg.tree.min_node_samples},
          {"head",
           {{"sigma", cfg.tree.head.sigma}, {"marginal_weight", cfg.tree.head.marginal_weight},
            {"learning_rate", cfg.tree.head.learning_rate}, {"epochs", cfg.tree.head.epochs},
            {"batch_size", cfg.tree.head.batch_size},
            {"n_subheads", cfg.tree.head.n_subheads}}}}},
        {"context",
         {{"smoke",
           {{"purity_threshold", cfg.context.smoke.purity_threshold},
            {"min_support", cfg.context.smoke.min_support}}},
          {"fire",
           {{"purity_threshold", cfg.context.fire.purity_threshold},
            {"min_support", cfg.context.fire.min_support}}}}},
        {"evaluation",
         {{"ssim_window", cfg.ssim.window}, {"ssim_sigma", cfg.ssim.gaussian_sigma},
          {"k1", cfg.ssim.k1}, {"k2", cfg.ssim.k2}, {"dynamic_range", cfg.ssim.dynamic_range}}},
        {"fusion",
         {{"cf_threshold", cfg.fusion.cf_threshold}, {"threshold", cfg.fusion.threshold},
          {"time_window", cfg.fusion.time_window}, {"target", cfg.fusion.target},
          {"retrieval", cfg.fusion.retrieval}, {"streams", streams}}},
        {"tracking",
         {{"iou_min", cfg.tracking.iou_min}, {"connectivity", cfg.tracking.connectivity},
          {"target", cfg.tracking.target}, {"use_fused", cfg.tracking.use_fused}}},
        {"output", {{"dir", cfg.output_dir.string()}, {"run_id", cfg.run_id}}}};
}

void apply_override(json& doc, const std::string& spec) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos || eq == 0)
        throw PipelineError("--set expects section.key=value, got '" + spec + "'");
    const std::string path = spec.substr(0, eq);
    const std::string raw = spec.substr(eq + 1);

    json* node = &doc;
    std::istringstream keys(path);
    std::string key, next;
    if (!std::getline(keys, key, '.')) throw PipelineError("--set has an empty key path");
    while (std::getline(keys, next, '.')) {
        node = &(*node)[key];
        if (!node->is_object() && !node->is_null()) *node = json::object();
        key = next;
    }
    json value;
    try {
        value = json::parse(raw);
    } catch (const json::exception&) {
        value = raw;  // unquoted strings pass through verbatim
    }
    (*node)[key] = std::move(value);
}

// --- run-dir artifacts --------------------------------------------------

void refresh_manifest(const PipelineConfig& cfg) {
    const auto run = cfg.run_dir();
    std::filesystem::create_directories(run);

    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::recursive_directory_iterator(run))
        if (entry.is_regular_file() && entry.path().filename() != "run_manifest.json")
            files.push_back(entry.path());
    std::sort(files.begin(), files.end());

    json artifacts = json::object();
    for (const auto& path : files) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw PipelineError("cannot checksum " + path.string());
        uint64_t h = 0xCBF29CE484222325ULL;
        uint64_t bytes = 0;
        char buf[65536];
        while (f.read(buf, sizeof(buf)) || f.gcount() > 0) {
            h = fnv1a64(buf, static_cast<size_t>(f.gcount()), h);
            bytes += static_cast<uint64_t>(f.gcount());
            if (!f) break;
        }
        char hex[17];
        std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(h));
        artifacts[std::filesystem::relative(path, run).generic_string()] = {
            {"fnv1a64", hex}, {"bytes", bytes}};
    }

    char cfg_hex[17];
    std::snprintf(cfg_hex, sizeof(cfg_hex), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(config_to_json(cfg).dump())));
    json manifest = {{"format", "sitfuse-run-v1"},
                     {"config_fnv1a64", cfg_hex},
                     {"artifacts", artifacts}};
    std::ofstream out(run / "run_manifest.json");
    if (!out) throw PipelineError("cannot write run manifest in " + run.string());
    out << manifest.dump(2) << "\n";
}

scene::RasterScene truth_to_raster(const synth::GroundTruth& truth,
                                   const scene::RasterScene& like) {
    scene::RasterScene r;
    r.width = truth.width;
    r.height = truth.height;
    r.band_count = 3;
    r.geotransform = like.geotransform;
    r.timestamp = like.timestamp;
    r.sensor_id = "TRUTH";
    r.band_names = {"smoke", "fire", "cloud"};
    const size_t plane = static_cast<size_t>(truth.width) * truth.height;
    r.valid.assign(plane, 1);
    r.data.resize(plane * 3);
    for (size_t i = 0; i < plane; ++i) {
        r.data[i] = static_cast<float>(truth.smoke[i]);
        r.data[plane + i] = static_cast<float>(truth.fire[i]);
        r.data[2 * plane + i] = static_cast<float>(truth.cloud[i]);
    }
    return r;
}

// Synthetic trace-gas retrieval companion: smoke drives the cloud-fraction
// estimate above the 0.2 filter, which is exactly the failure mode the
// restoration step exists for.
scene::RasterScene make_retrieval(const synth::GroundTruth& truth,
                                  const scene::RasterScene& like) {
    scene::RasterScene r;
    r.width = truth.width;
    r.height = truth.height;
    r.band_count = 2;
    r.geotransform = like.geotransform;
    r.timestamp = like.timestamp;
    r.sensor_id = "RETRIEVAL";
    r.band_names = {"value", "cloud_fraction"};
    const size_t plane = static_cast<size_t>(truth.width) * truth.height;
    r.valid.assign(plane, 1);
    r.data.resize(plane * 2);
    for (int row = 0; row < truth.height; ++row)
        for (int col = 0; col < truth.width; ++col) {
            const size_t i = static_cast<size_t>(row) * truth.width + col;
            const float u = static_cast<float>(col) / static_cast<float>(truth.width - 1);
            const float v = static_cast<float>(row) / static_cast<float>(truth.height - 1);
            r.data[i] = 1.0f + 0.3f * (u + v) + 4.0f * static_cast<float>(truth.smoke[i]);
            float cf = 0.05f + 0.85f * static_cast<float>(truth.cloud[i]) +
                       0.45f * static_cast<float>(truth.smoke[i]);
            r.data[plane + i] = std::min(cf, 1.0f);
        }
    return r;
}

fusion::RetrievalGrid retrieval_from_raster(const scene::RasterScene& raster) {
    if (raster.band_count != 2)
        throw PipelineError("retrieval rasters need exactly two bands (value, cloud_fraction)");
    fusion::RetrievalGrid grid;
    grid.geometry = raster.geometry();
    grid.valid = raster.valid;
    const size_t plane = static_cast<size_t>(raster.width) * raster.height;
    grid.values.assign(raster.data.begin(), raster.data.begin() + static_cast<long>(plane));
    grid.cloud_fraction.assign(raster.data.begin() + static_cast<long>(plane), raster.data.end());
    grid.validate();
    return grid;
}

void save_retrieval_raster(const fusion::RetrievalGrid& grid, const scene::RasterScene& like,
                           const std::filesystem::path& stem) {
    scene::RasterScene r;
    r.width = grid.geometry.width;
    r.height = grid.geometry.height;
    r.band_count = 2;
    r.geotransform = grid.geometry.transform;
    r.timestamp = like.timestamp;
    r.sensor_id = "RETRIEVAL";
    r.band_names = {"value", "cloud_fraction"};
    r.valid = grid.valid;
    r.data.resize(grid.values.size() * 2);
    const size_t plane = grid.values.size();
    for (size_t i = 0; i < plane; ++i) {
        r.data[i] = grid.values[i];
        r.data[plane + i] = grid.cloud_fraction[i];
    }
    scene::save_raster(r, stem);
}

struct EncoderArtifacts {
    dbn::DbnModel model;
    int radius = 0;
    std::vector<int> bands;
    scene::BandStats stats;
};

void save_encoder_meta(const PipelineConfig& cfg, const scene::BandStats& stats,
                       const std::filesystem::path& dir) {
    json doc = {{"radius", cfg.sampling.radius},
                {"bands", cfg.sampling.bands},
                {"mean", stats.mean},
                {"stddev", stats.stddev},
                {"pixel_count", stats.pixel_count}};
    std::ofstream f(dir / "stats.json");
    if (!f) throw PipelineError("cannot write encoder stats in " + dir.string());
    f << doc.dump(2) << "\n";
}

EncoderArtifacts load_encoder(const PipelineConfig& cfg) {
    const auto dir = cfg.run_dir() / "models" / "encoder";
    EncoderArtifacts enc;
    enc.model = dbn::load_dbn(dir);
    std::ifstream f(dir / "stats.json");
    if (!f) throw PipelineError("missing encoder stats " + (dir / "stats.json").string());
    json doc;
    f >> doc;
    enc.radius = doc.at("radius").get<int>();
    enc.bands = doc.at("bands").get<std::vector<int>>();
    enc.stats.mean = doc.at("mean").get<std::vector<double>>();
    enc.stats.stddev = doc.at("stddev").get<std::vector<double>>();
    enc.stats.pixel_count = doc.at("pixel_count").get<long>();
    return enc;
}

// Shared sampling path for training and prediction: band subset, windowed
// standardized samples with the encoder's own statistics.
scene::SampleSet sample_scene(const scene::RasterScene& raw, const EncoderArtifacts& enc) {
    const scene::RasterScene view = select_bands(raw, enc.bands);
    return scene::extract_samples(view, enc.stats, enc.radius);
}

iic::MatrixXd encode_samples(const EncoderArtifacts& enc, const scene::SampleSet& samples) {
    return dbn::encode(enc.model, to_matrix(samples)).cast<double>();
}

scene::RasterScene label_map_to_raster(const iic::HierarchicalLabelMap& map,
                                       const scene::RasterScene& like, const char* band_name) {
    scene::RasterScene r;
    r.width = map.width;
    r.height = map.height;
    r.band_count = 1;
    r.geotransform = like.geotransform;
    r.timestamp = like.timestamp;
    r.sensor_id = like.sensor_id;
    r.band_names = {band_name};
    const size_t n = map.labels.size();
    r.valid.assign(n, 0);
    r.data.assign(n, r.nodata);
    for (size_t i = 0; i < n; ++i)
        if (map.labels[i] != iic::HierarchicalLabelMap::kNoSample) {
            r.valid[i] = 1;
            r.data[i] = static_cast<float>(map.labels[i]);
        }
    return r;
}

BinaryMask truth_band_to_mask(const scene::RasterScene& truth, int band, scene::ClassCode target,
                              const std::string& scene_id) {
    BinaryMask mask;
    mask.width = truth.width;
    mask.height = truth.height;
    mask.target = target;
    mask.scene_id = scene_id;
    mask.timestamp = truth.timestamp;
    const size_t plane = static_cast<size_t>(truth.width) * truth.height;
    mask.valid.assign(truth.valid.begin(), truth.valid.end());
    mask.values.resize(plane);
    for (size_t i = 0; i < plane; ++i)
        mask.values[i] = truth.valid[i] && truth.data[static_cast<size_t>(band) * plane + i] == 1.0f
                             ? 1
                             : 0;
    return mask;
}

std::string scene_id_of(const std::filesystem::path& stem) { return stem.stem().string(); }

}  // namespace

int thread_budget() {
    const char* env = std::getenv("SITFUSE_THREADS");
    if (env && *env) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end && *end == '\0' && v >= 0) {
            if (v > 0) return static_cast<int>(v);
        } else {
            std::cerr << "warning: ignoring malformed SITFUSE_THREADS='" << env << "'\n";
        }
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw > 0 ? static_cast<int>(hw) : 1;
}

void PipelineConfig::validate() const {
    synth::SceneSpec spec_check = data.scene;
    spec_check.apply_default_signatures();
    spec_check.validate();
    if (data.sequence_steps < 1) throw PipelineError("data.sequence_steps must be >= 1");
    if (sampling.radius < 0) throw PipelineError("sampling.radius must be >= 0");
    if (sampling.balance_bins < 2) throw PipelineError("sampling.balance_bins must be >= 2");
    if (sampling.balance_count < 0) throw PipelineError("sampling.balance_count must be >= 0");
    if (encoder_hidden_dims.empty() || encoder_hidden_dims.size() > 3)
        throw PipelineError("encoder.hidden_dims must list 1-3 layer sizes");
    for (const int d : encoder_hidden_dims)
        if (d < 1) throw PipelineError("encoder.hidden_dims entries must be >= 1");
    encoder_train.validate();
    tree.validate();
    for (const auto* t : {&context.smoke, &context.fire}) {
        if (!(t->purity_threshold > 0.0) || t->purity_threshold > 1.0)
            throw PipelineError("context purity_threshold must be in (0,1]");
        if (t->min_support < 1) throw PipelineError("context min_support must be >= 1");
    }
    ssim.validate();
    if (!(fusion.threshold >= 0.0 && fusion.threshold <= 1.0))
        throw PipelineError("fusion.threshold must be in [0,1]");
    if (fusion.time_window < 0.0) throw PipelineError("fusion.time_window must be >= 0");
    scene::class_from_name(fusion.target);
    scene::class_from_name(tracking.target);
    if (!(tracking.iou_min > 0.0 && tracking.iou_min <= 1.0))
        throw PipelineError("tracking.iou_min must be in (0,1]");
    if (tracking.connectivity != 4 && tracking.connectivity != 8)
        throw PipelineError("tracking.connectivity must be 4 or 8");
    if (run_id.empty()) throw PipelineError("output.run_id must be nonempty");
}

PipelineConfig load_config(const std::filesystem::path& path,
                           const std::vector<std::string>& overrides,
                           const std::optional<std::string>& out_dir) {
    std::ifstream f(path);
    if (!f) throw PipelineError("cannot open config " + path.string());
    json doc;
    try {
        f >> doc;
    } catch (const json::exception& e) {
        throw PipelineError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    for (const auto& spec : overrides) apply_override(doc, spec);
    PipelineConfig cfg = config_from_json(doc);
    if (out_dir) cfg.output_dir = *out_dir;

    // Fixed per-component seed derivation from the global seed.
    cfg.data.scene.seed = cfg.seed;
    cfg.encoder_train.seed = derive_seed(cfg.seed, seed_tag::kEncoder);
    cfg.tree.head.seed = derive_seed(cfg.seed, seed_tag::kTree);
    cfg.validate();
    return cfg;
}

std::vector<long> balance_samples(const scene::SampleSet& samples, int bins, long count,
                                  uint64_t seed) {
    if (samples.count < 1) throw PipelineError("cannot balance an empty sample set");
    if (bins < 2) throw PipelineError("balance bins must be >= 2");
    if (count < 0) throw PipelineError("balance count must be >= 0");
    if (count == 0) count = samples.count;

    const int dim = samples.feature_dim;
    std::vector<float> lo(static_cast<size_t>(dim), std::numeric_limits<float>::infinity());
    std::vector<float> hi(static_cast<size_t>(dim), -std::numeric_limits<float>::infinity());
    for (long i = 0; i < samples.count; ++i) {
        const float* row = samples.row(i);
        for (int d = 0; d < dim; ++d) {
            lo[static_cast<size_t>(d)] = std::min(lo[static_cast<size_t>(d)], row[d]);
            hi[static_cast<size_t>(d)] = std::max(hi[static_cast<size_t>(d)], row[d]);
        }
    }

    std::vector<uint64_t> bin_of(static_cast<size_t>(samples.count));
    std::unordered_map<uint64_t, long> occupancy;
    std::vector<uint8_t> levels(static_cast<size_t>(dim));
    for (long i = 0; i < samples.count; ++i) {
        const float* row = samples.row(i);
        for (int d = 0; d < dim; ++d) {
            const float span = hi[static_cast<size_t>(d)] - lo[static_cast<size_t>(d)];
            const int level =
                span > 0.0f
                    ? std::min(bins - 1, static_cast<int>((row[d] - lo[static_cast<size_t>(d)]) /
                                                          span * static_cast<float>(bins)))
                    : 0;
            levels[static_cast<size_t>(d)] = static_cast<uint8_t>(level);
        }
        const uint64_t b = fnv1a64(levels.data(), levels.size());
        bin_of[static_cast<size_t>(i)] = b;
        ++occupancy[b];
    }

    // Inverse-density weights; cumulative sums drive deterministic draws.
    std::vector<double> cumulative(static_cast<size_t>(samples.count));
    double total = 0.0;
    for (long i = 0; i < samples.count; ++i) {
        total += 1.0 / static_cast<double>(occupancy.at(bin_of[static_cast<size_t>(i)]));
        cumulative[static_cast<size_t>(i)] = total;
    }
    SplitMix64 rng(seed);
    std::vector<long> selected(static_cast<size_t>(count));
    for (long i = 0; i < count; ++i) {
        const double u = rng.next_double() * total;
        const auto it = std::lower_bound(cumulative.begin(), cumulative.end(), u);
        selected[static_cast<size_t>(i)] =
            static_cast<long>(std::min(cumulative.end() - 1, it) - cumulative.begin());
    }
    return selected;
}

void cmd_gen(const PipelineConfig& cfg) {
    const auto run = cfg.run_dir();
    const auto scenes_dir = run / "scenes";
    std::filesystem::create_directories(scenes_dir);

    const auto sequence = synth::generate_sequence(cfg.data.scene, cfg.data.sequence_steps,
                                                   cfg.data.advect_dx, cfg.data.advect_dy);
    for (size_t i = 0; i < sequence.size(); ++i) {
        const auto& [scn, truth] = sequence[i];
        scene::save_raster(scn, scenes_dir / index_name("scene", static_cast<int>(i)));
        scene::save_raster(truth_to_raster(truth, scn),
                           scenes_dir / index_name("truth", static_cast<int>(i)));
        scene::save_raster(make_retrieval(truth, scn),
                           scenes_dir / index_name("retrieval", static_cast<int>(i)));
    }

    const auto& [scene0, truth0] = sequence.front();
    const scene::LabelPolygonSet labels = synth::truth_to_polygons(
        truth0, scene0.geotransform, cfg.data.label_erode_px, cfg.data.label_margin_px,
        cfg.data.n_background_boxes, cfg.data.background_box_size, cfg.seed);
    scene::save_polygons(labels, labels_path(cfg));
    refresh_manifest(cfg);
}

void cmd_train_encoder(const PipelineConfig& cfg) {
    const auto stems = scene_stems(cfg);
    const scene::RasterScene raw = scene::load_raster(stems.front());
    const scene::RasterScene view = select_bands(raw, cfg.sampling.bands);
    const scene::BandStats stats = scene::compute_band_stats(view);
    const scene::SampleSet samples = scene::extract_samples(view, stats, cfg.sampling.radius);

    dbn::Matrix train_set;
    if (cfg.sampling.balance) {
        const std::vector<long> subset =
            balance_samples(samples, cfg.sampling.balance_bins, cfg.sampling.balance_count,
                            derive_seed(cfg.seed, seed_tag::kSampling));
        train_set = to_matrix(samples, &subset);
    } else {
        train_set = to_matrix(samples);
    }

    std::vector<int> layer_dims{samples.feature_dim};
    layer_dims.insert(layer_dims.end(), cfg.encoder_hidden_dims.begin(),
                      cfg.encoder_hidden_dims.end());
    std::vector<std::vector<double>> traces;
    const dbn::DbnModel model = dbn::train_dbn(train_set, layer_dims, {cfg.encoder_train}, &traces);

    const auto dir = cfg.run_dir() / "models" / "encoder";
    dbn::save_dbn(model, dir);
    save_encoder_meta(cfg, stats, dir);

    const auto reports_dir = cfg.run_dir() / "reports";
    std::filesystem::create_directories(reports_dir);
    std::ofstream trace_csv(reports_dir / "encoder_trace.csv");
    if (!trace_csv) throw PipelineError("cannot write encoder trace CSV");
    trace_csv << "layer,epoch,recon_mse\n";
    for (size_t l = 0; l < traces.size(); ++l)
        for (size_t e = 0; e < traces[l].size(); ++e) {
            std::ostringstream row;
            row << l << ',' << e << ',' << std::setprecision(12) << traces[l][e];
            trace_csv << row.str() << "\n";
        }
    trace_csv.flush();
    refresh_manifest(cfg);
}

void cmd_train_tree(const PipelineConfig& cfg) {
    const EncoderArtifacts enc = load_encoder(cfg);
    const auto stems = scene_stems(cfg);
    const scene::SampleSet samples = sample_scene(scene::load_raster(stems.front()), enc);

    iic::MatrixXd latent;
    if (cfg.sampling.balance) {
        const std::vector<long> subset =
            balance_samples(samples, cfg.sampling.balance_bins, cfg.sampling.balance_count,
                            derive_seed(cfg.seed, seed_tag::kSampling));
        latent = dbn::encode(enc.model, to_matrix(samples, &subset)).cast<double>();
    } else {
        latent = encode_samples(enc, samples);
    }
    const iic::ClusterTree tree = iic::build_tree(latent, cfg.tree);
    iic::save_tree(tree, cfg.run_dir() / "models" / "tree");
    refresh_manifest(cfg);
}

void cmd_predict(const PipelineConfig& cfg) {
    const EncoderArtifacts enc = load_encoder(cfg);
    const iic::ClusterTree tree = iic::load_tree(cfg.run_dir() / "models" / "tree");
    const auto stems = scene_stems(cfg);
    const auto masks_dir = cfg.run_dir() / "masks";
    std::filesystem::create_directories(masks_dir);

    // Context is assigned once, from the first scene's polygon labels.
    const scene::RasterScene scene0 = scene::load_raster(stems.front());
    const scene::SampleSet samples0 = sample_scene(scene0, enc);
    const iic::HierarchicalLabelMap map0 = iic::assign_labels(
        tree, encode_samples(enc, samples0), samples0.coords, scene0.width, scene0.height);
    const scene::LabelPolygonSet polygons = scene::load_polygons(labels_path(cfg));
    const scene::LabelRaster label_raster = scene::rasterize_polygons(polygons, scene0);
    const context::ClusterClassHistogram hist = context::build_histogram(map0, label_raster);

    context::ContextMap ctx;
    ctx.targets["smoke"] =
        context::assign_context(hist, scene::ClassCode::Smoke, cfg.context.smoke.purity_threshold,
                                cfg.context.smoke.min_support);
    ctx.targets["fire"] =
        context::assign_context(hist, scene::ClassCode::Fire, cfg.context.fire.purity_threshold,
                                cfg.context.fire.min_support);
    context::save_context(ctx, cfg.run_dir() / "models" / "context.json");

    for (size_t i = 0; i < stems.size(); ++i) {
        const scene::RasterScene scn = i == 0 ? scene0 : scene::load_raster(stems[i]);
        const scene::SampleSet samples = i == 0 ? samples0 : sample_scene(scn, enc);
        const iic::HierarchicalLabelMap map =
            i == 0 ? map0
                   : iic::assign_labels(tree, encode_samples(enc, samples), samples.coords,
                                        scn.width, scn.height);
        const std::string scene_id = scene_id_of(stems[i]);
        const int idx = static_cast<int>(i);
        scene::save_raster(label_map_to_raster(map, scn, "leaf"),
                           masks_dir / index_name("labels", idx));

        // Context-applied segmentation subset: leaf labels restricted to the
        // leaves positive for at least one target.
        iic::HierarchicalLabelMap subset = map;
        for (auto& leaf : subset.labels)
            if (leaf != iic::HierarchicalLabelMap::kNoSample &&
                !ctx.targets.at("smoke").is_positive(leaf) && !ctx.targets.at("fire").is_positive(leaf))
                leaf = iic::HierarchicalLabelMap::kNoSample;
        scene::save_raster(label_map_to_raster(subset, scn, "leaf_subset"),
                           masks_dir / index_name("subset", idx));

        for (const auto* target_ctx : {&ctx.targets.at("smoke"), &ctx.targets.at("fire")}) {
            const std::string target = scene::class_name(target_ctx->target);
            BinaryMask mask = context::apply_context(map, *target_ctx);
            mask.scene_id = scene_id;
            mask.tree_id = "tree";
            mask.timestamp = scn.timestamp;
            scene::save_raster(mask_to_raster(mask, scn.geotransform),
                               masks_dir / index_name(target, idx));

            const std::vector<float> scores = context::soft_scores(map, *target_ctx);
            scene::RasterScene score_raster = label_map_to_raster(map, scn, "score");
            for (size_t p = 0; p < scores.size(); ++p)
                score_raster.data[p] = score_raster.valid[p] ? scores[p] : score_raster.nodata;
            score_raster.sensor_id = scene_id;
            scene::save_raster(score_raster, masks_dir / index_name(target + "_scores", idx));
        }
    }
    refresh_manifest(cfg);
}

void cmd_evaluate(const PipelineConfig& cfg) {
    const auto stems = scene_stems(cfg);
    const auto masks_dir = cfg.run_dir() / "masks";
    std::vector<eval::EvalReport> reports;
    std::map<std::string, std::vector<const eval::EvalReport*>> by_target;

    for (size_t i = 0; i < stems.size(); ++i) {
        const int idx = static_cast<int>(i);
        const scene::RasterScene truth =
            scene::load_raster(stems[i].parent_path() / index_name("truth", idx));
        for (const auto& [target, band] :
             std::vector<std::pair<std::string, int>>{{"smoke", 0}, {"fire", 1}}) {
            const scene::ClassCode code = scene::class_from_name(target);
            const BinaryMask mask = mask_from_raster(
                scene::load_raster(masks_dir / index_name(target, idx)), code);
            const BinaryMask ref = truth_band_to_mask(truth, band, code, "truth");
            eval::EvalReport report = eval::evaluate_pair(mask, ref, cfg.ssim);
            report.scene_id = scene_id_of(stems[i]);
            report.target = target;
            report.reference_id = "truth";
            reports.push_back(report);
        }
    }
    for (const auto& r : reports) by_target[r.target].push_back(&r);

    std::vector<eval::EvalReport> means;
    for (const auto& [target, rows] : by_target) {
        eval::EvalReport mean;
        mean.scene_id = "mean";
        mean.target = target;
        mean.reference_id = "truth";
        for (const auto* r : rows) {
            mean.ssim += r->ssim;
            mean.precision += r->precision;
            mean.recall += r->recall;
            mean.f1 += r->f1;
            mean.iou += r->iou;
            mean.tp += r->tp;
            mean.fp += r->fp;
            mean.fn += r->fn;
            mean.tn += r->tn;
            mean.n_valid += r->n_valid;
        }
        const double n = static_cast<double>(rows.size());
        mean.ssim /= n;
        mean.precision /= n;
        mean.recall /= n;
        mean.f1 /= n;
        mean.iou /= n;
        means.push_back(std::move(mean));
    }
    reports.insert(reports.end(), means.begin(), means.end());

    const auto reports_dir = cfg.run_dir() / "reports";
    std::filesystem::create_directories(reports_dir);
    eval::save_reports(reports, reports_dir / "eval.json", reports_dir / "eval.csv");
    refresh_manifest(cfg);
}

void cmd_fuse(const PipelineConfig& cfg) {
    const auto run = cfg.run_dir();
    const auto masks_dir = run / "masks";
    const auto stems = scene_stems(cfg);
    const std::string target = cfg.fusion.target;
    const scene::ClassCode code = scene::class_from_name(target);

    std::vector<StreamConfig> stream_cfgs = cfg.fusion.streams;
    if (stream_cfgs.empty()) {
        for (size_t i = 0; i < stems.size(); ++i) {
            StreamConfig s;
            s.scores = (masks_dir / index_name(target + "_scores", static_cast<int>(i))).string();
            s.mask = (masks_dir / index_name(target, static_cast<int>(i))).string();
            stream_cfgs.push_back(std::move(s));
        }
    }

    std::vector<fusion::StreamMask> streams;
    for (const auto& sc : stream_cfgs) {
        fusion::StreamMask stream;
        const std::string mask_path = sc.mask.empty() ? sc.scores : sc.mask;
        const scene::RasterScene mask_raster = scene::load_raster(resolve(run, mask_path));
        stream.mask = mask_from_raster(mask_raster, code);
        stream.geometry = mask_raster.geometry();
        stream.weight = sc.weight;
        stream.timestamp = sc.timestamp.value_or(mask_raster.timestamp);
        stream.sensor_id = sc.sensor_id.empty() ? mask_raster.sensor_id : sc.sensor_id;
        if (!sc.scores.empty()) {
            const scene::RasterScene score_raster = scene::load_raster(resolve(run, sc.scores));
            if (score_raster.width != stream.mask.width ||
                score_raster.height != stream.mask.height)
                throw PipelineError("stream score grid does not match its mask: " + sc.scores);
            stream.scores.resize(score_raster.data.size());
            for (size_t p = 0; p < score_raster.data.size(); ++p)
                stream.scores[p] = score_raster.valid[p] ? score_raster.data[p] : 0.0f;
            // Score validity defines coverage for score-carrying streams.
            stream.mask.valid = score_raster.valid;
            for (size_t p = 0; p < stream.mask.values.size(); ++p)
                if (!stream.mask.valid[p]) stream.mask.values[p] = 0;
        }
        streams.push_back(std::move(stream));
    }

    std::filesystem::create_directories(masks_dir);
    const scene::RasterScene scene0 = scene::load_raster(stems.front());
    const fusion::CertaintyMask cert =
        fusion::fuse(streams, scene0.geometry(), scene0.timestamp, cfg.fusion.time_window);
    if (cert.covered_pixels() == 0)
        std::cerr << "warning: no stream covers the target grid; fused mask is all-invalid\n";

    scene::RasterScene cert_raster;
    cert_raster.width = cert.geometry.width;
    cert_raster.height = cert.geometry.height;
    cert_raster.band_count = 1;
    cert_raster.geotransform = cert.geometry.transform;
    cert_raster.timestamp = cert.timestamp;
    cert_raster.sensor_id = "FUSED";
    cert_raster.band_names = {"certainty"};
    cert_raster.valid = cert.valid;
    cert_raster.data.resize(cert.certainty.size());
    for (size_t p = 0; p < cert.certainty.size(); ++p)
        cert_raster.data[p] = cert.valid[p] ? cert.certainty[p] : cert_raster.nodata;
    scene::save_raster(cert_raster, masks_dir / ("certainty_" + target));

    BinaryMask fused = fusion::binarize(cert, cfg.fusion.threshold);
    fused.target = code;
    fused.scene_id = "fused";
    scene::save_raster(mask_to_raster(fused, cert.geometry.transform),
                       masks_dir / ("fused_" + target));

    // Optional retrieval restoration under the fused mask.
    std::filesystem::path retrieval_path;
    if (!cfg.fusion.retrieval.empty()) {
        retrieval_path = resolve(run, cfg.fusion.retrieval);
    } else {
        const auto default_path = stems.front().parent_path() / index_name("retrieval", 0);
        if (std::filesystem::exists(std::filesystem::path(default_path.string() + ".json")))
            retrieval_path = default_path;
    }
    if (!retrieval_path.empty()) {
        const scene::RasterScene ret_raster = scene::load_raster(retrieval_path);
        const fusion::RetrievalGrid restored = fusion::restore_retrievals(
            retrieval_from_raster(ret_raster), fused, cfg.fusion.cf_threshold);
        save_retrieval_raster(restored, ret_raster, masks_dir / ("restored_" + target));
    }
    refresh_manifest(cfg);
}

void cmd_track(const PipelineConfig& cfg) {
    const auto stems = scene_stems(cfg);
    const auto masks_dir = cfg.run_dir() / "masks";
    const scene::ClassCode code = scene::class_from_name(cfg.tracking.target);

    std::vector<BinaryMask> masks;
    for (size_t i = 0; i < stems.size(); ++i)
        masks.push_back(mask_from_raster(
            scene::load_raster(masks_dir / index_name(cfg.tracking.target, static_cast<int>(i))),
            code));
    const std::vector<track::Track> tracks =
        track::track_sequence(masks, cfg.tracking.iou_min, cfg.tracking.connectivity);

    const auto tracks_dir = cfg.run_dir() / "tracks";
    std::filesystem::create_directories(tracks_dir);
    track::save_tracks_csv(tracks, tracks_dir / "tracks.csv");
    refresh_manifest(cfg);
}

void run_all(const PipelineConfig& cfg) {
    cmd_gen(cfg);
    cmd_train_encoder(cfg);
    cmd_train_tree(cfg);
    cmd_predict(cfg);
    cmd_evaluate(cfg);
    cmd_fuse(cfg);
    cmd_track(cfg);
}

}  // namespace sitfuse::pipeline

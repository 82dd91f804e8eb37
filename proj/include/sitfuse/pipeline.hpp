#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "sitfuse/dbn.hpp"
#include "sitfuse/eval.hpp"
#include "sitfuse/iic.hpp"
#include "sitfuse/scene.hpp"
#include "sitfuse/synth.hpp"

// Staged pipeline behind the CLI subcommands: gen, train-encoder,
// train-tree, predict, evaluate, fuse, track. One JSON config drives every
// stage; every stochastic component derives its seed from the global seed
// plus a fixed per-component tag, so reruns are byte-identical.
namespace sitfuse::pipeline {

class PipelineError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Worker-thread cap from SITFUSE_THREADS (0 or unset = hardware auto).
int thread_budget();

struct SamplingConfig {
    int radius = 0;
    std::vector<int> bands;      // empty = all bands
    bool balance = true;         // density-equalized resampling for training
    int balance_bins = 12;       // quantization levels per feature dim
    long balance_count = 0;      // resampled set size; 0 = same as input
};

struct ContextTargetConfig {
    double purity_threshold = 0.5;
    long min_support = 20;
};

struct ContextConfig {
    ContextTargetConfig smoke;
    ContextTargetConfig fire;
};

struct StreamConfig {
    std::string scores;  // raster path (soft scores); relative to the run dir
    std::string mask;    // raster path (0/1); used when scores is empty
    double weight = 1.0;
    std::optional<double> timestamp;  // default: the raster's own timestamp
    std::string sensor_id;
};

struct FusionConfig {
    double cf_threshold = 0.2;
    double threshold = 0.5;       // binarization of the fused certainty
    double time_window = 3600.0;
    std::string target = "smoke";
    std::vector<StreamConfig> streams;  // empty = per-scene soft scores of `target`
    std::string retrieval;              // optional 2-band raster (value, cloud_fraction)
};

struct TrackingConfig {
    double iou_min = 0.2;
    int connectivity = 8;
    std::string target = "smoke";
    bool use_fused = false;  // track the fused mask sequence instead of per-scene masks
};

struct DataConfig {
    synth::SceneSpec scene;
    int sequence_steps = 1;
    double advect_dx = 0.0;
    double advect_dy = 0.0;
    int label_erode_px = 2;
    int label_margin_px = 6;  // background boxes keep this far from truth pixels
    int n_background_boxes = 6;
    int background_box_size = 8;
    std::vector<std::string> scene_paths;  // overrides the generated layout
    std::string labels_path;               // overrides scenes/labels.geojson
};

struct PipelineConfig {
    uint64_t seed = 0;
    DataConfig data;
    SamplingConfig sampling;
    std::vector<int> encoder_hidden_dims{64, 32};
    dbn::TrainConfig encoder_train;
    iic::TreeConfig tree;
    ContextConfig context;
    eval::SsimParams ssim;
    FusionConfig fusion;
    TrackingConfig tracking;
    std::filesystem::path output_dir = "out";
    std::string run_id = "run";

    std::filesystem::path run_dir() const { return output_dir / run_id; }
    void validate() const;
};

// Parses the JSON config file, then applies `--set section.key=value`
// overrides (values parsed as JSON when possible, else as strings).
PipelineConfig load_config(const std::filesystem::path& path,
                           const std::vector<std::string>& overrides,
                           const std::optional<std::string>& out_dir);

// Density-equalized resampling: features are quantized per dimension into
// `bins` levels, rows are hashed to occupancy bins, and `count` rows are
// drawn with replacement with probability proportional to 1/occupancy. Rare
// signatures (a handful of fire pixels among thousands of background pixels)
// end up with bin mass comparable to common ones, which lets the
// balance-seeking clustering objective dedicate clusters to them.
std::vector<long> balance_samples(const scene::SampleSet& samples, int bins, long count,
                                  uint64_t seed);

// Subcommand entry points. Each returns after writing its artifacts under
// <output.dir>/<run_id>/{scenes,models,masks,reports,tracks} and refreshing
// run_manifest.json (config hash + FNV-1a-64 checksum per artifact).
void cmd_gen(const PipelineConfig& cfg);
void cmd_train_encoder(const PipelineConfig& cfg);
void cmd_train_tree(const PipelineConfig& cfg);
void cmd_predict(const PipelineConfig& cfg);
void cmd_evaluate(const PipelineConfig& cfg);
void cmd_fuse(const PipelineConfig& cfg);
void cmd_track(const PipelineConfig& cfg);

// Runs every stage in order (gen .. track). Convenience for tests.
void run_all(const PipelineConfig& cfg);

}  // namespace sitfuse::pipeline

// Python bindings for the core operations: synthetic scenes, DBN encoding,
// IIC trees, SSIM, fusion, restoration, tracking, and full pipeline runs.
// Numeric arrays cross the boundary as numpy via pybind11's Eigen support.
#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sitfuse/dbn.hpp"
#include "sitfuse/eval.hpp"
#include "sitfuse/fusion.hpp"
#include "sitfuse/iic.hpp"
#include "sitfuse/mask.hpp"
#include "sitfuse/pipeline.hpp"
#include "sitfuse/rng.hpp"
#include "sitfuse/synth.hpp"
#include "sitfuse/track.hpp"

namespace py = pybind11;
using namespace sitfuse;

namespace {

using FloatGrid = py::array_t<float, py::array::c_style | py::array::forcecast>;
using ByteGrid = py::array_t<uint8_t, py::array::c_style | py::array::forcecast>;

std::vector<float> grid_to_vector(const FloatGrid& a, int& width, int& height) {
    if (a.ndim() != 2) throw std::invalid_argument("expected a 2-D array");
    height = static_cast<int>(a.shape(0));
    width = static_cast<int>(a.shape(1));
    const auto view = a.unchecked<2>();
    std::vector<float> out(static_cast<size_t>(width) * height);
    for (int r = 0; r < height; ++r)
        for (int c = 0; c < width; ++c) out[static_cast<size_t>(r) * width + c] = view(r, c);
    return out;
}

BinaryMask grid_to_mask(const ByteGrid& a, double timestamp) {
    if (a.ndim() != 2) throw std::invalid_argument("expected a 2-D array");
    BinaryMask m;
    m.height = static_cast<int>(a.shape(0));
    m.width = static_cast<int>(a.shape(1));
    const auto view = a.unchecked<2>();
    m.values.resize(static_cast<size_t>(m.width) * m.height);
    for (int r = 0; r < m.height; ++r)
        for (int c = 0; c < m.width; ++c)
            m.values[static_cast<size_t>(r) * m.width + c] = view(r, c) ? 1 : 0;
    m.valid.assign(m.values.size(), 1);
    m.timestamp = timestamp;
    return m;
}

py::array_t<uint8_t> bytes_to_grid(const std::vector<uint8_t>& v, int width, int height) {
    py::array_t<uint8_t> out({height, width});
    std::copy(v.begin(), v.end(), out.mutable_data());
    return out;
}

py::array_t<float> floats_to_grid(const std::vector<float>& v, int width, int height) {
    py::array_t<float> out({height, width});
    std::copy(v.begin(), v.end(), out.mutable_data());
    return out;
}

// Encoder / tree handles keep the C++ models opaque to python.
struct PyEncoder {
    dbn::DbnModel model;
};

struct PyTree {
    iic::ClusterTree tree;
};

py::dict instance_to_dict(const track::Instance& inst) {
    py::dict d;
    d["instance_id"] = inst.instance_id;
    d["area"] = inst.area;
    d["centroid_row"] = inst.shape.centroid_row;
    d["centroid_col"] = inst.shape.centroid_col;
    d["eccentricity"] = inst.shape.eccentricity;
    d["bbox"] = py::make_tuple(inst.bbox_min_row, inst.bbox_min_col, inst.bbox_max_row,
                               inst.bbox_max_col);
    d["timestamp"] = inst.timestamp;
    return d;
}

}  // namespace

PYBIND11_MODULE(_sitfuse, m) {
    m.doc() = "Self-supervised segmentation, fusion, and tracking core";

    // --- RNG contract ----------------------------------------------------
    m.def(
        "splitmix64_sequence",
        [](uint64_t seed, int n) {
            SplitMix64 rng(seed);
            std::vector<uint64_t> out(static_cast<size_t>(n));
            for (auto& v : out) v = rng.next_u64();
            return out;
        },
        py::arg("seed"), py::arg("n"), "First n raw outputs of the SplitMix64 stream");
    m.def("derive_seed", &derive_seed, py::arg("global_seed"), py::arg("tag"),
          "Stage seed derived from the global seed and a fixed tag");
    m.def("thread_budget", &pipeline::thread_budget,
          "Worker count honoring SITFUSE_THREADS (0 or unset = hardware)");

    // --- synthetic scenes --------------------------------------------------
    m.def(
        "generate_scene",
        [](int width, int height, int bands, int n_clouds, int n_plumes, int n_fires,
           float noise_sigma, uint64_t seed) {
            synth::SceneSpec spec;
            spec.width = width;
            spec.height = height;
            spec.band_count = bands;
            spec.n_clouds = n_clouds;
            spec.n_plumes = n_plumes;
            spec.n_fires = n_fires;
            spec.noise_sigma = noise_sigma;
            spec.seed = seed;
            const auto [scn, truth] = synth::generate_scene(spec);
            py::array_t<float> data({bands, height, width});
            std::copy(scn.data.begin(), scn.data.end(), data.mutable_data());
            py::dict out;
            out["bands"] = data;
            out["smoke"] = bytes_to_grid(truth.smoke, width, height);
            out["fire"] = bytes_to_grid(truth.fire, width, height);
            out["cloud"] = bytes_to_grid(truth.cloud, width, height);
            out["timestamp"] = scn.timestamp;
            return out;
        },
        py::arg("width") = 128, py::arg("height") = 128, py::arg("bands") = 6,
        py::arg("n_clouds") = 2, py::arg("n_plumes") = 2, py::arg("n_fires") = 2,
        py::arg("noise_sigma") = 0.05f, py::arg("seed") = 0,
        "Seeded synthetic scene: bands (B,H,W) plus smoke/fire/cloud truth grids");

    // --- DBN encoder -------------------------------------------------------
    py::class_<PyEncoder>(m, "Encoder")
        .def_property_readonly("input_dim",
                               [](const PyEncoder& e) { return e.model.input_dim(); })
        .def_property_readonly("latent_dim",
                               [](const PyEncoder& e) { return e.model.latent_dim(); })
        .def_property_readonly("parameter_count",
                               [](const PyEncoder& e) { return dbn::parameter_count(e.model); })
        .def(
            "encode",
            [](const PyEncoder& e, const dbn::Matrix& samples) {
                return dbn::encode(e.model, samples);
            },
            py::arg("samples"), "Latent activations in (0,1), one row per sample")
        .def(
            "save", [](const PyEncoder& e, const std::filesystem::path& dir) {
                dbn::save_dbn(e.model, dir);
            },
            py::arg("dir"));

    m.def(
        "train_encoder",
        [](const dbn::Matrix& samples, const std::vector<int>& hidden_dims, int epochs,
           int batch_size, float learning_rate, float momentum, float weight_decay, int cd_k,
           uint64_t seed, bool learn_sigma) {
            dbn::TrainConfig cfg;
            cfg.epochs = epochs;
            cfg.batch_size = batch_size;
            cfg.learning_rate = learning_rate;
            cfg.momentum = momentum;
            cfg.weight_decay = weight_decay;
            cfg.cd_k = cd_k;
            cfg.seed = seed;
            cfg.learn_sigma = learn_sigma;
            std::vector<int> layer_dims{static_cast<int>(samples.cols())};
            layer_dims.insert(layer_dims.end(), hidden_dims.begin(), hidden_dims.end());
            PyEncoder enc;
            {
                py::gil_scoped_release release;
                enc.model = dbn::train_dbn(samples, layer_dims, {cfg});
            }
            return enc;
        },
        py::arg("samples"), py::arg("hidden_dims"), py::arg("epochs") = 10,
        py::arg("batch_size") = 128, py::arg("learning_rate") = 1e-3f, py::arg("momentum") = 0.5f,
        py::arg("weight_decay") = 1e-4f, py::arg("cd_k") = 1, py::arg("seed") = 0,
        py::arg("learn_sigma") = false,
        "Greedy layer-wise DBN training (Gaussian-Bernoulli first layer)");
    m.def(
        "load_encoder",
        [](const std::filesystem::path& dir) { return PyEncoder{dbn::load_dbn(dir)}; },
        py::arg("dir"));

    // --- IIC tree ------------------------------------------------------------
    py::class_<PyTree>(m, "Tree")
        .def_property_readonly("k", [](const PyTree& t) { return t.tree.k; })
        .def_property_readonly("depth", [](const PyTree& t) { return t.tree.depth(); })
        .def(
            "assign",
            [](const PyTree& t, const iic::MatrixXd& latent) {
                const long n = latent.rows();
                std::vector<std::pair<int, int>> coords(static_cast<size_t>(n));
                for (long i = 0; i < n; ++i) coords[static_cast<size_t>(i)] = {0, static_cast<int>(i)};
                const auto map =
                    iic::assign_labels(t.tree, latent, coords, static_cast<int>(n), 1);
                py::array_t<int64_t> out(n);
                std::copy(map.labels.begin(), map.labels.end(), out.mutable_data());
                return out;
            },
            py::arg("latent"), "Hierarchical leaf label per row")
        .def(
            "save",
            [](const PyTree& t, const std::filesystem::path& dir) { iic::save_tree(t.tree, dir); },
            py::arg("dir"));

    m.def(
        "build_tree",
        [](const iic::MatrixXd& latent, int k, int max_depth, long min_node_samples, int epochs,
           int batch_size, double learning_rate, double sigma, int n_subheads, uint64_t seed) {
            iic::TreeConfig cfg;
            cfg.k = k;
            cfg.max_depth = max_depth;
            cfg.min_node_samples = min_node_samples;
            cfg.head.epochs = epochs;
            cfg.head.batch_size = batch_size;
            cfg.head.learning_rate = learning_rate;
            cfg.head.sigma = sigma;
            cfg.head.n_subheads = n_subheads;
            cfg.head.seed = seed;
            PyTree out;
            {
                py::gil_scoped_release release;
                out.tree = iic::build_tree(latent, cfg);
            }
            return out;
        },
        py::arg("latent"), py::arg("k") = 5, py::arg("max_depth") = 2,
        py::arg("min_node_samples") = 500, py::arg("epochs") = 60, py::arg("batch_size") = 1024,
        py::arg("learning_rate") = 10.0, py::arg("sigma") = 0.05, py::arg("n_subheads") = 1,
        py::arg("seed") = 0, "Hierarchical IIC clustering over frozen latents");
    m.def(
        "load_tree",
        [](const std::filesystem::path& dir) { return PyTree{iic::load_tree(dir)}; },
        py::arg("dir"));

    // --- evaluation ------------------------------------------------------------
    m.def(
        "ssim",
        [](const FloatGrid& a, const FloatGrid& b, int window, double sigma, double k1, double k2,
           double dynamic_range) {
            int wa = 0, ha = 0, wb = 0, hb = 0;
            const auto va = grid_to_vector(a, wa, ha);
            const auto vb = grid_to_vector(b, wb, hb);
            if (wa != wb || ha != hb) throw std::invalid_argument("shape mismatch");
            eval::SsimParams p;
            p.window = window;
            p.gaussian_sigma = sigma;
            p.k1 = k1;
            p.k2 = k2;
            p.dynamic_range = dynamic_range;
            return eval::ssim(va, vb, wa, ha, p);
        },
        py::arg("a"), py::arg("b"), py::arg("window") = 11, py::arg("sigma") = 1.5,
        py::arg("k1") = 0.01, py::arg("k2") = 0.03, py::arg("dynamic_range") = 1.0,
        "Mean local SSIM over full Gaussian windows");

    // --- fusion and restoration -------------------------------------------------
    m.def(
        "fuse_scores",
        [](const std::vector<FloatGrid>& scores, std::optional<std::vector<double>> weights,
           std::optional<std::vector<double>> timestamps, double target_timestamp,
           double time_window, double threshold) {
            if (scores.empty()) throw std::invalid_argument("no streams");
            std::vector<fusion::StreamMask> streams;
            for (size_t i = 0; i < scores.size(); ++i) {
                fusion::StreamMask s;
                int width = 0, height = 0;
                s.scores = grid_to_vector(scores[i], width, height);
                s.geometry.width = width;
                s.geometry.height = height;
                s.mask.width = width;
                s.mask.height = height;
                s.mask.values.resize(s.scores.size());
                for (size_t j = 0; j < s.scores.size(); ++j)
                    s.mask.values[j] = s.scores[j] >= 0.5f ? 1 : 0;
                s.mask.valid.assign(s.scores.size(), 1);
                s.weight = weights ? weights->at(i) : 1.0;
                s.timestamp = timestamps ? timestamps->at(i) : target_timestamp;
                s.sensor_id = "stream" + std::to_string(i);
                streams.push_back(std::move(s));
            }
            const auto cert =
                fusion::fuse(streams, streams.front().geometry, target_timestamp, time_window);
            const auto mask = fusion::binarize(cert, threshold);
            py::dict out;
            out["certainty"] =
                floats_to_grid(cert.certainty, cert.geometry.width, cert.geometry.height);
            out["valid"] = bytes_to_grid(cert.valid, cert.geometry.width, cert.geometry.height);
            out["mask"] = bytes_to_grid(mask.values, mask.width, mask.height);
            return out;
        },
        py::arg("scores"), py::arg("weights") = std::nullopt, py::arg("timestamps") = std::nullopt,
        py::arg("target_timestamp") = 0.0, py::arg("time_window") = 3600.0,
        py::arg("threshold") = 0.5,
        "Weighted-mean fusion of co-gridded score streams with temporal gating");

    m.def(
        "restore_retrievals",
        [](const FloatGrid& values, const FloatGrid& cloud_fraction, const ByteGrid& valid,
           const ByteGrid& smoke, double cf_threshold) {
            int width = 0, height = 0;
            fusion::RetrievalGrid ret;
            ret.values = grid_to_vector(values, width, height);
            ret.geometry.width = width;
            ret.geometry.height = height;
            int w2 = 0, h2 = 0;
            ret.cloud_fraction = grid_to_vector(cloud_fraction, w2, h2);
            if (w2 != width || h2 != height) throw std::invalid_argument("shape mismatch");
            const BinaryMask valid_mask = grid_to_mask(valid, 0.0);
            ret.valid = valid_mask.values;
            const BinaryMask smoke_mask = grid_to_mask(smoke, 0.0);
            const auto out = fusion::restore_retrievals(ret, smoke_mask, cf_threshold);
            py::dict d;
            d["values"] = floats_to_grid(out.values, width, height);
            d["valid"] = bytes_to_grid(out.valid, width, height);
            return d;
        },
        py::arg("values"), py::arg("cloud_fraction"), py::arg("valid"), py::arg("smoke"),
        py::arg("cf_threshold") = 0.2,
        "Keeps a pixel iff cloud_fraction <= threshold or the smoke mask is set");

    // --- tracking -------------------------------------------------------------
    m.def(
        "connected_components",
        [](const ByteGrid& mask, int connectivity) {
            const auto instances =
                track::connected_components(grid_to_mask(mask, 0.0), connectivity);
            py::list out;
            for (const auto& inst : instances) out.append(instance_to_dict(inst));
            return out;
        },
        py::arg("mask"), py::arg("connectivity") = 8,
        "Instances in deterministic scan order with shape descriptors");

    m.def(
        "track_masks",
        [](const std::vector<ByteGrid>& masks, const std::vector<double>& timestamps,
           double iou_min, int connectivity) {
            if (masks.size() != timestamps.size())
                throw std::invalid_argument("one timestamp per mask required");
            std::vector<BinaryMask> frames;
            for (size_t i = 0; i < masks.size(); ++i)
                frames.push_back(grid_to_mask(masks[i], timestamps[i]));
            const auto tracks = track::track_sequence(frames, iou_min, connectivity);
            py::list out;
            for (const auto& t : tracks) {
                py::dict d;
                d["track_id"] = t.track_id;
                d["terminated"] = t.terminated;
                py::list entries;
                for (const auto& e : t.entries) {
                    py::dict ed;
                    ed["timestamp"] = e.timestamp;
                    ed["instance_id"] = e.instance_id;
                    ed["area"] = e.area;
                    ed["centroid_row"] = e.centroid_row;
                    ed["centroid_col"] = e.centroid_col;
                    ed["eccentricity"] = e.eccentricity;
                    entries.append(ed);
                }
                d["entries"] = entries;
                out.append(d);
            }
            return out;
        },
        py::arg("masks"), py::arg("timestamps"), py::arg("iou_min") = 0.2,
        py::arg("connectivity") = 8, "Greedy IoU association over a time-ordered mask sequence");

    // --- pipeline ----------------------------------------------------------------
    m.def(
        "run_pipeline",
        [](const std::filesystem::path& config_path, const std::vector<std::string>& overrides,
           std::optional<std::string> out_dir) {
            const auto cfg = pipeline::load_config(config_path, overrides, out_dir);
            {
                py::gil_scoped_release release;
                pipeline::run_all(cfg);
            }
            return cfg.run_dir().string();
        },
        py::arg("config_path"), py::arg("overrides") = std::vector<std::string>{},
        py::arg("out_dir") = std::nullopt,
        "All stages under one config; returns the run directory");
}

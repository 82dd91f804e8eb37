#include "sitfuse/dbn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

namespace sitfuse::dbn {

namespace {

using nlohmann::json;

constexpr float kLogitClamp = 500.0f;

float logistic(float x) {
    const float c = std::clamp(x, -kLogitClamp, kLogitClamp);
    return 1.0f / (1.0f + std::exp(-c));
}

Matrix logistic_all(Matrix m) {
    return m.unaryExpr([](float x) { return logistic(x); });
}

// Row-major element order so sampling is reproducible.
Matrix bernoulli_sample(const Matrix& probs, SplitMix64& rng) {
    Matrix out(probs.rows(), probs.cols());
    for (Eigen::Index r = 0; r < probs.rows(); ++r)
        for (Eigen::Index c = 0; c < probs.cols(); ++c)
            out(r, c) = rng.next_double() < probs(r, c) ? 1.0f : 0.0f;
    return out;
}

// Visible units scaled by 1/sigma^2 for the GB energy terms.
Matrix scaled_visible(const RbmLayer& layer, const Matrix& v) {
    if (layer.kind == RbmKind::BernoulliBernoulli) return v;
    const Eigen::ArrayXf inv_var = (-2.0f * layer.log_sigma.array()).exp();
    return v.array().rowwise() * inv_var.transpose();
}

void check_visible_dim(const RbmLayer& layer, const Matrix& v) {
    if (v.cols() != layer.visible_units())
        throw DbnError("visible batch width " + std::to_string(v.cols()) + " does not match layer (" +
                       std::to_string(layer.visible_units()) + ")");
}

void check_hidden_dim(const RbmLayer& layer, const Matrix& h) {
    if (h.cols() != layer.hidden_units())
        throw DbnError("hidden batch width " + std::to_string(h.cols()) + " does not match layer (" +
                       std::to_string(layer.hidden_units()) + ")");
}

void write_tensor(const std::filesystem::path& path, const float* data, size_t count) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DbnError("cannot write tensor " + path.string());
    f.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * sizeof(float)));
    if (!f.flush()) throw DbnError("failed writing tensor " + path.string());
}

std::vector<float> read_tensor(const std::filesystem::path& path, size_t count) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DbnError("missing tensor " + path.string());
    std::vector<float> buf(count);
    f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(count * sizeof(float)));
    if (!f || static_cast<size_t>(f.gcount()) != count * sizeof(float))
        throw DbnError("tensor " + path.string() + " has wrong size");
    return buf;
}

// Matrices serialize row-major regardless of Eigen's internal layout.
void write_matrix(const std::filesystem::path& path, const Matrix& m) {
    std::vector<float> buf(static_cast<size_t>(m.rows()) * m.cols());
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c)
            buf[static_cast<size_t>(r) * m.cols() + c] = m(r, c);
    write_tensor(path, buf.data(), buf.size());
}

Matrix read_matrix(const std::filesystem::path& path, int rows, int cols) {
    const auto buf = read_tensor(path, static_cast<size_t>(rows) * cols);
    Matrix m(rows, cols);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) m(r, c) = buf[static_cast<size_t>(r) * cols + c];
    return m;
}

}  // namespace

void RbmLayer::validate() const {
    if (weights.rows() == 0 || weights.cols() == 0) throw DbnError("layer has zero dimensions");
    if (visible_bias.size() != weights.rows() || hidden_bias.size() != weights.cols())
        throw DbnError("layer bias shapes inconsistent with weights");
    if (kind == RbmKind::GaussianBernoulli && log_sigma.size() != weights.rows())
        throw DbnError("GB layer log_sigma shape inconsistent");
    if (!weights.allFinite() || !visible_bias.allFinite() || !hidden_bias.allFinite())
        throw DbnError("layer parameters must be finite");
    if (kind == RbmKind::GaussianBernoulli && !log_sigma.allFinite())
        throw DbnError("GB log_sigma must be finite");
}

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0f) && learning_rate != 0.0f) throw DbnError("learning rate must be >= 0");
    if (cd_k < 1) throw DbnError("cd_k must be >= 1");
    if (batch_size < 1) throw DbnError("batch size must be >= 1");
    if (epochs < 0) throw DbnError("epochs must be >= 0");
}

void DbnModel::validate() const {
    if (layers.empty() || layers.size() > 3) throw DbnError("model must have 1-3 layers");
    if (layers.front().kind != RbmKind::GaussianBernoulli)
        throw DbnError("first layer must be Gaussian-Bernoulli");
    for (size_t i = 1; i < layers.size(); ++i) {
        if (layers[i].kind != RbmKind::BernoulliBernoulli)
            throw DbnError("upper layers must be Bernoulli-Bernoulli");
        if (layers[i].visible_units() != layers[i - 1].hidden_units())
            throw DbnError("layer dimension chain mismatch");
    }
    for (const auto& layer : layers) layer.validate();
}

RbmLayer init_layer(RbmKind kind, int visible, int hidden, uint64_t seed) {
    if (visible < 1 || hidden < 1) throw DbnError("layer dimensions must be >= 1");
    SplitMix64 rng(seed);
    RbmLayer layer;
    layer.kind = kind;
    layer.weights = Matrix(visible, hidden);
    for (int r = 0; r < visible; ++r)
        for (int c = 0; c < hidden; ++c)
            layer.weights(r, c) = static_cast<float>(rng.next_normal(0.0, 0.01));
    layer.visible_bias = Vector::Zero(visible);
    layer.hidden_bias = Vector::Zero(hidden);
    layer.log_sigma = Vector::Zero(visible);
    return layer;
}

Matrix hidden_probs(const RbmLayer& layer, const Matrix& visible) {
    check_visible_dim(layer, visible);
    Matrix logits = scaled_visible(layer, visible) * layer.weights;
    logits.rowwise() += layer.hidden_bias.transpose();
    return logistic_all(std::move(logits));
}

Matrix visible_reconstruct(const RbmLayer& layer, const Matrix& hidden, ReconMode mode,
                           SplitMix64& rng) {
    check_hidden_dim(layer, hidden);
    Matrix mean = hidden * layer.weights.transpose();
    mean.rowwise() += layer.visible_bias.transpose();
    if (layer.kind == RbmKind::BernoulliBernoulli) {
        mean = logistic_all(std::move(mean));
        if (mode == ReconMode::Mean) return mean;
        return bernoulli_sample(mean, rng);
    }
    if (mode == ReconMode::Mean) return mean;
    const Eigen::ArrayXf sig = layer.sigma();
    for (Eigen::Index r = 0; r < mean.rows(); ++r)
        for (Eigen::Index c = 0; c < mean.cols(); ++c)
            mean(r, c) = static_cast<float>(rng.next_normal(mean(r, c), sig(c)));
    return mean;
}

CdGradient cd_gradient(const RbmLayer& layer, const Matrix& batch, int cd_k, SplitMix64& rng) {
    check_visible_dim(layer, batch);
    if (batch.rows() == 0) throw DbnError("cd gradient needs a nonempty batch");
    if (cd_k < 1) throw DbnError("cd_k must be >= 1");
    const auto n = static_cast<float>(batch.rows());
    const bool gaussian = layer.kind == RbmKind::GaussianBernoulli;

    const Matrix pos_h = hidden_probs(layer, batch);
    Matrix h_state = bernoulli_sample(pos_h, rng);
    Matrix v = batch;
    Matrix h_probs;
    for (int t = 0; t < cd_k; ++t) {
        // GB chains use the mean visible reconstruction (variance reduction);
        // BB chains sample the visible units.
        v = visible_reconstruct(layer, h_state, gaussian ? ReconMode::Mean : ReconMode::Sample, rng);
        h_probs = hidden_probs(layer, v);
        if (t + 1 < cd_k) h_state = bernoulli_sample(h_probs, rng);
    }

    const Matrix v0s = scaled_visible(layer, batch);
    const Matrix vks = scaled_visible(layer, v);

    CdGradient grad;
    grad.weights = (v0s.transpose() * pos_h - vks.transpose() * h_probs) / n;
    if (gaussian) {
        grad.visible_bias = (v0s.colwise().mean() - vks.colwise().mean()).transpose();
    } else {
        grad.visible_bias = (batch.colwise().mean() - v.colwise().mean()).transpose();
    }
    grad.hidden_bias = (pos_h.colwise().mean() - h_probs.colwise().mean()).transpose();

    grad.log_sigma = Vector::Zero(layer.visible_units());
    if (gaussian) {
        const Eigen::ArrayXf inv_var = (-2.0f * layer.log_sigma.array()).exp();
        auto z_term = [&](const Matrix& vis, const Matrix& hid) -> Vector {
            Eigen::ArrayXXf centered = vis.array().rowwise() - layer.visible_bias.transpose().array();
            Eigen::ArrayXXf sq = centered.square().rowwise() * inv_var.transpose();
            Eigen::ArrayXXf cross = (vis.array().rowwise() * inv_var.transpose()) *
                                    (hid * layer.weights.transpose()).array();
            return (sq - 2.0f * cross).colwise().mean().transpose().matrix();
        };
        grad.log_sigma = z_term(batch, pos_h) - z_term(v, h_probs);
    }
    return grad;
}

CdVelocity CdVelocity::zeros(const RbmLayer& layer) {
    CdVelocity v;
    v.weights = Matrix::Zero(layer.visible_units(), layer.hidden_units());
    v.visible_bias = Vector::Zero(layer.visible_units());
    v.hidden_bias = Vector::Zero(layer.hidden_units());
    v.log_sigma = Vector::Zero(layer.visible_units());
    return v;
}

double cd_step(RbmLayer& layer, const Matrix& batch, const TrainConfig& cfg, SplitMix64& rng,
               CdVelocity& velocity) {
    cfg.validate();
    const CdGradient grad = cd_gradient(layer, batch, cfg.cd_k, rng);
    if (!grad.weights.allFinite() || !grad.visible_bias.allFinite() || !grad.hidden_bias.allFinite())
        throw DbnError("non-finite CD gradient: training diverged");

    const float lr = cfg.learning_rate;
    velocity.weights = cfg.momentum * velocity.weights +
                       lr * (grad.weights - cfg.weight_decay * layer.weights);
    velocity.visible_bias = cfg.momentum * velocity.visible_bias + lr * grad.visible_bias;
    velocity.hidden_bias = cfg.momentum * velocity.hidden_bias + lr * grad.hidden_bias;
    layer.weights += velocity.weights;
    layer.visible_bias += velocity.visible_bias;
    layer.hidden_bias += velocity.hidden_bias;
    if (cfg.learn_sigma && layer.kind == RbmKind::GaussianBernoulli) {
        if (!grad.log_sigma.allFinite()) throw DbnError("non-finite sigma gradient: training diverged");
        velocity.log_sigma = cfg.momentum * velocity.log_sigma + lr * grad.log_sigma;
        layer.log_sigma += velocity.log_sigma;
    }

    const Matrix recon = visible_reconstruct(layer, hidden_probs(layer, batch), ReconMode::Mean, rng);
    return static_cast<double>((recon - batch).array().square().mean());
}

std::vector<double> train_layer(RbmLayer& layer, const Matrix& samples, const TrainConfig& cfg) {
    cfg.validate();
    if (samples.cols() != layer.visible_units()) throw DbnError("sample dim does not match layer");
    const long n = samples.rows();
    if (n == 0) throw DbnError("cannot train on empty sample set");

    SplitMix64 rng(cfg.seed);
    CdVelocity velocity = CdVelocity::zeros(layer);
    std::vector<long> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0L);
    std::vector<double> trace;
    trace.reserve(static_cast<size_t>(cfg.epochs));

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (long i = n - 1; i > 0; --i)
            std::swap(order[static_cast<size_t>(i)],
                      order[rng.next_below(static_cast<uint64_t>(i) + 1)]);
        double err_sum = 0.0;
        long batches = 0;
        for (long start = 0; start < n; start += cfg.batch_size) {
            const long count = std::min<long>(cfg.batch_size, n - start);
            Matrix batch(count, samples.cols());
            for (long i = 0; i < count; ++i) batch.row(i) = samples.row(order[static_cast<size_t>(start + i)]);
            err_sum += cd_step(layer, batch, cfg, rng, velocity);
            ++batches;
        }
        trace.push_back(err_sum / static_cast<double>(std::max(1L, batches)));
    }
    return trace;
}

DbnModel train_dbn(const Matrix& samples, const std::vector<int>& layer_dims,
                   const std::vector<TrainConfig>& configs,
                   std::vector<std::vector<double>>* traces) {
    if (layer_dims.size() < 2 || layer_dims.size() > 4)
        throw DbnError("layer_dims must list the input dim plus 1-3 hidden dims");
    if (configs.size() != 1 && configs.size() != layer_dims.size() - 1)
        throw DbnError("provide one train config or one per layer");
    if (samples.cols() != layer_dims.front())
        throw DbnError("sample dim does not match layer_dims[0]");

    DbnModel model;
    Matrix input = samples;
    for (size_t i = 0; i + 1 < layer_dims.size(); ++i) {
        const TrainConfig& cfg = configs.size() == 1 ? configs.front() : configs[i];
        const RbmKind kind = i == 0 ? RbmKind::GaussianBernoulli : RbmKind::BernoulliBernoulli;
        RbmLayer layer = init_layer(kind, layer_dims[i], layer_dims[i + 1],
                                    derive_seed(cfg.seed, 0x10 + i));
        std::vector<double> trace = train_layer(layer, input, cfg);
        if (traces) traces->push_back(std::move(trace));
        input = hidden_probs(layer, input);
        model.layers.push_back(std::move(layer));
    }
    model.validate();
    return model;
}

Matrix encode(const DbnModel& model, const Matrix& samples) {
    model.validate();
    Matrix out = samples;
    for (const auto& layer : model.layers) out = hidden_probs(layer, out);
    return out;
}

long parameter_count(const DbnModel& model) {
    long n = 0;
    for (const auto& layer : model.layers) {
        n += static_cast<long>(layer.weights.size()) + layer.visible_bias.size() + layer.hidden_bias.size();
        if (layer.kind == RbmKind::GaussianBernoulli) n += layer.log_sigma.size();
    }
    return n;
}

void save_dbn(const DbnModel& model, const std::filesystem::path& dir) {
    model.validate();
    std::filesystem::create_directories(dir);
    json manifest;
    manifest["format"] = "sitfuse-dbn-v1";
    json layers = json::array();
    for (size_t i = 0; i < model.layers.size(); ++i) {
        const auto& layer = model.layers[i];
        layers.push_back({{"kind", layer.kind == RbmKind::GaussianBernoulli ? "gb" : "bb"},
                          {"visible", layer.visible_units()},
                          {"hidden", layer.hidden_units()}});
        const std::string stem = "layer" + std::to_string(i) + "_";
        write_matrix(dir / (stem + "W.bin"), layer.weights);
        write_tensor(dir / (stem + "b.bin"), layer.visible_bias.data(),
                     static_cast<size_t>(layer.visible_bias.size()));
        write_tensor(dir / (stem + "c.bin"), layer.hidden_bias.data(),
                     static_cast<size_t>(layer.hidden_bias.size()));
        if (layer.kind == RbmKind::GaussianBernoulli)
            write_tensor(dir / (stem + "z.bin"), layer.log_sigma.data(),
                         static_cast<size_t>(layer.log_sigma.size()));
    }
    manifest["layers"] = layers;
    std::ofstream f(dir / "manifest.json");
    if (!f) throw DbnError("cannot write DBN manifest in " + dir.string());
    f << manifest.dump(2) << "\n";
}

DbnModel load_dbn(const std::filesystem::path& dir) {
    std::ifstream f(dir / "manifest.json");
    if (!f) throw DbnError("missing DBN checkpoint manifest " + (dir / "manifest.json").string());
    json manifest;
    try {
        f >> manifest;
    } catch (const json::exception& e) {
        throw DbnError(std::string("corrupt DBN manifest: ") + e.what());
    }
    DbnModel model;
    size_t i = 0;
    for (const auto& entry : manifest.at("layers")) {
        RbmLayer layer;
        layer.kind = entry.at("kind").get<std::string>() == "gb" ? RbmKind::GaussianBernoulli
                                                                 : RbmKind::BernoulliBernoulli;
        const int visible = entry.at("visible").get<int>();
        const int hidden = entry.at("hidden").get<int>();
        const std::string stem = "layer" + std::to_string(i) + "_";
        layer.weights = read_matrix(dir / (stem + "W.bin"), visible, hidden);
        auto b = read_tensor(dir / (stem + "b.bin"), static_cast<size_t>(visible));
        auto c = read_tensor(dir / (stem + "c.bin"), static_cast<size_t>(hidden));
        layer.visible_bias = Eigen::Map<Vector>(b.data(), visible);
        layer.hidden_bias = Eigen::Map<Vector>(c.data(), hidden);
        layer.log_sigma = Vector::Zero(visible);
        if (layer.kind == RbmKind::GaussianBernoulli) {
            auto z = read_tensor(dir / (stem + "z.bin"), static_cast<size_t>(visible));
            layer.log_sigma = Eigen::Map<Vector>(z.data(), visible);
        }
        model.layers.push_back(std::move(layer));
        ++i;
    }
    model.validate();
    return model;
}

}  // namespace sitfuse::dbn
